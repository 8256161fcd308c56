//! Trains DiCo on the desk-scale phantom suite and reports how often each
//! sub-network acted as teacher.
//!
//! Usage: `train_phantom [ITERATIONS] [VARIANT]`, e.g. `train_phantom 500 dico-ct`.

use std::path::Path;

use dico::config::ExperimentConfig;
use dico::trainer::{Role, Trainer};

fn main() -> dico::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: u64 = args.next().map_or(40, |a| a.parse().expect("iterations must be an integer"));
    let variant = args.next().unwrap_or_else(|| "dico-ct".into());

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/phantom.toml");
    let cfg = ExperimentConfig::load(
        &path,
        &[format!("trainer.total_iterations={iterations}"), format!("trainer.variant=\"{variant}\"")],
    )?;
    let data = cfg.dataset()?;
    let mut trainer = Trainer::new(&cfg.model, &cfg.trainer, &cfg.losses)?;

    let before = trainer.validate(&data.val, &cfg.inference)?;
    println!("{variant}: {iterations} iterations, validation dsc at init {before:.4}");
    let mut teachers = [0u64; 2];
    let every = (iterations / 8).max(1);
    while !trainer.is_finished() {
        let state = trainer.step(&data)?;
        if let Some(r) = state.roles {
            teachers[(r.teacher == Role::M2) as usize] += 1;
        }
        if state.iteration % every == 0 || trainer.is_finished() {
            println!("{}", state.log_line());
        }
    }
    let after = trainer.validate(&data.val, &cfg.inference)?;
    println!("teacher counts: m1 {} m2 {}", teachers[0], teachers[1]);
    println!("validation dsc {before:.4} -> {after:.4}");
    Ok(())
}
