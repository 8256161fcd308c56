//! Interrupt a run, reload the checkpoint and check the continuation is
//! bit-identical to an uninterrupted run.

use dico::data::{CropMode, Dataset, PhantomSpec};
use dico::losses::LossWeights;
use dico::networks::{BackboneConfig, DiscriminatorConfig};
use dico::trainer::{read_checkpoint_manifest, ModelConfig, TrainConfig, Trainer};

fn main() -> dico::error::Result<()> {
    let data = Dataset::phantoms(&PhantomSpec { grid: [16, 16, 16], ..PhantomSpec::default() }, 2, 2, 0)?;
    let model = ModelConfig {
        conv: BackboneConfig { base_channels: 4, depth: 2, ..BackboneConfig::conv() },
        transformer: BackboneConfig {
            base_channels: 4,
            depth: 2,
            patch_size: 2,
            embed_dim: 12,
            heads: 2,
            ..BackboneConfig::transformer()
        },
        discriminator: DiscriminatorConfig { widths: vec![4, 8], slope: 0.2 },
        ..ModelConfig::default()
    };
    let train = TrainConfig { total_iterations: 10, crop: [8, 8, 8], crop_mode: CropMode::Random, ..TrainConfig::default() };
    let w = LossWeights::default();

    let mut full = Trainer::new(&model, &train, &w)?;
    let reference: Vec<String> = (0..10).map(|_| full.step(&data).map(|s| s.log_line())).collect::<Result<_, _>>()?;

    let dir = tempfile::tempdir().expect("temp dir");
    let mut first = Trainer::new(&model, &train, &w)?;
    for _ in 0..5 {
        first.step(&data)?;
    }
    first.save_checkpoint(dir.path(), None)?;
    let manifest = read_checkpoint_manifest(dir.path())?;
    println!("saved iteration {} ({}), model hash {}", manifest.iteration, manifest.variant, &manifest.model_hash[..16]);

    let mut resumed = Trainer::new(&model, &train, &w)?;
    resumed.load_checkpoint(dir.path())?;
    for expected in &reference[5..] {
        let line = resumed.step(&data)?.log_line();
        println!("{} {line}", if &line == expected { "same" } else { "DIFF" });
    }
    Ok(())
}
