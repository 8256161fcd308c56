//! `dico train|eval|infer|phantom|project`.
//!
//! Exit codes: 0 on success, 1 for invalid input (bad flags, configuration
//! or a checkpoint that does not match the configuration), 2 for failures
//! at run time.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::data::{
    default_header, format_manifest, generate_phantom, load_image, read_nifti, write_nifti, CaseRecord, PhantomSpec,
    SplitTag,
};
use crate::error::{DicoError, Result};
use crate::inference::final_prediction;
use crate::metrics::{evaluate_case, MetricReport};
use crate::trainer::{predict_with, read_checkpoint_manifest, run_training, RunOptions, Trainer, Variant};
use crate::volume::{mip_project, Volume};

#[derive(Debug, Parser)]
#[command(name = "dico", version, about = "Semi-supervised 3D vessel segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override one configuration value, e.g. `--set trainer.lr_base=0.001`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set trainer.variant=<VARIANT>`.
    #[arg(long)]
    pub variant: Option<Variant>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut sets = self.overrides.clone();
        if let Some(v) = self.variant {
            sets.push(format!("trainer.variant=\"{v}\""));
        }
        ExperimentConfig::load(&self.config, &sets)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoints, `train.log` and `val.log` under
    /// the output directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Do not echo log lines to stdout.
        #[arg(long)]
        quiet: bool,
    },
    /// Score a checkpoint on one split; writes a per-case CSV.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: SplitTag,
        /// CSV path; defaults to `<output_dir>/eval_<split>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment one NIfTI image with a checkpoint.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write synthetic phantoms and a manifest.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        labeled: usize,
        #[arg(long, default_value_t = 8)]
        unlabeled: usize,
        #[arg(long, default_value_t = 4)]
        val: usize,
        #[arg(long, default_value_t = 0)]
        test: usize,
        /// Edge length of the cubic grid.
        #[arg(long, default_value_t = 32)]
        grid: usize,
        #[arg(long, default_value_t = 3)]
        tubes: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write maximum-intensity projections along the last axis as PNGs.
    Project {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code for the outcome of [`run`].
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_validation() => 1,
        Err(_) => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Usage errors are printed and mapped to exit code 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = run(cli.command);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, resume, quiet } => train(&config.load()?, resume.as_deref(), quiet),
        Command::Eval {
            config,
            checkpoint,
            split,
            out,
        } => evaluate(&config.load()?, &checkpoint, split, out).map(|_| ()),
        Command::Infer {
            config,
            checkpoint,
            input,
            output,
        } => infer(&config.load()?, &checkpoint, &input, &output),
        Command::Phantom {
            out,
            labeled,
            unlabeled,
            val,
            test,
            grid,
            tubes,
            noise,
            seed,
        } => {
            let spec = PhantomSpec {
                grid: [grid; 3],
                tubes,
                noise_sigma: noise,
                seed,
                ..PhantomSpec::default()
            };
            write_phantoms(&out, &spec, [labeled, unlabeled, val, test]).map(|_| ())
        }
        Command::Project { image, mask, out } => project(&image, mask.as_deref(), &out),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DicoError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| DicoError::io(path, e))
}

struct Tee<'a> {
    file: std::fs::File,
    echo: Option<std::io::StdoutLock<'a>>,
}

impl Write for Tee<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.file.write_all(buf)?;
        if let Some(out) = self.echo.as_mut() {
            out.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.file.flush()?;
        if let Some(out) = self.echo.as_mut() {
            out.flush()?;
        }
        Ok(())
    }
}

fn trainer_for(cfg: &ExperimentConfig) -> Result<Trainer> {
    Trainer::new(&cfg.model, &cfg.trainer, &cfg.losses)
}

pub fn train(cfg: &ExperimentConfig, resume: Option<&Path>, quiet: bool) -> Result<()> {
    let data = cfg.dataset()?;
    let mut trainer = trainer_for(cfg)?;
    if let Some(dir) = resume {
        trainer.load_checkpoint(dir)?;
    }
    let out = &cfg.output_dir;
    create_dir(out)?;
    let text = cfg.to_toml_string();
    write_file(&out.join("config.toml"), &text)?;
    let log_path = out.join("train.log");
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| DicoError::io(&log_path, e))?;
    let stdout = std::io::stdout();
    let mut log = Tee {
        file,
        echo: (!quiet).then(|| stdout.lock()),
    };
    let summary = run_training(
        &mut trainer,
        &data,
        &mut log,
        &RunOptions {
            out_dir: Some(out.clone()),
            config_text: Some(text),
            window: cfg.inference.clone(),
        },
    )?;
    log.flush().map_err(|e| DicoError::io(&log_path, e))?;
    drop(log);
    if !quiet {
        println!(
            "trained {} iterations; teacher m1={} m2={}; last checkpoint {}",
            summary.iterations,
            summary.teacher_counts[0],
            summary.teacher_counts[1],
            summary.checkpoints.last().map_or("-".into(), |p| p.display().to_string())
        );
    }
    Ok(())
}

/// Builds the configured model and loads the checkpoint's weights after
/// checking that both describe the same architecture.
fn restore(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Trainer> {
    let mut trainer = trainer_for(cfg)?;
    let manifest = read_checkpoint_manifest(checkpoint)?;
    let expected = trainer.model_hash();
    if manifest.model_hash != expected {
        return Err(DicoError::HashMismatch {
            checkpoint: manifest.model_hash,
            config: expected,
        });
    }
    trainer.load_weights(checkpoint)?;
    Ok(trainer)
}

/// Scores `checkpoint` on `split` and writes the CSV (and the resolved
/// configuration beside it). Returns the CSV path.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &Path, split: SplitTag, out: Option<PathBuf>) -> Result<PathBuf> {
    let data = cfg.dataset()?;
    let cases = data.split(split);
    if cases.is_empty() {
        return Err(DicoError::Data(format!("split {split} has no cases")));
    }
    let trainer = restore(cfg, checkpoint)?;
    let mut report = MetricReport::default();
    for case in cases {
        let gt = case
            .label
            .as_ref()
            .ok_or_else(|| DicoError::Data(format!("case `{}` in split {split} has no label", case.id)))?;
        let pred = final_prediction(&predict_with(&trainer.model, case, &cfg.inference)?);
        report.push(case.id.clone(), evaluate_case(&pred, gt, case.image.spacing(), &cfg.metrics)?);
    }
    let csv = out.unwrap_or_else(|| cfg.output_dir.join(format!("eval_{split}.csv")));
    if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(&csv, report.to_csv())?;
    write_file(&csv.with_extension("config.toml"), cfg.to_toml_string())?;
    if let Some(s) = report.summary() {
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
        println!(
            "split={split} cases={} dsc={:.4} nsd={} asd={} missing={}",
            report.cases.len(),
            s.dsc,
            fmt(s.nsd),
            fmt(s.asd),
            s.missing
        );
    }
    Ok(csv)
}

pub fn infer(cfg: &ExperimentConfig, checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let trainer = restore(cfg, checkpoint)?;
    let id = input.file_name().map_or("input".into(), |s| s.to_string_lossy().into_owned());
    let case = load_image(id, input, cfg.data.normalization)?;
    let mask = final_prediction(&predict_with(&trainer.model, &case, &cfg.inference)?);
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let values: Vec<f32> = mask.data().iter().map(|&v| v as f32).collect();
    case.write_aligned(output, &values)
}

/// Writes `<id>_image.nii.gz` / `<id>_label.nii.gz` pairs and
/// `manifest.txt` into `out`. `counts` are labeled, unlabeled, val and test
/// cases; seeds run consecutively from `spec.seed`.
pub fn write_phantoms(out: &Path, spec: &PhantomSpec, counts: [usize; 4]) -> Result<Vec<CaseRecord>> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(DicoError::Config(errs));
    }
    create_dir(out)?;
    let tags = [
        SplitTag::LabeledTrain,
        SplitTag::UnlabeledTrain,
        SplitTag::Val,
        SplitTag::Test,
    ];
    let header = default_header([1.0; 3]);
    let mut records = Vec::new();
    let mut i = 0u64;
    for (tag, &n) in tags.iter().zip(&counts) {
        for _ in 0..n {
            let p = generate_phantom(&PhantomSpec {
                seed: spec.seed.wrapping_add(i),
                ..spec.clone()
            })?;
            let id = format!("phantom{i:03}");
            let (img, lab) = (format!("{id}_image.nii.gz"), format!("{id}_label.nii.gz"));
            write_nifti(&out.join(&img), p.image.data(), spec.grid, &header, [0, 1, 2])?;
            let mask: Vec<f32> = p.mask.data().iter().map(|&v| v as f32).collect();
            write_nifti(&out.join(&lab), &mask, spec.grid, &header, [0, 1, 2])?;
            records.push(CaseRecord::new(id, img, Some(lab.into()), *tag)?);
            i += 1;
        }
    }
    write_file(&out.join("manifest.txt"), format_manifest(&records))?;
    Ok(records)
}

/// Min-max scales to 8 bits; a constant input maps to 0.
pub fn to_gray8(values: &[f32]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect()
}

fn save_png(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, pixels).expect("pixel count matches");
    img.save(path).map_err(|e| DicoError::io(path, std::io::Error::other(e)))
}

/// Projects along the last array axis. PNG rows follow the first axis and
/// columns the second. Writes `image_mip.png` and, with a mask,
/// `mask_mip.png` (foreground 255).
pub fn project(image: &Path, mask: Option<&Path>, out: &Path) -> Result<()> {
    let img = read_nifti(image)?;
    let [h, w, d] = img.extents;
    let vol = Volume::from_data([1, 1, h, w, d], img.data)?;
    create_dir(out)?;
    let proj = mip_project(vol.tensor())?;
    save_png(&out.join("image_mip.png"), w, h, to_gray8(proj.data()))?;
    if let Some(mpath) = mask {
        let m = read_nifti(mpath)?;
        if m.extents != img.extents {
            return Err(DicoError::ingestion(
                mpath,
                format!("mask grid {:?} does not match image grid {:?}", m.extents, img.extents),
            ));
        }
        let t = Volume::from_data([1, 1, h, w, d], m.data)?;
        let mp = mip_project(t.tensor())?;
        let pixels = mp.data().iter().map(|&v| if v > 0.0 { 255 } else { 0 }).collect();
        save_png(&out.join("mask_mip.png"), w, h, pixels)?;
    }
    Ok(())
}
