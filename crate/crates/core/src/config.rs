//! Declarative experiment configuration (TOML) with `section.key=value`
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{make_split, read_manifest, CaseRecord, Dataset, Normalization, PhantomSpec};
use crate::error::{DicoError, Result};
use crate::inference::SlidingWindowConfig;
use crate::losses::LossWeights;
use crate::metrics::MetricConfig;
use crate::trainer::{ModelConfig, TrainConfig};

/// Environment variable that, when set, roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "DICO_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSuite {
    pub spec: PhantomSpec,
    pub labeled: usize,
    pub unlabeled: usize,
    pub val: usize,
}

impl Default for PhantomSuite {
    fn default() -> Self {
        PhantomSuite {
            spec: PhantomSpec::default(),
            labeled: 2,
            unlabeled: 8,
            val: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset manifest; relative paths resolve against the config file.
    pub manifest: Option<PathBuf>,
    /// Synthetic data used instead of a manifest.
    pub phantom: Option<PhantomSuite>,
    /// Re-split the manifest's training cases to this labeled fraction.
    pub labeled_fraction: Option<f64>,
    pub split_seed: u64,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub losses: LossWeights,
    pub trainer: TrainConfig,
    pub inference: SlidingWindowConfig,
    pub metrics: MetricConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            losses: LossWeights::default(),
            trainer: TrainConfig::default(),
            inference: SlidingWindowConfig::default(),
            metrics: MetricConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one `section.key=value` override to a TOML document. The value
/// is parsed as a TOML literal, falling back to a bare string.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| DicoError::Config(vec![format!("override `{spec}` is not of the form section.key=value")]))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(DicoError::Config(vec![format!("override `{spec}` has an empty key")]));
    }
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| DicoError::Config(vec![format!("override `{spec}`: `{k}` is not a section")]))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| DicoError::Config(vec![e.to_string()]))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| DicoError::Config(vec![e.to_string()]))?;
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(DicoError::Config(errs));
        }
        Ok(cfg)
    }

    /// Reads `path`; relative data paths become relative to its directory and
    /// a relative output directory is rooted at `$DICO_OUTPUT_ROOT` when set.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DicoError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = cfg.data.manifest.as_mut() {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        cfg.output_dir = resolve_output(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Every violated constraint across all sections.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        match (&self.data.manifest, &self.data.phantom) {
            (None, None) => errs.push("data: set either data.manifest or data.phantom".into()),
            (Some(_), Some(_)) => errs.push("data: data.manifest and data.phantom are mutually exclusive".into()),
            _ => {}
        }
        if let Some(f) = self.data.labeled_fraction {
            if !(f > 0.0 && f <= 1.0) {
                errs.push(format!("data.labeled_fraction must be in (0, 1] (got {f})"));
            }
        }
        if let Some(p) = &self.data.phantom {
            errs.extend(p.spec.validate().into_iter().map(|e| format!("data.{e}")));
            if p.labeled == 0 {
                errs.push("data.phantom.labeled must be positive".into());
            }
        }
        errs.extend(self.model.validate());
        errs.extend(self.losses.validate());
        errs.extend(self.trainer.validate());
        errs.extend(self.inference.validate());
        errs.extend(self.metrics.validate());
        if self.model.validate().is_empty() {
            let m = self.model.spatial_multiple(self.trainer.variant);
            for (a, name) in ["height", "width", "depth"].iter().enumerate() {
                if self.trainer.crop[a] % m[a] != 0 {
                    errs.push(format!(
                        "trainer.crop {name} {} must be a multiple of {} for variant {}",
                        self.trainer.crop[a], m[a], self.trainer.variant
                    ));
                }
                if self.inference.window[a] % m[a] != 0 {
                    errs.push(format!(
                        "inference.window {name} {} must be a multiple of {}",
                        self.inference.window[a], m[a]
                    ));
                }
            }
        }
        errs
    }

    /// Case records from the manifest, re-split when a labeled fraction is
    /// configured.
    pub fn records(&self) -> Result<Vec<CaseRecord>> {
        let path = self
            .data
            .manifest
            .as_ref()
            .ok_or_else(|| DicoError::Config(vec!["data.manifest is not set".into()]))?;
        let recs = read_manifest(path)?;
        match self.data.labeled_fraction {
            Some(f) => make_split(&recs, f, self.data.split_seed),
            None => Ok(recs),
        }
    }

    /// Loads the configured data source.
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.data.phantom {
            Some(p) => Dataset::phantoms(&p.spec, p.labeled, p.unlabeled, p.val),
            None => Dataset::from_records(&self.records()?, self.data.normalization),
        }
    }
}

/// Roots a relative path at `$DICO_OUTPUT_ROOT` when that is set.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}
