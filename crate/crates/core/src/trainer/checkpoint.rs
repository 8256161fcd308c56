//! Checkpoint directories: `manifest.toml`, the resolved `config.toml`, and
//! one safetensors archive per network and optimizer.

use std::collections::HashMap;
use std::path::Path;

use dico_autograd::{AdamWState, Module, Tensor};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::{Trainer, Variant};
use crate::error::{DicoError, Result};

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte seed, hex encoded.
    pub seed: String,
    pub stream: u64,
    /// Word position; a decimal string because it is 128 bits wide.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> std::result::Result<ChaCha8Rng, String> {
        use rand::SeedableRng;
        let bytes = hex::decode(&self.seed).map_err(|e| format!("bad rng seed: {e}"))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| "rng seed must be 32 bytes".to_string())?;
        let pos: u128 = self.word_pos.parse().map_err(|e| format!("bad rng word_pos: {e}"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// Completed iterations.
    pub iteration: u64,
    pub variant: Variant,
    pub model_hash: String,
    pub rng: RngState,
    pub optimizer_g_step: u64,
    pub optimizer_d_step: u64,
}

const MANIFEST: &str = "manifest.toml";
const CONFIG: &str = "config.toml";

fn to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn from_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn write_archive(path: &Path, entries: Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<()> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = entries
        .into_iter()
        .map(|(n, s, v)| (n, s, to_bytes(&v)))
        .collect();
    let mut views = Vec::with_capacity(bytes.len());
    for (name, shape, data) in &bytes {
        let view = TensorView::new(Dtype::F32, shape.clone(), data)
            .map_err(|e| DicoError::checkpoint(path, format!("tensor {name}: {e}")))?;
        views.push((name.clone(), view));
    }
    safetensors::serialize_to_file(views, None, path).map_err(|e| DicoError::checkpoint(path, e.to_string()))
}

fn read_archive(path: &Path) -> Result<HashMap<String, (Vec<usize>, Vec<f32>)>> {
    let bytes = std::fs::read(path).map_err(|e| DicoError::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| DicoError::checkpoint(path, e.to_string()))?;
    let mut out = HashMap::new();
    for name in st.names() {
        let view = st.tensor(name).map_err(|e| DicoError::checkpoint(path, e.to_string()))?;
        if view.dtype() != Dtype::F32 {
            return Err(DicoError::checkpoint(path, format!("tensor {name} is not f32")));
        }
        out.insert(name.to_string(), (view.shape().to_vec(), from_bytes(view.data())));
    }
    Ok(out)
}

fn save_module(path: &Path, module: &dyn Module) -> Result<()> {
    let entries = module
        .named_parameters()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec(), t.to_vec()))
        .collect();
    write_archive(path, entries)
}

/// Replaces every parameter of `module` with the archived value.
/// `trainable` selects leaf parameters versus constants (EMA teacher).
fn load_module(path: &Path, module: &mut dyn Module, trainable: bool) -> Result<()> {
    let mut archive = read_archive(path)?;
    let mut err = None;
    module.visit_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        match archive.remove(name) {
            Some((shape, data)) if shape == t.shape() => {
                *t = if trainable {
                    Tensor::param(&shape, data)
                } else {
                    Tensor::from_vec(&shape, data)
                };
            }
            Some((shape, _)) => {
                err = Some(format!("parameter {name} has shape {shape:?}, expected {:?}", t.shape()));
            }
            None => err = Some(format!("parameter {name} is missing")),
        }
    });
    if let Some(e) = err {
        return Err(DicoError::checkpoint(path, e));
    }
    if let Some(extra) = archive.keys().next() {
        return Err(DicoError::checkpoint(path, format!("unexpected parameter {extra}")));
    }
    Ok(())
}

fn save_optimizer(path: &Path, state: &AdamWState) -> Result<()> {
    let mut entries = Vec::new();
    for (i, (m, v)) in state.first.iter().zip(&state.second).enumerate() {
        if !m.is_empty() {
            entries.push((format!("first.{i:05}"), vec![m.len()], m.clone()));
            entries.push((format!("second.{i:05}"), vec![v.len()], v.clone()));
        }
    }
    entries.push(("slots".into(), vec![1], vec![state.first.len() as f32]));
    write_archive(path, entries)
}

fn load_optimizer(path: &Path, step: u64) -> Result<AdamWState> {
    let mut archive = read_archive(path)?;
    let slots = archive
        .remove("slots")
        .map(|(_, v)| v[0] as usize)
        .ok_or_else(|| DicoError::checkpoint(path, "optimizer archive has no slot count"))?;
    let mut state = AdamWState {
        step,
        first: vec![Vec::new(); slots],
        second: vec![Vec::new(); slots],
    };
    for (name, (_, data)) in archive {
        let (kind, idx) = name
            .split_once('.')
            .ok_or_else(|| DicoError::checkpoint(path, format!("unexpected tensor {name}")))?;
        let i: usize = idx
            .parse()
            .map_err(|_| DicoError::checkpoint(path, format!("unexpected tensor {name}")))?;
        if i >= slots {
            return Err(DicoError::checkpoint(path, format!("slot {i} out of range")));
        }
        match kind {
            "first" => state.first[i] = data,
            "second" => state.second[i] = data,
            _ => return Err(DicoError::checkpoint(path, format!("unexpected tensor {name}"))),
        }
    }
    Ok(state)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| DicoError::io(&path, e))?;
    toml::from_str(&text).map_err(|e| DicoError::checkpoint(&path, e.to_string()))
}

impl Trainer {
    pub fn save_checkpoint(&self, dir: &Path, config_text: Option<&str>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| DicoError::io(dir, e))?;
        save_module(&dir.join("m1.safetensors"), &self.model.m1)?;
        save_module(&dir.join("m2.safetensors"), &self.model.m2)?;
        save_module(&dir.join("discriminator.safetensors"), &self.model.discriminator)?;
        if let Some(ema) = &self.model.ema {
            save_module(&dir.join("ema.safetensors"), ema)?;
        }
        save_optimizer(&dir.join("optimizer_g.safetensors"), self.opt_g.state())?;
        save_optimizer(&dir.join("optimizer_d.safetensors"), self.opt_d.state())?;
        if let Some(text) = config_text {
            let path = dir.join(CONFIG);
            std::fs::write(&path, text).map_err(|e| DicoError::io(&path, e))?;
        }
        let manifest = CheckpointManifest {
            iteration: self.iteration,
            variant: self.config.variant,
            model_hash: self.model_hash(),
            rng: self.rng_state(),
            optimizer_g_step: self.opt_g.state().step,
            optimizer_d_step: self.opt_d.state().step,
        };
        let path = dir.join(MANIFEST);
        let text = toml::to_string(&manifest).expect("manifest serialises");
        std::fs::write(&path, text).map_err(|e| DicoError::io(&path, e))
    }

    /// Restores parameters, optimizer moments, RNG and iteration count from
    /// `dir`. The checkpoint must have been written for the same model
    /// configuration and variant.
    pub fn load_checkpoint(&mut self, dir: &Path) -> Result<()> {
        let manifest = read_manifest(dir)?;
        let expected = self.model_hash();
        if manifest.model_hash != expected {
            return Err(DicoError::HashMismatch {
                checkpoint: manifest.model_hash,
                config: expected,
            });
        }
        self.load_weights(dir)?;
        self.opt_g
            .load_state(load_optimizer(&dir.join("optimizer_g.safetensors"), manifest.optimizer_g_step)?);
        self.opt_d
            .load_state(load_optimizer(&dir.join("optimizer_d.safetensors"), manifest.optimizer_d_step)?);
        self.rng = manifest
            .rng
            .restore()
            .map_err(|e| DicoError::checkpoint(dir.join(MANIFEST), e))?;
        self.iteration = manifest.iteration;
        Ok(())
    }

    /// Restores network parameters only.
    pub fn load_weights(&mut self, dir: &Path) -> Result<()> {
        load_module(&dir.join("m1.safetensors"), &mut self.model.m1, true)?;
        load_module(&dir.join("m2.safetensors"), &mut self.model.m2, true)?;
        load_module(&dir.join("discriminator.safetensors"), &mut self.model.discriminator, true)?;
        if let Some(ema) = self.model.ema.as_mut() {
            load_module(&dir.join("ema.safetensors"), ema, false)?;
        }
        Ok(())
    }
}
