//! Brute-force oracles shared by the integration suites.
#![allow(dead_code)]

use dico::volume::LabelMask;

pub fn at(ext: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    (x * ext[1] + y) * ext[2] + z
}

/// Foreground voxels with a background or out-of-grid neighbour, checking
/// either the 6 face neighbours or all 26.
pub fn surface_oracle(data: &[u8], ext: [usize; 3], full: bool) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for x in 0..ext[0] {
        for y in 0..ext[1] {
            for z in 0..ext[2] {
                if data[at(ext, x, y, z)] == 0 {
                    continue;
                }
                let mut boundary = false;
                for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dz in -1i64..=1 {
                            let n = dx.abs() + dy.abs() + dz.abs();
                            if n == 0 || (!full && n > 1) {
                                continue;
                            }
                            let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            let inside = nx >= 0
                                && ny >= 0
                                && nz >= 0
                                && (nx as usize) < ext[0]
                                && (ny as usize) < ext[1]
                                && (nz as usize) < ext[2];
                            if !inside || data[at(ext, nx as usize, ny as usize, nz as usize)] == 0 {
                                boundary = true;
                            }
                        }
                    }
                }
                if boundary {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// For every point of `from`, the Euclidean distance to the closest point
/// of `to`, by exhaustive search.
pub fn nearest_all_pairs(from: &[[usize; 3]], to: &[[usize; 3]]) -> Vec<f64> {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| {
                    (0..3)
                        .map(|k| (a[k] as f64 - b[k] as f64).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub struct Oracle {
    pub dsc: f64,
    pub asd: Option<f64>,
    pub nsd: Option<f64>,
}

pub fn metrics_oracle(p: &LabelMask, g: &LabelMask, tau: f64) -> Oracle {
    let ext = p.spatial();
    let (pd, gd) = (p.data(), g.data());
    let inter = pd.iter().zip(gd).filter(|(a, b)| **a == 1 && **b == 1).count();
    let (np, ng) = (p.foreground_count(), g.foreground_count());
    let dsc = if np + ng == 0 { 1.0 } else { 2.0 * inter as f64 / (np + ng) as f64 };
    if np == 0 || ng == 0 {
        return Oracle { dsc, asd: None, nsd: None };
    }
    let (sp, sg) = (surface_oracle(pd, ext, false), surface_oracle(gd, ext, false));
    let (dpg, dgp) = (nearest_all_pairs(&sp, &sg), nearest_all_pairs(&sg, &sp));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let asd = 0.5 * (mean(&dpg) + mean(&dgp));
    let within = dpg.iter().chain(&dgp).filter(|&&d| d <= tau).count();
    let nsd = within as f64 / (dpg.len() + dgp.len()) as f64;
    Oracle { dsc, asd: Some(asd), nsd: Some(nsd) }
}

pub fn mip_oracle(data: &[f32], shape: [usize; 5]) -> Vec<f32> {
    let [b, c, h, w, d] = shape;
    let mut out = Vec::with_capacity(b * c * h * w);
    for bc in 0..b * c {
        for x in 0..h {
            for y in 0..w {
                let mut m = f32::NEG_INFINITY;
                for z in 0..d {
                    m = m.max(data[((bc * h + x) * w + y) * d + z]);
                }
                out.push(m);
            }
        }
    }
    out
}

use dico::error::Result;
use dico::losses::{seg_loss, LossWeights};
use dico_autograd::{Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Worst relative error of central differences against backprop for
/// every logit of `seg_loss` on a `(1, 2, 2, 2, 2)` volume.
pub fn seg_loss_fd_error(seed: u64, h: f32) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [1, 2, 2, 2, 2];
    let base = random_vec(&mut rng, 16, 2.0);
    let labels: Vec<u8> = (0..8).map(|_| rng.gen_range(0..=1)).collect();
    let target = dico::volume::LabelMask::new([1, 1, 2, 2, 2], labels).unwrap();
    let w = LossWeights::default();
    let f = |v: Vec<f32>| seg_loss(&Tensor::from_vec(&shape, v), &target, &w).unwrap().item() as f64;
    let x = Tensor::param(&shape, base.clone());
    let analytic = seg_loss(&x, &target, &w).unwrap().backward().get_or_zeros(&x);
    let mut worst = 0f64;
    for i in 0..base.len() {
        let (mut p, mut m) = (base.clone(), base.clone());
        p[i] += h;
        m[i] -= h;
        let numeric = (f(p) - f(m)) / (2.0 * h as f64);
        let a = analytic[i] as f64;
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
    }
    worst
}

/// Replaces entry `entry` of the `tensor`-th parameter by `value`.
pub fn with_param<M: Module + Clone>(model: &M, tensor: usize, entry: usize, value: f32) -> M {
    let mut m = model.clone();
    let mut i = 0;
    m.visit_mut("", &mut |_, t| {
        if i == tensor {
            let mut d = t.to_vec();
            d[entry] = value;
            *t = Tensor::param(t.shape(), d);
        }
        i += 1;
    });
    m
}

/// Central-difference check of `loss(model)` on `picks` parameter entries
/// drawn at random among those with a gradient of at least `min_grad`.
/// Returns `(name, analytic, numeric, relative error)` per pick.
pub fn module_fd_check<M: Module + Clone>(
    model: &M,
    loss: impl Fn(&M) -> Result<Tensor>,
    picks: usize,
    h: f32,
    seed: u64,
) -> Vec<(String, f64, f64, f64)> {
    let params = model.named_parameters();
    let grads = loss(model).unwrap().backward();
    let mut candidates = Vec::new();
    for (ti, (name, t)) in params.iter().enumerate() {
        if let Some(g) = grads.get(t) {
            for (e, &v) in g.iter().enumerate() {
                if v.abs() > 1e-3 {
                    candidates.push((ti, e, name.clone(), v));
                }
            }
        }
    }
    assert!(candidates.len() >= picks, "only {} parameters carry gradient", candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..picks {
        let (ti, e, name, a) = candidates.swap_remove(rng.gen_range(0..candidates.len()));
        let v = params[ti].1.data()[e];
        let fp = loss(&with_param(model, ti, e, v + h)).unwrap().item() as f64;
        let fm = loss(&with_param(model, ti, e, v - h)).unwrap().item() as f64;
        let numeric = (fp - fm) / (2.0 * h as f64);
        let a = a as f64;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
        out.push((format!("{name}[{e}]"), a, numeric, rel));
    }
    out
}

/// Fixed random projection of a network output to a scalar.
pub fn projected(y: &Tensor, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_vec(y.shape(), random_vec(&mut rng, y.numel(), 1.0));
    y.mul(&w).sum_all()
}

use dico::data::{CropMode, Dataset, PhantomSpec};
use dico::networks::{BackboneConfig, DiscriminatorConfig};
use dico::trainer::{ModelConfig, TrainConfig, Variant};

/// Sub-networks small enough for many-iteration tests on 8³ crops.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
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
    }
}

pub fn tiny_train(variant: Variant, iterations: u64) -> TrainConfig {
    TrainConfig {
        variant,
        total_iterations: iterations,
        crop: [8, 8, 8],
        crop_mode: CropMode::Random,
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

/// Two labeled, three unlabeled and one validation phantom on a 16³ grid.
pub fn tiny_data() -> Dataset {
    let spec = PhantomSpec { grid: [16, 16, 16], tubes: 2, ..PhantomSpec::default() };
    Dataset::phantoms(&spec, 2, 3, 1).unwrap()
}
