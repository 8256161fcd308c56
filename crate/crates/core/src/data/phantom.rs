//! Synthetic tubular phantoms: smooth random curves swept with a varying
//! radius, over a smooth background with Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DicoError, Result};
use crate::volume::{LabelMask, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub grid: [usize; 3],
    pub tubes: usize,
    /// Inclusive range of tube radii in voxels.
    pub radius: [f32; 2],
    /// Lateral wander of the interior control points, as a fraction of the
    /// grid extent.
    pub curvature: f32,
    pub contrast: f32,
    /// Amplitude of the smooth background field.
    pub background: f32,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            grid: [32, 32, 32],
            tubes: 3,
            radius: [1.0, 2.5],
            curvature: 0.15,
            contrast: 1.0,
            background: 0.2,
            noise_sigma: 0.3,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.grid.iter().any(|&g| g < 16) {
            errs.push(format!("phantom.grid must be at least 16 per axis (got {:?})", self.grid));
        }
        if self.tubes == 0 {
            errs.push("phantom.tubes must be positive".into());
        }
        if !(self.radius[0] >= 1.0 && self.radius[1] >= self.radius[0]) {
            errs.push(format!("phantom.radius must satisfy 1 <= min <= max (got {:?})", self.radius));
        }
        for (name, v) in [
            ("curvature", self.curvature),
            ("background", self.background),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("phantom.{name} must be finite and >= 0 (got {v})"));
            }
        }
        if !self.contrast.is_finite() {
            errs.push("phantom.contrast must be finite".into());
        }
        errs
    }
}

/// Centre line and radius profile of one rendered tube.
#[derive(Debug, Clone)]
pub struct TubePath {
    /// Densely sampled centre points (spacing at most a quarter voxel).
    pub centres: Vec<[f32; 3]>,
    pub radii: Vec<f32>,
}

impl TubePath {
    pub fn length(&self) -> f32 {
        self.centres.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: Volume,
    pub mask: LabelMask,
    pub background: Vec<f32>,
    pub tubes: Vec<TubePath>,
    /// Binary mask of each tube on its own.
    pub tube_masks: Vec<Vec<u8>>,
}

fn dist(a: [f32; 3], b: [f32; 3]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn catmull_rom(p0: [f32; 3], p1: [f32; 3], p2: [f32; 3], p3: [f32; 3], t: f32) -> [f32; 3] {
    let t2 = t * t;
    let t3 = t2 * t;
    [0, 1, 2].map(|a| {
        0.5 * (2.0 * p1[a]
            + (p2[a] - p0[a]) * t
            + (2.0 * p0[a] - 5.0 * p1[a] + 4.0 * p2[a] - p3[a]) * t2
            + (3.0 * p1[a] - p0[a] - 3.0 * p2[a] + p3[a]) * t3)
    })
}

fn random_path(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> TubePath {
    let ext = spec.grid.map(|g| g as f32 - 1.0);
    let margin = spec.radius[1];
    let inside = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|a| rng.gen_range(margin.min(ext[a] / 2.0)..=(ext[a] - margin).max(ext[a] / 2.0)));
    let start = inside(rng);
    let end = loop {
        let e = inside(rng);
        // Keep tubes long relative to the grid.
        if dist(start, e) >= 0.5 * ext.iter().cloned().fold(f32::MAX, f32::min) {
            break e;
        }
    };
    let n_ctrl = 4;
    let mut ctrl = vec![start];
    for i in 1..n_ctrl - 1 {
        let t = i as f32 / (n_ctrl - 1) as f32;
        ctrl.push([0, 1, 2].map(|a| {
            let base = start[a] + (end[a] - start[a]) * t;
            let wander = rng.gen_range(-1.0f32..=1.0) * spec.curvature * ext[a];
            (base + wander).clamp(0.0, ext[a])
        }));
    }
    ctrl.push(end);

    let r0 = rng.gen_range(spec.radius[0]..=spec.radius[1]);
    let r1 = rng.gen_range(spec.radius[0]..=spec.radius[1]);
    let mut centres = Vec::new();
    for seg in 0..ctrl.len() - 1 {
        let p0 = ctrl[seg.saturating_sub(1)];
        let p1 = ctrl[seg];
        let p2 = ctrl[seg + 1];
        let p3 = ctrl[(seg + 2).min(ctrl.len() - 1)];
        let steps = ((dist(p1, p2) * 8.0).ceil() as usize).max(1);
        for s in 0..steps {
            let c = catmull_rom(p0, p1, p2, p3, s as f32 / steps as f32);
            centres.push([0, 1, 2].map(|a| c[a].clamp(0.0, ext[a])));
        }
    }
    centres.push(end);
    // Catmull-Rom can overshoot between samples; refine any gap above a
    // quarter voxel so the swept tube stays connected.
    let mut dense = vec![centres[0]];
    for w in centres.windows(2) {
        let n = ((dist(w[0], w[1]) / 0.25).ceil() as usize).max(1);
        for k in 1..=n {
            let t = k as f32 / n as f32;
            dense.push([0, 1, 2].map(|a| w[0][a] + (w[1][a] - w[0][a]) * t));
        }
    }
    let n = dense.len();
    let radii = (0..n)
        .map(|i| {
            let t = i as f32 / (n - 1).max(1) as f32;
            r0 + (r1 - r0) * t
        })
        .collect();
    TubePath { centres: dense, radii }
}

/// Voxels (centres at integer coordinates) within the swept radius.
pub fn render_tube(path: &TubePath, grid: [usize; 3]) -> Vec<u8> {
    let [h, w, d] = grid;
    let mut out = vec![0u8; h * w * d];
    for (c, &r) in path.centres.iter().zip(&path.radii) {
        let lo = c.map(|v| (v - r).floor().max(0.0) as usize);
        let hi = [0, 1, 2].map(|a| ((c[a] + r).ceil() as usize).min(grid[a] - 1));
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    if dist([i as f32, j as f32, k as f32], *c) <= r {
                        out[(i * w + j) * d + k] = 1;
                    }
                }
            }
        }
    }
    out
}

fn background_field(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let [h, w, d] = spec.grid;
    let waves: Vec<([f32; 3], f32)> = (0..3)
        .map(|_| {
            let k = [0, 1, 2].map(|a| rng.gen_range(0.5f32..2.0) * std::f32::consts::PI / spec.grid[a] as f32);
            (k, rng.gen_range(0.0..std::f32::consts::TAU))
        })
        .collect();
    let mut out = Vec::with_capacity(h * w * d);
    for i in 0..h {
        for j in 0..w {
            for k in 0..d {
                let v: f32 = waves
                    .iter()
                    .map(|(f, ph)| (f[0] * i as f32 + f[1] * j as f32 + f[2] * k as f32 + ph).sin())
                    .sum();
                out.push(spec.background * v / waves.len() as f32);
            }
        }
    }
    out
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(DicoError::Config(errs));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tubes: Vec<TubePath> = (0..spec.tubes).map(|_| random_path(spec, &mut rng)).collect();
    let tube_masks: Vec<Vec<u8>> = tubes.iter().map(|t| render_tube(t, spec.grid)).collect();
    let n: usize = spec.grid.iter().product();
    let mut mask = vec![0u8; n];
    for tm in &tube_masks {
        for (m, &t) in mask.iter_mut().zip(tm) {
            *m |= t;
        }
    }
    let background = background_field(spec, &mut rng);
    let noise = Normal::new(0.0f32, spec.noise_sigma.max(0.0)).expect("valid sigma");
    let image: Vec<f32> = (0..n)
        .map(|i| {
            let e = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            spec.contrast * mask[i] as f32 + background[i] + e
        })
        .collect();
    let [h, w, d] = spec.grid;
    Ok(Phantom {
        image: Volume::from_data([1, 1, h, w, d], image)?,
        mask: LabelMask::new([1, 1, h, w, d], mask)?,
        background,
        tubes,
        tube_masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = PhantomSpec {
            grid: [16, 16, 16],
            ..PhantomSpec::default()
        };
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.mask.data(), b.mask.data());
        assert!(a.mask.foreground_count() > 0);
    }

    #[test]
    fn noiseless_image_on_mask_is_contrast_plus_background() {
        let spec = PhantomSpec {
            grid: [16, 16, 16],
            noise_sigma: 0.0,
            contrast: 1.0,
            ..PhantomSpec::default()
        };
        let p = generate_phantom(&spec).unwrap();
        for ((&v, &m), &bg) in p.image.data().iter().zip(p.mask.data()).zip(&p.background) {
            if m == 1 {
                assert_eq!(v, 1.0 + bg);
            }
        }
    }

    #[test]
    fn small_grids_are_rejected() {
        let spec = PhantomSpec {
            grid: [8, 16, 16],
            ..PhantomSpec::default()
        };
        assert!(generate_phantom(&spec).is_err());
    }
}
