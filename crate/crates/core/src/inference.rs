//! Whole-volume prediction by overlapping sliding windows.

use dico_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{DicoError, Result};
use crate::networks::SegmentationNet;
use crate::volume::{center_offset, crop_buffer, LabelMask, ProbMap, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Blending {
    Uniform,
    /// Weights `exp(-d²/2σ²)` per axis with `σ = window / 8`.
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlidingWindowConfig {
    pub window: [usize; 3],
    pub overlap: f64,
    pub blending: Blending,
    /// Zero-pad axes shorter than the window instead of rejecting them.
    pub pad_to_window: bool,
    /// Average the M1 and M2 probabilities instead of using M1 alone.
    pub average_m2: bool,
}

impl Default for SlidingWindowConfig {
    fn default() -> Self {
        SlidingWindowConfig {
            window: [96, 96, 96],
            overlap: 0.5,
            blending: Blending::Gaussian,
            pad_to_window: true,
            average_m2: false,
        }
    }
}

impl SlidingWindowConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.window.contains(&0) {
            errs.push(format!("inference.window must be positive (got {:?})", self.window));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            errs.push(format!("inference.overlap must be in [0, 1) (got {})", self.overlap));
        }
        errs
    }
}

/// Window start positions along one axis. The stride is
/// `max(1, floor(window * (1 - overlap)))` and the last window is aligned
/// with the end of the axis.
pub fn window_starts(extent: usize, window: usize, overlap: f64) -> Vec<usize> {
    if extent <= window {
        return vec![0];
    }
    let stride = ((window as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let last = extent - window;
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s < last).collect();
    out.push(last);
    out
}

/// Per-voxel blend weights of one window, row-major.
pub fn blend_weights(window: [usize; 3], blending: Blending) -> Vec<f64> {
    let axis = |n: usize| -> Vec<f64> {
        match blending {
            Blending::Uniform => vec![1.0; n],
            Blending::Gaussian => {
                let sigma = n as f64 / 8.0;
                let centre = (n as f64 - 1.0) / 2.0;
                (0..n)
                    .map(|i| (-(i as f64 - centre).powi(2) / (2.0 * sigma * sigma)).exp())
                    .collect()
            }
        }
    };
    let (a, b, c) = (axis(window[0]), axis(window[1]), axis(window[2]));
    let mut out = Vec::with_capacity(window.iter().product());
    for x in &a {
        for y in &b {
            for z in &c {
                out.push(x * y * z);
            }
        }
    }
    out
}

/// Blended softmax probabilities over the whole volume.
pub fn sliding_window_predict(net: &dyn SegmentationNet, vol: &Volume, cfg: &SlidingWindowConfig) -> Result<ProbMap> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(DicoError::Config(errs));
    }
    let [b, c, h, w, d] = vol.shape();
    let ext = [h, w, d];
    if !cfg.pad_to_window && (0..3).any(|a| cfg.window[a] > ext[a]) {
        return Err(DicoError::Config(vec![format!(
            "inference.window {:?} is larger than the volume {:?} and padding is disabled",
            cfg.window, ext
        )]));
    }
    // Pad (centred) up to the window where the volume is smaller.
    let padded = [0, 1, 2].map(|a| ext[a].max(cfg.window[a]));
    let pad_offset = center_offset(ext, padded);
    let k = net.num_classes();
    let win = cfg.window;
    let wvol: usize = win.iter().product();
    let pvol: usize = padded.iter().product();
    let weights = blend_weights(win, cfg.blending);
    let starts: Vec<Vec<usize>> = (0..3).map(|a| window_starts(padded[a], win[a], cfg.overlap)).collect();

    let mut out = Vec::with_capacity(b * k * h * w * d);
    for s in 0..b {
        let sample = &vol.data()[s * c * h * w * d..(s + 1) * c * h * w * d];
        let padded_data = crop_buffer(sample, [1, c, h, w, d], pad_offset, padded);
        let mut acc = vec![0f64; k * pvol];
        let mut norm = vec![0f64; pvol];
        for &x0 in &starts[0] {
            for &y0 in &starts[1] {
                for &z0 in &starts[2] {
                    let origin = [x0 as isize, y0 as isize, z0 as isize];
                    let patch = crop_buffer(&padded_data, [1, c, padded[0], padded[1], padded[2]], origin, win);
                    let logits = net.forward(&Tensor::from_vec(&[1, c, win[0], win[1], win[2]], patch))?;
                    let probs = logits.softmax(1);
                    let p = probs.data();
                    for i in 0..win[0] {
                        for j in 0..win[1] {
                            let dst = ((x0 + i) * padded[1] + y0 + j) * padded[2] + z0;
                            let src = (i * win[1] + j) * win[2];
                            for l in 0..win[2] {
                                let wgt = weights[src + l];
                                norm[dst + l] += wgt;
                                for cls in 0..k {
                                    acc[cls * pvol + dst + l] += wgt * p[cls * wvol + src + l] as f64;
                                }
                            }
                        }
                    }
                }
            }
        }
        let blended: Vec<f32> = (0..k * pvol).map(|i| (acc[i] / norm[i % pvol]) as f32).collect();
        let back = [0, 1, 2].map(|a| -pad_offset[a]);
        out.extend(crop_buffer(&blended, [1, k, padded[0], padded[1], padded[2]], back, ext));
    }
    Ok(ProbMap::from_probabilities(Tensor::from_vec(&[b, k, h, w, d], out)))
}

/// Voxel-wise argmax; a voxel is foreground when a non-background class
/// strictly beats every lower class index (ties go to background).
pub fn final_prediction(prob: &ProbMap) -> LabelMask {
    let [b, k, h, w, d] = prob.shape();
    let vol = h * w * d;
    let p = prob.tensor().data();
    let mut out = Vec::with_capacity(b * vol);
    for s in 0..b {
        for i in 0..vol {
            let mut best = 0;
            for cls in 1..k {
                if p[(s * k + cls) * vol + i] > p[(s * k + best) * vol + i] {
                    best = cls;
                }
            }
            out.push((best != 0) as u8);
        }
    }
    LabelMask::new([b, 1, h, w, d], out).expect("binary by construction")
}

/// Per-voxel mean of two probability maps.
pub fn average_probs(a: &ProbMap, b: &ProbMap) -> Result<ProbMap> {
    if a.shape() != b.shape() {
        return Err(DicoError::Shape(format!("cannot average {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok(ProbMap::from_probabilities(a.tensor().add(b.tensor()).scale(0.5).detach()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_cover_the_axis() {
        assert_eq!(window_starts(96, 96, 0.5), vec![0]);
        assert_eq!(window_starts(10, 4, 0.5), vec![0, 2, 4, 6]);
        assert_eq!(window_starts(11, 4, 0.5), vec![0, 2, 4, 6, 7]);
        assert_eq!(window_starts(5, 4, 0.0), vec![0, 1]);
    }

    #[test]
    fn gaussian_weights_peak_in_the_middle() {
        let w = blend_weights([8, 1, 1], Blending::Gaussian);
        assert!(w[3] > w[0] && (w[3] - w[4]).abs() < 1e-12 && w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn ties_go_to_background() {
        let p = ProbMap::new(Tensor::from_vec(&[1, 2, 2, 1, 1], vec![0.5, 0.4, 0.5, 0.6])).unwrap();
        assert_eq!(final_prediction(&p).data(), &[0, 1]);
    }
}
