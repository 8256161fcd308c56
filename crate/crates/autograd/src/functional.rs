//! Normalisations, losses and resampling.

use crate::ops::{split_at_axis, stable_sigmoid};
use crate::tensor::Tensor;

fn for_each_fibre(outer: usize, n: usize, inner: usize, mut f: impl FnMut(&dyn Fn(usize) -> usize)) {
    for o in 0..outer {
        for i in 0..inner {
            let at = move |k: usize| (o * n + k) * inner + i;
            f(&at);
        }
    }
}

impl Tensor {
    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Tensor {
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0f32; x.len()];
        for_each_fibre(outer, n, inner, |at| {
            let max = (0..n).map(|k| x[at(k)]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0f32;
            for k in 0..n {
                let e = (x[at(k)] - max).exp();
                out[at(k)] = e;
                sum += e;
            }
            for k in 0..n {
                out[at(k)] /= sum;
            }
        });
        let y = out.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0f32; g.len()];
            for_each_fibre(outer, n, inner, |at| {
                let dot: f32 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                for k in 0..n {
                    gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                }
            });
            vec![Some(gx)]
        })
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Tensor {
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0f32; x.len()];
        for_each_fibre(outer, n, inner, |at| {
            let max = (0..n).map(|k| x[at(k)]).fold(f32::NEG_INFINITY, f32::max);
            let lse = max + (0..n).map(|k| (x[at(k)] - max).exp()).sum::<f32>().ln();
            for k in 0..n {
                out[at(k)] = x[at(k)] - lse;
            }
        });
        let y = out.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0f32; g.len()];
            for_each_fibre(outer, n, inner, |at| {
                let total: f32 = (0..n).map(|k| g[at(k)]).sum();
                for k in 0..n {
                    gx[at(k)] = g[at(k)] - y[at(k)].exp() * total;
                }
            });
            vec![Some(gx)]
        })
    }

    /// Zero-mean, unit-variance normalisation over the last axis (no affine).
    pub fn normalize_last(&self, eps: f32) -> Tensor {
        let n = *self.shape().last().expect("normalize_last on rank-0 tensor");
        let x = self.data();
        let rows = x.len() / n;
        let mut out = vec![0f32; x.len()];
        let mut inv_std = vec![0f32; rows];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f32>() / n as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n as f32;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let y = out.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0f32; g.len()];
            for r in 0..rows {
                let gr = &g[r * n..(r + 1) * n];
                let yr = &y[r * n..(r + 1) * n];
                let mean_g = gr.iter().sum::<f32>() / n as f32;
                let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f32>() / n as f32;
                for k in 0..n {
                    gx[r * n + k] = inv_std[r] * (gr[k] - mean_g - yr[k] * mean_gy);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Mean binary cross-entropy of sigmoid(`self`) against a constant target.
    pub fn bce_with_logits(&self, target: f32) -> Tensor {
        let n = self.numel();
        let total: f64 = self
            .data()
            .iter()
            .map(|&x| (x.max(0.0) - x * target + (-x.abs()).exp().ln_1p()) as f64)
            .sum();
        let x = self.clone();
        Tensor::from_op(vec![1], vec![(total / n as f64) as f32], vec![self.clone()], move |g, _| {
            let s = g[0] / n as f32;
            vec![Some(x.data().iter().map(|&v| (stable_sigmoid(v) - target) * s).collect())]
        })
    }

    /// Linear resampling of `axis` to `len` samples with corner-aligned
    /// sampling (first and last samples coincide with the input's).
    pub fn resize_axis(&self, axis: usize, len: usize) -> Tensor {
        assert!(len > 0, "resize_axis to zero length");
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        if n == len {
            return self.clone();
        }
        let taps = linear_taps(n, len);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let x = self.data();
        let mut out = vec![0f32; outer * len * inner];
        for o in 0..outer {
            for (j, &(i0, w)) in taps.iter().enumerate() {
                let dst = (o * len + j) * inner;
                let s0 = (o * n + i0) * inner;
                if w == 0.0 {
                    out[dst..dst + inner].copy_from_slice(&x[s0..s0 + inner]);
                } else {
                    let s1 = s0 + inner;
                    for k in 0..inner {
                        out[dst + k] = (1.0 - w) * x[s0 + k] + w * x[s1 + k];
                    }
                }
            }
        }
        Tensor::from_op(shape, out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0f32; outer * n * inner];
            for o in 0..outer {
                for (j, &(i0, w)) in taps.iter().enumerate() {
                    let src = (o * len + j) * inner;
                    let d0 = (o * n + i0) * inner;
                    for k in 0..inner {
                        gx[d0 + k] += (1.0 - w) * g[src + k];
                    }
                    if w != 0.0 {
                        for k in 0..inner {
                            gx[d0 + inner + k] += w * g[src + k];
                        }
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Trilinear, corner-aligned resize of the last three axes.
    pub fn resize_trilinear(&self, size: [usize; 3]) -> Tensor {
        let r = self.rank();
        assert!(r >= 3, "resize_trilinear needs at least 3 axes");
        self.resize_axis(r - 3, size[0])
            .resize_axis(r - 2, size[1])
            .resize_axis(r - 1, size[2])
    }
}

/// For each output sample: (left input index, weight of the right neighbour).
fn linear_taps(n: usize, len: usize) -> Vec<(usize, f32)> {
    (0..len)
        .map(|j| {
            if n == 1 || len == 1 {
                return (0, 0.0);
            }
            // Exact rational position j*(n-1)/(len-1).
            let num = j * (n - 1);
            let den = len - 1;
            let i0 = (num / den).min(n - 2);
            let frac = (num - i0 * den) as f64 / den as f64;
            (i0, frac as f32)
        })
        .collect()
}
