//! Elementwise, reduction and layout operations.

use crate::tensor::{numel, Tensor};

/// Splits a shape around `axis` into (outer, axis extent, inner).
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for shape {shape:?}");
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn assert_same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
}

fn unary<F, G>(x: &Tensor, forward: F, derivative: G) -> Tensor
where
    F: Fn(f32) -> f32,
    G: Fn(f32, f32) -> f32 + Send + Sync + 'static,
{
    let out: Vec<f32> = x.data().iter().map(|&v| forward(v)).collect();
    let xc = x.clone();
    let saved = out.clone();
    Tensor::from_op(x.shape().to_vec(), out, vec![x.clone()], move |g, _| {
        let gx = g
            .iter()
            .zip(xc.data())
            .zip(&saved)
            .map(|((&g, &x), &y)| g * derivative(x, y))
            .collect();
        vec![Some(gx)]
    })
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_same_shape(self, other, "add");
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone(), other.clone()], |g, needs| {
            vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]
        })
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_same_shape(self, other, "sub");
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone(), other.clone()], |g, needs| {
            vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.iter().map(|v| -v).collect()),
            ]
        })
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        assert_same_shape(self, other, "mul");
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone(), other.clone()], move |g, needs| {
            vec![
                needs[0].then(|| g.iter().zip(b.data()).map(|(g, b)| g * b).collect()),
                needs[1].then(|| g.iter().zip(a.data()).map(|(g, a)| g * a).collect()),
            ]
        })
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        assert_same_shape(self, other, "div");
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a / b).collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone(), other.clone()], move |g, needs| {
            vec![
                needs[0].then(|| g.iter().zip(b.data()).map(|(g, b)| g / b).collect()),
                needs[1].then(|| {
                    g.iter()
                        .zip(a.data())
                        .zip(b.data())
                        .map(|((g, a), b)| -g * a / (b * b))
                        .collect()
                }),
            ]
        })
    }

    /// Adds `v` (shape `[shape[axis]]`) broadcast along every other axis.
    pub fn add_along(&self, v: &Tensor, axis: usize) -> Tensor {
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        assert_eq!(v.shape(), &[n], "add_along: vector shape {:?} vs axis extent {n}", v.shape());
        let mut out = self.to_vec();
        for o in 0..outer {
            for (c, &b) in v.data().iter().enumerate() {
                let base = (o * n + c) * inner;
                out[base..base + inner].iter_mut().for_each(|x| *x += b);
            }
        }
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone(), v.clone()], move |g, needs| {
            let gv = needs[1].then(|| {
                let mut acc = vec![0f64; n];
                for o in 0..outer {
                    for (c, a) in acc.iter_mut().enumerate() {
                        let base = (o * n + c) * inner;
                        *a += g[base..base + inner].iter().map(|&x| x as f64).sum::<f64>();
                    }
                }
                acc.into_iter().map(|x| x as f32).collect()
            });
            vec![needs[0].then(|| g.to_vec()), gv]
        })
    }

    /// Multiplies by `v` (shape `[shape[axis]]`) broadcast along every other axis.
    pub fn mul_along(&self, v: &Tensor, axis: usize) -> Tensor {
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        assert_eq!(v.shape(), &[n], "mul_along: vector shape {:?} vs axis extent {n}", v.shape());
        let mut out = self.to_vec();
        for o in 0..outer {
            for (c, &s) in v.data().iter().enumerate() {
                let base = (o * n + c) * inner;
                out[base..base + inner].iter_mut().for_each(|x| *x *= s);
            }
        }
        let (x, vc) = (self.clone(), v.clone());
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone(), v.clone()], move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = g.to_vec();
                for o in 0..outer {
                    for (c, &s) in vc.data().iter().enumerate() {
                        let base = (o * n + c) * inner;
                        gx[base..base + inner].iter_mut().for_each(|x| *x *= s);
                    }
                }
                gx
            });
            let gv = needs[1].then(|| {
                let mut acc = vec![0f64; n];
                let xd = x.data();
                for o in 0..outer {
                    for (c, a) in acc.iter_mut().enumerate() {
                        let base = (o * n + c) * inner;
                        *a += g[base..base + inner]
                            .iter()
                            .zip(&xd[base..base + inner])
                            .map(|(&g, &x)| (g * x) as f64)
                            .sum::<f64>();
                    }
                }
                acc.into_iter().map(|x| x as f32).collect()
            });
            vec![gx, gv]
        })
    }

    pub fn scale(&self, s: f32) -> Tensor {
        let out = self.data().iter().map(|v| v * s).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g, _| {
            vec![Some(g.iter().map(|v| v * s).collect())]
        })
    }

    pub fn add_scalar(&self, s: f32) -> Tensor {
        let out = self.data().iter().map(|v| v + s).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], |g, _| vec![Some(g.to_vec())])
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        unary(self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f32) -> Tensor {
        unary(
            self,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, stable_sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&self) -> Tensor {
        unary(self, f32::exp, |_, y| y)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        const K: f32 = 0.797_884_6; // sqrt(2/pi)
        const C: f32 = 0.044_715;
        unary(
            self,
            |x| 0.5 * x * (1.0 + (K * (x + C * x * x * x)).tanh()),
            |x, _| {
                let t = (K * (x + C * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * K * (1.0 + 3.0 * C * x * x)
            },
        )
    }

    /// Sum of all elements as a `[1]` tensor (f64 accumulation).
    pub fn sum_all(&self) -> Tensor {
        let s = self.data().iter().map(|&v| v as f64).sum::<f64>() as f32;
        let n = self.numel();
        Tensor::from_op(vec![1], vec![s], vec![self.clone()], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f32;
        self.sum_all().scale(1.0 / n)
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Tensor {
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        let src = self.data();
        let mut acc = vec![0f64; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for (a, &v) in acc[o * inner..(o + 1) * inner].iter_mut().zip(&src[base..base + inner]) {
                    *a += v as f64;
                }
            }
        }
        let out = acc.into_iter().map(|v| v as f32).collect();
        Tensor::from_op(shape, out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0f32; outer * n * inner];
            for o in 0..outer {
                for k in 0..n {
                    let base = (o * n + k) * inner;
                    gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn mean_axis(&self, axis: usize) -> Tensor {
        let n = self.dim(axis) as f32;
        self.sum_axis(axis).scale(1.0 / n)
    }

    /// Maximum over `axis`, removing it. The gradient goes to the first
    /// arg-max element of each reduced fibre.
    pub fn max_axis(&self, axis: usize) -> Tensor {
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        assert!(n > 0, "max_axis over empty axis {axis} of shape {:?}", self.shape());
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        let src = self.data();
        let mut out = vec![0f32; outer * inner];
        let mut arg = vec![0u32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = src[o * n * inner + i];
                let mut best_k = 0;
                for k in 1..n {
                    let v = src[(o * n + k) * inner + i];
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                out[o * inner + i] = best;
                arg[o * inner + i] = best_k as u32;
            }
        }
        Tensor::from_op(shape, out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0f32; outer * n * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let k = arg[o * inner + i] as usize;
                    gx[(o * n + k) * inner + i] = g[o * inner + i];
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.numel(),
            "reshape {:?} -> {:?} changes element count",
            self.shape(),
            shape
        );
        Tensor::from_op(shape.to_vec(), self.to_vec(), vec![self.clone()], |g, _| vec![Some(g.to_vec())])
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Tensor {
        let rank = self.rank();
        assert_eq!(perm.len(), rank, "permute: {perm:?} for rank {rank}");
        let mut seen = vec![false; rank];
        for &p in perm {
            assert!(p < rank && !seen[p], "permute: invalid permutation {perm:?}");
            seen[p] = true;
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let out = permute_data(self.data(), &in_shape, perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_shape_c = out_shape.clone();
        Tensor::from_op(out_shape, out, vec![self.clone()], move |g, _| {
            vec![Some(permute_data(g, &out_shape_c, &inverse))]
        })
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        assert!(start + len <= n, "narrow {start}+{len} exceeds extent {n} on axis {axis}");
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        Tensor::from_op(shape, out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0f32; outer * n * inner];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.rank(), first.len(), "concat: rank mismatch");
            for (d, (&a, &b)) in p.shape().iter().zip(first).enumerate() {
                assert!(d == axis || a == b, "concat: extent mismatch {:?} vs {:?} on axis {d}", p.shape(), first);
            }
        }
        let (outer, _, inner) = split_at_axis(first, axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = extents.iter().sum();
        let mut shape = first.to_vec();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                out.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        Tensor::from_op(shape, out, parts.to_vec(), move |g, needs| {
            let mut grads: Vec<Option<Vec<f32>>> = needs
                .iter()
                .zip(&extents)
                .map(|(&need, &e)| need.then(|| Vec::with_capacity(outer * e * inner)))
                .collect();
            for o in 0..outer {
                let mut offset = o * total * inner;
                for (gp, &e) in grads.iter_mut().zip(&extents) {
                    if let Some(gp) = gp {
                        gp.extend_from_slice(&g[offset..offset + e * inner]);
                    }
                    offset += e * inner;
                }
            }
            grads
        })
    }
}

pub(crate) fn stable_sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn permute_data(src: &[f32], in_shape: &[usize], perm: &[usize]) -> Vec<f32> {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    // Odometer over output indices; the last axis is walked in a tight loop.
    let last = rank - 1;
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    loop {
        let s = strides[last];
        for k in 0..out_shape[last] {
            out.push(src[offset + k * s]);
        }
        let mut axis = last;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            offset += strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            offset -= strides[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_arithmetic() {
        let x = Tensor::from_vec(&[2, 3, 4], (0..24).map(|v| v as f32).collect());
        let y = x.permute(&[2, 0, 1]);
        assert_eq!(y.shape(), &[4, 2, 3]);
        for a in 0..4 {
            for b in 0..2 {
                for c in 0..3 {
                    assert_eq!(y.data()[(a * 2 + b) * 3 + c], x.data()[(b * 3 + c) * 4 + a]);
                }
            }
        }
    }

    #[test]
    fn narrow_then_concat_is_identity() {
        let x = Tensor::from_vec(&[2, 5, 3], (0..30).map(|v| v as f32).collect());
        let parts = [x.narrow(1, 0, 2), x.narrow(1, 2, 3)];
        assert_eq!(Tensor::concat(&parts, 1).data(), x.data());
    }

    #[test]
    fn max_axis_routes_gradient_to_first_argmax() {
        let x = Tensor::param(&[1, 3], vec![2.0, 5.0, 5.0]);
        let g = x.max_axis(1).sum_all().backward();
        assert_eq!(g.get(&x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn add_along_bias_gradient_sums_fibres() {
        let x = Tensor::param(&[2, 3, 2], vec![0.0; 12]);
        let b = Tensor::param(&[3], vec![1.0, 2.0, 3.0]);
        let y = x.add_along(&b, 1);
        assert_eq!(&y.data()[..6], &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let g = y.sum_all().backward();
        assert_eq!(g.get(&b).unwrap(), &[4.0, 4.0, 4.0]);
    }
}
