//! Parameterised layers and the [`Module`] visitor trait.

use rand::Rng;

use crate::linalg::ConvGeometry;
use crate::tensor::{Gradients, Tensor};

/// Joins a parameter path segment onto a prefix (`"enc" + "conv"` → `"enc.conv"`).
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything that owns trainable tensors.
///
/// Visit order is part of the contract: optimizers and checkpoints address
/// parameters by their position in this order and by their dotted name.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn parameters(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.push(t.clone()));
        out
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    /// Replaces every parameter by a detached constant copy, so gradients
    /// cannot flow into this module.
    fn freeze_in_place(&mut self) {
        self.visit_mut("", &mut |_, t| *t = t.detach());
    }

    /// Turns every parameter back into a trainable leaf.
    fn unfreeze_in_place(&mut self) {
        self.visit_mut("", &mut |_, t| *t = Tensor::param(t.shape(), t.to_vec()));
    }

    /// True if any parameter received a gradient entry in `grads`.
    fn touched_by(&self, grads: &Gradients) -> bool {
        let mut any = false;
        self.visit("", &mut |_, t| any |= grads.contains(t));
        any
    }

    /// Largest absolute gradient entry over this module's parameters
    /// (0 when none were reached).
    fn max_abs_grad(&self, grads: &Gradients) -> f32 {
        let mut m = 0f32;
        self.visit("", &mut |_, t| {
            if let Some(g) = grads.get(t) {
                m = g.iter().fold(m, |acc, v| acc.max(v.abs()));
            }
        });
        m
    }
}

/// Returns a copy of `module` whose parameters are detached constants.
pub fn frozen<M: Module + Clone>(module: &M) -> M {
    let mut m = module.clone();
    m.freeze_in_place();
    m
}

fn uniform(rng: &mut impl Rng, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// 3D convolution layer. Two-dimensional convolutions use a unit kernel
/// along the last axis on `[N, C, H, W, 1]` inputs.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub geometry: ConvGeometry,
}

impl Conv3d {
    /// He-uniform initialisation, zero bias.
    pub fn new(rng: &mut impl Rng, cin: usize, cout: usize, geometry: ConvGeometry, bias: bool) -> Self {
        let fan_in = cin * geometry.kernel_volume();
        let bound = (6.0 / fan_in as f32).sqrt();
        let k = geometry.kernel;
        let weight = Tensor::param(&[cout, cin, k[0], k[1], k[2]], uniform(rng, cout * fan_in, bound));
        let bias = bias.then(|| Tensor::param(&[cout], vec![0.0; cout]));
        Conv3d { weight, bias, geometry }
    }

    /// Kernel that copies input channel `c` to output channel `c` (and zeros
    /// elsewhere); requires `cin == cout` and an odd kernel with "same" padding.
    pub fn identity(channels: usize, geometry: ConvGeometry) -> Self {
        let k = geometry.kernel;
        let kvol = geometry.kernel_volume();
        let centre = ((k[0] / 2) * k[1] + k[1] / 2) * k[2] + k[2] / 2;
        let mut w = vec![0f32; channels * channels * kvol];
        for c in 0..channels {
            w[(c * channels + c) * kvol + centre] = 1.0;
        }
        Conv3d {
            weight: Tensor::param(&[channels, channels, k[0], k[1], k[2]], w),
            bias: Some(Tensor::param(&[channels], vec![0.0; channels])),
            geometry,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.conv3d(&self.weight, self.bias.as_ref(), self.geometry)
    }
}

impl Module for Conv3d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose3d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub geometry: ConvGeometry,
}

impl ConvTranspose3d {
    pub fn new(rng: &mut impl Rng, cin: usize, cout: usize, geometry: ConvGeometry) -> Self {
        let k = geometry.kernel;
        // Each output voxel of a stride==kernel transposed conv sees cin inputs.
        let fan_in = cin * geometry.kernel_volume() / geometry.stride.iter().product::<usize>().max(1);
        let bound = (6.0 / fan_in.max(1) as f32).sqrt();
        let weight = Tensor::param(
            &[cin, cout, k[0], k[1], k[2]],
            uniform(rng, cin * cout * geometry.kernel_volume(), bound),
        );
        ConvTranspose3d {
            weight,
            bias: Tensor::param(&[cout], vec![0.0; cout]),
            geometry,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.conv_transpose3d(&self.weight, Some(&self.bias), self.geometry)
    }
}

impl Module for ConvTranspose3d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Affine map on the last axis: `[.., in] -> [.., out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    /// Stored as `[in, out]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, input: usize, output: usize) -> Self {
        let bound = (1.0 / input as f32).sqrt() * 3f32.sqrt();
        Linear {
            weight: Tensor::param(&[input, output], uniform(rng, input * output, bound)),
            bias: Tensor::param(&[output], vec![0.0; output]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let input = self.weight.dim(0);
        let output = self.weight.dim(1);
        let mut shape = x.shape().to_vec();
        assert_eq!(*shape.last().unwrap(), input, "linear: input width mismatch {:?}", x.shape());
        let rows = x.numel() / input;
        let y = x.reshape(&[rows, input]).matmul(&self.weight);
        let y = y.add_along(&self.bias, 1);
        *shape.last_mut().unwrap() = output;
        y.reshape(&shape)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        LayerNorm {
            gamma: Tensor::param(&[width], vec![1.0; width]),
            beta: Tensor::param(&[width], vec![0.0; width]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let last = x.rank() - 1;
        x.normalize_last(self.eps)
            .mul_along(&self.gamma, last)
            .add_along(&self.beta, last)
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}
