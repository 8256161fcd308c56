use dico_autograd::nn::join;
use dico_autograd::{Conv3d, ConvGeometry, ConvTranspose3d, Module, Tensor};
use rand::Rng;

use super::{act, BackboneConfig};

/// Stack of 3x3x3 convolutions with an identity shortcut.
#[derive(Debug, Clone)]
struct ResidualBlock {
    convs: Vec<Conv3d>,
}

impl ResidualBlock {
    fn new(rng: &mut impl Rng, width: usize, n: usize) -> Self {
        ResidualBlock {
            convs: (0..n)
                .map(|_| Conv3d::new(rng, width, width, ConvGeometry::cube(3, 1, 1), true))
                .collect(),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (last, rest) = self.convs.split_last().expect("non-empty block");
        let mut h = x.clone();
        for c in rest {
            h = act(&c.forward(&h));
        }
        act(&last.forward(&h).add(x))
    }
}

impl Module for ResidualBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.convs.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.convs.visit_mut(prefix, f);
    }
}

/// VNet-style encoder-decoder: residual stages, stride-2 convolutions down,
/// stride-2 transposed convolutions up, skip concatenation.
#[derive(Debug, Clone)]
pub struct ConvEncoderDecoder {
    stem: Conv3d,
    encoder: Vec<ResidualBlock>,
    down: Vec<Conv3d>,
    up: Vec<ConvTranspose3d>,
    merge: Vec<Conv3d>,
    decoder: Vec<ResidualBlock>,
}

impl ConvEncoderDecoder {
    pub fn new(cfg: &BackboneConfig, rng: &mut impl Rng) -> Self {
        let width = |s: usize| cfg.base_channels << s;
        // Full-resolution stages carry one conv, deeper ones two.
        let convs_at = |s: usize| if s == 0 { 1 } else { 2 };
        let stem = Conv3d::new(rng, cfg.in_channels, width(0), ConvGeometry::cube(3, 1, 1), true);
        let mut encoder = vec![ResidualBlock::new(rng, width(0), convs_at(0))];
        let mut down = Vec::new();
        for s in 1..cfg.depth {
            down.push(Conv3d::new(rng, width(s - 1), width(s), ConvGeometry::cube(2, 2, 0), true));
            encoder.push(ResidualBlock::new(rng, width(s), convs_at(s)));
        }
        let mut up = Vec::new();
        let mut merge = Vec::new();
        let mut decoder = Vec::new();
        for s in 0..cfg.depth - 1 {
            up.push(ConvTranspose3d::new(rng, width(s + 1), width(s), ConvGeometry::cube(2, 2, 0)));
            merge.push(Conv3d::new(rng, 2 * width(s), width(s), ConvGeometry::cube(3, 1, 1), true));
            decoder.push(ResidualBlock::new(rng, width(s), convs_at(s)));
        }
        ConvEncoderDecoder {
            stem,
            encoder,
            down,
            up,
            merge,
            decoder,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = self.encoder[0].forward(&act(&self.stem.forward(x)));
        let mut skips = vec![h.clone()];
        for (down, block) in self.down.iter().zip(&self.encoder[1..]) {
            h = block.forward(&act(&down.forward(&h)));
            skips.push(h.clone());
        }
        for s in (0..self.up.len()).rev() {
            let u = act(&self.up[s].forward(&h));
            let m = act(&self.merge[s].forward(&Tensor::concat(&[u, skips[s].clone()], 1)));
            h = self.decoder[s].forward(&m);
        }
        h
    }
}

impl Module for ConvEncoderDecoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.down.visit(&join(prefix, "down"), f);
        self.up.visit(&join(prefix, "up"), f);
        self.merge.visit(&join(prefix, "merge"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.down.visit_mut(&join(prefix, "down"), f);
        self.up.visit_mut(&join(prefix, "up"), f);
        self.merge.visit_mut(&join(prefix, "merge"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}
