//! Trainable networks: the two segmentation backbones behind one interface,
//! the multi-view wrapper and the projection discriminator.

mod conv;
mod discriminator;
mod multiview;
mod transformer;

use dico_autograd::{Conv3d, ConvGeometry, Module, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DicoError, Result};

pub use conv::ConvEncoderDecoder;
pub use discriminator::{fuse_for_discriminator, Discriminator2D, DiscriminatorConfig};
pub use multiview::MultiViewWrapper;
pub use transformer::TransformerEncoderDecoder;

pub(crate) fn act(x: &Tensor) -> Tensor {
    x.leaky_relu(0.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    Conv,
    Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub base_channels: usize,
    /// Encoder stages for the conv backbone; attention blocks for the
    /// transformer backbone.
    pub depth: usize,
    /// Transformer only: edge length of the cubic patches (a power of two).
    pub patch_size: usize,
    /// Transformer only.
    pub embed_dim: usize,
    /// Transformer only.
    pub heads: usize,
    pub num_classes: usize,
    pub in_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            kind: BackboneKind::Conv,
            base_channels: 8,
            depth: 4,
            patch_size: 8,
            embed_dim: 64,
            heads: 4,
            num_classes: 2,
            in_channels: 1,
        }
    }
}

impl BackboneConfig {
    pub fn conv() -> Self {
        Self::default()
    }

    pub fn transformer() -> Self {
        BackboneConfig {
            kind: BackboneKind::Transformer,
            depth: 4,
            ..Self::default()
        }
    }

    /// Every violated constraint, prefixed with `context`.
    pub fn validate(&self, context: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if self.depth < 2 {
            errs.push(format!("{context}.depth must be >= 2 (got {})", self.depth));
        }
        if self.base_channels < 4 {
            errs.push(format!("{context}.base_channels must be >= 4 (got {})", self.base_channels));
        }
        if self.num_classes < 2 {
            errs.push(format!("{context}.num_classes must be >= 2 (got {})", self.num_classes));
        }
        if self.in_channels == 0 {
            errs.push(format!("{context}.in_channels must be positive"));
        }
        if self.kind == BackboneKind::Transformer {
            if !self.patch_size.is_power_of_two() {
                errs.push(format!("{context}.patch_size must be a power of two (got {})", self.patch_size));
            }
            if self.heads == 0 || self.embed_dim % self.heads != 0 {
                errs.push(format!(
                    "{context}.embed_dim ({}) must be a positive multiple of heads ({})",
                    self.embed_dim, self.heads
                ));
            }
            if self.embed_dim < 6 {
                errs.push(format!("{context}.embed_dim must be at least 6 (got {})", self.embed_dim));
            }
        }
        errs
    }

    /// Spatial extents must be multiples of this value.
    pub fn spatial_multiple(&self) -> usize {
        match self.kind {
            BackboneKind::Conv => 1 << (self.depth - 1),
            BackboneKind::Transformer => self.patch_size,
        }
    }
}

/// A network mapping `(B, C, H, W, D)` volumes to `(B, K, H, W, D)` logits.
pub trait SegmentationNet: Module {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    fn num_classes(&self) -> usize;
}

#[derive(Debug, Clone)]
enum Body {
    Conv(ConvEncoderDecoder),
    Transformer(TransformerEncoderDecoder),
}

/// A backbone body plus a 1x1x1 segmentation head.
#[derive(Debug, Clone)]
pub struct SegBackbone {
    config: BackboneConfig,
    body: Body,
    head: Conv3d,
}

impl SegBackbone {
    pub fn new(config: &BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        let errs = config.validate("backbone");
        if !errs.is_empty() {
            return Err(DicoError::Config(errs));
        }
        let body = match config.kind {
            BackboneKind::Conv => Body::Conv(ConvEncoderDecoder::new(config, rng)),
            BackboneKind::Transformer => Body::Transformer(TransformerEncoderDecoder::new(config, rng)),
        };
        let head = Conv3d::new(rng, config.base_channels, config.num_classes, ConvGeometry::cube(1, 1, 0), true);
        Ok(SegBackbone {
            config: config.clone(),
            body,
            head,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Channel width of [`SegBackbone::features`].
    pub fn feature_width(&self) -> usize {
        self.config.base_channels
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 5 {
            return Err(DicoError::Shape(format!("backbone input must be rank 5, got {s:?}")));
        }
        if s[1] != self.config.in_channels {
            return Err(DicoError::Shape(format!(
                "backbone expects {} input channels, got {}",
                self.config.in_channels, s[1]
            )));
        }
        let m = self.config.spatial_multiple();
        for (name, &e) in ["height", "width", "depth"].iter().zip(&s[2..]) {
            if e % m != 0 {
                return Err(DicoError::Shape(format!("{name} extent {e} is not a multiple of {m}")));
            }
        }
        Ok(())
    }

    /// Pre-head feature map `(B, base_channels, H, W, D)`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(match &self.body {
            Body::Conv(b) => b.forward(x),
            Body::Transformer(b) => b.forward(x),
        })
    }
}

impl SegmentationNet for SegBackbone {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.head.forward(&self.features(x)?))
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }
}

impl Module for SegBackbone {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        match &self.body {
            Body::Conv(b) => b.visit(prefix, f),
            Body::Transformer(b) => b.visit(prefix, f),
        }
        self.head.visit(&dico_autograd::nn::join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match &mut self.body {
            Body::Conv(b) => b.visit_mut(prefix, f),
            Body::Transformer(b) => b.visit_mut(prefix, f),
        }
        self.head.visit_mut(&dico_autograd::nn::join(prefix, "head"), f);
    }
}

/// Occupant of a sub-network slot: a bare backbone or one wrapped with the
/// multi-view pipeline.
#[derive(Debug, Clone)]
pub enum Generator {
    Plain(SegBackbone),
    MultiView(MultiViewWrapper),
}

impl Generator {
    pub fn build(config: &BackboneConfig, multiview: Option<[usize; 3]>, rng: &mut impl Rng) -> Result<Self> {
        let inner = SegBackbone::new(config, rng)?;
        Ok(match multiview {
            Some(factors) => Generator::MultiView(MultiViewWrapper::new(inner, factors, rng)),
            None => Generator::Plain(inner),
        })
    }

    pub fn backbone(&self) -> &SegBackbone {
        match self {
            Generator::Plain(b) => b,
            Generator::MultiView(w) => w.inner(),
        }
    }
}

impl SegmentationNet for Generator {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Generator::Plain(b) => b.forward(x),
            Generator::MultiView(w) => w.forward(x),
        }
    }

    fn num_classes(&self) -> usize {
        self.backbone().num_classes()
    }
}

impl Module for Generator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        match self {
            Generator::Plain(b) => b.visit(prefix, f),
            Generator::MultiView(w) => w.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            Generator::Plain(b) => b.visit_mut(prefix, f),
            Generator::MultiView(w) => w.visit_mut(prefix, f),
        }
    }
}
