use dico_autograd::nn::join;
use dico_autograd::{Conv3d, ConvGeometry, Module, Tensor};
use rand::Rng;

use super::{act, SegBackbone, SegmentationNet};
use crate::error::Result;
use crate::volume::{decompose_views, recompose_views};

/// Runs an inner backbone on one global and `n1*n2*n3` local views, then
/// merges the recomposed pre-head features.
#[derive(Debug, Clone)]
pub struct MultiViewWrapper {
    inner: SegBackbone,
    factors: [usize; 3],
    smooth: [Conv3d; 2],
    fuse: [Conv3d; 2],
    head: Conv3d,
}

impl MultiViewWrapper {
    pub fn new(inner: SegBackbone, factors: [usize; 3], rng: &mut impl Rng) -> Self {
        let f = inner.feature_width();
        let k = inner.num_classes();
        let g3 = ConvGeometry::cube(3, 1, 1);
        MultiViewWrapper {
            smooth: [Conv3d::new(rng, f, f, g3, true), Conv3d::new(rng, f, f, g3, true)],
            fuse: [Conv3d::new(rng, 2 * f, f, g3, true), Conv3d::new(rng, f, f, g3, true)],
            head: Conv3d::new(rng, f, k, ConvGeometry::cube(1, 1, 0), true),
            inner,
            factors,
        }
    }

    pub fn inner(&self) -> &SegBackbone {
        &self.inner
    }

    pub fn factors(&self) -> [usize; 3] {
        self.factors
    }

    /// Sets the smoothing and fusion convolutions to pass the local features
    /// through unchanged (up to the activation).
    pub fn reset_to_identity(&mut self) {
        let f = self.inner.feature_width();
        let g3 = ConvGeometry::cube(3, 1, 1);
        self.smooth = [Conv3d::identity(f, g3), Conv3d::identity(f, g3)];
        let mut w = vec![0f32; f * 2 * f * 27];
        for c in 0..f {
            w[(c * 2 * f + c) * 27 + 13] = 1.0;
        }
        self.fuse = [
            Conv3d {
                weight: Tensor::param(&[f, 2 * f, 3, 3, 3], w),
                bias: Some(Tensor::param(&[f], vec![0.0; f])),
                geometry: g3,
            },
            Conv3d::identity(f, g3),
        ];
    }

    /// Inner-network features recomposed to full size: `(global, locals)`.
    pub fn view_features(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let views = decompose_views(x, self.factors)?;
        let feats = self.inner.features(views.tensor())?;
        recompose_views(&views.with_data(feats)?)
    }

    /// Merges recomposed features into logits.
    pub fn merge(&self, global: &Tensor, locals: &Tensor) -> Tensor {
        let l = act(&self.smooth[0].forward(locals));
        let l = act(&self.smooth[1].forward(&l));
        let h = act(&self.fuse[0].forward(&Tensor::concat(&[l, global.clone()], 1)));
        let h = act(&self.fuse[1].forward(&h));
        self.head.forward(&h)
    }
}

impl SegmentationNet for MultiViewWrapper {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (global, locals) = self.view_features(x)?;
        Ok(self.merge(&global, &locals))
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
}

impl Module for MultiViewWrapper {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.inner.visit(&join(prefix, "inner"), f);
        for (i, c) in self.smooth.iter().enumerate() {
            c.visit(&join(prefix, &format!("smooth.{i}")), f);
        }
        for (i, c) in self.fuse.iter().enumerate() {
            c.visit(&join(prefix, &format!("fuse.{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.inner.visit_mut(&join(prefix, "inner"), f);
        for (i, c) in self.smooth.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("smooth.{i}")), f);
        }
        for (i, c) in self.fuse.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("fuse.{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
