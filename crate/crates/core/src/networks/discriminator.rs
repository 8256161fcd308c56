use dico_autograd::nn::join;
use dico_autograd::{Conv3d, ConvGeometry, Linear, Module, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DicoError, Result};
use crate::volume::Projection2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub widths: Vec<usize>,
    pub slope: f32,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            widths: vec![8, 16, 32, 64, 64],
            slope: 0.2,
        }
    }
}

/// 2D CNN scoring `(B, 2, H, W)` image/mask projection pairs; one logit
/// per sample.
#[derive(Debug, Clone)]
pub struct Discriminator2D {
    convs: Vec<Conv3d>,
    out: Linear,
    slope: f32,
}

impl Discriminator2D {
    pub fn new(config: &DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) {
            return Err(DicoError::Config(vec![
                "discriminator.widths must be a non-empty list of positive widths".into(),
            ]));
        }
        let geo = ConvGeometry::new([3, 3, 1], [2, 2, 1], [1, 1, 0]);
        let mut cin = 2;
        let mut convs = Vec::new();
        for &w in &config.widths {
            convs.push(Conv3d::new(rng, cin, w, geo, true));
            cin = w;
        }
        Ok(Discriminator2D {
            convs,
            out: Linear::new(rng, cin, 1),
            slope: config.slope,
        })
    }

    /// Logits `[B, 1]`.
    pub fn forward(&self, fused: &Tensor) -> Result<Tensor> {
        let s = fused.shape();
        if s.len() != 4 || s[1] != 2 {
            return Err(DicoError::Shape(format!(
                "discriminator expects (B, 2, H, W) input, got {s:?}"
            )));
        }
        let mut h = fused.reshape(&[s[0], 2, s[2], s[3], 1]);
        for c in &self.convs {
            h = c.forward(&h).leaky_relu(self.slope);
        }
        let (b, c) = (h.dim(0), h.dim(1));
        let spatial = h.numel() / (b * c);
        let pooled = h.reshape(&[b, c, spatial]).mean_axis(2);
        Ok(self.out.forward(&pooled))
    }
}

impl Module for Discriminator2D {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.convs.visit(&join(prefix, "convs"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.convs.visit_mut(&join(prefix, "convs"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Channel-wise concatenation of an image projection and a mask projection,
/// image first. A multi-class mask projection contributes its foreground
/// channel (index 1).
pub fn fuse_for_discriminator(image: &Projection2D, mask: &Projection2D) -> Result<Tensor> {
    let [bi, ci, hi, wi] = image.shape();
    let [bm, cm, hm, wm] = mask.shape();
    if ci != 1 {
        return Err(DicoError::Shape(format!("image projection must have 1 channel, got {ci}")));
    }
    if (bi, hi, wi) != (bm, hm, wm) {
        return Err(DicoError::Shape(format!(
            "image projection {:?} and mask projection {:?} disagree",
            image.shape(),
            mask.shape()
        )));
    }
    let m = if cm == 1 { mask.tensor().clone() } else { mask.tensor().narrow(1, 1, 1) };
    Ok(Tensor::concat(&[image.tensor().clone(), m], 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::mip_project;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scores_one_logit_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Discriminator2D::new(&DiscriminatorConfig::default(), &mut rng).unwrap();
        let y = d.forward(&Tensor::full(&[3, 2, 32, 32], 0.3)).unwrap();
        assert_eq!(y.shape(), &[3, 1]);
        assert!(d.forward(&Tensor::zeros(&[3, 3, 32, 32])).is_err());
    }

    #[test]
    fn fusion_puts_image_first_and_takes_foreground() {
        let img = mip_project(&Tensor::full(&[1, 1, 2, 2, 2], 7.0)).unwrap();
        let probs = Tensor::from_vec(&[1, 2, 2, 2, 1], vec![0.9, 0.8, 0.7, 0.6, 0.1, 0.2, 0.3, 0.4]);
        let mask = mip_project(&probs).unwrap();
        let img2 = mip_project(&Tensor::full(&[1, 1, 2, 2, 1], 7.0)).unwrap();
        assert!(fuse_for_discriminator(&img, &mask).is_ok());
        let f = fuse_for_discriminator(&img2, &mask).unwrap();
        assert_eq!(f.shape(), &[1, 2, 2, 2]);
        assert_eq!(f.data(), &[7.0, 7.0, 7.0, 7.0, 0.1, 0.2, 0.3, 0.4]);
    }
}
