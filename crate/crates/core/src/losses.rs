//! Training objectives.

use dico_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{DicoError, Result};
use crate::volume::{LabelMask, ProbMap};

pub const DICE_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Dice weight.
    pub alpha: f32,
    /// Cross-entropy weight.
    pub beta: f32,
    pub lambda_adv: f32,
    pub lambda_u: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.5,
            beta: 0.5,
            lambda_adv: 1.0,
            lambda_u: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_adv", self.lambda_adv),
            ("lambda_u", self.lambda_u),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("loss.{name} must be a finite value >= 0 (got {v})"));
            }
        }
        if self.alpha + self.beta <= 0.0 {
            errs.push("loss.alpha + loss.beta must be positive".into());
        }
        errs
    }
}

/// How the teacher's prediction becomes the student's target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PseudoLabelMode {
    /// Dice against the soft probabilities, cross-entropy against the argmax.
    #[default]
    SoftDiceHardCe,
    /// Both terms against the argmax.
    Hard,
    /// Both terms against the soft probabilities.
    Soft,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub l1_sup: f32,
    pub l2_sup: f32,
    pub l_unsup: f32,
    pub l_adv: f32,
    pub l_disc: f32,
    pub l_total: f32,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|(_, v)| v.is_finite())
    }

    pub fn fields(&self) -> [(&'static str, f32); 6] {
        [
            ("l1_sup", self.l1_sup),
            ("l2_sup", self.l2_sup),
            ("l_unsup", self.l_unsup),
            ("l_adv", self.l_adv),
            ("l_disc", self.l_disc),
            ("l_total", self.l_total),
        ]
    }
}

fn same_grid(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a.len() != b.len() || a[0] != b[0] || a[2..] != b[2..] {
        return Err(DicoError::Shape(format!("{what}: grids {a:?} and {b:?} do not match")));
    }
    Ok(())
}

/// Soft Dice loss between probabilities and a (soft or one-hot) target of
/// the same `(B, K, ...)` shape, averaged over the foreground channels.
pub fn soft_dice(probs: &Tensor, target: &Tensor) -> Result<Tensor> {
    if probs.shape() != target.shape() {
        return Err(DicoError::Shape(format!(
            "dice: prediction {:?} and target {:?} differ",
            probs.shape(),
            target.shape()
        )));
    }
    let k = probs.dim(1);
    if k < 2 {
        return Err(DicoError::Shape("dice needs at least 2 classes".into()));
    }
    let mut terms = Vec::with_capacity(k - 1);
    for c in 1..k {
        let p = probs.narrow(1, c, 1);
        let t = target.narrow(1, c, 1);
        let inter = p.mul(&t).sum_all().scale(2.0).add_scalar(DICE_EPS);
        let denom = p.sum_all().add(&t.sum_all()).add_scalar(DICE_EPS);
        terms.push(inter.div(&denom).neg().add_scalar(1.0));
    }
    let n = terms.len() as f32;
    Ok(terms
        .into_iter()
        .reduce(|a, b| a.add(&b))
        .expect("k >= 2")
        .scale(1.0 / n))
}

/// Mean over voxels of `-sum_k target_k * log softmax(logits)_k`.
pub fn soft_cross_entropy(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    if logits.shape() != target.shape() {
        return Err(DicoError::Shape(format!(
            "cross-entropy: logits {:?} and target {:?} differ",
            logits.shape(),
            target.shape()
        )));
    }
    Ok(logits.log_softmax(1).mul(target).sum_axis(1).mean_all().neg())
}

pub fn dice_loss(pred: &ProbMap, target: &LabelMask) -> Result<Tensor> {
    same_grid(&pred.shape(), &target.shape(), "dice")?;
    soft_dice(pred.tensor(), &target.one_hot(pred.classes()))
}

pub fn ce_loss(logits: &Tensor, target: &LabelMask) -> Result<Tensor> {
    same_grid(logits.shape(), &target.shape(), "cross-entropy")?;
    soft_cross_entropy(logits, &target.one_hot(logits.dim(1)))
}

/// `alpha * dice + beta * ce` against a hard label.
pub fn seg_loss(logits: &Tensor, target: &LabelMask, w: &LossWeights) -> Result<Tensor> {
    same_grid(logits.shape(), &target.shape(), "segmentation loss")?;
    let onehot = target.one_hot(logits.dim(1));
    combine(logits, &onehot, &onehot, w)
}

fn combine(logits: &Tensor, dice_target: &Tensor, ce_target: &Tensor, w: &LossWeights) -> Result<Tensor> {
    let dice = soft_dice(&logits.softmax(1), dice_target)?;
    let ce = soft_cross_entropy(logits, ce_target)?;
    Ok(dice.scale(w.alpha).add(&ce.scale(w.beta)))
}

/// One-hot encoding of the per-voxel argmax over axis 1; ties go to the
/// lower class index.
pub fn argmax_one_hot(probs: &Tensor) -> Tensor {
    let s = probs.shape();
    let k = s[1];
    let inner: usize = s[2..].iter().product();
    let d = probs.data();
    let mut out = vec![0f32; d.len()];
    for b in 0..s[0] {
        let base = b * k * inner;
        for i in 0..inner {
            let mut best = 0;
            for c in 1..k {
                if d[base + c * inner + i] > d[base + best * inner + i] {
                    best = c;
                }
            }
            out[base + best * inner + i] = 1.0;
        }
    }
    Tensor::from_vec(s, out)
}

/// Collaboration loss of a student's logits against the teacher's
/// probabilities. The teacher side is detached here, so no gradient can
/// reach the teacher through this term.
pub fn unsupervised_loss(
    student_logits: &Tensor,
    teacher_probs: &Tensor,
    w: &LossWeights,
    mode: PseudoLabelMode,
) -> Result<Tensor> {
    let soft = teacher_probs.detach();
    let hard = argmax_one_hot(&soft);
    match mode {
        PseudoLabelMode::SoftDiceHardCe => combine(student_logits, &soft, &hard, w),
        PseudoLabelMode::Hard => combine(student_logits, &hard, &hard, w),
        PseudoLabelMode::Soft => combine(student_logits, &soft, &soft, w),
    }
}

/// `BCE(real, 1) + BCE(fake1, 0) + BCE(fake2, 0)`, each a batch mean.
pub fn discriminator_loss(d_real: &Tensor, d_fake1: &Tensor, d_fake2: &Tensor) -> Tensor {
    d_real
        .bce_with_logits(1.0)
        .add(&d_fake1.bce_with_logits(0.0))
        .add(&d_fake2.bce_with_logits(0.0))
}

/// `BCE(fake1, 1) + BCE(fake2, 1)`. The logits must come from a frozen
/// discriminator.
pub fn adversarial_loss(d_fake1: &Tensor, d_fake2: &Tensor) -> Tensor {
    d_fake1.bce_with_logits(1.0).add(&d_fake2.bce_with_logits(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_hand_example() {
        let pred = ProbMap::new(Tensor::from_vec(&[1, 2, 2, 2, 1], vec![0., 0., 1., 1., 1., 1., 0., 0.])).unwrap();
        let target = LabelMask::new([1, 1, 2, 2, 1], vec![1, 0, 1, 0]).unwrap();
        let v = dice_loss(&pred, &target).unwrap().item();
        let expected = 1.0 - (2.0 + DICE_EPS) / (4.0 + DICE_EPS);
        assert!((v - expected).abs() < 1e-6);
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let target = LabelMask::new([1, 1, 2, 1, 1], vec![1, 0]).unwrap();
        let v = ce_loss(&Tensor::zeros(&[1, 2, 2, 1, 1]), &target).unwrap().item();
        assert!((v - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn discriminator_and_adversarial_at_zero_logits() {
        let z = Tensor::zeros(&[4, 1]);
        assert!((discriminator_loss(&z, &z, &z).item() - 3.0 * std::f32::consts::LN_2).abs() < 1e-5);
        assert!((adversarial_loss(&z, &z).item() - 2.0 * std::f32::consts::LN_2).abs() < 1e-5);
    }

    #[test]
    fn argmax_ties_go_to_background() {
        let p = Tensor::from_vec(&[1, 2, 2], vec![0.5, 0.2, 0.5, 0.8]);
        assert_eq!(argmax_one_hot(&p).data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn grid_mismatch_is_a_shape_error() {
        let target = LabelMask::zeros([1, 1, 2, 2, 2]);
        assert!(ce_loss(&Tensor::zeros(&[1, 2, 2, 2, 1]), &target).is_err());
    }
}
