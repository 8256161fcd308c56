//! The training loop: role assignment, gradient routing, schedule and
//! baselines.

mod checkpoint;
mod model;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use dico_autograd::{ema_update, frozen, AdamW, AdamWConfig, Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_crop, Case, CropMode, Dataset};
use crate::error::{DicoError, Result};
use crate::inference::{final_prediction, sliding_window_predict, SlidingWindowConfig};
use crate::losses::{
    adversarial_loss, discriminator_loss, seg_loss, unsupervised_loss, LossReport, LossWeights, PseudoLabelMode,
};
use crate::metrics::dsc;
use crate::networks::{fuse_for_discriminator, SegmentationNet};
use crate::volume::{mip_project, LabelMask};

pub use checkpoint::{read_manifest as read_checkpoint_manifest, CheckpointManifest, RngState};
pub use model::{DicoModel, ModelConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    M1,
    M2,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::M1 => Role::M2,
            Role::M2 => Role::M1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::M1 => "m1",
            Role::M2 => "m2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoleAssignment {
    pub teacher: Role,
    pub l1_sup: f32,
    pub l2_sup: f32,
}

impl RoleAssignment {
    pub fn student(&self) -> Role {
        self.teacher.other()
    }
}

/// The network with the lower supervised loss teaches; M1 wins ties.
pub fn assign_roles(l1_sup: f32, l2_sup: f32) -> RoleAssignment {
    RoleAssignment {
        teacher: if l1_sup <= l2_sup { Role::M1 } else { Role::M2 },
        l1_sup,
        l2_sup,
    }
}

/// `lr_base * (1 - t/T)^gamma`, and 0 past `T`.
pub fn lr_schedule(t: u64, total: u64, lr_base: f64, gamma: f64) -> f64 {
    if t >= total {
        return 0.0;
    }
    lr_base * (1.0 - t as f64 / total as f64).powf(gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = AdamWConfig::default();
        OptimizerConfig {
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            weight_decay: d.weight_decay,
        }
    }
}

impl From<OptimizerConfig> for AdamWConfig {
    fn from(c: OptimizerConfig) -> Self {
        AdamWConfig {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            weight_decay: c.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iterations: u64,
    pub lr_base: f64,
    pub gamma: f64,
    /// Samples per iteration, half labeled and half unlabeled.
    pub batch_size: usize,
    pub crop: [usize; 3],
    pub crop_mode: CropMode,
    pub seed: u64,
    pub variant: Variant,
    pub pseudo_label: PseudoLabelMode,
    /// EMA decay of the mean-teacher baseline.
    pub ema_decay: f32,
    /// First iteration at which the discriminator is updated.
    pub disc_start: u64,
    /// Discriminator learning rate relative to the generators'.
    pub disc_lr_factor: f64,
    /// Checkpoint interval in iterations (0: final checkpoint only).
    pub checkpoint_every: u64,
    /// Validation interval in iterations (0: never).
    pub validate_every: u64,
    pub optimizer: OptimizerConfig,
    /// Run extra backward passes per iteration that verify gradient routing.
    pub audit_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iterations: 40_000,
            lr_base: 1e-2,
            gamma: 0.9,
            batch_size: 2,
            crop: [96, 96, 96],
            crop_mode: CropMode::Center,
            seed: 0,
            variant: Variant::DicoCt,
            pseudo_label: PseudoLabelMode::SoftDiceHardCe,
            ema_decay: 0.99,
            disc_start: 0,
            disc_lr_factor: 1.0,
            checkpoint_every: 1000,
            validate_every: 0,
            optimizer: OptimizerConfig::default(),
            audit_gradients: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.total_iterations == 0 {
            errs.push("trainer.total_iterations must be >= 1".into());
        }
        if !(self.lr_base > 0.0 && self.lr_base.is_finite()) {
            errs.push(format!("trainer.lr_base must be positive (got {})", self.lr_base));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            errs.push(format!("trainer.gamma must be >= 0 (got {})", self.gamma));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            errs.push(format!("trainer.batch_size must be even and >= 2 (got {})", self.batch_size));
        }
        if self.crop.contains(&0) {
            errs.push(format!("trainer.crop must be positive (got {:?})", self.crop));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            errs.push(format!("trainer.ema_decay must be in [0, 1] (got {})", self.ema_decay));
        }
        if !(self.disc_lr_factor > 0.0 && self.disc_lr_factor.is_finite()) {
            errs.push(format!("trainer.disc_lr_factor must be positive (got {})", self.disc_lr_factor));
        }
        let o = &self.optimizer;
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0 && o.weight_decay >= 0.0) {
            errs.push("trainer.optimizer needs betas in [0, 1), eps > 0 and weight_decay >= 0".into());
        }
        errs
    }

    pub fn lr(&self, t: u64) -> f64 {
        lr_schedule(t, self.total_iterations, self.lr_base, self.gamma)
    }
}

/// One training batch: labeled crops with masks and unlabeled crops.
#[derive(Debug, Clone)]
pub struct Batch {
    pub labeled: Tensor,
    pub labels: LabelMask,
    pub unlabeled: Tensor,
}

/// Outcome of the optional gradient-routing audit. Every field should be
/// false.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GradientAudit {
    /// L^u reached the iteration's teacher.
    pub unsup_reached_teacher: bool,
    /// L^u failed to reach the student.
    pub unsup_missed_student: bool,
    /// L_adv reached the discriminator.
    pub adv_reached_discriminator: bool,
    /// L_d reached M1 or M2.
    pub disc_reached_generators: bool,
}

impl GradientAudit {
    pub fn clean(&self) -> bool {
        *self == GradientAudit::default()
    }
}

#[derive(Debug, Clone)]
pub struct IterationState {
    /// Zero-based index of the iteration just performed.
    pub iteration: u64,
    pub lr: f64,
    pub rng: RngState,
    /// Absent for the baselines, which have no role switch.
    pub roles: Option<RoleAssignment>,
    pub losses: LossReport,
    pub audit: Option<GradientAudit>,
}

impl IterationState {
    /// `key=value` log line.
    pub fn log_line(&self) -> String {
        let teacher = self.roles.map_or("none", |r| r.teacher.as_str());
        let mut s = format!("t={} lr={} teacher={teacher}", self.iteration, self.lr);
        for (k, v) in self.losses.fields() {
            let _ = write!(s, " {k}={v}");
        }
        s
    }
}

fn finite(v: &Tensor, term: &'static str, iteration: u64) -> Result<f32> {
    let x = v.item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(DicoError::NonFinite { term, iteration })
    }
}

/// One step over the DiCo objective. Returns the loss report and, when
/// `audit` is set, the gradient-routing audit.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut DicoModel,
    opt_g: &mut AdamW,
    opt_d: &mut AdamW,
    batch: &Batch,
    cfg: &TrainConfig,
    w: &LossWeights,
    t: u64,
    audit: bool,
) -> Result<(RoleAssignment, LossReport, Option<GradientAudit>)> {
    let lr = cfg.lr(t) as f32;
    let nl = batch.labeled.dim(0);
    let nu = batch.unlabeled.dim(0);
    let x = Tensor::concat(&[batch.labeled.clone(), batch.unlabeled.clone()], 0);
    let o1 = model.m1.forward(&x)?;
    let o2 = model.m2.forward(&x)?;
    let (o1l, o1u) = (o1.narrow(0, 0, nl), o1.narrow(0, nl, nu));
    let (o2l, o2u) = (o2.narrow(0, 0, nl), o2.narrow(0, nl, nu));

    let l1 = seg_loss(&o1l, &batch.labels, w)?;
    let l2 = seg_loss(&o2l, &batch.labels, w)?;
    let roles = assign_roles(finite(&l1, "l1_sup", t)?, finite(&l2, "l2_sup", t)?);
    let (teacher_u, student_u) = match roles.teacher {
        Role::M1 => (&o1u, &o2u),
        Role::M2 => (&o2u, &o1u),
    };
    let l_u = unsupervised_loss(student_u, &teacher_u.softmax(1), w, cfg.pseudo_label)?;

    let image_u = mip_project(&batch.unlabeled)?;
    let real = fuse_for_discriminator(&mip_project(&batch.labeled)?, &mip_project(&batch.labels.to_tensor())?)?;
    let fake1 = fuse_for_discriminator(&image_u, &mip_project(&o1u.softmax(1))?)?;
    let fake2 = fuse_for_discriminator(&image_u, &mip_project(&o2u.softmax(1))?)?;
    let d_frozen = frozen(&model.discriminator);
    let l_adv = adversarial_loss(&d_frozen.forward(&fake1)?, &d_frozen.forward(&fake2)?);

    let total = l1
        .add(&l2)
        .add(&l_u.scale(w.lambda_u))
        .add(&l_adv.scale(w.lambda_adv));
    let mut report = LossReport {
        l1_sup: roles.l1_sup,
        l2_sup: roles.l2_sup,
        l_unsup: finite(&l_u, "l_unsup", t)?,
        l_adv: finite(&l_adv, "l_adv", t)?,
        l_total: finite(&total, "l_total", t)?,
        l_disc: 0.0,
    };

    let mut audit_report = audit.then(GradientAudit::default);
    if let Some(a) = audit_report.as_mut() {
        let g_u = l_u.backward();
        let (teacher, student): (&dyn Module, &dyn Module) = match roles.teacher {
            Role::M1 => (&model.m1, &model.m2),
            Role::M2 => (&model.m2, &model.m1),
        };
        a.unsup_reached_teacher = teacher.touched_by(&g_u);
        a.unsup_missed_student = student.max_abs_grad(&g_u) == 0.0;
        let g_adv = l_adv.backward();
        a.adv_reached_discriminator = model.discriminator.touched_by(&g_adv) || d_frozen.touched_by(&g_adv);
    }
    let generators_before = audit.then(|| (model.m1.clone(), model.m2.clone()));

    let grads = total.backward();
    opt_g.step(&mut [&mut model.m1, &mut model.m2], &grads, lr);

    let l_d = discriminator_loss(
        &model.discriminator.forward(&real)?,
        &model.discriminator.forward(&fake1.detach())?,
        &model.discriminator.forward(&fake2.detach())?,
    );
    report.l_disc = finite(&l_d, "l_disc", t)?;
    if t >= cfg.disc_start {
        let g_d = l_d.backward();
        if let (Some(a), Some((m1, m2))) = (audit_report.as_mut(), &generators_before) {
            a.disc_reached_generators = m1.touched_by(&g_d) || m2.touched_by(&g_d);
        }
        opt_d.step(&mut [&mut model.discriminator], &g_d, lr * cfg.disc_lr_factor as f32);
    }
    Ok((roles, report, audit_report))
}

/// Mean-teacher step: supervised loss plus MSE consistency between the
/// student's and the EMA teacher's unlabeled softmax outputs, followed by
/// the EMA update.
pub fn train_step_mt_baseline(
    model: &mut DicoModel,
    opt: &mut AdamW,
    batch: &Batch,
    cfg: &TrainConfig,
    w: &LossWeights,
    t: u64,
) -> Result<LossReport> {
    let lr = cfg.lr(t) as f32;
    let nl = batch.labeled.dim(0);
    let nu = batch.unlabeled.dim(0);
    let x = Tensor::concat(&[batch.labeled.clone(), batch.unlabeled.clone()], 0);
    let o = model.m1.forward(&x)?;
    let l_sup = seg_loss(&o.narrow(0, 0, nl), &batch.labels, w)?;
    let ema = model
        .ema
        .as_ref()
        .ok_or_else(|| DicoError::Data("mean-teacher step needs an EMA teacher".into()))?;
    let target = ema.forward(&batch.unlabeled)?.softmax(1).detach();
    let diff = o.narrow(0, nl, nu).softmax(1).sub(&target);
    let cons = diff.mul(&diff).mean_all();
    let total = l_sup.add(&cons.scale(w.lambda_u));
    let report = LossReport {
        l1_sup: finite(&l_sup, "l1_sup", t)?,
        l_unsup: finite(&cons, "l_unsup", t)?,
        l_total: finite(&total, "l_total", t)?,
        ..LossReport::default()
    };
    let grads = total.backward();
    opt.step(&mut [&mut model.m1], &grads, lr);
    let teacher = model.ema.as_mut().expect("checked above");
    ema_update(teacher, &model.m1, cfg.ema_decay);
    Ok(report)
}

/// Supervised-only step on the labeled half of the batch.
pub fn train_step_supervised(
    model: &mut DicoModel,
    opt: &mut AdamW,
    batch: &Batch,
    cfg: &TrainConfig,
    w: &LossWeights,
    t: u64,
) -> Result<LossReport> {
    let lr = cfg.lr(t) as f32;
    let l = seg_loss(&model.m1.forward(&batch.labeled)?, &batch.labels, w)?;
    let v = finite(&l, "l1_sup", t)?;
    let grads = l.backward();
    opt.step(&mut [&mut model.m1], &grads, lr);
    Ok(LossReport {
        l1_sup: v,
        l_total: v,
        ..LossReport::default()
    })
}

/// Model, optimizers, sampling RNG and iteration counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model_config: ModelConfig,
    pub config: TrainConfig,
    pub weights: LossWeights,
    pub model: DicoModel,
    pub opt_g: AdamW,
    pub opt_d: AdamW,
    rng: ChaCha8Rng,
    iteration: u64,
}

impl Trainer {
    pub fn new(model_config: &ModelConfig, config: &TrainConfig, weights: &LossWeights) -> Result<Self> {
        let mut errs = config.validate();
        errs.extend(weights.validate());
        errs.extend(model_config.validate());
        let multiple = model_config.spatial_multiple(config.variant);
        if errs.is_empty() {
            for (a, name) in ["height", "width", "depth"].iter().enumerate() {
                if config.crop[a] % multiple[a] != 0 {
                    errs.push(format!(
                        "trainer.crop {name} {} must be a multiple of {} for variant {}",
                        config.crop[a], multiple[a], config.variant
                    ));
                }
            }
        }
        if !errs.is_empty() {
            return Err(DicoError::Config(errs));
        }
        let adam: AdamWConfig = config.optimizer.into();
        Ok(Trainer {
            model_config: model_config.clone(),
            config: config.clone(),
            weights: *weights,
            model: DicoModel::new(model_config, config.variant)?,
            opt_g: AdamW::new(adam),
            opt_d: AdamW::new(adam),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            iteration: 0,
        })
    }

    /// Number of completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.total_iterations
    }

    pub fn model_hash(&self) -> String {
        self.model_config.hash(self.config.variant)
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    fn pick<'a>(&mut self, cases: &'a [Case]) -> &'a Case {
        &cases[self.rng.gen_range(0..cases.len())]
    }

    /// Draws the next batch from `data`.
    pub fn sample_batch(&mut self, data: &Dataset) -> Result<Batch> {
        let half = self.config.batch_size / 2;
        if data.labeled.is_empty() {
            return Err(DicoError::Data("training needs at least one labeled case".into()));
        }
        let needs_unlabeled = self.config.variant != Variant::Supervised;
        if needs_unlabeled && data.unlabeled.is_empty() {
            return Err(DicoError::Data(format!(
                "variant {} needs at least one unlabeled case",
                self.config.variant
            )));
        }
        let (crop, mode) = (self.config.crop, self.config.crop_mode);
        let mut images = Vec::with_capacity(half);
        let mut masks = Vec::with_capacity(half);
        for _ in 0..half {
            let case = self.pick(&data.labeled);
            let label = case
                .label
                .as_ref()
                .ok_or_else(|| DicoError::Data(format!("labeled case `{}` has no label", case.id)))?;
            let (img, mask) = sample_crop(&case.image, Some(label), crop, mode, &mut self.rng);
            images.push(img.into_tensor());
            masks.push(mask.expect("label cropped"));
        }
        let mut unlabeled = Vec::with_capacity(half);
        if needs_unlabeled {
            for _ in 0..half {
                let case = self.pick(&data.unlabeled);
                let (img, _) = sample_crop(&case.image, None, crop, mode, &mut self.rng);
                unlabeled.push(img.into_tensor());
            }
        }
        Ok(Batch {
            labeled: Tensor::concat(&images, 0),
            labels: LabelMask::stack(&masks)?,
            unlabeled: if unlabeled.is_empty() {
                Tensor::zeros(&[0])
            } else {
                Tensor::concat(&unlabeled, 0)
            },
        })
    }

    /// Samples a batch and performs one iteration.
    pub fn step(&mut self, data: &Dataset) -> Result<IterationState> {
        let batch = self.sample_batch(data)?;
        self.step_on(&batch)
    }

    /// Performs one iteration on a given batch.
    pub fn step_on(&mut self, batch: &Batch) -> Result<IterationState> {
        let t = self.iteration;
        let (cfg, w) = (&self.config, &self.weights);
        let (roles, losses, audit) = match cfg.variant {
            Variant::MtBaseline => (None, train_step_mt_baseline(&mut self.model, &mut self.opt_g, batch, cfg, w, t)?, None),
            Variant::Supervised => (None, train_step_supervised(&mut self.model, &mut self.opt_g, batch, cfg, w, t)?, None),
            _ => {
                let (r, l, a) = train_step(
                    &mut self.model,
                    &mut self.opt_g,
                    &mut self.opt_d,
                    batch,
                    cfg,
                    w,
                    t,
                    cfg.audit_gradients,
                )?;
                (Some(r), l, a)
            }
        };
        self.iteration += 1;
        Ok(IterationState {
            iteration: t,
            lr: cfg.lr(t),
            rng: self.rng_state(),
            roles,
            losses,
            audit,
        })
    }

    /// M1 probabilities over `case`, optionally averaged with M2.
    pub fn predict(&self, case: &Case, window: &SlidingWindowConfig) -> Result<crate::volume::ProbMap> {
        predict_with(&self.model, case, window)
    }

    /// Mean validation DSC of M1 over `cases`.
    pub fn validate(&self, cases: &[Case], window: &SlidingWindowConfig) -> Result<f64> {
        mean_dsc(&self.model, cases, window)
    }
}

pub fn predict_with(model: &DicoModel, case: &Case, window: &SlidingWindowConfig) -> Result<crate::volume::ProbMap> {
    let p1 = sliding_window_predict(&model.m1, &case.image, window)?;
    if window.average_m2 && model.variant.is_dico() {
        let p2 = sliding_window_predict(&model.m2, &case.image, window)?;
        return crate::inference::average_probs(&p1, &p2);
    }
    Ok(p1)
}

pub fn mean_dsc(model: &DicoModel, cases: &[Case], window: &SlidingWindowConfig) -> Result<f64> {
    if cases.is_empty() {
        return Err(DicoError::Data("no cases to evaluate".into()));
    }
    let mut total = 0.0;
    for case in cases {
        let gt = case
            .label
            .as_ref()
            .ok_or_else(|| DicoError::Data(format!("case `{}` has no label", case.id)))?;
        total += dsc(&final_prediction(&predict_with(model, case, window)?), gt)?;
    }
    Ok(total / cases.len() as f64)
}

/// Where and how [`run_training`] writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Checkpoints go to `<out>/checkpoints/iter_NNNNNN`, validation lines
    /// to `<out>/val.log`.
    pub out_dir: Option<PathBuf>,
    /// Resolved configuration text, copied into every checkpoint.
    pub config_text: Option<String>,
    pub window: SlidingWindowConfig,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub iterations: u64,
    pub checkpoints: Vec<PathBuf>,
    /// `(completed iterations, mean DSC)` per validation round.
    pub validation: Vec<(u64, f64)>,
    pub teacher_counts: [u64; 2],
}

pub fn checkpoint_dir(out: &Path, iteration: u64) -> PathBuf {
    out.join("checkpoints").join(format!("iter_{iteration:06}"))
}

/// Trains until `total_iterations`, writing one log line per iteration to
/// `log`.
pub fn run_training(trainer: &mut Trainer, data: &Dataset, log: &mut dyn Write, opts: &RunOptions) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    let total = trainer.config.total_iterations;
    let mut val_log = match &opts.out_dir {
        Some(dir) if trainer.config.validate_every > 0 => {
            std::fs::create_dir_all(dir).map_err(|e| DicoError::io(dir, e))?;
            let path = dir.join("val.log");
            Some((
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| DicoError::io(&path, e))?,
                path,
            ))
        }
        _ => None,
    };
    while !trainer.is_finished() {
        let state = trainer.step(data)?;
        if let Some(r) = state.roles {
            summary.teacher_counts[(r.teacher == Role::M2) as usize] += 1;
        }
        writeln!(log, "{}", state.log_line()).map_err(|e| DicoError::io("<log>", e))?;
        let done = trainer.iteration();
        summary.iterations += 1;
        let every = trainer.config.checkpoint_every;
        if let Some(out) = &opts.out_dir {
            if done == total || (every > 0 && done % every == 0) {
                let dir = checkpoint_dir(out, done);
                trainer.save_checkpoint(&dir, opts.config_text.as_deref())?;
                summary.checkpoints.push(dir);
            }
        }
        let vevery = trainer.config.validate_every;
        if vevery > 0 && (done % vevery == 0 || done == total) && !data.val.is_empty() {
            let score = trainer.validate(&data.val, &opts.window)?;
            summary.validation.push((done, score));
            if let Some((f, path)) = val_log.as_mut() {
                writeln!(f, "t={done} val_dsc={score}").map_err(|e| DicoError::io(path.as_path(), e))?;
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_table() {
        assert_eq!(assign_roles(0.3, 0.5).teacher, Role::M1);
        assert_eq!(assign_roles(0.5, 0.3).teacher, Role::M2);
        assert_eq!(assign_roles(0.4, 0.4).teacher, Role::M1);
        assert_eq!(assign_roles(0.5, 0.3).student(), Role::M1);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(0, 100, 1e-2, 0.9), 1e-2);
        assert_eq!(lr_schedule(100, 100, 1e-2, 0.9), 0.0);
        assert_eq!(lr_schedule(150, 100, 1e-2, 0.9), 0.0);
    }

    #[test]
    fn log_line_is_key_value() {
        let s = IterationState {
            iteration: 3,
            lr: 0.5,
            rng: RngState::capture(&ChaCha8Rng::seed_from_u64(0)),
            roles: Some(assign_roles(0.1, 0.2)),
            losses: LossReport::default(),
            audit: None,
        };
        let line = s.log_line();
        assert!(line.starts_with("t=3 lr=0.5 teacher=m1 l1_sup=0"));
        assert!(line.split(' ').all(|kv| kv.split_once('=').is_some()));
    }
}
