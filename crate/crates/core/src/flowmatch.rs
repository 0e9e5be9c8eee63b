//! Rectified-flow objective, training loop and Euler sampler.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dit::{drop_condition, ConditionDropout, Conditioning, Dit, ModelCheckpoint, ModelError, Stream};
use crate::geometry::{Box2D, BoxSequence};
use crate::metrics;
use crate::tensor::{AdamW, Scalar};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `x_t = (1 − t)·x0 + t·x1`.
pub fn interpolant(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
    if x0.len() != x1.len() {
        return Err(FlowError::ShapeMismatch(format!("x0 {} vs x1 {}", x0.len(), x1.len())));
    }
    Ok(x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

/// Regression target of the linear path, `x1 − x0` (independent of `t`).
pub fn target_velocity(x0: &[f64], x1: &[f64]) -> Result<Vec<f64>, FlowError> {
    if x0.len() != x1.len() {
        return Err(FlowError::ShapeMismatch(format!("x0 {} vs x1 {}", x0.len(), x1.len())));
    }
    Ok(x0.iter().zip(x1).map(|(a, b)| b - a).collect())
}

/// Anything that predicts a velocity for a batch of `frames×4` token blocks.
pub trait VelocityField {
    fn frames(&self) -> usize;
    /// `x_t` is `B·frames·4` values, `t` has one entry per batch item.
    fn velocity(&self, x_t: &[f64], t: &[f64], conds: &[Conditioning]) -> Result<Vec<f64>, FlowError>;
}

impl<F: Scalar> VelocityField for Dit<F> {
    fn frames(&self) -> usize {
        self.config().frames
    }

    fn velocity(&self, x_t: &[f64], t: &[f64], conds: &[Conditioning]) -> Result<Vec<f64>, FlowError> {
        Ok(self.predict(x_t, t, conds)?)
    }
}

fn standard_normal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Monte-Carlo flow-matching loss: one `x0 ~ N(0, I)` and `t ~ U(0, 1)` draw
/// per batch item, mean squared error over all token components.
pub fn loss<V: VelocityField>(
    field: &V,
    x1: &[f64],
    conds: &[Conditioning],
    rng: &mut impl Rng,
) -> Result<f64, FlowError> {
    let per = field.frames() * 4;
    if conds.is_empty() || x1.len() != conds.len() * per {
        return Err(FlowError::ShapeMismatch(format!(
            "{} target values for {} items of {per}",
            x1.len(),
            conds.len()
        )));
    }
    let x0 = standard_normal(rng, x1.len());
    let t: Vec<f64> = (0..conds.len()).map(|_| rng.random::<f64>()).collect();
    let mut x_t = Vec::with_capacity(x1.len());
    for (i, chunk) in x1.chunks(per).enumerate() {
        x_t.extend(interpolant(&x0[i * per..(i + 1) * per], chunk, t[i])?);
    }
    let v = field.velocity(&x_t, &t, conds)?;
    let target = target_velocity(&x0, x1)?;
    Ok(v.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x1.len() as f64)
}

/// One supervised pair: target tokens `x1` (`frames×4`) and its conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub x1: Vec<f64>,
    pub cond: Conditioning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation IoU every this many steps (0 disables).
    pub eval_every: usize,
    /// Number of validation samples scored at each evaluation.
    pub eval_samples: usize,
    /// Sampler steps used for validation IoU.
    pub eval_sample_steps: usize,
    pub dropout: ConditionDropout,
    pub schedule: LrSchedule,
}

/// Learning-rate schedule over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to zero at the last step.
    #[default]
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let s = (step.saturating_sub(1)) as f64 / total.max(1) as f64;
                0.5 * (1.0 + (std::f64::consts::PI * s).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            lr: 1.2e-4,
            weight_decay: 0.01,
            batch_size: 16,
            seed: 0,
            eval_every: 500,
            eval_samples: 32,
            eval_sample_steps: 28,
            dropout: ConditionDropout::default(),
            schedule: LrSchedule::default(),
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule (not practical on a CPU).
    pub fn full() -> Self {
        Self {
            steps: 180_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.steps == 0 {
            return Err(FlowError::InvalidConfig("steps must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(FlowError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(FlowError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(FlowError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        let d = &self.dropout;
        if [d.trajectories, d.context, d.reference].iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(FlowError::InvalidConfig("dropout probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub eval_iou: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub points: Vec<LossPoint>,
}

impl LossCurve {
    /// `step,loss,eval_iou` with an empty `eval_iou` cell between evaluations.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,eval_iou\n");
        for p in &self.points {
            let _ = match p.eval_iou {
                Some(v) => writeln!(out, "{},{:.8e},{:.6}", p.step, p.loss, v),
                None => writeln!(out, "{},{:.8e},", p.step, p.loss),
            };
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.loss)
    }

    /// Mean loss over consecutive windows of `window` steps.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        self.points
            .chunks(window.max(1))
            .map(|c| c.iter().map(|p| p.loss).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Batches drawn from successive seeded shuffles of the index set.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn apply_dropout(cond: &Conditioning, p: &ConditionDropout, rng: &mut ChaCha8Rng) -> Conditioning {
    let mut out = cond.clone();
    for (stream, prob) in [
        (Stream::Trajectories, p.trajectories),
        (Stream::Context, p.context),
        (Stream::Reference, p.reference),
    ] {
        // always consume a draw so the stream of random numbers does not
        // depend on which probabilities are zero
        let u: f64 = rng.random();
        if u < prob {
            out = drop_condition(stream, &out);
        }
    }
    out
}

/// Mean per-frame IoU of sampled predictions against the samples' targets.
pub fn validation_iou<V: VelocityField>(
    field: &V,
    samples: &[TrainSample],
    cfg: &SampleConfig,
) -> Result<f64, FlowError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let conds: Vec<Conditioning> = samples.iter().map(|s| s.cond.clone()).collect();
    let preds = sample_batch(field, &conds, cfg)?;
    let mut total = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        let gt = BoxSequence::from_flat(&s.x1);
        total += metrics::mean_iou(p, &gt).map_err(|e| FlowError::ShapeMismatch(e.to_string()))?;
    }
    Ok(total / samples.len() as f64)
}

/// AdamW training on the flow-matching loss. Deterministic for a fixed
/// `cfg.seed`; `on_step` sees every loss point as it is produced.
pub fn train(
    mut model: Dit<f32>,
    data: &[TrainSample],
    val: &[TrainSample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossPoint),
) -> Result<(ModelCheckpoint, LossCurve), FlowError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(FlowError::EmptyDataset);
    }
    let per = model.config().frames * 4;
    if let Some(bad) = data.iter().chain(val).find(|s| s.x1.len() != per) {
        return Err(FlowError::ShapeMismatch(format!(
            "sample `{}` has {} target values, expected {per}",
            bad.id,
            bad.x1.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batcher = Batcher::new(data.len());
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut curve = LossCurve::default();
    let val_slice = &val[..cfg.eval_samples.min(val.len())];
    let eval_cfg = SampleConfig {
        num_steps: cfg.eval_sample_steps.max(1),
        seed: cfg.seed,
        clamp_output: true,
    };

    for step in 1..=cfg.steps {
        let idx = batcher.next(cfg.batch_size, &mut rng);
        let mut x1 = Vec::with_capacity(idx.len() * per);
        let mut conds = Vec::with_capacity(idx.len());
        for &i in &idx {
            x1.extend_from_slice(&data[i].x1);
            conds.push(apply_dropout(&data[i].cond, &cfg.dropout, &mut rng));
        }
        let x0 = standard_normal(&mut rng, x1.len());
        let t: Vec<f64> = (0..idx.len()).map(|_| rng.random::<f64>()).collect();
        let (loss, grads) = model.loss_and_grads(&x1, &x0, &t, &conds)?;
        opt.lr = cfg.lr * cfg.schedule.factor(step, cfg.steps);
        opt.step(model.params_mut(), &grads).map_err(ModelError::from)?;

        let eval_iou = if cfg.eval_every > 0 && !val_slice.is_empty() && (step % cfg.eval_every == 0 || step == cfg.steps) {
            Some(validation_iou(&model, val_slice, &eval_cfg)?)
        } else {
            None
        };
        let point = LossPoint { step, loss, eval_iou };
        on_step(&point);
        curve.points.push(point);
    }
    Ok((ModelCheckpoint::new(model, cfg.steps as u64, cfg.seed), curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub num_steps: usize,
    pub seed: u64,
    /// Floor widths and heights at zero. Without clamping a negative extent
    /// is read as its absolute value (the same two corners, swapped).
    pub clamp_output: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            num_steps: 28,
            seed: 0,
            clamp_output: false,
        }
    }
}

/// Converts raw `frames×4` tokens into boxes.
pub fn decode_tokens(tokens: &[f64], clamp_output: bool) -> BoxSequence {
    tokens
        .chunks_exact(4)
        .map(|c| {
            let (w, h) = if clamp_output {
                (c[2].max(0.0), c[3].max(0.0))
            } else {
                (c[2].abs(), c[3].abs())
            };
            Box2D::new(c[0], c[1], w, h)
        })
        .collect()
}

/// Euler integration of the velocity field from a seeded Gaussian draw,
/// returning raw tokens. Item `i` of the batch uses seed `cfg.seed + i`.
pub fn sample_tokens<V: VelocityField>(
    field: &V,
    conds: &[Conditioning],
    cfg: &SampleConfig,
) -> Result<Vec<f64>, FlowError> {
    if cfg.num_steps == 0 {
        return Err(FlowError::InvalidConfig("num_steps must be >= 1".into()));
    }
    let per = field.frames() * 4;
    let mut x = Vec::with_capacity(conds.len() * per);
    for i in 0..conds.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        x.extend(standard_normal(&mut rng, per));
    }
    let dt = 1.0 / cfg.num_steps as f64;
    for i in 0..cfg.num_steps {
        let t = vec![i as f64 * dt; conds.len()];
        let v = field.velocity(&x, &t, conds)?;
        if v.len() != x.len() {
            return Err(FlowError::ShapeMismatch(format!("velocity {} vs state {}", v.len(), x.len())));
        }
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += dt * vi;
        }
    }
    Ok(x)
}

pub fn sample<V: VelocityField>(field: &V, cond: &Conditioning, cfg: &SampleConfig) -> Result<BoxSequence, FlowError> {
    Ok(sample_batch(field, std::slice::from_ref(cond), cfg)?.remove(0))
}

pub fn sample_batch<V: VelocityField>(
    field: &V,
    conds: &[Conditioning],
    cfg: &SampleConfig,
) -> Result<Vec<BoxSequence>, FlowError> {
    let per = field.frames() * 4;
    let tokens = sample_tokens(field, conds, cfg)?;
    Ok(tokens.chunks(per).map(|c| decode_tokens(c, cfg.clamp_output)).collect())
}

/// The per-item initial noise used by [`sample_tokens`].
pub fn initial_noise(frames: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    standard_normal(&mut rng, frames * 4)
}
