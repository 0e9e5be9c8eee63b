//! Scores methods on an evaluation split.

use std::fmt;
use std::str::FromStr;

use crossview::baselines::{depth_warp, interpolation_baseline, NoisePreset, WarpConfig, WarpMode};
use crossview::datapipe::{derive_seed, SampleRecord};
use crossview::dit::{drop_condition, Direction, Dit, Stream};
use crossview::flowmatch::{sample_batch, SampleConfig};
use crossview::geometry::BoxSequence;
use crossview::metrics::{EvalComparison, EvalReport, SequenceMetrics};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("method `{0}` needs a checkpoint")]
    MissingModel(EvalMethod),
    #[error("checkpoint direction {model} does not match evaluation direction {eval}")]
    DirectionMismatch { model: Direction, eval: Direction },
    #[error("method `{0}` is only defined for f2v")]
    F2vOnly(EvalMethod),
    #[error("record `{0}` carries no depth map (warping needs the eval split)")]
    MissingDepth(String),
    #[error("no records to evaluate")]
    Empty,
    #[error("{0}")]
    Failed(String),
}

fn failed(e: impl fmt::Display) -> EvalError {
    EvalError::Failed(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMethod {
    #[serde(rename = "model")]
    Model,
    #[serde(rename = "model_no_trajectories")]
    ModelNoTrajectories,
    #[serde(rename = "model_no_context")]
    ModelNoContext,
    #[serde(rename = "interpolation")]
    Interpolation,
    #[serde(rename = "warp_corners")]
    WarpCorners,
    #[serde(rename = "warp_center")]
    WarpCenter,
    #[serde(rename = "noisy-high")]
    NoisyHigh,
    #[serde(rename = "noisy-low")]
    NoisyLow,
}

impl EvalMethod {
    pub const ALL: [EvalMethod; 8] = [
        EvalMethod::Model,
        EvalMethod::ModelNoTrajectories,
        EvalMethod::ModelNoContext,
        EvalMethod::Interpolation,
        EvalMethod::WarpCorners,
        EvalMethod::WarpCenter,
        EvalMethod::NoisyHigh,
        EvalMethod::NoisyLow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMethod::Model => "model",
            EvalMethod::ModelNoTrajectories => "model_no_trajectories",
            EvalMethod::ModelNoContext => "model_no_context",
            EvalMethod::Interpolation => "interpolation",
            EvalMethod::WarpCorners => "warp_corners",
            EvalMethod::WarpCenter => "warp_center",
            EvalMethod::NoisyHigh => "noisy-high",
            EvalMethod::NoisyLow => "noisy-low",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(
            self,
            EvalMethod::Model | EvalMethod::ModelNoTrajectories | EvalMethod::ModelNoContext
        )
    }

    fn warp(self, seed: u64) -> Option<WarpConfig> {
        match self {
            EvalMethod::WarpCorners => Some(WarpConfig::clean(WarpMode::Corners)),
            EvalMethod::WarpCenter => Some(WarpConfig::clean(WarpMode::Center)),
            EvalMethod::NoisyHigh => Some(WarpConfig::preset(NoisePreset::High, seed)),
            EvalMethod::NoisyLow => Some(WarpConfig::preset(NoisePreset::Low, seed)),
            _ => None,
        }
    }
}

impl fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        EvalMethod::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = EvalMethod::ALL.iter().map(|m| m.as_str()).collect();
            format!("unknown method `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub direction: Direction,
    /// Sampler settings; record `i` uses noise seed `sampler.seed + i`.
    pub sampler: SampleConfig,
    /// Base seed of the noisy warping presets.
    pub noise_seed: u64,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            direction: Direction::FirstToVideo,
            sampler: SampleConfig::default(),
            noise_seed: 0,
            batch_size: 16,
        }
    }
}

/// Predictions of one method for every record, in record order.
pub fn predict(
    records: &[SampleRecord],
    method: EvalMethod,
    model: Option<&Dit<f32>>,
    opts: &EvalOptions,
) -> Result<Vec<BoxSequence>, EvalError> {
    let d = opts.direction;
    if method.needs_model() {
        let model = model.ok_or(EvalError::MissingModel(method))?;
        if model.config().direction != d {
            return Err(EvalError::DirectionMismatch {
                model: model.config().direction,
                eval: d,
            });
        }
        let conds: Vec<_> = records
            .iter()
            .map(|r| {
                let c = r.conditioning(d);
                match method {
                    EvalMethod::ModelNoTrajectories => drop_condition(Stream::Trajectories, &c),
                    EvalMethod::ModelNoContext => drop_condition(Stream::Context, &c),
                    _ => c,
                }
            })
            .collect();
        let mut out = Vec::with_capacity(records.len());
        for (b, chunk) in conds.chunks(opts.batch_size.max(1)).enumerate() {
            let cfg = SampleConfig {
                seed: opts.sampler.seed.wrapping_add((b * opts.batch_size.max(1)) as u64),
                ..opts.sampler.clone()
            };
            out.extend(sample_batch(model, chunk, &cfg).map_err(failed)?);
        }
        return Ok(out);
    }
    if method.warp(0).is_some() {
        if d != Direction::FirstToVideo {
            return Err(EvalError::F2vOnly(method));
        }
        return records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cfg = method.warp(derive_seed(opts.noise_seed, i as u64, 0)).expect("warp method");
                let depth0 = r.depth0.as_ref().ok_or_else(|| EvalError::MissingDepth(r.id.clone()))?;
                let path = r.camera_path().map_err(failed)?;
                depth_warp(&r.b_ref, depth0, &path.poses, &path.intrinsics, &cfg).map_err(failed)
            })
            .collect();
    }
    Ok(records.iter().map(|r| interpolation_baseline(r.source_target(d).0)).collect())
}

pub fn evaluate_method(
    records: &[SampleRecord],
    method: EvalMethod,
    model: Option<&Dit<f32>>,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let preds = predict(records, method, model, opts)?;
    let seqs = records
        .iter()
        .zip(&preds)
        .map(|(r, p)| SequenceMetrics::compute(r.id.clone(), p, r.source_target(opts.direction).1))
        .collect::<Result<Vec<_>, _>>()
        .map_err(failed)?;
    EvalReport::from_sequences(method.as_str(), opts.direction, seqs).map_err(failed)
}

/// Evaluates every requested method on the same records.
pub fn evaluate(
    records: &[SampleRecord],
    methods: &[EvalMethod],
    model: Option<&Dit<f32>>,
    opts: &EvalOptions,
) -> Result<EvalComparison, EvalError> {
    let reports = methods
        .iter()
        .map(|&m| evaluate_method(records, m, model, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalComparison {
        direction: opts.direction,
        reports,
    })
}
