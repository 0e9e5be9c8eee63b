//! Request-level transformation logic shared by the `transform` command and
//! the HTTP service.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crossview::baselines::{depth_warp, interpolation_baseline, WarpConfig, WarpMode};
use crossview::datapipe::SampleRecord;
use crossview::dit::{Conditioning, Direction, Dit, ModelCheckpoint};
use crossview::flowmatch::{sample, SampleConfig};
use crossview::geometry::{BoxSequence, ContextGrid};
use crossview::metrics::per_frame_iou;
use crossview::signal::{interpolate_keyframes, Keyframe, SignalError};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// Upper bound on sampler steps accepted from a request.
pub const MAX_SAMPLER_STEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Model,
    Interpolation,
    WarpCenter,
    WarpCorners,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Model => "model",
            Method::Interpolation => "interpolation",
            Method::WarpCenter => "warp_center",
            Method::WarpCorners => "warp_corners",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "model" => Ok(Method::Model),
            "interpolation" => Ok(Method::Interpolation),
            "warp_center" => Ok(Method::WarpCenter),
            "warp_corners" => Ok(Method::WarpCorners),
            other => Err(format!(
                "unknown method `{other}` (expected model, interpolation, warp_center or warp_corners)"
            )),
        }
    }
}

/// Conditioning supplied directly instead of through a dataset record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineInput {
    #[serde(rename = "T")]
    pub frames: usize,
    /// `G²×2K` DCT track tokens.
    pub dct_tokens: Vec<Vec<f32>>,
    pub context0: ContextGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRequest {
    /// Dataset record to transform; exclusive with `inline`.
    #[serde(default, alias = "scene_id", skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<InlineInput>,
    /// Sparse source-view keyframes. When absent the record's own dense
    /// source path is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframes: Option<Vec<Keyframe>>,
    #[serde(default = "default_direction")]
    pub direction: Direction,
    #[serde(default)]
    pub sampler: SampleConfig,
    pub method: Method,
}

fn default_direction() -> Direction {
    Direction::FirstToVideo
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformResponse {
    pub method: Method,
    pub direction: Direction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    #[serde(rename = "T")]
    pub frames: usize,
    /// Identifier of the checkpoint that produced the prediction.
    pub checkpoint: Option<String>,
    pub sampler: Option<SampleConfig>,
    /// Dense source-view path the prediction was computed from.
    pub b_ref: BoxSequence,
    /// Predicted target-view path.
    pub b_tgt: BoxSequence,
    /// Per-frame IoU against the record's ground truth, present when the
    /// dense source path equals the record's own.
    pub per_frame_iou: Option<Vec<f64>>,
    pub mean_iou: Option<f64>,
}

/// A checkpoint kept in memory for inference.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub id: String,
    pub model: Dit<f32>,
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self, crossview::dit::ModelError> {
        let ckpt = ModelCheckpoint::load(path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self::from_checkpoint(format!("{stem}@{}", ckpt.step), ckpt))
    }

    pub fn from_checkpoint(id: String, ckpt: ModelCheckpoint) -> Self {
        Self { id, model: ckpt.model }
    }

    pub fn direction(&self) -> Direction {
        self.model.config().direction
    }
}

/// Immutable artifacts a transformation can draw on.
#[derive(Debug, Default)]
pub struct Engine {
    records: BTreeMap<String, SampleRecord>,
    models: BTreeMap<&'static str, LoadedModel>,
}

fn signal_reason(e: &SignalError) -> &'static str {
    match e {
        SignalError::EmptyKeys => "keyframes_empty",
        SignalError::FirstKeyNotZero { .. } => "keyframes_must_start_at_zero",
        SignalError::UnsortedKeys => "keyframes_not_increasing",
        SignalError::KeyOutOfRange { .. } => "keyframe_out_of_range",
        SignalError::InvalidOrder { .. } => "invalid_request",
    }
}

impl Engine {
    pub fn new(records: Vec<SampleRecord>, models: Vec<LoadedModel>) -> Result<Self, String> {
        let mut by_direction = BTreeMap::new();
        for m in models {
            let key = m.direction().as_str();
            if by_direction.insert(key, m).is_some() {
                return Err(format!("more than one {key} checkpoint loaded"));
            }
        }
        Ok(Self {
            records: records.into_iter().map(|r| (r.id.clone(), r)).collect(),
            models: by_direction,
        })
    }

    /// Records in id order.
    pub fn records(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.values()
    }

    pub fn record(&self, id: &str) -> Option<&SampleRecord> {
        self.records.get(id)
    }

    pub fn model(&self, direction: Direction) -> Option<&LoadedModel> {
        self.models.get(direction.as_str())
    }

    pub fn transform(&self, req: &TransformRequest) -> Result<TransformResponse, ApiError> {
        let record = match (&req.record_id, &req.inline) {
            (Some(_), Some(_)) => {
                return Err(ApiError::bad_request(
                    "ambiguous_input",
                    "give either record_id or inline, not both",
                ))
            }
            (None, None) => return Err(ApiError::bad_request("missing_input", "record_id or inline is required")),
            (Some(id), None) => Some(
                self.records
                    .get(id)
                    .ok_or_else(|| ApiError::not_found("unknown_record", format!("no record `{id}`")))?,
            ),
            (None, Some(_)) => None,
        };
        let frames = match (record, &req.inline) {
            (Some(r), _) => r.frames,
            (None, Some(inline)) => inline.frames,
            (None, None) => unreachable!(),
        };
        if frames == 0 {
            return Err(ApiError::bad_request("invalid_inline", "T must be positive"));
        }

        let source = match (&req.keyframes, record) {
            (Some(keys), _) => {
                if let Some(k) = keys.iter().find(|k| !k.bbox.is_valid()) {
                    return Err(ApiError::bad_request(
                        "invalid_box",
                        format!("keyframe at frame {} has a non-finite or negative box", k.frame_index),
                    ));
                }
                interpolate_keyframes(keys, frames).map_err(|e| ApiError::bad_request(signal_reason(&e), e.to_string()))?
            }
            (None, Some(r)) => r.source_target(req.direction).0.clone(),
            (None, None) => {
                return Err(ApiError::bad_request(
                    "keyframes_empty",
                    "keyframes are required with inline input",
                ))
            }
        };

        let mut checkpoint = None;
        let mut sampler = None;
        let prediction = match req.method {
            Method::Interpolation => interpolation_baseline(&source),
            Method::WarpCenter | Method::WarpCorners => {
                let Some(r) = record else {
                    return Err(ApiError::bad_request(
                        "warp_requires_record",
                        "warping needs the record's depth map and camera poses",
                    ));
                };
                if req.direction != Direction::FirstToVideo {
                    return Err(ApiError::bad_request("warp_requires_f2v", "warping is defined for f2v only"));
                }
                let depth0 = r.depth0.as_ref().ok_or_else(|| {
                    ApiError::conflict("missing_depth", format!("record `{}` carries no depth map", r.id))
                })?;
                let path = r.camera_path().map_err(ApiError::internal)?;
                let mode = if req.method == Method::WarpCenter {
                    WarpMode::Center
                } else {
                    WarpMode::Corners
                };
                depth_warp(&source, depth0, &path.poses, &path.intrinsics, &WarpConfig::clean(mode))
                    .map_err(|e| ApiError::bad_request("warp_failed", e.to_string()))?
            }
            Method::Model => {
                if req.sampler.num_steps == 0 || req.sampler.num_steps > MAX_SAMPLER_STEPS {
                    return Err(ApiError::bad_request(
                        "invalid_sampler",
                        format!("num_steps must lie in [1, {MAX_SAMPLER_STEPS}]"),
                    ));
                }
                let loaded = self.model(req.direction).ok_or_else(|| {
                    ApiError::conflict("no_checkpoint", format!("no {} checkpoint loaded", req.direction))
                })?;
                let cond = match (record, &req.inline) {
                    (Some(r), _) => {
                        check_shapes(loaded, r.frames, &r.dct_tokens, &r.context0, "checkpoint_mismatch")?;
                        r.conditioning_with(&source)
                    }
                    (None, Some(inline)) => {
                        check_shapes(loaded, inline.frames, &inline.dct_tokens, &inline.context0, "invalid_inline")?;
                        Conditioning {
                            reference: Some(source.to_flat()),
                            trajectories: Some(inline.dct_tokens.iter().flatten().map(|&v| f64::from(v)).collect()),
                            context: Some(inline.context0.values.clone()),
                        }
                    }
                    (None, None) => unreachable!(),
                };
                checkpoint = Some(loaded.id.clone());
                sampler = Some(req.sampler.clone());
                sample(&loaded.model, &cond, &req.sampler).map_err(ApiError::internal)?
            }
        };

        let (per_frame, mean) = match record {
            Some(r) if same_path(&source, r.source_target(req.direction).0) => {
                let gt = r.source_target(req.direction).1;
                let ious = per_frame_iou(&prediction, gt).map_err(ApiError::internal)?;
                let mean = ious.iter().sum::<f64>() / ious.len() as f64;
                (Some(ious), Some(mean))
            }
            _ => (None, None),
        };
        Ok(TransformResponse {
            method: req.method,
            direction: req.direction,
            record_id: record.map(|r| r.id.clone()),
            frames,
            checkpoint,
            sampler,
            b_ref: source,
            b_tgt: prediction,
            per_frame_iou: per_frame,
            mean_iou: mean,
        })
    }
}

fn same_path(a: &BoxSequence, b: &BoxSequence) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_array().iter().zip(y.to_array()).all(|(p, q)| (p - q).abs() <= 1e-9))
}

fn check_shapes(
    loaded: &LoadedModel,
    frames: usize,
    tokens: &[Vec<f32>],
    context: &ContextGrid,
    reason: &'static str,
) -> Result<(), ApiError> {
    let c = loaded.model.config();
    let mismatch = |what: String| {
        let msg = format!("{what} does not match checkpoint `{}`", loaded.id);
        if reason == "checkpoint_mismatch" {
            ApiError::conflict(reason, msg)
        } else {
            ApiError::bad_request(reason, msg)
        }
    };
    if frames != c.frames {
        return Err(mismatch(format!("T={frames} (checkpoint T={})", c.frames)));
    }
    if tokens.len() != c.trajectory_tokens() || tokens.iter().any(|t| t.len() != c.trajectory_features()) {
        return Err(mismatch(format!(
            "dct_tokens shape (expected {}×{})",
            c.trajectory_tokens(),
            c.trajectory_features()
        )));
    }
    if context.size != c.context_size {
        return Err(mismatch(format!("context grid size {}", context.size)));
    }
    Ok(())
}
