//! Trajectory signal processing: orthonormal DCT-II track encoding, keyframe
//! interpolation and seeded perturbation of box sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box2D, BoxSequence, TrackGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("DCT order {order} outside [1, {len}]")]
    InvalidOrder { order: usize, len: usize },
    #[error("keyframe list is empty")]
    EmptyKeys,
    #[error("first keyframe is at frame {index}, expected 0")]
    FirstKeyNotZero { index: usize },
    #[error("keyframe indices must be strictly increasing")]
    UnsortedKeys,
    #[error("keyframe index {index} outside [0, {frames})")]
    KeyOutOfRange { index: usize, frames: usize },
}

fn basis(k: usize, n: usize, len: usize) -> f64 {
    let beta = if k == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    beta * (2.0 / len as f64).sqrt()
        * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * len) as f64).cos()
}

/// First `order` orthonormal DCT-II coefficients of `signal`.
pub fn dct_encode(signal: &[f64], order: usize) -> Result<Vec<f64>, SignalError> {
    let len = signal.len();
    if order == 0 || order > len {
        return Err(SignalError::InvalidOrder { order, len });
    }
    Ok((0..order)
        .map(|k| {
            signal
                .iter()
                .enumerate()
                .map(|(n, &x)| x * basis(k, n, len))
                .sum()
        })
        .collect())
}

/// Inverse orthonormal DCT-II of a truncated coefficient vector; missing
/// high-order coefficients are taken as zero.
pub fn dct_decode(coeffs: &[f64], len: usize) -> Result<Vec<f64>, SignalError> {
    if coeffs.len() > len || len == 0 {
        return Err(SignalError::InvalidOrder {
            order: coeffs.len(),
            len,
        });
    }
    Ok((0..len)
        .map(|n| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| c * basis(k, n, len))
                .sum()
        })
        .collect())
}

/// One point track summarized by its leading DCT coefficients per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DctTrack {
    pub coeffs_x: Vec<f64>,
    pub coeffs_y: Vec<f64>,
    pub source_len: usize,
}

impl DctTrack {
    pub fn order(&self) -> usize {
        self.coeffs_x.len()
    }

    /// Token feature layout: `[x coefficients…, y coefficients…]`.
    pub fn features(&self) -> Vec<f64> {
        self.coeffs_x
            .iter()
            .chain(&self.coeffs_y)
            .copied()
            .collect()
    }
}

/// Encodes every track of the grid in row-major order. Invisible samples
/// hold the last visible position (the first sample is always visible for
/// grids produced by the renderer; a leading invisible run takes the first
/// visible value).
pub fn encode_trackgrid(grid: &TrackGrid, order: usize) -> Result<Vec<DctTrack>, SignalError> {
    if order == 0 || order > grid.frames {
        return Err(SignalError::InvalidOrder {
            order,
            len: grid.frames,
        });
    }
    (0..grid.track_count())
        .map(|n| {
            let (pts, vis) = grid.track(n);
            let filled = forward_fill(pts, vis);
            let xs: Vec<f64> = filled.iter().map(|p| p[0]).collect();
            let ys: Vec<f64> = filled.iter().map(|p| p[1]).collect();
            Ok(DctTrack {
                coeffs_x: dct_encode(&xs, order)?,
                coeffs_y: dct_encode(&ys, order)?,
                source_len: grid.frames,
            })
        })
        .collect()
}

fn forward_fill(pts: &[[f64; 2]], vis: &[bool]) -> Vec<[f64; 2]> {
    let first = pts
        .iter()
        .zip(vis)
        .find(|(p, &v)| v && p[0].is_finite() && p[1].is_finite())
        .map(|(p, _)| *p)
        .unwrap_or([0.0, 0.0]);
    let mut held = first;
    pts.iter()
        .zip(vis)
        .map(|(p, &v)| {
            if v && p[0].is_finite() && p[1].is_finite() {
                held = *p;
            }
            held
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame_index: usize,
    #[serde(rename = "box")]
    pub bbox: Box2D,
}

impl Keyframe {
    pub fn new(frame_index: usize, bbox: Box2D) -> Self {
        Self { frame_index, bbox }
    }
}

/// Checks the keyframe-list contract without interpolating.
pub fn validate_keyframes(keys: &[Keyframe], frames: usize) -> Result<(), SignalError> {
    let first = keys.first().ok_or(SignalError::EmptyKeys)?;
    if first.frame_index != 0 {
        return Err(SignalError::FirstKeyNotZero { index: first.frame_index });
    }
    for pair in keys.windows(2) {
        if pair[1].frame_index <= pair[0].frame_index {
            return Err(SignalError::UnsortedKeys);
        }
    }
    if let Some(k) = keys.iter().find(|k| k.frame_index >= frames) {
        return Err(SignalError::KeyOutOfRange {
            index: k.frame_index,
            frames,
        });
    }
    Ok(())
}

/// Piecewise-linear interpolation of sparse keyframes into `frames` boxes,
/// held constant after the last key.
pub fn interpolate_keyframes(keys: &[Keyframe], frames: usize) -> Result<BoxSequence, SignalError> {
    validate_keyframes(keys, frames)?;
    let mut out = Vec::with_capacity(frames);
    let mut seg = 0;
    for t in 0..frames {
        while seg + 1 < keys.len() && keys[seg + 1].frame_index <= t {
            seg += 1;
        }
        let a = &keys[seg];
        let b = match keys.get(seg + 1) {
            Some(b) => b,
            None => {
                out.push(a.bbox);
                continue;
            }
        };
        let span = (b.frame_index - a.frame_index) as f64;
        let s = (t - a.frame_index) as f64 / span;
        out.push(a.bbox.lerp(&b.bbox, s));
    }
    Ok(BoxSequence::new(out))
}

/// Adds i.i.d. Gaussian jitter plus a Gaussian random-walk drift to every box
/// component. Widths and heights are floored at zero.
pub fn perturb_sequence(
    seq: &BoxSequence,
    sigma_jitter: f64,
    sigma_drift: f64,
    seed: u64,
) -> BoxSequence {
    if sigma_jitter == 0.0 && sigma_drift == 0.0 {
        return seq.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut drift = [0.0f64; 4];
    seq.iter()
        .map(|b| {
            let v = b.to_array();
            let out: [f64; 4] = std::array::from_fn(|i| {
                drift[i] += sigma_drift * normal.sample(&mut rng);
                v[i] + drift[i] + sigma_jitter * normal.sample(&mut rng)
            });
            Box2D::new(out[0], out[1], out[2].max(0.0), out[3].max(0.0))
        })
        .collect()
}
