use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CameraPose, GeometryError, Intrinsics};

/// Point on the optical axis of the reference pose that orbiting paths circle.
pub const ORBIT_PIVOT: [f64; 3] = [0.0, 0.0, 6.0];

/// Camera path families. Magnitudes are stand-ins chosen for the synthetic
/// scenes in [`super::Scene`], not measurements of any real renderer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Static,
    /// Yaw rotation about the camera center.
    Pan,
    /// Lateral translation.
    Truck,
    /// Translation along the optical axis.
    Dolly,
    /// Horizontal circle around [`ORBIT_PIVOT`], looking at it.
    Orbit,
    /// Crane move: rise on a vertical arc around the pivot, tilting down.
    Arc,
    /// Truck + dolly + roll + a little pan.
    Composite,
}

/// Families used to fill the per-scene path slots, in cycling order.
pub const DYNAMIC_PATH_KINDS: [PathKind; 7] = [
    PathKind::Pan,
    PathKind::Truck,
    PathKind::Dolly,
    PathKind::Orbit,
    PathKind::Arc,
    PathKind::Composite,
    PathKind::Static,
];

impl PathKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PathKind::Static => "static",
            PathKind::Pan => "pan",
            PathKind::Truck => "truck",
            PathKind::Dolly => "dolly",
            PathKind::Orbit => "orbit",
            PathKind::Arc => "arc",
            PathKind::Composite => "composite",
        }
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathKind {
    type Err = GeometryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "static" => PathKind::Static,
            "pan" => PathKind::Pan,
            "truck" => PathKind::Truck,
            "dolly" => PathKind::Dolly,
            "orbit" => PathKind::Orbit,
            "arc" => PathKind::Arc,
            "composite" => PathKind::Composite,
            other => return Err(GeometryError::UnknownPathKind(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPath {
    pub poses: Vec<CameraPose>,
    pub intrinsics: Intrinsics,
    pub kind: PathKind,
}

impl CameraPath {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn with_intrinsics(mut self, k: Intrinsics) -> Self {
        self.intrinsics = k;
        self
    }
}

fn rot(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

/// Builds a deterministic camera path. Frame 0 is always the identity
/// reference pose, so every path agrees with the frozen first-frame view there.
pub fn make_camera_path(
    kind: PathKind,
    frames: usize,
    magnitude: f64,
    seed: u64,
) -> Result<CameraPath, GeometryError> {
    if frames < 2 {
        return Err(GeometryError::InvalidArgument(format!(
            "camera path needs at least 2 frames, got {frames}"
        )));
    }
    if !(magnitude >= 0.0 && magnitude.is_finite()) {
        return Err(GeometryError::InvalidArgument(format!(
            "magnitude must be non-negative, got {magnitude}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = magnitude * rng.random_range(0.6..1.0);
    let mut signs = [0.0; 4];
    for s in signs.iter_mut() {
        *s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    let pivot = Vector3::from(ORBIT_PIVOT);
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let last = (frames - 1) as f64;

    let poses = (0..frames)
        .map(|t| {
            if t == 0 {
                return CameraPose::identity();
            }
            let s = t as f64 / last;
            match kind {
                PathKind::Static => CameraPose::identity(),
                PathKind::Pan => {
                    CameraPose::from_center(rot(y, signs[0] * amp * 0.3 * s), Vector3::zeros())
                }
                PathKind::Truck => CameraPose::from_center(
                    Matrix3::identity(),
                    Vector3::new(signs[0] * amp * 1.2 * s, 0.0, 0.0),
                ),
                PathKind::Dolly => CameraPose::from_center(
                    Matrix3::identity(),
                    Vector3::new(0.0, 0.0, signs[0] * amp * 1.5 * s),
                ),
                PathKind::Orbit => {
                    let r = rot(y, signs[0] * amp * 0.4 * s);
                    let center = pivot - r * Vector3::new(0.0, 0.0, pivot.z);
                    CameraPose::from_center(r, center)
                }
                PathKind::Arc => {
                    // Negative rotation about +X raises the camera (Y is down).
                    let r = rot(x, -amp * 0.25 * s);
                    let center = pivot - r * Vector3::new(0.0, 0.0, pivot.z);
                    CameraPose::from_center(r, center)
                }
                PathKind::Composite => {
                    let r = rot(z, signs[2] * amp * 0.15 * s) * rot(y, signs[3] * amp * 0.1 * s);
                    let center = Vector3::new(
                        signs[0] * amp * 0.6 * s,
                        0.0,
                        signs[1] * amp * 0.8 * s,
                    );
                    CameraPose::from_center(r, center)
                }
            }
        })
        .collect();

    Ok(CameraPath {
        poses,
        intrinsics: Intrinsics::default(),
        kind,
    })
}
