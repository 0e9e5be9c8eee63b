//! Non-learned reference methods: interpolation (identity) and depth warping.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Point2, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{Box2D, BoxSequence, CameraPose, DepthMap, GeometryError, Intrinsics};

/// Copies the first-frame-view path unchanged into the video view.
pub fn interpolation_baseline(b_ref: &BoxSequence) -> BoxSequence {
    b_ref.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpMode {
    /// Move the box center and rescale by the depth ratio.
    Center,
    /// Warp the four corners and take their axis-aligned hull.
    Corners,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpConfig {
    pub mode: WarpMode,
    /// Log-normal multiplicative depth error scale.
    pub depth_noise_sigma: f64,
    /// Axis-angle rotation noise (radians, per axis).
    pub rotation_noise_sigma: f64,
    /// Additive translation noise (scene units, per axis).
    pub translation_noise_sigma: f64,
    pub seed: u64,
}

impl WarpConfig {
    pub fn clean(mode: WarpMode) -> Self {
        Self {
            mode,
            depth_noise_sigma: 0.0,
            rotation_noise_sigma: 0.0,
            translation_noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn preset(preset: NoisePreset, seed: u64) -> Self {
        let (depth, rot, trans) = preset.sigmas();
        Self {
            mode: WarpMode::Corners,
            depth_noise_sigma: depth,
            rotation_noise_sigma: rot,
            translation_noise_sigma: trans,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for (name, s) in [
            ("depth_noise_sigma", self.depth_noise_sigma),
            ("rotation_noise_sigma", self.rotation_noise_sigma),
            ("translation_noise_sigma", self.translation_noise_sigma),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(GeometryError::InvalidArgument(format!("{name} must be >= 0, got {s}")));
            }
        }
        Ok(())
    }

    fn is_clean(&self) -> bool {
        self.depth_noise_sigma == 0.0 && self.rotation_noise_sigma == 0.0 && self.translation_noise_sigma == 0.0
    }
}

/// Estimator-error levels for corner warping: `High` stands in for a weaker
/// depth/pose estimator, `Low` for a stronger one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoisePreset {
    #[serde(rename = "noisy-high")]
    High,
    #[serde(rename = "noisy-low")]
    Low,
}

impl NoisePreset {
    /// `(depth, rotation, translation)` sigmas.
    pub fn sigmas(self) -> (f64, f64, f64) {
        match self {
            NoisePreset::High => (0.2, 0.02, 0.1),
            NoisePreset::Low => (0.1, 0.01, 0.08),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoisePreset::High => "noisy-high",
            NoisePreset::Low => "noisy-low",
        }
    }
}

impl fmt::Display for NoisePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoisePreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "noisy-high" => Ok(NoisePreset::High),
            "noisy-low" => Ok(NoisePreset::Low),
            other => Err(format!("unknown noise preset `{other}`")),
        }
    }
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    Vector3::new(
        sigma * rng.sample::<f64, _>(StandardNormal),
        sigma * rng.sample::<f64, _>(StandardNormal),
        sigma * rng.sample::<f64, _>(StandardNormal),
    )
}

/// Depth where the box meets the ground: the bottom-center pixel of the box,
/// looked up in the first-frame depth map.
///
/// `depth0` shows the static scene, so pixels inside the box see whatever lies
/// behind the object. The bottom edge of an object standing on the ground
/// touches the ground at the object's own (nearest) depth, which makes it the
/// one pixel whose depth-map value belongs to the object.
pub fn contact_depth(b: &Box2D, depth0: &DepthMap) -> Result<f64, GeometryError> {
    depth0.depth_at(b.cx, b.y1())
}

/// Depth assigned to the whole box when warping: the contact depth pushed
/// back by half the box's metric width, i.e. the center of a footprint
/// assumed to be as deep as it is wide.
pub fn object_depth(b: &Box2D, depth0: &DepthMap, k: &Intrinsics) -> Result<f64, GeometryError> {
    let z = contact_depth(b, depth0)?;
    Ok(z * (1.0 + 0.5 * b.w / k.fx))
}

/// Moves one box from the `reference` view to the `target` view, treating it
/// as a fronto-parallel rectangle at depth `z0` in the reference camera.
pub fn warp_box(
    b: &Box2D,
    z0: f64,
    reference: &CameraPose,
    target: &CameraPose,
    k: &Intrinsics,
    mode: WarpMode,
) -> Result<Box2D, GeometryError> {
    if z0.is_nan() || z0 <= 0.0 {
        return Err(GeometryError::NonPositiveDepth { depth: z0 });
    }
    let warp = |u: f64, v: f64| -> Result<(Point2<f64>, f64), GeometryError> {
        let world = reference.to_world(&k.unproject(&Point2::new(u, v), z0));
        let cam = target.to_camera(&world);
        Ok((k.project(&cam)?, cam.z))
    };
    Ok(match mode {
        WarpMode::Corners => {
            let mut pts = [(0.0, 0.0); 4];
            for (slot, (u, v)) in pts.iter_mut().zip(b.corners()) {
                let (p, _) = warp(u, v)?;
                *slot = (p.x, p.y);
            }
            Box2D::hull(pts).expect("four corners")
        }
        WarpMode::Center => {
            let (p, zt) = warp(b.cx, b.cy)?;
            let s = z0 / zt;
            Box2D::new(p.x, p.y, b.w * s, b.h * s)
        }
    })
}

/// Warps every frame's first-frame-view box into the video view through
/// `depth0` and the per-frame camera poses.
pub fn depth_warp(
    b_ref: &BoxSequence,
    depth0: &DepthMap,
    poses: &[CameraPose],
    k: &Intrinsics,
    cfg: &WarpConfig,
) -> Result<BoxSequence, GeometryError> {
    cfg.validate()?;
    if poses.len() != b_ref.len() {
        return Err(GeometryError::FrameCountMismatch {
            scene: b_ref.len(),
            path: poses.len(),
        });
    }
    let Some(reference) = poses.first() else {
        return Ok(BoxSequence::new(Vec::new()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(b_ref.len());
    for (t, (b, pose)) in b_ref.iter().zip(poses).enumerate() {
        let mut z0 = object_depth(b, depth0, k)?;
        let mut target = *pose;
        if !cfg.is_clean() {
            // draws happen for every frame so the noise of frame t does not
            // depend on earlier frames' parameters
            let dz: f64 = rng.sample(StandardNormal);
            let rot = gaussian3(&mut rng, cfg.rotation_noise_sigma);
            let trans = gaussian3(&mut rng, cfg.translation_noise_sigma);
            z0 *= (cfg.depth_noise_sigma * dz).exp();
            // frame 0 is the reference pose and is known exactly
            if t > 0 {
                let r = Rotation3::new(rot).into_inner() * pose.rotation();
                let orthonormal = Rotation3::from_matrix(&r).into_inner();
                target = CameraPose::new(orthonormal, pose.translation() + trans)?;
            }
        }
        let warped = warp_box(b, z0, reference, &target, k, cfg.mode)?;
        out.push(warped);
    }
    Ok(BoxSequence::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn ground_depth(ground_y: f64) -> DepthMap {
        // ground plane below the camera, far wall elsewhere
        DepthMap::from_fn(65, -0.5, 1.5, |_, v| if v > 0.5 + ground_y / 20.0 { ground_y / (v - 0.5) } else { 20.0 })
    }

    #[test]
    fn interpolation_is_identity() {
        let b: BoxSequence = (0..5).map(|i| Box2D::new(0.1 * i as f64, 0.5, 0.2, 0.3)).collect();
        assert_eq!(interpolation_baseline(&b), b);
    }

    #[test]
    fn static_poses_reproduce_input() {
        let d = ground_depth(1.5);
        let b: BoxSequence = (0..4).map(|i| Box2D::new(0.3 + 0.1 * i as f64, 0.6, 0.2, 0.2)).collect();
        let poses = vec![CameraPose::identity(); 4];
        for mode in [WarpMode::Corners, WarpMode::Center] {
            let w = depth_warp(&b, &d, &poses, &Intrinsics::default(), &WarpConfig::clean(mode)).unwrap();
            for (a, e) in w.iter().zip(b.iter()) {
                for (x, y) in a.to_array().iter().zip(e.to_array()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn contact_depth_on_ground() {
        let d = ground_depth(1.5);
        // bottom edge at v = 0.8 → ground depth 1.5 / 0.3 = 5
        let b = Box2D::from_corners(0.4, 0.5, 0.6, 0.8);
        assert!((contact_depth(&b, &d).unwrap() - 5.0).abs() < 1e-9);
        let off = Box2D::from_corners(0.4, 1.5, 0.6, 1.7);
        assert!(matches!(contact_depth(&off, &d), Err(GeometryError::DepthLookupOutOfRange { .. })));
    }

    #[test]
    fn lateral_translation_shifts_by_inverse_depth() {
        let d = ground_depth(1.5);
        let b = BoxSequence::new(vec![Box2D::from_corners(0.4, 0.5, 0.6, 0.8); 2]);
        let moved = CameraPose::new(Matrix3::identity(), Vector3::new(-0.5, 0.0, 0.0)).unwrap();
        let poses = [CameraPose::identity(), moved];
        let w = depth_warp(&b, &d, &poses, &Intrinsics::default(), &WarpConfig::clean(WarpMode::Corners)).unwrap();
        // contact at depth 5, box 0.2 wide → object depth 5.5; a camera step of
        // +0.5 in x moves the box left by 0.5 / 5.5
        let z = object_depth(&b[0], &d, &Intrinsics::default()).unwrap();
        assert!((z - 5.5).abs() < 1e-9);
        assert!((w[1].cx - (0.5 - 0.5 / 5.5)).abs() < 1e-9);
        assert!((w[1].w - 0.2).abs() < 1e-9);
        let c = depth_warp(&b, &d, &poses, &Intrinsics::default(), &WarpConfig::clean(WarpMode::Center)).unwrap();
        assert!((c[1].cx - w[1].cx).abs() < 1e-9 && (c[1].w - 0.2).abs() < 1e-9);
    }

    #[test]
    fn presets_and_validation() {
        assert_eq!("noisy-high".parse::<NoisePreset>().unwrap(), NoisePreset::High);
        assert!("noisy".parse::<NoisePreset>().is_err());
        let (hd, hr, ht) = NoisePreset::High.sigmas();
        let (ld, lr, lt) = NoisePreset::Low.sigmas();
        assert!(hd > ld && hr > lr && ht > lt);
        let bad = WarpConfig {
            depth_noise_sigma: -0.1,
            ..WarpConfig::clean(WarpMode::Corners)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let d = ground_depth(1.5);
        let b = BoxSequence::new(vec![Box2D::from_corners(0.4, 0.5, 0.6, 0.8); 3]);
        let poses = vec![CameraPose::identity(); 3];
        let k = Intrinsics::default();
        let cfg = WarpConfig::preset(NoisePreset::High, 3);
        let a = depth_warp(&b, &d, &poses, &k, &cfg).unwrap();
        assert_eq!(a, depth_warp(&b, &d, &poses, &k, &cfg).unwrap());
        assert_ne!(a, depth_warp(&b, &d, &poses, &k, &WarpConfig { seed: 4, ..cfg }).unwrap());
    }
}
