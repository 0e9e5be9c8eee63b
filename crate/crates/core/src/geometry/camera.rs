use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Minimum camera-frame depth accepted by projection.
pub const EPSILON_Z: f64 = 1e-6;

/// Pinhole intrinsics in normalized-image units (frame = unit square).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fx: 1.0,
            fy: 1.0,
            cx: 0.5,
            cy: 0.5,
        }
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Projects a camera-frame point.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Point2<f64>, GeometryError> {
        if p.z <= EPSILON_Z {
            return Err(GeometryError::NonPositiveDepth { depth: p.z });
        }
        Ok(Point2::new(
            self.cx + self.fx * p.x / p.z,
            self.cy + self.fy * p.y / p.z,
        ))
    }

    /// Camera-frame point at pinhole depth `depth` along the ray through `uv`.
    pub fn unproject(&self, uv: &Point2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (uv.x - self.cx) / self.fx * depth,
            (uv.y - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Camera-frame ray direction with unit Z component.
    pub fn ray(&self, uv: &Point2<f64>) -> Vector3<f64> {
        self.unproject(uv, 1.0)
    }
}

/// Rigid world-to-camera transform: `p_cam = R · p_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checked constructor; the rotation must be orthonormal with det +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Pose of a camera centered at `center` whose camera-to-world rotation is
    /// `cam_to_world`.
    pub fn from_center(cam_to_world: Matrix3<f64>, center: Vector3<f64>) -> Self {
        let rotation = cam_to_world.transpose();
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    /// Worst deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity())
            .amax()
            .max((r.determinant() - 1.0).abs())
    }
}

/// Projects a world point into normalized image coordinates.
pub fn project_point(
    p: &Vector3<f64>,
    pose: &CameraPose,
    k: &Intrinsics,
) -> Result<Point2<f64>, GeometryError> {
    k.project(&pose.to_camera(p))
}
