//! Pinhole camera geometry and the synthetic paired-view oracle.
//!
//! Coordinates follow the usual computer-vision camera convention: X to the
//! right, Y down, Z forward. Image coordinates are normalized so the frame is
//! the unit square; a point at `(0.5, 0.5)` sits on the principal point of
//! the default intrinsics.
//!
//! The oracle renders two views of the same scene: the *first-frame view*,
//! where the camera stays frozen at the frame-0 pose, and the *video view*,
//! where the camera follows a [`CameraPath`]. Both share the frame-0 pose.

mod boxes;
mod camera;
mod path;
mod render;
mod scene;

pub use boxes::{Box2D, BoxSequence, OrientedBox};
pub use camera::{project_point, CameraPose, Intrinsics, EPSILON_Z};
pub use path::{make_camera_path, CameraPath, PathKind, DYNAMIC_PATH_KINDS, ORBIT_PIVOT};
pub use render::{project_box3d, render_pair, ContextGrid, DepthMap, RenderedPair, TrackGrid};
pub use scene::{Landmark, Scene, SceneParams};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive camera depth {depth}")]
    NonPositiveDepth { depth: f64 },
    #[error("unknown camera path kind `{0}`")]
    UnknownPathKind(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not a proper orthonormal matrix")]
    InvalidRotation,
    #[error("object not visible at frame {frame}")]
    ObjectNotVisible { frame: usize },
    #[error("frame count mismatch: scene has {scene}, path has {path}")]
    FrameCountMismatch { scene: usize, path: usize },
    #[error("depth lookup at ({u}, {v}) outside the depth grid")]
    DepthLookupOutOfRange { u: f64, v: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
