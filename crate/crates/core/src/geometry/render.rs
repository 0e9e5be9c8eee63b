use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    Box2D, BoxSequence, CameraPath, CameraPose, GeometryError, Intrinsics, OrientedBox, Scene,
};

/// Nodes per side of the first-frame depth grid.
pub const DEPTH_GRID_SIZE: usize = 65;
/// Image-space extent covered by the depth grid (wider than the frame so that
/// off-frame box corners can still be looked up).
pub const DEPTH_GRID_EXTENT: (f64, f64) = (-0.5, 1.5);
/// Side length of the low-resolution context grid.
pub const CONTEXT_SIZE: usize = 16;
/// Reprojected tracks outside this square are marked invisible.
pub const TRACK_BOUNDS: (f64, f64) = (-0.25, 1.25);

/// Axis-aligned hull of the eight projected corners of `b`.
pub fn project_box3d(
    b: &OrientedBox,
    pose: &CameraPose,
    k: &Intrinsics,
) -> Result<Box2D, GeometryError> {
    let mut pts = [(0.0, 0.0); 8];
    for (slot, corner) in pts.iter_mut().zip(b.corners()) {
        let uv = k.project(&pose.to_camera(&corner))?;
        *slot = (uv.x, uv.y);
    }
    Ok(Box2D::hull(pts).expect("eight corners"))
}

/// Node-aligned grid of inverse depth over a square image region.
///
/// Lookups interpolate inverse depth bilinearly, which is exact on planar
/// surfaces (inverse depth is affine in image coordinates on a plane).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DepthMapRepr", from = "DepthMapRepr")]
pub struct DepthMap {
    pub size: usize,
    pub lo: f64,
    pub hi: f64,
    /// Row-major `size×size` (rows index v).
    pub inv_depth: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DepthMapRepr {
    extent: [f64; 2],
    inv_depth: Vec<Vec<f32>>,
}

impl From<DepthMap> for DepthMapRepr {
    fn from(d: DepthMap) -> Self {
        DepthMapRepr {
            extent: [d.lo, d.hi],
            inv_depth: d
                .inv_depth
                .chunks(d.size.max(1))
                .map(|r| r.iter().map(|&x| x as f32).collect())
                .collect(),
        }
    }
}

impl From<DepthMapRepr> for DepthMap {
    fn from(r: DepthMapRepr) -> Self {
        DepthMap {
            size: r.inv_depth.len(),
            lo: r.extent[0],
            hi: r.extent[1],
            inv_depth: r.inv_depth.into_iter().flatten().map(f64::from).collect(),
        }
    }
}

impl DepthMap {
    /// Samples `depth_fn` (returning pinhole depth) at every node.
    pub fn from_fn(size: usize, lo: f64, hi: f64, mut depth_fn: impl FnMut(f64, f64) -> f64) -> Self {
        let step = (hi - lo) / (size - 1) as f64;
        let mut inv_depth = Vec::with_capacity(size * size);
        for i in 0..size {
            let v = lo + i as f64 * step;
            for j in 0..size {
                let u = lo + j as f64 * step;
                inv_depth.push(1.0 / depth_fn(u, v));
            }
        }
        Self {
            size,
            lo,
            hi,
            inv_depth,
        }
    }

    /// Depth of the static scene seen from the reference pose.
    pub fn render(scene: &Scene, k: &Intrinsics) -> Self {
        let (lo, hi) = DEPTH_GRID_EXTENT;
        Self::from_fn(DEPTH_GRID_SIZE, lo, hi, |u, v| {
            static_depth(scene, k, u, v)
        })
    }

    /// Bilinearly interpolated inverse depth at `(u, v)`.
    pub fn inverse_depth_at(&self, u: f64, v: f64) -> Result<f64, GeometryError> {
        if !(u >= self.lo && u <= self.hi && v >= self.lo && v <= self.hi) {
            return Err(GeometryError::DepthLookupOutOfRange { u, v });
        }
        let n = self.size;
        let scale = (n - 1) as f64 / (self.hi - self.lo);
        let fx = (u - self.lo) * scale;
        let fy = (v - self.lo) * scale;
        let j = (fx.floor() as usize).min(n - 2);
        let i = (fy.floor() as usize).min(n - 2);
        let (ax, ay) = (fx - j as f64, fy - i as f64);
        let g = |r: usize, c: usize| self.inv_depth[r * n + c];
        Ok((1.0 - ay) * ((1.0 - ax) * g(i, j) + ax * g(i, j + 1))
            + ay * ((1.0 - ax) * g(i + 1, j) + ax * g(i + 1, j + 1)))
    }

    pub fn depth_at(&self, u: f64, v: f64) -> Result<f64, GeometryError> {
        let inv = self.inverse_depth_at(u, v)?;
        if inv <= 0.0 || !inv.is_finite() {
            return Err(GeometryError::NonPositiveDepth { depth: 1.0 / inv });
        }
        Ok(1.0 / inv)
    }
}

/// Low-resolution inverse-depth image of the static scene at the reference
/// pose; the first-frame context signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f32>>", try_from = "Vec<Vec<f32>>")]
pub struct ContextGrid {
    pub size: usize,
    pub values: Vec<f64>,
}

impl From<ContextGrid> for Vec<Vec<f32>> {
    fn from(c: ContextGrid) -> Self {
        c.values
            .chunks(c.size.max(1))
            .map(|r| r.iter().map(|&x| x as f32).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f32>>> for ContextGrid {
    type Error = String;
    fn try_from(rows: Vec<Vec<f32>>) -> Result<Self, String> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err("context grid must be square".into());
        }
        Ok(ContextGrid {
            size,
            values: rows.into_iter().flatten().map(f64::from).collect(),
        })
    }
}

impl ContextGrid {
    pub fn render(scene: &Scene, k: &Intrinsics, size: usize) -> Self {
        let mut values = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let u = (j as f64 + 0.5) / size as f64;
                let v = (i as f64 + 0.5) / size as f64;
                values.push(1.0 / static_depth(scene, k, u, v));
            }
        }
        Self { size, values }
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            values: vec![0.0; size * size],
        }
    }
}

/// `G×G` point tracks over `T` frames in normalized image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackGrid {
    pub grid_size: usize,
    pub frames: usize,
    /// Indexed `[(row * G + col) * T + t]`.
    pub tracks: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
}

impl TrackGrid {
    pub fn index(&self, row: usize, col: usize, t: usize) -> usize {
        (row * self.grid_size + col) * self.frames + t
    }

    pub fn track(&self, n: usize) -> (&[[f64; 2]], &[bool]) {
        let s = n * self.frames;
        (
            &self.tracks[s..s + self.frames],
            &self.visibility[s..s + self.frames],
        )
    }

    pub fn track_count(&self) -> usize {
        self.grid_size * self.grid_size
    }
}

/// Everything the oracle produces for one (scene, camera path) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPair {
    pub b_ref: BoxSequence,
    pub b_tgt: BoxSequence,
    pub tracks: TrackGrid,
    pub depth0: DepthMap,
    pub context0: ContextGrid,
}

fn static_depth(scene: &Scene, k: &Intrinsics, u: f64, v: f64) -> f64 {
    // The reference camera sits at the world origin with identity rotation,
    // so the ray parameter at unit-Z direction is the pinhole depth.
    let dir = k.ray(&Point2::new(u, v));
    scene
        .raycast(&Vector3::zeros(), &dir)
        .map(|p| p.z)
        .unwrap_or(f64::INFINITY)
}

/// Renders the first-frame view and the video view of `scene` under `path`.
pub fn render_pair(
    scene: &Scene,
    path: &CameraPath,
    grid_size: usize,
) -> Result<RenderedPair, GeometryError> {
    let frames = path.len();
    if scene.frames() != frames {
        return Err(GeometryError::FrameCountMismatch {
            scene: scene.frames(),
            path: frames,
        });
    }
    if grid_size == 0 {
        return Err(GeometryError::InvalidArgument("grid size must be positive".into()));
    }
    let k = &path.intrinsics;
    let reference = &path.poses[0];

    let mut b_ref = Vec::with_capacity(frames);
    let mut b_tgt = Vec::with_capacity(frames);
    for (t, (ob, pose)) in scene.object_path.iter().zip(&path.poses).enumerate() {
        let hidden = |_| GeometryError::ObjectNotVisible { frame: t };
        b_ref.push(project_box3d(ob, reference, k).map_err(hidden)?);
        b_tgt.push(project_box3d(ob, pose, k).map_err(hidden)?);
    }

    let depth0 = DepthMap::render(scene, k);
    let context0 = ContextGrid::render(scene, k, CONTEXT_SIZE);

    let n = grid_size * grid_size;
    let mut tracks = Vec::with_capacity(n * frames);
    let mut visibility = Vec::with_capacity(n * frames);
    let (blo, bhi) = TRACK_BOUNDS;
    for row in 0..grid_size {
        for col in 0..grid_size {
            let uv = Point2::new(
                (col as f64 + 0.5) / grid_size as f64,
                (row as f64 + 0.5) / grid_size as f64,
            );
            let depth = depth0.depth_at(uv.x, uv.y)?;
            let world = reference.to_world(&k.unproject(&uv, depth));
            for pose in &path.poses {
                match k.project(&pose.to_camera(&world)) {
                    Ok(p) => {
                        tracks.push([p.x, p.y]);
                        visibility.push(p.x >= blo && p.x <= bhi && p.y >= blo && p.y <= bhi);
                    }
                    Err(_) => {
                        tracks.push([f64::NAN, f64::NAN]);
                        visibility.push(false);
                    }
                }
            }
        }
    }

    Ok(RenderedPair {
        b_ref: BoxSequence::new(b_ref),
        b_tgt: BoxSequence::new(b_tgt),
        tracks: TrackGrid {
            grid_size,
            frames,
            tracks,
            visibility,
        },
        depth0,
        context0,
    })
}
