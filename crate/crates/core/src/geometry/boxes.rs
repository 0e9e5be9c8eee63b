use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Axis-aligned 2D box in normalized frame coordinates.
///
/// Serialized as `[cx, cy, w, h]`. Centers may fall outside the unit square;
/// objects are allowed to be partially off-frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2D {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Box2D {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            cx: 0.5 * (x0 + x1),
            cy: 0.5 * (y0 + y1),
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// Axis-aligned hull of a non-empty point set.
    pub fn hull<I: IntoIterator<Item = (f64, f64)>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let (x, y) = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (x, y, x, y);
        for (x, y) in it {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        Some(Self::from_corners(x0, y0, x1, y1))
    }

    pub fn x0(&self) -> f64 {
        self.cx - 0.5 * self.w
    }
    pub fn x1(&self) -> f64 {
        self.cx + 0.5 * self.w
    }
    pub fn y0(&self) -> f64 {
        self.cy - 0.5 * self.h
    }
    pub fn y1(&self) -> f64 {
        self.cy + 0.5 * self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners in the order top-left, top-right, bottom-right, bottom-left.
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x0(), self.y0()),
            (self.x1(), self.y0()),
            (self.x1(), self.y1()),
            (self.x0(), self.y1()),
        ]
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn is_valid(&self) -> bool {
        self.cx.is_finite()
            && self.cy.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w >= 0.0
            && self.h >= 0.0
    }

    pub fn lerp(&self, other: &Box2D, s: f64) -> Box2D {
        let a = self.to_array();
        let b = other.to_array();
        let v: [f64; 4] = std::array::from_fn(|i| a[i] + s * (b[i] - a[i]));
        Box2D::new(v[0], v[1], v[2], v[3])
    }
}

impl TryFrom<[f64; 4]> for Box2D {
    type Error = String;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        let b = Box2D::new(v[0], v[1], v[2], v[3]);
        if b.is_valid() {
            Ok(b)
        } else {
            Err(format!("invalid box {v:?}: need finite values and w, h >= 0"))
        }
    }
}

impl From<Box2D> for [f64; 4] {
    fn from(b: Box2D) -> Self {
        b.to_array()
    }
}

/// `T` time-aligned boxes, serialized as a `T×4` nested list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxSequence {
    pub boxes: Vec<Box2D>,
}

impl BoxSequence {
    pub fn new(boxes: Vec<Box2D>) -> Self {
        Self { boxes }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Box2D> {
        self.boxes.iter()
    }

    /// Row-major `T×4` flattening.
    pub fn to_flat(&self) -> Vec<f64> {
        self.boxes.iter().flat_map(|b| b.to_array()).collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        Self::new(
            values
                .chunks_exact(4)
                .map(|c| Box2D::new(c[0], c[1], c[2], c[3]))
                .collect(),
        )
    }
}

impl std::ops::Index<usize> for BoxSequence {
    type Output = Box2D;
    fn index(&self, i: usize) -> &Box2D {
        &self.boxes[i]
    }
}

impl FromIterator<Box2D> for BoxSequence {
    fn from_iter<I: IntoIterator<Item = Box2D>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// 3D box with yaw-only orientation (rotation about the vertical Y axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    pub yaw: f64,
}

impl OrientedBox {
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (s, c) = self.yaw.sin_cos();
        let h = self.half_extents;
        std::array::from_fn(|i| {
            let lx = if i & 1 == 0 { -h.x } else { h.x };
            let ly = if i & 2 == 0 { -h.y } else { h.y };
            let lz = if i & 4 == 0 { -h.z } else { h.z };
            // Yaw about +Y.
            let x = c * lx + s * lz;
            let z = -s * lx + c * lz;
            self.center + Vector3::new(x, ly, z)
        })
    }
}
