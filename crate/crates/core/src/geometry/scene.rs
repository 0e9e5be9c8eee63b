use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OrientedBox;

/// Fronto-parallel rectangular panel standing on the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub x0: f64,
    pub x1: f64,
    /// Y of the top edge; the panel extends down to the ground.
    pub y_top: f64,
    pub z: f64,
}

/// Sampling ranges for synthetic scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Ground plane height (Y grows downward, the reference camera is at 0).
    pub ground_y: f64,
    pub wall_z: (f64, f64),
    pub landmark_count: (usize, usize),
    pub landmark_z: (f64, f64),
    pub object_z: (f64, f64),
    pub object_x: (f64, f64),
    pub half_width: (f64, f64),
    pub half_height: (f64, f64),
    pub half_depth: (f64, f64),
    /// Ground-plane travel distance of the object over the clip.
    pub travel: (f64, f64),
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            ground_y: 1.5,
            wall_z: (12.0, 16.0),
            landmark_count: (2, 6),
            landmark_z: (8.5, 11.0),
            object_z: (3.8, 7.0),
            object_x: (-1.6, 1.6),
            half_width: (0.2, 0.55),
            half_height: (0.3, 0.85),
            half_depth: (0.15, 0.5),
            travel: (0.6, 2.6),
        }
    }
}

/// Static background (ground plane, back wall, landmark panels) plus one
/// object moving on the ground.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub ground_y: f64,
    pub wall_z: f64,
    pub landmarks: Vec<Landmark>,
    pub object_path: Vec<OrientedBox>,
    pub seed: u64,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl Scene {
    pub fn generate(seed: u64, frames: usize, params: &SceneParams) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wall_z = uniform(&mut rng, params.wall_z);
        let (lo, hi) = params.landmark_count;
        let n_landmarks = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let landmarks = (0..n_landmarks)
            .map(|_| {
                let z = uniform(&mut rng, params.landmark_z);
                let xc = rng.random_range(-0.6..0.6) * z;
                let hw = rng.random_range(0.3..1.2);
                let height = rng.random_range(0.8..3.5);
                Landmark {
                    x0: xc - hw,
                    x1: xc + hw,
                    y_top: params.ground_y - height,
                    z,
                }
            })
            .collect();

        let half = Vector3::new(
            uniform(&mut rng, params.half_width),
            uniform(&mut rng, params.half_height),
            uniform(&mut rng, params.half_depth),
        );
        let start_z = uniform(&mut rng, params.object_z);
        let start = Vector3::new(
            uniform(&mut rng, params.object_x) * start_z / 5.0,
            params.ground_y - half.y,
            start_z,
        );
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let travel = uniform(&mut rng, params.travel);
        let mut end = start + Vector3::new(heading.cos(), 0.0, heading.sin()) * travel;
        end.z = end.z.clamp(params.object_z.0, params.object_z.1);
        // Bend the path through a jittered midpoint (quadratic Bezier).
        let mid = 0.5 * (start + end)
            + Vector3::new(rng.random_range(-0.5..0.5), 0.0, rng.random_range(-0.5..0.5));
        let yaw0 = rng.random_range(-0.6..0.6);
        let yaw1 = yaw0 + rng.random_range(-0.6..0.6);

        let last = (frames.max(2) - 1) as f64;
        let object_path = (0..frames)
            .map(|t| {
                let s = t as f64 / last;
                let c = (1.0 - s) * (1.0 - s) * start + 2.0 * s * (1.0 - s) * mid + s * s * end;
                OrientedBox {
                    center: Vector3::new(c.x, params.ground_y - half.y, c.z),
                    half_extents: half,
                    yaw: yaw0 + s * (yaw1 - yaw0),
                }
            })
            .collect();

        Scene {
            ground_y: params.ground_y,
            wall_z,
            landmarks,
            object_path,
            seed,
        }
    }

    pub fn frames(&self) -> usize {
        self.object_path.len()
    }

    /// First hit of the static background along `origin + s·dir`, `s > 0`.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Vector3<f64>> {
        let mut best: Option<f64> = None;
        let mut consider = |s: f64| {
            if s > 1e-12 && best.is_none_or(|b| s < b) {
                best = Some(s);
            }
        };
        if dir.y.abs() > 1e-15 {
            let s = (self.ground_y - origin.y) / dir.y;
            consider(s);
        }
        if dir.z.abs() > 1e-15 {
            consider((self.wall_z - origin.z) / dir.z);
            for lm in &self.landmarks {
                let s = (lm.z - origin.z) / dir.z;
                if s > 0.0 {
                    let p = origin + dir * s;
                    if p.x >= lm.x0 && p.x <= lm.x1 && p.y >= lm.y_top && p.y <= self.ground_y {
                        consider(s);
                    }
                }
            }
        }
        best.map(|s| origin + dir * s)
    }

    /// Scene centroid proxy used by path construction tests.
    pub fn object_centroid(&self) -> Vector3<f64> {
        let n = self.object_path.len().max(1) as f64;
        self.object_path
            .iter()
            .fold(Vector3::zeros(), |acc, b| acc + b.center)
            / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_grounded() {
        let p = SceneParams::default();
        let a = Scene::generate(11, 24, &p);
        let b = Scene::generate(11, 24, &p);
        assert_eq!(a, b);
        assert_eq!(a.frames(), 24);
        for ob in &a.object_path {
            assert!((ob.center.y + ob.half_extents.y - p.ground_y).abs() < 1e-12);
            assert!(ob.half_extents.iter().all(|&h| h > 0.0));
        }
    }

    #[test]
    fn raycast_hits_ground_below_horizon_and_wall_above() {
        let s = Scene {
            ground_y: 1.5,
            wall_z: 10.0,
            landmarks: vec![],
            object_path: vec![],
            seed: 0,
        };
        let o = Vector3::zeros();
        let g = s.raycast(&o, &Vector3::new(0.0, 0.5, 1.0)).unwrap();
        assert!((g.y - 1.5).abs() < 1e-12 && (g.z - 3.0).abs() < 1e-12);
        let w = s.raycast(&o, &Vector3::new(0.1, -0.2, 1.0)).unwrap();
        assert!((w.z - 10.0).abs() < 1e-12);
    }

    #[test]
    fn landmark_occludes_wall() {
        let s = Scene {
            ground_y: 1.5,
            wall_z: 10.0,
            landmarks: vec![Landmark {
                x0: -1.0,
                x1: 1.0,
                y_top: -1.0,
                z: 8.0,
            }],
            object_path: vec![],
            seed: 0,
        };
        let hit = s.raycast(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((hit.z - 8.0).abs() < 1e-12);
        let miss = s.raycast(&Vector3::zeros(), &Vector3::new(0.5, 0.0, 1.0)).unwrap();
        assert!((miss.z - 10.0).abs() < 1e-12);
    }
}
