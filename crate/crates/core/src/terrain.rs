//! Environment geometry: flat ground plus optional boulders and walls.
//!
//! Everything is expressed as a signed distance query with an outward
//! normal. Features carry a `modeled` flag so a scenario can hide obstacles
//! from the planner while the simulator still collides with them.

use crate::scalar::{Real, V2};
use serde::{Deserialize, Serialize};

fn default_true() -> bool {
    true
}

/// Circular obstacle (a buried boulder when centered below the surface).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereObstacle {
    pub center: [f64; 2],
    pub radius: f64,
    /// Whether the planner's contact model sees this feature.
    #[serde(default)]
    pub modeled: bool,
}

/// Vertical wall at `x`. `facing = -1.0` means the surface faces `-x`
/// (free space lies at smaller `x`), `+1.0` the opposite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Wall {
    pub x: f64,
    pub facing: f64,
    #[serde(default = "default_true")]
    pub modeled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Terrain {
    /// Height of the flat ground plane.
    #[serde(default)]
    pub ground: f64,
    #[serde(default)]
    pub spheres: Vec<SphereObstacle>,
    #[serde(default)]
    pub walls: Vec<Wall>,
}

impl Default for Terrain {
    fn default() -> Self {
        Terrain { ground: 0.0, spheres: Vec::new(), walls: Vec::new() }
    }
}

impl Terrain {
    pub fn flat() -> Terrain {
        Terrain::default()
    }

    /// Signed distance from `p` to the nearest surface and the outward
    /// (into free space) unit normal there. Generic so the optimizer can
    /// push dual numbers through it.
    pub fn query<T: Real>(&self, p: V2<T>) -> (T, V2<T>) {
        let mut best = p.z - T::constant(self.ground);
        let mut normal = V2::from_f64(0.0, 1.0);
        for s in &self.spheres {
            let d = p - V2::from_f64(s.center[0], s.center[1]);
            let dist = d.norm();
            let phi = dist - T::constant(s.radius);
            if phi.value() < best.value() {
                best = phi;
                // Sphere centers never coincide with query points in
                // practice; guard the degenerate case anyway.
                normal = if dist.value() > 1e-12 {
                    d.scale(T::one() / dist)
                } else {
                    V2::from_f64(0.0, 1.0)
                };
            }
        }
        for w in &self.walls {
            let phi = (p.x - T::constant(w.x)) * T::constant(w.facing);
            if phi.value() < best.value() {
                best = phi;
                normal = V2::from_f64(w.facing, 0.0);
            }
        }
        (best, normal)
    }

    /// Convenience `f64` query.
    pub fn query_f64(&self, x: f64, z: f64) -> (f64, V2<f64>) {
        self.query(V2::new(x, z))
    }

    /// The terrain as the planner believes it to be: unmodeled features
    /// stripped out.
    pub fn modeled_view(&self) -> Terrain {
        Terrain {
            ground: self.ground,
            spheres: self.spheres.iter().filter(|s| s.modeled).cloned().collect(),
            walls: self.walls.iter().filter(|w| w.modeled).cloned().collect(),
        }
    }

    /// Surface height directly above/below `x`, considering ground and
    /// spheres (walls excluded). Used for terrain statistics in logs.
    pub fn height_at(&self, x: f64) -> f64 {
        let mut h = self.ground;
        for s in &self.spheres {
            let dx = x - s.center[0];
            if dx.abs() < s.radius {
                let top = s.center[1] + (s.radius * s.radius - dx * dx).sqrt();
                h = h.max(top);
            }
        }
        h
    }
}
