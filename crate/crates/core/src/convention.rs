//! Shared frame and indexing conventions.
//!
//! Everything lives in the sagittal plane, treated as an ordinary 2D plane:
//! `x` points forward, `z` points up, and angles are measured
//! counterclockwise from `+x` toward `+z`. A body rotated by `theta` maps a
//! local offset `(a, b)` to world via
//!
//! ```text
//! world = origin + [cos t, -sin t; sin t, cos t] * (a, b)
//! ```
//!
//! Angular velocity `w` moves an attached point at `w * perp(r)` where
//! `perp(a, b) = (-b, a)`, and the scalar cross product is
//! `cross(a, b) = a.x * b.z - a.z * b.x`, so the torque of a force `f`
//! applied at arm `r` is `cross(r, f)`.
//!
//! Generalized coordinates are ordered `[base_x, base_z, base_pitch,
//! joint_0, joint_1, ...]` with joints in model-file declaration order. All
//! link frames are world-aligned at `q = 0`: leg links extend in `-z`, the
//! torso extends in `+z`, and a positive joint angle pitches the child link
//! counterclockwise (so a human-like knee bends with a *negative* knee
//! angle). Gravity acts along `-z`.

/// Generalized-coordinate index of the base `x` translation.
pub const BASE_X: usize = 0;
/// Generalized-coordinate index of the base `z` translation.
pub const BASE_Z: usize = 1;
/// Generalized-coordinate index of the base pitch angle.
pub const BASE_PITCH: usize = 2;
/// Number of floating-base degrees of freedom.
pub const BASE_DOF: usize = 3;

/// Which leg, from the robot's own perspective.
///
/// The planar model has no lateral dimension; the two legs are kinematically
/// identical and the labels only track gait bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Left => write!(f, "left"),
            Side::Right => write!(f, "right"),
        }
    }
}
