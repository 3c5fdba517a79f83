//! Hybrid linear inverted pendulum: the reduced-order gait model.
//!
//! During single support the COM obeys `pdot = v`, `vdot = w^2 p` with
//! `w = sqrt(g / z0)` and `p` measured from the stance foot. A step of
//! length `u` instantaneously re-references `p` to the new stance foot and
//! leaves the velocity untouched. Composing one support phase with one
//! reset gives linear step-to-step dynamics in the pre-impact state, and a
//! deadbeat foot-placement gain kills tracking error in two steps.

use nalgebra::{Matrix2, RowVector2, Vector2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HlipError {
    #[error("pendulum parameters must be positive (t_ssp, z0, gravity)")]
    BadParams,
    #[error("phase {phase} outside single-support duration {t_ssp}")]
    PhaseOutOfRange { phase: f64, t_ssp: f64 },
}

/// Reduced-model parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct HlipParams {
    /// Single-support duration per step.
    pub t_ssp: f64,
    /// Nominal COM height.
    pub z0: f64,
    pub gravity: f64,
}

impl Default for HlipParams {
    fn default() -> Self {
        HlipParams { t_ssp: 0.35, z0: 0.62, gravity: 9.81 }
    }
}

impl HlipParams {
    pub fn omega(&self) -> f64 {
        (self.gravity / self.z0).sqrt()
    }

    fn check(&self) -> Result<(), HlipError> {
        if self.t_ssp > 0.0 && self.z0 > 0.0 && self.gravity > 0.0 {
            Ok(())
        } else {
            Err(HlipError::BadParams)
        }
    }
}

/// COM position (relative to the stance foot) and velocity.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct HlipState {
    pub pos: f64,
    pub vel: f64,
}

/// Closed-form single-support flow for time `t`.
pub fn ssp_flow(x: HlipState, t: f64, p: &HlipParams) -> HlipState {
    let w = p.omega();
    let (c, s) = ((w * t).cosh(), (w * t).sinh());
    HlipState { pos: c * x.pos + s * x.vel / w, vel: w * s * x.pos + c * x.vel }
}

/// Reset map for a step of length `u`: position re-references to the new
/// stance foot, velocity is continuous.
pub fn reset(x: HlipState, u: f64) -> HlipState {
    HlipState { pos: x.pos - u, vel: x.vel }
}

/// Step-to-step dynamics of the pre-impact state:
/// `x_next = A x + B u` where one step is reset-then-flow.
pub fn s2s_matrices(p: &HlipParams) -> (Matrix2<f64>, Vector2<f64>) {
    let w = p.omega();
    let (c, s) = ((w * p.t_ssp).cosh(), (w * p.t_ssp).sinh());
    let a = Matrix2::new(c, s / w, w * s, c);
    let b = Vector2::new(-c, -w * s);
    (a, b)
}

/// Foot-placement gain `K` such that `A + B K` has both eigenvalues at
/// zero, by solving the trace/determinant placement conditions (both are
/// linear in `K` for a rank-one `B K`).
pub fn deadbeat_gain(p: &HlipParams) -> Result<RowVector2<f64>, HlipError> {
    p.check()?;
    let (a, b) = s2s_matrices(p);
    // trace(A + BK) = trA + b1 k1 + b2 k2
    // det(A + BK)   = detA + (a22 b1 - a12 b2) k1 + (a11 b2 - a21 b1) k2
    let m = Matrix2::new(
        b[0],
        b[1],
        a[(1, 1)] * b[0] - a[(0, 1)] * b[1],
        a[(0, 0)] * b[1] - a[(1, 0)] * b[0],
    );
    let rhs = Vector2::new(-(a[(0, 0)] + a[(1, 1)]), -a.determinant());
    let k = m.lu().solve(&rhs).ok_or(HlipError::BadParams)?;
    Ok(RowVector2::new(k[0], k[1]))
}

/// Periodic gait at average velocity `v_des`: returns the pre-impact state
/// of the orbit and the nominal step length.
pub fn desired_preimpact(v_des: f64, p: &HlipParams) -> (HlipState, f64) {
    let w = p.omega();
    let u = v_des * p.t_ssp;
    let x = w * p.t_ssp / 2.0;
    // flow from (-u/2, v) back to (u/2, v) over one support phase
    let vel = (u / 2.0) * w * (x.cosh() / x.sinh()).max(f64::MIN_POSITIVE);
    let vel = if u == 0.0 { 0.0 } else { vel };
    (HlipState { pos: u / 2.0, vel }, u)
}

/// One single-support interval of a plan.
#[derive(Debug, Clone, Copy)]
pub struct HlipStep {
    pub index: usize,
    /// Plan-relative start/end times; the first step starts mid-phase when
    /// the plan is seeded inside a support interval.
    pub start: f64,
    pub end: f64,
    /// Time already spent in this support phase at `start`.
    pub phase_at_start: f64,
    /// Reduced state at `start`.
    pub x_start: HlipState,
    /// World x of the stance foot during this interval.
    pub stance_pos: f64,
    /// Foot placement applied at the end of this support phase (planned
    /// even if the horizon truncates the interval).
    pub step_length: f64,
}

impl HlipStep {
    /// Where the swing foot is meant to land: the next stance position.
    pub fn swing_target(&self) -> f64 {
        self.stance_pos + self.step_length
    }
}

/// A horizon's worth of piecewise pendulum flow.
#[derive(Debug, Clone)]
pub struct HlipSolution {
    pub steps: Vec<HlipStep>,
    pub horizon: f64,
    pub params: HlipParams,
}

impl HlipSolution {
    pub fn step_at(&self, t: f64) -> &HlipStep {
        self.steps
            .iter()
            .rev()
            .find(|s| t >= s.start - 1e-12)
            .unwrap_or(&self.steps[0])
    }

    /// Reduced state at plan-relative time `t`.
    pub fn state_at(&self, t: f64) -> HlipState {
        let s = self.step_at(t);
        ssp_flow(s.x_start, t - s.start, &self.params)
    }

    /// World COM x at plan-relative time `t`.
    pub fn com_x_at(&self, t: f64) -> f64 {
        let s = self.step_at(t);
        s.stance_pos + self.state_at(t).pos
    }
}

/// Roll the pendulum out over `horizon`, choosing each step length by the
/// deadbeat law around the `v_des` orbit. `phase` is the time already spent
/// in the current support interval, `stance_pos` the current stance foot x.
pub fn plan(
    x0: HlipState,
    stance_pos: f64,
    phase: f64,
    v_des: f64,
    horizon: f64,
    p: &HlipParams,
) -> Result<HlipSolution, HlipError> {
    p.check()?;
    if !(0.0..p.t_ssp).contains(&phase) {
        return Err(HlipError::PhaseOutOfRange { phase, t_ssp: p.t_ssp });
    }
    let k = deadbeat_gain(p)?;
    let (x_star, u_star) = desired_preimpact(v_des, p);

    let mut steps = Vec::new();
    let mut t = 0.0;
    let mut x = x0;
    let mut stance = stance_pos;
    let mut phase_in = phase;
    let mut index = 0;
    while t < horizon - 1e-12 {
        let remaining = p.t_ssp - phase_in;
        let x_pre = ssp_flow(x, remaining, p);
        let err = Vector2::new(x_pre.pos - x_star.pos, x_pre.vel - x_star.vel);
        let u = u_star + (k * err)[0];
        steps.push(HlipStep {
            index,
            start: t,
            end: (t + remaining).min(horizon),
            phase_at_start: phase_in,
            x_start: x,
            stance_pos: stance,
            step_length: u,
        });
        x = reset(x_pre, u);
        stance += u;
        t += remaining;
        phase_in = 0.0;
        index += 1;
    }
    if let Some(last) = steps.last_mut() {
        last.end = horizon;
    }
    Ok(HlipSolution { steps, horizon, params: *p })
}
