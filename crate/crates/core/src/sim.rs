//! Ground-truth plant: stiff penalty contact, semi-implicit integration,
//! and the disturbance / model-error / sensor-noise injection the
//! experiments need.
//!
//! The contact law here is intentionally unlike the tracker's: hard zero
//! force outside penetration, stiff spring-damper inside, a linear
//! stiction band instead of a tanh. The controller never sees these
//! constants.

use crate::dynamics;
use crate::kinematics::{self, ContactKinematics};
use crate::model::RobotModel;
use crate::state::WholeBodyState;
use crate::terrain::Terrain;
use nalgebra::{DVector, Vector2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimParams {
    pub dt: f64,
    pub stiffness: f64,
    /// Normal-velocity damping (N·s/m) inside penetration.
    pub damping: f64,
    pub mu: f64,
    /// Half-width of the linear stiction band (m/s); slip speeds beyond
    /// this see full Coulomb friction.
    pub v_stick: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams { dt: 1e-3, stiffness: 1e5, damping: 500.0, mu: 0.8, v_stick: 0.02 }
    }
}

/// External push: a force applied at a point fixed in the base frame over
/// a time window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Disturbance {
    pub force: [f64; 2],
    #[serde(default)]
    pub point: [f64; 2],
    pub start: f64,
    pub duration: f64,
}

impl Disturbance {
    pub fn active_at(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_x: f64,
    pub sigma_m: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { sigma_x: 0.0, sigma_m: 0.0, seed: 0 }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("state went non-finite at t = {t:.4}s; q = {q:?}, v = {v:?}")]
    NonFinite { t: f64, q: Vec<f64>, v: Vec<f64> },
    #[error("dynamics: {0}")]
    Dynamics(#[from] dynamics::DynamicsError),
}

/// What one integration step applied: accelerations, per-point contact
/// forces, and the world-frame force totals the momentum audit compares
/// against.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub vdot: DVector<f64>,
    /// (tangential, normal) per contact point, simulator law.
    pub contact: Vec<(f64, f64)>,
    /// Sum of world-frame contact forces.
    pub contact_total: Vector2<f64>,
    /// Sum of world-frame disturbance forces.
    pub disturbance_total: Vector2<f64>,
}

/// Stiff spring-damper normal force with a linear stiction band, exactly
/// zero outside penetration.
pub fn contact_forces(
    ck: &ContactKinematics,
    params: &SimParams,
) -> Vec<(f64, f64)> {
    ck.points
        .iter()
        .map(|pt| {
            if pt.phi >= 0.0 {
                return (0.0, 0.0);
            }
            let phidot = pt.normal.dot(&pt.vel);
            let f_n = (params.stiffness * (-pt.phi) - params.damping * phidot).max(0.0);
            let vt = pt.tangent.dot(&pt.vel);
            let slip = (vt / params.v_stick).clamp(-1.0, 1.0);
            (-params.mu * f_n * slip, f_n)
        })
        .collect()
}

/// Generalized force of a push applied at a base-frame point.
fn disturbance_torque(
    model: &RobotModel,
    q: &DVector<f64>,
    d: &Disturbance,
) -> (DVector<f64>, Vector2<f64>) {
    let mut tau = DVector::zeros(model.dof());
    let f = Vector2::new(d.force[0], d.force[1]);
    if model.fixed_base {
        return (tau, f);
    }
    let rot = nalgebra::Rotation2::new(q[2]);
    let arm = rot * Vector2::new(d.point[0], d.point[1]);
    tau[0] = f.x;
    tau[1] = f.y;
    tau[2] = arm.x * f.y - arm.y * f.x;
    (tau, f)
}

/// One semi-implicit Euler step: accelerations from the current state,
/// velocity update, then position update with the new velocity.
pub fn step(
    model: &RobotModel,
    terrain: &Terrain,
    state: &mut WholeBodyState,
    u_tot: &DVector<f64>,
    params: &SimParams,
    disturbances: &[Disturbance],
    t: f64,
) -> Result<StepInfo, SimError> {
    let ck = kinematics::contact_kinematics(model, terrain, &state.q, &state.v);
    let contact = contact_forces(&ck, params);

    let mut rhs = u_tot.clone();
    model.apply_actuation(&mut rhs);
    rhs += ck.generalized_force(&contact);
    let mut disturbance_total = Vector2::zeros();
    for d in disturbances {
        if d.active_at(t) {
            let (tau, f) = disturbance_torque(model, &state.q, d);
            rhs += tau;
            disturbance_total += f;
        }
    }
    rhs -= dynamics::bias_forces(model, &state.q, &state.v);
    let vdot = dynamics::solve_mass(model, &state.q, rhs)?;

    state.v += &vdot * params.dt;
    state.q += &state.v * params.dt;
    if !state.is_finite() {
        return Err(SimError::NonFinite {
            t,
            q: state.q.iter().copied().collect(),
            v: state.v.iter().copied().collect(),
        });
    }
    let mut contact_total = Vector2::zeros();
    for (pt, &(ft, fn_)) in ck.points.iter().zip(&contact) {
        contact_total += pt.normal * fn_ + pt.tangent * ft;
    }
    Ok(StepInfo { vdot, contact, contact_total, disturbance_total })
}

/// Independent mass scaling per link, inertia scaled with it. The draw is
/// clamped at zero so masses stay physical.
pub fn perturb_model(model: &RobotModel, sigma_m: f64, seed: u64) -> RobotModel {
    let mut out = model.clone();
    if sigma_m == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(1.0, sigma_m).expect("sigma_m >= 0");
    for link in &mut out.links {
        let eps = dist.sample(&mut rng).max(0.0);
        link.mass *= eps;
        link.inertia *= eps;
    }
    out
}

/// Additive Gaussian noise on every state component, deterministic per
/// (seed, tick).
pub fn noisy_estimate(state: &WholeBodyState, sigma_x: f64, seed: u64, tick: u64) -> WholeBodyState {
    if sigma_x == 0.0 {
        return state.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tick.wrapping_add(1));
    let dist = Normal::new(0.0, sigma_x).expect("sigma_x >= 0");
    let mut out = state.clone();
    for x in out.q.iter_mut().chain(out.v.iter_mut()) {
        *x += dist.sample(&mut rng);
    }
    out
}
