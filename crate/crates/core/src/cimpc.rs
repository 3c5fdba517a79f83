//! Receding-horizon tracker: nonlinear least squares over configurations.
//!
//! Positions at the knots are the only decision variables. Velocities come
//! from backward differences, torques from inverse dynamics, and contact
//! forces from a smooth compliant law evaluated on the configuration flow,
//! so the whole residual is a function of q alone. A damped Gauss-Newton
//! iteration with a banded normal-equations solve runs a fixed small number
//! of iterations per replan and is warm-started from the previous plan.
//!
//! The contact law here is deliberately softer than the simulator's; the
//! tracker plans through a smooth approximation while the test plant stays
//! stiff.

use crate::banded::{BandError, BandMatrix};
use crate::dynamics;
use crate::kinematics::{self, Frames};
use crate::model::RobotModel;
use crate::refgen::ReferenceTrajectory;
use crate::scalar::{smooth_max0, softplus, Dual, Real, V2};
use crate::state::WholeBodyState;
use crate::terrain::Terrain;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Smoothing half-width for the dissipation gate `max(0, 1 - d·phidot)`.
const DAMP_EPS: f64 = 0.05;

/// Compliant contact constants used inside the tracker.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ContactParams {
    pub stiffness: f64,
    /// Force smoothing length scale (m); also sets how far above the
    /// surface forces decay.
    pub smoothing: f64,
    /// Normal-velocity dissipation gain (s/m).
    pub dissipation: f64,
    pub mu: f64,
    /// Sliding regularization velocity (m/s).
    pub v_s: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        // Stiffness and smoothing are coupled: k*s sets the force right at
        // the surface (keep it a small fraction of body weight so grazing
        // contact stays gentle) while k alone sets the static sink. At
        // 2e4/0.002 a single stance foot settles ~4 mm under full load;
        // much softer than that and the planner discovers it can park the
        // swing foot in the mud and load-share instead of stepping.
        ContactParams { stiffness: 2e4, smoothing: 0.002, dissipation: 1.0, mu: 0.7, v_s: 0.1 }
    }
}

/// Horizon, weights, and solver constants.
#[derive(Debug, Clone, Serialize)]
pub struct MpcParams {
    pub n: usize,
    pub dt: f64,
    /// Per-DoF position error weights (diagonal of the state cost).
    pub w_pos: DVector<f64>,
    /// Per-DoF velocity error weights.
    pub w_vel: DVector<f64>,
    /// Per-row torque weights: control effort on actuated rows, the
    /// underactuation penalty on the rest.
    pub w_torque: DVector<f64>,
    /// Terminal state cost = this factor times the running state cost.
    pub terminal_scale: f64,
    pub contact: ContactParams,
    pub max_iters: usize,
    pub lm_init: f64,
    pub lm_grow: f64,
    pub lm_shrink: f64,
    /// Stop when the relative cost decrease drops below this.
    pub rel_tol: f64,
}

impl MpcParams {
    /// Weights keyed off joint names, with the base rows penalized instead
    /// of controlled.
    pub fn for_model(model: &RobotModel) -> Self {
        let dof = model.dof();
        let mut w_pos = DVector::zeros(dof);
        let mut w_vel = DVector::zeros(dof);
        let mut w_torque = DVector::zeros(dof);
        if !model.fixed_base {
            w_pos[0] = 1.0;
            w_pos[1] = 1.0;
            w_pos[2] = 4.0;
            w_vel[0] = 0.1;
            w_vel[1] = 0.1;
            w_vel[2] = 0.4;
            for i in 0..model.base_dof() {
                w_torque[i] = 100.0;
            }
        }
        for (j, joint) in model.joints.iter().enumerate() {
            let name = joint.name.to_lowercase();
            // Leg tracking carries most of the weight. With light planar
            // legs and only a sagittal base, weak leg costs leave whole
            // families of degenerate optima (balancing on one leg with the
            // other parked in the air, or resting the swing foot) barely
            // above the walking gait; pricing the legs firmly makes the
            // reference the only deep minimum.
            let (p, v, r) = if name.contains("hip") {
                (10.0, 0.3, 0.005)
            } else if name.contains("knee") {
                (7.5, 0.3, 0.005)
            } else if name.contains("ankle") {
                (8.0, 0.3, 0.01)
            } else if name.contains("shoulder") {
                (2.5, 0.1, 0.005)
            } else if name.contains("elbow") || name.contains("arm") {
                (1.0, 0.05, 0.005)
            } else {
                (10.0, 0.3, 0.005)
            };
            let row = model.joint_dof(j);
            w_pos[row] = p;
            w_vel[row] = v;
            w_torque[row] = if model.actuated[row] { r } else { 100.0 };
        }
        MpcParams {
            n: 25,
            dt: 0.05,
            w_pos,
            w_vel,
            w_torque,
            terminal_scale: 10.0,
            contact: ContactParams::default(),
            max_iters: 3,
            lm_init: 1e-4,
            lm_grow: 10.0,
            lm_shrink: 0.5,
            rel_tol: 1e-8,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.dt
    }
}

/// Configuration knots q_0..q_N; q_0 is the measured anchor, not a
/// decision variable.
#[derive(Debug, Clone)]
pub struct DecisionTrajectory {
    pub knots: Vec<DVector<f64>>,
}

impl DecisionTrajectory {
    pub fn from_reference(reference: &ReferenceTrajectory) -> Self {
        DecisionTrajectory { knots: reference.q.clone() }
    }

    pub fn constant(q: &DVector<f64>, n: usize) -> Self {
        DecisionTrajectory { knots: vec![q.clone(); n + 1] }
    }
}

/// Solver output. Velocities, torques, and contact forces are pure
/// functions of the knots and can be recomputed from `q` alone.
#[derive(Debug, Clone)]
pub struct PlanSolution {
    /// Knot spacing (s).
    pub dt: f64,
    pub q: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    /// Feedforward torques per interval, unactuated rows zeroed.
    pub u: Vec<DVector<f64>>,
    /// Per-interval contact forces, (tangential, normal) per point.
    pub lambda: Vec<Vec<(f64, f64)>>,
    pub cost: f64,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub history: Vec<f64>,
    /// Set when the solver could not produce a usable step and the caller
    /// should keep flying the previous plan.
    pub fallback: bool,
}

/// Contact forces as a smooth function of one knot's configuration and
/// velocity: softplus normal force gated by normal-speed dissipation,
/// regularized Coulomb friction. Returns (tangential, normal) per contact
/// point in model order.
pub fn contact_force(
    model: &RobotModel,
    terrain: &Terrain,
    q_next: &DVector<f64>,
    v_next: &DVector<f64>,
    cp: &ContactParams,
) -> Vec<(f64, f64)> {
    let fr = kinematics::frames(model, q_next.as_slice());
    let fv = kinematics::frame_velocities(model, &fr, v_next.as_slice());
    contact_terms(model, terrain, &fr, &fv, cp, None)
}

/// Shared force evaluation; when `tau` is given, also scatter -Jᵀλ into it.
fn contact_terms<T: Real>(
    model: &RobotModel,
    terrain: &Terrain,
    fr: &Frames<T>,
    fv: &kinematics::FrameVels<T>,
    cp: &ContactParams,
    mut tau: Option<&mut [T]>,
) -> Vec<(T, T)> {
    let mut out = Vec::with_capacity(model.contacts.len());
    for contact in &model.contacts {
        let l = contact.link;
        let off = V2::from_f64(contact.offset.x, contact.offset.y);
        let center = fr.pos[l] + fr.rot[l].apply(off);
        let cdot = fv.vel[l] + (center - fr.pos[l]).perp().scale(fv.w[l]);
        let (dist, n) = terrain.query(center);
        let phi = dist - T::constant(contact.radius);
        let t = V2::new(n.z, -n.x);
        let inv_s = T::constant(1.0 / cp.smoothing);
        let f_n0 = T::constant(cp.stiffness * cp.smoothing) * softplus(-phi * inv_s);
        let phidot = n.dot(cdot);
        let gate = smooth_max0(T::one() - T::constant(cp.dissipation) * phidot, DAMP_EPS);
        let f_n = f_n0 * gate;
        let vt = t.dot(cdot);
        let f_t = -(T::constant(cp.mu) * f_n * (vt * T::constant(1.0 / cp.v_s)).tanh());
        if let Some(tau) = tau.as_deref_mut() {
            let f_world = n.scale(f_n) + t.scale(f_t);
            kinematics::point_jacobian_cols(model, fr, l, center, |dof, col| {
                tau[dof] -= f_world.dot(col);
            });
        }
        out.push((f_t, f_n));
    }
    out
}

/// Inverse-dynamics torque for one interval: D(q_next)·vdot + H(q_next,
/// v_next) - Jᵀλ, with v_next and vdot formed by differences. `v_k` is the
/// velocity entering the interval (measured for the first one).
pub(crate) fn torque_at<T: Real>(
    model: &RobotModel,
    terrain: &Terrain,
    q_k: &[T],
    q_next: &[T],
    v_k: &[T],
    dt: f64,
    cp: &ContactParams,
) -> (Vec<T>, Vec<(T, T)>) {
    let inv_dt = T::constant(1.0 / dt);
    let dof = q_k.len();
    let mut v_next = vec![T::zero(); dof];
    let mut vdot = vec![T::zero(); dof];
    for i in 0..dof {
        v_next[i] = (q_next[i] - q_k[i]) * inv_dt;
        vdot[i] = (v_next[i] - v_k[i]) * inv_dt;
    }
    let mut tau = dynamics::rnea_generic(model, q_next, &v_next, &vdot);
    let fr = kinematics::frames(model, q_next);
    let fv = kinematics::frame_velocities(model, &fr, &v_next);
    let lam = contact_terms(model, terrain, &fr, &fv, cp, Some(&mut tau));
    (tau, lam)
}

/// Knot velocities and interval accelerations by differences. `v[0]` is
/// the measured velocity; `vdot[k]` covers the interval k -> k+1.
pub fn velocities_and_accelerations(
    decision: &DecisionTrajectory,
    v0: &DVector<f64>,
    dt: f64,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n = decision.knots.len() - 1;
    let mut v = Vec::with_capacity(n + 1);
    v.push(v0.clone());
    for k in 1..=n {
        v.push((&decision.knots[k] - &decision.knots[k - 1]) / dt);
    }
    let mut vdot = Vec::with_capacity(n);
    for k in 0..n {
        vdot.push((&v[k + 1] - &v[k]) / dt);
    }
    (v, vdot)
}

/// Generalized forces implied by the knots: all rows, including the
/// unactuated base rows. Also returns the contact forces per interval.
pub fn implied_torques(
    decision: &DecisionTrajectory,
    model: &RobotModel,
    terrain: &Terrain,
    v0: &DVector<f64>,
    dt: f64,
    cp: &ContactParams,
) -> (Vec<DVector<f64>>, Vec<Vec<(f64, f64)>>) {
    let n = decision.knots.len() - 1;
    let (v, _) = velocities_and_accelerations(decision, v0, dt);
    let mut u = Vec::with_capacity(n);
    let mut lam = Vec::with_capacity(n);
    for k in 0..n {
        let (tau, forces) = torque_at::<f64>(
            model,
            terrain,
            decision.knots[k].as_slice(),
            decision.knots[k + 1].as_slice(),
            v[k].as_slice(),
            dt,
            cp,
        );
        u.push(DVector::from_vec(tau));
        lam.push(forces);
    }
    (u, lam)
}

/// One residual group: a contiguous row block depending on at most three
/// knots' variables.
struct GroupEval {
    r: DVector<f64>,
    /// (knot index in 1..=N, Jacobian block rows x dof).
    blocks: Vec<(usize, DMatrix<f64>)>,
}

struct Problem<'a> {
    model: &'a RobotModel,
    terrain: &'a Terrain,
    reference: &'a ReferenceTrajectory,
    params: &'a MpcParams,
    v0: DVector<f64>,
    sq_pos: DVector<f64>,
    sq_vel: DVector<f64>,
    sq_tau: DVector<f64>,
}

impl<'a> Problem<'a> {
    fn new(
        model: &'a RobotModel,
        terrain: &'a Terrain,
        x0: &WholeBodyState,
        reference: &'a ReferenceTrajectory,
        params: &'a MpcParams,
    ) -> Self {
        assert_eq!(reference.q.len(), params.n + 1, "reference knot count");
        let sq = |w: &DVector<f64>| w.map(f64::sqrt);
        Problem {
            model,
            terrain,
            reference,
            params,
            v0: x0.v.clone(),
            sq_pos: sq(&params.w_pos),
            sq_vel: sq(&params.w_vel),
            sq_tau: sq(&params.w_torque),
        }
    }

    fn dof(&self) -> usize {
        self.model.dof()
    }

    /// Terminal knots get the scaled state weight.
    fn state_scale(&self, k: usize) -> f64 {
        if k == self.params.n {
            self.params.terminal_scale.sqrt()
        } else {
            1.0
        }
    }

    /// Residual values only, stacked [state_1..state_N, torque_0..torque_{N-1}].
    fn residual_values(&self, d: &DecisionTrajectory) -> DVector<f64> {
        let n = self.params.n;
        let dof = self.dof();
        let dt = self.params.dt;
        let mut r = DVector::zeros(n * 2 * dof + n * dof);
        for k in 1..=n {
            let scale = self.state_scale(k);
            let row = (k - 1) * 2 * dof;
            let v_k = (&d.knots[k] - &d.knots[k - 1]) / dt;
            for i in 0..dof {
                r[row + i] = scale * self.sq_pos[i] * (d.knots[k][i] - self.reference.q[k][i]);
                r[row + dof + i] = scale * self.sq_vel[i] * (v_k[i] - self.reference.v[k][i]);
            }
        }
        let base = n * 2 * dof;
        for k in 0..n {
            let v_k = if k == 0 {
                self.v0.clone()
            } else {
                (&d.knots[k] - &d.knots[k - 1]) / dt
            };
            let (tau, _) = torque_at::<f64>(
                self.model,
                self.terrain,
                d.knots[k].as_slice(),
                d.knots[k + 1].as_slice(),
                v_k.as_slice(),
                dt,
                &self.params.contact,
            );
            for i in 0..dof {
                r[base + k * dof + i] = self.sq_tau[i] * tau[i];
            }
        }
        r
    }

    /// State residual group at knot k (k in 1..=N): linear in q, assembled
    /// analytically.
    fn state_group(&self, d: &DecisionTrajectory, k: usize) -> GroupEval {
        let dof = self.dof();
        let dt = self.params.dt;
        let scale = self.state_scale(k);
        let v_k = (&d.knots[k] - &d.knots[k - 1]) / dt;
        let mut r = DVector::zeros(2 * dof);
        for i in 0..dof {
            r[i] = scale * self.sq_pos[i] * (d.knots[k][i] - self.reference.q[k][i]);
            r[dof + i] = scale * self.sq_vel[i] * (v_k[i] - self.reference.v[k][i]);
        }
        let mut jk = DMatrix::zeros(2 * dof, dof);
        for i in 0..dof {
            jk[(i, i)] = scale * self.sq_pos[i];
            jk[(dof + i, i)] = scale * self.sq_vel[i] / dt;
        }
        let mut blocks = vec![(k, jk)];
        if k >= 2 {
            let mut jp = DMatrix::zeros(2 * dof, dof);
            for i in 0..dof {
                jp[(dof + i, i)] = -scale * self.sq_vel[i] / dt;
            }
            blocks.push((k - 1, jp));
        }
        GroupEval { r, blocks }
    }

    /// Torque residual group for interval k (k in 0..N): differentiated by
    /// seeding one dual direction per dependent variable.
    fn torque_group(&self, d: &DecisionTrajectory, k: usize) -> GroupEval {
        let dof = self.dof();
        let dt = self.params.dt;
        let n = self.params.n;
        let deps: Vec<usize> =
            [k.wrapping_sub(1), k, k + 1].into_iter().filter(|&j| (1..=n).contains(&j)).collect();
        let eval = |seed: Option<(usize, usize)>| -> Vec<Dual> {
            let lift = |knot: usize| -> Vec<Dual> {
                let q = &d.knots[knot];
                (0..dof)
                    .map(|i| {
                        if seed == Some((knot, i)) {
                            Dual::var(q[i])
                        } else {
                            Dual::constant(q[i])
                        }
                    })
                    .collect()
            };
            let q_k = lift(k);
            let q_next = lift(k + 1);
            let v_k: Vec<Dual> = if k == 0 {
                self.v0.iter().map(|&x| Dual::constant(x)).collect()
            } else {
                let q_prev = lift(k - 1);
                (0..dof).map(|i| (q_k[i] - q_prev[i]) * Dual::constant(1.0 / dt)).collect()
            };
            let (tau, _) =
                torque_at::<Dual>(self.model, self.terrain, &q_k, &q_next, &v_k, dt, &self.params.contact);
            tau
        };
        let tau0 = eval(None);
        let mut r = DVector::zeros(dof);
        for i in 0..dof {
            r[i] = self.sq_tau[i] * tau0[i].value();
        }
        let mut blocks = Vec::with_capacity(deps.len());
        for &j in &deps {
            let mut block = DMatrix::zeros(dof, dof);
            for a in 0..dof {
                let tau = eval(Some((j, a)));
                for i in 0..dof {
                    block[(i, a)] = self.sq_tau[i] * tau[i].du;
                }
            }
            blocks.push((j, block));
        }
        GroupEval { r, blocks }
    }

    fn groups(&self, d: &DecisionTrajectory) -> Vec<GroupEval> {
        let n = self.params.n;
        let mut out = Vec::with_capacity(2 * n);
        for k in 1..=n {
            out.push(self.state_group(d, k));
        }
        for k in 0..n {
            out.push(self.torque_group(d, k));
        }
        out
    }
}

/// Public residual evaluation (state rows then torque rows); the cost is
/// half the squared norm.
pub fn residuals(
    model: &RobotModel,
    terrain: &Terrain,
    x0: &WholeBodyState,
    decision: &DecisionTrajectory,
    reference: &ReferenceTrajectory,
    params: &MpcParams,
) -> DVector<f64> {
    Problem::new(model, terrain, x0, reference, params).residual_values(decision)
}

pub fn cost_of(residual: &DVector<f64>) -> f64 {
    0.5 * residual.norm_squared()
}

/// Dense residual Jacobian w.r.t. the stacked decision variables
/// (q_1..q_N). Diagnostic path for gradient and sparsity checks; the
/// solver itself never forms this.
pub fn residual_jacobian_dense(
    model: &RobotModel,
    terrain: &Terrain,
    x0: &WholeBodyState,
    decision: &DecisionTrajectory,
    reference: &ReferenceTrajectory,
    params: &MpcParams,
) -> (DVector<f64>, DMatrix<f64>) {
    let prob = Problem::new(model, terrain, x0, reference, params);
    let dof = prob.dof();
    let n = params.n;
    let groups = prob.groups(decision);
    let total_rows = n * 2 * dof + n * dof;
    let mut jac = DMatrix::zeros(total_rows, n * dof);
    let mut r = DVector::zeros(total_rows);
    let mut row = 0;
    for g in &groups {
        r.rows_mut(row, g.r.len()).copy_from(&g.r);
        for (j, block) in &g.blocks {
            jac.view_mut((row, (j - 1) * dof), (g.r.len(), dof)).copy_from(block);
        }
        row += g.r.len();
    }
    (r, jac)
}

/// Shift the previous plan forward one knot, duplicate the last knot, and
/// re-anchor the first at the new measurement.
pub fn warm_start_shift(previous: &PlanSolution, q_meas: &DVector<f64>) -> DecisionTrajectory {
    let n = previous.q.len() - 1;
    let mut knots = Vec::with_capacity(n + 1);
    knots.push(q_meas.clone());
    for k in 1..=n {
        knots.push(previous.q[(k + 1).min(n)].clone());
    }
    DecisionTrajectory { knots }
}

/// Damped Gauss-Newton on the stacked residual. Runs `max_iters` Jacobian
/// builds; an accepted step must reduce the cost, otherwise the damping
/// grows and the step is retried with the same Jacobian.
pub fn solve(
    model: &RobotModel,
    terrain: &Terrain,
    x0: &WholeBodyState,
    reference: &ReferenceTrajectory,
    warm_start: &DecisionTrajectory,
    params: &MpcParams,
) -> PlanSolution {
    let prob = Problem::new(model, terrain, x0, reference, params);
    let dof = prob.dof();
    let n = params.n;
    assert_eq!(warm_start.knots.len(), n + 1, "warm start knot count");

    let mut d = warm_start.clone();
    d.knots[0] = x0.q.clone();
    let mut r = prob.residual_values(&d);
    let mut cost = cost_of(&r);
    let mut history = vec![cost];
    let mut lm = params.lm_init;
    let mut fallback = false;
    let mut iterations = 0;

    let nvars = n * dof;
    let hb = (3 * dof - 1).min(nvars.saturating_sub(1));
    'outer: for _ in 0..params.max_iters {
        iterations += 1;
        let groups = prob.groups(&d);
        let mut jtj = BandMatrix::zeros(nvars, hb);
        let mut g = vec![0.0; nvars];
        for grp in &groups {
            for (j1, b1) in &grp.blocks {
                let base1 = (j1 - 1) * dof;
                let gt = b1.transpose() * &grp.r;
                for a in 0..dof {
                    g[base1 + a] += gt[a];
                }
                for (j2, b2) in &grp.blocks {
                    if j2 > j1 {
                        continue;
                    }
                    let base2 = (j2 - 1) * dof;
                    let m = b1.transpose() * b2;
                    for a in 0..dof {
                        let row = base1 + a;
                        let bmax = if j1 == j2 { a + 1 } else { dof };
                        for b in 0..bmax {
                            jtj.add(row, base2 + b, m[(a, b)]);
                        }
                    }
                }
            }
        }
        let diag = jtj.diagonal();

        let mut retries = 0;
        loop {
            let mut damped = jtj.clone();
            let bump: Vec<f64> = diag.iter().map(|&x| lm * x.max(1e-8)).collect();
            damped.add_diagonal(&bump);
            let chol = match damped.cholesky() {
                Ok(c) => c,
                Err(BandError::NotPositiveDefinite(_)) => {
                    lm *= params.lm_grow;
                    retries += 1;
                    if retries > 12 {
                        fallback = true;
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut step = g.clone();
            chol.solve_in_place(&mut step);
            let mut trial = d.clone();
            for k in 1..=n {
                for i in 0..dof {
                    trial.knots[k][i] -= step[(k - 1) * dof + i];
                }
            }
            let r_trial = prob.residual_values(&trial);
            let cost_trial = cost_of(&r_trial);
            if cost_trial.is_finite() && cost_trial <= cost {
                let rel = (cost - cost_trial) / cost.max(1e-300);
                d = trial;
                r = r_trial;
                cost = cost_trial;
                history.push(cost);
                lm = (lm * params.lm_shrink).max(1e-12);
                if rel < params.rel_tol {
                    break 'outer;
                }
                break;
            }
            lm *= params.lm_grow;
            retries += 1;
            if retries > 12 {
                // no usable step from this Jacobian; keep the current
                // iterate and stop early
                break 'outer;
            }
        }
    }
    let _ = r;

    let (v, _) = velocities_and_accelerations(&d, &prob.v0, params.dt);
    let (mut u, lambda) = implied_torques(&d, model, terrain, &prob.v0, params.dt, &params.contact);
    for tau in &mut u {
        model.apply_actuation(tau);
    }
    PlanSolution { dt: params.dt, q: d.knots, v, u, lambda, cost, iterations, history, fallback }
}
