//! Closed-loop harness: scenario configs, the layered controller running at
//! the replanning rate, the lockstep simulation loop, sweeps over pushes and
//! model error, and log analysis (contact schedules, speed tracking).

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cimpc::{self, ContactParams, DecisionTrajectory, MpcParams, PlanSolution};
use crate::convention::{Side, BASE_DOF};
use crate::dynamics;
use crate::hlip::{self, HlipParams, HlipState};
use crate::kinematics;
use crate::model::{ModelError, RobotModel};
use crate::refgen::{self, CommandVector, GaitRef, RefGenError, RefGenParams, StanceTag};
use crate::sim::{self, Disturbance, NoiseModel, SimParams};
use crate::state::WholeBodyState;
use crate::terrain::{SphereObstacle, Terrain};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    RefGen(#[from] RefGenError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Which layers of the stack are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerKind {
    /// Reduced-order plan tracked by joint PD on the IK reference, with a
    /// static gravity feedforward. No trajectory optimization.
    #[serde(rename = "hlip-only")]
    HlipOnly,
    /// Trajectory optimization against a standing pose translated at the
    /// commanded velocity. No reduced-order footstep plan.
    #[serde(rename = "cimpc-only")]
    CimpcOnly,
    #[serde(rename = "combined")]
    Combined,
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControllerKind::HlipOnly => write!(f, "hlip-only"),
            ControllerKind::CimpcOnly => write!(f, "cimpc-only"),
            ControllerKind::Combined => write!(f, "combined"),
        }
    }
}

/// One piece of a piecewise-constant command profile: `command` holds until
/// time `until` (seconds from scenario start).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandSegment {
    /// End of this segment; omit (or use a huge value) to hold forever.
    #[serde(default = "forever")]
    pub until: f64,
    pub command: CommandVector,
}

fn forever() -> f64 {
    f64::MAX
}

pub fn command_at(segments: &[CommandSegment], t: f64) -> CommandVector {
    segments
        .iter()
        .find(|s| t < s.until)
        .or(segments.last())
        .map(|s| s.command.clone())
        .unwrap_or_default()
}

/// Joint-space PD gains applied on top of the feedforward torque. The
/// scalars are the proximal-joint (hip/knee) values; distal joints run
/// lighter, see [`JointGains::resolve`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LowLevelGains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for LowLevelGains {
    fn default() -> Self {
        LowLevelGains { kp: 300.0, kd: 12.0 }
    }
}

/// Per-dof diagonal gains.
#[derive(Debug, Clone)]
pub struct JointGains {
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
}

impl JointGains {
    /// Scale the base gains per joint type. Distal links are light (foot
    /// inertia ~1e-3); explicit integration of joint damping is only stable
    /// for kd < ~2 I / dt, so ankles and shoulders get a fraction of the
    /// proximal damping rather than the full value.
    pub fn resolve(model: &RobotModel, g: &LowLevelGains) -> Self {
        let mut kp = DVector::zeros(model.dof());
        let mut kd = DVector::zeros(model.dof());
        for (j, joint) in model.joints.iter().enumerate() {
            let (sp, sd) = if joint.name.contains("ankle") {
                (0.2, 0.05)
            } else if joint.name.contains("shoulder") {
                (0.33, 0.25)
            } else {
                (1.0, 1.0)
            };
            let r = model.joint_dof(j);
            kp[r] = g.kp * sp;
            kd[r] = g.kd * sd;
        }
        JointGains { kp, kd }
    }
}

/// Scenario-level overrides for the tracker; anything unset keeps the
/// model-derived defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcOverrides {
    pub iterations: Option<usize>,
    pub horizon: Option<usize>,
    pub knot_dt: Option<f64>,
    pub contact: Option<ContactParams>,
}

impl MpcOverrides {
    fn apply(&self, p: &mut MpcParams) {
        if let Some(it) = self.iterations {
            p.max_iters = it;
        }
        if let Some(n) = self.horizon {
            p.n = n;
        }
        if let Some(dt) = self.knot_dt {
            p.dt = dt;
        }
        if let Some(c) = &self.contact {
            p.contact = c.clone();
        }
    }
}

/// Procedurally seeded unmodeled bumps along a corridor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoughSpec {
    pub seed: u64,
    pub from: f64,
    pub to: f64,
}

/// Everything a run needs, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    /// Model file path, resolved relative to the scenario file when loaded
    /// from disk.
    pub model: String,
    pub duration: f64,
    pub controller: ControllerKind,
    pub commands: Vec<CommandSegment>,
    pub terrain: Terrain,
    pub rough: Option<RoughSpec>,
    pub disturbances: Vec<Disturbance>,
    pub noise: NoiseModel,
    pub sim: SimParams,
    pub hlip: HlipParams,
    pub refgen: RefGenParams,
    pub mpc: MpcOverrides,
    pub gains: LowLevelGains,
    /// Held arm posture (radians per arm joint); empty means zeros.
    pub arm_pose: Vec<f64>,
    /// Replanning period; must be an integer multiple of `sim.dt`.
    pub control_period: f64,
    /// Keep every k-th tick record in the log.
    pub log_every: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            model: "models/biped.model".into(),
            duration: 10.0,
            controller: ControllerKind::Combined,
            commands: vec![CommandSegment { until: forever(), command: CommandVector::default() }],
            terrain: Terrain::flat(),
            rough: None,
            disturbances: Vec::new(),
            noise: NoiseModel::default(),
            // lighter contact damping than the module default: the foot
            // rotates its contact spheres with ~0.15 kg effective mass, and
            // explicit damping is only stable below ~2 m_eff / dt
            sim: SimParams { damping: 80.0, ..SimParams::default() },
            hlip: HlipParams::default(),
            refgen: RefGenParams::default(),
            mpc: MpcOverrides::default(),
            gains: LowLevelGains::default(),
            arm_pose: Vec::new(),
            control_period: 0.02,
            log_every: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ScenarioConfig = serde_json::from_str(&text)?;
        // resolve the model path against the scenario's own directory
        let model_path = Path::new(&cfg.model);
        if model_path.is_relative() {
            if let Some(dir) = path.parent() {
                let local = dir.join(model_path);
                if local.exists() {
                    cfg.model = local.to_string_lossy().into_owned();
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.commands.is_empty() {
            return Err(HarnessError::Config("empty command profile".into()));
        }
        if self.duration <= 0.0 {
            return Err(HarnessError::Config("nonpositive duration".into()));
        }
        let sub = self.control_period / self.sim.dt;
        if (sub - sub.round()).abs() > 1e-9 || sub < 1.0 {
            return Err(HarnessError::Config(format!(
                "control period {} is not an integer multiple of sim dt {}",
                self.control_period, self.sim.dt
            )));
        }
        if self.log_every == 0 {
            return Err(HarnessError::Config("log_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.control_period / self.sim.dt).round() as usize
    }

    /// Full simulation terrain: configured features plus any seeded bumps.
    pub fn build_terrain(&self) -> Terrain {
        let mut t = self.terrain.clone();
        if let Some(r) = &self.rough {
            t.spheres.extend(rough_bumps(r.seed, r.from, r.to, t.ground));
        }
        t
    }
}

/// Unmodeled terrain bumps: partially buried spheres scattered along
/// `[from, to]`, exposed height 20-60% of the radius.
pub fn rough_bumps(seed: u64, from: f64, to: f64, ground: f64) -> Vec<SphereObstacle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e11);
    let mut out = Vec::new();
    let mut x = from;
    loop {
        x += rng.random_range(0.15..0.45);
        if x >= to {
            break;
        }
        let r = rng.random_range(0.02..0.06);
        let exposed = r * rng.random_range(0.2..0.6);
        out.push(SphereObstacle { center: [x, ground + exposed - r], radius: r, modeled: false });
    }
    out
}

/// World sole pose of one foot: position of the sole point under the ankle
/// and the foot pitch.
pub fn sole_pose(model: &RobotModel, q: &DVector<f64>, side: Side) -> Result<(Vector2<f64>, f64), ModelError> {
    let leg = model.leg(side)?;
    let fk = kinematics::forward_kinematics(model, q);
    let ankle = fk.links[leg.foot_link].pos;
    let pitch = fk.links[leg.foot_link].ang;
    let r = nalgebra::Rotation2::new(pitch);
    Ok((ankle - r * Vector2::new(0.0, leg.sole_height), pitch))
}

/// Support-phase clock. Stance alternates every `t_ssp` on the clock; the
/// lift-off pose of the new swing foot is recorded at each switch.
#[derive(Debug, Clone, Serialize)]
pub struct GaitState {
    pub stance: Side,
    /// Time into the current support interval.
    pub phase: f64,
    /// World (x, z) the current swing sole lifted off from.
    pub swing_origin: (f64, f64),
    pub steps: usize,
}

impl GaitState {
    pub fn new(model: &RobotModel, q: &DVector<f64>) -> Result<Self, ModelError> {
        let (sw, _) = sole_pose(model, q, Side::Right)?;
        Ok(GaitState { stance: Side::Left, phase: 0.0, swing_origin: (sw.x, sw.y), steps: 0 })
    }

    /// Advance the clock by `dt`; on rollover, swap stance and record where
    /// the vacated foot lifted off (from `q`).
    pub fn advance(&mut self, dt: f64, t_ssp: f64, model: &RobotModel, q: &DVector<f64>) -> Result<(), ModelError> {
        self.phase += dt;
        while self.phase >= t_ssp {
            self.phase -= t_ssp;
            let vacated = self.stance;
            self.stance = vacated.other();
            let (sole, _) = sole_pose(model, q, vacated)?;
            self.swing_origin = (sole.x, sole.y);
            self.steps += 1;
        }
        Ok(())
    }
}

/// Interpolate the active plan at `t` since its solve and close the loop
/// with joint PD around the interpolated setpoints: feedforward torque is
/// held zero-order, position and velocity references linearly. Torques are
/// clamped to the model limits. The flag reports `t` past the horizon end
/// (the plan is then held at its last knot).
pub fn low_level_control(
    model: &RobotModel,
    plan: &PlanSolution,
    t: f64,
    measured: &WholeBodyState,
    gains: &JointGains,
) -> (DVector<f64>, bool) {
    let n = plan.u.len();
    let beyond = t > n as f64 * plan.dt + 1e-9;
    let s = (t / plan.dt).clamp(0.0, n as f64);
    let i = (s.floor() as usize).min(n - 1);
    let frac = s - i as f64;
    let q_des = &plan.q[i] * (1.0 - frac) + &plan.q[i + 1] * frac;
    let v_des = &plan.v[i] * (1.0 - frac) + &plan.v[i + 1] * frac;
    let u_ff = &plan.u[i];

    let mut u = DVector::zeros(model.dof());
    for (j, joint) in model.joints.iter().enumerate() {
        let r = model.joint_dof(j);
        if !model.actuated[r] {
            continue;
        }
        let cmd =
            u_ff[r] - gains.kp[r] * (measured.q[r] - q_des[r]) - gains.kd[r] * (measured.v[r] - v_des[r]);
        u[r] = cmd.clamp(-joint.torque_limit, joint.torque_limit);
    }
    (u, beyond)
}

/// Static feedforward for the PD-tracked baseline: gravity-compensating
/// torques at `q` with the support wrench distributed minimum-norm over the
/// feet the stance annotation says are down.
fn static_feedforward(model: &RobotModel, terrain: &Terrain, q: &DVector<f64>, tag: StanceTag) -> DVector<f64> {
    let zero = DVector::zeros(model.dof());
    let mut u = dynamics::rnea(model, q, &zero, &zero);
    let ck = kinematics::contact_kinematics(model, terrain, q, &zero);
    let feet: Vec<usize> = [Side::Left, Side::Right]
        .iter()
        .filter(|s| match tag {
            StanceTag::Double => true,
            StanceTag::Left => **s == Side::Left,
            StanceTag::Right => **s == Side::Right,
        })
        .filter_map(|s| model.leg(*s).ok().map(|l| l.foot_link))
        .collect();
    let support: Vec<usize> = ck
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| feet.contains(&model.contacts[p.index].link))
        .map(|(i, _)| i)
        .collect();
    if !support.is_empty() {
        let mut a = DMatrix::zeros(BASE_DOF, 2 * support.len());
        for (c, &i) in support.iter().enumerate() {
            for r in 0..BASE_DOF {
                a[(r, 2 * c)] = ck.points[i].jac_t[r];
                a[(r, 2 * c + 1)] = ck.points[i].jac_n[r];
            }
        }
        let rhs = DVector::from_iterator(BASE_DOF, (0..BASE_DOF).map(|r| u[r]));
        if let Some(lam) = a.svd(true, true).solve(&rhs, 1e-10).ok() {
            let mut forces = vec![(0.0, 0.0); ck.points.len()];
            for (c, &i) in support.iter().enumerate() {
                forces[i] = (lam[2 * c], lam[2 * c + 1]);
            }
            u -= ck.generalized_force(&forces);
        }
    }
    model.apply_actuation(&mut u);
    u
}

/// Resample a previous solution onto a knot grid starting `age` seconds
/// after its solve time: the general warm start when the replanning period
/// is finer than the knot spacing. Tail knots clamp to the last one.
pub fn sample_plan(prev: &PlanSolution, age: f64, dt: f64, n: usize) -> DecisionTrajectory {
    let m = prev.q.len() - 1;
    let mut knots = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = age + k as f64 * dt;
        let s = (t / prev.dt).clamp(0.0, m as f64);
        let i = (s.floor() as usize).min(m.saturating_sub(1));
        let frac = s - i as f64;
        knots.push(&prev.q[i] * (1.0 - frac) + &prev.q[i + 1] * frac);
    }
    DecisionTrajectory { knots }
}

/// Per-replan diagnostics surfaced into the log.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TickDiagnostics {
    pub cost: f64,
    pub iterations: usize,
    pub fallback: bool,
    /// Reference assembly had to clamp an IK target.
    pub clamped: bool,
    pub alpha: f64,
    pub phi: f64,
    /// Replan failed outright and the previous plan stayed active.
    pub replan_error: bool,
    #[serde(skip)]
    pub solve_ms: f64,
}

/// The full control stack between state estimate and joint torques.
pub struct Controller {
    pub kind: ControllerKind,
    pub model: RobotModel,
    /// The controller's view of the world: unmodeled features stripped.
    pub terrain: Terrain,
    pub hlip: HlipParams,
    pub refgen: RefGenParams,
    pub mpc: MpcParams,
    pub gains: JointGains,
    pub gait: GaitState,
    arm_ref: Vec<f64>,
    plan: Option<PlanSolution>,
    plan_age: f64,
    /// Stance side the active plan was built under; a mismatch with the gait
    /// clock means the coming replan straddles an exchange.
    plan_stance: Side,
    primed: bool,
}

impl Controller {
    pub fn new(
        kind: ControllerKind,
        model: RobotModel,
        terrain: &Terrain,
        hlip: HlipParams,
        mut refp: RefGenParams,
        mpc: MpcParams,
        gains: LowLevelGains,
        arm_ref: Vec<f64>,
        q0: &DVector<f64>,
    ) -> Result<Self, ModelError> {
        refp.ground = terrain.ground;
        refp.ssp_sink = support_depth(&model, &mpc.contact, 2);
        refp.dsp_sink = support_depth(&model, &mpc.contact, 4);
        let gait = GaitState::new(&model, q0)?;
        let gains = JointGains::resolve(&model, &gains);
        let plan_stance = gait.stance;
        Ok(Controller {
            kind,
            terrain: terrain.modeled_view(),
            model,
            hlip,
            refgen: refp,
            mpc,
            gains,
            gait,
            arm_ref,
            plan: None,
            plan_age: 0.0,
            plan_stance,
            primed: false,
        })
    }

    pub fn plan(&self) -> Option<&PlanSolution> {
        self.plan.as_ref()
    }

    pub fn plan_age(&self) -> f64 {
        self.plan_age
    }

    /// Advance the gait clock by `dt` and replan from the estimate.
    pub fn replan(&mut self, est: &WholeBodyState, cmd: &CommandVector, dt: f64) -> TickDiagnostics {
        let t0 = Instant::now();
        let mut diag = TickDiagnostics::default();
        self.hlip.z0 = cmd.z0;
        if self.gait.advance(dt, self.hlip.t_ssp, &self.model, &est.q).is_err() {
            diag.replan_error = true;
        }
        match self.build_plan(est, cmd, &mut diag) {
            Ok(plan) => {
                if plan.fallback && self.plan.is_some() {
                    // keep flying the previous plan; its age keeps growing
                    diag.fallback = true;
                } else {
                    diag.fallback = plan.fallback;
                    self.plan = Some(plan);
                    self.plan_age = 0.0;
                    self.plan_stance = self.gait.stance;
                }
            }
            Err(_) => {
                diag.replan_error = true;
                if self.plan.is_none() {
                    // nothing to fall back on: hold the measured pose
                    self.plan = Some(hold_plan(&self.model, est, &self.mpc));
                    self.plan_age = 0.0;
                    self.plan_stance = self.gait.stance;
                }
            }
        }
        diag.solve_ms = t0.elapsed().as_secs_f64() * 1e3;
        diag
    }

    fn build_plan(
        &mut self,
        est: &WholeBodyState,
        cmd: &CommandVector,
        diag: &mut TickDiagnostics,
    ) -> Result<PlanSolution, HarnessError> {
        match self.kind {
            ControllerKind::Combined | ControllerKind::HlipOnly => {
                let (sole, _) = sole_pose(&self.model, &est.q, self.gait.stance)?;
                let c = kinematics::com(&self.model, &est.q);
                let cv = kinematics::com_velocity(&self.model, &est.q, &est.v);
                let x0 = HlipState { pos: c.x - sole.x, vel: cv.x };
                let horizon = self.mpc.horizon();
                // Aim the stepping at a velocity reachable within one support
                // phase instead of the raw command. The placement law is
                // affine in the orbit error, and during a speed ramp the raw
                // command keeps it planning catch steps for a velocity the
                // base was never going to have this step.
                let dv_max = self.refgen.base_accel * self.hlip.t_ssp;
                let v_des = cv.x + (cmd.vx - cv.x).clamp(-dv_max, dv_max);
                let rom = hlip::plan(x0, sole.x, self.gait.phase, v_des, horizon, &self.hlip)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                let gref = GaitRef {
                    stance: self.gait.stance,
                    swing_origin: self.gait.swing_origin,
                    arm_ref: self.arm_ref.clone(),
                };
                let reference = refgen::assemble_reference(
                    est,
                    cmd,
                    &rom,
                    &gref,
                    &self.model,
                    &self.refgen,
                    self.mpc.dt,
                    self.mpc.n,
                )?;
                diag.alpha = reference.alpha;
                diag.phi = reference.phi;
                diag.clamped = reference.clamped;
                if self.kind == ControllerKind::HlipOnly {
                    let u = reference
                        .stance
                        .iter()
                        .take(self.mpc.n)
                        .zip(&reference.q)
                        .map(|(tag, q)| static_feedforward(&self.model, &self.terrain, q, *tag))
                        .collect();
                    Ok(PlanSolution {
                        dt: self.mpc.dt,
                        q: reference.q,
                        v: reference.v,
                        u,
                        lambda: Vec::new(),
                        cost: 0.0,
                        iterations: 0,
                        history: Vec::new(),
                        fallback: false,
                    })
                } else {
                    let mut reference = reference;
                    support_fixup(&self.model, &self.terrain, &mut reference, &self.mpc.contact);
                    let sp = self.solve_params();
                    let warm = self.warm_start(&reference, est);
                    let sol = cimpc::solve(&self.model, &self.terrain, est, &reference, &warm, &sp);
                    diag.cost = sol.cost;
                    diag.iterations = sol.iterations;
                    Ok(sol)
                }
            }
            ControllerKind::CimpcOnly => {
                let (q_stand, clamped) =
                    refgen::standing_pose(&self.model, cmd.z0, &self.refgen, &self.arm_ref)?;
                diag.clamped = clamped;
                let n = self.mpc.n;
                let mut q = Vec::with_capacity(n + 1);
                let mut v = Vec::with_capacity(n + 1);
                for k in 0..=n {
                    let mut qk = q_stand.clone();
                    qk[0] = est.q[0] + cmd.vx * k as f64 * self.mpc.dt;
                    q.push(qk);
                    let mut vk = DVector::zeros(self.model.dof());
                    vk[0] = cmd.vx;
                    v.push(vk);
                }
                let mut reference = refgen::ReferenceTrajectory {
                    dt: self.mpc.dt,
                    q,
                    v,
                    stance: vec![StanceTag::Double; n + 1],
                    alpha: 0.0,
                    phi: 0.0,
                    clamped,
                };
                support_fixup(&self.model, &self.terrain, &mut reference, &self.mpc.contact);
                let sp = self.solve_params();
                let warm = self.warm_start(&reference, est);
                let sol = cimpc::solve(&self.model, &self.terrain, est, &reference, &warm, &sp);
                diag.cost = sol.cost;
                diag.iterations = sol.iterations;
                Ok(sol)
            }
        }
    }

    /// The very first solve has no previous solution to lean on and starts
    /// far from the compliant-contact equilibrium; give it extra iterations
    /// once, then hold the configured budget.
    fn solve_params(&mut self) -> MpcParams {
        let mut p = self.mpc.clone();
        if !self.primed {
            p.max_iters = p.max_iters.max(10);
            self.primed = true;
        }
        p
    }

    fn warm_start(&self, reference: &refgen::ReferenceTrajectory, est: &WholeBodyState) -> DecisionTrajectory {
        match &self.plan {
            Some(p) if p.q.len() >= 2 => {
                let mut d = sample_plan(p, self.plan_age, self.mpc.dt, self.mpc.n);
                d.knots[0] = est.q.clone();
                // The shifted plan is only trustworthy up to the next stance
                // exchange. Past it the solver has a systematic bias: a knot
                // holding the old support pattern dodges the weight-transfer
                // residuals, and the damped steps never carry a grounded foot
                // through the unloading ridge, so stale tails converge to a
                // one-legged stand and drag the executed knots with them.
                // Re-seed everything past the exchange from the reference.
                let flip = match self.gait.stance {
                    Side::Left => StanceTag::Right,
                    Side::Right => StanceTag::Left,
                };
                let k_x = reference
                    .stance
                    .iter()
                    .take(d.knots.len())
                    .position(|t| *t == flip)
                    .unwrap_or(d.knots.len());
                for k in k_x.max(1)..d.knots.len() {
                    d.knots[k] = reference.q[k].clone();
                }
                if self.plan_stance != self.gait.stance {
                    // First replan after an exchange: the shifted plan still
                    // holds the new swing leg on the ground for the current
                    // phase too (it was the stance leg). Seed that leg from
                    // the reference arc and let the solver reconcile the rest.
                    if let Ok(leg) = self.model.leg(self.gait.stance.other()) {
                        for k in 1..k_x.max(1) {
                            for j in [leg.hip, leg.knee, leg.ankle] {
                                let i = self.model.joint_dof(j);
                                d.knots[k][i] = reference.q[k][i];
                            }
                        }
                    }
                }
                d
            }
            _ => {
                // cold start: the reference already rides at the compliant
                // model's support depth, so it is a usable initial guess
                let mut d = DecisionTrajectory::from_reference(reference);
                d.knots[0] = est.q.clone();
                d
            }
        }
    }

    /// Low-level torque for the current moment; call once per sim substep
    /// and then advance the plan clock with [`Controller::tick`].
    pub fn torque(&self, measured: &WholeBodyState) -> (DVector<f64>, bool) {
        match &self.plan {
            Some(p) => low_level_control(&self.model, p, self.plan_age, measured, &self.gains),
            None => (DVector::zeros(self.model.dof()), true),
        }
    }

    pub fn tick(&mut self, dt: f64) {
        self.plan_age += dt;
    }
}

/// Penetration depth at which the tracker's compliant normal model carries
/// the robot's weight spread over `points` contact points.
fn support_depth(model: &RobotModel, cp: &ContactParams, points: usize) -> f64 {
    let per_point = model.total_mass() * model.gravity / points as f64;
    let x = per_point / (cp.stiffness * cp.smoothing);
    // inverse softplus, guarded for tiny arguments
    cp.smoothing * (x.exp() - 1.0).max(1e-12).ln()
}

/// Shift each reference knot vertically so the tracker's compliant contact
/// carries exactly the robot's weight in that configuration. The branch
/// references are built at their own support depths, but a blended knot
/// mixes the branches' sole heights and the resulting force is anywhere
/// between badly short of weight and double it; a few millimeters of base
/// shift costs nothing against the state weights while an unsupported knot
/// is a large violation on the unactuated rows. Knot 0 is the measurement
/// anchor and stays put.
fn support_fixup(
    model: &RobotModel,
    terrain: &Terrain,
    reference: &mut refgen::ReferenceTrajectory,
    cp: &ContactParams,
) {
    let weight = model.total_mass() * model.gravity;
    let zero = DVector::zeros(model.dof());
    for k in 1..reference.q.len() {
        let ck = kinematics::contact_kinematics(model, terrain, &reference.q[k], &zero);
        // Newton on total normal force as a function of a rigid vertical
        // shift; the force model is smooth and monotone in the shift
        let mut shift: f64 = 0.0;
        for _ in 0..8 {
            let mut f = 0.0;
            let mut df = 0.0;
            for pt in &ck.points {
                let a = -(pt.phi + shift) / cp.smoothing;
                // softplus and its derivative, overflow-safe
                let (sp, sig) = if a > 30.0 {
                    (a, 1.0)
                } else {
                    (a.exp().ln_1p(), 1.0 / (1.0 + (-a).exp()))
                };
                f += cp.stiffness * cp.smoothing * sp;
                df -= cp.stiffness * sig;
            }
            let err = f - weight;
            if err.abs() < 1e-3 * weight || df.abs() < 1e-9 {
                break;
            }
            shift = (shift - err / df).clamp(-0.05, 0.05);
        }
        reference.q[k][1] += shift;
    }
    let v = refgen::finite_difference_velocities(&reference.q, reference.dt);
    let v0 = reference.v[0].clone();
    reference.v = v;
    reference.v[0] = v0;
}

/// Hold-still fallback when the very first replan fails: PD around the
/// estimate with zero feedforward.
fn hold_plan(model: &RobotModel, est: &WholeBodyState, mpc: &MpcParams) -> PlanSolution {
    let zero = DVector::zeros(model.dof());
    PlanSolution {
        dt: mpc.dt,
        q: vec![est.q.clone(); mpc.n + 1],
        v: vec![zero.clone(); mpc.n + 1],
        u: vec![zero; mpc.n],
        lambda: Vec::new(),
        cost: 0.0,
        iterations: 0,
        history: Vec::new(),
        fallback: true,
    }
}

/// One control tick's worth of log: true and estimated state, command,
/// applied torque, simulator contact forces, and planner diagnostics.
/// Wall-clock solve time is kept out of the serialized form so logs are
/// reproducible bit for bit.
#[derive(Debug, Clone, Serialize)]
pub struct TickRecord {
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub est_q: Vec<f64>,
    pub est_v: Vec<f64>,
    pub cmd_vx: f64,
    pub cmd_z0: f64,
    pub u: Vec<f64>,
    /// Per-sphere simulator contact forces at the end of the tick.
    pub contact_fn: Vec<f64>,
    pub contact_ft: Vec<f64>,
    pub contact_phi: Vec<f64>,
    pub stance: Side,
    pub gait_phase: f64,
    pub alpha: f64,
    pub phi: f64,
    pub mpc_cost: f64,
    pub mpc_iters: usize,
    pub fallback: bool,
    pub clamped: bool,
    pub replan_error: bool,
    #[serde(skip)]
    pub solve_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub controller: ControllerKind,
    pub success: bool,
    pub fell: bool,
    pub fall_time: Option<f64>,
    /// Simulation produced a non-finite state and the run was cut short.
    pub aborted: bool,
    pub end_time: f64,
    pub mean_vx: f64,
    pub final_x: f64,
    pub ticks: usize,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub contact_names: Vec<String>,
    pub records: Vec<TickRecord>,
    pub summary: RunSummary,
}

impl RunLog {
    /// One JSON object per tick, then the summary line.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        std::fs::write(path.as_ref(), self.to_jsonl()?)?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String, HarnessError> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.summary)?);
        out.push('\n');
        Ok(out)
    }

    pub fn mean_vx_between(&self, t0: f64, t1: f64) -> f64 {
        let vals: Vec<f64> =
            self.records.iter().filter(|r| r.t >= t0 && r.t <= t1).map(|r| r.v[0]).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    /// First time at or after `t0` from which |vx| stays below `level` for
    /// at least `hold` seconds.
    pub fn first_sustained_below(&self, t0: f64, level: f64, hold: f64) -> Option<f64> {
        let mut start: Option<f64> = None;
        for r in self.records.iter().filter(|r| r.t >= t0) {
            if r.v[0].abs() < level {
                let s = *start.get_or_insert(r.t);
                if r.t - s >= hold {
                    return Some(s);
                }
            } else {
                start = None;
            }
        }
        // quiet through the end of the log counts if the tail is long enough
        match (start, self.records.last()) {
            (Some(s), Some(last)) if last.t - s >= hold => Some(s),
            _ => None,
        }
    }
}

/// Run one scenario start to finish. Deterministic for a fixed config.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog, HarnessError> {
    cfg.validate()?;
    let nominal = RobotModel::from_file(&cfg.model)?;
    let truth = sim::perturb_model(&nominal, cfg.noise.sigma_m, cfg.noise.seed);
    let terrain = cfg.build_terrain();

    let mut refp = cfg.refgen.clone();
    refp.ground = terrain.ground;
    let first_cmd = command_at(&cfg.commands, 0.0);
    let arm_ref = arm_posture(&nominal, &cfg.arm_pose);
    let (mut q0, _) = refgen::standing_pose(&nominal, first_cmd.z0, &refp, &arm_ref)?;
    // start at the static contact penetration instead of dropping into it
    q0[1] -= truth.total_mass() * truth.gravity / (4.0 * cfg.sim.stiffness);
    let mut state = WholeBodyState::new(q0, DVector::zeros(nominal.dof()));

    let mut mpc = MpcParams::for_model(&nominal);
    cfg.mpc.apply(&mut mpc);
    let mut ctrl = Controller::new(
        cfg.controller,
        nominal.clone(),
        &terrain,
        cfg.hlip,
        cfg.refgen.clone(),
        mpc,
        cfg.gains.clone(),
        arm_ref,
        &state.q,
    )?;

    let substeps = cfg.substeps();
    let n_ticks = (cfg.duration / cfg.control_period).ceil() as usize;
    let mut records = Vec::with_capacity(n_ticks / cfg.log_every + 1);
    let mut fell = false;
    let mut fall_time = None;
    let mut aborted = false;
    let mut end_time = 0.0;
    let mut vx_sum = 0.0;

    'ticks: for tick in 0..n_ticks {
        let t = tick as f64 * cfg.control_period;
        let cmd = command_at(&cfg.commands, t);
        let est = sim::noisy_estimate(&state, cfg.noise.sigma_x, cfg.noise.seed, tick as u64);
        let dt_clock = if tick == 0 { 0.0 } else { cfg.control_period };
        let diag = ctrl.replan(&est, &cmd, dt_clock);

        let mut u_first = DVector::zeros(truth.dof());
        let mut last_info = None;
        for s in 0..substeps {
            let (u, _) = ctrl.torque(&state);
            if s == 0 {
                u_first = u.clone();
            }
            let t_sub = t + s as f64 * cfg.sim.dt;
            match sim::step(&truth, &terrain, &mut state, &u, &cfg.sim, &cfg.disturbances, t_sub) {
                Ok(info) => last_info = Some(info),
                Err(_) => {
                    aborted = true;
                    end_time = t_sub;
                    break 'ticks;
                }
            }
            ctrl.tick(cfg.sim.dt);
        }
        end_time = t + cfg.control_period;
        vx_sum += state.v[0];

        if tick % cfg.log_every == 0 {
            let info = last_info.as_ref();
            let ck = kinematics::contact_kinematics(&truth, &terrain, &state.q, &state.v);
            records.push(TickRecord {
                t,
                q: state.q.as_slice().to_vec(),
                v: state.v.as_slice().to_vec(),
                est_q: est.q.as_slice().to_vec(),
                est_v: est.v.as_slice().to_vec(),
                cmd_vx: cmd.vx,
                cmd_z0: cmd.z0,
                u: u_first.as_slice().to_vec(),
                contact_fn: info.map_or_else(Vec::new, |i| i.contact.iter().map(|f| f.1).collect()),
                contact_ft: info.map_or_else(Vec::new, |i| i.contact.iter().map(|f| f.0).collect()),
                contact_phi: ck.points.iter().map(|p| p.phi).collect(),
                stance: ctrl.gait.stance,
                gait_phase: ctrl.gait.phase,
                alpha: diag.alpha,
                phi: diag.phi,
                mpc_cost: diag.cost,
                mpc_iters: diag.iterations,
                fallback: diag.fallback,
                clamped: diag.clamped,
                replan_error: diag.replan_error,
                solve_ms: diag.solve_ms,
            });
        }

        if state.q[1] < 0.6 * cmd.z0 || state.q[2].abs() > 1.0 {
            fell = true;
            fall_time = Some(t + cfg.control_period);
            break;
        }
    }

    let ticks = records.len();
    let summary = RunSummary {
        scenario: cfg.name.clone(),
        controller: cfg.controller,
        success: !fell && !aborted,
        fell,
        fall_time,
        aborted,
        end_time,
        mean_vx: if n_ticks > 0 { vx_sum / n_ticks.min((end_time / cfg.control_period) as usize + 1) as f64 } else { 0.0 },
        final_x: state.q[0],
        ticks,
    };
    Ok(RunLog {
        contact_names: truth.contacts.iter().map(|c| c.name.clone()).collect(),
        records,
        summary,
    })
}

fn arm_posture(model: &RobotModel, requested: &[f64]) -> Vec<f64> {
    let n_arm = model.arm_joints().map(|a| a.len()).unwrap_or(0);
    let mut out = vec![0.0; n_arm];
    for (o, r) in out.iter_mut().zip(requested) {
        *o = *r;
    }
    out
}

/// A contiguous stretch where a contact point pressed with more than the
/// threshold normal force.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContactInterval {
    pub point: String,
    pub start: f64,
    pub end: f64,
}

/// Extract per-point activity intervals from a log (threshold in newtons).
pub fn contact_schedule(log: &RunLog, threshold: f64) -> Vec<ContactInterval> {
    let mut out = Vec::new();
    for (i, name) in log.contact_names.iter().enumerate() {
        let mut open: Option<f64> = None;
        let mut last_t = 0.0;
        for r in &log.records {
            let active = r.contact_fn.get(i).is_some_and(|f| *f > threshold);
            last_t = r.t;
            match (active, open) {
                (true, None) => open = Some(r.t),
                (false, Some(s)) => {
                    out.push(ContactInterval { point: name.clone(), start: s, end: r.t });
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            out.push(ContactInterval { point: name.clone(), start: s, end: last_t });
        }
    }
    out.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.point.cmp(&b.point)));
    out
}

pub fn schedule_csv(intervals: &[ContactInterval]) -> String {
    let mut s = String::from("point,start,end\n");
    for i in intervals {
        s.push_str(&format!("{},{:.4},{:.4}\n", i.point, i.start, i.end));
    }
    s
}

/// Heel and toe touchdown times per stance episode of one foot. An episode
/// opens when either point activates after a clear gap and closes when both
/// are quiet again; episodes missing either touchdown are dropped.
pub fn heel_toe_onsets(log: &RunLog, heel: &str, toe: &str, threshold: f64) -> Vec<(f64, f64)> {
    let Some(hi) = log.contact_names.iter().position(|n| n == heel) else { return Vec::new() };
    let Some(ti) = log.contact_names.iter().position(|n| n == toe) else { return Vec::new() };
    let mut out = Vec::new();
    let mut in_episode = false;
    let mut heel_on: Option<f64> = None;
    let mut toe_on: Option<f64> = None;
    let mut quiet = 0usize;
    for r in &log.records {
        let h = r.contact_fn.get(hi).is_some_and(|f| *f > threshold);
        let t = r.contact_fn.get(ti).is_some_and(|f| *f > threshold);
        if h || t {
            quiet = 0;
            if !in_episode {
                in_episode = true;
                heel_on = None;
                toe_on = None;
            }
            if h && heel_on.is_none() {
                heel_on = Some(r.t);
            }
            if t && toe_on.is_none() {
                toe_on = Some(r.t);
            }
        } else if in_episode {
            quiet += 1;
            // two quiet ticks end the episode (debounces 1-tick flickers)
            if quiet >= 2 {
                if let (Some(a), Some(b)) = (heel_on, toe_on) {
                    out.push((a, b));
                }
                in_episode = false;
            }
        }
    }
    if in_episode {
        if let (Some(a), Some(b)) = (heel_on, toe_on) {
            out.push((a, b));
        }
    }
    out
}

/// Push-recovery grid: magnitudes crossed with onset times inside one full
/// gait cycle after a settling period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushSpec {
    pub magnitudes: Vec<f64>,
    /// Fractions of the two-step cycle in [0, 1).
    pub timings: Vec<f64>,
    pub duration: f64,
    /// Quiet walking time before the push window; keep it a multiple of the
    /// cycle so timing fractions line up with gait phase.
    pub settle: f64,
    pub direction: [f64; 2],
    /// Application point in the torso frame.
    pub point: [f64; 2],
}

impl Default for PushSpec {
    fn default() -> Self {
        PushSpec {
            magnitudes: vec![40.0, 80.0, 120.0, 160.0, 200.0],
            timings: (0..8).map(|i| i as f64 / 8.0).collect(),
            duration: 0.1,
            settle: 2.8,
            direction: [1.0, 0.0],
            point: [0.0, 0.2],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub controller: ControllerKind,
    pub magnitude: f64,
    pub timing: f64,
    pub seed: u64,
    pub success: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub cells: Vec<CellResult>,
}

impl SweepTable {
    /// (successes, trials) over every cell matching controller and, when
    /// given, magnitude.
    pub fn successes(&self, ctrl: ControllerKind, magnitude: Option<f64>) -> (usize, usize) {
        let sel: Vec<&CellResult> = self
            .cells
            .iter()
            .filter(|c| c.controller == ctrl && magnitude.is_none_or(|m| (c.magnitude - m).abs() < 1e-9))
            .collect();
        (sel.iter().filter(|c| c.success).count(), sel.len())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("controller,magnitude,timing,seed,success\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                c.controller,
                c.magnitude,
                c.timing,
                c.seed,
                if c.success { 1 } else { 0 }
            ));
        }
        s
    }
}

/// Run the push grid for each controller variant. Cells are independent
/// runs and execute in parallel; the table order is deterministic.
pub fn run_push_sweep(
    base: &ScenarioConfig,
    spec: &PushSpec,
    controllers: &[ControllerKind],
) -> SweepTable {
    let cycle = 2.0 * base.hlip.t_ssp;
    let mut cases = Vec::new();
    for &ctrl in controllers {
        for &m in &spec.magnitudes {
            for &frac in &spec.timings {
                cases.push((ctrl, m, frac));
            }
        }
    }
    let cells = cases
        .par_iter()
        .map(|&(ctrl, m, frac)| {
            let mut cfg = base.clone();
            cfg.controller = ctrl;
            cfg.name = format!("{}-push-{}-{}", base.name, m, frac);
            let start = spec.settle + frac * cycle;
            cfg.duration = start + spec.duration + 3.0;
            cfg.disturbances.push(Disturbance {
                force: [spec.direction[0] * m, spec.direction[1] * m],
                point: spec.point,
                start,
                duration: spec.duration,
            });
            let success = run_scenario(&cfg).map(|log| log.summary.success).unwrap_or(false);
            CellResult { controller: ctrl, magnitude: m, timing: frac, seed: base.noise.seed, success }
        })
        .collect();
    SweepTable { cells }
}

/// Repeated trials under state noise and model error with reseeded terrain
/// roughness per trial.
pub fn run_noise_trials(
    base: &ScenarioConfig,
    sigma_x: f64,
    sigma_m: f64,
    seeds: &[u64],
    controllers: &[ControllerKind],
) -> SweepTable {
    let mut cases = Vec::new();
    for &ctrl in controllers {
        for &seed in seeds {
            cases.push((ctrl, seed));
        }
    }
    let cells = cases
        .par_iter()
        .map(|&(ctrl, seed)| {
            let mut cfg = base.clone();
            cfg.controller = ctrl;
            cfg.name = format!("{}-trial-{}", base.name, seed);
            cfg.noise = NoiseModel { sigma_x, sigma_m, seed };
            if let Some(r) = &mut cfg.rough {
                r.seed = seed;
            }
            let success = run_scenario(&cfg).map(|log| log.summary.success).unwrap_or(false);
            CellResult { controller: ctrl, magnitude: sigma_m, timing: sigma_x, seed, success }
        })
        .collect();
    SweepTable { cells }
}

/// Tracker gradient verification on a small fixed-base chain: analytic
/// Jacobian of the residual stack against central differences, plus a check
/// that nothing falls outside the banded pattern the solver assumes.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub band_ok: bool,
    pub half_bandwidth: usize,
    pub points: usize,
}

pub fn gradient_check(seed: u64, points: usize) -> GradCheckReport {
    let model = crate::model::samples::chain3();
    let terrain = Terrain { ground: -0.2, ..Terrain::flat() };
    let mut params = MpcParams::for_model(&model);
    params.n = 5;
    params.dt = 0.02;
    let dof = model.dof();
    let hb = 3 * dof - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut band_ok = true;
    for _ in 0..points {
        let q0 = DVector::from_fn(dof, |_, _| rng.random_range(-0.4..0.4));
        let v0 = DVector::from_fn(dof, |_, _| rng.random_range(-0.5..0.5));
        let x0 = WholeBodyState::new(q0.clone(), v0);
        let knots: Vec<DVector<f64>> = (0..=params.n)
            .map(|_| DVector::from_fn(dof, |_, _| rng.random_range(-0.4..0.4)))
            .collect();
        let reference = refgen::ReferenceTrajectory {
            dt: params.dt,
            q: knots.clone(),
            v: vec![DVector::zeros(dof); params.n + 1],
            stance: vec![StanceTag::Double; params.n + 1],
            alpha: 0.0,
            phi: 0.0,
            clamped: false,
        };
        let mut decision = DecisionTrajectory {
            knots: (0..=params.n)
                .map(|_| DVector::from_fn(dof, |_, _| rng.random_range(-0.4..0.4)))
                .collect(),
        };
        decision.knots[0] = q0.clone();
        let (r0, jac) =
            cimpc::residual_jacobian_dense(&model, &terrain, &x0, &decision, &reference, &params);
        let nvars = params.n * dof;
        let h = 1e-6;
        for c in 0..nvars {
            let (k, a) = (c / dof + 1, c % dof);
            let mut dp = decision.clone();
            dp.knots[k][a] += h;
            let rp = cimpc::residuals(&model, &terrain, &x0, &dp, &reference, &params);
            let mut dm = decision.clone();
            dm.knots[k][a] -= h;
            let rm = cimpc::residuals(&model, &terrain, &x0, &dm, &reference, &params);
            for r in 0..r0.len() {
                let fd = (rp[r] - rm[r]) / (2.0 * h);
                let an = jac[(r, c)];
                let denom = fd.abs().max(an.abs()).max(1.0);
                max_rel = max_rel.max((fd - an).abs() / denom);
            }
        }
        // every nonzero of J^T J must live inside the assumed band
        let jtj = jac.transpose() * &jac;
        for i in 0..nvars {
            for j in 0..nvars {
                if i.abs_diff(j) > hb && jtj[(i, j)] != 0.0 {
                    band_ok = false;
                }
            }
        }
    }
    GradCheckReport { max_rel_err: max_rel, band_ok, half_bandwidth: hb, points }
}

pub fn percentile(samples: &mut [f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.sort_by(f64::total_cmp);
    let idx = ((samples.len() - 1) as f64 * p).round() as usize;
    samples[idx]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn biped_path() -> String {
        format!("{}/../../models/biped.model", env!("CARGO_MANIFEST_DIR"))
    }

    fn walk_cfg() -> ScenarioConfig {
        ScenarioConfig {
            model: biped_path(),
            commands: vec![CommandSegment {
                until: forever(),
                command: CommandVector { vx: 0.4, ..Default::default() },
            }],
            ..Default::default()
        }
    }

    #[test]
    fn command_profile_lookup() {
        let segs = vec![
            CommandSegment { until: 1.0, command: CommandVector { vx: 0.1, ..Default::default() } },
            CommandSegment { until: 3.0, command: CommandVector { vx: 0.5, ..Default::default() } },
        ];
        assert_eq!(command_at(&segs, 0.0).vx, 0.1);
        assert_eq!(command_at(&segs, 0.999).vx, 0.1);
        assert_eq!(command_at(&segs, 1.0).vx, 0.5);
        // past the last boundary the final command holds
        assert_eq!(command_at(&segs, 10.0).vx, 0.5);
    }

    #[test]
    fn scenario_roundtrip_and_validation() {
        let cfg = walk_cfg();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.control_period, cfg.control_period);
        assert!(back.validate().is_ok());

        let mut bad = walk_cfg();
        bad.control_period = 0.0213;
        assert!(bad.validate().is_err());
        let mut bad = walk_cfg();
        bad.commands.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn low_level_interpolation_and_hold() {
        let model = RobotModel::from_file(biped_path()).unwrap();
        let dof = model.dof();
        let n = 4;
        let dt = 0.05;
        let mut q = Vec::new();
        let mut v = Vec::new();
        let mut u = Vec::new();
        for k in 0..=n {
            q.push(DVector::from_element(dof, 0.1 * k as f64));
            v.push(DVector::from_element(dof, 0.2 * k as f64));
            if k < n {
                let mut uk = DVector::from_element(dof, 1.0 + k as f64);
                model.apply_actuation(&mut uk);
                u.push(uk);
            }
        }
        let plan = PlanSolution {
            dt,
            q,
            v,
            u,
            lambda: Vec::new(),
            cost: 0.0,
            iterations: 0,
            history: Vec::new(),
            fallback: false,
        };
        let gains = JointGains::resolve(&model, &LowLevelGains { kp: 0.0, kd: 0.0 });

        // with zero gains the output is the held feedforward
        let meas = WholeBodyState::zeros(dof);
        let (u0, beyond) = low_level_control(&model, &plan, 0.0, &meas, &gains);
        assert!(!beyond);
        assert_relative_eq!(u0[3], 1.0);
        let (u1, _) = low_level_control(&model, &plan, 0.074, &meas, &gains);
        assert_relative_eq!(u1[3], 2.0); // ZOH: still knot 1's torque
        assert_eq!(u0[0], 0.0); // base rows never commanded

        // PD terms see the linearly interpolated setpoints
        let gains = JointGains::resolve(&model, &LowLevelGains { kp: 2.0, kd: 3.0 });
        let (um, _) = low_level_control(&model, &plan, 0.075, &meas, &gains);
        // q* = 0.15, v* = 0.3 at the midpoint of knots 1 and 2
        assert_relative_eq!(um[3], 2.0 + 2.0 * 0.15 + 3.0 * 0.3, epsilon = 1e-12);

        // beyond the horizon: flagged, held at the end
        let (ue, beyond) = low_level_control(&model, &plan, 10.0, &meas, &gains);
        assert!(beyond);
        assert_relative_eq!(ue[3], 4.0 + 2.0 * 0.4 + 3.0 * 0.8, epsilon = 1e-12);
    }

    #[test]
    fn torque_limits_clamp_the_command() {
        let model = RobotModel::from_file(biped_path()).unwrap();
        let dof = model.dof();
        let plan = hold_plan(
            &model,
            &WholeBodyState::zeros(dof),
            &MpcParams::for_model(&model),
        );
        let mut meas = WholeBodyState::zeros(dof);
        meas.q[3] = 100.0; // huge error
        let gains = JointGains::resolve(&model, &LowLevelGains { kp: 1e4, kd: 0.0 });
        let (u, _) = low_level_control(&model, &plan, 0.0, &meas, &gains);
        assert_relative_eq!(u[3], -model.joints[0].torque_limit);
    }

    #[test]
    fn plan_resampling_shifts_and_clamps() {
        let model = crate::model::samples::point_pendulum(1.0, 0.5);
        let dof = model.dof();
        let n = 3;
        let dt = 0.05;
        let q: Vec<DVector<f64>> =
            (0..=n).map(|k| DVector::from_element(dof, k as f64)).collect();
        let prev = PlanSolution {
            dt,
            q,
            v: vec![DVector::zeros(dof); n + 1],
            u: vec![DVector::zeros(dof); n],
            lambda: Vec::new(),
            cost: 0.0,
            iterations: 0,
            history: Vec::new(),
            fallback: false,
        };
        // age 0: identity
        let d = sample_plan(&prev, 0.0, dt, n);
        for k in 0..=n {
            assert_relative_eq!(d.knots[k][0], k as f64);
        }
        // age = one knot: matches the integer shift, last knot clamped
        let d = sample_plan(&prev, dt, dt, n);
        assert_relative_eq!(d.knots[0][0], 1.0);
        assert_relative_eq!(d.knots[n - 1][0], n as f64);
        assert_relative_eq!(d.knots[n][0], n as f64);
        // fractional age interpolates
        let d = sample_plan(&prev, 0.02, dt, n);
        assert_relative_eq!(d.knots[0][0], 0.4, epsilon = 1e-12);
        assert_relative_eq!(d.knots[1][0], 1.4, epsilon = 1e-12);
    }

    #[test]
    fn gait_clock_switches_and_records_liftoff() {
        let model = RobotModel::from_file(biped_path()).unwrap();
        let refp = RefGenParams::default();
        let (q, _) = refgen::standing_pose(&model, 0.62, &refp, &[]).unwrap();
        let mut gait = GaitState::new(&model, &q).unwrap();
        assert_eq!(gait.stance, Side::Left);
        let (right_sole, _) = sole_pose(&model, &q, Side::Right).unwrap();
        assert_relative_eq!(gait.swing_origin.0, right_sole.x);

        gait.advance(0.2, 0.35, &model, &q).unwrap();
        assert_eq!(gait.stance, Side::Left);
        assert_relative_eq!(gait.phase, 0.2);
        gait.advance(0.2, 0.35, &model, &q).unwrap();
        assert_eq!(gait.stance, Side::Right);
        assert_relative_eq!(gait.phase, 0.05, epsilon = 1e-12);
        assert_eq!(gait.steps, 1);
        // the vacated left foot is now the recorded swing origin
        let (left_sole, _) = sole_pose(&model, &q, Side::Left).unwrap();
        assert_relative_eq!(gait.swing_origin.0, left_sole.x);
    }

    #[test]
    fn standing_feedforward_balances_gravity() {
        let model = RobotModel::from_file(biped_path()).unwrap();
        let refp = RefGenParams::default();
        let (q, _) = refgen::standing_pose(&model, 0.62, &refp, &[]).unwrap();
        let u = static_feedforward(&model, &Terrain::flat(), &q, StanceTag::Double);
        for (j, joint) in model.joints.iter().enumerate() {
            assert!(
                u[model.joint_dof(j)].abs() < joint.torque_limit,
                "{} feedforward {} exceeds limit",
                joint.name,
                u[model.joint_dof(j)]
            );
        }
        for r in 0..BASE_DOF {
            assert_eq!(u[r], 0.0);
        }
    }

    #[test]
    fn zero_command_plan_keeps_feet_down() {
        let model = RobotModel::from_file(biped_path()).unwrap();
        let refp = RefGenParams::default();
        let (q0, _) = refgen::standing_pose(&model, 0.62, &refp, &[]).unwrap();
        let est = WholeBodyState::new(q0, DVector::zeros(model.dof()));
        let mut ctrl = Controller::new(
            ControllerKind::Combined,
            model.clone(),
            &Terrain::flat(),
            HlipParams::default(),
            refp,
            MpcParams::for_model(&model),
            LowLevelGains::default(),
            vec![],
            &est.q,
        )
        .unwrap();
        let diag = ctrl.replan(&est, &CommandVector::default(), 0.0);
        assert!(!diag.replan_error);
        assert!(diag.alpha < 0.05);
        let plan = ctrl.plan().unwrap();
        // every planned knot keeps all four contact points near the ground
        for qk in &plan.q {
            let ck = kinematics::contact_kinematics(
                &model,
                &Terrain::flat(),
                qk,
                &DVector::zeros(model.dof()),
            );
            for p in ck.points {
                // no lift-offs; penetration is bounded by the compliant
                // contact's static sink-in
                assert!(p.phi < 0.01, "foot lifted {} in a standing plan", p.phi);
                assert!(p.phi > -0.06, "penetration {} in a standing plan", p.phi);
            }
        }
    }

    #[test]
    fn replan_is_deterministic() {
        let model = RobotModel::from_file(biped_path()).unwrap();
        let refp = RefGenParams::default();
        let (q0, _) = refgen::standing_pose(&model, 0.62, &refp, &[]).unwrap();
        let est = WholeBodyState::new(q0, DVector::zeros(model.dof()));
        let cmd = CommandVector { vx: 0.3, ..Default::default() };
        let mk = || {
            Controller::new(
                ControllerKind::Combined,
                model.clone(),
                &Terrain::flat(),
                HlipParams::default(),
                refp.clone(),
                MpcParams::for_model(&model),
                LowLevelGains::default(),
                vec![],
                &est.q,
            )
            .unwrap()
        };
        let mut a = mk();
        let mut b = mk();
        a.replan(&est, &cmd, 0.0);
        b.replan(&est, &cmd, 0.0);
        let (pa, pb) = (a.plan().unwrap(), b.plan().unwrap());
        assert_eq!(pa.cost, pb.cost);
        for (x, y) in pa.q.iter().zip(&pb.q) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn contact_schedule_intervals_and_csv() {
        let summary = RunSummary {
            scenario: "t".into(),
            controller: ControllerKind::Combined,
            success: true,
            fell: false,
            fall_time: None,
            aborted: false,
            end_time: 0.1,
            mean_vx: 0.0,
            final_x: 0.0,
            ticks: 5,
        };
        let mk = |t: f64, f: Vec<f64>| TickRecord {
            t,
            q: vec![],
            v: vec![0.0],
            est_q: vec![],
            est_v: vec![],
            cmd_vx: 0.0,
            cmd_z0: 0.62,
            u: vec![],
            contact_fn: f,
            contact_ft: vec![],
            contact_phi: vec![],
            stance: Side::Left,
            gait_phase: 0.0,
            alpha: 0.0,
            phi: 0.0,
            mpc_cost: 0.0,
            mpc_iters: 0,
            fallback: false,
            clamped: false,
            replan_error: false,
            solve_ms: 0.0,
        };
        let log = RunLog {
            contact_names: vec!["heel".into(), "toe".into()],
            records: vec![
                mk(0.00, vec![0.0, 0.0]),
                mk(0.02, vec![5.0, 0.0]),
                mk(0.04, vec![5.0, 2.0]),
                mk(0.06, vec![0.5, 2.0]),
                mk(0.08, vec![0.0, 0.0]),
            ],
            summary,
        };
        let sched = contact_schedule(&log, 1.0);
        assert_eq!(
            sched,
            vec![
                ContactInterval { point: "heel".into(), start: 0.02, end: 0.06 },
                ContactInterval { point: "toe".into(), start: 0.04, end: 0.08 },
            ]
        );
        let onsets = heel_toe_onsets(&log, "heel", "toe", 1.0);
        assert_eq!(onsets, vec![(0.02, 0.04)]);
        let csv = schedule_csv(&sched);
        assert!(csv.starts_with("point,start,end\n"));
        assert!(csv.contains("heel,0.0200,0.0600"));
    }

    #[test]
    fn percentile_picks_order_statistics() {
        let mut v = vec![5.0, 1.0, 3.0, 2.0, 4.0];
        assert_relative_eq!(percentile(&mut v, 0.5), 3.0);
        assert_relative_eq!(percentile(&mut v, 0.0), 1.0);
        assert_relative_eq!(percentile(&mut v, 1.0), 5.0);
    }
}

#[cfg(test)]
mod scratch {
    use super::*;
    use crate::cimpc;

    #[test]
    #[ignore]
    fn debug_standing_substeps() {
        let model = RobotModel::from_file(format!(
            "{}/../../models/biped.model",
            env!("CARGO_MANIFEST_DIR")
        ))
        .unwrap();
        let refp = RefGenParams::default();
        let sp = SimParams { damping: 80.0, ..SimParams::default() };
        let (mut q0, _) = refgen::standing_pose(&model, 0.62, &refp, &[]).unwrap();
        q0[1] -= model.total_mass() * model.gravity / (4.0 * sp.stiffness);
        let mut state = WholeBodyState::new(q0.clone(), DVector::zeros(model.dof()));
        let cmd = CommandVector { vx: 0.0, ..Default::default() };
        let terrain = Terrain::flat();
        let mut ctrl = Controller::new(
            ControllerKind::Combined,
            model.clone(),
            &terrain,
            HlipParams::default(),
            refp.clone(),
            MpcParams::for_model(&model),
            LowLevelGains::default(),
            vec![],
            &state.q,
        )
        .unwrap();
        for tick in 0..6 {
            let diag = ctrl.replan(&state.clone(), &cmd, if tick == 0 { 0.0 } else { 0.02 });
            println!("tick {tick} cost={:.1} u_ff0={:?}", diag.cost,
                ctrl.plan().unwrap().u[0].as_slice()[3..].iter().map(|x| (x*10.0).round()/10.0).collect::<Vec<_>>());
            for s in 0..20 {
                let (u, _) = ctrl.torque(&state);
                let info = sim::step(&model, &terrain, &mut state, &u, &sp, &[], 0.0).unwrap();
                if tick == 0 {
                    let plan = ctrl.plan().unwrap();
                    let age = ctrl.plan_age();
                    let i = ((age / plan.dt).floor() as usize).min(plan.u.len() - 1);
                    let frac = age / plan.dt - i as f64;
                    let qd = &plan.q[i] * (1.0 - frac) + &plan.q[i + 1] * frac;
                    let vd = &plan.v[i] * (1.0 - frac) + &plan.v[i + 1] * frac;
                    println!(
                        "  s{s:02} z={:.4} vz={:+.3} la=({:+.3},{:+.2}|{:+.3},{:+.2}) ra=({:+.3},{:+.2}|{:+.3},{:+.2}) fn={:?} u_ank=({:+.0},{:+.0})",
                        state.q[1], state.v[1],
                        state.q[5], state.v[5], qd[5], vd[5],
                        state.q[8], state.v[8], qd[8], vd[8],
                        info.contact.iter().map(|f| (f.1).round()).collect::<Vec<_>>(),
                        u[5], u[8]
                    );
                }
                ctrl.tick(sp.dt);
            }
        }
    }

    fn base_profile_x(
        state: &WholeBodyState,
        cmd: &CommandVector,
        refp: &RefGenParams,
        dt: f64,
        k: usize,
    ) -> f64 {
        let mut x = state.q[0];
        let mut v = state.v[0];
        for _ in 0..k {
            let dv = (cmd.vx - v).clamp(-refp.base_accel * dt, refp.base_accel * dt);
            v += dv;
            x += v * dt;
        }
        x
    }

    #[test]
    #[ignore]
    fn debug_walk_swing() {
        let model = RobotModel::from_file(format!(
            "{}/../../models/biped.model",
            env!("CARGO_MANIFEST_DIR")
        ))
        .unwrap();
        let refp = RefGenParams::default();
        let sp = SimParams { damping: 80.0, ..SimParams::default() };
        let (mut q0, _) = refgen::standing_pose(&model, 0.62, &refp, &[]).unwrap();
        q0[1] -= model.total_mass() * model.gravity / (4.0 * sp.stiffness);
        let mut state = WholeBodyState::new(q0.clone(), DVector::zeros(model.dof()));
        let cmd = CommandVector { vx: 0.4, ..Default::default() };
        let terrain = Terrain::flat();
        let mut ctrl = Controller::new(
            ControllerKind::Combined,
            model.clone(),
            &terrain,
            HlipParams::default(),
            refp.clone(),
            {
                let mut m = MpcParams::for_model(&model);
                m.max_iters = std::env::var("ITERS")
                    .ok()
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(3);
                m
            },
            LowLevelGains::default(),
            vec![],
            &state.q,
        )
        .unwrap();
        for tick in 0..60 {
            let t = tick as f64 * 0.02;
            let diag = ctrl.replan(&state.clone(), &cmd, if tick == 0 { 0.0 } else { 0.02 });
            let swing = ctrl.gait.stance.other();
            let plan = ctrl.plan().unwrap().clone();
            let meas = sole_pose(&model, &state.q, swing).unwrap().0;
            // rebuild the raw reference the controller just used
            let (sole, _) = sole_pose(&model, &state.q, ctrl.gait.stance).unwrap();
            let c = kinematics::com(&model, &state.q);
            let cv = kinematics::com_velocity(&model, &state.q, &state.v);
            let x0 = crate::hlip::HlipState { pos: c.x - sole.x, vel: cv.x };
            let dv_max = ctrl.refgen.base_accel * ctrl.hlip.t_ssp;
            let v_des = cv.x + (cmd.vx - cv.x).clamp(-dv_max, dv_max);
            let rom = crate::hlip::plan(
                x0, sole.x, ctrl.gait.phase, v_des, 26.0 * 0.05 + 0.2, &HlipParams::default(),
            )
            .unwrap();
            let gref = refgen::GaitRef {
                stance: ctrl.gait.stance,
                swing_origin: ctrl.gait.swing_origin,
                arm_ref: vec![],
            };
            let rf = refgen::assemble_reference(
                &state, &cmd, &rom, &gref, &model, &ctrl.refgen, 0.05, 25,
            )
            .unwrap();
            let fmt = |q: &[DVector<f64>], side: Side| {
                (0..=8)
                    .map(|k| {
                        format!("{:+.0}", sole_pose(&model, &q[k], side).unwrap().0.y * 1000.0)
                    })
                    .collect::<Vec<_>>()
                    .join(",")
            };
            println!(
                "t={t:.2} st={:?} ph={:.2} a={:.2} c={:9.0} base=({:+.3},{:.3},{:+.2},vx{:+.2}) sw_meas=({:+.3},{:+.3})\n   planL[{}] planR[{}]\n   refL [{}] refR [{}] tags {:?}",
                ctrl.gait.stance, ctrl.gait.phase, diag.alpha, diag.cost,
                state.q[0], state.q[1], state.q[2], state.v[0],
                meas.x, meas.y,
                fmt(&plan.q, Side::Left), fmt(&plan.q, Side::Right),
                fmt(&rf.q, Side::Left), fmt(&rf.q, Side::Right),
                rf.stance[..9].iter().map(|s| format!("{s:?}")[..1].to_string()).collect::<Vec<_>>().concat(),
            );
            let anatomy = |label: &str, knots: &Vec<DVector<f64>>| {
                let dec = cimpc::DecisionTrajectory { knots: knots.clone() };
                let mp = MpcParams::for_model(&model);
                let res = cimpc::residuals(&model, &terrain, &state, &dec, &rf, &mp);
                let dof = model.dof();
                let n = mp.n;
                let mut acc: std::collections::BTreeMap<String, f64> = Default::default();
                let group = |i: usize| match i {
                    0 => "base.x".to_string(),
                    1 => "base.z".to_string(),
                    2 => "base.p".to_string(),
                    3..=5 => "Lleg".to_string(),
                    _ => "Rleg".to_string(),
                };
                for k in 1..=n {
                    let row = (k - 1) * 2 * dof;
                    for i in 0..dof {
                        *acc.entry(format!("pos.{}", group(i))).or_default()
                            += 0.5 * res[row + i] * res[row + i];
                        *acc.entry(format!("vel.{}", group(i))).or_default()
                            += 0.5 * res[row + dof + i] * res[row + dof + i];
                    }
                }
                let tbase = n * 2 * dof;
                for k in 0..n {
                    for i in 0..dof {
                        *acc.entry(format!("tau.{}", group(i))).or_default()
                            += 0.5 * res[tbase + k * dof + i] * res[tbase + k * dof + i];
                    }
                }
                let mut items: Vec<_> = acc.into_iter().collect();
                items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
                let total: f64 = items.iter().map(|(_, v)| v).sum();
                println!("   {label} total={total:.0} {}",
                    items.iter().take(8).map(|(k, v)| format!("{k}={v:.0}")).collect::<Vec<_>>().join(" "));
            };
            if tick == 1 && std::env::var("CONTACT").is_ok() {
                let mp = MpcParams::for_model(&model);
                println!(
                    "mg={:.1} ssp_sink={:.4} dsp_sink={:.4}",
                    model.total_mass() * model.gravity,
                    ctrl.refgen.ssp_sink,
                    ctrl.refgen.dsp_sink
                );
                for k in [1usize, 3, 8, 12] {
                    let f = cimpc::contact_force(&model, &terrain, &rf.q[k], &rf.v[k], &mp.contact);
                    let soleL = sole_pose(&model, &rf.q[k], Side::Left).unwrap().0;
                    let soleR = sole_pose(&model, &rf.q[k], Side::Right).unwrap().0;
                    println!(
                        "  knot {k} tag={:?} soleL_z={:+.4} soleR_z={:+.4} fn={:?} sum={:.1}",
                        rf.stance[k], soleL.y, soleR.y,
                        f.iter().map(|p| p.1.round()).collect::<Vec<_>>(),
                        f.iter().map(|p| p.1).sum::<f64>()
                    );
                }
            }
            let knotprof = |label: &str, knots: &Vec<DVector<f64>>| {
                let dec = cimpc::DecisionTrajectory { knots: knots.clone() };
                let mp = MpcParams::for_model(&model);
                let res = cimpc::residuals(&model, &terrain, &state, &dec, &rf, &mp);
                let dof = model.dof();
                let n = mp.n;
                let tbase = n * 2 * dof;
                for (nm, i) in [("x", 0usize), ("z", 1), ("p", 2)] {
                    let prof: Vec<i64> = (0..n)
                        .map(|k| {
                            let r = res[tbase + k * dof + i];
                            (0.5 * r * r) as i64
                        })
                        .collect();
                    println!("   {label} tau.base.{nm} per-knot {prof:?}");
                }
            };
            if std::env::var("BREAKDOWN").is_ok()
                && ((0.56..0.64).contains(&t) || (0.02..0.04).contains(&t))
            {
                let fmx = |q: &[DVector<f64>], side: Side| {
                    (0..=8)
                        .map(|k| {
                            format!("{:+.0}", sole_pose(&model, &q[k], side).unwrap().0.x * 1000.0)
                        })
                        .collect::<Vec<_>>()
                        .join(",")
                };
                println!(
                    "   planLx[{}] refLx[{}] baseRefx[{}] basePlanx[{}]",
                    fmx(&plan.q, Side::Left),
                    fmx(&rf.q, Side::Left),
                    (0..=8).map(|k| format!("{:+.0}", rf.q[k][0] * 1000.0)).collect::<Vec<_>>().join(","),
                    (0..=8).map(|k| format!("{:+.0}", plan.q[k][0] * 1000.0)).collect::<Vec<_>>().join(","),
                );
                anatomy("plan ", &plan.q);
                let mut rfix = rf.clone();
                support_fixup(&model, &terrain, &mut rfix, &MpcParams::for_model(&model).contact);
                let mut d = cimpc::DecisionTrajectory { knots: rfix.q.clone() };
                d.knots[0] = state.q.clone();
                anatomy("ref~f", &d.knots);
                knotprof("ref~f", &d.knots);
                knotprof("plan ", &plan.q);
                // pure walking branch, bypassing the blend
                let mut q_walk = Vec::new();
                for k in 0..=25usize {
                    let tt = (k as f64 * 0.05).min(rom.horizon - 1e-9);
                    let step = rom.step_at(tt);
                    let side = if step.index % 2 == 0 {
                        ctrl.gait.stance
                    } else {
                        ctrl.gait.stance.other()
                    };
                    let y = refgen::build_outputs(&rom, tt, ctrl.gait.swing_origin, &cmd, &ctrl.refgen);
                    let base_x = base_profile_x(&state, &cmd, &ctrl.refgen, 0.05, k) - step.stance_pos;
                    let ik = refgen::inverse_kinematics_clamped(&model, &y, side, base_x, &[]).unwrap();
                    let phase = (step.phase_at_start + (tt - step.start)) / rom.params.t_ssp;
                    let sink = if phase < 0.10 { ctrl.refgen.dsp_sink } else { ctrl.refgen.ssp_sink };
                    let q = refgen::world_config(
                        &model, &ik, side, (step.stance_pos, ctrl.refgen.ground - sink), &[],
                    )
                    .unwrap();
                    q_walk.push(q);
                }
                let mut wref = refgen::ReferenceTrajectory {
                    dt: 0.05,
                    v: refgen::finite_difference_velocities(&q_walk, 0.05),
                    q: q_walk,
                    stance: rf.stance.clone(),
                    alpha: 1.0,
                    phi: 0.0,
                    clamped: false,
                };
                support_fixup(&model, &terrain, &mut wref, &MpcParams::for_model(&model).contact);
                let mut dw = cimpc::DecisionTrajectory { knots: wref.q.clone() };
                dw.knots[0] = state.q.clone();
                anatomy("walk ", &dw.knots);
                knotprof("walk ", &dw.knots);
                let mut mp2 = MpcParams::for_model(&model);
                mp2.max_iters = std::env::var("ITERS")
                    .ok()
                    .and_then(|v| v.parse().ok())
                    .unwrap_or(3);
                let sol2 = cimpc::solve(&model, &terrain, &state, &rf, &d, &mp2);
                println!(
                    "   WSREF c={:9.0} it={} planL[{}] planR[{}]",
                    sol2.cost, sol2.iterations,
                    fmt(&sol2.q, Side::Left), fmt(&sol2.q, Side::Right),
                );
                anatomy("wsref", &sol2.q);
            }
            for _ in 0..20 {
                let (u, _) = ctrl.torque(&state);
                sim::step(&model, &terrain, &mut state, &u, &sp, &[], 0.0).unwrap();
                ctrl.tick(sp.dt);
            }
        }
    }

    #[test]
    #[ignore]
    fn debug_first_tick() {
        let model = RobotModel::from_file(format!(
            "{}/../../models/biped.model",
            env!("CARGO_MANIFEST_DIR")
        ))
        .unwrap();
        let refp = RefGenParams::default();
        let (q0, _) = refgen::standing_pose(&model, 0.62, &refp, &[]).unwrap();
        let est = WholeBodyState::new(q0.clone(), DVector::zeros(model.dof()));
        let cmd = CommandVector { vx: 0.4, ..Default::default() };
        let mut mpc = MpcParams::for_model(&model);
        println!("w_torque = {:?}", mpc.w_torque.as_slice());
        println!("w_pos = {:?}", mpc.w_pos.as_slice());
        let mut ctrl = Controller::new(
            ControllerKind::Combined,
            model.clone(),
            &Terrain::flat(),
            HlipParams::default(),
            refp.clone(),
            mpc.clone(),
            LowLevelGains::default(),
            vec![],
            &est.q,
        )
        .unwrap();
        let diag = ctrl.replan(&est, &cmd, 0.0);
        println!("alpha={} phi={} cost={} hist_len={}", diag.alpha, diag.phi, diag.cost, diag.iterations);
        let plan = ctrl.plan().unwrap();
        println!("history = {:?}", plan.history);
        for k in 0..6 {
            println!(
                "q[{k}] base=({:+.4},{:.4},{:+.4}) legs={:?}",
                plan.q[k][0],
                plan.q[k][1],
                plan.q[k][2],
                plan.q[k].as_slice()[3..].iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
            if k < 5 {
                println!("  u[{k}] = {:?}", plan.u[k].as_slice()[3..].iter().map(|x| (x * 10.0).round() / 10.0).collect::<Vec<_>>());
                println!("  lam[{k}] = {:?}", plan.lambda[k].iter().map(|(t, n)| ((t * 10.0).round() / 10.0, (n * 10.0).round() / 10.0)).collect::<Vec<_>>());
            }
        }
        // what does the reference itself look like?
        let rom = hlip::plan(
            HlipState { pos: kinematics::com(&model, &est.q).x - sole_pose(&model, &est.q, Side::Left).unwrap().0.x, vel: 0.0 },
            sole_pose(&model, &est.q, Side::Left).unwrap().0.x,
            0.0,
            cmd.vx,
            mpc.horizon(),
            &HlipParams::default(),
        )
        .unwrap();
        let gref = GaitRef { stance: Side::Left, swing_origin: ctrl.gait.swing_origin, arm_ref: vec![] };
        let mut refp2 = refp.clone();
        refp2.ground = 0.0;
        let reference =
            refgen::assemble_reference(&est, &cmd, &rom, &gref, &model, &refp2, mpc.dt, mpc.n).unwrap();
        for k in 0..6 {
            println!(
                "ref q[{k}] base=({:+.4},{:.4},{:+.4}) v={:?}",
                reference.q[k][0],
                reference.q[k][1],
                reference.q[k][2],
                reference.v[k].as_slice().iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>()
            );
        }
    }
}
