//! Whole-body reference synthesis.
//!
//! The reduced-order plan gives stance positions and a COM trajectory; this
//! module turns that into full-state knots the tracker can consume. Outputs
//! (COM height, torso pitch, swing foot pose) are defined relative to the
//! stance *sole* frame (the ankle projected to the support plane), which
//! makes swing height zero exactly at touchdown.
//!
//! The leg IK is analytic (two-segment geometry) wrapped in one scalar root
//! solve on the pelvis height so the whole-body COM lands exactly at the
//! commanded height. A separate statically-stable standing pose is blended
//! in through a tanh activation of the command/velocity magnitude, so small
//! commands keep the robot standing and large ones hand over to walking.

use crate::convention::Side;
use crate::hlip::HlipSolution;
use crate::kinematics;
use crate::model::{LegChain, ModelError, RobotModel};
use crate::state::WholeBodyState;
use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RefGenError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("inverse kinematics: {0}")]
    Ik(#[from] IkError),
}

#[derive(Debug, Error)]
pub enum IkError {
    /// Target COM height misses the reachable band; `excess` is the signed
    /// distance beyond the nearest attainable height (positive = too high).
    #[error("output target unreachable; {excess:.4} m beyond the closest feasible height")]
    Unreachable { excess: f64 },
    /// Foot target too far away horizontally for the legs at any height.
    #[error("foot target out of reach for leg geometry")]
    FootOutOfReach,
}

/// User command: desired planar velocities and COM height. The lateral and
/// yaw channels exist for parity with the blend weighting but stay zero on
/// this planar robot.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CommandVector {
    #[serde(default)]
    pub vx: f64,
    #[serde(default)]
    pub vy: f64,
    #[serde(default)]
    pub wz: f64,
    pub z0: f64,
}

impl Default for CommandVector {
    fn default() -> Self {
        CommandVector { vx: 0.0, vy: 0.0, wz: 0.0, z0: 0.62 }
    }
}

/// Tracked outputs, relative to the stance sole frame.
#[derive(Debug, Clone, Copy)]
pub struct OutputVector {
    pub z_com: f64,
    pub torso_pitch: f64,
    pub swing_pos: Vector2<f64>,
    pub swing_pitch: f64,
}

/// Activation shape and the command/velocity thresholds that normalize the
/// blend norm (each channel maps to 1 at its threshold).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlendParams {
    pub rho1: f64,
    pub rho2: f64,
    pub vx_max: f64,
    pub vy_max: f64,
    pub wz_max: f64,
    /// Threshold for the COM-height channel, which measures deviation from
    /// `z_nominal` rather than absolute height.
    pub z0_min: f64,
    pub vbx_max: f64,
    pub vby_max: f64,
    pub z_nominal: f64,
}

impl Default for BlendParams {
    fn default() -> Self {
        BlendParams {
            rho1: 5.0,
            rho2: 0.5,
            vx_max: 0.7,
            vy_max: 0.3,
            wz_max: 35.0_f64.to_radians(),
            z0_min: 0.45,
            vbx_max: 0.5,
            vby_max: 0.4,
            z_nominal: 0.62,
        }
    }
}

/// Everything assemble_reference needs beyond the instantaneous state and
/// the reduced-order plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefGenParams {
    pub blend: BlendParams,
    /// Swing apex clearance above the higher endpoint.
    pub apex: f64,
    /// Fore-aft distance between soles in the standing pose.
    pub standing_split: f64,
    /// Support plane height the references are built against.
    pub ground: f64,
    /// Slew limit on the base-x reference velocity (m/s^2). The reference
    /// approaches the commanded speed at this rate starting from the
    /// measured speed, so a step in the command does not ask for an
    /// instantaneous base velocity jump.
    pub base_accel: f64,
    /// How far below `ground` a loaded sole is placed when one foot carries
    /// the robot (two contact points). The tracker's compliant contact only
    /// produces weight-bearing force at some penetration, so a reference
    /// with soles exactly on the surface is dynamically inconsistent in the
    /// tracker's model; the controller fills these in from its contact
    /// constants.
    pub ssp_sink: f64,
    /// Same, for both feet down (four contact points).
    pub dsp_sink: f64,
    /// Cap on a single step length. The deadbeat placement law is affine in
    /// the pendulum state and happily requests strides past the kinematic
    /// workspace when the measurement is far off the orbit; the swing profile
    /// then has to cover that distance within the phase and turns into a
    /// whip. Catch steps stay useful well below the reach limit.
    pub max_step: f64,
}

impl Default for RefGenParams {
    fn default() -> Self {
        RefGenParams {
            blend: BlendParams::default(),
            apex: 0.08,
            standing_split: 0.10,
            ground: 0.0,
            base_accel: 0.8,
            ssp_sink: 0.0,
            dsp_sink: 0.0,
            max_step: 0.30,
        }
    }
}

/// Gait bookkeeping owned by the caller: which leg is stance at plan time
/// zero, where the swing sole lifted off, and the arm posture to hold.
#[derive(Debug, Clone)]
pub struct GaitRef {
    pub stance: Side,
    pub swing_origin: (f64, f64),
    pub arm_ref: Vec<f64>,
}

/// Per-knot support annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StanceTag {
    Left,
    Right,
    Double,
}

/// Full-state reference knots at fixed spacing.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub q: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub stance: Vec<StanceTag>,
    pub alpha: f64,
    pub phi: f64,
    /// True when any knot's IK target had to be clamped to reach.
    pub clamped: bool,
}

/// Planar foot pose used by the swing interpolant.
#[derive(Debug, Clone, Copy)]
pub struct FootPose {
    pub x: f64,
    pub z: f64,
    pub pitch: f64,
}

fn ease(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Swing interpolant: cubic ease horizontally and in pitch, with a vertical
/// profile that rises to `max(start.z, goal.z) + apex` at mid-swing and
/// arrives with zero vertical velocity.
pub fn swing_foot_trajectory(start: FootPose, goal: FootPose, phase: f64, apex: f64) -> FootPose {
    let s = ease(phase);
    let x = start.x + (goal.x - start.x) * s;
    let pitch = start.pitch + (goal.pitch - start.pitch) * s;
    let peak = start.z.max(goal.z) + apex;
    let z = if phase < 0.5 {
        start.z + (peak - start.z) * ease(2.0 * phase)
    } else {
        peak + (goal.z - peak) * ease(2.0 * phase - 1.0)
    };
    FootPose { x, z, pitch }
}

/// Tracked outputs at plan-relative time `t`. `swing_origin` is the world
/// pose the current swing foot lifted off from; later steps in the horizon
/// swing from the stance position they vacate.
pub fn build_outputs(
    sol: &HlipSolution,
    t: f64,
    swing_origin: (f64, f64),
    command: &CommandVector,
    params: &RefGenParams,
) -> OutputVector {
    let step = sol.step_at(t);
    let t_ssp = sol.params.t_ssp;
    let phase = ((step.phase_at_start + (t - step.start)) / t_ssp).clamp(0.0, 1.0);
    let (x0, z0) = if step.index == 0 {
        swing_origin
    } else {
        // later swings lift out of the loaded stance depth
        (sol.steps[step.index - 1].stance_pos, params.ground - params.ssp_sink)
    };
    let start = FootPose { x: x0, z: z0, pitch: 0.0 };
    let u = step.step_length.clamp(-params.max_step, params.max_step);
    // touchdown lands into shared support
    let goal =
        FootPose { x: step.stance_pos + u, z: params.ground - params.dsp_sink, pitch: 0.0 };
    let sw = swing_foot_trajectory(start, goal, phase, params.apex);
    OutputVector {
        z_com: command.z0,
        torso_pitch: 0.0,
        swing_pos: Vector2::new(sw.x - step.stance_pos, sw.z - params.ground),
        swing_pitch: sw.pitch,
    }
}

/// Joint angles of one leg.
#[derive(Debug, Clone, Copy)]
pub struct LegAngles {
    pub hip: f64,
    pub knee: f64,
    pub ankle: f64,
}

/// IK result: both legs plus the solved base height above the stance sole.
#[derive(Debug, Clone)]
pub struct IkSolution {
    pub stance_leg: LegAngles,
    pub swing_leg: LegAngles,
    pub base_z: f64,
    pub clamped: bool,
    /// The outputs actually realized; differs from the request when the
    /// solver had to clamp it into the feasible envelope.
    pub y: OutputVector,
    pub base_x: f64,
}

/// Two-segment leg geometry: joint angles placing the ankle at `ankle`
/// given the hip pivot at `hip`, with the knee bending backward.
fn leg_geometry(
    hip: Vector2<f64>,
    ankle: Vector2<f64>,
    leg: &LegChain,
    base_pitch: f64,
    foot_pitch: f64,
) -> Result<LegAngles, IkError> {
    let u = ankle - hip;
    let d = u.norm();
    let (l1, l2) = (leg.thigh, leg.shank);
    if d > l1 + l2 || d < (l1 - l2).abs() {
        return Err(IkError::FootOutOfReach);
    }
    // thigh direction angle from straight-down, opening toward +x (knee
    // juts forward, so the shank folds back: the human-like branch)
    let theta_u = u.x.atan2(-u.y);
    let cos_delta = ((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d)).clamp(-1.0, 1.0);
    let alpha1 = theta_u + cos_delta.acos();
    let knee_pos = hip + l1 * Vector2::new(alpha1.sin(), -alpha1.cos());
    let w = ankle - knee_pos;
    let alpha2 = w.x.atan2(-w.y);
    Ok(LegAngles {
        hip: alpha1 - base_pitch,
        knee: alpha2 - alpha1,
        ankle: foot_pitch - alpha2,
    })
}

/// Internal geometry bundle shared by walking IK and the standing pose.
struct IkFrame<'m> {
    model: &'m RobotModel,
    stance: LegChain,
    swing: LegChain,
    arm_joints: Vec<usize>,
}

impl<'m> IkFrame<'m> {
    fn new(model: &'m RobotModel, stance: Side) -> Result<Self, ModelError> {
        let stance_leg = model.leg(stance)?;
        let swing_leg = model.leg(stance.other())?;
        let arm_joints = model.arm_joints()?;
        Ok(IkFrame { model, stance: stance_leg, swing: swing_leg, arm_joints })
    }

    /// Assemble a full configuration in the stance-sole frame for pelvis
    /// height `base_z`. Stance sole sits at the origin, swing sole at the
    /// output target.
    fn config_at(
        &self,
        y: &OutputVector,
        base_x: f64,
        base_z: f64,
        arm_ref: &[f64],
    ) -> Result<DVector<f64>, IkError> {
        let model = self.model;
        let pitch = y.torso_pitch;
        let rot = nalgebra::Rotation2::new(pitch);
        let base = Vector2::new(base_x, base_z);
        let st_hip = base + rot * self.stance.hip_attach;
        let sw_hip = base + rot * self.swing.hip_attach;
        let st_ankle = Vector2::new(0.0, self.stance.sole_height);
        let sw_rot = nalgebra::Rotation2::new(y.swing_pitch);
        let sw_ankle = y.swing_pos + sw_rot * Vector2::new(0.0, self.swing.sole_height);
        let st = leg_geometry(st_hip, st_ankle, &self.stance, pitch, 0.0)?;
        let sw = leg_geometry(sw_hip, sw_ankle, &self.swing, pitch, y.swing_pitch)?;
        let mut q = DVector::zeros(model.dof());
        q[0] = base_x;
        q[1] = base_z;
        q[2] = pitch;
        write_leg(model, &mut q, &self.stance, &st);
        write_leg(model, &mut q, &self.swing, &sw);
        for (i, &j) in self.arm_joints.iter().enumerate() {
            q[model.joint_dof(j)] = arm_ref.get(i).copied().unwrap_or(0.0);
        }
        Ok(q)
    }

    /// Feasible pelvis-height band: high enough that neither leg folds
    /// past its minimum, low enough that neither overstretches.
    fn height_band(&self, y: &OutputVector, base_x: f64) -> Result<(f64, f64), IkError> {
        let rot = nalgebra::Rotation2::new(y.torso_pitch);
        let sw_rot = nalgebra::Rotation2::new(y.swing_pitch);
        let st_ankle = Vector2::new(0.0, self.stance.sole_height);
        let sw_ankle = y.swing_pos + sw_rot * Vector2::new(0.0, self.swing.sole_height);
        let mut hi = f64::INFINITY;
        let mut lo = f64::NEG_INFINITY;
        for (leg, ankle) in [(&self.stance, st_ankle), (&self.swing, sw_ankle)] {
            let a = rot * leg.hip_attach;
            let reach = leg.thigh + leg.shank - 1e-4;
            let dx = base_x + a.x - ankle.x;
            if dx.abs() >= reach {
                return Err(IkError::FootOutOfReach);
            }
            let span = (reach * reach - dx * dx).sqrt();
            hi = hi.min(ankle.y - a.y + span);
            // keep the hip a hand's width above the ankle; deeper crouches
            // than this are outside the gait envelope anyway
            let min_reach = (leg.thigh - leg.shank).abs() + 0.03;
            let min_span = (min_reach * min_reach - dx * dx).max(0.0).sqrt();
            lo = lo.max(ankle.y - a.y + (min_span + 0.05).max(0.08));
        }
        if hi <= lo {
            return Err(IkError::FootOutOfReach);
        }
        Ok((lo, hi))
    }
}

fn write_leg(model: &RobotModel, q: &mut DVector<f64>, leg: &LegChain, a: &LegAngles) {
    q[model.joint_dof(leg.hip)] = a.hip;
    q[model.joint_dof(leg.knee)] = a.knee;
    q[model.joint_dof(leg.ankle)] = a.ankle;
}

/// Solve both legs so the whole-body COM height (above the stance sole)
/// equals `y.z_com`, with the base at horizontal offset `base_x` from the
/// stance sole. Arm joints are held at `arm_ref`.
pub fn inverse_kinematics(
    model: &RobotModel,
    y: &OutputVector,
    stance: Side,
    base_x: f64,
    arm_ref: &[f64],
) -> Result<IkSolution, RefGenError> {
    let frame = IkFrame::new(model, stance)?;
    let (lo, hi) = frame.height_band(y, base_x)?;
    let com_at = |z: f64| -> Result<f64, IkError> {
        let q = frame.config_at(y, base_x, z, arm_ref)?;
        Ok(kinematics::com(model, &q).y)
    };
    let f_hi = com_at(hi)? - y.z_com;
    if f_hi < 0.0 {
        return Err(IkError::Unreachable { excess: -f_hi }.into());
    }
    let f_lo = com_at(lo)? - y.z_com;
    if f_lo > 0.0 {
        return Err(IkError::Unreachable { excess: -f_lo }.into());
    }
    let base_z = solve_monotone(lo, hi, f_lo, f_hi, |z| com_at(z).map(|c| c - y.z_com))?;
    let q = frame.config_at(y, base_x, base_z, arm_ref)?;
    Ok(IkSolution {
        stance_leg: read_leg(model, &q, &frame.stance),
        swing_leg: read_leg(model, &q, &frame.swing),
        base_z,
        clamped: false,
        y: *y,
        base_x,
    })
}

/// Like [`inverse_kinematics`] but clamping unreachable COM heights to the
/// nearest attainable value instead of failing, flagging the result.
pub fn inverse_kinematics_clamped(
    model: &RobotModel,
    y: &OutputVector,
    stance: Side,
    base_x: f64,
    arm_ref: &[f64],
) -> Result<IkSolution, RefGenError> {
    let mut yc = *y;
    let mut bx = base_x;
    let mut clamped = false;
    let mut last = None;
    for _ in 0..10 {
        match inverse_kinematics(model, &yc, stance, bx, arm_ref) {
            Ok(mut sol) => {
                sol.clamped |= clamped;
                return Ok(sol);
            }
            Err(RefGenError::Ik(IkError::Unreachable { excess })) => {
                // pull the height target just inside the feasible band
                yc.z_com -= excess + excess.signum() * 1e-6;
                clamped = true;
                last = Some(IkError::Unreachable { excess }.into());
            }
            Err(e) => {
                // degenerate geometry: walk the whole request toward a
                // posture that is always solvable rather than failing the
                // replan outright
                yc.z_com += 0.4 * (0.55 - yc.z_com);
                yc.torso_pitch *= 0.6;
                yc.swing_pos += 0.4 * (Vector2::new(0.10, 0.0) - yc.swing_pos);
                yc.swing_pitch *= 0.6;
                bx += 0.4 * (0.05 - bx);
                clamped = true;
                last = Some(e);
            }
        }
    }
    Err(last.unwrap_or(IkError::FootOutOfReach.into()))
}

fn read_leg(model: &RobotModel, q: &DVector<f64>, leg: &LegChain) -> LegAngles {
    LegAngles {
        hip: q[model.joint_dof(leg.hip)],
        knee: q[model.joint_dof(leg.knee)],
        ankle: q[model.joint_dof(leg.ankle)],
    }
}

/// Bisection-safeguarded secant for a monotone increasing residual.
fn solve_monotone(
    mut lo: f64,
    mut hi: f64,
    mut f_lo: f64,
    mut f_hi: f64,
    mut f: impl FnMut(f64) -> Result<f64, IkError>,
) -> Result<f64, IkError> {
    for _ in 0..60 {
        let denom = f_hi - f_lo;
        let mut z = if denom.abs() > 1e-15 {
            hi - f_hi * (hi - lo) / denom
        } else {
            0.5 * (lo + hi)
        };
        if !(z > lo && z < hi) {
            z = 0.5 * (lo + hi);
        }
        let fz = f(z)?;
        if fz.abs() < 1e-11 || hi - lo < 1e-13 {
            return Ok(z);
        }
        if fz > 0.0 {
            hi = z;
            f_hi = fz;
        } else {
            lo = z;
            f_lo = fz;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Measure the tracked outputs (and the base offset) from a configuration.
/// The inverse of [`inverse_kinematics`] up to the stance-sole frame shift.
pub fn outputs_from_state(
    model: &RobotModel,
    q: &DVector<f64>,
    stance: Side,
) -> Result<(OutputVector, f64), ModelError> {
    let st = model.leg(stance)?;
    let sw = model.leg(stance.other())?;
    let fk = kinematics::forward_kinematics(model, q);
    let sole = |leg: &LegChain| {
        let ankle = fk.links[leg.foot_link].pos;
        let pitch = fk.links[leg.foot_link].ang;
        let r = nalgebra::Rotation2::new(pitch);
        (ankle - r * Vector2::new(0.0, leg.sole_height), pitch)
    };
    let (st_sole, _) = sole(&st);
    let (sw_sole, sw_pitch) = sole(&sw);
    let c = kinematics::com(model, q);
    let y = OutputVector {
        z_com: c.y - st_sole.y,
        torso_pitch: q[2],
        swing_pos: sw_sole - st_sole,
        swing_pitch: sw_pitch,
    };
    Ok((y, q[0] - st_sole.x))
}

/// Statically stable double-support pose at the commanded COM height:
/// soles flat and `standing_split` apart, COM centered over the midpoint.
/// Returned in a frame with the mid-feet point at x = 0 on the support
/// plane; the caller translates it where needed. Flag is true if the
/// height was clamped to reach.
pub fn standing_pose(
    model: &RobotModel,
    z0d: f64,
    params: &RefGenParams,
    arm_ref: &[f64],
) -> Result<(DVector<f64>, bool), RefGenError> {
    let split = params.standing_split;
    // left sole at the origin of the IK frame, right sole `split` ahead;
    // solve for the base offset that centers the COM between the feet
    let y = OutputVector {
        z_com: z0d,
        torso_pitch: 0.0,
        swing_pos: Vector2::new(split, 0.0),
        swing_pitch: 0.0,
    };
    let frame = IkFrame::new(model, Side::Left)?;
    let mut base_x = split / 2.0;
    let mut clamped = false;
    let mut q = DVector::zeros(model.dof());
    for _ in 0..8 {
        let sol = inverse_kinematics_clamped(model, &y, Side::Left, base_x, arm_ref)?;
        clamped = sol.clamped;
        q = frame.config_at(&sol.y, sol.base_x, sol.base_z, arm_ref)?;
        let err = kinematics::com(model, &q).x - split / 2.0;
        if err.abs() < 1e-10 {
            break;
        }
        base_x -= err;
    }
    // shift so the mid-feet point is x = 0 and the soles sit on the plane
    q[0] -= split / 2.0;
    q[1] += params.ground;
    Ok((q, clamped))
}

/// `alpha = 0.5 tanh(rho1 (phi - rho2)) + 0.5`.
pub fn activation(phi: f64, params: &BlendParams) -> f64 {
    0.5 * (params.rho1 * (phi - params.rho2)).tanh() + 0.5
}

/// Squared weighted norm of commands and base velocity; each channel is
/// divided by its threshold so a channel at threshold contributes 1.
pub fn phi(command: &CommandVector, base_velocity: (f64, f64), params: &BlendParams) -> f64 {
    let z_dev = command.z0 - params.z_nominal;
    let terms = [
        command.vx / params.vx_max,
        command.vy / params.vy_max,
        command.wz / params.wz_max,
        z_dev / params.z0_min,
        base_velocity.0 / params.vbx_max,
        base_velocity.1 / params.vby_max,
    ];
    terms.iter().map(|t| t * t).sum()
}

/// Componentwise convex combination of two knots.
pub fn blend(walk: &DVector<f64>, stand: &DVector<f64>, alpha: f64) -> DVector<f64> {
    walk * alpha + stand * (1.0 - alpha)
}

/// Backward-difference velocities; the first knot copies the second.
pub fn finite_difference_velocities(q_seq: &[DVector<f64>], dt: f64) -> Vec<DVector<f64>> {
    assert!(q_seq.len() >= 2, "need at least two knots");
    let mut v = Vec::with_capacity(q_seq.len());
    v.push((&q_seq[1] - &q_seq[0]) / dt);
    for k in 1..q_seq.len() {
        v.push((&q_seq[k] - &q_seq[k - 1]) / dt);
    }
    v
}

/// Constant standing reference of `n + 1` knots at the commanded height.
pub fn standing_reference(
    model: &RobotModel,
    z0d: f64,
    params: &RefGenParams,
    arm_ref: &[f64],
    dt: f64,
    n: usize,
) -> Result<ReferenceTrajectory, RefGenError> {
    let (q, clamped) = standing_pose(model, z0d, params, arm_ref)?;
    let zero = DVector::zeros(model.dof());
    Ok(ReferenceTrajectory {
        dt,
        q: vec![q; n + 1],
        v: vec![zero; n + 1],
        stance: vec![StanceTag::Double; n + 1],
        alpha: 0.0,
        phi: 0.0,
        clamped,
    })
}

/// Build the blended reference: IK on the reduced-order plan for walking,
/// the static pose for standing, combined by the activation of the command
/// magnitude. The walking torso propagates at the commanded velocity from
/// the measured base position.
#[allow(clippy::too_many_arguments)]
pub fn assemble_reference(
    state: &WholeBodyState,
    command: &CommandVector,
    sol: &HlipSolution,
    gait: &GaitRef,
    model: &RobotModel,
    params: &RefGenParams,
    dt: f64,
    n: usize,
) -> Result<ReferenceTrajectory, RefGenError> {
    let phi_val = phi(command, (state.v[0], 0.0), &params.blend);
    let alpha = activation(phi_val, &params.blend);

    // base-x profile: start at the measured position and speed, slew the
    // velocity toward the command
    let mut base_profile = Vec::with_capacity(n + 1);
    {
        let mut x = state.q[0];
        let mut v = state.v[0];
        base_profile.push((x, v));
        for _ in 0..n {
            let dv = (command.vx - v).clamp(-params.base_accel * dt, params.base_accel * dt);
            v += dv;
            x += v * dt;
            base_profile.push((x, v));
        }
    }

    let mut q_walk = Vec::with_capacity(n + 1);
    let mut stance_tags = Vec::with_capacity(n + 1);
    let mut clamped = false;
    for k in 0..=n {
        let t = (k as f64 * dt).min(sol.horizon - 1e-9);
        let step = sol.step_at(t);
        let side = if step.index % 2 == 0 { gait.stance } else { gait.stance.other() };
        let y = build_outputs(sol, t, gait.swing_origin, command, params);
        let base_x_world = base_profile[k].0;
        let base_x = base_x_world - step.stance_pos;
        let ik = inverse_kinematics_clamped(model, &y, side, base_x, &gait.arm_ref)?;
        clamped |= ik.clamped;
        let phase = (step.phase_at_start + (t - step.start)) / sol.params.t_ssp;
        let tag = if phase < 0.10 {
            StanceTag::Double
        } else {
            match side {
                Side::Left => StanceTag::Left,
                Side::Right => StanceTag::Right,
            }
        };
        let sink = if matches!(tag, StanceTag::Double) { params.dsp_sink } else { params.ssp_sink };
        let q =
            world_config(model, &ik, side, (step.stance_pos, params.ground - sink), &gait.arm_ref)?;
        q_walk.push(q);
        stance_tags.push(tag);
    }
    let v_walk = finite_difference_velocities(&q_walk, dt);

    // standing branch: feet planted where they are now, torso following the
    // commanded velocity profile within leg reach. The moving torso is what
    // pulls the robot out of standstill so the activation can climb; keeping
    // the legs articulated under it keeps the knots kinematically consistent.
    let split = params.standing_split;
    let (y_now, base_off) = outputs_from_state(model, &state.q, Side::Left)?;
    let left_x = state.q[0] - base_off;
    let mid_x = left_x + y_now.swing_pos.x / 2.0;
    let y_stand = OutputVector {
        z_com: command.z0,
        torso_pitch: 0.0,
        swing_pos: Vector2::new(split, 0.0),
        swing_pitch: 0.0,
    };
    let frame = IkFrame::new(model, Side::Left)?;
    let reach = 0.20;
    let mut q_stand = Vec::with_capacity(n + 1);
    for k in 0..=n {
        // base offset in the IK frame whose left sole is at mid_x - split/2
        let bx = (base_profile[k].0 - (mid_x - split / 2.0))
            .clamp(split / 2.0 - reach, split / 2.0 + reach);
        let sol = inverse_kinematics_clamped(model, &y_stand, Side::Left, bx, &gait.arm_ref)?;
        clamped |= sol.clamped;
        let mut q = frame.config_at(&sol.y, sol.base_x, sol.base_z, &gait.arm_ref)?;
        q[0] += mid_x - split / 2.0;
        q[1] += params.ground - params.dsp_sink;
        q_stand.push(q);
    }
    let v_stand = finite_difference_velocities(&q_stand, dt);

    let mut q_ref = Vec::with_capacity(n + 1);
    let mut v_ref = Vec::with_capacity(n + 1);
    for k in 0..=n {
        q_ref.push(blend(&q_walk[k], &q_stand[k], alpha));
        v_ref.push(blend(&v_walk[k], &v_stand[k], alpha));
    }
    Ok(ReferenceTrajectory {
        dt,
        q: q_ref,
        v: v_ref,
        stance: stance_tags,
        alpha,
        phi: phi_val,
        clamped,
    })
}

/// Lift an IK solution (stance-sole frame) into world coordinates given
/// the stance sole's world position. The pelvis height comes from the
/// solve, so a clamped solution lands at its clamped height here too.
pub(crate) fn world_config(
    model: &RobotModel,
    ik: &IkSolution,
    stance: Side,
    stance_sole: (f64, f64),
    arm_ref: &[f64],
) -> Result<DVector<f64>, RefGenError> {
    let frame = IkFrame::new(model, stance)?;
    let mut q = frame.config_at(&ik.y, ik.base_x, ik.base_z, arm_ref)?;
    q[0] += stance_sole.0;
    q[1] += stance_sole.1;
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hlip::{self, HlipParams, HlipState};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn biped() -> RobotModel {
        let path = format!("{}/../../models/biped.model", env!("CARGO_MANIFEST_DIR"));
        RobotModel::from_file(path).unwrap()
    }

    #[test]
    fn swing_spline_boundary_and_apex() {
        let start = FootPose { x: 0.1, z: 0.02, pitch: 0.0 };
        let goal = FootPose { x: 0.5, z: 0.0, pitch: 0.1 };
        let p0 = swing_foot_trajectory(start, goal, 0.0, 0.08);
        assert_relative_eq!(p0.x, start.x);
        assert_relative_eq!(p0.z, start.z);
        let p1 = swing_foot_trajectory(start, goal, 1.0, 0.08);
        assert_relative_eq!(p1.x, goal.x);
        assert_relative_eq!(p1.z, goal.z);
        assert_relative_eq!(p1.pitch, goal.pitch);
        let mid = swing_foot_trajectory(start, goal, 0.5, 0.08);
        assert_relative_eq!(mid.z, 0.02 + 0.08, epsilon = 1e-10);
        // zero vertical velocity at both ends
        let h = 1e-6;
        let d0 = (swing_foot_trajectory(start, goal, h, 0.08).z - p0.z) / h;
        let d1 = (p1.z - swing_foot_trajectory(start, goal, 1.0 - h, 0.08).z) / h;
        assert!(d0.abs() < 1e-4);
        assert!(d1.abs() < 1e-4);
    }

    #[test]
    fn activation_values_and_monotonicity() {
        let p = BlendParams::default();
        assert_relative_eq!(activation(p.rho2, &p), 0.5, epsilon = 1e-15);
        assert_relative_eq!(activation(0.0, &p), 0.00669285, epsilon = 1e-7);
        let mut last = -1.0;
        for i in 0..100 {
            let a = activation(i as f64 * 0.05, &p);
            assert!(a >= last && a <= 1.0);
            if i < 30 {
                assert!(a > last);
            }
            last = a;
        }
    }

    #[test]
    fn phi_threshold_normalization() {
        let p = BlendParams::default();
        let mut cmd = CommandVector { vx: 0.0, vy: 0.0, wz: 0.0, z0: p.z_nominal };
        assert_relative_eq!(phi(&cmd, (0.0, 0.0), &p), 0.0);
        cmd.vx = p.vx_max;
        assert_relative_eq!(phi(&cmd, (0.0, 0.0), &p), 1.0, epsilon = 1e-12);
        assert_relative_eq!(phi(&cmd, (p.vbx_max, 0.0), &p), 2.0, epsilon = 1e-12);
        cmd.vx = 0.0;
        cmd.z0 = p.z_nominal - p.z0_min;
        assert_relative_eq!(phi(&cmd, (0.0, 0.0), &p), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn blend_is_affine_and_convex() {
        let a = nalgebra::dvector![1.0, -2.0, 3.0];
        let b = nalgebra::dvector![0.0, 4.0, -1.0];
        let m = blend(&a, &b, 0.5);
        assert_relative_eq!(m, (&a + &b) * 0.5);
        let s = blend(&a, &b, 0.3) + blend(&b, &a, 0.3);
        assert_relative_eq!(s, &a + &b, epsilon = 1e-14);
        let c = blend(&a, &b, 0.7);
        for i in 0..3 {
            assert!(c[i] <= a[i].max(b[i]) + 1e-12 && c[i] >= a[i].min(b[i]) - 1e-12);
        }
    }

    #[test]
    fn finite_differences_on_ramps_and_parabolas() {
        let dt = 0.05;
        let constant = vec![nalgebra::dvector![2.0]; 4];
        for v in finite_difference_velocities(&constant, dt) {
            assert_relative_eq!(v[0], 0.0);
        }
        let ramp: Vec<_> = (0..5).map(|k| nalgebra::dvector![3.0 * k as f64 * dt]).collect();
        for v in finite_difference_velocities(&ramp, dt) {
            assert_relative_eq!(v[0], 3.0, epsilon = 1e-12);
        }
        // quadratic q = t^2: backward difference lags by exactly dt
        let quad: Vec<_> = (0..6).map(|k| {
            let t = k as f64 * dt;
            nalgebra::dvector![t * t]
        }).collect();
        let v = finite_difference_velocities(&quad, dt);
        for k in 1..6 {
            let t = k as f64 * dt;
            let err = (v[k][0] - 2.0 * t).abs();
            assert!(err <= dt + 1e-12, "O(dt) bound violated: {err}");
        }
    }

    #[test]
    fn ik_fk_round_trip_on_random_reachable_outputs() {
        let model = biped();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tested = 0;
        while tested < 100 {
            let y = OutputVector {
                z_com: rng.random_range(0.50..0.70),
                torso_pitch: rng.random_range(-0.2..0.2),
                swing_pos: Vector2::new(rng.random_range(-0.3..0.3), rng.random_range(0.0..0.12)),
                swing_pitch: rng.random_range(-0.3..0.3),
            };
            let base_x = rng.random_range(-0.10..0.10);
            let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
            let sol = match inverse_kinematics(&model, &y, side, base_x, &[]) {
                Ok(s) => s,
                Err(_) => continue, // outside the reachable band; skip
            };
            tested += 1;
            let frame = IkFrame::new(&model, side).unwrap();
            let q = frame.config_at(&y, base_x, sol.base_z, &[]).unwrap();
            let (y_meas, base_meas) = outputs_from_state(&model, &q, side).unwrap();
            assert_relative_eq!(y_meas.z_com, y.z_com, epsilon = 1e-8);
            assert_relative_eq!(y_meas.torso_pitch, y.torso_pitch, epsilon = 1e-10);
            assert_relative_eq!(y_meas.swing_pos.x, y.swing_pos.x, epsilon = 1e-8);
            assert_relative_eq!(y_meas.swing_pos.y, y.swing_pos.y, epsilon = 1e-8);
            assert_relative_eq!(y_meas.swing_pitch, y.swing_pitch, epsilon = 1e-10);
            assert_relative_eq!(base_meas, base_x, epsilon = 1e-8);
            // human-like branch: knees bend backward
            let legs = model.leg_chains().unwrap();
            for leg in &legs {
                assert!(q[model.joint_dof(leg.knee)] <= 1e-9);
            }
        }
    }

    #[test]
    fn ik_round_trips_a_known_configuration() {
        let model = biped();
        // build a plausible crouch by IK, then measure and re-solve
        let y = OutputVector {
            z_com: 0.62,
            torso_pitch: 0.0,
            swing_pos: Vector2::new(0.14, 0.0),
            swing_pitch: 0.0,
        };
        let sol = inverse_kinematics(&model, &y, Side::Left, 0.05, &[]).unwrap();
        let frame = IkFrame::new(&model, Side::Left).unwrap();
        let q = frame.config_at(&y, 0.05, sol.base_z, &[]).unwrap();
        let (y2, bx) = outputs_from_state(&model, &q, Side::Left).unwrap();
        let sol2 = inverse_kinematics(&model, &y2, Side::Left, bx, &[]).unwrap();
        assert_relative_eq!(sol2.stance_leg.hip, sol.stance_leg.hip, epsilon = 1e-8);
        assert_relative_eq!(sol2.stance_leg.knee, sol.stance_leg.knee, epsilon = 1e-8);
        assert_relative_eq!(sol2.swing_leg.ankle, sol.swing_leg.ankle, epsilon = 1e-8);
        assert_relative_eq!(sol2.base_z, sol.base_z, epsilon = 1e-8);
    }

    #[test]
    fn ik_errors_above_reach() {
        let model = biped();
        let y = OutputVector {
            z_com: 1.2,
            torso_pitch: 0.0,
            swing_pos: Vector2::new(0.1, 0.0),
            swing_pitch: 0.0,
        };
        match inverse_kinematics(&model, &y, Side::Left, 0.0, &[]) {
            Err(RefGenError::Ik(IkError::Unreachable { excess })) => assert!(excess > 0.1),
            other => panic!("expected unreachable, got {other:?}"),
        }
        let sol = inverse_kinematics_clamped(&model, &y, Side::Left, 0.0, &[]).unwrap();
        assert!(sol.clamped);
    }

    #[test]
    fn standing_pose_feet_flat_and_com_centered() {
        let model = biped();
        let params = RefGenParams::default();
        let (q, clamped) = standing_pose(&model, 0.62, &params, &[]).unwrap();
        assert!(!clamped);
        let terrain = crate::terrain::Terrain::flat();
        let ck = kinematics::contact_kinematics(&model, &terrain, &q, &DVector::zeros(model.dof()));
        let mut xs = Vec::new();
        for pt in &ck.points {
            assert_relative_eq!(pt.phi, 0.0, epsilon = 1e-7);
            xs.push(pt.pos.x);
        }
        let c = kinematics::com(&model, &q);
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(c.x > lo && c.x < hi, "com {x} outside [{lo}, {hi}]", x = c.x);
        assert_relative_eq!(c.y, 0.62, epsilon = 1e-7);
        // mid-feet at the origin by convention
        assert_relative_eq!((lo + hi) / 2.0, 0.02, epsilon = 1e-9); // heel/toe asymmetry shifts sphere midspan
    }

    #[test]
    fn standing_torques_within_limits() {
        use crate::dynamics;
        let model = biped();
        let params = RefGenParams::default();
        let (q, _) = standing_pose(&model, 0.62, &params, &[]).unwrap();
        let v = DVector::zeros(model.dof());
        let terrain = crate::terrain::Terrain::flat();
        let ck = kinematics::contact_kinematics(&model, &terrain, &q, &v);
        // pick contact forces that zero the base rows (minimum-norm static
        // distribution), then check the joint rows against limits
        let h = dynamics::bias_forces(&model, &q, &v);
        let npts = ck.points.len();
        let mut jb = nalgebra::DMatrix::zeros(3, 2 * npts);
        for (i, pt) in ck.points.iter().enumerate() {
            for r in 0..3 {
                jb[(r, 2 * i)] = pt.jac_t[r];
                jb[(r, 2 * i + 1)] = pt.jac_n[r];
            }
        }
        let svd = jb.clone().svd(true, true);
        let lam = svd.solve(&h.rows(0, 3).into_owned(), 1e-10).unwrap();
        let forces: Vec<(f64, f64)> = (0..npts).map(|i| (lam[2 * i], lam[2 * i + 1])).collect();
        let tau = dynamics::inverse_dynamics(&model, &q, &v, &DVector::zeros(model.dof()), &ck, &forces);
        for r in 0..3 {
            assert!(tau[r].abs() < 1e-6, "base row {r} = {}", tau[r]);
        }
        for (j, joint) in model.joints.iter().enumerate() {
            let t = tau[model.joint_dof(j)];
            assert!(
                t.abs() < joint.torque_limit,
                "{}: {t} exceeds {}",
                joint.name,
                joint.torque_limit
            );
        }
    }

    fn walking_setup() -> (RobotModel, HlipSolution, GaitRef, CommandVector, RefGenParams) {
        let model = biped();
        let p = HlipParams::default();
        let cmd = CommandVector { vx: 0.4, ..Default::default() };
        let x0 = HlipState { pos: 0.02, vel: 0.35 };
        let sol = hlip::plan(x0, 0.0, 0.1, cmd.vx, 1.25, &p).unwrap();
        let gait = GaitRef {
            stance: Side::Left,
            swing_origin: (-0.12, 0.0),
            arm_ref: vec![],
        };
        (model, sol, gait, cmd, RefGenParams::default())
    }

    #[test]
    fn assemble_reference_has_expected_shape() {
        let (model, sol, gait, cmd, params) = walking_setup();
        let mut state = WholeBodyState::zeros(model.dof());
        state.q[0] = 0.02;
        state.q[1] = 0.78;
        state.v[0] = 0.35;
        let r =
            assemble_reference(&state, &cmd, &sol, &gait, &model, &params, 0.05, 25).unwrap();
        assert_eq!(r.q.len(), 26);
        assert_eq!(r.v.len(), 26);
        assert_eq!(r.stance.len(), 26);
        assert!(r.alpha > 0.5, "walking command should activate walking: {}", r.alpha);
        // stance annotation alternates through the horizon
        assert!(r.stance.contains(&StanceTag::Left));
        assert!(r.stance.contains(&StanceTag::Right));
        // velocities consistent with backward differences of positions
        for k in 1..26 {
            let fd = (&r.q[k] - &r.q[k - 1]) / 0.05;
            assert_relative_eq!(r.v[k], fd, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_command_reference_is_standing() {
        let (model, _, gait, _, params) = walking_setup();
        let cmd = CommandVector::default();
        let p = HlipParams::default();
        let sol = hlip::plan(HlipState { pos: 0.0, vel: 0.0 }, 0.0, 0.0, 0.0, 1.25, &p).unwrap();
        let state = {
            let (q, _) = standing_pose(&model, 0.62, &params, &[]).unwrap();
            WholeBodyState::new(q, DVector::zeros(model.dof()))
        };
        let r = assemble_reference(&state, &cmd, &sol, &gait, &model, &params, 0.05, 25).unwrap();
        assert!(r.alpha < 0.01, "alpha = {}", r.alpha);
        let (mut q_stand, _) = standing_pose(&model, 0.62, &params, &[]).unwrap();
        q_stand[0] = state.q[0];
        for k in [0, 12, 25] {
            for i in 0..model.dof() {
                assert!(
                    (r.q[k][i] - q_stand[i]).abs() < 0.02,
                    "knot {k} dof {i}: {} vs {}",
                    r.q[k][i],
                    q_stand[i]
                );
            }
        }
    }
}
