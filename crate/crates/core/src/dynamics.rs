//! Rigid-body dynamics on the planar kinematic tree.
//!
//! Inverse dynamics is a planar Newton-Euler recursion; the joint-space
//! mass matrix is assembled from per-link COM Jacobians, which keeps it
//! symmetric to the last bit. Both are generic over [`Real`] so the
//! optimizer can differentiate through them.

use crate::kinematics::{self, ContactKinematics, Frames};
use crate::model::RobotModel;
use crate::scalar::{Real, V2};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("mass matrix is not positive definite at this configuration")]
    NotPositiveDefinite,
}

/// Per-link quantities from the forward (outward) sweep.
pub(crate) struct BodyMotion<T> {
    /// Angular acceleration of each link.
    pub wd: Vec<T>,
    /// World COM position of each link.
    pub com: Vec<V2<T>>,
    /// World COM acceleration of each link.
    pub com_acc: Vec<V2<T>>,
}

pub(crate) fn body_motion<T: Real>(
    model: &RobotModel,
    fr: &Frames<T>,
    v: &[T],
    a: &[T],
) -> BodyMotion<T> {
    let nl = model.num_links();
    let vels = kinematics::frame_velocities(model, fr, v);
    let mut wd = vec![T::zero(); nl];
    let mut acc = vec![V2::zero(); nl];
    if !model.fixed_base {
        acc[0] = V2::new(a[0], a[1]);
        wd[0] = a[2];
    }
    for &l in model.topo_order().iter().skip(1) {
        let p = model.parent_of(l).unwrap();
        let j = model.joint_of(l).unwrap();
        let r = fr.pos[l] - fr.pos[p];
        wd[l] = wd[p] + a[model.joint_dof(j)];
        // d/dt (v_p + w_p * perp(r)) with dr/dt = w_p * perp(r)
        acc[l] = acc[p] + r.perp().scale(wd[p]) - r.scale(vels.w[p] * vels.w[p]);
    }
    let mut com = vec![V2::zero(); nl];
    let mut com_acc = vec![V2::zero(); nl];
    for l in 0..nl {
        let rc = fr.rot[l].apply(V2::from_f64(model.links[l].com.x, model.links[l].com.y));
        com[l] = fr.pos[l] + rc;
        com_acc[l] = acc[l] + rc.perp().scale(wd[l]) - rc.scale(vels.w[l] * vels.w[l]);
    }
    BodyMotion { wd, com, com_acc }
}

/// Newton-Euler inverse dynamics without contact: generalized forces that
/// realize `a` at `(q, v)` under gravity.
pub(crate) fn rnea_generic<T: Real>(model: &RobotModel, q: &[T], v: &[T], a: &[T]) -> Vec<T> {
    let fr = kinematics::frames(model, q);
    let motion = body_motion(model, &fr, v, a);
    let g = V2::from_f64(0.0, -model.gravity);
    let nl = model.num_links();
    let mut sum_f = vec![V2::<T>::zero(); nl];
    let mut sum_n = vec![T::zero(); nl];
    let mut tau = vec![T::zero(); model.dof()];
    for &l in model.topo_order().iter().rev() {
        let m = T::constant(model.links[l].mass);
        let inertia = T::constant(model.links[l].inertia);
        let f = (motion.com_acc[l] - g).scale(m) + sum_f[l];
        let n = inertia * motion.wd[l] - (fr.pos[l] - motion.com[l]).cross(f) + sum_n[l];
        match model.joint_of(l) {
            Some(j) => {
                tau[model.joint_dof(j)] = n;
                let p = model.parent_of(l).unwrap();
                sum_f[p] = sum_f[p] + f;
                sum_n[p] += n + (fr.pos[l] - motion.com[p]).cross(f);
            }
            None => {
                if !model.fixed_base {
                    tau[0] = f.x;
                    tau[1] = f.z;
                    tau[2] = n;
                }
            }
        }
    }
    tau
}

/// Generalized forces realizing `vdot` at `(q, v)`, gravity included, no
/// contact.
pub fn rnea(model: &RobotModel, q: &DVector<f64>, v: &DVector<f64>, vdot: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(rnea_generic(model, q.as_slice(), v.as_slice(), vdot.as_slice()))
}

/// Joint-space mass matrix, exactly symmetric.
pub fn mass_matrix(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    let fr = kinematics::frames(model, q.as_slice());
    let n = model.dof();
    let mut d = DMatrix::zeros(n, n);
    // scratch: translational Jacobian column and angular indicator per DoF
    let mut cols: Vec<(usize, V2<f64>, f64)> = Vec::with_capacity(n);
    for (l, link) in model.links.iter().enumerate() {
        cols.clear();
        let c = fr.pos[l] + fr.rot[l].apply(V2::new(link.com.x, link.com.y));
        let mut at = l;
        while let Some(j) = model.joint_of(at) {
            cols.push((model.joint_dof(j), (c - fr.pos[at]).perp(), 1.0));
            at = model.parent_of(at).unwrap();
        }
        if !model.fixed_base {
            cols.push((0, V2::new(1.0, 0.0), 0.0));
            cols.push((1, V2::new(0.0, 1.0), 0.0));
            cols.push((2, (c - fr.pos[0]).perp(), 1.0));
        }
        for (i, &(di, ci, wi)) in cols.iter().enumerate() {
            for &(dj, cj, wj) in cols.iter().skip(i) {
                let val = link.mass * ci.dot(cj) + link.inertia * wi * wj;
                let (a, b) = if di <= dj { (di, dj) } else { (dj, di) };
                d[(a, b)] += val;
            }
        }
    }
    // mirror the upper triangle
    for i in 0..n {
        for j in (i + 1)..n {
            d[(j, i)] = d[(i, j)];
        }
    }
    d
}

/// Gravity, centrifugal, and Coriolis terms: `rnea(q, v, 0)`.
pub fn bias_forces(model: &RobotModel, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let zero = DVector::zeros(model.dof());
    rnea(model, q, v, &zero)
}

/// Generalized forces realizing `vdot` while the given contact forces act:
/// `rnea(q, v, vdot) - Jc^T lambda`. Forces are `(tangent, normal)` pairs in
/// each point's surface frame.
pub fn inverse_dynamics(
    model: &RobotModel,
    q: &DVector<f64>,
    v: &DVector<f64>,
    vdot: &DVector<f64>,
    contact: &ContactKinematics,
    forces: &[(f64, f64)],
) -> DVector<f64> {
    rnea(model, q, v, vdot) - contact.generalized_force(forces)
}

/// Accelerations under applied torques, no contact. `u` is a full-length
/// vector; unactuated rows are masked off.
pub fn forward_dynamics(
    model: &RobotModel,
    q: &DVector<f64>,
    v: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, DynamicsError> {
    let mut rhs = u.clone();
    model.apply_actuation(&mut rhs);
    rhs -= bias_forces(model, q, v);
    solve_mass(model, q, rhs)
}

/// Accelerations under applied torques and contact forces.
pub fn forward_dynamics_with_contact(
    model: &RobotModel,
    q: &DVector<f64>,
    v: &DVector<f64>,
    u: &DVector<f64>,
    contact: &ContactKinematics,
    forces: &[(f64, f64)],
) -> Result<DVector<f64>, DynamicsError> {
    let mut rhs = u.clone();
    model.apply_actuation(&mut rhs);
    rhs += contact.generalized_force(forces);
    rhs -= bias_forces(model, q, v);
    solve_mass(model, q, rhs)
}

pub fn solve_mass(model: &RobotModel, q: &DVector<f64>, rhs: DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
    let d = mass_matrix(model, q);
    let chol = d.cholesky().ok_or(DynamicsError::NotPositiveDefinite)?;
    Ok(chol.solve(&rhs))
}

/// Kinetic energy summed over link COM velocities (independent of the mass
/// matrix assembly, which is what makes it useful as a cross-check).
pub fn kinetic_energy(model: &RobotModel, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let fr = kinematics::frames(model, q.as_slice());
    let vels = kinematics::frame_velocities(model, &fr, v.as_slice());
    let mut ke = 0.0;
    for (l, link) in model.links.iter().enumerate() {
        let rc = fr.rot[l].apply(V2::new(link.com.x, link.com.y));
        let vc = vels.vel[l] + rc.perp().scale(vels.w[l]);
        ke += 0.5 * (link.mass * vc.dot(vc) + link.inertia * vels.w[l] * vels.w[l]);
    }
    ke
}

/// Gravitational potential energy, zero at `z = 0`.
pub fn potential_energy(model: &RobotModel, q: &DVector<f64>) -> f64 {
    let fr = kinematics::frames(model, q.as_slice());
    let mut pe = 0.0;
    for (l, link) in model.links.iter().enumerate() {
        let c = fr.pos[l] + fr.rot[l].apply(V2::new(link.com.x, link.com.y));
        pe += link.mass * model.gravity * c.z;
    }
    pe
}

/// Rate of change of whole-body linear momentum, `sum_i m_i * a_com_i`.
/// By Newton's law this must equal the total external force (gravity plus
/// contact plus disturbances), which the simulator audits.
pub fn momentum_rate(
    model: &RobotModel,
    q: &DVector<f64>,
    v: &DVector<f64>,
    vdot: &DVector<f64>,
) -> nalgebra::Vector2<f64> {
    let fr = kinematics::frames(model, q.as_slice());
    let motion = body_motion(model, &fr, v.as_slice(), vdot.as_slice());
    let mut p = V2::new(0.0, 0.0);
    for (l, link) in model.links.iter().enumerate() {
        p = p + motion.com_acc[l].scale(link.mass);
    }
    nalgebra::Vector2::new(p.x, p.z)
}
