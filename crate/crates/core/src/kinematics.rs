//! Forward kinematics, point Jacobians, and contact kinematics.
//!
//! The sweeps are generic over [`Real`] because the contact-implicit
//! optimizer differentiates through them with dual numbers; the public API
//! wraps the `f64` instantiation in `nalgebra` types.

use crate::model::RobotModel;
use crate::scalar::{Real, Rot, V2};
use crate::terrain::Terrain;
use nalgebra::{DVector, Matrix2xX, RowDVector, Vector2};

/// World pose of every link frame, cached trig included.
pub(crate) struct Frames<T> {
    pub ang: Vec<T>,
    pub rot: Vec<Rot<T>>,
    pub pos: Vec<V2<T>>,
}

/// World angular and linear velocity of every link frame origin.
pub(crate) struct FrameVels<T> {
    pub w: Vec<T>,
    pub vel: Vec<V2<T>>,
}

pub(crate) fn frames<T: Real>(model: &RobotModel, q: &[T]) -> Frames<T> {
    let nl = model.num_links();
    let mut ang = vec![T::zero(); nl];
    let mut rot = vec![Rot::identity(); nl];
    let mut pos = vec![V2::zero(); nl];
    if !model.fixed_base {
        pos[0] = V2::new(q[0], q[1]);
        ang[0] = q[2];
        rot[0] = Rot::from_angle(q[2]);
    }
    for &l in model.topo_order().iter().skip(1) {
        let p = model.parent_of(l).unwrap();
        let j = model.joint_of(l).unwrap();
        let attach = model.joints[j].attach;
        ang[l] = ang[p] + q[model.joint_dof(j)];
        rot[l] = Rot::from_angle(ang[l]);
        pos[l] = pos[p] + rot[p].apply(V2::from_f64(attach.x, attach.y));
    }
    Frames { ang, rot, pos }
}

pub(crate) fn frame_velocities<T: Real>(
    model: &RobotModel,
    fr: &Frames<T>,
    v: &[T],
) -> FrameVels<T> {
    let nl = model.num_links();
    let mut w = vec![T::zero(); nl];
    let mut vel = vec![V2::zero(); nl];
    if !model.fixed_base {
        vel[0] = V2::new(v[0], v[1]);
        w[0] = v[2];
    }
    for &l in model.topo_order().iter().skip(1) {
        let p = model.parent_of(l).unwrap();
        let j = model.joint_of(l).unwrap();
        w[l] = w[p] + v[model.joint_dof(j)];
        let r = fr.pos[l] - fr.pos[p];
        vel[l] = vel[p] + r.perp().scale(w[p]);
    }
    FrameVels { w, vel }
}

/// Emit the nonzero Jacobian columns of a world point `p` rigidly attached
/// to `link`: `cb(dof, d p / d q_dof)`.
pub(crate) fn point_jacobian_cols<T: Real>(
    model: &RobotModel,
    fr: &Frames<T>,
    link: usize,
    p: V2<T>,
    mut cb: impl FnMut(usize, V2<T>),
) {
    let mut l = link;
    while let Some(j) = model.joint_of(l) {
        cb(model.joint_dof(j), (p - fr.pos[l]).perp());
        l = model.parent_of(l).unwrap();
    }
    if !model.fixed_base {
        cb(0, V2::from_f64(1.0, 0.0));
        cb(1, V2::from_f64(0.0, 1.0));
        cb(2, (p - fr.pos[0]).perp());
    }
}

/// World pose of a frame: origin and orientation angle.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct FramePose {
    pub pos: Vector2<f64>,
    pub ang: f64,
}

/// Forward-kinematics snapshot: link frames and contact sphere centers.
#[derive(Debug, Clone)]
pub struct ForwardKinematics {
    pub links: Vec<FramePose>,
    pub contacts: Vec<FramePose>,
}

pub fn forward_kinematics(model: &RobotModel, q: &DVector<f64>) -> ForwardKinematics {
    let fr = frames(model, q.as_slice());
    let links = (0..model.num_links())
        .map(|l| FramePose { pos: Vector2::new(fr.pos[l].x, fr.pos[l].z), ang: fr.ang[l] })
        .collect();
    let contacts = model
        .contacts
        .iter()
        .map(|c| {
            let p = fr.pos[c.link] + fr.rot[c.link].apply(V2::new(c.offset.x, c.offset.y));
            FramePose { pos: Vector2::new(p.x, p.z), ang: fr.ang[c.link] }
        })
        .collect();
    ForwardKinematics { links, contacts }
}

/// Whole-body center of mass.
pub fn com(model: &RobotModel, q: &DVector<f64>) -> Vector2<f64> {
    let fr = frames(model, q.as_slice());
    let mut acc = V2::new(0.0, 0.0);
    for (l, link) in model.links.iter().enumerate() {
        let c = fr.pos[l] + fr.rot[l].apply(V2::new(link.com.x, link.com.y));
        acc = acc + c.scale(link.mass);
    }
    let m = model.total_mass();
    Vector2::new(acc.x / m, acc.z / m)
}

/// Center-of-mass velocity.
pub fn com_velocity(model: &RobotModel, q: &DVector<f64>, v: &DVector<f64>) -> Vector2<f64> {
    let fr = frames(model, q.as_slice());
    let vels = frame_velocities(model, &fr, v.as_slice());
    let mut acc = V2::new(0.0, 0.0);
    for (l, link) in model.links.iter().enumerate() {
        let r = fr.rot[l].apply(V2::new(link.com.x, link.com.y));
        let vc = vels.vel[l] + r.perp().scale(vels.w[l]);
        acc = acc + vc.scale(link.mass);
    }
    let m = model.total_mass();
    Vector2::new(acc.x / m, acc.z / m)
}

/// 2 x n Jacobian of a world point rigidly attached to `link`.
pub fn point_jacobian(model: &RobotModel, q: &DVector<f64>, link: usize, point: Vector2<f64>) -> Matrix2xX<f64> {
    let fr = frames(model, q.as_slice());
    let mut jac = Matrix2xX::zeros(model.dof());
    point_jacobian_cols(model, &fr, link, V2::new(point.x, point.y), |dof, col| {
        jac[(0, dof)] = col.x;
        jac[(1, dof)] = col.z;
    });
    jac
}

/// Kinematic quantities for one contact sphere against the terrain.
#[derive(Debug, Clone)]
pub struct ContactPointKin {
    /// Index into `model.contacts`.
    pub index: usize,
    /// Sphere center, world frame.
    pub pos: Vector2<f64>,
    pub vel: Vector2<f64>,
    /// Gap between the sphere surface and the terrain (negative when
    /// penetrating).
    pub phi: f64,
    /// Outward surface normal at the closest terrain feature.
    pub normal: Vector2<f64>,
    /// Tangent completing a right-handed surface frame (`(1,0)` on flat
    /// ground).
    pub tangent: Vector2<f64>,
    /// Normal-direction row of the contact Jacobian, frame frozen at `q`.
    pub jac_n: RowDVector<f64>,
    pub jac_t: RowDVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ContactKinematics {
    pub points: Vec<ContactPointKin>,
}

impl ContactKinematics {
    /// Map per-point `(tangent, normal)` force pairs to generalized forces.
    pub fn generalized_force(&self, forces: &[(f64, f64)]) -> DVector<f64> {
        assert_eq!(forces.len(), self.points.len());
        let n = self.points.first().map_or(0, |p| p.jac_n.len());
        let mut tau = DVector::zeros(n);
        for (pt, &(ft, fn_)) in self.points.iter().zip(forces) {
            tau += pt.jac_t.transpose() * ft + pt.jac_n.transpose() * fn_;
        }
        tau
    }
}

/// Evaluate every contact sphere against the terrain: positions,
/// velocities, gaps, surface frames, and Jacobian rows.
pub fn contact_kinematics(
    model: &RobotModel,
    terrain: &Terrain,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> ContactKinematics {
    let fr = frames(model, q.as_slice());
    let vels = frame_velocities(model, &fr, v.as_slice());
    let n = model.dof();
    let mut points = Vec::with_capacity(model.contacts.len());
    for (index, c) in model.contacts.iter().enumerate() {
        let r = fr.rot[c.link].apply(V2::new(c.offset.x, c.offset.y));
        let p = fr.pos[c.link] + r;
        let vel = vels.vel[c.link] + r.perp().scale(vels.w[c.link]);
        let (sdf, normal) = terrain.query(p);
        let phi = sdf - c.radius;
        let tangent = V2::new(normal.z, -normal.x);
        let mut jac_n = RowDVector::zeros(n);
        let mut jac_t = RowDVector::zeros(n);
        point_jacobian_cols(model, &fr, c.link, p, |dof, col| {
            jac_n[dof] = normal.dot(col);
            jac_t[dof] = tangent.dot(col);
        });
        points.push(ContactPointKin {
            index,
            pos: Vector2::new(p.x, p.z),
            vel: Vector2::new(vel.x, vel.z),
            phi,
            normal: Vector2::new(normal.x, normal.z),
            tangent: Vector2::new(tangent.x, tangent.z),
            jac_n,
            jac_t,
        });
    }
    ContactKinematics { points }
}
