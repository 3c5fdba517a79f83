//! Robot description: links, revolute joints, contact spheres, actuation.
//!
//! Models are planar kinematic trees rooted at a floating base (or a fixed
//! anchor for test fixtures). They are usually loaded from a small INI-style
//! text format:
//!
//! ```text
//! # comment
//! [world]
//! gravity = 9.81
//!
//! [link torso]
//! mass = 8.0
//! inertia = 0.15
//! com = 0.0, 0.20
//!
//! [joint left_hip]
//! parent = torso
//! child = left_thigh
//! attach = 0.0, 0.0
//! pos_limits = -1.8, 1.8
//! vel_limit = 25.0
//! torque_limit = 80.0
//!
//! [contact left_heel]
//! link = left_foot
//! offset = -0.06, -0.04
//! radius = 0.02
//! label = heel
//!
//! [actuation]
//! joints = left_hip, left_knee, left_ankle
//! ```
//!
//! The first `[link]` section is the root. Every other link must be the
//! child of exactly one revolute joint. Joint declaration order fixes the
//! generalized-coordinate order after the base coordinates.

use crate::convention::{Side, BASE_DOF};
use nalgebra::Vector2;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("model structure: {0}")]
    Structure(String),
    #[error("reading model file: {0}")]
    Io(#[from] std::io::Error),
}

fn structure(msg: impl Into<String>) -> ModelError {
    ModelError::Structure(msg.into())
}

/// Rigid link. `com` and contact offsets are expressed in the link frame,
/// which coincides with the link's parent joint location.
#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub mass: f64,
    /// Rotational inertia about the COM.
    pub inertia: f64,
    /// Nominal geometric length, informational only (chain lengths come from
    /// joint attach points).
    pub length: f64,
    pub com: Vector2<f64>,
}

/// Revolute joint connecting `child` to `parent` at `attach` (parent frame).
#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    pub attach: Vector2<f64>,
    pub pos_limits: (f64, f64),
    pub vel_limit: f64,
    pub torque_limit: f64,
}

/// Role of a contact sphere, used for gait bookkeeping and analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ContactLabel {
    Heel,
    Toe,
    Hand,
    Point,
}

/// Collision sphere rigidly attached to a link.
#[derive(Debug, Clone)]
pub struct ContactSphere {
    pub name: String,
    pub link: usize,
    pub offset: Vector2<f64>,
    pub radius: f64,
    pub label: ContactLabel,
}

/// One leg of a biped, as discovered from the model topology: a
/// hip-knee-ankle chain hanging off the base, ending in a foot link that
/// carries heel and toe spheres.
#[derive(Debug, Clone)]
pub struct LegChain {
    pub side: Side,
    /// Joint indices (not DoF indices).
    pub hip: usize,
    pub knee: usize,
    pub ankle: usize,
    /// Link indices.
    pub thigh_link: usize,
    pub shank_link: usize,
    pub foot_link: usize,
    /// Hip-to-knee and knee-to-ankle segment lengths.
    pub thigh: f64,
    pub shank: f64,
    /// Hip location in the base frame.
    pub hip_attach: Vector2<f64>,
    /// Contact sphere indices.
    pub heel: usize,
    pub toe: usize,
    /// Ankle height above the support plane when the foot is flat.
    pub sole_height: f64,
}

/// Complete robot description plus precomputed topology tables.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub contacts: Vec<ContactSphere>,
    /// Per-DoF actuation mask; base rows are always false.
    pub actuated: Vec<bool>,
    pub gravity: f64,
    /// Test fixtures can pin the root link to the world, dropping the three
    /// base coordinates.
    pub fixed_base: bool,
    // Derived tables, filled in by `assemble`.
    link_parent: Vec<Option<usize>>,
    link_joint: Vec<Option<usize>>,
    topo: Vec<usize>,
}

impl RobotModel {
    /// Build a model from its parts, wiring up the topology tables and
    /// checking structural invariants.
    pub fn assemble(
        links: Vec<Link>,
        joints: Vec<Joint>,
        contacts: Vec<ContactSphere>,
        actuated_joints: &[String],
        gravity: f64,
        fixed_base: bool,
    ) -> Result<RobotModel, ModelError> {
        if links.is_empty() {
            return Err(structure("model needs at least one link"));
        }
        let nl = links.len();
        let mut link_parent = vec![None; nl];
        let mut link_joint = vec![None; nl];
        for (j, joint) in joints.iter().enumerate() {
            if joint.parent >= nl || joint.child >= nl {
                return Err(structure(format!("joint {} references a missing link", joint.name)));
            }
            if joint.child == 0 {
                return Err(structure(format!("joint {} makes the root a child", joint.name)));
            }
            if link_joint[joint.child].is_some() {
                return Err(structure(format!(
                    "link {} has more than one parent joint",
                    links[joint.child].name
                )));
            }
            link_parent[joint.child] = Some(joint.parent);
            link_joint[joint.child] = Some(j);
        }
        for (l, link) in links.iter().enumerate().skip(1) {
            if link_joint[l].is_none() {
                return Err(structure(format!("link {} is not connected by any joint", link.name)));
            }
        }
        // Root-first order for the kinematic sweeps; also catches cycles.
        let mut topo = vec![0usize];
        let mut placed = vec![false; nl];
        placed[0] = true;
        while topo.len() < nl {
            let before = topo.len();
            for l in 1..nl {
                if !placed[l] && placed[link_parent[l].unwrap()] {
                    placed[l] = true;
                    topo.push(l);
                }
            }
            if topo.len() == before {
                return Err(structure("kinematic tree contains a cycle"));
            }
        }

        let base_dof = if fixed_base { 0 } else { BASE_DOF };
        let mut actuated = vec![false; base_dof + joints.len()];
        for name in actuated_joints {
            let j = joints
                .iter()
                .position(|jt| &jt.name == name)
                .ok_or_else(|| structure(format!("actuated joint {name} does not exist")))?;
            actuated[base_dof + j] = true;
        }

        let model = RobotModel {
            links,
            joints,
            contacts,
            actuated,
            gravity,
            fixed_base,
            link_parent,
            link_joint,
            topo,
        };
        model.validate()?;
        Ok(model)
    }

    /// Structural sanity checks: positive masses/inertias, well-formed
    /// limits, valid contact attachments.
    pub fn validate(&self) -> Result<(), ModelError> {
        for link in &self.links {
            if !(link.mass > 0.0) {
                return Err(structure(format!("link {} mass must be positive", link.name)));
            }
            if !(link.inertia > 0.0) {
                return Err(structure(format!("link {} inertia must be positive", link.name)));
            }
        }
        for joint in &self.joints {
            if !(joint.pos_limits.0 < joint.pos_limits.1) {
                return Err(structure(format!("joint {} position limits are inverted", joint.name)));
            }
            if !(joint.vel_limit > 0.0) || !(joint.torque_limit > 0.0) {
                return Err(structure(format!("joint {} rate/torque limits must be positive", joint.name)));
            }
        }
        for c in &self.contacts {
            if c.link >= self.links.len() {
                return Err(structure(format!("contact {} references a missing link", c.name)));
            }
            if !(c.radius > 0.0) {
                return Err(structure(format!("contact {} radius must be positive", c.name)));
            }
        }
        if !self.fixed_base && self.actuated.iter().take(BASE_DOF).any(|&a| a) {
            return Err(structure("base coordinates cannot be actuated"));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.base_dof() + self.joints.len()
    }

    pub fn base_dof(&self) -> usize {
        if self.fixed_base {
            0
        } else {
            BASE_DOF
        }
    }

    /// Generalized-coordinate index of joint `j`.
    pub fn joint_dof(&self, j: usize) -> usize {
        self.base_dof() + j
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn parent_of(&self, link: usize) -> Option<usize> {
        self.link_parent[link]
    }

    pub fn joint_of(&self, link: usize) -> Option<usize> {
        self.link_joint[link]
    }

    /// Link indices in root-first topological order.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn contact_index(&self, name: &str) -> Option<usize> {
        self.contacts.iter().position(|c| c.name == name)
    }

    /// Zero out unactuated rows of a full-length torque vector (the
    /// actuation selector applied as a mask).
    pub fn apply_actuation(&self, u: &mut nalgebra::DVector<f64>) {
        for (i, act) in self.actuated.iter().enumerate() {
            if !act {
                u[i] = 0.0;
            }
        }
    }

    /// Discover the two hip-knee-ankle-foot chains. Errors if the model is
    /// not a biped in that sense.
    pub fn leg_chains(&self) -> Result<[LegChain; 2], ModelError> {
        let mut feet = Vec::new();
        for (ci, c) in self.contacts.iter().enumerate() {
            if c.label == ContactLabel::Heel {
                let toe = self
                    .contacts
                    .iter()
                    .position(|t| t.label == ContactLabel::Toe && t.link == c.link)
                    .ok_or_else(|| structure(format!("{} has a heel but no toe", self.links[c.link].name)))?;
                feet.push((c.link, ci, toe));
            }
        }
        if feet.len() != 2 {
            return Err(structure(format!("expected exactly two feet, found {}", feet.len())));
        }
        if self.fixed_base {
            return Err(structure("a biped needs a floating base"));
        }

        let mut chains = Vec::new();
        for (foot_link, heel, toe) in feet {
            let shank_link = self.link_parent[foot_link]
                .ok_or_else(|| structure("foot link is the root"))?;
            let thigh_link = self.link_parent[shank_link]
                .filter(|&l| l != 0)
                .ok_or_else(|| structure("leg chain is too short"))?;
            if self.link_parent[thigh_link] != Some(0) {
                return Err(structure("leg chain does not hang off the base"));
            }
            let hip = self.link_joint[thigh_link].unwrap();
            let knee = self.link_joint[shank_link].unwrap();
            let ankle = self.link_joint[foot_link].unwrap();
            let heel_c = &self.contacts[heel];
            let toe_c = &self.contacts[toe];
            let heel_sole = -heel_c.offset.y + heel_c.radius;
            let toe_sole = -toe_c.offset.y + toe_c.radius;
            if (heel_sole - toe_sole).abs() > 1e-9 {
                return Err(structure(format!(
                    "{}: heel and toe spheres do not share a sole plane",
                    self.links[foot_link].name
                )));
            }
            let name = &self.links[foot_link].name;
            let side = if name.contains("left") {
                Side::Left
            } else if name.contains("right") {
                Side::Right
            } else if chains.is_empty() {
                Side::Left
            } else {
                Side::Right
            };
            chains.push(LegChain {
                side,
                hip,
                knee,
                ankle,
                thigh_link,
                shank_link,
                foot_link,
                thigh: self.joints[knee].attach.norm(),
                shank: self.joints[ankle].attach.norm(),
                hip_attach: self.joints[hip].attach,
                heel,
                toe,
                sole_height: heel_sole,
            });
        }
        if chains[0].side == chains[1].side {
            return Err(structure("could not tell the two feet apart; name them left/right"));
        }
        if chains[0].side == Side::Right {
            chains.swap(0, 1);
        }
        Ok([chains[0].clone(), chains[1].clone()])
    }

    /// Leg chain for one side.
    pub fn leg(&self, side: Side) -> Result<LegChain, ModelError> {
        let chains = self.leg_chains()?;
        Ok(match side {
            Side::Left => chains[0].clone(),
            Side::Right => chains[1].clone(),
        })
    }

    /// Joint indices that belong to neither leg (arms, if present).
    pub fn arm_joints(&self) -> Result<Vec<usize>, ModelError> {
        let chains = self.leg_chains()?;
        let mut in_leg = vec![false; self.joints.len()];
        for c in &chains {
            in_leg[c.hip] = true;
            in_leg[c.knee] = true;
            in_leg[c.ankle] = true;
        }
        Ok((0..self.joints.len()).filter(|&j| !in_leg[j]).collect())
    }

    pub fn from_str(text: &str) -> Result<RobotModel, ModelError> {
        parse_model(text)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<RobotModel, ModelError> {
        let text = std::fs::read_to_string(path)?;
        parse_model(&text)
    }
}

// ---------------------------------------------------------------------------
// Model file parsing

struct Section {
    kind: String,
    name: String,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

impl Section {
    fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, line)| (v.as_str(), *line))
    }

    fn req(&self, key: &str) -> Result<(&str, usize), ModelError> {
        self.get(key).ok_or_else(|| ModelError::Parse {
            line: self.line,
            msg: format!("[{} {}] is missing `{key}`", self.kind, self.name),
        })
    }
}

fn parse_f64(v: &str, line: usize, key: &str) -> Result<f64, ModelError> {
    v.trim().parse().map_err(|_| ModelError::Parse {
        line,
        msg: format!("`{key}` must be a number, got `{v}`"),
    })
}

fn parse_pair(v: &str, line: usize, key: &str) -> Result<(f64, f64), ModelError> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 2 {
        return Err(ModelError::Parse {
            line,
            msg: format!("`{key}` must be two comma-separated numbers, got `{v}`"),
        });
    }
    Ok((parse_f64(parts[0], line, key)?, parse_f64(parts[1], line, key)?))
}

fn split_sections(text: &str) -> Result<Vec<Section>, ModelError> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('[') {
            let header = header.strip_suffix(']').ok_or(ModelError::Parse {
                line,
                msg: "unterminated section header".into(),
            })?;
            let mut parts = header.split_whitespace();
            let kind = parts.next().unwrap_or("").to_string();
            let name = parts.next().unwrap_or("").to_string();
            if kind.is_empty() {
                return Err(ModelError::Parse { line, msg: "empty section header".into() });
            }
            sections.push(Section { kind, name, line, entries: Vec::new() });
        } else if let Some((k, v)) = trimmed.split_once('=') {
            let sec = sections.last_mut().ok_or(ModelError::Parse {
                line,
                msg: "key/value outside any section".into(),
            })?;
            sec.entries.push((k.trim().to_string(), v.trim().to_string(), line));
        } else {
            return Err(ModelError::Parse {
                line,
                msg: format!("expected `key = value` or `[section]`, got `{trimmed}`"),
            });
        }
    }
    Ok(sections)
}

fn parse_model(text: &str) -> Result<RobotModel, ModelError> {
    let sections = split_sections(text)?;

    let mut links: Vec<Link> = Vec::new();
    let mut gravity = 9.81;
    let mut fixed_base = false;

    for sec in sections.iter().filter(|s| s.kind == "world") {
        if let Some((v, line)) = sec.get("gravity") {
            gravity = parse_f64(v, line, "gravity")?;
        }
        if let Some((v, line)) = sec.get("fixed_base") {
            fixed_base = v.trim().parse().map_err(|_| ModelError::Parse {
                line,
                msg: format!("`fixed_base` must be true or false, got `{v}`"),
            })?;
        }
    }

    for sec in sections.iter().filter(|s| s.kind == "link") {
        if sec.name.is_empty() {
            return Err(ModelError::Parse { line: sec.line, msg: "link needs a name".into() });
        }
        let (mass_v, mass_l) = sec.req("mass")?;
        let (in_v, in_l) = sec.req("inertia")?;
        let com = match sec.get("com") {
            Some((v, line)) => {
                let (x, z) = parse_pair(v, line, "com")?;
                Vector2::new(x, z)
            }
            None => Vector2::zeros(),
        };
        let length = match sec.get("length") {
            Some((v, line)) => parse_f64(v, line, "length")?,
            None => 0.0,
        };
        links.push(Link {
            name: sec.name.clone(),
            mass: parse_f64(mass_v, mass_l, "mass")?,
            inertia: parse_f64(in_v, in_l, "inertia")?,
            length,
            com,
        });
    }

    let find_link = |name: &str, line: usize| -> Result<usize, ModelError> {
        links.iter().position(|l| l.name == name).ok_or_else(|| ModelError::Parse {
            line,
            msg: format!("unknown link `{name}`"),
        })
    };

    let mut joints: Vec<Joint> = Vec::new();
    for sec in sections.iter().filter(|s| s.kind == "joint") {
        let (parent_v, parent_l) = sec.req("parent")?;
        let (child_v, child_l) = sec.req("child")?;
        if let Some((ty, line)) = sec.get("type") {
            if ty != "revolute" {
                return Err(ModelError::Parse {
                    line,
                    msg: format!("only revolute joints are supported, got `{ty}`"),
                });
            }
        }
        let (attach_v, attach_l) = sec.req("attach")?;
        let (ax, az) = parse_pair(attach_v, attach_l, "attach")?;
        let pos_limits = match sec.get("pos_limits") {
            Some((v, line)) => parse_pair(v, line, "pos_limits")?,
            None => (-3.14, 3.14),
        };
        let vel_limit = match sec.get("vel_limit") {
            Some((v, line)) => parse_f64(v, line, "vel_limit")?,
            None => 30.0,
        };
        let torque_limit = match sec.get("torque_limit") {
            Some((v, line)) => parse_f64(v, line, "torque_limit")?,
            None => 150.0,
        };
        joints.push(Joint {
            name: sec.name.clone(),
            parent: find_link(parent_v, parent_l)?,
            child: find_link(child_v, child_l)?,
            attach: Vector2::new(ax, az),
            pos_limits,
            vel_limit,
            torque_limit,
        });
    }

    let mut contacts: Vec<ContactSphere> = Vec::new();
    for sec in sections.iter().filter(|s| s.kind == "contact") {
        let (link_v, link_l) = sec.req("link")?;
        let (off_v, off_l) = sec.req("offset")?;
        let (ox, oz) = parse_pair(off_v, off_l, "offset")?;
        let (rad_v, rad_l) = sec.req("radius")?;
        let label = match sec.get("label") {
            Some(("heel", _)) => ContactLabel::Heel,
            Some(("toe", _)) => ContactLabel::Toe,
            Some(("hand", _)) => ContactLabel::Hand,
            Some(("point", _)) | None => ContactLabel::Point,
            Some((other, line)) => {
                return Err(ModelError::Parse {
                    line,
                    msg: format!("unknown contact label `{other}`"),
                })
            }
        };
        contacts.push(ContactSphere {
            name: sec.name.clone(),
            link: find_link(link_v, link_l)?,
            offset: Vector2::new(ox, oz),
            radius: parse_f64(rad_v, rad_l, "radius")?,
            label,
        });
    }

    let mut actuated_joints = Vec::new();
    for sec in sections.iter().filter(|s| s.kind == "actuation") {
        let (v, _) = sec.req("joints")?;
        for name in v.split(',') {
            let name = name.trim();
            if !name.is_empty() {
                actuated_joints.push(name.to_string());
            }
        }
    }

    RobotModel::assemble(links, joints, contacts, &actuated_joints, gravity, fixed_base)
}

// ---------------------------------------------------------------------------
// Small hand-built models for tests and the gradient checker.

pub mod samples {
    use super::*;

    /// Fixed-base point-mass pendulum: one revolute joint, all mass
    /// concentrated a distance `l` from the pivot. Its mass matrix is
    /// `[m l^2]` up to the (negligible) rod inertia.
    pub fn point_pendulum(m: f64, l: f64) -> RobotModel {
        let links = vec![
            Link {
                name: "anchor".into(),
                mass: 1.0,
                inertia: 1.0,
                length: 0.0,
                com: Vector2::zeros(),
            },
            Link {
                name: "rod".into(),
                mass: m,
                inertia: 1e-12,
                length: l,
                com: Vector2::new(0.0, -l),
            },
        ];
        let joints = vec![Joint {
            name: "pivot".into(),
            parent: 0,
            child: 1,
            attach: Vector2::zeros(),
            pos_limits: (-6.0, 6.0),
            vel_limit: 100.0,
            torque_limit: 1000.0,
        }];
        RobotModel::assemble(links, joints, Vec::new(), &["pivot".into()], 9.81, true).unwrap()
    }

    /// Fixed-base fully-actuated 3-link chain with a contact sphere on the
    /// tip. Small enough for finite-difference cross-checks.
    pub fn chain3() -> RobotModel {
        let seg = |name: &str, mass: f64, inertia: f64, len: f64| Link {
            name: name.into(),
            mass,
            inertia,
            length: len,
            com: Vector2::new(0.0, -len / 2.0),
        };
        let links = vec![
            Link {
                name: "mount".into(),
                mass: 1.0,
                inertia: 1.0,
                length: 0.0,
                com: Vector2::zeros(),
            },
            seg("seg_a", 1.5, 0.020, 0.40),
            seg("seg_b", 1.0, 0.012, 0.35),
            seg("seg_c", 0.6, 0.006, 0.30),
        ];
        let joint = |name: &str, parent: usize, child: usize, drop: f64| Joint {
            name: name.into(),
            parent,
            child,
            attach: Vector2::new(0.0, -drop),
            pos_limits: (-3.0, 3.0),
            vel_limit: 40.0,
            torque_limit: 200.0,
        };
        let joints = vec![
            joint("shoulder", 0, 1, 0.0),
            joint("elbow", 1, 2, 0.40),
            joint("wrist", 2, 3, 0.35),
        ];
        let contacts = vec![ContactSphere {
            name: "tip".into(),
            link: 3,
            offset: Vector2::new(0.0, -0.30),
            radius: 0.02,
            label: ContactLabel::Point,
        }];
        RobotModel::assemble(
            links,
            joints,
            contacts,
            &["shoulder".into(), "elbow".into(), "wrist".into()],
            9.81,
            true,
        )
        .unwrap()
    }

    /// Floating body with a single actuated leg and a foot sphere; the
    /// smallest model that exercises base rows plus a joint.
    pub fn hopper() -> RobotModel {
        let links = vec![
            Link {
                name: "body".into(),
                mass: 5.0,
                inertia: 0.1,
                length: 0.2,
                com: Vector2::new(0.0, 0.1),
            },
            Link {
                name: "leg".into(),
                mass: 1.0,
                inertia: 0.01,
                length: 0.4,
                com: Vector2::new(0.0, -0.2),
            },
        ];
        let joints = vec![Joint {
            name: "hip".into(),
            parent: 0,
            child: 1,
            attach: Vector2::new(0.0, -0.05),
            pos_limits: (-2.0, 2.0),
            vel_limit: 20.0,
            torque_limit: 60.0,
        }];
        let contacts = vec![ContactSphere {
            name: "foot".into(),
            link: 1,
            offset: Vector2::new(0.0, -0.4),
            radius: 0.02,
            label: ContactLabel::Point,
        }];
        RobotModel::assemble(links, joints, contacts, &["hip".into()], 9.81, false).unwrap()
    }

    /// Floating single rigid body with one contact sphere at its COM. Used
    /// by the simulator's energy and momentum audits.
    pub fn ball(m: f64, radius: f64) -> RobotModel {
        let links = vec![Link {
            name: "ball".into(),
            mass: m,
            inertia: 0.4 * m * radius * radius,
            length: radius,
            com: Vector2::zeros(),
        }];
        let contacts = vec![ContactSphere {
            name: "surface".into(),
            link: 0,
            offset: Vector2::zeros(),
            radius,
            label: ContactLabel::Point,
        }];
        RobotModel::assemble(links, Vec::new(), contacts, &[], 9.81, false).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"
# two-link hopper: base plus one leg segment
[world]
gravity = 9.81

[link body]
mass = 5.0
inertia = 0.1
com = 0.0, 0.1

[link leg]
mass = 1.0
inertia = 0.01
length = 0.4
com = 0.0, -0.2

[joint hip]
parent = body
child = leg
attach = 0.0, -0.05
pos_limits = -2.0, 2.0
vel_limit = 20.0
torque_limit = 60.0

[contact foot]
link = leg
offset = 0.0, -0.4
radius = 0.02

[actuation]
joints = hip
"#;

    #[test]
    fn parses_minimal_model() {
        let m = RobotModel::from_str(MINI).unwrap();
        assert_eq!(m.dof(), 4);
        assert_eq!(m.links.len(), 2);
        assert_eq!(m.joints[0].attach, Vector2::new(0.0, -0.05));
        assert_eq!(m.actuated, vec![false, false, false, true]);
        assert_eq!(m.contacts[0].label, ContactLabel::Point);
        assert_eq!(m.topo_order(), &[0, 1]);
        assert_eq!(m.joint_dof(0), 3);
    }

    #[test]
    fn rejects_bad_references_and_values() {
        let bad_link = MINI.replace("child = leg", "child = shin");
        assert!(matches!(
            RobotModel::from_str(&bad_link),
            Err(ModelError::Parse { .. })
        ));
        let bad_mass = MINI.replace("mass = 5.0", "mass = -5.0");
        assert!(matches!(
            RobotModel::from_str(&bad_mass),
            Err(ModelError::Structure(_))
        ));
        let no_mass = MINI.replace("mass = 5.0", "");
        assert!(RobotModel::from_str(&no_mass).is_err());
    }

    #[test]
    fn rejects_base_actuation_and_cycles() {
        let m = RobotModel::from_str(MINI).unwrap();
        let mut joints = m.joints.clone();
        joints[0].child = 0;
        assert!(RobotModel::assemble(
            m.links.clone(),
            joints,
            Vec::new(),
            &[],
            9.81,
            false
        )
        .is_err());
    }

    fn repo_model(name: &str) -> RobotModel {
        let path = format!("{}/../../models/{}", env!("CARGO_MANIFEST_DIR"), name);
        RobotModel::from_file(path).unwrap()
    }

    #[test]
    fn shipped_biped_parses_and_is_a_biped() {
        let m = repo_model("biped.model");
        assert_eq!(m.dof(), 9);
        assert_eq!(m.links.len(), 7);
        let legs = m.leg_chains().unwrap();
        assert_eq!(legs[0].side, Side::Left);
        assert_eq!(legs[1].side, Side::Right);
        for leg in &legs {
            assert!((leg.thigh - 0.39).abs() < 1e-12);
            assert!((leg.shank - 0.39).abs() < 1e-12);
            assert!((leg.sole_height - 0.06).abs() < 1e-12);
        }
        assert_eq!(m.arm_joints().unwrap(), Vec::<usize>::new());
        assert_eq!(m.actuated.iter().filter(|&&a| a).count(), 6);
    }

    #[test]
    fn shipped_biped_with_arms_parses() {
        let m = repo_model("biped_arms.model");
        assert_eq!(m.dof(), 11);
        let arms = m.arm_joints().unwrap();
        assert_eq!(arms.len(), 2);
        assert_eq!(m.joints[arms[0]].name, "left_shoulder");
        let hands: Vec<_> = m
            .contacts
            .iter()
            .filter(|c| c.label == ContactLabel::Hand)
            .collect();
        assert_eq!(hands.len(), 2);
    }

    #[test]
    fn sample_models_assemble() {
        let p = samples::point_pendulum(2.0, 0.5);
        assert_eq!(p.dof(), 1);
        assert!(p.fixed_base);
        let c = samples::chain3();
        assert_eq!(c.dof(), 3);
        assert_eq!(c.actuated, vec![true, true, true]);
        let b = samples::ball(1.0, 0.1);
        assert_eq!(b.dof(), 3);
    }
}
