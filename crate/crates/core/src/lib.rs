//! Planar bipedal locomotion sandbox.
//!
//! A reduced-order gait planner proposes a nominal walking pattern, a
//! contact-implicit trajectory optimizer tracks it on the whole-body model,
//! and a separate penalty-contact simulator closes the loop. The crate is
//! organized around that pipeline:
//!
//! - [`model`], [`state`], [`terrain`]: robot description, whole-body state,
//!   and environment geometry.
//! - [`kinematics`], [`dynamics`]: forward kinematics, contact kinematics,
//!   mass matrix, bias forces, inverse/forward dynamics.
//! - [`hlip`]: hybrid linear inverted pendulum flows, step-to-step dynamics,
//!   and deadbeat foot placement.
//! - [`refgen`]: whole-body reference synthesis from commands and the
//!   reduced-order plan (inverse kinematics, swing splines, stand/walk
//!   blending).
//! - [`cimpc`]: inverse-dynamics trajectory optimization with smooth contact
//!   forces, solved by damped Gauss-Newton over a banded normal system.
//! - [`sim`]: stiff penalty-contact physics, disturbances, and model/state
//!   uncertainty injection.
//! - [`harness`]: the 50 Hz control loop over 1 kHz simulation, scenario
//!   configs, batch sweeps, and machine-readable logs.

pub mod banded;
pub mod cimpc;
pub mod convention;
pub mod dynamics;
pub mod harness;
pub mod hlip;
pub mod kinematics;
pub mod model;
pub mod refgen;
pub mod scalar;
pub mod sim;
pub mod state;
pub mod terrain;

pub use convention::Side;
pub use model::RobotModel;
pub use state::WholeBodyState;
