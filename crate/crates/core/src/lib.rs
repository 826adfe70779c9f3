//! Opinion dynamics with controllable weights of influence.
//!
//! Agents at positions `x_i` with weights `m_i > 0` follow
//!
//! ```text
//! dx_i/dt = (1/M) sum_j m_j a(|x_i - x_j|) (x_j - x_i)
//! dm_i/dt = m_i (psi_i(x, m) + u_i)
//! ```
//!
//! where `M` is the initial total mass. The control `u` acts only on the
//! weights and is used to steer the weighted barycenter toward a target.

// `!(x > 0.0)` is used deliberately so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod geometry;
pub mod integrate;
pub mod meanfield;
pub mod model;

pub use control::{ControlLaw, ControlSet, LawKind, NormBound};
pub use geometry::barycenter;
pub use integrate::{simulate, IntegratorConfig, MassMode, Trajectory};
pub use model::{InteractionKernel, KernelKind, MassDynamics, SystemState};
