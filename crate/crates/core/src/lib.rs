//! Smoothened complete electrode model for electrical impedance tomography:
//! forward simulation, Jacobians with respect to conductivity, contacts and
//! electrode positions, Jacobian-range projections and projected
//! total-variation reconstruction.

pub mod error;
pub mod forward;
pub mod harness;
pub mod linsolve;
pub mod mesh;
pub mod projection;
pub mod reconstruct;
pub mod regularization;
pub mod sampling;
pub mod sensitivity;

pub use error::{Error, Result};
pub use mesh::{ElectrodeLayout, Mesh, Vec3};
