//! Multisymplectic Lie group variational integrator for geometrically exact
//! beams on SE(3), discretized with the Cayley map on a rectangular
//! space-time grid.

pub mod beam_model;
pub mod diagnostics;
pub mod grid;
pub mod integrators;
pub mod liegroup;

pub use beam_model::{BeamParams, MaterialInput, ModelError, E6};
pub use liegroup::{AlgebraVector, CoAlgebraVector, GroupElement, LieError, Rotation};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
