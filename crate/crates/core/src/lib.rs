//! Localized synchronization patterns in chains of bistable oscillators.
//!
//! Steady states of `dz_n/dt = f(|z_n|) z_n + eps c (z_{n+1} - 2 z_n + z_{n-1})` are computed in
//! polar form, continued in `mu`, compared against asymptotic seeds and checked against direct
//! simulation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod continuation;
pub mod dynamics;
pub mod error;
pub mod lattice;
mod linalg;
pub mod model;
pub mod run;

pub use error::{Error, Result};
pub use lattice::{BoundaryKind, Coupling, LatticeSystem, PolarState};
pub use model::{bistable_roots, builtin_spec, BistabilityProfile, NonlinearitySpec};
