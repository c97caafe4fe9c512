//! Non-conflicting zeroing control barrier functions for Euler-Lagrange systems with
//! box position, velocity and input constraints.
//!
//! The crate is organised bottom-up:
//!
//! * [`classk`]: the scalar shaping functions `alpha` and `beta`.
//! * [`dynamics`]: the `M(q) v' + ... = u` system abstraction, the planar two-link arm and
//!   the coordinate-transformed wrapper for non-box position constraints.
//! * [`barrier`]: barrier values, the safe set and its per-joint region decomposition.
//! * [`synthesis`]: certified parameter bounds and the parameter selection procedure.
//! * [`qp`]: the small dense active-set QP used by the safety filter.
//! * [`controller`]: constraint assembly, the explicit feasible control and the QP laws.
//! * [`sim`]: the zero-order-hold closed-loop simulator and the built-in scenarios.
//! * [`verify`]: grid sweeps that check the feasibility and barrier properties empirically.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod classk;
pub mod controller;
pub mod dynamics;
mod error;
pub mod grid;
pub mod qp;
pub mod sim;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
