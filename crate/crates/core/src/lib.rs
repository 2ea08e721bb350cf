//! Certified solver for mild solutions of semilinear evolution equations
//! `x_t = int_0^t S_{t-s} F(x_s) ds + o_t` with weakly singular semigroup
//! kernels.
//!
//! The solver advances in certified contraction windows: each window length
//! is computed from the kernel's singularity bound and the nonlinearity's
//! Lipschitz modulus so that the Picard map is provably a contraction of a
//! fixed ball, the fixed point is found by iteration, and consecutive windows
//! are glued through the shifted-forcing restart. Runs end either at the
//! horizon or in a classified finite-time blow-up, and every run can be
//! accompanied by checkable uniqueness and perturbation certificates.

pub mod config;
pub mod continuation;
pub mod error;
pub mod kernels;
pub mod nonlinear;
pub mod picard;
pub mod report;
pub mod space;
pub mod specialfn;
pub mod verify;
pub mod volterra;

pub use error::{Error, Result};
