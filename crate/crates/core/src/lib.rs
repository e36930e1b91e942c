//! Solvers for linearly constrained multi-block convex composite optimization.
//!
//! The library implements two tightly coupled first-order methods:
//!
//! * an inexact majorized proximal augmented Lagrangian method with possibly
//!   indefinite proximal terms and dual step-length `tau` in (0, 2)
//!   ([`ipalm`]), and
//! * the symmetric Gauss-Seidel decomposition based multi-block proximal ADMM
//!   ([`sgsadmm`]), which is an instance of the former and therefore inherits
//!   the extended step-length range.
//!
//! Both solvers emit per-iteration traces from which runtime convergence
//! certificates (quasi-Fejér descent, non-ergodic complexity, feasibility
//! bounds, the sGS one-shot-minimization identity) can be checked after the
//! fact. Application front-ends for dual SDP, dual convex quadratic SDP,
//! constrained lasso and basis pursuit live in [`apps`]; SDPA file I/O and the
//! command entry points live in [`cli_io`].

pub mod error;
pub mod opcore;
pub mod model;
pub mod sgs;
pub mod ipalm;
pub mod sgsadmm;
pub mod apps;
pub mod cli_io;

pub use error::{Error, Result};
