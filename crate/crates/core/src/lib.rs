//! Moment constrained optimal transport (MCOT) for symmetric multi-marginal
//! problems with a regularized Coulomb cost.
//!
//! The relaxed problem replaces the marginal constraints by a finite family of
//! test-function moments and is solved over weighted particle systems with a
//! projected overdamped Langevin iteration.

// negated comparisons are the NaN guards
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod init;
pub mod io;
pub mod langevin;
pub mod measures;
pub mod model;
pub mod nnls;
pub mod oracle1d;
pub mod poly;
pub mod projection;
pub mod quadrature;
pub mod theory;

pub use error::{Error, Result};
pub use measures::MarginalLaw;
