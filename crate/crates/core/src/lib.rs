//! Quadratic programs over balanced assignment matrices.
//!
//! Minimizes `1/2 <A, X X^T> + <G, X>` over binary `n x m` matrices with
//! unit row sums and column sums `b = n / m`, via an `l_{1/2}`-regularized
//! box relaxation solved by ADMM. Also provides a brute-force oracle for
//! small instances, MMD-based mini-batch selection and a synthetic
//! optimizer benchmark.

pub mod admm;
pub mod error;
pub mod experiments;
pub mod model;
pub mod mmd;
pub mod oracle;

pub use admm::{solve, SolveReport, SolverConfig, Termination};
pub use error::{Error, Result};
pub use model::{AssignmentProblem, EtaThresholds};
