//! Penalty-based gradient descent for bilevel problems whose lower level
//! satisfies a PL inequality.
//!
//! The crate provides dense linear algebra helpers ([`numerics`]), a problem
//! interface with several concrete instances ([`problems`]), the penalized
//! objective and its gradients ([`penalty`]), Jacobi and Gauss-Seidel
//! solvers ([`solvers`]), landscape and PL diagnostics ([`diagnostics`]) and
//! seeded dataset generation with a plain-text format ([`data`]).

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod numerics;
pub mod penalty;
pub mod problems;
pub mod solvers;

pub use error::{Error, Result};
pub use numerics::Matrix;
