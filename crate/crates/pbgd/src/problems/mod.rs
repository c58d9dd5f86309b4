//! Bilevel problem interface and the concrete problems shipped with the crate.
//!
//! Variables are [`Matrix`] values; solvers treat their row-major entries as
//! flat vectors, and gradients share the shape of the variable they
//! differentiate.

mod examples;
mod hyperclean;
mod repr;

pub use examples::{
    example1, example1_nested, example1_nested_grad, example2, example2_lower_solution, example3,
    Example1, Example2, Example3,
};
pub use hyperclean::{
    hyperclean_problem, hyperclean_value_function, sigmoid, sigmoid_prime, HypercleanProblem,
    DIAGONAL_TOL,
};
pub use repr::{repr_nested_objective, repr_problem, repr_value_function, ReprProblem};

use crate::numerics::Matrix;

/// Whether a smoothness or PL constant is exact or a data-driven estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstantKind {
    Exact,
    /// Local estimate; solvers only use it to pick default stepsizes.
    Estimated,
}

/// Smoothness and PL constants of a problem. Absent constants are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothnessDescriptor {
    /// Smoothness of `f`.
    pub ell_f: Option<f64>,
    /// Smoothness of `g`.
    pub ell_g: Option<f64>,
    /// PL constant of `g(u, ·)`.
    pub mu_g: Option<f64>,
    /// Lipschitz constant of `f(u, ·)`.
    pub ell_f0: Option<f64>,
    pub kind: ConstantKind,
}

impl SmoothnessDescriptor {
    pub fn none() -> Self {
        Self {
            ell_f: None,
            ell_g: None,
            mu_g: None,
            ell_f0: None,
            kind: ConstantKind::Estimated,
        }
    }

    /// True when every present constant is positive and finite.
    pub fn is_valid(&self) -> bool {
        [self.ell_f, self.ell_g, self.mu_g, self.ell_f0]
            .iter()
            .flatten()
            .all(|&c| c > 0.0 && c.is_finite())
    }
}

/// Objectives `f` and `g` of a bilevel problem `min f(u, v)` subject to
/// `v ∈ argmin g(u, ·)`, with their partial gradients and optional oracles.
pub trait BilevelProblem: Send + Sync {
    fn name(&self) -> &str;
    fn u_shape(&self) -> (usize, usize);
    fn v_shape(&self) -> (usize, usize);

    fn dim_u(&self) -> usize {
        let (r, c) = self.u_shape();
        r * c
    }

    fn dim_v(&self) -> usize {
        let (r, c) = self.v_shape();
        r * c
    }

    fn f(&self, u: &Matrix, v: &Matrix) -> f64;
    fn grad_f_u(&self, u: &Matrix, v: &Matrix) -> Matrix;
    fn grad_f_v(&self, u: &Matrix, v: &Matrix) -> Matrix;
    fn g(&self, u: &Matrix, v: &Matrix) -> f64;
    fn grad_g_u(&self, u: &Matrix, v: &Matrix) -> Matrix;
    fn grad_g_v(&self, u: &Matrix, v: &Matrix) -> Matrix;

    /// Exact value function `g*(u) = min_v g(u, v)`, when available.
    fn value_function(&self, _u: &Matrix) -> Option<f64> {
        None
    }

    /// An exact lower-level solution in `S(u)`: the one closest to `near`
    /// when the solution set is an affine subspace, the unique one when it is
    /// a singleton, and otherwise a problem-specific point chosen from `near`.
    fn lower_solution(&self, _u: &Matrix, _near: &Matrix) -> Option<Matrix> {
        None
    }

    /// Reference upper-level value used for the upper-level error
    /// `|f(u, v) − f_ref|`; `None` when the problem has no such reference.
    fn upper_reference(&self) -> Option<f64> {
        None
    }

    /// Projection onto the feasible set of `u`; `None` when `u` is free.
    fn project_u(&self, _u: &Matrix) -> Option<Matrix> {
        None
    }

    fn smoothness(&self) -> SmoothnessDescriptor;

    /// `f(u, ·)` and `g(u, ·)` with `u` held fixed. Problems override this to
    /// cache work that only depends on `u`.
    fn slice_v<'a>(&'a self, u: &Matrix) -> Box<dyn VSlice + 'a> {
        Box::new(GenericSlice {
            problem: self.as_dyn(),
            u: u.clone(),
        })
    }

    #[doc(hidden)]
    fn as_dyn(&self) -> &dyn BilevelProblem;
}

/// Upper- and lower-level objectives restricted to `v` at a fixed `u`.
pub trait VSlice {
    fn f_and_grad(&self, v: &Matrix) -> (f64, Matrix);
    fn g_and_grad(&self, v: &Matrix) -> (f64, Matrix);
}

struct GenericSlice<'a> {
    problem: &'a dyn BilevelProblem,
    u: Matrix,
}

impl VSlice for GenericSlice<'_> {
    fn f_and_grad(&self, v: &Matrix) -> (f64, Matrix) {
        (
            self.problem.f(&self.u, v),
            self.problem.grad_f_v(&self.u, v),
        )
    }

    fn g_and_grad(&self, v: &Matrix) -> (f64, Matrix) {
        (
            self.problem.g(&self.u, v),
            self.problem.grad_g_v(&self.u, v),
        )
    }
}

/// Implements the `as_dyn` boilerplate for a concrete problem type.
macro_rules! impl_as_dyn {
    () => {
        fn as_dyn(&self) -> &dyn $crate::problems::BilevelProblem {
            self
        }
    };
}
pub(crate) use impl_as_dyn;
