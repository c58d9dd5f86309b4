//! Penalized objective `L_γ(u, v) = f(u, v) + γ(g(u, v) − g*(u))`, its
//! first-order gradients and the inner value-function solver.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::problems::{BilevelProblem, ConstantKind};

/// Where each inner solve starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerInit {
    /// Restart from the fixed `w⁰` at every outer iteration.
    Cold,
    /// Continue from the previous inner iterate.
    Warm,
}

/// Penalty constant and inner-solver settings for one problem.
#[derive(Clone, Copy)]
pub struct PenaltyContext<'a> {
    pub problem: &'a dyn BilevelProblem,
    pub gamma: f64,
    pub beta: f64,
    pub inner_steps: usize,
    pub init: InnerInit,
}

impl<'a> PenaltyContext<'a> {
    /// Validates `γ ≥ 0`, `β > 0` and `T ≥ 1`. When the problem reports an
    /// exact `ℓ_g`, `β ≤ 1/ℓ_g` is enforced as well.
    pub fn new(
        problem: &'a dyn BilevelProblem,
        gamma: f64,
        beta: f64,
        inner_steps: usize,
    ) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Parameter(format!("gamma must be >= 0, got {gamma}")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Parameter(format!("beta must be > 0, got {beta}")));
        }
        if inner_steps == 0 {
            return Err(Error::Parameter("inner steps T must be >= 1".into()));
        }
        let s = problem.smoothness();
        if let (ConstantKind::Exact, Some(l)) = (s.kind, s.ell_g) {
            if beta > 1.0 / l {
                return Err(Error::Parameter(format!(
                    "beta = {beta} exceeds 1/ell_g = {}",
                    1.0 / l
                )));
            }
        }
        Ok(Self {
            problem,
            gamma,
            beta,
            inner_steps,
            init: InnerInit::Cold,
        })
    }

    pub fn with_init(mut self, init: InnerInit) -> Self {
        self.init = init;
        self
    }
}

/// Output of [`inner_solve`].
#[derive(Clone, Debug)]
pub struct InnerSolveResult {
    pub w: Matrix,
    /// `g(u, w)` at the returned iterate.
    pub final_g: f64,
    pub steps_taken: usize,
    /// `g(u, w) − g*(u)` when an exact value function exists.
    pub g_gap_estimate: Option<f64>,
}

/// Runs exactly `T` gradient steps `w ← w − β∇_v g(u, w)` from `w0`.
///
/// Aborts with [`Error::Divergence`] when `g` exceeds ten times its initial
/// value (or becomes non-finite).
pub fn inner_solve(ctx: &PenaltyContext<'_>, u: &Matrix, w0: &Matrix) -> Result<InnerSolveResult> {
    let slice = ctx.problem.slice_v(u);
    let (g0, mut grad) = slice.g_and_grad(w0);
    let limit = if g0 > 0.0 {
        10.0 * g0
    } else {
        g0 + 10.0 * g0.abs().max(1.0)
    };
    let mut w = w0.clone();
    let mut g = g0;
    for step in 1..=ctx.inner_steps {
        w = w.add_scaled(-ctx.beta, &grad);
        let (gv, gr) = slice.g_and_grad(&w);
        g = gv;
        grad = gr;
        if !g.is_finite() || g > limit {
            return Err(Error::Divergence(format!(
                "inner objective grew from {g0:.6e} to {g:.6e} after {step} steps (beta = {})",
                ctx.beta
            )));
        }
    }
    let g_gap_estimate = ctx.problem.value_function(u).map(|gs| g - gs);
    Ok(InnerSolveResult {
        w,
        final_g: g,
        steps_taken: ctx.inner_steps,
        g_gap_estimate,
    })
}

/// Value of `L_γ`, flagged when `g*` came from an inner solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenalizedValue {
    pub value: f64,
    /// `true` when `g*(u)` was replaced by `g(u, w)` from [`inner_solve`],
    /// which overestimates `g*` and so underestimates `L_γ`.
    pub biased: bool,
}

/// `f(u, v) + γ(g(u, v) − g*(u))`, using the exact value function when the
/// problem has one and an inner solve from `w0` otherwise.
pub fn penalized_value(
    ctx: &PenaltyContext<'_>,
    u: &Matrix,
    v: &Matrix,
    w0: &Matrix,
) -> Result<PenalizedValue> {
    let p = ctx.problem;
    let f = p.f(u, v);
    if ctx.gamma == 0.0 {
        return Ok(PenalizedValue {
            value: f,
            biased: false,
        });
    }
    let g = p.g(u, v);
    match p.value_function(u) {
        Some(gs) => Ok(PenalizedValue {
            value: f + ctx.gamma * (g - gs),
            biased: false,
        }),
        None => {
            let inner = inner_solve(ctx, u, w0)?;
            Ok(PenalizedValue {
                value: f + ctx.gamma * (g - inner.final_g),
                biased: true,
            })
        }
    }
}

/// `∇_u f(u, v) + γ(∇_u g(u, v) − ∇_u g(u, w))`.
pub fn grad_penalized_u(ctx: &PenaltyContext<'_>, u: &Matrix, v: &Matrix, w: &Matrix) -> Matrix {
    let p = ctx.problem;
    let gf = p.grad_f_u(u, v);
    if ctx.gamma == 0.0 {
        return gf;
    }
    let diff = p.grad_g_u(u, v).sub(&p.grad_g_u(u, w));
    gf.add_scaled(ctx.gamma, &diff)
}

/// `∇_v f(u, v) + γ∇_v g(u, v)`.
pub fn grad_penalized_v(ctx: &PenaltyContext<'_>, u: &Matrix, v: &Matrix) -> Matrix {
    let p = ctx.problem;
    let gf = p.grad_f_v(u, v);
    if ctx.gamma == 0.0 {
        return gf;
    }
    gf.add_scaled(ctx.gamma, &p.grad_g_v(u, v))
}

/// `∇_u L_γ` with `w` replaced by the exact lower-level solution nearest to
/// `near`; `None` when the problem has no exact solution map.
pub fn exact_grad_penalized_u(
    ctx: &PenaltyContext<'_>,
    u: &Matrix,
    v: &Matrix,
    near: &Matrix,
) -> Option<Matrix> {
    let w = ctx.problem.lower_solution(u, near)?;
    Some(grad_penalized_u(ctx, u, v, &w))
}

/// Bound on `‖d_u − ∇_u L_γ‖`:
/// `√((2γ²ℓ_g²/μ_g)(1 − βμ_g)^T · gap₀)`.
pub fn bias_bound(
    gamma: f64,
    ell_g: f64,
    mu_g: f64,
    beta: f64,
    inner_steps: usize,
    initial_gap: f64,
) -> Result<f64> {
    let finite = [gamma, ell_g, mu_g, beta, initial_gap]
        .iter()
        .all(|x| x.is_finite());
    if !finite || gamma < 0.0 || ell_g <= 0.0 || mu_g <= 0.0 || beta <= 0.0 || initial_gap < 0.0 {
        return Err(Error::Parameter(
            "bias bound needs gamma, gap >= 0 and ell_g, mu_g, beta > 0".into(),
        ));
    }
    let q = beta * mu_g;
    if q > 1.0 {
        return Err(Error::Parameter(format!(
            "beta * mu_g = {q} exceeds 1; the inner contraction is undefined"
        )));
    }
    let contraction = (1.0 - q).powf(inner_steps as f64 / 2.0);
    Ok(gamma * ell_g * (2.0 / mu_g).sqrt() * contraction * initial_gap.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{example1, example3};
    use std::f64::consts::PI;

    #[test]
    fn bias_bound_formula() {
        let b = bias_bound(10.0, 2.0, 2.0, 0.25, 20, 1.0).unwrap();
        let expected = (2.0 * 100.0 * 4.0 / 2.0 * 0.5f64.powi(20)).sqrt();
        assert!((b - expected).abs() < 1e-15);
        assert_eq!(bias_bound(0.0, 2.0, 2.0, 0.25, 20, 1.0).unwrap(), 0.0);
        assert!(bias_bound(1.0, 1.0, 1.0, 0.5, 1_000_000, 1.0).unwrap() < 1e-100);
        assert!(bias_bound(1.0, 1.0, 4.0, 0.5, 1, 1.0).is_err());
    }

    #[test]
    fn example1_inner_contraction() {
        let p = example1();
        let ctx = PenaltyContext::new(&p, 1.0, 0.5, 50).unwrap();
        let r = inner_solve(&ctx, &Matrix::scalar(1.0), &Matrix::scalar(0.0)).unwrap();
        assert!((r.w.item() - 1.0).abs() < 1e-6);
        assert_eq!(r.steps_taken, 50);
    }

    #[test]
    fn example1_saddle_has_zero_gradient() {
        let p = example1();
        let ctx = PenaltyContext::new(&p, 1.0, 0.5, 1).unwrap();
        let (u, v) = (Matrix::scalar(PI), Matrix::scalar(2.0 * PI));
        let gu = grad_penalized_u(&ctx, &u, &v, &u);
        let gv = grad_penalized_v(&ctx, &u, &v);
        assert!(gu.norm() < 1e-12 && gv.norm() < 1e-12);
        let val = penalized_value(&ctx, &u, &v, &u).unwrap();
        assert!((val.value - PI * PI).abs() < 1e-12 && !val.biased);
    }

    #[test]
    fn example3_value_at_u_stationary_point() {
        let p = example3();
        let ctx = PenaltyContext::new(&p, 1.0, 0.1, 1).unwrap();
        let u = Matrix::scalar(-2.4);
        let v = Matrix::column(&[2.0, 0.0]);
        let val = penalized_value(&ctx, &u, &v, &v).unwrap();
        assert!((val.value - 0.4).abs() < 1e-12);
    }

    #[test]
    fn divergent_step_is_reported() {
        let p = example1();
        let ctx = PenaltyContext::new(&p, 1.0, 5.0, 10).unwrap();
        let err = inner_solve(&ctx, &Matrix::scalar(1.0), &Matrix::scalar(0.0));
        assert!(matches!(err, Err(Error::Divergence(_))));
    }
}
