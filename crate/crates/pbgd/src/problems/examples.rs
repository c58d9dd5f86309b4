//! Small analytic problems with known landscapes.

use super::{impl_as_dyn, BilevelProblem, ConstantKind, SmoothnessDescriptor};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// `f(u, v) = ½(u − sin v)²`, `g(u, v) = ½(u − v)²` with scalar `u`, `v`.
///
/// The lower-level solution is `S(u) = {u}` and `g* ≡ 0`; the nested
/// objective `F(u) = ½(u − sin u)²` has nonoptimal stationary points at
/// `u = 2kπ`, `k ≠ 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Example1;

pub fn example1() -> Example1 {
    Example1
}

/// Nested objective `F(u) = f(u, S(u)) = ½(u − sin u)²`.
pub fn example1_nested(u: f64) -> f64 {
    0.5 * (u - u.sin()).powi(2)
}

/// `F′(u) = (u − sin u)(1 − cos u)`.
pub fn example1_nested_grad(u: f64) -> f64 {
    (u - u.sin()) * (1.0 - u.cos())
}

impl BilevelProblem for Example1 {
    fn name(&self) -> &str {
        "example1"
    }
    fn u_shape(&self) -> (usize, usize) {
        (1, 1)
    }
    fn v_shape(&self) -> (usize, usize) {
        (1, 1)
    }
    fn f(&self, u: &Matrix, v: &Matrix) -> f64 {
        0.5 * (u.item() - v.item().sin()).powi(2)
    }
    fn grad_f_u(&self, u: &Matrix, v: &Matrix) -> Matrix {
        Matrix::scalar(u.item() - v.item().sin())
    }
    fn grad_f_v(&self, u: &Matrix, v: &Matrix) -> Matrix {
        let v = v.item();
        Matrix::scalar(-(u.item() - v.sin()) * v.cos())
    }
    fn g(&self, u: &Matrix, v: &Matrix) -> f64 {
        0.5 * (u.item() - v.item()).powi(2)
    }
    fn grad_g_u(&self, u: &Matrix, v: &Matrix) -> Matrix {
        Matrix::scalar(u.item() - v.item())
    }
    fn grad_g_v(&self, u: &Matrix, v: &Matrix) -> Matrix {
        Matrix::scalar(v.item() - u.item())
    }
    fn value_function(&self, _u: &Matrix) -> Option<f64> {
        Some(0.0)
    }
    fn lower_solution(&self, u: &Matrix, _near: &Matrix) -> Option<Matrix> {
        Some(u.clone())
    }
    /// The bilevel optimum is `u = v = 0` with `f = 0`.
    fn upper_reference(&self) -> Option<f64> {
        Some(0.0)
    }
    /// `∇g` is 2-Lipschitz and `g(u, ·)` is 1-PL in `v`. The value `ℓ_f = 2`
    /// bounds the Hessian of `f` only near the solution set, hence the
    /// estimated marker.
    fn smoothness(&self) -> SmoothnessDescriptor {
        SmoothnessDescriptor {
            ell_f: Some(2.0),
            ell_g: Some(2.0),
            mu_g: Some(1.0),
            ell_f0: None,
            kind: ConstantKind::Estimated,
        }
    }
    impl_as_dyn!();
}

/// `f(u, v) = v`, `g(u, v) = eᵛ + (u + v)⁴` with scalar `u`, `v`.
///
/// `g(u, ·)` is strictly convex with a unique minimizer, found numerically
/// by [`example2_lower_solution`].
#[derive(Clone, Copy, Debug, Default)]
pub struct Example2;

pub fn example2() -> Example2 {
    Example2
}

/// Unique root in `v` of `4(u + v)³ + eᵛ = 0`.
///
/// The search starts from the bracket `[−|u| − 10, |u| + 10]`, doubles its
/// half-width until the residual changes sign, then bisects to width 1e-12.
pub fn example2_lower_solution(u: f64) -> Result<f64> {
    let h = |v: f64| 4.0 * (u + v).powi(3) + v.exp();
    let mut half = u.abs() + 10.0;
    let (mut lo, mut hi) = (-half, half);
    let mut doublings = 0;
    while !(h(lo) < 0.0 && h(hi) > 0.0) {
        doublings += 1;
        if doublings > 60 || !half.is_finite() {
            return Err(Error::Bracket(format!(
                "no sign change of 4(u+v)^3 + e^v for u = {u}"
            )));
        }
        half *= 2.0;
        lo = -half;
        hi = half;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rl, rh) = (h(lo).abs(), h(hi).abs());
    Ok(if rl <= rh { lo } else { hi })
}

impl BilevelProblem for Example2 {
    fn name(&self) -> &str {
        "example2"
    }
    fn u_shape(&self) -> (usize, usize) {
        (1, 1)
    }
    fn v_shape(&self) -> (usize, usize) {
        (1, 1)
    }
    fn f(&self, _u: &Matrix, v: &Matrix) -> f64 {
        v.item()
    }
    fn grad_f_u(&self, _u: &Matrix, _v: &Matrix) -> Matrix {
        Matrix::scalar(0.0)
    }
    fn grad_f_v(&self, _u: &Matrix, _v: &Matrix) -> Matrix {
        Matrix::scalar(1.0)
    }
    fn g(&self, u: &Matrix, v: &Matrix) -> f64 {
        let v = v.item();
        v.exp() + (u.item() + v).powi(4)
    }
    fn grad_g_u(&self, u: &Matrix, v: &Matrix) -> Matrix {
        Matrix::scalar(4.0 * (u.item() + v.item()).powi(3))
    }
    fn grad_g_v(&self, u: &Matrix, v: &Matrix) -> Matrix {
        let v = v.item();
        Matrix::scalar(v.exp() + 4.0 * (u.item() + v).powi(3))
    }
    fn value_function(&self, u: &Matrix) -> Option<f64> {
        let v = example2_lower_solution(u.item()).ok()?;
        Some(self.g(u, &Matrix::scalar(v)))
    }
    fn lower_solution(&self, u: &Matrix, _near: &Matrix) -> Option<Matrix> {
        example2_lower_solution(u.item()).ok().map(Matrix::scalar)
    }
    fn smoothness(&self) -> SmoothnessDescriptor {
        SmoothnessDescriptor {
            ell_f0: Some(1.0),
            ..SmoothnessDescriptor::none()
        }
    }
    impl_as_dyn!();
}

/// `f(u, v) = ½(u/2 + v₁ − sin v₂)²`, `g(u, v) = ½(u + v₁ + sin v₂)²` with
/// scalar `u` and `v ∈ ℝ²` stored as a 2×1 column.
#[derive(Clone, Copy, Debug, Default)]
pub struct Example3;

pub fn example3() -> Example3 {
    Example3
}

impl Example3 {
    fn residuals(u: &Matrix, v: &Matrix) -> (f64, f64, f64) {
        let (u, v1, v2) = (u.item(), v.get(0, 0), v.get(1, 0));
        (u / 2.0 + v1 - v2.sin(), u + v1 + v2.sin(), v2.cos())
    }
}

impl BilevelProblem for Example3 {
    fn name(&self) -> &str {
        "example3"
    }
    fn u_shape(&self) -> (usize, usize) {
        (1, 1)
    }
    fn v_shape(&self) -> (usize, usize) {
        (2, 1)
    }
    fn f(&self, u: &Matrix, v: &Matrix) -> f64 {
        0.5 * Self::residuals(u, v).0.powi(2)
    }
    fn grad_f_u(&self, u: &Matrix, v: &Matrix) -> Matrix {
        Matrix::scalar(0.5 * Self::residuals(u, v).0)
    }
    fn grad_f_v(&self, u: &Matrix, v: &Matrix) -> Matrix {
        let (rf, _, c) = Self::residuals(u, v);
        Matrix::column(&[rf, -rf * c])
    }
    fn g(&self, u: &Matrix, v: &Matrix) -> f64 {
        0.5 * Self::residuals(u, v).1.powi(2)
    }
    fn grad_g_u(&self, u: &Matrix, v: &Matrix) -> Matrix {
        Matrix::scalar(Self::residuals(u, v).1)
    }
    fn grad_g_v(&self, u: &Matrix, v: &Matrix) -> Matrix {
        let (_, rg, c) = Self::residuals(u, v);
        Matrix::column(&[rg, rg * c])
    }
    fn value_function(&self, _u: &Matrix) -> Option<f64> {
        Some(0.0)
    }
    /// The point of `S(u) = {v : u + v₁ + sin v₂ = 0}` sharing `v₂` with
    /// `near`.
    fn lower_solution(&self, u: &Matrix, near: &Matrix) -> Option<Matrix> {
        let v2 = near.as_slice()[1];
        Some(Matrix::column(&[-u.item() - v2.sin(), v2]))
    }
    /// `f = 0` is attained on the lower-level solution set, e.g. at the origin.
    fn upper_reference(&self) -> Option<f64> {
        Some(0.0)
    }
    /// Over `v`, `‖∇_v g‖² = (1 + cos² v₂)·2g ≥ 2g`, so `g(u, ·)` is 1-PL.
    /// Neither objective is globally smooth.
    fn smoothness(&self) -> SmoothnessDescriptor {
        SmoothnessDescriptor {
            mu_g: Some(1.0),
            kind: ConstantKind::Exact,
            ..SmoothnessDescriptor::none()
        }
    }
    impl_as_dyn!();
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn example1_origin() {
        let z = Matrix::scalar(0.0);
        assert_eq!(example1().f(&z, &z), 0.0);
        assert_eq!(example1().g(&z, &z), 0.0);
    }

    #[test]
    fn example1_spurious_nested_stationary_point() {
        let u = 2.0 * PI;
        assert!(example1_nested_grad(u).abs() < 1e-12);
        assert!((example1_nested(u) - 2.0 * PI * PI).abs() < 1e-9);
    }

    #[test]
    fn example2_anchor_points() {
        let u0 = -(0.25f64).cbrt();
        assert!(example2_lower_solution(u0).unwrap().abs() < 1e-9);
        let u1 = -(std::f64::consts::E / 4.0).cbrt() - 1.0;
        assert!((example2_lower_solution(u1).unwrap() - 1.0).abs() < 1e-9);
        let mid = 0.5 * (u0 + u1);
        let r = 4.0 * (mid + 0.5f64).powi(3) + 0.5f64.exp();
        assert!(r < 0.0 && (r + 0.07).abs() < 0.01);
        assert!(example2_lower_solution(mid).unwrap() > 0.5);
    }

    #[test]
    fn example2_residual_small_far_out() {
        for u in [-1e3, -5.0, 0.0, 3.0, 1e3] {
            let v = example2_lower_solution(u).unwrap();
            let r = 4.0 * (u + v).powi(3) + v.exp();
            assert!(r.abs() <= 1e-10 * (1.0 + v.exp()), "u = {u}, r = {r}");
        }
    }

    #[test]
    fn example3_origin() {
        let u = Matrix::scalar(0.0);
        let v = Matrix::column(&[0.0, 0.0]);
        assert_eq!(example3().f(&u, &v), 0.0);
        assert_eq!(example3().g(&u, &v), 0.0);
    }
}
