//! Representation learning with a two-layer linear network.
//!
//! The upper variable is the shared feature map `W₁` (m×h) and the lower
//! variable is the head `W₂` (h×n):
//!
//! `f = L_val(W₁, W₂) = ½‖Y_val − X_val W₁ W₂‖²`,
//! `g = L_trn(W₁, W₂) = ½‖Y_trn − X_trn W₁ W₂‖²`.

use super::{impl_as_dyn, BilevelProblem, ConstantKind, SmoothnessDescriptor, VSlice};
use crate::data::ReprDataset;
use crate::error::{Error, Result};
use crate::numerics::{
    pseudoinverse, range_basis, spectral_norm, spectral_summary, Matrix, SpectralSummary,
    DEFAULT_RANK_TOL,
};

/// Bilevel representation-learning problem over a fixed dataset.
#[derive(Clone, Debug)]
pub struct ReprProblem {
    pub data: ReprDataset,
    pub trn_summary: SpectralSummary,
    pub val_summary: SpectralSummary,
    /// Estimated descriptor at the current reference `W₁`.
    smoothness: SmoothnessDescriptor,
}

/// Builds the problem; the descriptor is evaluated at the ground-truth `W₁*`
/// when present and at the rectangular identity otherwise.
pub fn repr_problem(data: ReprDataset) -> Result<ReprProblem> {
    let dims = data.dims();
    dims.validate()?;
    let trn_summary = spectral_summary(&data.x_trn, DEFAULT_RANK_TOL)?;
    let val_summary = spectral_summary(&data.x_val, DEFAULT_RANK_TOL)?;
    let reference_w1 = data
        .truth
        .as_ref()
        .map(|t| t.w1_star.clone())
        .unwrap_or_else(|| Matrix::eye(dims.m, dims.h));
    let mut problem = ReprProblem {
        data,
        trn_summary,
        val_summary,
        smoothness: SmoothnessDescriptor::none(),
    };
    problem.smoothness = problem.smoothness_at(&reference_w1)?;
    Ok(problem)
}

impl ReprProblem {
    /// Re-anchors the estimated smoothness descriptor at an initialization.
    pub fn at_initialization(mut self, w1: &Matrix) -> Result<Self> {
        if w1.shape() != self.u_shape() {
            return Err(Error::Shape("W1 initialization has the wrong shape".into()));
        }
        self.smoothness = self.smoothness_at(w1)?;
        Ok(self)
    }

    /// Smoothness and PL estimates at a given `W₁`.
    pub fn smoothness_at(&self, w1: &Matrix) -> Result<SmoothnessDescriptor> {
        let s_w1 = spectral_norm(w1)?;
        let a = self.data.x_trn.matmul(w1);
        let mu = spectral_summary(&a, DEFAULT_RANK_TOL)?.sigma_star;
        Ok(SmoothnessDescriptor {
            ell_f: Some((self.val_summary.sigma_max * s_w1).powi(2)),
            ell_g: Some((self.trn_summary.sigma_max * s_w1).powi(2)),
            mu_g: mu.map(|s| s * s),
            ell_f0: None,
            kind: ConstantKind::Estimated,
        })
    }

    /// Local constants for the hypergradient error of an inner run started
    /// at `w0`: returns `(ℓ, μ)` where `μ = σ_*²(X_trn W₁)` is the PL
    /// constant of `L_trn(W₁, ·)` and `ℓ` bounds
    /// `‖∇_{W₁}L_trn(W₁, w) − ∇_{W₁}L_trn(W₁, w*)‖ / ‖w − w*‖` for every `w`
    /// within `√(2·gap₀/μ)` of the solution `w*` nearest to `w0`.
    pub fn bias_constants(&self, w1: &Matrix, w0: &Matrix) -> Result<(f64, f64)> {
        let x = &self.data.x_trn;
        let a = x.matmul(w1);
        let sa = spectral_summary(&a, DEFAULT_RANK_TOL)?;
        let mu = sa.sigma_star_or_err("X_trn W1")?.powi(2);
        let w_star = self
            .lower_solution(w1, w0)
            .ok_or_else(|| Error::RankDeficient("lower-level solution".into()))?;
        let r_star = a.matmul(&w_star).sub(&self.data.y_trn);
        let gap0 = (self.g(w1, w0) - self.g(w1, &w_star)).max(0.0);
        let radius = (2.0 * gap0 / mu).sqrt();
        let ell = self.trn_summary.sigma_max
            * (sa.sigma_max * (spectral_norm(&w_star)? + radius) + spectral_norm(&r_star)?);
        Ok((ell, mu))
    }

    fn residual(x: &Matrix, w1: &Matrix, w2: &Matrix, y: &Matrix) -> Matrix {
        y.sub(&x.matmul(&w1.matmul(w2)))
    }
}

/// Lower-level value `min_{W₂} L_trn(W₁, W₂) = ½‖(I − A A†) Y_trn‖²` with
/// `A = X_trn W₁`.
pub fn repr_value_function(w1: &Matrix, data: &ReprDataset) -> Result<f64> {
    let uk = range_basis(&data.x_trn.matmul(w1), DEFAULT_RANK_TOL)?;
    let resid = data.y_trn.sub(&uk.matmul(&uk.t_matmul(&data.y_trn)));
    Ok(0.5 * resid.norm_sq())
}

/// Nested objective `F(W₁) = min { L_val(W₁, W₂) : W₂ ∈ S(W₁) }` in closed
/// form: with `A = X_trn W₁`, `C = X_val W₁ (I − A†A)` and
/// `A′ = Y_val − X_val W₁ A† Y_trn`, `F = ½‖A′ − C C† A′‖²`.
pub fn repr_nested_objective(w1: &Matrix, data: &ReprDataset) -> Result<f64> {
    let a = data.x_trn.matmul(w1);
    let a_pinv = pseudoinverse(&a, DEFAULT_RANK_TOL)?;
    let xv_w1 = data.x_val.matmul(w1);
    let a_prime = data.y_val.sub(&xv_w1.matmul(&a_pinv.matmul(&data.y_trn)));
    // C = X_val W₁ − (X_val W₁ A†) A, avoiding the h×h projector.
    let c = xv_w1.sub(&xv_w1.matmul(&a_pinv).matmul(&a));
    let b = pseudoinverse(&c, DEFAULT_RANK_TOL)?.matmul(&a_prime);
    Ok(0.5 * a_prime.sub(&c.matmul(&b)).norm_sq())
}

impl BilevelProblem for ReprProblem {
    fn name(&self) -> &str {
        "repr"
    }
    fn u_shape(&self) -> (usize, usize) {
        (self.data.x_trn.cols(), self.data.h)
    }
    fn v_shape(&self) -> (usize, usize) {
        (self.data.h, self.data.y_trn.cols())
    }
    fn f(&self, w1: &Matrix, w2: &Matrix) -> f64 {
        0.5 * Self::residual(&self.data.x_val, w1, w2, &self.data.y_val).norm_sq()
    }
    fn grad_f_u(&self, w1: &Matrix, w2: &Matrix) -> Matrix {
        let r = Self::residual(&self.data.x_val, w1, w2, &self.data.y_val);
        self.data.x_val.t_matmul(&r).matmul_t(w2).scale(-1.0)
    }
    fn grad_f_v(&self, w1: &Matrix, w2: &Matrix) -> Matrix {
        let r = Self::residual(&self.data.x_val, w1, w2, &self.data.y_val);
        w1.t_matmul(&self.data.x_val.t_matmul(&r)).scale(-1.0)
    }
    fn g(&self, w1: &Matrix, w2: &Matrix) -> f64 {
        0.5 * Self::residual(&self.data.x_trn, w1, w2, &self.data.y_trn).norm_sq()
    }
    fn grad_g_u(&self, w1: &Matrix, w2: &Matrix) -> Matrix {
        let r = Self::residual(&self.data.x_trn, w1, w2, &self.data.y_trn);
        self.data.x_trn.t_matmul(&r).matmul_t(w2).scale(-1.0)
    }
    fn grad_g_v(&self, w1: &Matrix, w2: &Matrix) -> Matrix {
        let r = Self::residual(&self.data.x_trn, w1, w2, &self.data.y_trn);
        w1.t_matmul(&self.data.x_trn.t_matmul(&r)).scale(-1.0)
    }
    fn value_function(&self, w1: &Matrix) -> Option<f64> {
        repr_value_function(w1, &self.data).ok()
    }
    /// `A†Y_trn + (I − A†A)·near`, the point of `S(W₁)` closest to `near`.
    fn lower_solution(&self, w1: &Matrix, near: &Matrix) -> Option<Matrix> {
        let a = self.data.x_trn.matmul(w1);
        let a_pinv = pseudoinverse(&a, DEFAULT_RANK_TOL).ok()?;
        let base = a_pinv.matmul(&self.data.y_trn);
        let kernel_part = near.sub(&a_pinv.matmul(&a.matmul(near)));
        Some(base.add(&kernel_part))
    }
    /// `L_val(W₁*, W₂*)` from the ground truth.
    fn upper_reference(&self) -> Option<f64> {
        let t = self.data.truth.as_ref()?;
        Some(self.f(&t.w1_star, &t.w2_star))
    }
    fn smoothness(&self) -> SmoothnessDescriptor {
        self.smoothness
    }
    fn slice_v<'a>(&'a self, w1: &Matrix) -> Box<dyn VSlice + 'a> {
        Box::new(ReprSlice {
            problem: self,
            a_trn: self.data.x_trn.matmul(w1),
            a_val: self.data.x_val.matmul(w1),
        })
    }
    impl_as_dyn!();
}

struct ReprSlice<'a> {
    problem: &'a ReprProblem,
    a_trn: Matrix,
    a_val: Matrix,
}

fn lsq_value_grad(a: &Matrix, y: &Matrix, w2: &Matrix) -> (f64, Matrix) {
    let r = a.matmul(w2).sub(y);
    (0.5 * r.norm_sq(), a.t_matmul(&r))
}

impl VSlice for ReprSlice<'_> {
    fn f_and_grad(&self, w2: &Matrix) -> (f64, Matrix) {
        lsq_value_grad(&self.a_val, &self.problem.data.y_val, w2)
    }
    fn g_and_grad(&self, w2: &Matrix) -> (f64, Matrix) {
        lsq_value_grad(&self.a_trn, &self.problem.data.y_trn, w2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_data() -> ReprDataset {
        let i = Matrix::identity(2);
        ReprDataset::new(i.clone(), i.clone(), i.clone(), i, 2, None).unwrap()
    }

    #[test]
    fn nested_objective_identity_anchors() {
        let d = identity_data();
        let invertible = Matrix::diag(&[2.0, -1.0]);
        assert!(repr_nested_objective(&invertible, &d).unwrap().abs() < 1e-12);
        let singular = Matrix::diag(&[0.0, 1.0]);
        assert!((repr_nested_objective(&singular, &d).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn value_function_at_zero_is_half_label_energy() {
        let d = identity_data();
        let v = repr_value_function(&Matrix::zeros(2, 2), &d).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }
}
