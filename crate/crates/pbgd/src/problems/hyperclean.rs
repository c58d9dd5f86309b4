//! Data hyper-cleaning: per-sample sigmoid weights on a corrupted training
//! set, tuned against a clean validation set.
//!
//! `u ∈ [−ū, ū]^N` (an N×1 column) and `W` is m×n:
//!
//! `f = ℓ_val(W) = ½‖Y_val − X_val W‖²`,
//! `g = ℓ_trn(u, W) = ½ Σᵢ ψ(uᵢ)‖yᵢ − xᵢᵀW‖²`.

use super::{impl_as_dyn, BilevelProblem, ConstantKind, SmoothnessDescriptor, VSlice};
use crate::data::HypercleanDataset;
use crate::error::{Error, Result};
use crate::numerics::{pseudoinverse, spectral_summary, Matrix, DEFAULT_RANK_TOL};

/// Off-diagonal tolerance for `X_trn X_trn†` and the cutoff deciding
/// whether a diagonal entry counts as 1.
pub const DIAGONAL_TOL: f64 = 1e-8;

pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn sigmoid_prime(t: f64) -> f64 {
    let s = sigmoid(t);
    s * (1.0 - s)
}

#[derive(Clone, Debug)]
pub struct HypercleanProblem {
    pub data: HypercleanDataset,
    pub u_bar: f64,
    /// `X_trn†`.
    pub x_pinv: Matrix,
    /// Diagonal of `X_trn X_trn†`.
    pub proj_diag: Vec<f64>,
    smoothness: SmoothnessDescriptor,
}

/// Builds the problem after checking that `X_trn X_trn†` is diagonal.
pub fn hyperclean_problem(data: HypercleanDataset, u_bar: f64) -> Result<HypercleanProblem> {
    if !(u_bar >= 1.0) || !u_bar.is_finite() {
        return Err(Error::Parameter(format!("u_bar must be >= 1, got {u_bar}")));
    }
    let x_pinv = pseudoinverse(&data.x_trn, DEFAULT_RANK_TOL)?;
    let proj = data.x_trn.matmul(&x_pinv);
    let n = proj.rows();
    let mut off = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off = off.max(proj.get(i, j).abs());
            }
        }
    }
    if off > DIAGONAL_TOL {
        return Err(Error::Precondition(format!(
            "X_trn X_trn^+ is not diagonal (max off-diagonal {off:.3e})"
        )));
    }
    let proj_diag = (0..n).map(|i| proj.get(i, i)).collect();
    let trn = spectral_summary(&data.x_trn, DEFAULT_RANK_TOL)?;
    let val = spectral_summary(&data.x_val, DEFAULT_RANK_TOL)?;
    let psi_bar = sigmoid(u_bar);
    let smoothness = SmoothnessDescriptor {
        ell_f: Some(val.sigma_max.powi(2)).filter(|&x| x > 0.0),
        ell_g: Some(trn.sigma_max.powi(2)).filter(|&x| x > 0.0),
        mu_g: trn.sigma_star.map(|s| (1.0 - psi_bar) * s * s),
        ell_f0: None,
        kind: ConstantKind::Estimated,
    };
    Ok(HypercleanProblem {
        data,
        u_bar,
        x_pinv,
        proj_diag,
        smoothness,
    })
}

/// `ℓ*_trn(u) = ½ Σᵢ ψ(uᵢ)‖yᵢ‖²·𝟙(|[X X†]ᵢᵢ − 1| > 1e-8)`.
///
/// Requires `X_trn X_trn†` to be diagonal, which [`hyperclean_problem`]
/// verifies; the diagonal is recomputed here from the data.
pub fn hyperclean_value_function(u: &Matrix, data: &HypercleanDataset) -> Result<f64> {
    let x_pinv = pseudoinverse(&data.x_trn, DEFAULT_RANK_TOL)?;
    let diag: Vec<f64> = (0..data.x_trn.rows())
        .map(|i| {
            data.x_trn
                .row(i)
                .iter()
                .enumerate()
                .map(|(k, &x)| x * x_pinv.get(k, i))
                .sum()
        })
        .collect();
    Ok(value_from_diag(u, data, &diag))
}

fn value_from_diag(u: &Matrix, data: &HypercleanDataset, diag: &[f64]) -> f64 {
    let norms = data.y_trn.row_norms_sq();
    0.5 * u
        .as_slice()
        .iter()
        .zip(diag)
        .zip(norms)
        .filter(|((_, &d), _)| (d - 1.0).abs() > DIAGONAL_TOL)
        .map(|((&ui, _), y2)| sigmoid(ui) * y2)
        .sum::<f64>()
}

impl HypercleanProblem {
    pub fn weights(u: &Matrix) -> Vec<f64> {
        u.as_slice().iter().map(|&t| sigmoid(t)).collect()
    }

    /// `Y_trn − X_trn W`.
    pub fn train_residual(&self, w: &Matrix) -> Matrix {
        self.data.y_trn.sub(&self.data.x_trn.matmul(w))
    }

    /// `‖yᵢ‖²` for rows outside the range of `X_trn`, zero otherwise.
    pub fn unreachable_energy(&self) -> Vec<f64> {
        self.data
            .y_trn
            .row_norms_sq()
            .into_iter()
            .zip(&self.proj_diag)
            .map(|(y2, &d)| {
                if (d - 1.0).abs() > DIAGONAL_TOL {
                    y2
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Minimum-norm lower-level solution `X_trn† Y_trn`, shared by every `u`,
    /// with one step of iterative refinement against rounding in `X_trn†`.
    pub fn min_norm_solution(&self) -> Matrix {
        let w = self.x_pinv.matmul(&self.data.y_trn);
        w.add(&self.x_pinv.matmul(&self.train_residual(&w)))
    }
}

impl BilevelProblem for HypercleanProblem {
    fn name(&self) -> &str {
        "hyperclean"
    }
    fn u_shape(&self) -> (usize, usize) {
        (self.data.x_trn.rows(), 1)
    }
    fn v_shape(&self) -> (usize, usize) {
        (self.data.x_trn.cols(), self.data.y_trn.cols())
    }
    fn f(&self, _u: &Matrix, w: &Matrix) -> f64 {
        0.5 * self.data.y_val.sub(&self.data.x_val.matmul(w)).norm_sq()
    }
    fn grad_f_u(&self, u: &Matrix, _w: &Matrix) -> Matrix {
        Matrix::zeros(u.rows(), u.cols())
    }
    fn grad_f_v(&self, _u: &Matrix, w: &Matrix) -> Matrix {
        let r = self.data.y_val.sub(&self.data.x_val.matmul(w));
        self.data.x_val.t_matmul(&r).scale(-1.0)
    }
    fn g(&self, u: &Matrix, w: &Matrix) -> f64 {
        let norms = self.train_residual(w).row_norms_sq();
        0.5 * Self::weights(u)
            .iter()
            .zip(norms)
            .map(|(p, r)| p * r)
            .sum::<f64>()
    }
    fn grad_g_u(&self, u: &Matrix, w: &Matrix) -> Matrix {
        let norms = self.train_residual(w).row_norms_sq();
        let grad: Vec<f64> = u
            .as_slice()
            .iter()
            .zip(norms)
            .map(|(&t, r)| 0.5 * sigmoid_prime(t) * r)
            .collect();
        Matrix::from_vec_unchecked(u.rows(), u.cols(), grad)
    }
    fn grad_g_v(&self, u: &Matrix, w: &Matrix) -> Matrix {
        let r = self.train_residual(w).scale_rows(&Self::weights(u));
        self.data.x_trn.t_matmul(&r).scale(-1.0)
    }
    fn value_function(&self, u: &Matrix) -> Option<f64> {
        Some(value_from_diag(u, &self.data, &self.proj_diag))
    }
    /// `X†Y + (I − X†X)·near`; the solution set does not depend on `u`.
    fn lower_solution(&self, _u: &Matrix, near: &Matrix) -> Option<Matrix> {
        let kernel_part = near.sub(&self.x_pinv.matmul(&self.data.x_trn.matmul(near)));
        Some(self.min_norm_solution().add(&kernel_part))
    }
    /// `ℓ_val(W*)` from the ground truth.
    fn upper_reference(&self) -> Option<f64> {
        let w = self.data.w_star.as_ref()?;
        Some(self.f(&Matrix::zeros(0, 0), w))
    }
    fn project_u(&self, u: &Matrix) -> Option<Matrix> {
        Some(u.map(|t| t.clamp(-self.u_bar, self.u_bar)))
    }
    fn smoothness(&self) -> SmoothnessDescriptor {
        self.smoothness
    }
    fn slice_v<'a>(&'a self, u: &Matrix) -> Box<dyn VSlice + 'a> {
        Box::new(HypercleanSlice {
            problem: self,
            weights: Self::weights(u),
        })
    }
    impl_as_dyn!();
}

struct HypercleanSlice<'a> {
    problem: &'a HypercleanProblem,
    weights: Vec<f64>,
}

impl VSlice for HypercleanSlice<'_> {
    fn f_and_grad(&self, w: &Matrix) -> (f64, Matrix) {
        let d = &self.problem.data;
        let r = d.x_val.matmul(w).sub(&d.y_val);
        (0.5 * r.norm_sq(), d.x_val.t_matmul(&r))
    }
    fn g_and_grad(&self, w: &Matrix) -> (f64, Matrix) {
        let d = &self.problem.data;
        let r = d.x_trn.matmul(w).sub(&d.y_trn);
        let value = 0.5
            * self
                .weights
                .iter()
                .zip(r.row_norms_sq())
                .map(|(p, n)| p * n)
                .sum::<f64>();
        (value, d.x_trn.t_matmul(&r.scale_rows(&self.weights)))
    }
}
