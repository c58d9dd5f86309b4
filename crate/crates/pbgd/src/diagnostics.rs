//! Landscape diagnostics: sampled PL ratios, trajectory constants for the
//! representation-learning problem, hyper-cleaning constants, gradient checks
//! and objective grids.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::HypercleanDataset;
use crate::error::{Error, Result};
use crate::numerics::{
    min_norm_least_squares, spectral_norm, spectral_summary, summarize, symmetric_eigenvalues,
    Matrix, SpectralSummary, DEFAULT_RANK_TOL,
};
use crate::penalty::{bias_bound, grad_penalized_u, grad_penalized_v, InnerInit, PenaltyContext};
use crate::problems::{sigmoid, BilevelProblem, HypercleanProblem, ReprProblem, DIAGONAL_TOL};
use crate::solvers::{Annotations, Observer, StepView};

/// Gap below which a point counts as optimal in [`pl_ratio`].
pub const OPTIMAL_GAP: f64 = 1e-14;
/// Tolerated negative gap before [`pl_ratio`] rejects the optimum value.
pub const NEGATIVE_GAP_TOL: f64 = 1e-12;
/// Margin above zero required for a sampled PL constant to be certified.
pub const CERTIFY_MARGIN: f64 = 1e-12;

/// `‖∇h‖² / (2(h − h*))` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlRatio {
    Finite(f64),
    /// The gap was at most [`OPTIMAL_GAP`]; the ratio is treated as `+∞`.
    Optimal,
}

impl PlRatio {
    pub fn value(self) -> f64 {
        match self {
            Self::Finite(r) => r,
            Self::Optimal => f64::INFINITY,
        }
    }
}

/// PL ratio from a value, its squared gradient norm and the optimum value.
pub fn pl_ratio_from(value: f64, grad_norm_sq: f64, optimum: f64) -> Result<PlRatio> {
    let gap = value - optimum;
    if !gap.is_finite() || !grad_norm_sq.is_finite() {
        return Err(Error::NonFinite("PL ratio inputs".into()));
    }
    if gap < -NEGATIVE_GAP_TOL {
        return Err(Error::Parameter(format!(
            "optimum {optimum:e} exceeds the value {value:e}; wrong optimum supplied"
        )));
    }
    if gap <= OPTIMAL_GAP {
        return Ok(PlRatio::Optimal);
    }
    Ok(PlRatio::Finite(grad_norm_sq / (2.0 * gap)))
}

pub fn pl_ratio(
    value_fn: impl Fn(&Matrix) -> f64,
    grad_fn: impl Fn(&Matrix) -> Matrix,
    point: &Matrix,
    optimum: f64,
) -> Result<PlRatio> {
    pl_ratio_from(value_fn(point), grad_fn(point).norm_sq(), optimum)
}

/// Which block a PL ratio is taken over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlMode {
    Joint,
    BlockwiseU,
    BlockwiseV,
}

/// Sampled infimum of the PL ratio over a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct PLReport {
    pub mode: PlMode,
    /// Smallest finite ratio seen; `+∞` when every sample was optimal.
    pub measured_mu: f64,
    pub certified: bool,
    pub sample_count: usize,
    /// Samples skipped as already optimal.
    pub optimal_count: usize,
    pub min_location: Option<Matrix>,
}

/// Evaluates the PL ratio at every point, with a per-point optimum value.
pub fn pl_report(
    mode: PlMode,
    value_fn: impl Fn(&Matrix) -> f64,
    grad_fn: impl Fn(&Matrix) -> Matrix,
    optimum_fn: impl Fn(&Matrix) -> f64,
    points: &[Matrix],
) -> Result<PLReport> {
    let mut measured_mu = f64::INFINITY;
    let mut min_location = None;
    let mut optimal_count = 0;
    for p in points {
        match pl_ratio(&value_fn, &grad_fn, p, optimum_fn(p))? {
            PlRatio::Optimal => optimal_count += 1,
            PlRatio::Finite(r) => {
                if r < measured_mu {
                    measured_mu = r;
                    min_location = Some(p.clone());
                }
            }
        }
    }
    Ok(PLReport {
        mode,
        measured_mu,
        certified: measured_mu > CERTIFY_MARGIN,
        sample_count: points.len(),
        optimal_count,
        min_location,
    })
}

/// `X_γ = [X_val; √γ X_trn]`.
pub fn x_gamma(x_val: &Matrix, x_trn: &Matrix, gamma: f64) -> Matrix {
    x_val.vstack(&x_trn.scale(gamma.sqrt()))
}

/// Spectral summary of `X_γ` for a representation-learning problem.
pub fn repr_x_gamma_summary(problem: &ReprProblem, gamma: f64) -> Result<SpectralSummary> {
    spectral_summary(
        &x_gamma(&problem.data.x_val, &problem.data.x_trn, gamma),
        DEFAULT_RANK_TOL,
    )
}

fn full_rank_sigma_min(m: &Matrix, name: &str) -> Result<f64> {
    let s = spectral_summary(m, DEFAULT_RANK_TOL)?;
    if s.rank < m.rows().min(m.cols()) || s.sigma_min <= 0.0 {
        return Err(Error::RankDeficient(format!(
            "{name} has rank {} < {}; PL certificate unavailable",
            s.rank,
            m.rows().min(m.cols())
        )));
    }
    Ok(s.sigma_min)
}

/// `μ_k = (σ_min²(W₁) + σ_min²(W₂))·σ_*²(X_γ)`; rank-deficient `W₁` or `W₂`
/// is reported as [`Error::RankDeficient`].
pub fn repr_mu_k(w1: &Matrix, w2: &Matrix, x_gamma_summary: &SpectralSummary) -> Result<f64> {
    let s1 = full_rank_sigma_min(w1, "W1")?;
    let s2 = full_rank_sigma_min(w2, "W2")?;
    let sx = x_gamma_summary.sigma_star_or_err("X_gamma")?;
    Ok((s1 * s1 + s2 * s2) * sx * sx)
}

/// Local smoothness constant `L_k` of the penalized representation-learning
/// objective along one outer step, with `s = σ_max²(X_γ)`,
/// `a = σ_max²(W₁) + σ_max²(W₂)` and `r = √(2s·gap)`:
/// `s·a + 3αδ·s·σ_max(W₂) + (1 + 3α·s·a)·r + 3α²·s·δ·σ_max(W₁)·r
///  + 6α²·s²·σ_max(W₁W₂)·gap`.
pub fn repr_l_k(
    w1: &Matrix,
    w2: &Matrix,
    x_gamma_summary: &SpectralSummary,
    w_product_sigma_max: f64,
    gap: f64,
    alpha: f64,
    delta: f64,
) -> Result<f64> {
    let a1 = spectral_norm(w1)?;
    let a2 = spectral_norm(w2)?;
    Ok(l_k_formula(
        a1,
        a2,
        x_gamma_summary.sigma_max,
        w_product_sigma_max,
        gap,
        alpha,
        delta,
    ))
}

fn l_k_formula(a1: f64, a2: f64, sx: f64, sw: f64, gap: f64, alpha: f64, delta: f64) -> f64 {
    let s = sx * sx;
    let a = a1 * a1 + a2 * a2;
    let r = (2.0 * s * gap.max(0.0)).sqrt();
    s * a
        + 3.0 * alpha * delta * s * a2
        + (1.0 + 3.0 * alpha * s * a) * r
        + 3.0 * alpha * alpha * s * delta * a1 * r
        + 6.0 * alpha * alpha * s * s * sw * gap.max(0.0)
}

/// `min L_γ` for representation learning: the least-squares minimum of
/// `½‖[Y_val; √γ Y_trn] − X_γ W‖²` over `W = W₁W₂`.
pub fn repr_min_penalized(problem: &ReprProblem, gamma: f64) -> Result<f64> {
    let d = &problem.data;
    let xg = x_gamma(&d.x_val, &d.x_trn, gamma);
    let yg = d.y_val.vstack(&d.y_trn.scale(gamma.sqrt()));
    let w = min_norm_least_squares(&xg, &yg)?;
    Ok(0.5 * yg.sub(&xg.matmul(&w)).norm_sq())
}

/// Exact `(∇_u L_γ, ∇_v L_γ)` using the lower-level solution nearest `near`.
pub fn exact_penalized_gradient(
    problem: &dyn BilevelProblem,
    gamma: f64,
    u: &Matrix,
    v: &Matrix,
    near: &Matrix,
) -> Result<(Matrix, Matrix)> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Parameter(format!("gamma must be >= 0, got {gamma}")));
    }
    // The inner stepsize is irrelevant here because no inner solve runs.
    let ctx = PenaltyContext {
        problem,
        gamma,
        beta: 1.0,
        inner_steps: 1,
        init: InnerInit::Cold,
    };
    let w = problem.lower_solution(u, near).ok_or_else(|| {
        Error::Precondition(format!("{} has no exact lower solution", problem.name()))
    })?;
    Ok((
        grad_penalized_u(&ctx, u, v, &w),
        grad_penalized_v(&ctx, u, v),
    ))
}

/// Spectral constants of the penalized hyper-cleaning problem in `W` and
/// the blockwise-`u` PL constant as a function of the positive mismatch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HypercleanConstants {
    pub gamma: f64,
    /// `ψ(ū)`.
    pub psi_bar: f64,
    /// `σ_*(X_valᵀX_val + γ(1 − ψ(ū))X_trnᵀX_trn)`.
    pub mu_w_gamma: f64,
    /// `σ_max(X_valᵀX_val + γψ(ū)X_trnᵀX_trn)`.
    pub l_w_gamma: f64,
    /// `σ_*((1 − ψ(ū))X_trnᵀX_trn)`.
    pub mu_w: f64,
    /// `σ_max(ψ(ū)X_trnᵀX_trn)`.
    pub l_w: f64,
}

impl HypercleanConstants {
    /// `γ·c(W)·ψ(ū)(1 − ψ(ū))²/4`.
    pub fn mu_u_block(&self, positive_mismatch: f64) -> f64 {
        self.gamma * positive_mismatch * self.psi_bar * (1.0 - self.psi_bar).powi(2) / 4.0
    }
}

fn psd_summary(m: &Matrix) -> Result<SpectralSummary> {
    let mut eig: Vec<f64> = symmetric_eigenvalues(m)?
        .into_iter()
        .map(|x| x.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(summarize(&eig, DEFAULT_RANK_TOL))
}

pub fn hyperclean_constants(
    data: &HypercleanDataset,
    gamma: f64,
    u_bar: f64,
) -> Result<HypercleanConstants> {
    if !(gamma >= 0.0) || !(u_bar > 0.0) {
        return Err(Error::Parameter("need gamma >= 0 and u_bar > 0".into()));
    }
    let psi_bar = sigmoid(u_bar);
    let gv = data.x_val.t_matmul(&data.x_val);
    let gt = data.x_trn.t_matmul(&data.x_trn);
    let lower = psd_summary(&gv.add_scaled(gamma * (1.0 - psi_bar), &gt))?;
    let upper = psd_summary(&gv.add_scaled(gamma * psi_bar, &gt))?;
    let trn = psd_summary(&gt)?;
    Ok(HypercleanConstants {
        gamma,
        psi_bar,
        mu_w_gamma: lower.sigma_star.unwrap_or(0.0),
        l_w_gamma: upper.sigma_max,
        mu_w: (1.0 - psi_bar) * trn.sigma_star.unwrap_or(0.0),
        l_w: psi_bar * trn.sigma_max,
    })
}

/// Relative cutoff deciding when a mismatch term counts as strictly
/// positive: `mᵢ > MISMATCH_TOL·(1 + ‖yᵢ‖²)`.
pub const MISMATCH_TOL: f64 = 1e-10;

/// Per-sample mismatch `mᵢ = ‖yᵢ − xᵢᵀW‖² − ‖yᵢ‖²·𝟙([X X†]ᵢᵢ ≠ 1)`.
pub fn mismatch_terms(w: &Matrix, problem: &HypercleanProblem) -> Vec<f64> {
    let resid = problem.train_residual(w).row_norms_sq();
    resid
        .into_iter()
        .zip(problem.unreachable_energy())
        .map(|(r, e)| r - e)
        .collect()
}

/// Smallest strictly positive mismatch term; `None` when no term is positive.
pub fn positive_mismatch(w: &Matrix, problem: &HypercleanProblem) -> Option<f64> {
    let norms = problem.data.y_trn.row_norms_sq();
    mismatch_terms(w, problem)
        .into_iter()
        .zip(norms)
        .filter(|&(m, y2)| m > MISMATCH_TOL * (1.0 + y2))
        .map(|(m, _)| m)
        .min_by(f64::total_cmp)
}

/// Worst coordinatewise relative error `|fd − g| / max(1, |g|)` between the
/// analytic gradient and central differences with the given step.
pub fn finite_diff_check(
    value_fn: impl Fn(&Matrix) -> f64,
    grad_fn: impl Fn(&Matrix) -> Matrix,
    points: &[Matrix],
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Parameter(format!("step must be > 0, got {step}")));
    }
    let mut worst = 0.0f64;
    for p in points {
        let grad = grad_fn(p);
        if grad.shape() != p.shape() {
            return Err(Error::Shape("gradient shape differs from the point".into()));
        }
        let mut plus = p.clone().into_vec();
        for i in 0..plus.len() {
            let x = plus[i];
            plus[i] = x + step;
            let fp = value_fn(&Matrix::new(p.rows(), p.cols(), plus.clone())?);
            plus[i] = x - step;
            let fm = value_fn(&Matrix::new(p.rows(), p.cols(), plus.clone())?);
            plus[i] = x;
            let fd = (fp - fm) / (2.0 * step);
            let an = grad.as_slice()[i];
            let err = (fd - an).abs() / an.abs().max(1.0);
            if !err.is_finite() {
                return Err(Error::NonFinite(format!(
                    "finite difference at coordinate {i}"
                )));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Worst finite-difference error of one analytic gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

/// Checks `∇_u f`, `∇_v f`, `∇_u g`, `∇_v g` and both blocks of `∇L_γ`
/// against central differences at every `(u, v)` point. The `u` block of
/// `L_γ` is skipped when the problem has no exact value function.
pub fn gradient_suite(
    problem: &dyn BilevelProblem,
    gamma: f64,
    points: &[(Matrix, Matrix)],
    step: f64,
) -> Result<Vec<GradientCheck>> {
    let mut out = Vec::new();
    let (us, vs) = (problem.u_shape(), problem.v_shape());
    let check = |name: &'static str,
                 value: &dyn Fn(&Matrix, &Matrix) -> f64,
                 grad: &dyn Fn(&Matrix, &Matrix) -> Matrix,
                 in_u: bool|
     -> Result<GradientCheck> {
        let mut worst = 0.0f64;
        for (u, v) in points {
            if u.shape() != us || v.shape() != vs {
                return Err(Error::Shape(
                    "gradient check point has the wrong shape".into(),
                ));
            }
            let err = if in_u {
                finite_diff_check(
                    |x| value(x, v),
                    |x| grad(x, v),
                    std::slice::from_ref(u),
                    step,
                )?
            } else {
                finite_diff_check(
                    |y| value(u, y),
                    |y| grad(u, y),
                    std::slice::from_ref(v),
                    step,
                )?
            };
            worst = worst.max(err);
        }
        Ok(GradientCheck {
            name,
            max_rel_err: worst,
        })
    };
    let p = problem;
    out.push(check(
        "grad_f_u",
        &|u, v| p.f(u, v),
        &|u, v| p.grad_f_u(u, v),
        true,
    )?);
    out.push(check(
        "grad_f_v",
        &|u, v| p.f(u, v),
        &|u, v| p.grad_f_v(u, v),
        false,
    )?);
    out.push(check(
        "grad_g_u",
        &|u, v| p.g(u, v),
        &|u, v| p.grad_g_u(u, v),
        true,
    )?);
    out.push(check(
        "grad_g_v",
        &|u, v| p.g(u, v),
        &|u, v| p.grad_g_v(u, v),
        false,
    )?);
    let ctx = PenaltyContext {
        problem,
        gamma,
        beta: 1.0,
        inner_steps: 1,
        init: InnerInit::Cold,
    };
    let l_v = |u: &Matrix, v: &Matrix| p.f(u, v) + gamma * p.g(u, v);
    out.push(check(
        "grad_L_v",
        &l_v,
        &|u, v| grad_penalized_v(&ctx, u, v),
        false,
    )?);
    if points
        .first()
        .is_some_and(|(u, _)| p.value_function(u).is_some())
    {
        let l_u = |u: &Matrix, v: &Matrix| {
            p.f(u, v) + gamma * (p.g(u, v) - p.value_function(u).unwrap_or(f64::NAN))
        };
        let g_u = |u: &Matrix, v: &Matrix| match p.lower_solution(u, v) {
            Some(w) => grad_penalized_u(&ctx, u, v, &w),
            None => Matrix::from_fn(us.0, us.1, |_, _| f64::NAN),
        };
        out.push(check("grad_L_u", &l_u, &g_u, true)?);
    }
    Ok(out)
}

/// Evaluation axis of a [`LandscapeGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub points: Vec<f64>,
}

impl Axis {
    /// `resolution` evenly spaced points on `[lo, hi]`; a degenerate range
    /// collapses to the single point `lo`.
    pub fn new(lo: f64, hi: f64, resolution: usize) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || hi < lo {
            return Err(Error::Parameter(format!("invalid axis range [{lo}, {hi}]")));
        }
        if lo == hi {
            return Ok(Self {
                lo,
                hi,
                points: vec![lo],
            });
        }
        if resolution < 2 {
            return Err(Error::Parameter(
                "grid resolution must be >= 2 per axis".into(),
            ));
        }
        let step = (hi - lo) / (resolution - 1) as f64;
        let points = (0..resolution)
            .map(|i| {
                if i + 1 == resolution {
                    hi
                } else {
                    lo + step * i as f64
                }
            })
            .collect();
        Ok(Self { lo, hi, points })
    }
}

/// Dense objective values on a product grid; `values[i][j]` is taken at
/// `(u[i], v[j])` and undefined evaluations are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    pub label: String,
    pub u: Axis,
    pub v: Axis,
    pub values: Vec<Vec<Option<f64>>>,
}

impl LandscapeGrid {
    /// CSV with header `x,y,value`; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,value\n");
        for (i, &x) in self.u.points.iter().enumerate() {
            for (j, &y) in self.v.points.iter().enumerate() {
                let value = self.values[i][j]
                    .map(|z| format!("{z:?}"))
                    .unwrap_or_default();
                let _ = writeln!(out, "{x:?},{y:?},{value}");
            }
        }
        out
    }

    /// Grid point with the smallest defined value.
    pub fn argmin(&self) -> Option<(f64, f64, f64)> {
        let mut best: Option<(f64, f64, f64)> = None;
        for (i, row) in self.values.iter().enumerate() {
            for (j, z) in row.iter().enumerate() {
                if let Some(z) = *z {
                    if best.is_none_or(|b| z < b.2) {
                        best = Some((self.u.points[i], self.v.points[j], z));
                    }
                }
            }
        }
        best
    }
}

/// Evaluates `objective(u, v)` on the grid, rows in parallel.
pub fn landscape_grid(
    label: &str,
    objective: impl Fn(f64, f64) -> f64 + Sync,
    u_range: (f64, f64),
    v_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<LandscapeGrid> {
    let u = Axis::new(u_range.0, u_range.1, resolution.0)?;
    let v = Axis::new(v_range.0, v_range.1, resolution.1)?;
    let values = u
        .points
        .par_iter()
        .map(|&x| {
            v.points
                .iter()
                .map(|&y| Some(objective(x, y)).filter(|z| z.is_finite()))
                .collect()
        })
        .collect();
    Ok(LandscapeGrid {
        label: label.to_string(),
        u,
        v,
        values,
    })
}

/// Per-iteration quantities behind the joint PL and descent certificates of
/// the representation-learning problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprCertificate {
    pub k: usize,
    pub penalized_value: f64,
    /// `‖∇L_γ‖²` with the exact lower-level solution.
    pub grad_norm_sq: f64,
    pub pl_ratio: PlRatio,
    /// `None` when `W₁` or `W₂` is rank deficient.
    pub mu_k: Option<f64>,
    /// `‖(d_u, d_v) − ∇L_γ‖`.
    pub delta: f64,
    pub l_k: f64,
    pub alpha: f64,
}

/// Observer that records [`ReprCertificate`] rows along a Jacobi run.
pub struct ReprCertificateObserver<'a> {
    problem: &'a ReprProblem,
    x_gamma: SpectralSummary,
    min_value: f64,
    gamma: f64,
    pub rows: Vec<ReprCertificate>,
    pub errors: Vec<(usize, String)>,
}

impl<'a> ReprCertificateObserver<'a> {
    pub fn new(problem: &'a ReprProblem, gamma: f64) -> Result<Self> {
        Ok(Self {
            problem,
            x_gamma: repr_x_gamma_summary(problem, gamma)?,
            min_value: repr_min_penalized(problem, gamma)?,
            gamma,
            rows: Vec::new(),
            errors: Vec::new(),
        })
    }

    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    fn certify(&self, view: &StepView<'_>) -> Result<ReprCertificate> {
        let (gu, gv) = exact_penalized_gradient(self.problem, self.gamma, view.u, view.v, view.w)?;
        let grad_norm_sq = gu.norm_sq() + gv.norm_sq();
        let pl = pl_ratio_from(view.penalized_value, grad_norm_sq, self.min_value)?;
        let mu_k = repr_mu_k(view.u, view.v, &self.x_gamma).ok();
        let delta = (view.d_u.sub(&gu).norm_sq() + view.d_v.sub(&gv).norm_sq()).sqrt();
        let gap = (view.penalized_value - self.min_value).max(0.0);
        let sw = spectral_norm(&view.u.matmul(view.v))?;
        let l_k = repr_l_k(view.u, view.v, &self.x_gamma, sw, gap, view.alpha, delta)?;
        Ok(ReprCertificate {
            k: view.k,
            penalized_value: view.penalized_value,
            grad_norm_sq,
            pl_ratio: pl,
            mu_k,
            delta,
            l_k,
            alpha: view.alpha,
        })
    }

    /// Iterates where the sampled PL ratio falls below `μ_k − slack`.
    pub fn pl_violations(&self, slack: f64) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| matches!(r.mu_k, Some(mu) if r.pl_ratio.value() < mu - slack))
            .map(|r| r.k)
            .collect()
    }

    /// Steps violating
    /// `L(k+1) ≤ L(k) − (α/2 − α²L_k)‖∇L(k)‖² + (α/2 + α²L_k)δ_k²`, with a
    /// relative rounding allowance `rel_slack·max(1, |L(k)|)`.
    pub fn descent_violations(&self, rel_slack: f64) -> Vec<usize> {
        self.rows
            .windows(2)
            .filter(|w| {
                let (c, n) = (&w[0], &w[1]);
                let a = c.alpha;
                let rhs = c.penalized_value - (a / 2.0 - a * a * c.l_k) * c.grad_norm_sq
                    + (a / 2.0 + a * a * c.l_k) * c.delta * c.delta;
                n.penalized_value > rhs + rel_slack * c.penalized_value.abs().max(1.0)
            })
            .map(|w| w[0].k)
            .collect()
    }
}

impl Observer for ReprCertificateObserver<'_> {
    fn observe(&mut self, view: &StepView<'_>) -> Annotations {
        match self.certify(view) {
            Ok(row) => {
                let mu_k = row.mu_k;
                self.rows.push(row);
                Annotations {
                    mu_k,
                    bias_bound: None,
                }
            }
            Err(e) => {
                self.errors.push((view.k, e.to_string()));
                Annotations::default()
            }
        }
    }
}

/// One comparison of the measured hypergradient error with its bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasSample {
    pub k: usize,
    /// `‖d_u − ∇_u L_γ‖` with `∇_u L_γ` from the exact lower-level solution
    /// nearest the inner start.
    pub measured: f64,
    pub bound: f64,
}

/// Local `(ℓ, μ)` constants for the bias bound at `(u, w_start)`.
pub type BiasConstantsFn<'a> = dyn Fn(&Matrix, &Matrix) -> Result<(f64, f64)> + 'a;

/// Observer comparing the `u` direction with the exact penalized gradient
/// and the bias bound at every outer iteration.
pub struct BiasProbe<'a> {
    problem: &'a dyn BilevelProblem,
    constants: Box<BiasConstantsFn<'a>>,
    pub samples: Vec<BiasSample>,
    pub errors: Vec<(usize, String)>,
}

impl<'a> BiasProbe<'a> {
    pub fn new(problem: &'a dyn BilevelProblem, constants: Box<BiasConstantsFn<'a>>) -> Self {
        Self {
            problem,
            constants,
            samples: Vec::new(),
            errors: Vec::new(),
        }
    }

    /// Probe using the problem's descriptor constants `ℓ_g`, `μ_g`.
    pub fn from_descriptor(problem: &'a dyn BilevelProblem) -> Result<Self> {
        let s = problem.smoothness();
        let (l, mu) = match (s.ell_g, s.mu_g) {
            (Some(l), Some(mu)) => (l, mu),
            _ => return Err(Error::Parameter("descriptor lacks ell_g or mu_g".into())),
        };
        Ok(Self::new(problem, Box::new(move |_, _| Ok((l, mu)))))
    }

    /// Probe for representation learning with constants from
    /// [`ReprProblem::bias_constants`].
    pub fn for_repr(problem: &'a ReprProblem) -> Self {
        Self::new(
            problem,
            Box::new(move |u, w0| problem.bias_constants(u, w0)),
        )
    }

    fn sample(&self, view: &StepView<'_>) -> Result<BiasSample> {
        let exact_w = self
            .problem
            .lower_solution(view.u, view.w_start)
            .ok_or_else(|| Error::Precondition("no exact lower solution".into()))?;
        let ctx = PenaltyContext {
            problem: self.problem,
            gamma: view.gamma,
            beta: view.beta,
            inner_steps: view.inner_steps,
            init: InnerInit::Cold,
        };
        let exact = grad_penalized_u(&ctx, view.u, view.v, &exact_w);
        let g_star = self
            .problem
            .value_function(view.u)
            .unwrap_or_else(|| self.problem.g(view.u, &exact_w));
        let gap = (self.problem.g(view.u, view.w_start) - g_star).max(0.0);
        let (ell, mu) = (self.constants)(view.u, view.w_start)?;
        let bound = bias_bound(view.gamma, ell, mu, view.beta, view.inner_steps, gap)?;
        Ok(BiasSample {
            k: view.k,
            measured: view.d_u.sub(&exact).norm(),
            bound,
        })
    }
}

impl Observer for BiasProbe<'_> {
    fn observe(&mut self, view: &StepView<'_>) -> Annotations {
        match self.sample(view) {
            Ok(s) => {
                self.samples.push(s);
                Annotations {
                    mu_k: None,
                    bias_bound: Some(s.bound),
                }
            }
            Err(e) => {
                self.errors.push((view.k, e.to_string()));
                Annotations::default()
            }
        }
    }
}

/// Largest `‖∇_W ℓ_trn(u, X_trn†Y_trn)‖` over the given weights `u`.
pub fn solution_independence(problem: &HypercleanProblem, us: &[Matrix]) -> f64 {
    let w = problem.min_norm_solution();
    us.iter()
        .map(|u| problem.grad_g_v(u, &w).norm())
        .fold(0.0, f64::max)
}

/// Largest off-diagonal entry of `X_trn X_trn†`.
pub fn projector_off_diagonal(problem: &HypercleanProblem) -> f64 {
    let p = problem.data.x_trn.matmul(&problem.x_pinv);
    let mut off = 0.0f64;
    for i in 0..p.rows() {
        for j in 0..p.cols() {
            if i != j {
                off = off.max(p.get(i, j).abs());
            }
        }
    }
    off
}

/// Whether `X_trn X_trn†` is diagonal within the problem tolerance.
pub fn projector_is_diagonal(problem: &HypercleanProblem) -> bool {
    projector_off_diagonal(problem) <= DIAGONAL_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{example1, example1_nested, example1_nested_grad};
    use std::f64::consts::PI;

    #[test]
    fn isotropic_quadratic_ratio_is_one() {
        let r = pl_ratio(
            |x| 0.5 * x.norm_sq(),
            |x| x.clone(),
            &Matrix::scalar(2.0),
            0.0,
        )
        .unwrap();
        assert_eq!(r, PlRatio::Finite(1.0));
        let opt = pl_ratio(
            |x| 0.5 * x.norm_sq(),
            |x| x.clone(),
            &Matrix::scalar(0.0),
            0.0,
        );
        assert_eq!(opt.unwrap(), PlRatio::Optimal);
        assert!(pl_ratio(
            |x| 0.5 * x.norm_sq(),
            |x| x.clone(),
            &Matrix::scalar(1.0),
            1.0
        )
        .is_err());
    }

    #[test]
    fn nested_objective_is_not_pl_near_two_pi() {
        let u = 2.0 * PI + 0.01;
        let r = pl_ratio(
            |x| example1_nested(x.item()),
            |x| Matrix::scalar(example1_nested_grad(x.item())),
            &Matrix::scalar(u),
            0.0,
        )
        .unwrap();
        let expected = (1.0 - u.cos()).powi(2);
        assert!((r.value() - expected).abs() < 1e-15 && r.value() < 1e-3);
    }

    #[test]
    fn l_k_reduces_to_leading_terms() {
        let x = summarize(&[3.0, 1.0], DEFAULT_RANK_TOL);
        let w1 = Matrix::diag(&[2.0, 1.0]);
        let w2 = Matrix::identity(2);
        let pure = repr_l_k(&w1, &w2, &x, 2.0, 0.0, 0.3, 0.0).unwrap();
        assert!((pure - 9.0 * 5.0).abs() < 1e-12);
        let gap = repr_l_k(&w1, &w2, &x, 2.0, 0.5, 0.0, 0.0).unwrap();
        assert!((gap - (45.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn mu_k_on_identity_blocks() {
        let x = summarize(&[3.0, 0.5], DEFAULT_RANK_TOL);
        let mu = repr_mu_k(&Matrix::identity(2), &Matrix::identity(2), &x).unwrap();
        assert!((mu - 2.0 * 0.25).abs() < 1e-15);
        let singular = Matrix::diag(&[1.0, 0.0]);
        assert!(matches!(
            repr_mu_k(&singular, &Matrix::identity(2), &x),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn finite_differences_on_affine_and_quadratic() {
        let pts = [Matrix::column(&[1.0, -2.0, 0.5])];
        let c = Matrix::column(&[3.0, -1.0, 2.0]);
        let lin = finite_diff_check(|x| c.dot(x) + 4.0, |_| c.clone(), &pts, 1e-3).unwrap();
        assert!(lin <= 1e-10);
        let quad = finite_diff_check(|x| 0.5 * x.norm_sq(), |x| x.clone(), &pts, 1e-6).unwrap();
        assert!(quad <= 1e-8);
        assert!(finite_diff_check(|x| x.norm_sq(), |x| x.clone(), &pts, 0.0).is_err());
    }

    #[test]
    fn landscape_shapes_and_degenerate_axis() {
        let g = landscape_grid("c", |_, _| 3.0, (0.0, 1.0), (0.0, 2.0), (4, 5)).unwrap();
        assert_eq!((g.values.len(), g.values[0].len()), (4, 5));
        assert!(g.values.iter().flatten().all(|z| *z == Some(3.0)));
        let line = landscape_grid("c", |x, _| x, (-1.0, 1.0), (0.5, 0.5), (3, 7)).unwrap();
        assert_eq!(line.v.points, vec![0.5]);
        assert_eq!(line.to_csv().lines().count(), 4);
        assert!(landscape_grid("c", |_, _| 0.0, (0.0, 1.0), (0.0, 1.0), (1, 3)).is_err());
    }

    #[test]
    fn descriptor_probe_uses_problem_constants() {
        let p = example1();
        assert!(BiasProbe::from_descriptor(&p).is_ok());
    }
}
