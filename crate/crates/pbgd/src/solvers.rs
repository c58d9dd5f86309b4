//! PBGD outer loops in Jacobi and Gauss-Seidel fashion, parameter schedules
//! and a pilot-run stepsize search.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::penalty::{
    grad_penalized_u, grad_penalized_v, inner_solve, InnerInit, InnerSolveResult, PenaltyContext,
};
use crate::problems::{BilevelProblem, SmoothnessDescriptor};

/// Inner-loop length per outer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TSchedule {
    Constant(usize),
    /// `T = ⌈c_T · ln(γ²/ε)⌉`, the same at every outer iteration.
    Theorem {
        c_t: f64,
        epsilon: f64,
    },
    /// `T_k = base + ⌈c · ln(k + 1)⌉`.
    LogGrowth {
        base: usize,
        c: f64,
    },
}

impl TSchedule {
    pub fn steps(&self, k: usize, gamma: f64) -> usize {
        match *self {
            Self::Constant(t) => t,
            Self::Theorem { c_t, epsilon } => theorem_inner_steps(c_t, gamma, epsilon),
            Self::LogGrowth { base, c } => {
                base + (c * ((k + 1) as f64).ln()).ceil().max(0.0) as usize
            }
        }
        .max(1)
    }
}

fn theorem_inner_steps(c_t: f64, gamma: f64, epsilon: f64) -> usize {
    (c_t * (gamma * gamma / epsilon).ln()).ceil().max(1.0) as usize
}

/// Parameters of the Jacobi variant: `u` and `v` move together from the
/// same snapshot with stepsize `α`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobiParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Outer iterations `K`.
    pub k: usize,
    pub t_schedule: TSchedule,
    pub inner_init: InnerInit,
}

/// Parameters of the Gauss-Seidel variant: `T` steps for `w`, `T` steps for
/// `v` with stepsize `β̃`, then one projected `u` step with stepsize `α`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussSeidelParams {
    pub alpha: f64,
    pub beta: f64,
    pub beta_tilde: f64,
    pub gamma: f64,
    pub k: usize,
    pub t: usize,
    pub inner_init: InnerInit,
    /// Start of each `v` loop: the fixed `v⁰` (cold) or the previous `v`.
    pub v_init: InnerInit,
}

/// Starting point `(u⁰, v⁰, w⁰)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Init {
    pub u0: Matrix,
    pub v0: Matrix,
    pub w0: Matrix,
}

/// Metrics logged at one outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    /// `|f(u, v) − f_ref|`; NaN when the problem has no reference value.
    pub upper_rel_err: f64,
    /// `g(u, v) − g*(u)`.
    pub lower_rel_err: f64,
    pub grad_norm_u: f64,
    pub grad_norm_v: f64,
    pub penalized_value: f64,
    pub mu_k: Option<f64>,
    pub bias_bound: Option<f64>,
    pub wall_millis: f64,
}

/// Ordered records of one solver run plus the settings that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<IterateRecord>,
    pub problem: String,
    pub algorithm: String,
    pub seed: Option<u64>,
    /// Parameter snapshot as `(key, value)` pairs.
    pub params: Vec<(String, String)>,
    /// `true` when `penalized_value` used an inner-solve estimate of `g*`.
    pub penalized_value_biased: bool,
    pub notes: Vec<String>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&IterateRecord> {
        self.records.last()
    }
}

/// Solver failure carrying the records logged before it.
#[derive(Debug)]
pub struct RunError {
    pub error: Error,
    pub partial: Trajectory,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} records)",
            self.error,
            self.partial.records.len()
        )
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// State handed to an [`Observer`] once per outer iteration, before the
/// outer update is applied.
pub struct StepView<'a> {
    pub k: usize,
    pub u: &'a Matrix,
    pub v: &'a Matrix,
    /// Inner iterate used for the `u` direction.
    pub w: &'a Matrix,
    /// Start of the inner run that produced `w`.
    pub w_start: &'a Matrix,
    pub d_u: &'a Matrix,
    pub d_v: &'a Matrix,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub inner_steps: usize,
    pub penalized_value: f64,
}

/// Optional per-iteration diagnostics written into the record.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Annotations {
    pub mu_k: Option<f64>,
    pub bias_bound: Option<f64>,
}

pub trait Observer {
    fn observe(&mut self, view: &StepView<'_>) -> Annotations;
}

/// Observer that records nothing extra.
pub struct NoObserver;

impl Observer for NoObserver {
    fn observe(&mut self, _view: &StepView<'_>) -> Annotations {
        Annotations::default()
    }
}

struct Metrics {
    upper: f64,
    lower: f64,
    penalized: f64,
    biased: bool,
}

fn metrics(
    problem: &dyn BilevelProblem,
    gamma: f64,
    u: &Matrix,
    v: &Matrix,
    inner: &InnerSolveResult,
) -> Metrics {
    let f = problem.f(u, v);
    let g = problem.g(u, v);
    let (g_star, biased) = match inner.g_gap_estimate {
        Some(gap) => (inner.final_g - gap, false),
        None => (inner.final_g, true),
    };
    let upper = problem
        .upper_reference()
        .map_or(f64::NAN, |r| (f - r).abs());
    Metrics {
        upper,
        lower: g - g_star,
        penalized: f + gamma * (g - g_star),
        biased,
    }
}

fn check_shapes(problem: &dyn BilevelProblem, init: &Init) -> Result<()> {
    if init.u0.shape() != problem.u_shape()
        || init.v0.shape() != problem.v_shape()
        || init.w0.shape() != problem.v_shape()
    {
        return Err(Error::Shape(format!(
            "initialization shapes {:?}/{:?}/{:?} do not match problem u {:?}, v {:?}",
            init.u0.shape(),
            init.v0.shape(),
            init.w0.shape(),
            problem.u_shape(),
            problem.v_shape()
        )));
    }
    Ok(())
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be > 0, got {x}")))
    }
}

fn empty_trajectory(
    problem: &dyn BilevelProblem,
    algorithm: &str,
    params: Vec<(String, String)>,
) -> Trajectory {
    Trajectory {
        records: Vec::new(),
        problem: problem.name().to_string(),
        algorithm: algorithm.to_string(),
        seed: None,
        params,
        penalized_value_biased: false,
        notes: Vec::new(),
    }
}

fn init_name(i: InnerInit) -> &'static str {
    match i {
        InnerInit::Cold => "cold",
        InnerInit::Warm => "warm",
    }
}

impl JacobiParams {
    fn snapshot(&self) -> Vec<(String, String)> {
        vec![
            ("alpha".into(), format!("{:?}", self.alpha)),
            ("beta".into(), format!("{:?}", self.beta)),
            ("gamma".into(), format!("{:?}", self.gamma)),
            ("K".into(), self.k.to_string()),
            ("T".into(), format!("{:?}", self.t_schedule)),
            ("inner_init".into(), init_name(self.inner_init).into()),
        ]
    }
}

impl GaussSeidelParams {
    fn snapshot(&self) -> Vec<(String, String)> {
        vec![
            ("alpha".into(), format!("{:?}", self.alpha)),
            ("beta".into(), format!("{:?}", self.beta)),
            ("beta_tilde".into(), format!("{:?}", self.beta_tilde)),
            ("gamma".into(), format!("{:?}", self.gamma)),
            ("K".into(), self.k.to_string()),
            ("T".into(), self.t.to_string()),
            ("inner_init".into(), init_name(self.inner_init).into()),
            ("v_init".into(), init_name(self.v_init).into()),
        ]
    }
}

pub fn pbgd_jacobi(
    problem: &dyn BilevelProblem,
    params: &JacobiParams,
    init: &Init,
) -> std::result::Result<Trajectory, RunError> {
    pbgd_jacobi_observed(problem, params, init, &mut NoObserver)
}

/// Jacobi PBGD. Per outer iteration: `T_k` inner steps for `w` from `w⁰`
/// (or the previous `w` under warm start), then
/// `u ← u − α(∇_u f + γ(∇_u g(u, v) − ∇_u g(u, w)))` and
/// `v ← v − α(∇_v f + γ∇_v g)`, both evaluated at the same `(u, v)`.
/// When the problem defines a projection it is applied to `u` after the step.
pub fn pbgd_jacobi_observed(
    problem: &dyn BilevelProblem,
    params: &JacobiParams,
    init: &Init,
    observer: &mut dyn Observer,
) -> std::result::Result<Trajectory, RunError> {
    let mut traj = empty_trajectory(problem, "jacobi", params.snapshot());
    let fail = |error: Error, traj: Trajectory| RunError {
        error,
        partial: traj,
    };
    let validated = check_shapes(problem, init)
        .and_then(|_| positive("alpha", params.alpha))
        .and_then(|_| positive("beta", params.beta));
    if let Err(e) = validated {
        return Err(fail(e, traj));
    }
    let start = Instant::now();
    let mut u = init.u0.clone();
    let mut v = init.v0.clone();
    let mut w_prev = init.w0.clone();
    for k in 0..=params.k {
        let steps = params.t_schedule.steps(k, params.gamma);
        let ctx = match PenaltyContext::new(problem, params.gamma, params.beta, steps) {
            Ok(c) => c,
            Err(e) => return Err(fail(e, traj)),
        };
        let w_start = match params.inner_init {
            InnerInit::Cold => init.w0.clone(),
            InnerInit::Warm => w_prev.clone(),
        };
        let inner = match inner_solve(&ctx, &u, &w_start) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, traj)),
        };
        let d_u = grad_penalized_u(&ctx, &u, &v, &inner.w);
        let d_v = grad_penalized_v(&ctx, &u, &v);
        let m = metrics(problem, params.gamma, &u, &v, &inner);
        traj.penalized_value_biased |= m.biased;
        let ann = observer.observe(&StepView {
            k,
            u: &u,
            v: &v,
            w: &inner.w,
            w_start: &w_start,
            d_u: &d_u,
            d_v: &d_v,
            alpha: params.alpha,
            beta: params.beta,
            gamma: params.gamma,
            inner_steps: steps,
            penalized_value: m.penalized,
        });
        traj.records.push(IterateRecord {
            k,
            upper_rel_err: m.upper,
            lower_rel_err: m.lower,
            grad_norm_u: d_u.norm(),
            grad_norm_v: d_v.norm(),
            penalized_value: m.penalized,
            mu_k: ann.mu_k,
            bias_bound: ann.bias_bound,
            wall_millis: start.elapsed().as_secs_f64() * 1e3,
        });
        if k == params.k {
            break;
        }
        let mut u_next = u.add_scaled(-params.alpha, &d_u);
        if let Some(p) = problem.project_u(&u_next) {
            u_next = p;
        }
        let v_next = v.add_scaled(-params.alpha, &d_v);
        if !u_next.is_finite() || !v_next.is_finite() {
            return Err(fail(
                Error::NonFinite(format!("iterate became non-finite at outer step {}", k + 1)),
                traj,
            ));
        }
        u = u_next;
        v = v_next;
        w_prev = inner.w;
    }
    Ok(traj)
}

pub fn pbgd_gauss_seidel(
    problem: &dyn BilevelProblem,
    params: &GaussSeidelParams,
    init: &Init,
) -> std::result::Result<Trajectory, RunError> {
    pbgd_gauss_seidel_observed(problem, params, init, &mut NoObserver)
}

/// `T` steps of `v ← v − β̃(∇_v f + γ∇_v g)` at fixed `u`.
fn v_loop(
    problem: &dyn BilevelProblem,
    u: &Matrix,
    v_start: &Matrix,
    gamma: f64,
    beta_tilde: f64,
    steps: usize,
) -> Result<Matrix> {
    let slice = problem.slice_v(u);
    let objective = |v: &Matrix| {
        let (f, gf) = slice.f_and_grad(v);
        let (g, gg) = slice.g_and_grad(v);
        (f + gamma * g, gf.add_scaled(gamma, &gg))
    };
    let (h0, mut grad) = objective(v_start);
    let limit = if h0 > 0.0 {
        10.0 * h0
    } else {
        h0 + 10.0 * h0.abs().max(1.0)
    };
    let mut v = v_start.clone();
    for step in 1..=steps {
        v = v.add_scaled(-beta_tilde, &grad);
        let (h, gr) = objective(&v);
        if !h.is_finite() || h > limit {
            return Err(Error::Divergence(format!(
                "v-loop objective grew from {h0:.6e} to {h:.6e} after {step} steps \
                 (beta_tilde = {beta_tilde})"
            )));
        }
        grad = gr;
    }
    Ok(v)
}

/// Gauss-Seidel PBGD. Record `k` is taken at `(u^k, v^{k+1})`, where
/// `v^{k+1}` is the output of the `v` loop run at `u^k`; the final record
/// therefore evaluates `(u^K, v^{K+1})`. After each record (except the
/// last) `u ← Proj(u − α(∇_u f + γ(∇_u g(u, v^{k+1}) − ∇_u g(u, w^{k+1}))))`.
pub fn pbgd_gauss_seidel_observed(
    problem: &dyn BilevelProblem,
    params: &GaussSeidelParams,
    init: &Init,
    observer: &mut dyn Observer,
) -> std::result::Result<Trajectory, RunError> {
    let mut traj = empty_trajectory(problem, "gauss_seidel", params.snapshot());
    traj.notes
        .push("record k evaluates (u^k, v^(k+1)); v^(k+1) is the v-loop output at u^k".into());
    let fail = |error: Error, traj: Trajectory| RunError {
        error,
        partial: traj,
    };
    let validated = check_shapes(problem, init)
        .and_then(|_| positive("alpha", params.alpha))
        .and_then(|_| positive("beta", params.beta))
        .and_then(|_| positive("beta_tilde", params.beta_tilde))
        .and_then(|_| {
            PenaltyContext::new(problem, params.gamma, params.beta, params.t).map(|_| ())
        });
    if let Err(e) = validated {
        return Err(fail(e, traj));
    }
    let ctx =
        PenaltyContext::new(problem, params.gamma, params.beta, params.t).expect("validated above");
    let start = Instant::now();
    let mut u = init.u0.clone();
    if let Some(p) = problem.project_u(&u) {
        u = p;
    }
    let mut w_prev = init.w0.clone();
    let mut v_prev = init.v0.clone();
    for k in 0..=params.k {
        let w_start = match params.inner_init {
            InnerInit::Cold => init.w0.clone(),
            InnerInit::Warm => w_prev.clone(),
        };
        let inner = match inner_solve(&ctx, &u, &w_start) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, traj)),
        };
        let v_start = match params.v_init {
            InnerInit::Cold => &init.v0,
            InnerInit::Warm => &v_prev,
        };
        let v = match v_loop(
            problem,
            &u,
            v_start,
            params.gamma,
            params.beta_tilde,
            params.t,
        ) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, traj)),
        };
        let d_u = grad_penalized_u(&ctx, &u, &v, &inner.w);
        let d_v = grad_penalized_v(&ctx, &u, &v);
        let m = metrics(problem, params.gamma, &u, &v, &inner);
        traj.penalized_value_biased |= m.biased;
        let ann = observer.observe(&StepView {
            k,
            u: &u,
            v: &v,
            w: &inner.w,
            w_start: &w_start,
            d_u: &d_u,
            d_v: &d_v,
            alpha: params.alpha,
            beta: params.beta,
            gamma: params.gamma,
            inner_steps: params.t,
            penalized_value: m.penalized,
        });
        traj.records.push(IterateRecord {
            k,
            upper_rel_err: m.upper,
            lower_rel_err: m.lower,
            grad_norm_u: d_u.norm(),
            grad_norm_v: d_v.norm(),
            penalized_value: m.penalized,
            mu_k: ann.mu_k,
            bias_bound: ann.bias_bound,
            wall_millis: start.elapsed().as_secs_f64() * 1e3,
        });
        if k == params.k {
            break;
        }
        let mut u_next = u.add_scaled(-params.alpha, &d_u);
        if let Some(p) = problem.project_u(&u_next) {
            u_next = p;
        }
        if !u_next.is_finite() || !v.is_finite() {
            return Err(fail(
                Error::NonFinite(format!("iterate became non-finite at outer step {}", k + 1)),
                traj,
            ));
        }
        u = u_next;
        v_prev = v;
        w_prev = inner.w;
    }
    Ok(traj)
}

/// Either algorithm with its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Algorithm {
    Jacobi(JacobiParams),
    GaussSeidel(GaussSeidelParams),
}

impl Algorithm {
    pub fn alpha(&self) -> f64 {
        match self {
            Self::Jacobi(p) => p.alpha,
            Self::GaussSeidel(p) => p.alpha,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            Self::Jacobi(p) => p.gamma,
            Self::GaussSeidel(p) => p.gamma,
        }
    }

    pub fn outer_iterations(&self) -> usize {
        match self {
            Self::Jacobi(p) => p.k,
            Self::GaussSeidel(p) => p.k,
        }
    }

    pub fn with_outer_iterations(mut self, k: usize) -> Self {
        match &mut self {
            Self::Jacobi(p) => p.k = k,
            Self::GaussSeidel(p) => p.k = k,
        }
        self
    }

    pub fn run(
        &self,
        problem: &dyn BilevelProblem,
        init: &Init,
        observer: &mut dyn Observer,
    ) -> std::result::Result<Trajectory, RunError> {
        match self {
            Self::Jacobi(p) => pbgd_jacobi_observed(problem, p, init, observer),
            Self::GaussSeidel(p) => pbgd_gauss_seidel_observed(problem, p, init, observer),
        }
    }
}

/// Jacobi candidates over the product of `alphas` and `betas`.
pub fn jacobi_grid(base: &JacobiParams, alphas: &[f64], betas: &[f64]) -> Vec<Algorithm> {
    let mut out = Vec::new();
    for &alpha in alphas {
        for &beta in betas {
            out.push(Algorithm::Jacobi(JacobiParams {
                alpha,
                beta,
                ..*base
            }));
        }
    }
    out
}

/// Gauss-Seidel candidates; each entry of `betas` is a `(β, β̃)` pair.
pub fn gauss_seidel_grid(
    base: &GaussSeidelParams,
    alphas: &[f64],
    betas: &[(f64, f64)],
) -> Vec<Algorithm> {
    let mut out = Vec::new();
    for &alpha in alphas {
        for &(beta, beta_tilde) in betas {
            out.push(Algorithm::GaussSeidel(GaussSeidelParams {
                alpha,
                beta,
                beta_tilde,
                ..*base
            }));
        }
    }
    out
}

/// Outcome of one pilot run.
#[derive(Clone, Debug)]
pub struct PilotOutcome {
    pub params: Algorithm,
    /// Final penalized value, or the failure message.
    pub result: std::result::Result<f64, String>,
}

/// Best candidate plus every pilot outcome in candidate order.
#[derive(Clone, Debug)]
pub struct GridSearchResult {
    pub best: Algorithm,
    pub pilots: Vec<PilotOutcome>,
}

/// Runs each candidate for `budget` outer iterations (in parallel) and
/// returns the one with the lowest final penalized value, with the original
/// `K` restored. Ties go to the smaller `α`, then to the earlier candidate.
pub fn grid_search_stepsizes(
    problem: &dyn BilevelProblem,
    candidates: &[Algorithm],
    budget: usize,
    init: &Init,
) -> Result<GridSearchResult> {
    if candidates.is_empty() {
        return Err(Error::Parameter(
            "grid search needs at least one candidate".into(),
        ));
    }
    let pilots: Vec<PilotOutcome> = candidates
        .par_iter()
        .map(|c| {
            let pilot = c.with_outer_iterations(budget);
            let result = match pilot.run(problem, init, &mut NoObserver) {
                Ok(t) => {
                    let last = t.last().map_or(f64::NAN, |r| r.penalized_value);
                    if last.is_finite() {
                        Ok(last)
                    } else {
                        Err("non-finite final penalized value".to_string())
                    }
                }
                Err(e) => Err(e.to_string()),
            };
            PilotOutcome { params: *c, result }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in pilots.iter().enumerate() {
        let Ok(score) = p.result else { continue };
        let better = match best {
            None => true,
            Some((j, s)) => {
                score < s || (score == s && p.params.alpha() < pilots[j].params.alpha())
            }
        };
        if better {
            best = Some((i, score));
        }
    }
    match best {
        Some((i, _)) => Ok(GridSearchResult {
            best: candidates[i],
            pilots,
        }),
        None => {
            let report: Vec<String> = pilots
                .iter()
                .map(|p| {
                    format!(
                        "alpha={:e}: {}",
                        p.params.alpha(),
                        p.result.as_ref().err().cloned().unwrap_or_default()
                    )
                })
                .collect();
            Err(Error::Divergence(format!(
                "every grid candidate failed: {}",
                report.join("; ")
            )))
        }
    }
}

/// Parameters prescribed by the convergence theory for target accuracy `ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Inner steps `T_k` (constant in `k`).
    pub t_k: usize,
    /// Smoothness of the value function, `L_g = ℓ_g(1 + ℓ_g/(2μ_g))`.
    pub l_g: f64,
}

/// `γ = c_γ ε^{-1/2}`, `β = 1/ℓ_g`, `α = 1/(ℓ_f + γ(ℓ_g + L_g))` and
/// `T_k = ⌈c_T ln(γ²/ε)⌉`.
pub fn schedule_from_epsilon(
    epsilon: f64,
    constants: &SmoothnessDescriptor,
    c_gamma: f64,
    c_t: f64,
) -> Result<Schedule> {
    positive("epsilon", epsilon)?;
    positive("c_gamma", c_gamma)?;
    positive("c_t", c_t)?;
    let missing = |n: &str| Error::Parameter(format!("smoothness constant {n} is missing"));
    let ell_f = constants.ell_f.ok_or_else(|| missing("ell_f"))?;
    let ell_g = constants.ell_g.ok_or_else(|| missing("ell_g"))?;
    let mu_g = constants.mu_g.ok_or_else(|| missing("mu_g"))?;
    let gamma = c_gamma / epsilon.sqrt();
    let l_g = ell_g * (1.0 + ell_g / (2.0 * mu_g));
    Ok(Schedule {
        gamma,
        alpha: 1.0 / (ell_f + gamma * (ell_g + l_g)),
        beta: 1.0 / ell_g,
        t_k: theorem_inner_steps(c_t, gamma, epsilon),
        l_g,
    })
}
