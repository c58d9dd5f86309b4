//! `diagnose`: gradient checks, PL certificates and bias comparisons.

use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;

use pbgd::data::GaussianStream;
use pbgd::diagnostics::{
    exact_penalized_gradient, gradient_suite, hyperclean_constants, pl_ratio_from, pl_report,
    positive_mismatch, projector_off_diagonal, repr_min_penalized, repr_x_gamma_summary,
    solution_independence, BiasProbe, PlMode, ReprCertificateObserver,
};
use pbgd::numerics::min_norm_least_squares;
use pbgd::penalty::InnerInit;
use pbgd::problems::{
    example1_nested, example1_nested_grad, example2_lower_solution, sigmoid, sigmoid_prime,
    BilevelProblem, HypercleanProblem, ReprProblem,
};
use pbgd::solvers::{Algorithm, Annotations, Init, JacobiParams, Observer, StepView, TSchedule};
use pbgd::Matrix;

use crate::config::{render_resolved, Settings};
use crate::error::{CliError, CliResult};
use crate::setup::{
    anchor_at_init, build_problem, initial_point, repr_default_alpha, BuiltProblem, DataSpec,
    InitSpec, ProblemKind,
};

/// Relative rounding allowance of the Lemma-style descent inequality.
pub const DESCENT_REL_SLACK: f64 = 1e-9;
/// Absolute slack of PL-ratio comparisons.
pub const PL_SLACK: f64 = 1e-8;
pub const FD_TOL: f64 = 1e-5;
pub const STATIONARY_TOL: f64 = 1e-10;
pub const INDEPENDENCE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Reported quantity with no pass/fail meaning.
    Info,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
            Self::Info => "info",
        }
    }
}

/// One line of a diagnostic report.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub value: f64,
    pub threshold: Option<f64>,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self::flag(name, value <= threshold, value, Some(threshold), detail)
    }

    fn flag(
        name: &str,
        ok: bool,
        value: f64,
        threshold: Option<f64>,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            name: name.to_string(),
            status: if ok { Status::Pass } else { Status::Fail },
            value,
            threshold,
            detail: detail.into(),
        }
    }

    fn info(name: &str, value: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            status: Status::Info,
            value,
            threshold: None,
            detail: detail.into(),
        }
    }

    fn error(name: &str, err: impl std::fmt::Display) -> Self {
        Self::flag(name, false, f64::NAN, None, err.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnoseReport {
    pub problem: ProblemKind,
    pub checks: Vec<Check>,
}

pub const REPORT_HEADER: &str = "check,status,value,threshold,detail";

impl DiagnoseReport {
    pub fn failures(&self) -> Vec<&Check> {
        self.checks
            .iter()
            .filter(|c| c.status == Status::Fail)
            .collect()
    }

    /// Machine-readable CSV with one row per check.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{},{},{:e},{},{}\n",
                c.name,
                c.status.as_str(),
                c.value,
                c.threshold.map_or_else(String::new, |t| format!("{t:e}")),
                c.detail.replace([',', '\n'], ";")
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "[{}] {}: {:.6e}{}{}\n",
                c.status.as_str(),
                c.name,
                c.value,
                c.threshold
                    .map_or_else(String::new, |t| format!(" (threshold {t:e})")),
                if c.detail.is_empty() {
                    String::new()
                } else {
                    format!(" {}", c.detail)
                }
            ));
        }
        let fails = self.failures().len();
        out.push_str(&format!("{} checks, {fails} failed\n", self.checks.len()));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnoseConfig {
    pub problem: ProblemKind,
    pub gamma: f64,
    /// Point-cloud size for PL and independence samples.
    pub points: usize,
    /// Points used by the finite-difference suite.
    pub fd_points: usize,
    pub fd_step: f64,
    /// Outer iterations of the short trajectory behind certificates.
    pub k: usize,
    pub t: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub data: DataSpec,
    pub init: InitSpec,
    pub out: PathBuf,
}

impl DiagnoseConfig {
    pub fn from_settings(s: &Settings) -> CliResult<Self> {
        let problem: ProblemKind = s.str_or("problem", "example1").parse()?;
        let large = matches!(problem, ProblemKind::Repr | ProblemKind::Hyperclean);
        let gamma: f64 = s.parsed_or("gamma", if large { 10.0 } else { 1.0 })?;
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(CliError::Usage("gamma must be positive".into()));
        }
        // Repr objectives are quadratic in each block, so a wide step only
        // reduces rounding error.
        let fd_step = s.parsed_or(
            "fd_step",
            if problem == ProblemKind::Repr {
                1e-3
            } else {
                1e-6
            },
        )?;
        if !(fd_step > 0.0) {
            return Err(CliError::Usage("fd_step must be positive".into()));
        }
        let t = s.parsed_or("t", 10usize)?;
        if t == 0 {
            return Err(CliError::Usage("T must be >= 1".into()));
        }
        Ok(Self {
            problem,
            gamma,
            points: s.parsed_or("points", 20)?,
            fd_points: s.parsed_or("fd_points", if large { 1 } else { 20 })?,
            fd_step,
            k: s.parsed_or("k", 20)?,
            t,
            alpha: s.parsed("alpha")?,
            beta: s.parsed("beta")?,
            data: DataSpec::from_settings(s, problem)?,
            init: InitSpec::from_settings(s)?,
            out: PathBuf::from(s.str_or("out", "out")),
        })
    }

    pub fn resolved(&self) -> Vec<(String, String)> {
        let opt = |x: Option<f64>| x.map_or_else(|| "auto".to_string(), |v| format!("{v:?}"));
        let mut out = vec![
            ("problem".to_string(), self.problem.to_string()),
            ("gamma".to_string(), format!("{:?}", self.gamma)),
            ("points".to_string(), self.points.to_string()),
            ("fd_points".to_string(), self.fd_points.to_string()),
            ("fd_step".to_string(), format!("{:?}", self.fd_step)),
            ("K".to_string(), self.k.to_string()),
            ("T".to_string(), self.t.to_string()),
            ("alpha".to_string(), opt(self.alpha)),
            ("beta".to_string(), opt(self.beta)),
        ];
        out.extend(self.data.resolved(self.problem));
        out.extend(self.init.resolved());
        out.push(("out".to_string(), self.out.display().to_string()));
        out
    }
}

/// Forwards each step to two observers, keeping the first annotation found.
struct Both<'x, A, B>(&'x mut A, &'x mut B);

impl<A: Observer, B: Observer> Observer for Both<'_, A, B> {
    fn observe(&mut self, view: &StepView<'_>) -> Annotations {
        let a = self.0.observe(view);
        let b = self.1.observe(view);
        Annotations {
            mu_k: a.mu_k.or(b.mu_k),
            bias_bound: a.bias_bound.or(b.bias_bound),
        }
    }
}

fn uniform_matrix(rng: &mut GaussianStream, shape: (usize, usize), lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(shape.0, shape.1, |_, _| rng.uniform_in(lo, hi))
}

/// Seeded `(u, v)` cloud with coordinates uniform on `[lo, hi]`.
fn cloud(
    problem: &dyn BilevelProblem,
    n: usize,
    seed: u64,
    lo: f64,
    hi: f64,
) -> Vec<(Matrix, Matrix)> {
    let mut rng = GaussianStream::new(seed);
    (0..n)
        .map(|_| {
            let u = uniform_matrix(&mut rng, problem.u_shape(), lo, hi);
            let v = uniform_matrix(&mut rng, problem.v_shape(), lo, hi);
            (u, v)
        })
        .collect()
}

fn gradient_checks(
    cfg: &DiagnoseConfig,
    problem: &dyn BilevelProblem,
    points: &[(Matrix, Matrix)],
) -> Vec<Check> {
    match gradient_suite(problem, cfg.gamma, points, cfg.fd_step) {
        Ok(checks) => checks
            .into_iter()
            .map(|c| {
                Check::at_most(
                    &format!("fd_{}", c.name),
                    c.max_rel_err,
                    FD_TOL,
                    format!("{} points", points.len()),
                )
            })
            .collect(),
        Err(e) => vec![Check::error("fd_suite", e)],
    }
}

fn stack(u: &Matrix, v: &Matrix) -> Matrix {
    Matrix::column(&[u.as_slice(), v.as_slice()].concat())
}

fn split(z: &Matrix, problem: &dyn BilevelProblem) -> (Matrix, Matrix) {
    let (us, vs) = (problem.u_shape(), problem.v_shape());
    let n = us.0 * us.1;
    let u = Matrix::new(us.0, us.1, z.as_slice()[..n].to_vec()).expect("u block");
    let v = Matrix::new(vs.0, vs.1, z.as_slice()[n..].to_vec()).expect("v block");
    (u, v)
}

type PointFn<'a, T> = dyn Fn(&Matrix, &Matrix) -> T + 'a;

/// Joint PL report over stacked `(u, v)` points with optimum zero.
fn joint_pl(
    p: &dyn BilevelProblem,
    points: &[Matrix],
    value: &PointFn<'_, f64>,
    grad_u: &PointFn<'_, Matrix>,
    grad_v: &PointFn<'_, Matrix>,
) -> pbgd::Result<pbgd::diagnostics::PLReport> {
    pl_report(
        PlMode::Joint,
        |z| {
            let (u, v) = split(z, p);
            value(&u, &v)
        },
        |z| {
            let (u, v) = split(z, p);
            stack(&grad_u(&u, &v), &grad_v(&u, &v))
        },
        |_| 0.0,
        points,
    )
}

fn pl_check(name: &str, report: pbgd::Result<pbgd::diagnostics::PLReport>, floor: f64) -> Check {
    match report {
        Ok(r) => Check::flag(
            name,
            r.certified && r.measured_mu >= floor - PL_SLACK,
            r.measured_mu,
            Some(floor),
            format!("{} samples; {} optimal", r.sample_count, r.optimal_count),
        ),
        Err(e) => Check::error(name, e),
    }
}

fn bias_checks(name: &str, probe: &BiasProbe<'_>) -> Vec<Check> {
    let worst = probe
        .samples
        .iter()
        .map(|s| s.measured - s.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let violations = probe
        .samples
        .iter()
        .filter(|s| s.measured > s.bound * (1.0 + 1e-9) + 1e-12)
        .count();
    let mut out = vec![Check::flag(
        name,
        violations == 0 && !probe.samples.is_empty(),
        violations as f64,
        Some(0.0),
        format!(
            "{} samples; max measured - bound {worst:.3e}",
            probe.samples.len()
        ),
    )];
    if !probe.errors.is_empty() {
        out.push(Check::info(
            &format!("{name}_skipped"),
            probe.errors.len() as f64,
            probe.errors[0].1.clone(),
        ));
    }
    out
}

fn short_run(
    cfg: &DiagnoseConfig,
    problem: &dyn BilevelProblem,
    init: &Init,
    default_alpha: Option<f64>,
    observer: &mut dyn Observer,
) -> Result<(), String> {
    let s = problem.smoothness();
    let ell_f = s.ell_f.unwrap_or(1.0);
    let ell_g = s.ell_g.unwrap_or(1.0);
    let params = JacobiParams {
        alpha: cfg
            .alpha
            .or(default_alpha)
            .unwrap_or(1.0 / (ell_f + cfg.gamma * ell_g)),
        beta: cfg.beta.unwrap_or(1.0 / ell_g),
        gamma: cfg.gamma,
        k: cfg.k,
        t_schedule: TSchedule::Constant(cfg.t),
        inner_init: InnerInit::Cold,
    };
    Algorithm::Jacobi(params)
        .run(problem, init, observer)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

fn diagnose_example1(cfg: &DiagnoseConfig, p: &dyn BilevelProblem, init: &Init) -> Vec<Check> {
    let seed = cfg.data.seed;
    let mut checks = gradient_checks(cfg, p, &cloud(p, cfg.fd_points, seed, -3.0, 3.0));

    let u = 2.0 * PI + 0.01;
    match pl_ratio_from(example1_nested(u), example1_nested_grad(u).powi(2), 0.0) {
        Ok(r) => checks.push(Check::flag(
            "F_not_pl_near_2pi",
            r.value() < 1e-3,
            r.value(),
            Some(1e-3),
            "PL ratio of the nested objective at u = 2pi + 0.01",
        )),
        Err(e) => checks.push(Check::error("F_not_pl_near_2pi", e)),
    }
    let u = 2.0 * PI;
    checks.push(Check::flag(
        "F_stationary_at_2pi",
        example1_nested_grad(u).abs() <= STATIONARY_TOL && example1_nested(u) >= 19.0,
        example1_nested_grad(u).abs(),
        Some(STATIONARY_TOL),
        format!("F(2pi) = {:.6}", example1_nested(u)),
    ));

    let joint: Vec<Matrix> = cloud(p, cfg.points, seed + 1, -7.0, 7.0)
        .iter()
        .map(|(u, v)| stack(u, v))
        .collect();
    let f = |u: &Matrix, v: &Matrix| p.f(u, v);
    let fu = |u: &Matrix, v: &Matrix| p.grad_f_u(u, v);
    let fv = |u: &Matrix, v: &Matrix| p.grad_f_v(u, v);
    checks.push(pl_check(
        "f_joint_pl",
        joint_pl(p, &joint, &f, &fu, &fv),
        0.0,
    ));
    let gamma = cfg.gamma;
    let pen = |u: &Matrix, v: &Matrix| gamma * p.g(u, v);
    let pu = |u: &Matrix, v: &Matrix| p.grad_g_u(u, v).scale(gamma);
    let pv = |u: &Matrix, v: &Matrix| p.grad_g_v(u, v).scale(gamma);
    checks.push(pl_check(
        "penalty_joint_pl",
        joint_pl(p, &joint, &pen, &pu, &pv),
        0.0,
    ));
    let fixed_u = Matrix::scalar(1.0);
    let vs: Vec<Matrix> = cloud(p, cfg.points, seed + 2, -7.0, 7.0)
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    checks.push(pl_check(
        "g_blockwise_v_pl",
        pl_report(
            PlMode::BlockwiseV,
            |v| p.g(&fixed_u, v),
            |v| p.grad_g_v(&fixed_u, v),
            |_| 0.0,
            &vs,
        ),
        p.smoothness().mu_g.unwrap_or(0.0),
    ));

    let (us, vs) = (
        Matrix::scalar(2.0 * gamma * PI / (1.0 + gamma)),
        Matrix::scalar(2.0 * PI),
    );
    match exact_penalized_gradient(p, gamma, &us, &vs, &vs) {
        Ok((gu, gv)) => {
            let norm = (gu.norm_sq() + gv.norm_sq()).sqrt();
            let value = p.f(&us, &vs) + gamma * p.g(&us, &vs);
            checks.push(Check::flag(
                "L_gamma_nonoptimal_stationary",
                norm <= STATIONARY_TOL && value > 0.0,
                norm,
                Some(STATIONARY_TOL),
                format!("value {value:.6e} at (2 gamma pi / (1 + gamma), 2 pi)"),
            ));
        }
        Err(e) => checks.push(Check::error("L_gamma_nonoptimal_stationary", e)),
    }

    match BiasProbe::from_descriptor(p) {
        Ok(mut probe) => match short_run(cfg, p, init, None, &mut probe) {
            Ok(()) => checks.extend(bias_checks("bias_bound", &probe)),
            Err(e) => checks.push(Check::error("bias_bound", e)),
        },
        Err(e) => checks.push(Check::error("bias_bound", e)),
    }
    checks
}

fn diagnose_example2(cfg: &DiagnoseConfig, p: &dyn BilevelProblem) -> Vec<Check> {
    let mut checks = gradient_checks(cfg, p, &cloud(p, cfg.fd_points, cfg.data.seed, -2.0, 2.0));
    let anchors = [
        (-(0.25f64).cbrt(), 0.0),
        (-(std::f64::consts::E / 4.0).cbrt() - 1.0, 1.0),
    ];
    for (i, (u, v)) in anchors.into_iter().enumerate() {
        let name = format!("lower_solution_anchor_{i}");
        match example2_lower_solution(u) {
            Ok(found) => checks.push(Check::at_most(
                &name,
                (found - v).abs(),
                1e-8,
                format!("u = {u:.9}; expected v = {v}"),
            )),
            Err(e) => checks.push(Check::error(&name, e)),
        }
    }
    checks
}

fn diagnose_example3(cfg: &DiagnoseConfig, p: &dyn BilevelProblem) -> Vec<Check> {
    let mut checks = gradient_checks(cfg, p, &cloud(p, cfg.fd_points, cfg.data.seed, -3.0, 3.0));
    let gamma = cfg.gamma;
    let u = Matrix::scalar(-(4.0 + 8.0 * gamma) / (4.0 * gamma + 1.0));
    let v = Matrix::column(&[2.0, 0.0]);
    match exact_penalized_gradient(p, gamma, &u, &v, &v) {
        Ok((gu, _)) => {
            let value = p.f(&u, &v) + gamma * p.g(&u, &v);
            checks.push(Check::at_most(
                "L_gamma_u_stationary",
                gu.norm(),
                STATIONARY_TOL,
                "u block at u = -(4 + 8 gamma)/(4 gamma + 1) and v = (2, 0)",
            ));
            let expected = (8.0 * gamma * gamma + 2.0) / (4.0 * gamma + 1.0).powi(2);
            checks.push(Check::info(
                "L_gamma_u_stationary_value",
                value,
                format!("(8 gamma^2 + 2)/(4 gamma + 1)^2 = {expected:.12}"),
            ));
        }
        Err(e) => checks.push(Check::error("L_gamma_u_stationary", e)),
    }
    let fixed_u = Matrix::scalar(0.7);
    let vs: Vec<Matrix> = cloud(p, cfg.points, cfg.data.seed + 1, -3.0, 3.0)
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    checks.push(pl_check(
        "g_blockwise_v_pl",
        pl_report(
            PlMode::BlockwiseV,
            |v| p.g(&fixed_u, v),
            |v| p.grad_g_v(&fixed_u, v),
            |_| 0.0,
            &vs,
        ),
        p.smoothness().mu_g.unwrap_or(0.0),
    ));
    checks
}

fn diagnose_repr(cfg: &DiagnoseConfig, p: &ReprProblem, init: &Init) -> Vec<Check> {
    let mut rng = GaussianStream::new(cfg.data.seed.wrapping_add(3));
    let fd: Vec<(Matrix, Matrix)> = (0..cfg.fd_points)
        .map(|_| (rng.perturb(&init.u0, 0.1), rng.perturb(&init.v0, 0.1)))
        .collect();
    let mut checks = gradient_checks(cfg, p, &fd);
    match repr_x_gamma_summary(p, cfg.gamma) {
        Ok(s) => checks.push(Check::info(
            "x_gamma_sigma_star",
            s.sigma_star.unwrap_or(0.0),
            format!("sigma_max {:.6e}; rank {}", s.sigma_max, s.rank),
        )),
        Err(e) => checks.push(Check::error("x_gamma_sigma_star", e)),
    }
    if let Ok(m) = repr_min_penalized(p, cfg.gamma) {
        checks.push(Check::info("min_penalized_value", m, ""));
    }
    let mut cert = match ReprCertificateObserver::new(p, cfg.gamma) {
        Ok(c) => c,
        Err(e) => {
            checks.push(Check::error("certificate", e));
            return checks;
        }
    };
    let mut probe = BiasProbe::for_repr(p);
    let alpha = repr_default_alpha(p, cfg.gamma, init).ok();
    if let Err(e) = short_run(cfg, p, init, alpha, &mut Both(&mut cert, &mut probe)) {
        checks.push(Check::error("short_trajectory", e));
    }
    let certified = cert.rows.iter().filter(|r| r.mu_k.is_some()).count();
    let pl = cert.pl_violations(PL_SLACK);
    checks.push(Check::flag(
        "certificate_pl_ratio",
        pl.is_empty() && certified > 0,
        pl.len() as f64,
        Some(0.0),
        format!(
            "{certified} of {} iterates with full-rank factors",
            cert.rows.len()
        ),
    ));
    let descent = cert.descent_violations(DESCENT_REL_SLACK);
    checks.push(Check::flag(
        "certificate_descent",
        descent.is_empty() && cert.rows.len() > 1,
        descent.len() as f64,
        Some(0.0),
        format!("{} steps", cert.rows.len().saturating_sub(1)),
    ));
    if let (Some(r), true) = (cert.rows.iter().find(|r| r.mu_k.is_some()), certified > 0) {
        checks.push(Check::info(
            "certificate_first_margin",
            r.pl_ratio.value() - r.mu_k.unwrap_or(0.0),
            format!("mu_k {:.6e} at k = {}", r.mu_k.unwrap_or(0.0), r.k),
        ));
    }
    if !cert.errors.is_empty() {
        checks.push(Check::info(
            "certificate_skipped",
            cert.errors.len() as f64,
            cert.errors[0].1.clone(),
        ));
    }
    checks.extend(bias_checks("bias_bound", &probe));
    checks
}

fn in_box(rng: &mut GaussianStream, n: usize, u_bar: f64) -> Matrix {
    Matrix::from_fn(n, 1, |_, _| rng.uniform_in(-u_bar, u_bar))
}

fn diagnose_hyperclean(cfg: &DiagnoseConfig, p: &HypercleanProblem) -> Vec<Check> {
    let u_bar = p.u_bar;
    let (n_rows, _) = p.u_shape();
    let mut rng = GaussianStream::new(cfg.data.seed.wrapping_add(3));
    let w_min = p.min_norm_solution();
    let fd: Vec<(Matrix, Matrix)> = (0..cfg.fd_points)
        .map(|_| (in_box(&mut rng, n_rows, u_bar), rng.perturb(&w_min, 0.01)))
        .collect();
    let mut checks = gradient_checks(cfg, p, &fd);

    let off = projector_off_diagonal(p);
    checks.push(Check::at_most(
        "projector_diagonal",
        off,
        1e-8,
        "max off-diagonal of X_trn X_trn^+",
    ));
    let us: Vec<Matrix> = (0..cfg.points)
        .map(|_| in_box(&mut rng, n_rows, u_bar))
        .collect();
    checks.push(Check::at_most(
        "solution_independence",
        solution_independence(p, &us),
        INDEPENDENCE_TOL,
        format!("max grad norm at X_trn^+ Y_trn over {} weights", us.len()),
    ));

    let psi_bar = sigmoid(u_bar);
    let floor = psi_bar * (1.0 - psi_bar).powi(2);
    let mut worst_pl = f64::INFINITY;
    let mut worst_smooth = 0.0f64;
    for i in 0..1000 {
        let t = -u_bar + 2.0 * u_bar * (i as f64 + rng.uniform()) / 1000.0;
        worst_pl = worst_pl.min(sigmoid_prime(t).powi(2) - floor * sigmoid(t));
        let s = sigmoid(t);
        worst_smooth = worst_smooth.max((s * (1.0 - s) * (1.0 - 2.0 * s)).abs());
    }
    checks.push(Check::flag(
        "sigmoid_pl_inequality",
        worst_pl >= 0.0,
        worst_pl,
        Some(0.0),
        "min of psi'(t)^2 - psi(u_bar)(1 - psi(u_bar))^2 psi(t) over 1000 t",
    ));
    checks.push(Check::at_most(
        "sigmoid_smoothness",
        worst_smooth,
        1.0,
        "max |psi''| on the box",
    ));

    let gamma = cfg.gamma;
    let consts = match hyperclean_constants(&p.data, gamma, u_bar) {
        Ok(c) => c,
        Err(e) => {
            checks.push(Check::error("constants", e));
            return checks;
        }
    };
    checks.push(Check::info("mu_w_gamma", consts.mu_w_gamma, ""));
    checks.push(Check::info("l_w_gamma", consts.l_w_gamma, ""));
    checks.push(Check::info("mu_w", consts.mu_w, ""));
    checks.push(Check::info("l_w", consts.l_w, ""));

    // PL of l_gamma(u, .) over W against mu_w_gamma.
    let d = &p.data;
    let mut worst_w = f64::INFINITY;
    let mut w_err = None;
    for _ in 0..cfg.points {
        let u = in_box(&mut rng, n_rows, u_bar);
        let w = rng.perturb(&w_min, 1.0);
        let sq: Vec<f64> = HypercleanProblem::weights(&u)
            .iter()
            .map(|x| (gamma * x).sqrt())
            .collect();
        let a = d.x_val.vstack(&d.x_trn.scale_rows(&sq));
        let b = d.y_val.vstack(&d.y_trn.scale_rows(&sq));
        let g_star = p.value_function(&u).unwrap_or(0.0);
        let opt = match min_norm_least_squares(&a, &b) {
            Ok(z) => 0.5 * b.sub(&a.matmul(&z)).norm_sq() - gamma * g_star,
            Err(e) => {
                w_err = Some(e.to_string());
                break;
            }
        };
        let value = p.f(&u, &w) + gamma * (p.g(&u, &w) - g_star);
        let grad = p.grad_f_v(&u, &w).add_scaled(gamma, &p.grad_g_v(&u, &w));
        match pl_ratio_from(value, grad.norm_sq(), opt) {
            Ok(r) => worst_w = worst_w.min(r.value() / consts.mu_w_gamma),
            Err(e) => {
                w_err = Some(e.to_string());
                break;
            }
        }
    }
    checks.push(match w_err {
        Some(e) => Check::error("l_gamma_w_pl", e),
        None => Check::flag(
            "l_gamma_w_pl",
            worst_w >= 1.0 - PL_SLACK,
            worst_w,
            Some(1.0),
            "min ratio / mu_w_gamma over sampled (u, W)",
        ),
    });

    // Blockwise PL over u against gamma c(W) psi(u_bar)(1 - psi(u_bar))^2 / 4.
    let mut worst_u = f64::INFINITY;
    let mut excluded = 0usize;
    for _ in 0..cfg.points {
        let u = in_box(&mut rng, n_rows, u_bar);
        let w = rng.perturb(&w_min, 0.1);
        let terms = pbgd::diagnostics::mismatch_terms(&w, p);
        let Some(c) = positive_mismatch(&w, p) else {
            excluded += 1;
            continue;
        };
        if terms.iter().any(|&m| m < -1e-10) {
            excluded += 1;
            continue;
        }
        let g_star = p.value_function(&u).unwrap_or(0.0);
        let value = p.f(&u, &w) + gamma * (p.g(&u, &w) - g_star);
        let w_star = p.lower_solution(&u, &w).unwrap_or_else(|| w.clone());
        let grad = p
            .grad_g_u(&u, &w)
            .sub(&p.grad_g_u(&u, &w_star))
            .scale(gamma);
        match pl_ratio_from(value, grad.norm_sq(), p.f(&u, &w)) {
            Ok(r) => worst_u = worst_u.min(r.value() / consts.mu_u_block(c)),
            Err(e) => {
                checks.push(Check::error("l_gamma_u_pl", e));
                return checks;
            }
        }
    }
    checks.push(Check::flag(
        "l_gamma_u_pl",
        worst_u >= 1.0 - PL_SLACK,
        worst_u,
        Some(1.0),
        format!("min ratio / (gamma c(W) psi(1 - psi)^2 / 4); {excluded} samples excluded"),
    ));
    checks
}

/// Runs every diagnostic for the configured problem.
pub fn run_diagnostics(cfg: &DiagnoseConfig) -> CliResult<DiagnoseReport> {
    let built = build_problem(cfg.problem, &cfg.data)?;
    let init = initial_point(&built, &cfg.init, cfg.data.seed)?;
    let built = anchor_at_init(built, &init)?;
    let checks = match &built {
        BuiltProblem::Example1(p) => diagnose_example1(cfg, p, &init),
        BuiltProblem::Example2(p) => diagnose_example2(cfg, p),
        BuiltProblem::Example3(p) => diagnose_example3(cfg, p),
        BuiltProblem::Repr(p) => diagnose_repr(cfg, p, &init),
        BuiltProblem::Hyperclean(p) => diagnose_hyperclean(cfg, p),
    };
    Ok(DiagnoseReport {
        problem: cfg.problem,
        checks,
    })
}

/// Writes `diagnose_{problem}.csv` and returns the stdout text with the
/// names of failed checks.
pub fn cmd_diagnose(cfg: &DiagnoseConfig) -> CliResult<(String, Vec<String>)> {
    let report = run_diagnostics(cfg)?;
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out.display())))?;
    let path = cfg
        .out
        .join(format!("diagnose_{}.csv", cfg.problem.as_str()));
    fs::write(&path, report.to_csv())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    let mut text = render_resolved("diagnose", &cfg.resolved());
    text.push_str(&report.summary());
    text.push_str(&format!("wrote {}\n", path.display()));
    let failed = report.failures().iter().map(|c| c.name.clone()).collect();
    Ok((text, failed))
}
