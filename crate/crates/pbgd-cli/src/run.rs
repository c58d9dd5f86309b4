//! `run`: γ-sweeps of the PBGD solvers with one trajectory CSV per γ.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use pbgd::data::trajectory_to_csv;
use pbgd::diagnostics::{BiasProbe, ReprCertificateObserver};
use pbgd::penalty::InnerInit;
use pbgd::solvers::{
    gauss_seidel_grid, grid_search_stepsizes, jacobi_grid, Algorithm, Annotations,
    GaussSeidelParams, Init, JacobiParams, NoObserver, Observer, PilotOutcome, StepView, TSchedule,
    Trajectory,
};

use crate::config::{render_resolved, Settings};
use crate::error::{CliError, CliResult};
use crate::setup::{
    anchor_at_init, build_problem, default_steps, initial_point, BuiltProblem, DataSpec, InitSpec,
    ProblemKind,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgorithmKind {
    Jacobi,
    GaussSeidel,
}

impl AlgorithmKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Jacobi => "jacobi",
            Self::GaussSeidel => "gauss_seidel",
        }
    }
}

impl FromStr for AlgorithmKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "jacobi" => Ok(Self::Jacobi),
            "gauss_seidel" | "gauss-seidel" => Ok(Self::GaussSeidel),
            other => Err(CliError::Usage(format!(
                "unknown algorithm `{other}` (expected jacobi or gauss_seidel)"
            ))),
        }
    }
}

/// Inner-loop length rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TRule {
    Constant,
    Theorem { epsilon: f64, c_t: f64 },
    Log { c: f64 },
}

/// Stepsize candidates; a single combination runs without a pilot search.
///
/// Each stepsize comes from an absolute list, from factors multiplying the
/// default of [`default_steps`], or from that default alone.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSpec {
    pub alpha: StepList,
    pub beta: StepList,
    pub beta_tilde: StepList,
    /// Divide absolute `α` and `β̃` values by `max(1, γ)`.
    pub scale_by_gamma: bool,
    /// Outer iterations per pilot run.
    pub grid_budget: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepList {
    Default,
    Absolute(Vec<f64>),
    Factors(Vec<f64>),
}

impl StepList {
    fn from_settings(s: &Settings, name: &str) -> CliResult<Self> {
        let absolute = list_or_single(s, &format!("{name}s"), name)?;
        let factors = s.list::<f64>(&format!("{name}_factors"))?;
        let list = match (absolute, factors) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage(format!(
                    "give either {name}s or {name}_factors, not both"
                )))
            }
            (Some(v), None) => Self::Absolute(v),
            (None, Some(v)) => Self::Factors(v),
            (None, None) => Self::Default,
        };
        if let Self::Absolute(v) | Self::Factors(v) = &list {
            if v.is_empty() || v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(CliError::Usage(format!(
                    "{name} values must be nonempty and positive"
                )));
            }
        }
        Ok(list)
    }

    fn values(&self, default: f64, scale: f64) -> Vec<f64> {
        match self {
            Self::Default => vec![default],
            Self::Absolute(v) => v.iter().map(|x| x / scale).collect(),
            Self::Factors(v) => v.iter().map(|x| x * default).collect(),
        }
    }

    fn describe(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|z| format!("{z:?}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            Self::Default => "default".to_string(),
            Self::Absolute(v) => join(v),
            Self::Factors(v) => format!("default x {}", join(v)),
        }
    }
}

/// Fully resolved `run` configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub algorithm: AlgorithmKind,
    pub gammas: Vec<f64>,
    pub steps: StepSpec,
    pub k: usize,
    pub t: usize,
    pub t_rule: TRule,
    pub inner_init: InnerInit,
    pub v_init: InnerInit,
    pub data: DataSpec,
    pub init: InitSpec,
    pub out: PathBuf,
    pub diagnostics: bool,
    pub timing: bool,
}

fn parse_init(s: &str, key: &str) -> CliResult<InnerInit> {
    match s {
        "cold" => Ok(InnerInit::Cold),
        "warm" => Ok(InnerInit::Warm),
        other => Err(CliError::Usage(format!(
            "`{key}` must be cold or warm, got `{other}`"
        ))),
    }
}

fn init_str(i: InnerInit) -> &'static str {
    match i {
        InnerInit::Cold => "cold",
        InnerInit::Warm => "warm",
    }
}

fn list_or_single(s: &Settings, list: &str, single: &str) -> CliResult<Option<Vec<f64>>> {
    match s.list::<f64>(list)? {
        Some(v) => Ok(Some(v)),
        None => Ok(s.parsed::<f64>(single)?.map(|x| vec![x])),
    }
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> CliResult<Self> {
        let problem: ProblemKind = s.str_or("problem", "example1").parse()?;
        let default_alg = if problem == ProblemKind::Hyperclean {
            "gauss_seidel"
        } else {
            "jacobi"
        };
        let algorithm: AlgorithmKind = s.str_or("algorithm", default_alg).parse()?;
        let gammas = s.list::<f64>("gammas")?.unwrap_or_else(|| vec![1.0]);
        if gammas.is_empty() {
            return Err(CliError::Usage("gammas must be nonempty".into()));
        }
        if gammas.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(CliError::Usage("every gamma must be positive".into()));
        }
        let k = s.parsed_or("k", 1000usize)?;
        let t = s.parsed_or("t", 10usize)?;
        if t == 0 {
            return Err(CliError::Usage("T must be >= 1".into()));
        }
        let t_rule = match s.str_or("t_rule", "constant") {
            "constant" => TRule::Constant,
            "theorem" => TRule::Theorem {
                epsilon: s.parsed_or("epsilon", 1e-4)?,
                c_t: s.parsed_or("c_t", 1.0)?,
            },
            "log" => TRule::Log {
                c: s.parsed_or("t_log_c", 1.0)?,
            },
            other => {
                return Err(CliError::Usage(format!(
                    "t_rule must be constant, theorem or log, got `{other}`"
                )))
            }
        };
        let steps = StepSpec {
            alpha: StepList::from_settings(s, "alpha")?,
            beta: StepList::from_settings(s, "beta")?,
            beta_tilde: StepList::from_settings(s, "beta_tilde")?,
            scale_by_gamma: match s.str_or("stepsize_scaling", "none") {
                "none" => false,
                "gamma" => true,
                other => {
                    return Err(CliError::Usage(format!(
                        "stepsize_scaling must be none or gamma, got `{other}`"
                    )))
                }
            },
            grid_budget: s.parsed_or("grid_budget", 200usize.min(k.max(1)))?,
        };
        Ok(Self {
            problem,
            algorithm,
            gammas,
            steps,
            k,
            t,
            t_rule,
            inner_init: parse_init(s.str_or("inner_init", "cold"), "inner_init")?,
            v_init: parse_init(s.str_or("v_init", "cold"), "v_init")?,
            data: DataSpec::from_settings(s, problem)?,
            init: InitSpec::from_settings(s)?,
            out: PathBuf::from(s.str_or("out", "out")),
            diagnostics: s.bool_or("diagnostics", false)?,
            timing: s.bool_or("timing", false)?,
        })
    }

    /// Every setting after defaults and overrides, in a fixed order.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("problem".to_string(), self.problem.to_string()),
            ("algorithm".to_string(), self.algorithm.as_str().to_string()),
            (
                "gammas".to_string(),
                self.gammas
                    .iter()
                    .map(|g| format!("{g:?}"))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("alpha".to_string(), self.steps.alpha.describe()),
            ("beta".to_string(), self.steps.beta.describe()),
            ("beta_tilde".to_string(), self.steps.beta_tilde.describe()),
            (
                "stepsize_scaling".to_string(),
                if self.steps.scale_by_gamma {
                    "gamma"
                } else {
                    "none"
                }
                .to_string(),
            ),
            (
                "grid_budget".to_string(),
                self.steps.grid_budget.to_string(),
            ),
            ("K".to_string(), self.k.to_string()),
            ("T".to_string(), self.t.to_string()),
            (
                "t_rule".to_string(),
                match self.t_rule {
                    TRule::Constant => "constant".to_string(),
                    TRule::Theorem { epsilon, c_t } => {
                        format!("theorem(epsilon={epsilon:?},c_t={c_t:?})")
                    }
                    TRule::Log { c } => format!("log(c={c:?})"),
                },
            ),
            (
                "inner_init".to_string(),
                init_str(self.inner_init).to_string(),
            ),
            ("v_init".to_string(), init_str(self.v_init).to_string()),
        ];
        out.extend(self.data.resolved(self.problem));
        out.extend(self.init.resolved());
        out.push(("out".to_string(), self.out.display().to_string()));
        out.push(("diagnostics".to_string(), self.diagnostics.to_string()));
        out.push(("timing".to_string(), self.timing.to_string()));
        out
    }

    fn schedule(&self) -> TSchedule {
        match self.t_rule {
            TRule::Constant => TSchedule::Constant(self.t),
            TRule::Theorem { epsilon, c_t } => TSchedule::Theorem { c_t, epsilon },
            TRule::Log { c } => TSchedule::LogGrowth { base: self.t, c },
        }
    }

    /// Candidate parameter sets for one γ.
    pub fn candidates(
        &self,
        problem: &BuiltProblem,
        gamma: f64,
        init: &Init,
    ) -> CliResult<Vec<Algorithm>> {
        let (alpha0, beta0, tilde0) = default_steps(problem, gamma, init)?;
        let scale = if self.steps.scale_by_gamma {
            gamma.max(1.0)
        } else {
            1.0
        };
        let alphas = self.steps.alpha.values(alpha0, scale);
        let betas = self.steps.beta.values(beta0, 1.0);
        let tildes = self.steps.beta_tilde.values(tilde0, scale);
        let schedule = self.schedule();
        match self.algorithm {
            AlgorithmKind::Jacobi => {
                let base = JacobiParams {
                    alpha: alphas[0],
                    beta: betas[0],
                    gamma,
                    k: self.k,
                    t_schedule: schedule,
                    inner_init: self.inner_init,
                };
                Ok(jacobi_grid(&base, &alphas, &betas))
            }
            AlgorithmKind::GaussSeidel => {
                let base = GaussSeidelParams {
                    alpha: alphas[0],
                    beta: betas[0],
                    beta_tilde: tildes[0],
                    gamma,
                    k: self.k,
                    t: schedule.steps(0, gamma),
                    inner_init: self.inner_init,
                    v_init: self.v_init,
                };
                let pairs: Vec<(f64, f64)> = betas
                    .iter()
                    .flat_map(|&b| tildes.iter().map(move |&bt| (b, bt)))
                    .collect();
                Ok(gauss_seidel_grid(&base, &alphas, &pairs))
            }
        }
    }
}

/// Result of one γ entry of a sweep.
#[derive(Debug)]
pub struct GammaOutcome {
    pub gamma: f64,
    pub params: Option<Algorithm>,
    /// Full trajectory, or the prefix logged before a failure.
    pub trajectory: Option<Trajectory>,
    pub error: Option<String>,
    pub pilots: Vec<PilotOutcome>,
}

impl GammaOutcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.trajectory.is_some()
    }
}

/// Observers attached when diagnostics are enabled.
struct Combined<'a>(Vec<Box<dyn Observer + 'a>>);

impl Observer for Combined<'_> {
    fn observe(&mut self, view: &StepView<'_>) -> Annotations {
        let mut out = Annotations::default();
        for o in &mut self.0 {
            let a = o.observe(view);
            out.mu_k = out.mu_k.or(a.mu_k);
            out.bias_bound = out.bias_bound.or(a.bias_bound);
        }
        out
    }
}

fn diagnostic_observer<'a>(problem: &'a BuiltProblem, gamma: f64) -> Box<dyn Observer + 'a> {
    let mut observers: Vec<Box<dyn Observer + 'a>> = Vec::new();
    match problem {
        BuiltProblem::Repr(p) => {
            if let Ok(c) = ReprCertificateObserver::new(p, gamma) {
                observers.push(Box::new(c));
            }
            observers.push(Box::new(BiasProbe::for_repr(p)));
        }
        other => {
            if let Ok(b) = BiasProbe::from_descriptor(other.as_dyn()) {
                observers.push(Box::new(b));
            }
        }
    }
    Box::new(Combined(observers))
}

/// Runs one γ: pilot search when several candidates exist, then the full run.
pub fn run_gamma(
    cfg: &RunConfig,
    problem: &BuiltProblem,
    init: &Init,
    gamma: f64,
    observer: &mut dyn Observer,
) -> GammaOutcome {
    let candidates = match cfg.candidates(problem, gamma, init) {
        Ok(c) => c,
        Err(e) => {
            return GammaOutcome {
                gamma,
                params: None,
                trajectory: None,
                error: Some(e.to_string()),
                pilots: Vec::new(),
            }
        }
    };
    let (params, pilots) = if candidates.len() == 1 {
        (candidates[0], Vec::new())
    } else {
        match grid_search_stepsizes(problem.as_dyn(), &candidates, cfg.steps.grid_budget, init) {
            Ok(r) => (r.best, r.pilots),
            Err(e) => {
                return GammaOutcome {
                    gamma,
                    params: None,
                    trajectory: None,
                    error: Some(e.to_string()),
                    pilots: Vec::new(),
                }
            }
        }
    };
    let (trajectory, error) = match params.run(problem.as_dyn(), init, observer) {
        Ok(mut t) => {
            t.seed = Some(cfg.data.seed);
            (Some(t), None)
        }
        Err(e) => {
            let msg = e.to_string();
            let mut t = e.partial;
            t.seed = Some(cfg.data.seed);
            (Some(t), Some(msg))
        }
    };
    GammaOutcome {
        gamma,
        params: Some(params),
        trajectory,
        error,
        pilots,
    }
}

/// All γ entries, run concurrently and returned in configuration order.
pub fn run_sweep(cfg: &RunConfig, problem: &BuiltProblem, init: &Init) -> Vec<GammaOutcome> {
    cfg.gammas
        .par_iter()
        .map(|&gamma| {
            if cfg.diagnostics {
                let mut obs = diagnostic_observer(problem, gamma);
                run_gamma(cfg, problem, init, gamma, obs.as_mut())
            } else {
                run_gamma(cfg, problem, init, gamma, &mut NoObserver)
            }
        })
        .collect()
}

/// File name of the trajectory CSV for one γ.
pub fn trajectory_file_name(problem: ProblemKind, algorithm: AlgorithmKind, gamma: f64) -> String {
    format!(
        "{}_{}_gamma_{}.csv",
        problem.as_str(),
        algorithm.as_str(),
        gamma
    )
}

pub const SUMMARY_HEADER: &str =
    "gamma,status,alpha,beta,beta_tilde,K,T,final_upper_rel_err,final_lower_rel_err,final_penalized_value,records,message";

fn describe_schedule(t: &TSchedule) -> String {
    match *t {
        TSchedule::Constant(t) => t.to_string(),
        TSchedule::Theorem { c_t, epsilon } => format!("theorem c_t={c_t:?} epsilon={epsilon:?}"),
        TSchedule::LogGrowth { base, c } => format!("log base={base} c={c:?}"),
    }
}

fn param_fields(p: &Option<Algorithm>) -> (String, String, String, String, String) {
    match p {
        Some(Algorithm::Jacobi(j)) => (
            format!("{:?}", j.alpha),
            format!("{:?}", j.beta),
            String::new(),
            j.k.to_string(),
            describe_schedule(&j.t_schedule),
        ),
        Some(Algorithm::GaussSeidel(g)) => (
            format!("{:?}", g.alpha),
            format!("{:?}", g.beta),
            format!("{:?}", g.beta_tilde),
            g.k.to_string(),
            g.t.to_string(),
        ),
        None => Default::default(),
    }
}

fn opt_num(x: Option<f64>) -> String {
    match x {
        Some(v) if !v.is_nan() => format!("{v:?}"),
        _ => String::new(),
    }
}

/// Summary CSV with one row per γ.
pub fn summary_csv(outcomes: &[GammaOutcome]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for o in outcomes {
        let (alpha, beta, bt, k, t) = param_fields(&o.params);
        let last = o.trajectory.as_ref().and_then(|t| t.last());
        let message = o
            .error
            .clone()
            .unwrap_or_default()
            .replace([',', '\n'], ";");
        out.push_str(&format!(
            "{},{},{alpha},{beta},{bt},{k},{t},{},{},{},{},{message}\n",
            o.gamma,
            if o.succeeded() { "ok" } else { "failed" },
            opt_num(last.map(|r| r.upper_rel_err)),
            opt_num(last.map(|r| r.lower_rel_err)),
            opt_num(last.map(|r| r.penalized_value)),
            o.trajectory.as_ref().map_or(0, |t| t.records.len()),
        ));
    }
    out
}

/// Outputs of a finished `run`.
#[derive(Debug)]
pub struct RunReport {
    pub resolved: String,
    pub outcomes: Vec<GammaOutcome>,
    pub files: Vec<PathBuf>,
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Builds the problem, runs the sweep and writes the trajectory CSVs and
/// `summary.csv` under `cfg.out`. Fails with an invariant error only when
/// every γ failed.
pub fn cmd_run(cfg: &RunConfig) -> CliResult<RunReport> {
    let problem = build_problem(cfg.problem, &cfg.data)?;
    let init = initial_point(&problem, &cfg.init, cfg.data.seed)?;
    let problem = anchor_at_init(problem, &init)?;
    let resolved = render_resolved("run", &cfg.resolved());
    let outcomes = run_sweep(cfg, &problem, &init);
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out.display())))?;
    let mut files = Vec::new();
    for o in &outcomes {
        if let Some(t) = &o.trajectory {
            let path = cfg
                .out
                .join(trajectory_file_name(cfg.problem, cfg.algorithm, o.gamma));
            write(&path, &trajectory_to_csv(t, cfg.timing))?;
            files.push(path);
        }
    }
    let summary = cfg.out.join("summary.csv");
    write(&summary, &summary_csv(&outcomes))?;
    files.push(summary);
    let report = RunReport {
        resolved,
        outcomes,
        files,
    };
    if report.outcomes.iter().all(|o| !o.succeeded()) {
        let reasons: Vec<String> = report
            .outcomes
            .iter()
            .map(|o| format!("gamma={}: {}", o.gamma, o.error.clone().unwrap_or_default()))
            .collect();
        return Err(CliError::Invariant(format!(
            "every gamma failed: {}",
            reasons.join("; ")
        )));
    }
    Ok(report)
}

/// Human-readable table of final errors per γ.
pub fn summary_table(outcomes: &[GammaOutcome]) -> String {
    let mut out = format!(
        "{:>10}  {:>7}  {:>12}  {:>12}  {:>14}\n",
        "gamma", "status", "upper_err", "lower_err", "penalized"
    );
    for o in outcomes {
        let last = o.trajectory.as_ref().and_then(|t| t.last());
        let cell = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
        out.push_str(&format!(
            "{:>10}  {:>7}  {:>12}  {:>12}  {:>14}\n",
            o.gamma,
            if o.succeeded() { "ok" } else { "failed" },
            cell(last.map(|r| r.upper_rel_err)),
            cell(last.map(|r| r.lower_rel_err)),
            cell(last.map(|r| r.penalized_value)),
        ));
    }
    out
}
