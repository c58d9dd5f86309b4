//! Problem construction and initialization shared by the subcommands.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use pbgd::data::{
    gen_hyperclean_dataset_with, gen_repr_dataset_with, load_dataset, Dataset, GaussianStream,
    HypercleanDims, NoiseConvention, ReprDims,
};
use pbgd::diagnostics::repr_x_gamma_summary;
use pbgd::numerics::spectral_norm;
use pbgd::problems::{
    example1, example2, example3, hyperclean_problem, repr_problem, BilevelProblem, Example1,
    Example2, Example3, HypercleanProblem, ReprProblem,
};
use pbgd::solvers::Init;
use pbgd::Matrix;

use crate::config::Settings;
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Repr,
    Hyperclean,
    Example1,
    Example2,
    Example3,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Repr => "repr",
            Self::Hyperclean => "hyperclean",
            Self::Example1 => "example1",
            Self::Example2 => "example2",
            Self::Example3 => "example3",
        }
    }
}

impl FromStr for ProblemKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "repr" => Ok(Self::Repr),
            "hyperclean" => Ok(Self::Hyperclean),
            "example1" => Ok(Self::Example1),
            "example2" => Ok(Self::Example2),
            "example3" => Ok(Self::Example3),
            other => Err(CliError::Usage(format!(
                "unknown problem `{other}` (expected repr, hyperclean, example1, example2 or example3)"
            ))),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dataset source and generation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub seed: u64,
    /// Load from this file instead of generating from `seed`.
    pub dataset: Option<PathBuf>,
    pub rate: f64,
    pub u_bar: f64,
    pub noise: NoiseConvention,
    pub repr_dims: ReprDims,
    pub hyperclean_dims: HypercleanDims,
}

pub fn parse_noise(s: &str) -> CliResult<NoiseConvention> {
    match s {
        "variance" => Ok(NoiseConvention::Variance),
        "std" | "stddev" => Ok(NoiseConvention::StdDev),
        other => Err(CliError::Usage(format!(
            "noise must be variance or std, got `{other}`"
        ))),
    }
}

pub fn parse_repr_dims(v: &[usize]) -> CliResult<ReprDims> {
    match *v {
        [n_trn, n_val, m, n, h] => Ok(ReprDims {
            n_trn,
            n_val,
            m,
            n,
            h,
        }),
        _ => Err(CliError::Usage(
            "repr dims need five values N,N',m,n,h".into(),
        )),
    }
}

pub fn parse_hyperclean_dims(v: &[usize]) -> CliResult<HypercleanDims> {
    match *v {
        [n_trn, n_val, m, n] => Ok(HypercleanDims { n_trn, n_val, m, n }),
        _ => Err(CliError::Usage(
            "hyperclean dims need four values N,N',m,n".into(),
        )),
    }
}

impl DataSpec {
    pub fn from_settings(s: &Settings, kind: ProblemKind) -> CliResult<Self> {
        let dims = s.list::<usize>("dims")?;
        let repr_dims = match (&dims, kind) {
            (Some(d), ProblemKind::Repr) => parse_repr_dims(d)?,
            _ => ReprDims::default(),
        };
        let hyperclean_dims = match (&dims, kind) {
            (Some(d), ProblemKind::Hyperclean) => parse_hyperclean_dims(d)?,
            _ => HypercleanDims::default(),
        };
        Ok(Self {
            seed: s.parsed_or("seed", 7)?,
            dataset: s.str("dataset").map(PathBuf::from),
            rate: s.parsed_or("rate", 0.2)?,
            u_bar: s.parsed_or("u_bar", 5.0)?,
            noise: parse_noise(s.str_or("noise", "variance"))?,
            repr_dims,
            hyperclean_dims,
        })
    }

    pub fn resolved(&self, kind: ProblemKind) -> Vec<(String, String)> {
        let mut out = vec![
            ("seed".to_string(), self.seed.to_string()),
            (
                "dataset".to_string(),
                self.dataset
                    .as_ref()
                    .map_or_else(|| "generated".to_string(), |p| p.display().to_string()),
            ),
            ("noise".to_string(), self.noise.as_str().to_string()),
        ];
        match kind {
            ProblemKind::Repr => {
                let d = self.repr_dims;
                out.push((
                    "dims".into(),
                    format!("{},{},{},{},{}", d.n_trn, d.n_val, d.m, d.n, d.h),
                ));
            }
            ProblemKind::Hyperclean => {
                let d = self.hyperclean_dims;
                out.push((
                    "dims".into(),
                    format!("{},{},{},{}", d.n_trn, d.n_val, d.m, d.n),
                ));
                out.push(("rate".into(), format!("{:?}", self.rate)));
                out.push(("u_bar".into(), format!("{:?}", self.u_bar)));
            }
            _ => {}
        }
        out
    }
}

/// A constructed problem with its concrete type preserved for diagnostics.
pub enum BuiltProblem {
    Repr(ReprProblem),
    Hyperclean(HypercleanProblem),
    Example1(Example1),
    Example2(Example2),
    Example3(Example3),
}

impl BuiltProblem {
    pub fn as_dyn(&self) -> &dyn BilevelProblem {
        match self {
            Self::Repr(p) => p,
            Self::Hyperclean(p) => p,
            Self::Example1(p) => p,
            Self::Example2(p) => p,
            Self::Example3(p) => p,
        }
    }
}

fn load_or_generate(kind: ProblemKind, spec: &DataSpec) -> CliResult<Option<Dataset>> {
    if let Some(path) = &spec.dataset {
        let data = load_dataset(path).map_err(|e| match e {
            pbgd::Error::Io(io) => CliError::Io(format!("cannot read {}: {io}", path.display())),
            other => CliError::Io(format!("cannot load {}: {other}", path.display())),
        })?;
        return Ok(Some(data));
    }
    Ok(match kind {
        ProblemKind::Repr => Some(Dataset::Repr(gen_repr_dataset_with(
            spec.seed,
            spec.repr_dims,
            spec.noise,
        )?)),
        ProblemKind::Hyperclean => Some(Dataset::Hyperclean(gen_hyperclean_dataset_with(
            spec.seed,
            spec.hyperclean_dims,
            spec.rate,
            spec.noise,
        )?)),
        _ => None,
    })
}

pub fn build_problem(kind: ProblemKind, spec: &DataSpec) -> CliResult<BuiltProblem> {
    let data = load_or_generate(kind, spec)?;
    match (kind, data) {
        (ProblemKind::Example1, _) => Ok(BuiltProblem::Example1(example1())),
        (ProblemKind::Example2, _) => Ok(BuiltProblem::Example2(example2())),
        (ProblemKind::Example3, _) => Ok(BuiltProblem::Example3(example3())),
        (ProblemKind::Repr, Some(Dataset::Repr(d))) => Ok(BuiltProblem::Repr(repr_problem(d)?)),
        (ProblemKind::Hyperclean, Some(Dataset::Hyperclean(d))) => {
            Ok(BuiltProblem::Hyperclean(hyperclean_problem(d, spec.u_bar)?))
        }
        (k, Some(d)) => Err(CliError::Usage(format!(
            "dataset holds a {} problem but {k} was requested",
            d.kind()
        ))),
        (k, None) => Err(CliError::Usage(format!("{k} needs a dataset"))),
    }
}

/// Starting point settings.
#[derive(Clone, Debug, PartialEq)]
pub struct InitSpec {
    /// Standard deviation of the seeded Gaussian initialization (repr).
    pub init_std: f64,
    /// Explicit row-major entries of `u⁰` and `v⁰`.
    pub u0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
}

impl InitSpec {
    pub fn from_settings(s: &Settings) -> CliResult<Self> {
        Ok(Self {
            init_std: s.parsed_or("init_std", 0.1)?,
            u0: s.list("u0")?,
            v0: s.list("v0")?,
        })
    }

    pub fn resolved(&self) -> Vec<(String, String)> {
        let join = |v: &Option<Vec<f64>>| {
            v.as_ref().map_or_else(
                || "default".to_string(),
                |x| {
                    x.iter()
                        .map(|z| format!("{z:?}"))
                        .collect::<Vec<_>>()
                        .join(",")
                },
            )
        };
        vec![
            ("init_std".into(), format!("{:?}", self.init_std)),
            ("u0".into(), join(&self.u0)),
            ("v0".into(), join(&self.v0)),
        ]
    }
}

fn explicit(
    shape: (usize, usize),
    values: &Option<Vec<f64>>,
    what: &str,
) -> CliResult<Option<Matrix>> {
    match values {
        None => Ok(None),
        Some(v) => Matrix::new(shape.0, shape.1, v.clone())
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{what} needs {} entries", shape.0 * shape.1))),
    }
}

/// Starting point: seeded `N(0, init_std²)` weights for representation
/// learning, zeros for hyper-cleaning and fixed points for the examples.
/// The inner start `w⁰` is always zero.
pub fn initial_point(problem: &BuiltProblem, spec: &InitSpec, seed: u64) -> CliResult<Init> {
    let p = problem.as_dyn();
    let (us, vs) = (p.u_shape(), p.v_shape());
    let (u_default, v_default) = match problem {
        BuiltProblem::Repr(_) => {
            let mut rng = GaussianStream::new(seed.wrapping_add(1));
            let u = rng.normal_matrix(us.0, us.1, 0.0, spec.init_std);
            let v = rng.normal_matrix(vs.0, vs.1, 0.0, spec.init_std);
            (u, v)
        }
        BuiltProblem::Hyperclean(_) => (Matrix::zeros(us.0, us.1), Matrix::zeros(vs.0, vs.1)),
        BuiltProblem::Example1(_) => (Matrix::scalar(1.0), Matrix::scalar(0.5)),
        BuiltProblem::Example2(_) => (Matrix::scalar(0.5), Matrix::scalar(0.0)),
        BuiltProblem::Example3(_) => (Matrix::scalar(1.0), Matrix::column(&[0.5, 0.5])),
    };
    Ok(Init {
        u0: explicit(us, &spec.u0, "u0")?.unwrap_or(u_default),
        v0: explicit(vs, &spec.v0, "v0")?.unwrap_or(v_default),
        w0: Matrix::zeros(vs.0, vs.1),
    })
}

/// Re-anchors estimated smoothness constants at the starting point; only
/// the representation-learning descriptor depends on `u`.
pub fn anchor_at_init(problem: BuiltProblem, init: &Init) -> CliResult<BuiltProblem> {
    Ok(match problem {
        BuiltProblem::Repr(p) => BuiltProblem::Repr(p.at_initialization(&init.u0)?),
        other => other,
    })
}

/// Default stepsizes `(α, β, β̃)` for one γ.
///
/// `β = 1/ℓ_g` and `β̃ = 1/(ℓ_f + γℓ_g)`. For representation learning
/// `α = 1/(2L)` with `L = σ_max²(X_γ)(σ_max²(W₁⁰) + σ_max²(W₂⁰))`, the
/// leading term of the descent-lemma constant at the start; elsewhere
/// `α = β̃`.
pub fn default_steps(
    problem: &BuiltProblem,
    gamma: f64,
    init: &Init,
) -> CliResult<(f64, f64, f64)> {
    let s = problem.as_dyn().smoothness();
    let ell_f = s.ell_f.unwrap_or(1.0);
    let ell_g = s.ell_g.unwrap_or(1.0);
    let joint = 1.0 / (ell_f + gamma * ell_g);
    let alpha = match problem {
        BuiltProblem::Repr(p) => repr_default_alpha(p, gamma, init)?,
        _ => joint,
    };
    Ok((alpha, 1.0 / ell_g, joint))
}

pub fn repr_default_alpha(problem: &ReprProblem, gamma: f64, init: &Init) -> CliResult<f64> {
    let xg = repr_x_gamma_summary(problem, gamma)?;
    let a = spectral_norm(&init.u0)?.powi(2) + spectral_norm(&init.v0)?.powi(2);
    Ok(0.5 / (xg.sigma_max.powi(2) * a))
}
