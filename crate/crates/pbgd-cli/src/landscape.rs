//! `landscape`: CSV grids of nested and penalized objectives on 2-D slices.

use std::fs;
use std::path::PathBuf;

use pbgd::data::GaussianStream;
use pbgd::diagnostics::{exact_penalized_gradient, landscape_grid, LandscapeGrid};
use pbgd::problems::{example1_nested, repr_nested_objective, BilevelProblem, ReprProblem};
use pbgd::Matrix;

use crate::config::{render_resolved, Settings};
use crate::error::{CliError, CliResult};
use crate::setup::{build_problem, BuiltProblem, DataSpec, ProblemKind};

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeConfig {
    pub problem: ProblemKind,
    pub gammas: Vec<f64>,
    pub u_range: (f64, f64),
    pub v_range: (f64, f64),
    pub resolution: (usize, usize),
    /// Fixed `v₂` of the Example 3 slice over `(u, v₁)`.
    pub v2: f64,
    /// Seed of the random slice directions for representation learning.
    pub slice_seed: u64,
    pub data: DataSpec,
    pub out: PathBuf,
}

fn pair<T: std::str::FromStr + Copy>(
    s: &Settings,
    key: &str,
    default: (T, T),
) -> CliResult<(T, T)> {
    match s.list::<T>(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 => Ok((v[0], v[1])),
        Some(_) => Err(CliError::Usage(format!(
            "`{key}` needs two comma-separated values"
        ))),
    }
}

impl LandscapeConfig {
    pub fn from_settings(s: &Settings) -> CliResult<Self> {
        let problem: ProblemKind = s.str_or("problem", "example1").parse()?;
        if problem == ProblemKind::Hyperclean {
            return Err(CliError::Usage(
                "landscape supports example1, example2, example3 and repr".into(),
            ));
        }
        let (u_default, v_default) = match problem {
            ProblemKind::Repr => ((-1.0, 1.0), (-1.0, 1.0)),
            _ => ((-7.0, 7.0), (-7.0, 7.0)),
        };
        let data = DataSpec::from_settings(s, problem)?;
        let resolution = match s.list::<usize>("resolution")? {
            None => (101, 101),
            Some(v) if v.len() == 1 => (v[0], v[0]),
            Some(v) if v.len() == 2 => (v[0], v[1]),
            Some(_) => {
                return Err(CliError::Usage(
                    "`resolution` needs one or two values".into(),
                ))
            }
        };
        let gammas = s.list::<f64>("gammas")?.unwrap_or_else(|| vec![0.5, 1.0]);
        if gammas.iter().any(|g| !(*g >= 0.0)) {
            return Err(CliError::Usage("every gamma must be nonnegative".into()));
        }
        Ok(Self {
            problem,
            gammas,
            u_range: pair(s, "u_range", u_default)?,
            v_range: pair(s, "v_range", v_default)?,
            resolution,
            v2: s.parsed_or("v2", 0.0)?,
            slice_seed: s.parsed_or("slice_seed", data.seed.wrapping_add(2))?,
            data,
            out: PathBuf::from(s.str_or("out", "out")),
        })
    }

    pub fn resolved(&self) -> Vec<(String, String)> {
        let f = |p: (f64, f64)| format!("{:?},{:?}", p.0, p.1);
        let mut out = vec![
            ("problem".to_string(), self.problem.to_string()),
            (
                "gammas".to_string(),
                self.gammas
                    .iter()
                    .map(|g| format!("{g:?}"))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("u_range".to_string(), f(self.u_range)),
            ("v_range".to_string(), f(self.v_range)),
            (
                "resolution".to_string(),
                format!("{},{}", self.resolution.0, self.resolution.1),
            ),
        ];
        match self.problem {
            ProblemKind::Example3 => out.push(("v2".to_string(), format!("{:?}", self.v2))),
            ProblemKind::Repr => {
                out.push(("slice_seed".to_string(), self.slice_seed.to_string()));
                out.extend(self.data.resolved(self.problem));
            }
            _ => {}
        }
        out.push(("out".to_string(), self.out.display().to_string()));
        out
    }
}

/// Maps a 2-D slice coordinate to a full `(u, v)` point.
type Embed<'a> = dyn Fn(f64, f64) -> (Matrix, Matrix) + Sync + 'a;

fn penalized(problem: &dyn BilevelProblem, gamma: f64, u: &Matrix, v: &Matrix) -> f64 {
    let f = problem.f(u, v);
    if gamma == 0.0 {
        return f;
    }
    let g_star = problem
        .value_function(u)
        .or_else(|| problem.lower_solution(u, v).map(|w| problem.g(u, &w)));
    g_star.map_or(f64::NAN, |gs| f + gamma * (problem.g(u, v) - gs))
}

fn penalized_grids(
    cfg: &LandscapeConfig,
    problem: &dyn BilevelProblem,
    embed: &Embed<'_>,
    with_gradient: bool,
) -> CliResult<Vec<LandscapeGrid>> {
    let mut grids = Vec::new();
    for &gamma in &cfg.gammas {
        grids.push(landscape_grid(
            &format!("L_gamma_{gamma}"),
            |a, b| {
                let (u, v) = embed(a, b);
                penalized(problem, gamma, &u, &v)
            },
            cfg.u_range,
            cfg.v_range,
            cfg.resolution,
        )?);
        if with_gradient {
            grids.push(landscape_grid(
                &format!("grad_norm_gamma_{gamma}"),
                |a, b| {
                    let (u, v) = embed(a, b);
                    exact_penalized_gradient(problem, gamma, &u, &v, &v)
                        .map_or(f64::NAN, |(gu, gv)| (gu.norm_sq() + gv.norm_sq()).sqrt())
                },
                cfg.u_range,
                cfg.v_range,
                cfg.resolution,
            )?);
        }
    }
    Ok(grids)
}

/// Unit-Frobenius random direction.
fn direction(rng: &mut GaussianStream, rows: usize, cols: usize) -> Matrix {
    let d = rng.normal_matrix(rows, cols, 0.0, 1.0);
    let n = d.norm();
    d.scale(1.0 / n)
}

/// Slice through a reference point `(W₁⁰, W₂⁰)` along seeded directions
/// scaled to the norms of the reference weights.
fn repr_slice(cfg: &LandscapeConfig, p: &ReprProblem) -> (Matrix, Matrix, Matrix, Matrix) {
    let d = p.data.dims();
    let (w1, w2) = match &p.data.truth {
        Some(t) => (t.w1_star.clone(), t.w2_star.clone()),
        None => (Matrix::eye(d.m, d.h), Matrix::zeros(d.h, d.n)),
    };
    let mut rng = GaussianStream::new(cfg.slice_seed);
    let d1 = direction(&mut rng, d.m, d.h).scale(w1.norm().max(1.0));
    let d2 = direction(&mut rng, d.h, d.n).scale(w2.norm().max(1.0));
    (w1, w2, d1, d2)
}

fn build_grids(cfg: &LandscapeConfig, built: &BuiltProblem) -> CliResult<Vec<LandscapeGrid>> {
    let u_only = (cfg.u_range, (0.0, 0.0));
    let res = cfg.resolution;
    let scalar = |a: f64, b: f64| (Matrix::scalar(a), Matrix::scalar(b));
    match built {
        BuiltProblem::Example1(p) => {
            let mut grids = vec![landscape_grid(
                "F",
                |u, _| example1_nested(u),
                u_only.0,
                u_only.1,
                res,
            )?];
            grids.extend(penalized_grids(cfg, p, &scalar, true)?);
            Ok(grids)
        }
        BuiltProblem::Example2(p) => {
            let nested = |u: f64, _| {
                let u = Matrix::scalar(u);
                p.lower_solution(&u, &u).map_or(f64::NAN, |v| p.f(&u, &v))
            };
            let mut grids = vec![landscape_grid("F", nested, u_only.0, u_only.1, res)?];
            grids.extend(penalized_grids(cfg, p, &scalar, true)?);
            Ok(grids)
        }
        BuiltProblem::Example3(p) => {
            let v2 = cfg.v2;
            let embed = move |a: f64, b: f64| (Matrix::scalar(a), Matrix::column(&[b, v2]));
            penalized_grids(cfg, p, &embed, true)
        }
        BuiltProblem::Repr(p) => {
            let (w1, w2, d1, d2) = repr_slice(cfg, p);
            let nested = |a: f64, _| {
                repr_nested_objective(&w1.add_scaled(a, &d1), &p.data).unwrap_or(f64::NAN)
            };
            let mut grids = vec![landscape_grid("F", nested, u_only.0, u_only.1, res)?];
            let embed = |a: f64, b: f64| (w1.add_scaled(a, &d1), w2.add_scaled(b, &d2));
            grids.extend(penalized_grids(cfg, p, &embed, false)?);
            Ok(grids)
        }
        BuiltProblem::Hyperclean(_) => Err(CliError::Usage(
            "landscape does not support hyperclean".into(),
        )),
    }
}

pub fn grid_file_name(problem: ProblemKind, grid: &LandscapeGrid) -> String {
    format!("landscape_{}_{}.csv", problem.as_str(), grid.label)
}

/// Writes one CSV per grid and returns the stdout report.
pub fn cmd_landscape(cfg: &LandscapeConfig) -> CliResult<String> {
    let built = build_problem(cfg.problem, &cfg.data)?;
    let grids = build_grids(cfg, &built)?;
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out.display())))?;
    let mut report = render_resolved("landscape", &cfg.resolved());
    for grid in &grids {
        let path = cfg.out.join(grid_file_name(cfg.problem, grid));
        fs::write(&path, grid.to_csv())
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        let min = grid.argmin().map_or_else(
            || "no defined values".to_string(),
            |(x, y, z)| format!("min {z:.6e} at ({x:.6}, {y:.6})"),
        );
        report.push_str(&format!(
            "{}: {}x{} grid, {min} -> {}\n",
            grid.label,
            grid.u.points.len(),
            grid.v.points.len(),
            path.display()
        ));
    }
    Ok(report)
}
