//! `gen-data`: seeded dataset generation with rank diagnostics.

use std::fs;
use std::path::PathBuf;

use pbgd::data::{save_dataset, Dataset};
use pbgd::numerics::{spectral_summary, SpectralSummary, DEFAULT_RANK_TOL};

use crate::config::{render_resolved, Settings};
use crate::error::{CliError, CliResult};
use crate::setup::{build_problem, BuiltProblem, DataSpec, ProblemKind};

#[derive(Clone, Debug, PartialEq)]
pub struct GenDataConfig {
    pub kind: ProblemKind,
    pub data: DataSpec,
    pub out: PathBuf,
    /// Explicit output path; defaults to `{out}/{kind}_seed{seed}.txt`.
    pub file: Option<PathBuf>,
}

impl GenDataConfig {
    pub fn from_settings(kind: ProblemKind, s: &Settings) -> CliResult<Self> {
        if !matches!(kind, ProblemKind::Repr | ProblemKind::Hyperclean) {
            return Err(CliError::Usage(format!(
                "gen-data supports repr and hyperclean, not {kind}"
            )));
        }
        let mut data = DataSpec::from_settings(s, kind)?;
        data.dataset = None;
        Ok(Self {
            kind,
            data,
            out: PathBuf::from(s.str_or("out", "out")),
            file: s.str("file").map(PathBuf::from),
        })
    }

    pub fn path(&self) -> PathBuf {
        self.file.clone().unwrap_or_else(|| {
            self.out
                .join(format!("{}_seed{}.txt", self.kind.as_str(), self.data.seed))
        })
    }

    pub fn resolved(&self) -> Vec<(String, String)> {
        let mut out = vec![("kind".to_string(), self.kind.to_string())];
        out.extend(
            self.data
                .resolved(self.kind)
                .into_iter()
                .filter(|(k, _)| k != "dataset" && k != "u_bar"),
        );
        out.push(("file".to_string(), self.path().display().to_string()));
        out
    }
}

fn describe(name: &str, s: &SpectralSummary) -> String {
    format!(
        "{name}: rank {} sigma_max {:.6e} sigma_star {}\n",
        s.rank,
        s.sigma_max,
        s.sigma_star
            .map_or_else(|| "none".to_string(), |x| format!("{x:.6e}"))
    )
}

/// Generates and writes the dataset; returns the report printed to stdout.
pub fn cmd_gen_data(cfg: &GenDataConfig) -> CliResult<String> {
    let built = build_problem(cfg.kind, &cfg.data)?;
    let path = cfg.path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    let mut report = render_resolved("gen-data", &cfg.resolved());
    report.push_str(&format!("seed: {}\n", cfg.data.seed));
    let dataset = match built {
        BuiltProblem::Repr(p) => {
            report.push_str(&describe("X_trn", &p.trn_summary));
            report.push_str(&describe("X_val", &p.val_summary));
            Dataset::Repr(p.data)
        }
        BuiltProblem::Hyperclean(p) => {
            let d = &p.data;
            report.push_str(&describe(
                "X_trn",
                &spectral_summary(&d.x_trn, DEFAULT_RANK_TOL)?,
            ));
            report.push_str(&describe(
                "X_val",
                &spectral_summary(&d.x_val, DEFAULT_RANK_TOL)?,
            ));
            let in_range = p
                .proj_diag
                .iter()
                .filter(|&&x| (x - 1.0).abs() <= 1e-8)
                .count();
            let corrupted = d.corruption_mask.iter().filter(|&&c| c).count();
            report.push_str(&format!(
                "training rows in range of X_trn: {in_range} of {}\ncorrupted rows: {corrupted}\n",
                d.x_trn.rows()
            ));
            Dataset::Hyperclean(p.data)
        }
        _ => unreachable!("validated in from_settings"),
    };
    save_dataset(&path, &dataset)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    report.push_str(&format!("wrote {}\n", path.display()));
    Ok(report)
}
