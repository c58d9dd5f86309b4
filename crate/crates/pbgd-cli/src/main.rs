use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pbgd_cli::config::{load_settings, Settings};
use pbgd_cli::diagnose::{cmd_diagnose, DiagnoseConfig};
use pbgd_cli::error::{CliError, CliResult};
use pbgd_cli::gen_data::{cmd_gen_data, GenDataConfig};
use pbgd_cli::landscape::{cmd_landscape, LandscapeConfig};
use pbgd_cli::run::{cmd_run, summary_table, RunConfig};
use pbgd_cli::setup::ProblemKind;

#[derive(Parser)]
#[command(
    name = "pbgd",
    version,
    about = "Penalty-based bilevel gradient descent experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Config file with a general section and one section per command.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded dataset file.
    GenData {
        /// repr or hyperclean.
        kind: String,
        #[arg(long)]
        rate: Option<f64>,
        /// Comma-separated dims: N,N',m,n,h (repr) or N,N',m,n (hyperclean).
        #[arg(long)]
        dims: Option<String>,
        /// variance or std.
        #[arg(long)]
        noise: Option<String>,
        /// Explicit output file.
        #[arg(long)]
        file: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a γ-sweep and write one trajectory CSV per γ.
    Run {
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        algorithm: Option<String>,
        /// Comma-separated penalty constants.
        #[arg(long)]
        gammas: Option<String>,
        /// Comma-separated upper stepsizes; several values trigger a grid search.
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long)]
        betas: Option<String>,
        #[arg(long = "beta-tildes")]
        beta_tildes: Option<String>,
        #[arg(short = 'k', long = "k")]
        k: Option<usize>,
        #[arg(short = 't', long = "t")]
        t: Option<usize>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        diagnostics: bool,
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Export objective grids on 2-D slices.
    Landscape {
        problem: Option<String>,
        #[arg(long)]
        gammas: Option<String>,
        #[arg(long = "u-range", allow_hyphen_values = true)]
        u_range: Option<String>,
        #[arg(long = "v-range", allow_hyphen_values = true)]
        v_range: Option<String>,
        #[arg(long)]
        resolution: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Gradient checks, PL certificates and bias comparisons.
    Diagnose {
        problem: Option<String>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Config file, then `SEED`, then the shared flags.
fn settings(common: &Common, section: &str) -> CliResult<Settings> {
    let mut s = load_settings(
        common.config.as_deref(),
        section,
        std::env::var("SEED").ok(),
    )?;
    s.set_opt("seed", common.seed);
    s.set_opt("out", common.out.as_ref().map(|p| p.display().to_string()));
    Ok(s)
}

/// Applies `--set` pairs after every other source.
fn apply_overrides(s: &mut Settings, common: &Common) -> CliResult<()> {
    for pair in &common.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
        s.set(k, v.trim());
    }
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData {
            kind,
            rate,
            dims,
            noise,
            file,
            common,
        } => {
            let mut s = settings(&common, "gen-data")?;
            s.set_opt("rate", rate);
            s.set_opt("dims", dims);
            s.set_opt("noise", noise);
            s.set_opt("file", file.map(|p| p.display().to_string()));
            apply_overrides(&mut s, &common)?;
            let kind: ProblemKind = kind.parse()?;
            print!(
                "{}",
                cmd_gen_data(&GenDataConfig::from_settings(kind, &s)?)?
            );
        }
        Command::Run {
            problem,
            algorithm,
            gammas,
            alphas,
            betas,
            beta_tildes,
            k,
            t,
            dataset,
            diagnostics,
            timing,
            common,
        } => {
            let mut s = settings(&common, "run")?;
            s.set_opt("problem", problem);
            s.set_opt("algorithm", algorithm);
            s.set_opt("gammas", gammas);
            s.set_opt("alphas", alphas);
            s.set_opt("betas", betas);
            s.set_opt("beta_tildes", beta_tildes);
            s.set_opt("k", k);
            s.set_opt("t", t);
            s.set_opt("dataset", dataset.map(|p| p.display().to_string()));
            if diagnostics {
                s.set("diagnostics", "true");
            }
            if timing {
                s.set("timing", "true");
            }
            apply_overrides(&mut s, &common)?;
            let cfg = RunConfig::from_settings(&s)?;
            let report = cmd_run(&cfg)?;
            print!("{}", report.resolved);
            print!("{}", summary_table(&report.outcomes));
            for o in report.outcomes.iter().filter(|o| !o.succeeded()) {
                eprintln!(
                    "gamma = {} failed: {}",
                    o.gamma,
                    o.error.as_deref().unwrap_or("no trajectory")
                );
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Landscape {
            problem,
            gammas,
            u_range,
            v_range,
            resolution,
            common,
        } => {
            let mut s = settings(&common, "landscape")?;
            s.set_opt("problem", problem);
            s.set_opt("gammas", gammas);
            s.set_opt("u_range", u_range);
            s.set_opt("v_range", v_range);
            s.set_opt("resolution", resolution);
            apply_overrides(&mut s, &common)?;
            print!("{}", cmd_landscape(&LandscapeConfig::from_settings(&s)?)?);
        }
        Command::Diagnose {
            problem,
            gamma,
            dataset,
            common,
        } => {
            let mut s = settings(&common, "diagnose")?;
            s.set_opt("problem", problem);
            s.set_opt("gamma", gamma);
            s.set_opt("dataset", dataset.map(|p| p.display().to_string()));
            apply_overrides(&mut s, &common)?;
            let (text, failed) = cmd_diagnose(&DiagnoseConfig::from_settings(&s)?)?;
            print!("{text}");
            if !failed.is_empty() {
                return Err(CliError::Invariant(format!(
                    "failed checks: {}",
                    failed.join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
