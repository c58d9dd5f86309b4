use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pbgd::data::TRAJECTORY_HEADER;
use pbgd_cli::run::SUMMARY_HEADER;

fn pbgd(args: &[&str]) -> Output {
    pbgd_env(args, &[])
}

fn pbgd_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pbgd"));
    cmd.args(args).env_remove("SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn golden(name: &str) -> String {
    fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden")
            .join(name),
    )
    .unwrap()
}

#[test]
fn csv_headers_are_pinned() {
    assert_eq!(
        TRAJECTORY_HEADER,
        "k,upper_rel_err,lower_rel_err,grad_norm_u,grad_norm_v,penalized_value,mu_k,bias_bound,wall_ms"
    );
    assert_eq!(
        SUMMARY_HEADER,
        "gamma,status,alpha,beta,beta_tilde,K,T,final_upper_rel_err,final_lower_rel_err,final_penalized_value,records,message"
    );
}

#[test]
fn example1_run_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbgd(&[
        "run",
        "--problem",
        "example1",
        "--gammas",
        "1",
        "-k",
        "5",
        "-t",
        "3",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trajectory = fs::read_to_string(dir.path().join("example1_jacobi_gamma_1.csv")).unwrap();
    assert_eq!(trajectory, golden("example1_jacobi_gamma_1.csv"));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary, golden("example1_summary.csv"));
    let out = stdout(&o);
    assert!(out.starts_with("[run]\n"));
    assert!(out.contains("problem = example1"));
}

#[test]
fn zero_outer_iterations_give_only_the_initial_record() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbgd(&[
        "run",
        "--problem",
        "example1",
        "-k",
        "0",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("example1_jacobi_gamma_1.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());

    assert_eq!(
        pbgd(&["run", "--problem", "nonsense", "--out", out])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(pbgd(&["run", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(
        pbgd(&["gen-data", "example1", "--out", out]).status.code(),
        Some(2)
    );
    assert_eq!(
        pbgd(&[
            "run",
            "--problem",
            "example1",
            "--gammas",
            "-1",
            "--out",
            out
        ])
        .status
        .code(),
        Some(2)
    );

    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let under_file = blocker.join("sub");
    assert_eq!(
        pbgd(&[
            "run",
            "--problem",
            "example1",
            "-k",
            "1",
            "--out",
            path_str(&under_file)
        ])
        .status
        .code(),
        Some(3)
    );
    assert_eq!(
        pbgd(&["run", "--config", path_str(&dir.path().join("missing.ini"))])
            .status
            .code(),
        Some(3)
    );

    // Every γ diverges with this stepsize, which is an invariant failure.
    let o = pbgd(&[
        "run",
        "--problem",
        "example1",
        "--alphas",
        "100",
        "-k",
        "2000",
        "--out",
        out,
    ]);
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    assert_eq!(
        pbgd(&["diagnose", "example2", "--out", out]).status.code(),
        Some(0)
    );
}

#[test]
fn seed_variable_overrides_config_and_flags_override_both() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pbgd.ini");
    fs::write(&cfg, "seed = 1\n\n[gen-data]\ndims = 4,3,6,2,8\n").unwrap();
    let base = [
        "gen-data",
        "repr",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(dir.path()),
    ];

    let o = pbgd(&base);
    assert!(o.status.success());
    assert!(dir.path().join("repr_seed1.txt").exists());

    let o = pbgd_env(&base, &[("SEED", "2")]);
    assert!(o.status.success());
    assert!(dir.path().join("repr_seed2.txt").exists());
    assert!(stdout(&o).contains("seed: 2"));

    let mut with_flag = base.to_vec();
    with_flag.extend(["--seed", "3"]);
    let o = pbgd_env(&with_flag, &[("SEED", "2")]);
    assert!(o.status.success());
    assert!(dir.path().join("repr_seed3.txt").exists());

    assert_eq!(pbgd_env(&base, &[("SEED", "abc")]).status.code(), Some(2));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["a.txt", "b.txt"] {
        let file = dir.path().join(name);
        let o = pbgd(&[
            "gen-data",
            "hyperclean",
            "--seed",
            "5",
            "--dims",
            "6,3,8,2",
            "--file",
            path_str(&file),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        files.push(fs::read(&file).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn degenerate_landscape_range_gives_one_column() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbgd(&[
        "landscape",
        "example3",
        "--gammas",
        "1",
        "--u-range",
        "-1,1",
        "--v-range",
        "0.5,0.5",
        "--resolution",
        "7",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("landscape_example3_L_gamma_1.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("0.5")));
}

#[test]
fn set_override_wins_over_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbgd(&[
        "run",
        "--problem",
        "example1",
        "-k",
        "5",
        "--set",
        "k=2",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("example1_jacobi_gamma_1.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
}
