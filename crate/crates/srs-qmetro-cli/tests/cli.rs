//! End-to-end checks of the binary: exit codes, artifact determinism, and
//! the acceptance self-test hooks.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_srs-qmetro")
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("SRS_QMETRO_THREADS")
        .output()
        .expect("binary runs")
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("srs-qmetro-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const SMALL_CURVE: &str = r#"
command = "curve"
seed = 7

[[plan]]
label = "tms"
family = "two-mode-squeezed"
observables = ["dn", "n_pr"]
use_populations = true
compute_qfi = false
derivative = "semigroup"

[plan.fixed]
n_tot = 1.0

[[plan.axes]]
param = "gamma_srs"
grid = { log_start = 1e-4, log_stop = 1e-2, points = 5 }
"#;

#[test]
fn missing_arguments_exit_with_usage_error() {
    let dir = tmpdir("usage");
    let out = run(&[], &dir);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_preset_exits_with_config_error() {
    let dir = tmpdir("preset");
    let out = run(&["--preset", "fig9", "--out", "o"], &dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
}

#[test]
fn invalid_config_exits_with_config_error() {
    let dir = tmpdir("badcfg");
    std::fs::write(dir.join("job.toml"), "command = \"curve\"\n").unwrap();
    let out = run(&["--config", "job.toml", "--out", "o"], &dir);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn curve_job_writes_deterministic_artifacts() {
    let dir = tmpdir("curve");
    std::fs::write(dir.join("job.toml"), SMALL_CURVE).unwrap();

    let out = run(&["--config", "job.toml", "--out", "a", "--threads", "1"], &dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv_a = std::fs::read(dir.join("a/curve.csv")).unwrap();
    assert!(std::fs::read(dir.join("a/curve.json")).is_ok());

    // same seed, four worker threads: byte-identical output
    let out = run(&["--config", "job.toml", "--out", "b", "--threads", "4"], &dir);
    assert_eq!(out.status.code(), Some(0));
    let csv_b = std::fs::read(dir.join("b/curve.csv")).unwrap();
    assert_eq!(csv_a, csv_b);

    // the env var is the fallback for --threads
    let out = Command::new(bin())
        .args(["--config", "job.toml", "--out", "c"])
        .current_dir(&dir)
        .env("SRS_QMETRO_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.join("c/curve.csv")).unwrap(), csv_a);

    // a different seed changes the bytes of optimized plans only; this
    // grid plan must stay identical
    let out = run(&["--config", "job.toml", "--out", "d", "--seed", "99"], &dir);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.join("d/curve.csv")).unwrap(), csv_a);

    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("# srs-qmetro curve v1\n"));
    let header = text.lines().nth(1).unwrap();
    assert_eq!(
        header,
        "label,gamma_srs,h_srs,n_tot,family,alpha_pu_sq,alpha_pr_sq,n_sq,r_tms,phase_pr,phase_zeta,eta_pu,eta_pr,qfi,qfi_detected,mom_dn,mom_n_pr,snr,flags"
    );
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn lineshape_job_reports_resonant_couplings() {
    let dir = tmpdir("lineshape");
    std::fs::write(
        dir.join("job.toml"),
        r#"
command = "lineshape"

[lineshape]
phi_samples = 32

[lineshape.params]
n_molecules = 10
eps_pu = 1.0
eps_pr = 1.0
lines = [{ omega_line = 2.0, gamma_line = 0.08, polarizability_sq = 0.5 }]

[lineshape.pump]
center_freq = 12.0
bandwidth = 0.5

[lineshape.probe]
center_freq = 10.0
bandwidth = 0.5
"#,
    )
    .unwrap();
    let out = run(&["--config", "job.toml", "--out", "o"], &dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("o/lineshape.json")).unwrap()).unwrap();
    let gamma = json["gamma_srs"].as_f64().unwrap();
    let h = json["h_srs"].as_f64().unwrap();
    assert!(gamma > 0.0);
    assert!(h.abs() <= 1e-8 * gamma);
    let csv = std::fs::read_to_string(dir.join("o/lineshape.csv")).unwrap();
    assert_eq!(csv.lines().count(), 34); // schema + header + 32 samples
}

#[test]
fn optimize_job_writes_record() {
    let dir = tmpdir("optimize");
    std::fs::write(
        dir.join("job.toml"),
        r#"
command = "optimize"
seed = 3

[optimize]
family = "coherent-coherent"
n_tot = 1.0
gamma_srs = 2e-3
target = { mom = "n_pr" }
starts = 4
derivative = "semigroup"
"#,
    )
    .unwrap();
    let out = run(&["--config", "job.toml", "--out", "o"], &dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("o/optimize.json")).unwrap()).unwrap();
    // small budgets favor spontaneous scattering
    assert!(json["alpha_pr_sq"].as_f64().unwrap() < 0.01);
    assert!(json["converged"].as_bool().unwrap());
}

const FAST_ACCEPT: &str = r#"
command = "accept"
seed = 11

[accept]
only = [3, 4, 8]
"#;

#[test]
fn accept_subset_passes_and_reports() {
    let dir = tmpdir("accept");
    std::fs::write(dir.join("job.toml"), FAST_ACCEPT).unwrap();
    let out = run(&["--config", "job.toml", "--out", "o"], &dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("criterion  3 [PASS]"));
    assert!(stdout.contains("criterion  8 [PASS]"));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("o/accept.json")).unwrap()).unwrap();
    assert!(json["all_pass"].as_bool().unwrap());
}

#[test]
fn tampered_tolerance_fails_with_named_criterion() {
    let dir = tmpdir("tamper");
    std::fs::write(
        dir.join("job.toml"),
        r#"
command = "accept"
seed = 11

[accept]
only = [4]
qfi_oracle_rel_tol = 1e-20
"#,
    )
    .unwrap();
    let out = run(&["--config", "job.toml", "--out", "o"], &dir);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("criterion  4 [FAIL]"), "{stdout}");
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("o/accept.json")).unwrap()).unwrap();
    assert!(!json["all_pass"].as_bool().unwrap());
}

#[test]
fn accept_verdict_is_seed_robust() {
    let dir = tmpdir("seeds");
    std::fs::write(dir.join("job.toml"), FAST_ACCEPT).unwrap();
    for seed in ["1", "2", "3"] {
        let out = run(&["--config", "job.toml", "--out", "o", "--seed", seed], &dir);
        assert_eq!(out.status.code(), Some(0), "seed {seed} changed the verdict");
    }
}

#[test]
fn list_presets_names_the_figures() {
    let dir = tmpdir("list");
    let out = run(&["--list-presets"], &dir);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in ["fig2a", "fig2b", "fig3", "fig4"] {
        assert!(stdout.contains(name));
    }
}

#[test]
fn explicitly_empty_grid_yields_header_only_csv() {
    let dir = tmpdir("empty");
    std::fs::write(
        dir.join("job.toml"),
        r#"
command = "curve"
seed = 1

[[plan]]
label = "empty"
family = "two-mode-squeezed"
observables = ["dn"]

[plan.fixed]
n_tot = 1.0

[[plan.axes]]
param = "gamma_srs"
grid = { values = [] }
"#,
    )
    .unwrap();
    let out = run(&["--config", "job.toml", "--out", "o"], &dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("o/curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2); // schema comment + header only
}
