//! Command execution and deterministic artifact emission: byte-stable CSV
//! for curves and sweeps, JSON for reports and verdicts.

use std::fmt::Write as _;

use serde::Serialize;

use crate::channel::ChannelCache;
use crate::config::{Command, CurveKind, CurvePlanToml, JobConfig};
use crate::error::{Error, Result};
use crate::lineshape;
use crate::metrology::{
    evaluate, EvalRequest, FisherResult, MomValue, ObservableKind, DEFAULT_MAX_JOINT_DIM,
};
use crate::optimizer::{
    crossover_scan, optimize_probe, run_sweep, CellOutcome, OptimizeSpec, SweepCell,
};
use crate::states::{mean_total_photons, ProbeFamily, ProbeSpec};

pub const CURVE_SCHEMA_VERSION: &str = "srs-qmetro curve v1";
pub const CROSSOVER_SCHEMA_VERSION: &str = "srs-qmetro crossover v1";
pub const LINESHAPE_SCHEMA_VERSION: &str = "srs-qmetro lineshape v1";

/// One output file produced by a command.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub filename: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub artifacts: Vec<Artifact>,
    /// Human-readable lines for stdout.
    pub summary: Vec<String>,
    /// False only when an accept run had failing criteria.
    pub accept_passed: bool,
}

/// Exponent-form float formatting: shortest round-trip, deterministic,
/// uniform across magnitudes.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{x:e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn fmt_mom(v: &MomValue) -> String {
    match v {
        MomValue::Finite(x) => fmt_f64(*x),
        MomValue::Divergent { .. } => "inf".to_string(),
    }
}

fn sanitize_flag(msg: &str) -> String {
    msg.replace([',', ';', '\n'], " ")
}

/// Probe parameters in the relative-phase convention used by configs.
pub fn probe_descriptor(probe: &ProbeSpec) -> (f64, f64, f64, f64, f64, f64) {
    let alpha_pu_sq = probe.alpha_pu.norm_sqr();
    let alpha_pr_sq = probe.alpha_pr.norm_sqr();
    let n_sq = probe.zeta_pr.norm().sinh().powi(2);
    let phase_pr = if alpha_pr_sq > 0.0 {
        wrap_angle(probe.alpha_pr.arg() - probe.alpha_pu.arg())
    } else {
        0.0
    };
    let phase_zeta = if probe.zeta_pr.norm() > 0.0 {
        wrap_angle(probe.zeta_pr.arg() - 2.0 * probe.alpha_pr.arg())
    } else {
        0.0
    };
    (alpha_pu_sq, alpha_pr_sq, n_sq, probe.r_tms, phase_pr, phase_zeta)
}

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut x = a % tau;
    if x < 0.0 {
        x += tau;
    }
    x
}

fn family_name(family: ProbeFamily) -> &'static str {
    match family {
        ProbeFamily::CoherentCoherent => "coherent-coherent",
        ProbeFamily::CoherentSqueezedCoherent => "coherent-squeezed-coherent",
        ProbeFamily::TwoModeSqueezed => "two-mode-squeezed",
    }
}

/// Executed curve plan with its cells, kept structured for the
/// acceptance suite.
#[derive(Debug, Clone)]
pub struct PlanRun {
    pub label: String,
    pub family: ProbeFamily,
    pub observables: Vec<ObservableKind>,
    pub cells: Vec<SweepCell>,
}

impl PlanRun {
    pub fn ok_results(&self) -> impl Iterator<Item = &FisherResult> {
        self.cells.iter().filter_map(|c| match &c.outcome {
            CellOutcome::Ok(r) => Some(r.as_ref()),
            CellOutcome::Failed(_) => None,
        })
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Run every plan of a curve job. Grid plans sweep; optimized plans run a
/// per-point probe optimization along the n_tot axis and then evaluate
/// the optimum for the emitted row.
pub fn run_curve_plans(
    plans: &[CurvePlanToml],
    seed: u64,
    threads: usize,
) -> Result<Vec<PlanRun>> {
    let mut runs = Vec::with_capacity(plans.len());
    for plan in plans {
        let cache = ChannelCache::new();
        let observables = plan.observables()?;
        let cells = match plan.kind {
            CurveKind::Grid => run_sweep(&plan.to_sweep_plan()?, &cache, threads)?,
            CurveKind::Optimized => {
                let target = plan
                    .target
                    .as_ref()
                    .ok_or_else(|| Error::Config("optimized plan needs a target".into()))?
                    .to_target()?;
                let gamma = *plan
                    .fixed
                    .get("gamma_srs")
                    .ok_or_else(|| Error::Config("optimized plan needs fixed gamma_srs".into()))?;
                let h = plan.fixed.get("h_srs").copied().unwrap_or(0.0);
                let grid = plan.axes[0].grid.expand()?;
                let plan_seed = seed ^ fnv1a(&plan.label);
                grid.iter()
                    .enumerate()
                    .map(|(i, &n_tot)| {
                        let mut spec = OptimizeSpec::new(plan.family, n_tot, gamma, target);
                        spec.h = h;
                        spec.eta_pu = plan.eta_pu;
                        spec.eta_pr = plan.eta_pr;
                        spec.fixed_n_sq = plan.fixed_n_sq;
                        spec.max_probe_fraction = plan.max_probe_fraction;
                        spec.starts = plan.starts;
                        spec.seed = plan_seed.wrapping_add(i as u64);
                        spec.eps_trunc = plan.eps_trunc;
                        let outcome = match optimize_probe(&spec, &cache) {
                            Err(e) => CellOutcome::Failed(e.to_string()),
                            Ok(rec) => {
                                let req = EvalRequest {
                                    probe: rec.best_params,
                                    gamma,
                                    h,
                                    eta_pu: plan.eta_pu,
                                    eta_pr: plan.eta_pr,
                                    observables: observables.clone(),
                                    compute_qfi: plan.compute_qfi,
                                    eps_trunc: plan.eps_trunc,
                                    max_joint_dim: DEFAULT_MAX_JOINT_DIM,
                                    derivative: plan.derivative,
                                };
                                match evaluate(&req, &cache) {
                                    Ok(res) => CellOutcome::Ok(Box::new(res)),
                                    Err(e) => CellOutcome::Failed(e.to_string()),
                                }
                            }
                        };
                        SweepCell { index: i, coords: vec![n_tot], outcome }
                    })
                    .collect()
            }
        };
        runs.push(PlanRun { label: plan.label.clone(), family: plan.family, observables, cells });
    }
    Ok(runs)
}

/// Header-stable CSV over all plans of a curve job.
pub fn curve_csv(runs: &[PlanRun]) -> Vec<u8> {
    // union of observables in first-seen order
    let mut obs_names: Vec<&'static str> = Vec::new();
    for run in runs {
        for obs in &run.observables {
            if !obs_names.contains(&obs.name()) {
                obs_names.push(obs.name());
            }
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "# {CURVE_SCHEMA_VERSION}");
    let mut header = String::from(
        "label,gamma_srs,h_srs,n_tot,family,alpha_pu_sq,alpha_pr_sq,n_sq,r_tms,phase_pr,phase_zeta,eta_pu,eta_pr,qfi,qfi_detected",
    );
    for name in &obs_names {
        let _ = write!(header, ",mom_{name}");
    }
    header.push_str(",snr,flags");
    let _ = writeln!(out, "{header}");

    for run in runs {
        for cell in &run.cells {
            match &cell.outcome {
                CellOutcome::Ok(res) => {
                    let (a_pu, a_pr, n_sq, r_tms, ph_pr, ph_z) = probe_descriptor(&res.probe);
                    let mut row = format!(
                        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                        run.label,
                        fmt_f64(res.gamma_srs),
                        fmt_f64(res.h_srs),
                        fmt_f64(res.n_tot),
                        family_name(res.probe.family),
                        fmt_f64(a_pu),
                        fmt_f64(a_pr),
                        fmt_f64(n_sq),
                        fmt_f64(r_tms),
                        fmt_f64(ph_pr),
                        fmt_f64(ph_z),
                        fmt_f64(res.eta_pu),
                        fmt_f64(res.eta_pr),
                        fmt_opt(res.qfi),
                        fmt_opt(res.qfi_detected),
                    );
                    for name in &obs_names {
                        row.push(',');
                        if let Some(v) = res.mom_value(name) {
                            row.push_str(&fmt_mom(&v));
                        }
                    }
                    row.push(',');
                    row.push_str(&fmt_opt(res.snr));
                    row.push(',');
                    let mut flags = res.flags.clone();
                    flags.sort();
                    row.push_str(&flags.join(";"));
                    let _ = writeln!(out, "{row}");
                }
                CellOutcome::Failed(msg) => {
                    let mut row = format!("{},", run.label);
                    // coordinates are lost for failed cells; keep the label
                    // and reason so downstream tooling can count them
                    for _ in 0..13 {
                        row.push(',');
                    }
                    for _ in &obs_names {
                        row.push(',');
                    }
                    row.push(',');
                    let _ = write!(row, "cell_failed:{}", sanitize_flag(msg));
                    let _ = writeln!(out, "{row}");
                }
            }
        }
    }
    out.into_bytes()
}

#[derive(Serialize)]
struct CurveSummary<'a> {
    schema: &'static str,
    plans: Vec<PlanSummary<'a>>,
}

#[derive(Serialize)]
struct PlanSummary<'a> {
    label: &'a str,
    family: &'static str,
    cells: usize,
    failed: usize,
}

pub fn curve_json(runs: &[PlanRun]) -> Vec<u8> {
    let summary = CurveSummary {
        schema: CURVE_SCHEMA_VERSION,
        plans: runs
            .iter()
            .map(|r| PlanSummary {
                label: &r.label,
                family: family_name(r.family),
                cells: r.cells.len(),
                failed: r
                    .cells
                    .iter()
                    .filter(|c| matches!(c.outcome, CellOutcome::Failed(_)))
                    .count(),
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&summary).expect("serializable");
    bytes.push(b'\n');
    bytes
}

/// Execute a parsed job. `seed`/`threads` are the CLI-resolved values.
pub fn run_command(cfg: &JobConfig, seed: u64, threads: usize) -> Result<CommandOutput> {
    cfg.validate()?;
    match cfg.command {
        Command::Curve => {
            let runs = run_curve_plans(&cfg.plans, seed, threads)?;
            let total: usize = runs.iter().map(|r| r.cells.len()).sum();
            let failed: usize = runs
                .iter()
                .flat_map(|r| r.cells.iter())
                .filter(|c| matches!(c.outcome, CellOutcome::Failed(_)))
                .count();
            if total > 0 && failed == total {
                return Err(Error::Integrity("every curve cell failed".into()));
            }
            Ok(CommandOutput {
                artifacts: vec![
                    Artifact { filename: "curve.csv".into(), bytes: curve_csv(&runs) },
                    Artifact { filename: "curve.json".into(), bytes: curve_json(&runs) },
                ],
                summary: vec![format!("curve: {} plans, {} cells, {} failed", runs.len(), total, failed)],
                accept_passed: true,
            })
        }
        Command::Sweep => {
            let plan_toml = cfg.sweep.as_ref().expect("validated");
            let runs = run_curve_plans(std::slice::from_ref(plan_toml), seed, threads)?;
            let failed: usize = runs[0]
                .cells
                .iter()
                .filter(|c| matches!(c.outcome, CellOutcome::Failed(_)))
                .count();
            if !runs[0].cells.is_empty() && failed == runs[0].cells.len() {
                return Err(Error::Integrity("every sweep cell failed".into()));
            }
            Ok(CommandOutput {
                artifacts: vec![
                    Artifact { filename: "sweep.csv".into(), bytes: curve_csv(&runs) },
                    Artifact { filename: "sweep.json".into(), bytes: curve_json(&runs) },
                ],
                summary: vec![format!("sweep: {} cells, {failed} failed", runs[0].cells.len())],
                accept_passed: true,
            })
        }
        Command::Lineshape => run_lineshape(cfg),
        Command::Optimize => {
            let job = cfg.optimize.as_ref().expect("validated");
            let cache = ChannelCache::new();
            let spec = job.to_spec(seed)?;
            let record = optimize_probe(&spec, &cache)?;
            let (a_pu, a_pr, n_sq, r_tms, ph_pr, ph_z) = probe_descriptor(&record.best_params);
            #[derive(Serialize)]
            struct OptimumJson {
                schema: &'static str,
                target: String,
                best_value: f64,
                n_tot: f64,
                family: &'static str,
                alpha_pu_sq: f64,
                alpha_pr_sq: f64,
                n_sq: f64,
                r_tms: f64,
                phase_pr: f64,
                phase_zeta: f64,
                iterations: usize,
                converged: bool,
                starts: usize,
            }
            let json = OptimumJson {
                schema: "srs-qmetro optimize v1",
                target: format!("{:?}", record.target),
                best_value: record.best_value,
                n_tot: record.n_tot,
                family: family_name(record.best_params.family),
                alpha_pu_sq: a_pu,
                alpha_pr_sq: a_pr,
                n_sq,
                r_tms,
                phase_pr: ph_pr,
                phase_zeta: ph_z,
                iterations: record.iterations,
                converged: record.converged,
                starts: record.starts,
            };
            let mut bytes = serde_json::to_vec_pretty(&json).expect("serializable");
            bytes.push(b'\n');
            Ok(CommandOutput {
                artifacts: vec![Artifact { filename: "optimize.json".into(), bytes }],
                summary: vec![format!(
                    "optimize: best {} = {}",
                    json.target,
                    fmt_f64(record.best_value)
                )],
                accept_passed: true,
            })
        }
        Command::Crossover => {
            let job = cfg.crossover.as_ref().expect("validated");
            let report = crossover_scan(&job.to_config(seed)?)?;
            let mut csv = String::new();
            let _ = writeln!(csv, "# {CROSSOVER_SCHEMA_VERSION}");
            let _ = writeln!(csv, "gamma,n_tot,opt_alpha_pr_sq,best_value");
            for row in &report.rows {
                for cell in &row.cells {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{}",
                        fmt_f64(row.gamma),
                        fmt_f64(cell.n_tot),
                        fmt_f64(cell.opt_alpha_pr_sq),
                        fmt_f64(cell.best_value)
                    );
                }
            }
            let mut json = serde_json::to_vec_pretty(&report).expect("serializable");
            json.push(b'\n');
            let summary = match report.fit_slope {
                Some(s) => format!("crossover: fitted log-log slope {}", fmt_f64(s)),
                None => "crossover: fewer than two uncensored rows, no fit".to_string(),
            };
            Ok(CommandOutput {
                artifacts: vec![
                    Artifact { filename: "crossover.csv".into(), bytes: csv.into_bytes() },
                    Artifact { filename: "crossover.json".into(), bytes: json },
                ],
                summary: vec![summary],
                accept_passed: true,
            })
        }
        Command::Accept => {
            let mut accept_cfg = cfg.accept.clone().unwrap_or_default();
            accept_cfg.seed = seed;
            if accept_cfg.threads <= 1 {
                accept_cfg.threads = threads;
            }
            let results = crate::acceptance::run_all(&accept_cfg);
            let all_pass = results.iter().all(|r| r.pass);
            #[derive(Serialize)]
            struct Verdict<'a> {
                schema: &'static str,
                seed: u64,
                all_pass: bool,
                criteria: &'a [crate::acceptance::CriterionResult],
            }
            let verdict =
                Verdict { schema: "srs-qmetro accept v1", seed: accept_cfg.seed, all_pass, criteria: &results };
            let mut bytes = serde_json::to_vec_pretty(&verdict).expect("serializable");
            bytes.push(b'\n');
            let mut summary: Vec<String> = results
                .iter()
                .map(|r| {
                    format!(
                        "criterion {:2} [{}] {}: {}",
                        r.id,
                        if r.pass { "PASS" } else { "FAIL" },
                        r.name,
                        r.details
                    )
                })
                .collect();
            summary.push(if all_pass {
                "acceptance: all criteria passed".to_string()
            } else {
                "acceptance: FAILURES present".to_string()
            });
            Ok(CommandOutput {
                artifacts: vec![Artifact { filename: "accept.json".into(), bytes }],
                summary,
                accept_passed: all_pass,
            })
        }
    }
}

fn run_lineshape(cfg: &JobConfig) -> Result<CommandOutput> {
    let job = cfg.lineshape.as_ref().expect("validated");
    let gamma_srs = lineshape::compute_gamma_srs(&job.params, &job.pump, &job.probe)?;
    let h_srs = lineshape::compute_h_srs(&job.params, &job.pump, &job.probe)?;

    // |Phi|^2 samples over the union window of all lines
    let mu = job.pump.center_freq - job.probe.center_freq;
    let sc = (job.pump.bandwidth.powi(2) + job.probe.bandwidth.powi(2)).sqrt();
    let mut lo = mu - 8.0 * sc;
    let mut hi = mu + 8.0 * sc;
    for line in &job.params.lines {
        lo = lo.min(line.omega_line - 20.0 * line.gamma_line);
        hi = hi.max(line.omega_line + 20.0 * line.gamma_line);
    }
    let mut csv = String::new();
    let _ = writeln!(csv, "# {LINESHAPE_SCHEMA_VERSION}");
    let _ = writeln!(csv, "omega,phi_abs_sq");
    let n = job.phi_samples;
    for i in 0..n {
        let w = lo + (hi - lo) * i as f64 / (n as f64 - 1.0);
        let phi = lineshape::two_photon_spectral_density(&job.pump, &job.probe, w)?;
        let _ = writeln!(csv, "{},{}", fmt_f64(w), fmt_f64(phi * phi));
    }

    #[derive(Serialize)]
    struct LineshapeJson {
        schema: &'static str,
        gamma_srs: f64,
        h_srs: f64,
        window: (f64, f64),
        n_lines: usize,
    }
    let json = LineshapeJson {
        schema: LINESHAPE_SCHEMA_VERSION,
        gamma_srs,
        h_srs,
        window: (lo, hi),
        n_lines: job.params.lines.len(),
    };
    let mut bytes = serde_json::to_vec_pretty(&json).expect("serializable");
    bytes.push(b'\n');
    Ok(CommandOutput {
        artifacts: vec![
            Artifact { filename: "lineshape.json".into(), bytes },
            Artifact { filename: "lineshape.csv".into(), bytes: csv.into_bytes() },
        ],
        summary: vec![format!(
            "lineshape: gamma_srs = {}, h_srs = {}",
            fmt_f64(gamma_srs),
            fmt_f64(h_srs)
        )],
        accept_passed: true,
    })
}

/// n_tot helper for rows coming from optimized plans.
pub fn row_n_tot(res: &FisherResult) -> f64 {
    mean_total_photons(&res.probe)
}
