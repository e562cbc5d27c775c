//! Constrained sweeps over probe parameters and derivative-free probe
//! optimization at fixed photon budget, including the spontaneous to
//! stimulated crossover scan.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelCache;
use crate::error::{Error, Result};
use crate::fock::DEFAULT_EPS_TRUNC;
use crate::metrology::{
    evaluate, evaluate_mom_populations, DerivativeMode, EvalRequest, FisherResult, MomValue,
    ObservableKind, DEFAULT_MAX_JOINT_DIM, POPULATIONS_MAX_JOINT_DIM,
};
use crate::simplex::{minimize, SimplexOptions};
use crate::states::{mean_total_photons, ProbeFamily, ProbeSpec};

/// Grid axis over one named parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxisSpec {
    pub param: String,
    pub grid: Vec<f64>,
}

/// Declarative sweep: family, pinned values, axes (row-major), detection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPlan {
    pub family: ProbeFamily,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub axes: Vec<AxisSpec>,
    pub observables: Vec<ObservableKind>,
    #[serde(default = "one")]
    pub eta_pu: f64,
    #[serde(default = "one")]
    pub eta_pr: f64,
    #[serde(default = "yes")]
    pub compute_qfi: bool,
    /// MoM-only populations fast path (diagonal observables).
    #[serde(default)]
    pub use_populations: bool,
    #[serde(default = "default_eps")]
    pub eps_trunc: f64,
    #[serde(default)]
    pub derivative: DerivativeMode,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_eps() -> f64 {
    DEFAULT_EPS_TRUNC
}

const PARAM_NAMES: &[&str] = &[
    "gamma_srs",
    "h_srs",
    "n_tot",
    "alpha_pu_sq",
    "alpha_pr_sq",
    "n_sq",
    "phase_pr",
    "phase_zeta",
    "r_tms",
];

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for name in self.fixed.keys().chain(self.axes.iter().map(|a| &a.param)) {
            if !PARAM_NAMES.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown sweep parameter '{name}'")));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("parameter '{name}' appears twice")));
            }
        }
        for axis in &self.axes {
            if axis.grid.is_empty() {
                return Err(Error::Config(format!("axis '{}' has an empty grid", axis.param)));
            }
            if axis.grid.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("axis '{}' has non-finite values", axis.param)));
            }
        }
        if self.observables.is_empty() {
            return Err(Error::Config("at least one observable is required".into()));
        }
        if !(0.0..=1.0).contains(&self.eta_pu) || !(0.0..=1.0).contains(&self.eta_pr) {
            return Err(Error::Config("eta must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.grid.len()).product()
    }
}

/// Build a probe spec plus channel couplings from named parameters. The
/// relative-phase convention keeps alpha_pu real, phase_pr = arg(alpha_pr)
/// and phase_zeta = theta_zeta - 2 arg(alpha_pr), so phase_zeta = 0 is the
/// number-squeezed choice.
pub fn probe_from_params(
    family: ProbeFamily,
    params: &BTreeMap<String, f64>,
) -> Result<(ProbeSpec, f64, f64)> {
    let get = |k: &str| params.get(k).copied();
    let gamma = get("gamma_srs")
        .ok_or_else(|| Error::Config("gamma_srs is required".into()))?;
    let h = get("h_srs").unwrap_or(0.0);

    let probe = match family {
        ProbeFamily::TwoModeSqueezed => {
            let r = if let Some(r) = get("r_tms") {
                r
            } else {
                let n_tot = get("n_tot").ok_or_else(|| {
                    Error::Config("TMS probes need n_tot or r_tms".into())
                })?;
                if n_tot < 0.0 {
                    return Err(Error::InvalidParameter("n_tot must be >= 0".into()));
                }
                (n_tot / 2.0).sqrt().asinh()
            };
            ProbeSpec::tms(r)
        }
        ProbeFamily::CoherentCoherent => {
            let alpha_pr_sq = get("alpha_pr_sq").unwrap_or(0.0);
            let alpha_pu_sq = match (get("alpha_pu_sq"), get("n_tot")) {
                (Some(v), _) => v,
                (None, Some(n_tot)) => n_tot - alpha_pr_sq,
                (None, None) => {
                    return Err(Error::Config(
                        "coherent probes need alpha_pu_sq or n_tot".into(),
                    ))
                }
            };
            if alpha_pu_sq < 0.0 || alpha_pr_sq < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "photon budget underflow: alpha_pu_sq = {alpha_pu_sq:.4}"
                )));
            }
            let phase_pr = get("phase_pr").unwrap_or(0.0);
            ProbeSpec::coherent(
                Complex64::new(alpha_pu_sq.sqrt(), 0.0),
                Complex64::from_polar(alpha_pr_sq.sqrt(), phase_pr),
            )
        }
        ProbeFamily::CoherentSqueezedCoherent => {
            let alpha_pr_sq = get("alpha_pr_sq").unwrap_or(0.0);
            let n_sq = get("n_sq").unwrap_or(0.0);
            if n_sq < 0.0 || alpha_pr_sq < 0.0 {
                return Err(Error::InvalidParameter("photon numbers must be >= 0".into()));
            }
            let alpha_pu_sq = match (get("alpha_pu_sq"), get("n_tot")) {
                (Some(v), _) => v,
                (None, Some(n_tot)) => n_tot - alpha_pr_sq - n_sq,
                (None, None) => {
                    return Err(Error::Config(
                        "squeezed-coherent probes need alpha_pu_sq or n_tot".into(),
                    ))
                }
            };
            if alpha_pu_sq < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "photon budget underflow: alpha_pu_sq = {alpha_pu_sq:.4}"
                )));
            }
            let phase_pr = get("phase_pr").unwrap_or(0.0);
            let phase_zeta = get("phase_zeta").unwrap_or(0.0);
            let r = n_sq.sqrt().asinh();
            ProbeSpec::squeezed_coherent(
                Complex64::new(alpha_pu_sq.sqrt(), 0.0),
                Complex64::from_polar(alpha_pr_sq.sqrt(), phase_pr),
                Complex64::from_polar(r, phase_zeta + 2.0 * phase_pr),
            )
        }
    };
    probe.validate()?;
    Ok((probe, gamma, h))
}

/// One evaluated grid cell; failures keep their coordinates and reason.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub index: usize,
    pub coords: Vec<f64>,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone)]
pub enum CellOutcome {
    Ok(Box<FisherResult>),
    Failed(String),
}

/// Evaluate every grid point of the plan, row-major over the axes.
/// Cells are independent; `threads` workers pull cells from an atomic
/// counter and results are reassembled by index, so the output ordering
/// and values do not depend on the thread count.
pub fn run_sweep(plan: &SweepPlan, cache: &ChannelCache, threads: usize) -> Result<Vec<SweepCell>> {
    plan.validate()?;
    let total = plan.cell_count();
    let dims_of_axes: Vec<usize> = plan.axes.iter().map(|a| a.grid.len()).collect();

    let cell_params = |flat: usize| -> (Vec<f64>, BTreeMap<String, f64>) {
        let mut rem = flat;
        let mut coords = Vec::with_capacity(plan.axes.len());
        let mut params = plan.fixed.clone();
        for (axis_i, axis) in plan.axes.iter().enumerate().rev() {
            let n = dims_of_axes[axis_i];
            let idx = rem % n;
            rem /= n;
            coords.push(axis.grid[idx]);
            params.insert(axis.param.clone(), axis.grid[idx]);
        }
        coords.reverse();
        (coords, params)
    };

    let evaluate_cell = |flat: usize| -> SweepCell {
        let (coords, params) = cell_params(flat);
        let outcome = match probe_from_params(plan.family, &params) {
            Err(e) => CellOutcome::Failed(e.to_string()),
            Ok((probe, gamma, h)) => {
                let req = EvalRequest {
                    probe,
                    gamma,
                    h,
                    eta_pu: plan.eta_pu,
                    eta_pr: plan.eta_pr,
                    observables: plan.observables.clone(),
                    compute_qfi: plan.compute_qfi && !plan.use_populations,
                    eps_trunc: plan.eps_trunc,
                    max_joint_dim: if plan.use_populations {
                        POPULATIONS_MAX_JOINT_DIM
                    } else {
                        DEFAULT_MAX_JOINT_DIM
                    },
                    derivative: plan.derivative,
                };
                let run = if plan.use_populations {
                    evaluate_mom_populations(&req, cache)
                } else {
                    evaluate(&req, cache)
                };
                match run {
                    Ok(res) => CellOutcome::Ok(Box::new(res)),
                    Err(e) => CellOutcome::Failed(e.to_string()),
                }
            }
        };
        SweepCell { index: flat, coords, outcome }
    };

    let threads = threads.max(1);
    if threads == 1 || total <= 1 {
        return Ok((0..total).map(evaluate_cell).collect());
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SweepCell>>> = Mutex::new((0..total).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(total) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= total {
                    break;
                }
                let cell = evaluate_cell(i);
                slots.lock().unwrap()[i] = Some(cell);
            });
        }
    });
    let cells = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|c| c.expect("cell not evaluated"))
        .collect();
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizeTarget {
    Qfi,
    Mom(ObservableKind),
    Snr(ObservableKind),
}

impl OptimizeTarget {
    fn observable(&self) -> ObservableKind {
        match self {
            OptimizeTarget::Qfi => ObservableKind::NumberDifference,
            OptimizeTarget::Mom(k) | OptimizeTarget::Snr(k) => *k,
        }
    }
}

/// Probe-optimization request at a fixed photon budget.
#[derive(Debug, Clone)]
pub struct OptimizeSpec {
    pub family: ProbeFamily,
    pub n_tot: f64,
    pub gamma: f64,
    pub h: f64,
    pub target: OptimizeTarget,
    pub eta_pu: f64,
    pub eta_pr: f64,
    /// Pin the squeezing photon number instead of optimizing it.
    pub fixed_n_sq: Option<f64>,
    /// Bound on |alpha_pr|^2 / n_tot explored by the search.
    pub max_probe_fraction: f64,
    pub starts: usize,
    pub seed: u64,
    pub eps_trunc: f64,
    pub max_iters: usize,
    pub derivative: DerivativeMode,
    /// Optimize the two relative phases as free parameters. Photon-number
    /// observables are phase-covariant under the channel, so scans that
    /// only need amplitudes may pin them to the number-squeezed choice.
    pub phases_free: bool,
}

impl OptimizeSpec {
    pub fn new(family: ProbeFamily, n_tot: f64, gamma: f64, target: OptimizeTarget) -> Self {
        OptimizeSpec {
            family,
            n_tot,
            gamma,
            h: 0.0,
            target,
            eta_pu: 1.0,
            eta_pr: 1.0,
            fixed_n_sq: None,
            max_probe_fraction: 1.0,
            starts: 8,
            seed: 1,
            eps_trunc: DEFAULT_EPS_TRUNC,
            max_iters: 300,
            derivative: DerivativeMode::default(),
            phases_free: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimumRecord {
    pub best_params: ProbeSpec,
    pub best_value: f64,
    pub target: OptimizeTarget,
    pub n_tot: f64,
    pub iterations: usize,
    pub converged: bool,
    pub starts: usize,
}

fn objective_value(
    spec: &OptimizeSpec,
    probe: ProbeSpec,
    cache: &ChannelCache,
) -> Result<f64> {
    let obs = spec.target.observable();
    let mut req = EvalRequest::new(probe, spec.gamma);
    req.h = spec.h;
    req.eta_pu = spec.eta_pu;
    req.eta_pr = spec.eta_pr;
    req.observables = vec![obs];
    req.eps_trunc = spec.eps_trunc;
    req.derivative = spec.derivative;
    match spec.target {
        OptimizeTarget::Qfi => {
            req.compute_qfi = true;
            let res = evaluate(&req, cache)?;
            Ok(res.qfi.unwrap_or(0.0))
        }
        OptimizeTarget::Mom(_) => {
            req.compute_qfi = false;
            req.max_joint_dim = POPULATIONS_MAX_JOINT_DIM;
            let res = evaluate_mom_populations(&req, cache)?;
            Ok(match res.mom[0].1 {
                MomValue::Finite(v) => v,
                MomValue::Divergent { .. } => f64::INFINITY,
            })
        }
        OptimizeTarget::Snr(_) => {
            req.compute_qfi = false;
            req.max_joint_dim = POPULATIONS_MAX_JOINT_DIM;
            let res = evaluate_mom_populations(&req, cache)?;
            Ok(res.snr.unwrap_or(0.0))
        }
    }
}

/// Translate an optimizer point to a probe spec. Fractions enter through
/// sin^2 so the photon-budget constraint holds exactly for every
/// candidate; phases are unconstrained angles.
fn probe_at(spec: &OptimizeSpec, x: &[f64]) -> Result<ProbeSpec> {
    let n_tot = spec.n_tot;
    match spec.family {
        ProbeFamily::TwoModeSqueezed => Ok(ProbeSpec::tms((n_tot / 2.0).sqrt().asinh())),
        ProbeFamily::CoherentCoherent => {
            let f_pr = spec.max_probe_fraction.min(1.0) * x[0].sin().powi(2);
            let alpha_pr_sq = n_tot * f_pr;
            let alpha_pu_sq = n_tot - alpha_pr_sq;
            let phase = if spec.phases_free { x[1] } else { 0.0 };
            Ok(ProbeSpec::coherent(
                Complex64::new(alpha_pu_sq.sqrt(), 0.0),
                Complex64::from_polar(alpha_pr_sq.sqrt(), phase),
            ))
        }
        ProbeFamily::CoherentSqueezedCoherent => {
            let (alpha_pu_sq, alpha_pr_sq, n_sq, phase_pr, phase_zeta) =
                if let Some(n_sq) = spec.fixed_n_sq {
                    if n_sq >= n_tot {
                        return Err(Error::InvalidParameter(format!(
                            "fixed n_sq = {n_sq} exhausts the photon budget {n_tot}"
                        )));
                    }
                    let headroom = (n_tot - n_sq).min(n_tot * spec.max_probe_fraction);
                    let alpha_pr_sq = headroom * x[0].sin().powi(2);
                    let (p1, p2) = if spec.phases_free { (x[1], x[2]) } else { (0.0, 0.0) };
                    (n_tot - n_sq - alpha_pr_sq, alpha_pr_sq, n_sq, p1, p2)
                } else {
                    let f_pu = x[0].sin().powi(2);
                    let rest = n_tot * (1.0 - f_pu);
                    let alpha_pr_sq = rest * x[1].sin().powi(2);
                    let n_sq = rest - alpha_pr_sq;
                    let (p1, p2) = if spec.phases_free { (x[2], x[3]) } else { (0.0, 0.0) };
                    (n_tot * f_pu, alpha_pr_sq, n_sq, p1, p2)
                };
            let r = n_sq.sqrt().asinh();
            Ok(ProbeSpec::squeezed_coherent(
                Complex64::new(alpha_pu_sq.sqrt(), 0.0),
                Complex64::from_polar(alpha_pr_sq.sqrt(), phase_pr),
                Complex64::from_polar(r, phase_zeta + 2.0 * phase_pr),
            ))
        }
    }
}

fn param_dim(spec: &OptimizeSpec) -> usize {
    let phases = |n: usize| if spec.phases_free { n } else { 0 };
    match spec.family {
        ProbeFamily::TwoModeSqueezed => 0,
        ProbeFamily::CoherentCoherent => 1 + phases(1),
        ProbeFamily::CoherentSqueezedCoherent => {
            if spec.fixed_n_sq.is_some() {
                1 + phases(2)
            } else {
                2 + phases(2)
            }
        }
    }
}

/// Multistart Nelder-Mead maximization of the target over the probe
/// family at fixed n_tot. Deterministically seeded; rerunning with the
/// same seed reproduces the optimum bit for bit.
pub fn optimize_probe(spec: &OptimizeSpec, cache: &ChannelCache) -> Result<OptimumRecord> {
    if spec.n_tot <= 0.0 {
        return Err(Error::InvalidParameter("n_tot must be > 0".into()));
    }
    if spec.starts == 0 {
        return Err(Error::InvalidParameter("need at least one start".into()));
    }
    let dim = param_dim(spec);
    if dim == 0 {
        let probe = probe_at(spec, &[])?;
        let value = objective_value(spec, probe, cache)?;
        return Ok(OptimumRecord {
            best_params: probe,
            best_value: value,
            target: spec.target,
            n_tot: spec.n_tot,
            iterations: 0,
            converged: true,
            starts: 1,
        });
    }

    let objective = |x: &[f64]| -> f64 {
        match probe_at(spec, x) {
            Ok(probe) => match objective_value(spec, probe, cache) {
                Ok(v) if v.is_finite() => -v,
                Ok(_) => f64::NEG_INFINITY,
                Err(_) => f64::INFINITY,
            },
            Err(_) => f64::INFINITY,
        }
    };

    let mut rng = crate::linalg::seeded_rng(spec.seed ^ 0x4f50_5449_4d49_5a45);
    let opts = SimplexOptions { max_iters: spec.max_iters, ..Default::default() };
    let mut best: Option<(f64, Vec<f64>, bool, usize)> = None;
    let mut total_iters = 0;
    let mut any_converged = false;
    for start in 0..spec.starts {
        // deterministic coverage first (spontaneous corner, balanced and
        // probe-heavy splits), then random starts
        let x0: Vec<f64> = match start {
            0 => vec![0.0; dim],
            1 => vec![std::f64::consts::FRAC_PI_4; dim],
            2 => vec![1.2; dim],
            _ => (0..dim)
                .map(|d| {
                    if is_phase_coordinate(spec, d) {
                        rng.random_range(0.0..std::f64::consts::TAU)
                    } else {
                        rng.random_range(0.0..std::f64::consts::FRAC_PI_2)
                    }
                })
                .collect(),
        };
        let scale: Vec<f64> = (0..dim)
            .map(|d| if is_phase_coordinate(spec, d) { 0.7 } else { 0.25 })
            .collect();
        let run = minimize(&objective, &x0, &scale, &opts);
        total_iters += run.iterations;
        any_converged |= run.converged;
        let candidate = (run.value, run.x, run.converged, run.iterations);
        best = Some(match best {
            None => candidate,
            Some(prev) => {
                if candidate.0 < prev.0 {
                    candidate
                } else {
                    prev
                }
            }
        });
    }
    let (neg_value, x, _conv, _iters) = best.unwrap();
    if !any_converged {
        return Err(Error::Optimization(format!(
            "no start converged within {} iterations (best value {:.6e})",
            spec.max_iters, -neg_value
        )));
    }
    let best_params = probe_at(spec, &x)?;
    let n_real = mean_total_photons(&best_params);
    if (n_real - spec.n_tot).abs() > 1e-8 * spec.n_tot.max(1.0) {
        return Err(Error::Integrity(format!(
            "optimizer violated the photon budget: {n_real} vs {}",
            spec.n_tot
        )));
    }
    Ok(OptimumRecord {
        best_params,
        best_value: -neg_value,
        target: spec.target,
        n_tot: spec.n_tot,
        iterations: total_iters,
        converged: any_converged,
        starts: spec.starts,
    })
}

fn is_phase_coordinate(spec: &OptimizeSpec, d: usize) -> bool {
    if !spec.phases_free {
        return false;
    }
    match spec.family {
        ProbeFamily::TwoModeSqueezed => false,
        ProbeFamily::CoherentCoherent => d == 1,
        ProbeFamily::CoherentSqueezedCoherent => {
            if spec.fixed_n_sq.is_some() {
                d >= 1
            } else {
                d >= 2
            }
        }
    }
}

/// Crossover-scan request: for each gamma, find the smallest n_tot where
/// the optimized coherent seed exceeds `threshold_frac * n_tot`.
#[derive(Debug, Clone)]
pub struct CrossoverConfig {
    pub family: ProbeFamily,
    pub gammas: Vec<f64>,
    pub n_tots: Vec<f64>,
    pub threshold_frac: f64,
    pub target: OptimizeTarget,
    pub eta_pu: f64,
    pub eta_pr: f64,
    pub fixed_n_sq: Option<f64>,
    pub max_probe_fraction: f64,
    pub starts: usize,
    pub seed: u64,
    pub eps_trunc: f64,
    /// Keep scanning beyond the crossover point (full table output).
    pub full_table: bool,
    pub derivative: DerivativeMode,
    pub phases_free: bool,
}

impl CrossoverConfig {
    pub fn new(family: ProbeFamily, gammas: Vec<f64>, n_tots: Vec<f64>) -> Self {
        CrossoverConfig {
            family,
            gammas,
            n_tots,
            threshold_frac: 0.01,
            target: OptimizeTarget::Mom(ObservableKind::ProbeNumber),
            eta_pu: 1.0,
            eta_pr: 1.0,
            fixed_n_sq: None,
            max_probe_fraction: 0.25,
            starts: 6,
            seed: 1,
            eps_trunc: DEFAULT_EPS_TRUNC,
            full_table: false,
            derivative: DerivativeMode::default(),
            // photon-number MoM objectives are phase-covariant; the scan
            // only needs the amplitude landscape
            phases_free: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossoverCell {
    pub n_tot: f64,
    pub opt_alpha_pr_sq: f64,
    pub best_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossoverRow {
    pub gamma: f64,
    pub cells: Vec<CrossoverCell>,
    /// Smallest scanned n_tot in the stimulated regime; None = censored.
    pub n_cr: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossoverReport {
    pub rows: Vec<CrossoverRow>,
    pub fit_slope: Option<f64>,
    pub fit_intercept: Option<f64>,
}

pub fn crossover_scan(cfg: &CrossoverConfig) -> Result<CrossoverReport> {
    if cfg.gammas.is_empty() || cfg.n_tots.is_empty() {
        return Err(Error::Config("crossover scan needs gamma and n_tot grids".into()));
    }
    let mut n_tots = cfg.n_tots.clone();
    n_tots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rows = Vec::new();
    for &gamma in &cfg.gammas {
        // fresh prepared-channel cache per row keeps the scan's memory flat
        let cache = ChannelCache::new();
        let cache = &cache;
        let mut cells = Vec::new();
        let mut n_cr = None;
        for &n_tot in &n_tots {
            if cfg.fixed_n_sq.map_or(false, |nsq| nsq >= n_tot) {
                continue;
            }
            let mut spec = OptimizeSpec::new(cfg.family, n_tot, gamma, cfg.target);
            spec.eta_pu = cfg.eta_pu;
            spec.eta_pr = cfg.eta_pr;
            spec.fixed_n_sq = cfg.fixed_n_sq;
            spec.max_probe_fraction = cfg.max_probe_fraction;
            spec.starts = cfg.starts;
            spec.seed = cfg.seed;
            spec.eps_trunc = cfg.eps_trunc;
            spec.derivative = cfg.derivative;
            spec.phases_free = cfg.phases_free;
            spec.max_iters = 140;
            let record = optimize_probe(&spec, cache)?;
            let opt_alpha_pr_sq = record.best_params.alpha_pr.norm_sqr();
            cells.push(CrossoverCell { n_tot, opt_alpha_pr_sq, best_value: record.best_value });
            if n_cr.is_none() && opt_alpha_pr_sq > cfg.threshold_frac * n_tot {
                n_cr = Some(n_tot);
                if !cfg.full_table {
                    break;
                }
            }
        }
        rows.push(CrossoverRow { gamma, cells, n_cr });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.n_cr.map(|n| (r.gamma, n)))
        .collect();
    let (fit_slope, fit_intercept) = if points.len() >= 2 {
        let (s, i) = fit_loglog(&points);
        (Some(s), Some(i))
    } else {
        (None, None)
    };
    Ok(CrossoverReport { rows, fit_slope, fit_intercept })
}

/// Least-squares slope and intercept of ln(y) against ln(x).
pub fn fit_loglog(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use approx::assert_abs_diff_eq;

    fn mini_plan() -> SweepPlan {
        let mut fixed = BTreeMap::new();
        fixed.insert("n_tot".to_string(), 1.0);
        SweepPlan {
            family: ProbeFamily::TwoModeSqueezed,
            fixed,
            axes: vec![AxisSpec {
                param: "gamma_srs".to_string(),
                grid: vec![1e-3, 1e-2, 1e-1],
            }],
            observables: vec![ObservableKind::NumberDifference],
            eta_pu: 1.0,
            eta_pr: 1.0,
            compute_qfi: true,
            use_populations: false,
            eps_trunc: DEFAULT_EPS_TRUNC,
            derivative: DerivativeMode::default(),
        }
    }

    #[test]
    fn sweep_plan_rejects_bad_parameters() {
        let mut plan = mini_plan();
        plan.axes[0].param = "bogus".into();
        assert!(plan.validate().is_err());
        let mut plan = mini_plan();
        plan.axes[0].grid.clear();
        assert!(plan.validate().is_err());
        let mut plan = mini_plan();
        plan.fixed.insert("gamma_srs".to_string(), 1.0);
        assert!(plan.validate().is_err());
    }

    #[test]
    fn one_point_sweep_reduces_to_evaluate() {
        let cache = ChannelCache::new();
        let mut plan = mini_plan();
        plan.axes[0].grid = vec![2e-3];
        let cells = run_sweep(&plan, &cache, 1).unwrap();
        assert_eq!(cells.len(), 1);
        let direct = {
            let probe = ProbeSpec::tms((0.5f64).sqrt().asinh());
            let req = EvalRequest::new(probe, 2e-3);
            evaluate(&req, &cache).unwrap()
        };
        match &cells[0].outcome {
            CellOutcome::Ok(res) => {
                assert_abs_diff_eq!(res.qfi.unwrap(), direct.qfi.unwrap(), epsilon = 1e-12);
            }
            CellOutcome::Failed(e) => panic!("cell failed: {e}"),
        }
    }

    #[test]
    fn tms_curve_is_monotone_in_gamma() {
        let cache = ChannelCache::new();
        let cells = run_sweep(&mini_plan(), &cache, 2).unwrap();
        let qfis: Vec<f64> = cells
            .iter()
            .map(|c| match &c.outcome {
                CellOutcome::Ok(r) => r.qfi.unwrap(),
                CellOutcome::Failed(e) => panic!("{e}"),
            })
            .collect();
        assert!(qfis[0] > qfis[1] && qfis[1] > qfis[2], "{qfis:?}");
    }

    #[test]
    fn sweep_is_thread_count_invariant() {
        let cache_a = ChannelCache::new();
        let cache_b = ChannelCache::new();
        let a = run_sweep(&mini_plan(), &cache_a, 1).unwrap();
        let b = run_sweep(&mini_plan(), &cache_b, 4).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            match (&x.outcome, &y.outcome) {
                (CellOutcome::Ok(rx), CellOutcome::Ok(ry)) => {
                    assert_eq!(rx.qfi.unwrap().to_bits(), ry.qfi.unwrap().to_bits());
                }
                _ => panic!("unexpected failure"),
            }
        }
    }

    #[test]
    fn budget_underflow_is_a_failed_cell_not_an_abort() {
        let cache = ChannelCache::new();
        let mut fixed = BTreeMap::new();
        fixed.insert("n_tot".to_string(), 1.0);
        fixed.insert("gamma_srs".to_string(), 2e-3);
        let plan = SweepPlan {
            family: ProbeFamily::CoherentCoherent,
            fixed,
            axes: vec![AxisSpec {
                param: "alpha_pr_sq".to_string(),
                grid: vec![0.5, 2.0],
            }],
            observables: vec![ObservableKind::ProbeNumber],
            eta_pu: 1.0,
            eta_pr: 1.0,
            compute_qfi: false,
            use_populations: true,
            eps_trunc: DEFAULT_EPS_TRUNC,
            derivative: DerivativeMode::default(),
        };
        let cells = run_sweep(&plan, &cache, 1).unwrap();
        assert!(matches!(cells[0].outcome, CellOutcome::Ok(_)));
        assert!(matches!(cells[1].outcome, CellOutcome::Failed(_)));
    }

    #[test]
    fn mom_is_invariant_under_global_phase_rotation() {
        // rotating both input displacements by the same angle commutes
        // with the channel and leaves photon-number moments unchanged
        let cache = ChannelCache::new();
        for phase in [0.0, 0.9, 2.2] {
            let base = ProbeSpec::coherent(c(0.8), Complex64::from_polar(0.5, 0.4));
            let rotated = ProbeSpec::coherent(
                Complex64::from_polar(0.8, phase),
                Complex64::from_polar(0.5, 0.4 + phase),
            );
            let mut req = EvalRequest::new(base, 2e-3);
            req.observables = vec![ObservableKind::ProbeNumber];
            req.compute_qfi = false;
            let a = evaluate(&req, &cache).unwrap();
            req.probe = rotated;
            let b = evaluate(&req, &cache).unwrap();
            let (va, vb) = (a.mom[0].1.as_f64(), b.mom[0].1.as_f64());
            assert!((va - vb).abs() / va.abs() < 1e-9, "{va} vs {vb}");
        }
    }

    #[test]
    fn coherent_optimum_is_spontaneous_at_small_budget() {
        let cache = ChannelCache::new();
        let spec = OptimizeSpec::new(
            ProbeFamily::CoherentCoherent,
            1.0,
            2e-3,
            OptimizeTarget::Mom(ObservableKind::ProbeNumber),
        );
        let rec = optimize_probe(&spec, &cache).unwrap();
        assert!(
            rec.best_params.alpha_pr.norm_sqr() < 0.01,
            "expected spontaneous optimum, got |alpha_pr|^2 = {}",
            rec.best_params.alpha_pr.norm_sqr()
        );
    }

    #[test]
    fn pinned_zero_squeezing_reproduces_coherent_optimum() {
        let cache = ChannelCache::new();
        let coherent = OptimizeSpec::new(
            ProbeFamily::CoherentCoherent,
            2.0,
            2e-3,
            OptimizeTarget::Mom(ObservableKind::ProbeNumber),
        );
        let mut squeezed = OptimizeSpec::new(
            ProbeFamily::CoherentSqueezedCoherent,
            2.0,
            2e-3,
            OptimizeTarget::Mom(ObservableKind::ProbeNumber),
        );
        squeezed.fixed_n_sq = Some(0.0);
        let a = optimize_probe(&coherent, &cache).unwrap();
        let b = optimize_probe(&squeezed, &cache).unwrap();
        let rel = (a.best_value - b.best_value).abs() / a.best_value;
        assert!(rel < 1e-6, "coherent {} vs pinned-zero squeezed {}", a.best_value, b.best_value);
    }

    #[test]
    fn squeezed_family_dominates_coherent_family() {
        let cache = ChannelCache::new();
        let coherent = OptimizeSpec::new(
            ProbeFamily::CoherentCoherent,
            2.0,
            2e-3,
            OptimizeTarget::Mom(ObservableKind::ProbeNumber),
        );
        let squeezed = OptimizeSpec::new(
            ProbeFamily::CoherentSqueezedCoherent,
            2.0,
            2e-3,
            OptimizeTarget::Mom(ObservableKind::ProbeNumber),
        );
        let a = optimize_probe(&coherent, &cache).unwrap();
        let b = optimize_probe(&squeezed, &cache).unwrap();
        assert!(
            b.best_value >= a.best_value * (1.0 - 1e-9),
            "squeezed {} < coherent {}",
            b.best_value,
            a.best_value
        );
    }

    #[test]
    fn optimizer_is_seed_reproducible() {
        let cache = ChannelCache::new();
        let spec = OptimizeSpec::new(
            ProbeFamily::CoherentSqueezedCoherent,
            1.5,
            5e-3,
            OptimizeTarget::Mom(ObservableKind::ProbeNumber),
        );
        let a = optimize_probe(&spec, &cache).unwrap();
        let b = optimize_probe(&spec, &cache).unwrap();
        assert_eq!(a.best_value.to_bits(), b.best_value.to_bits());
    }

    #[test]
    fn optimum_respects_photon_budget() {
        let cache = ChannelCache::new();
        let spec = OptimizeSpec::new(
            ProbeFamily::CoherentSqueezedCoherent,
            2.5,
            2e-3,
            OptimizeTarget::Mom(ObservableKind::ProbeNumber),
        );
        let rec = optimize_probe(&spec, &cache).unwrap();
        assert_abs_diff_eq!(mean_total_photons(&rec.best_params), 2.5, epsilon = 1e-8);
    }

    #[test]
    fn crossover_scan_single_gamma_single_row() {
        let mut cfg = CrossoverConfig::new(
            ProbeFamily::CoherentCoherent,
            vec![0.05],
            vec![1.0, 4.0, 16.0],
        );
        cfg.starts = 4;
        let report = crossover_scan(&cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].cells.len(), 3);
    }

    #[test]
    fn squeezing_lowers_the_crossover() {
        // at fixed gamma the crossover moves to smaller n_tot when a fixed
        // amount of squeezing is added to the probe
        let gamma = 0.05;
        let grid: Vec<f64> = (0..10).map(|k| 1.0 * 1.5f64.powi(k)).collect();
        let mut coh = CrossoverConfig::new(ProbeFamily::CoherentCoherent, vec![gamma], grid.clone());
        coh.starts = 4;
        let mut sq =
            CrossoverConfig::new(ProbeFamily::CoherentSqueezedCoherent, vec![gamma], grid);
        sq.fixed_n_sq = Some(0.2);
        sq.starts = 4;
        let r_coh = crossover_scan(&coh).unwrap();
        let r_sq = crossover_scan(&sq).unwrap();
        let n_coh = r_coh.rows[0].n_cr.expect("coherent crossover in range");
        let n_sq = r_sq.rows[0].n_cr.expect("squeezed crossover in range");
        assert!(n_sq < n_coh, "squeezed {n_sq} !< coherent {n_coh}");
    }

    #[test]
    fn loglog_fit_recovers_power_law() {
        let points: Vec<(f64, f64)> = [1e-3, 3e-3, 1e-2]
            .iter()
            .map(|&g| (g, 0.37 / g))
            .collect();
        let (slope, intercept) = fit_loglog(&points);
        assert_abs_diff_eq!(slope, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(intercept.exp(), 0.37, epsilon = 1e-12);
    }
}
