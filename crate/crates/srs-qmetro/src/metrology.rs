//! Quantum and method-of-moments Fisher information for the Raman gain
//! strength: channel-output derivatives by controlled finite differences,
//! QFI from the eigendecomposition of the state, MoM sensitivities for
//! named observables, and the per-point evaluation pipeline behind every
//! sweep row.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{
    apply_generator_matrix, apply_generator_populations, apply_loss_matrix,
    apply_loss_populations, ChannelCache, SrsParams,
};
use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockDims, Operator};
use crate::linalg::{
    c, hermitian_eigen, hermitian_part, hermiticity_deviation, one_norm, partial_hermitian_eig,
    CMat, HermitianEig,
};
use crate::states::{self, ProbeSpec};

/// Eigenvalue-sum cutoff in the QFI spectral sum.
pub const QFI_EIG_CUTOFF: f64 = 1e-12;
/// Variance floor below which a MoM sensitivity is reported divergent.
pub const MOM_VARIANCE_FLOOR: f64 = 1e-14;
/// Dense eigendecomposition up to this joint dimension, subspace
/// iteration above it.
const DENSE_EIG_MAX_DIM: usize = 700;
/// Joint-dimension cap for full-matrix evaluations.
pub const DEFAULT_MAX_JOINT_DIM: usize = 2800;
/// Joint-dimension cap for populations-only evaluations.
pub const POPULATIONS_MAX_JOINT_DIM: usize = 400_000;

/// Named measurement observables; all shipped ones are diagonal in the
/// joint Fock basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservableKind {
    /// n_pu - n_pr
    #[serde(rename = "dn")]
    NumberDifference,
    #[serde(rename = "n_pr")]
    ProbeNumber,
    #[serde(rename = "n_pu")]
    PumpNumber,
    #[serde(rename = "n_tot")]
    TotalNumber,
}

impl ObservableKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObservableKind::NumberDifference => "dn",
            ObservableKind::ProbeNumber => "n_pr",
            ObservableKind::PumpNumber => "n_pu",
            ObservableKind::TotalNumber => "n_tot",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dn" => Ok(ObservableKind::NumberDifference),
            "n_pr" => Ok(ObservableKind::ProbeNumber),
            "n_pu" => Ok(ObservableKind::PumpNumber),
            "n_tot" => Ok(ObservableKind::TotalNumber),
            other => Err(Error::Config(format!("unknown observable '{other}'"))),
        }
    }

    pub fn operator(&self, dims: FockDims) -> Result<Operator> {
        match self {
            ObservableKind::NumberDifference => Operator::number_difference(dims),
            ObservableKind::ProbeNumber => Operator::probe_number(dims),
            ObservableKind::PumpNumber => Operator::pump_number(dims),
            ObservableKind::TotalNumber => Operator::total_number(dims),
        }
    }

    pub fn diag_values(&self, dims: FockDims) -> Vec<f64> {
        (0..dims.joint())
            .map(|idx| {
                let (n_pu, n_pr) = dims.unpack(idx);
                match self {
                    ObservableKind::NumberDifference => n_pu as f64 - n_pr as f64,
                    ObservableKind::ProbeNumber => n_pr as f64,
                    ObservableKind::PumpNumber => n_pu as f64,
                    ObservableKind::TotalNumber => (n_pu + n_pr) as f64,
                }
            })
            .collect()
    }
}

/// MoM sensitivity value; divergences are first-class, never silent inf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MomValue {
    Finite(f64),
    /// Variance below the floor with a nonzero signal derivative.
    Divergent { derivative_sq: f64 },
}

impl MomValue {
    pub fn as_f64(&self) -> f64 {
        match self {
            MomValue::Finite(v) => *v,
            MomValue::Divergent { .. } => f64::INFINITY,
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, MomValue::Divergent { .. })
    }
}

/// One evaluated point of the sensitivity landscape.
#[derive(Debug, Clone, Serialize)]
pub struct FisherResult {
    pub gamma_srs: f64,
    pub h_srs: f64,
    /// QFI of the lossless channel output.
    pub qfi: Option<f64>,
    /// QFI of the detected (lossy) state when eta < 1; the MoM bound is
    /// checked against this one when present.
    pub qfi_detected: Option<f64>,
    /// Per-observable MoM sensitivities, in request order.
    pub mom: Vec<(String, MomValue)>,
    /// SNR per shot from the first requested observable.
    pub snr: Option<f64>,
    pub eta_pu: f64,
    pub eta_pr: f64,
    pub n_tot: f64,
    pub probe: ProbeSpec,
    pub flags: Vec<String>,
}

impl FisherResult {
    pub fn mom_value(&self, name: &str) -> Option<MomValue> {
        self.mom.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// MoM may not exceed the QFI of the measured state.
    pub fn check_mom_bound(&self) -> Result<()> {
        let bound = match (self.qfi_detected, self.qfi) {
            (Some(b), _) => b,
            (None, Some(b)) => b,
            (None, None) => return Ok(()),
        };
        for (name, value) in &self.mom {
            if let MomValue::Finite(v) = value {
                if *v > bound * (1.0 + 1e-6) {
                    return Err(Error::Integrity(format!(
                        "MoM({name}) = {v:.6e} exceeds QFI bound {bound:.6e}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// QFI from the spectral decomposition of rho:
/// F = sum over eigenpairs with lam_i + lam_j > cutoff of
///     2 |<i|drho|j>|^2 / (lam_i + lam_j).
pub fn qfi(rho: &DensityMatrix, drho: &CMat) -> Result<f64> {
    Ok(qfi_detailed(rho, drho, QFI_EIG_CUTOFF)?.value)
}

#[derive(Debug, Clone, Copy)]
pub struct QfiDetail {
    pub value: f64,
    /// True when moving the eigenvalue cutoff by one decade either way
    /// shifts the result by more than 1%.
    pub cutoff_sensitive: bool,
}

pub fn qfi_detailed(rho: &DensityMatrix, drho: &CMat, cutoff: f64) -> Result<QfiDetail> {
    let d = rho.dims.joint();
    if drho.nrows() != d || drho.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: format!("{d}x{d}"),
            got: format!("{}x{}", drho.nrows(), drho.ncols()),
        });
    }
    let scale = one_norm(drho).max(1e-300);
    if hermiticity_deviation(drho) > 1e-9 * scale {
        return Err(Error::NonHermitian { deviation: hermiticity_deviation(drho) });
    }
    let trace: Complex64 = drho.diagonal().iter().sum();
    if trace.norm() > 1e-7 * scale {
        return Err(Error::Integrity(format!(
            "derivative trace {:.3e} is not negligible",
            trace.norm()
        )));
    }

    if d <= DENSE_EIG_MAX_DIM {
        let eig = hermitian_eigen(&rho.matrix);
        let m = eig.vectors.adjoint() * drho * &eig.vectors;
        let sum_at = |eps: f64| {
            let mut f = 0.0;
            for i in 0..d {
                for j in 0..d {
                    let denom = eig.values[i] + eig.values[j];
                    if denom > eps {
                        f += 2.0 * m[(i, j)].norm_sqr() / denom;
                    }
                }
            }
            f
        };
        let value = sum_at(cutoff);
        let lo = sum_at(cutoff * 10.0);
        let hi = sum_at(cutoff / 10.0);
        let cutoff_sensitive = (hi - lo).abs() > 0.01 * value.abs().max(1e-300);
        Ok(QfiDetail { value, cutoff_sensitive })
    } else {
        let eig = partial_hermitian_eig(&rho.matrix, 1e-14, 0);
        Ok(qfi_partial(&eig, drho, cutoff))
    }
}

/// QFI from a partial eigendecomposition: resolved-pair terms plus the
/// exact completion against the (numerically zero) complement, using
/// sum_j |<i|drho|j>|^2 = <i|drho^2|i>.
fn qfi_partial(eig: &HermitianEig, drho: &CMat, cutoff: f64) -> QfiDetail {
    let r = eig.values.len();
    let dv = drho * &eig.vectors;
    let m = eig.vectors.adjoint() * &dv;
    let row_norm_sq: Vec<f64> = (0..r).map(|i| dv.column(i).norm_squared()).collect();
    let sum_at = |eps: f64| {
        let mut f = 0.0;
        for i in 0..r {
            let mut in_basis = 0.0;
            for j in 0..r {
                let denom = eig.values[i] + eig.values[j];
                if denom > eps {
                    f += 2.0 * m[(i, j)].norm_sqr() / denom;
                }
                in_basis += m[(j, i)].norm_sqr();
            }
            // complement eigenvalues sit at numerical zero; both ordered
            // pair orientations (i, null) and (null, i) contribute
            if eig.values[i] > eps {
                let rest = (row_norm_sq[i] - in_basis).max(0.0);
                f += 4.0 * rest / eig.values[i];
            }
        }
        f
    };
    let value = sum_at(cutoff);
    let lo = sum_at(cutoff * 10.0);
    let hi = sum_at(cutoff / 10.0);
    QfiDetail { value, cutoff_sensitive: (hi - lo).abs() > 0.01 * value.abs().max(1e-300) }
}

/// MoM sensitivity |d<X>/d gamma|^2 / Var(X).
pub fn mom_fisher(rho: &DensityMatrix, drho: &CMat, obs: &Operator) -> Result<MomValue> {
    if !obs.is_hermitian() {
        return Err(Error::NonHermitian { deviation: hermiticity_deviation(&obs.matrix) });
    }
    let d = rho.dims.joint();
    let mut deriv = Complex64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            deriv += obs.matrix[(i, j)] * drho[(j, i)];
        }
    }
    let derivative_sq = deriv.re * deriv.re;
    let variance = rho.variance(obs)?;
    mom_from_parts(derivative_sq, variance)
}

fn mom_from_parts(derivative_sq: f64, variance: f64) -> Result<MomValue> {
    // derivatives below the finite-difference noise scale count as zero
    const DERIVATIVE_NOISE_SQ: f64 = 1e-18;
    if variance > MOM_VARIANCE_FLOOR {
        Ok(MomValue::Finite(derivative_sq / variance))
    } else if derivative_sq <= DERIVATIVE_NOISE_SQ {
        Ok(MomValue::Finite(0.0))
    } else {
        Ok(MomValue::Divergent { derivative_sq })
    }
}

/// SNR per shot, gamma * sqrt(F).
pub fn snr_per_shot(gamma: f64, fisher: f64) -> Result<f64> {
    if fisher < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "Fisher information must be >= 0, got {fisher}"
        )));
    }
    Ok(gamma * fisher.sqrt())
}

/// How the gamma derivative of the channel output is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeMode {
    /// Central finite differences with a Richardson consistency check.
    #[default]
    #[serde(rename = "fd")]
    FiniteDifference,
    /// Exact route at h = 0: d rho / d gamma = K1[rho(gamma)] with K1 the
    /// unit-rate generator, since the channel is exp(gamma K1).
    Semigroup,
}

/// Finite-difference step for the gamma derivative.
fn fd_step(gamma: f64) -> f64 {
    (1e-3 * gamma).max(1e-8)
}

struct DerivativeOutput {
    rho: DensityMatrix,
    drho: CMat,
    boundary: bool,
}

/// Channel output and its gamma derivative by central finite differences
/// with a Richardson consistency check; the step shrinks (a few times at
/// most) when the check detects a too-coarse step, and the extrapolated
/// derivative is returned.
fn channel_output_and_derivative(
    rho_in: &DensityMatrix,
    gamma: f64,
    h: f64,
    mode: DerivativeMode,
    cache: &ChannelCache,
) -> Result<DerivativeOutput> {
    let dims = rho_in.dims;
    let apply_at = |g: f64| -> Result<CMat> {
        let ch = cache.full_channel(&SrsParams::new(h, g)?, dims)?;
        ch.apply_matrix(&rho_in.matrix)
    };
    let rho_mat = apply_at(gamma)?;
    let rho = if dims.joint() <= 800 {
        DensityMatrix::new(dims, rho_mat)?
    } else {
        DensityMatrix::new_skip_psd(dims, rho_mat)?
    };

    if mode == DerivativeMode::Semigroup {
        if h != 0.0 {
            return Err(Error::InvalidParameter(
                "the semigroup derivative route requires h_srs = 0".into(),
            ));
        }
        let unit = SrsParams::dissipative(1.0)?;
        let drho = apply_generator_matrix(&unit, dims, &rho.matrix);
        return Ok(DerivativeOutput { rho, drho: hermitian_part(&drho), boundary: false });
    }

    let boundary = gamma < fd_step(gamma);
    if boundary {
        // one-sided derivative at the gamma = 0 boundary
        let delta = fd_step(gamma).max(1e-8);
        let hi = apply_at(gamma + delta)?;
        let drho = (hi - &rho.matrix) / c(delta);
        return Ok(DerivativeOutput { rho, drho: hermitian_part(&drho), boundary: true });
    }

    let mut delta = fd_step(gamma);
    let mut last_err: Option<String> = None;
    for _ in 0..4 {
        if gamma < delta {
            break;
        }
        let coarse = (apply_at(gamma + delta)? - apply_at(gamma - delta)?) / c(2.0 * delta);
        let fine =
            (apply_at(gamma + delta / 2.0)? - apply_at(gamma - delta / 2.0)?) / c(delta);
        let scale = one_norm(&fine).max(1e-300);
        let rel = one_norm(&(&coarse - &fine)) / scale;
        if rel < 1e-6 {
            // fourth-order Richardson extrapolation of the pair
            let drho = (fine * c(4.0) - coarse) / c(3.0);
            return Ok(DerivativeOutput { rho, drho: hermitian_part(&drho), boundary: false });
        }
        last_err = Some(format!(
            "step {delta:.3e}: |D(d) - D(d/2)| / |D(d/2)| = {rel:.3e} >= 1e-6"
        ));
        delta /= 4.0;
    }
    Err(Error::StepSize(format!(
        "gamma-derivative consistency check failed at gamma = {gamma:.3e}: {}",
        last_err.unwrap_or_else(|| "step exhausted".into())
    )))
}

/// Central finite-difference derivative of the channel output.
pub fn drho_dgamma(
    probe: &ProbeSpec,
    gamma: f64,
    h: f64,
    dims: FockDims,
    cache: &ChannelCache,
) -> Result<CMat> {
    let rho_in = states::build_input(probe, dims)?;
    Ok(
        channel_output_and_derivative(&rho_in, gamma, h, DerivativeMode::FiniteDifference, cache)?
            .drho,
    )
}

/// One full evaluation request.
#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub probe: ProbeSpec,
    pub gamma: f64,
    pub h: f64,
    pub eta_pu: f64,
    pub eta_pr: f64,
    pub observables: Vec<ObservableKind>,
    pub compute_qfi: bool,
    pub eps_trunc: f64,
    pub max_joint_dim: usize,
    pub derivative: DerivativeMode,
}

impl EvalRequest {
    pub fn new(probe: ProbeSpec, gamma: f64) -> Self {
        EvalRequest {
            probe,
            gamma,
            h: 0.0,
            eta_pu: 1.0,
            eta_pr: 1.0,
            observables: vec![ObservableKind::NumberDifference],
            compute_qfi: true,
            eps_trunc: crate::fock::DEFAULT_EPS_TRUNC,
            max_joint_dim: DEFAULT_MAX_JOINT_DIM,
            derivative: DerivativeMode::default(),
        }
    }

    fn lossless(&self) -> bool {
        self.eta_pu >= 1.0 && self.eta_pr >= 1.0
    }
}

/// Full-matrix evaluation: QFI of the lossless output, MoM of the
/// detected (possibly lossy) state, SNR from the first observable.
pub fn evaluate(req: &EvalRequest, cache: &ChannelCache) -> Result<FisherResult> {
    req.probe.validate()?;
    let dims = states::dims_for(&req.probe, req.eps_trunc, req.max_joint_dim)?;
    let rho_in = states::build_input_with_eps(&req.probe, dims, req.eps_trunc)?;
    let out = channel_output_and_derivative(&rho_in, req.gamma, req.h, req.derivative, cache)?;

    let mut flags = Vec::new();
    if out.boundary {
        flags.push("boundary".to_string());
    }
    if out.rho.tail_flagged(req.eps_trunc) {
        flags.push("trunc_tail".to_string());
    }

    let mut qfi_value = None;
    let mut qfi_detected = None;
    if req.compute_qfi {
        let detail = qfi_detailed(&out.rho, &out.drho, QFI_EIG_CUTOFF)?;
        if detail.cutoff_sensitive {
            flags.push("qfi_cutoff_sensitive".to_string());
        }
        qfi_value = Some(detail.value);
    }

    // detected state: beam-splitter loss on each mode after the channel
    let (rho_det, drho_det) = if req.lossless() {
        (out.rho.clone(), out.drho.clone())
    } else {
        let lossy = |m: &CMat| -> Result<CMat> {
            let m = apply_loss_matrix(m, req.eta_pu, crate::fock::Mode::Pump, dims)?;
            apply_loss_matrix(&m, req.eta_pr, crate::fock::Mode::Probe, dims)
        };
        let rho_l = if dims.joint() <= 800 {
            DensityMatrix::new(dims, lossy(&out.rho.matrix)?)?
        } else {
            DensityMatrix::new_skip_psd(dims, lossy(&out.rho.matrix)?)?
        };
        let drho_l = lossy(&out.drho)?;
        if req.compute_qfi {
            let detail = qfi_detailed(&rho_l, &drho_l, QFI_EIG_CUTOFF)?;
            qfi_detected = Some(detail.value);
        }
        (rho_l, drho_l)
    };

    let mut mom = Vec::with_capacity(req.observables.len());
    for kind in &req.observables {
        let op = kind.operator(dims)?;
        let value = mom_fisher(&rho_det, &drho_det, &op)?;
        if value.is_divergent() {
            flags.push(format!("mom_divergent:{}", kind.name()));
        }
        mom.push((kind.name().to_string(), value));
    }

    let snr = match mom.first() {
        Some((_, MomValue::Finite(f))) => Some(snr_per_shot(req.gamma, *f)?),
        Some((_, MomValue::Divergent { .. })) => Some(f64::INFINITY),
        None => None,
    };

    let result = FisherResult {
        gamma_srs: req.gamma,
        h_srs: req.h,
        qfi: qfi_value,
        qfi_detected,
        mom,
        snr,
        eta_pu: req.eta_pu,
        eta_pr: req.eta_pr,
        n_tot: states::mean_total_photons(&req.probe),
        probe: req.probe,
        flags,
    };
    result.check_mom_bound()?;
    Ok(result)
}

/// Populations-only MoM evaluation for diagonal observables. Never forms
/// a joint matrix, so it scales to the photon numbers the crossover scan
/// needs. QFI is not available on this path.
pub fn evaluate_mom_populations(req: &EvalRequest, cache: &ChannelCache) -> Result<FisherResult> {
    req.probe.validate()?;
    let (pops_in, dims) = input_populations(&req.probe, req.eps_trunc, req.max_joint_dim)?;

    let apply_lossless = |g: f64| -> Result<Vec<f64>> {
        let prepared = cache.populations(&SrsParams::new(req.h, g)?, dims)?;
        prepared.apply(&pops_in)
    };
    let detect = |mut p: Vec<f64>| -> Result<Vec<f64>> {
        if req.eta_pu < 1.0 {
            p = apply_loss_populations(&p, req.eta_pu, crate::fock::Mode::Pump, dims)?;
        }
        if req.eta_pr < 1.0 {
            p = apply_loss_populations(&p, req.eta_pr, crate::fock::Mode::Probe, dims)?;
        }
        Ok(p)
    };
    let apply_at = |g: f64| -> Result<Vec<f64>> { detect(apply_lossless(g)?) };

    let pops_lossless = apply_lossless(req.gamma)?;
    let pops = detect(pops_lossless.clone())?;
    let boundary = req.gamma < fd_step(req.gamma);
    let diags: Vec<(ObservableKind, Vec<f64>)> = req
        .observables
        .iter()
        .map(|k| (*k, k.diag_values(dims)))
        .collect();
    let moments = |p: &[f64]| -> Vec<(f64, f64)> {
        diags
            .iter()
            .map(|(_, diag)| {
                let mean: f64 = diag.iter().zip(p.iter()).map(|(x, w)| x * w).sum();
                let second: f64 = diag.iter().zip(p.iter()).map(|(x, w)| x * x * w).sum();
                (mean, second - mean * mean)
            })
            .collect()
    };

    // scalar derivatives of each <X> with step control
    let derivs: Vec<f64> = if req.derivative == DerivativeMode::Semigroup {
        if req.h != 0.0 {
            return Err(Error::InvalidParameter(
                "the semigroup derivative route requires h_srs = 0".into(),
            ));
        }
        // d/dgamma (Loss o exp(gamma A1))[p0] = Loss[A1 p(gamma)]; loss is
        // gamma-independent and linear
        let gen = detect(apply_generator_populations(dims, &pops_lossless))?;
        diags
            .iter()
            .map(|(_, diag)| diag.iter().zip(gen.iter()).map(|(x, w)| x * w).sum())
            .collect()
    } else if boundary {
        let delta = 1e-8;
        let hi = moments(&apply_at(req.gamma + delta)?);
        let base = moments(&pops);
        hi.iter().zip(base.iter()).map(|(h, b)| (h.0 - b.0) / delta).collect()
    } else {
        let mut delta = fd_step(req.gamma);
        let mut out: Option<Vec<f64>> = None;
        let mut last_rel = f64::NAN;
        for _ in 0..4 {
            if req.gamma < delta {
                break;
            }
            let hi = moments(&apply_at(req.gamma + delta)?);
            let lo = moments(&apply_at(req.gamma - delta)?);
            let hi2 = moments(&apply_at(req.gamma + delta / 2.0)?);
            let lo2 = moments(&apply_at(req.gamma - delta / 2.0)?);
            let coarse: Vec<f64> =
                hi.iter().zip(lo.iter()).map(|(a, b)| (a.0 - b.0) / (2.0 * delta)).collect();
            let fine: Vec<f64> =
                hi2.iter().zip(lo2.iter()).map(|(a, b)| (a.0 - b.0) / delta).collect();
            let scale = fine.iter().map(|x| x.abs()).fold(1e-300, f64::max);
            let rel = coarse
                .iter()
                .zip(fine.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / scale;
            if rel < 1e-6 {
                out = Some(
                    coarse
                        .iter()
                        .zip(fine.iter())
                        .map(|(cse, fne)| (4.0 * fne - cse) / 3.0)
                        .collect(),
                );
                break;
            }
            last_rel = rel;
            delta /= 4.0;
        }
        out.ok_or_else(|| {
            Error::StepSize(format!(
                "populations derivative check failed at gamma = {:.3e} (rel {last_rel:.3e})",
                req.gamma
            ))
        })?
    };

    let base_moments = moments(&pops);
    let mut mom = Vec::with_capacity(diags.len());
    let mut flags = Vec::new();
    if boundary {
        flags.push("boundary".to_string());
    }
    for (i, (kind, _)) in diags.iter().enumerate() {
        let value = mom_from_parts(derivs[i] * derivs[i], base_moments[i].1)?;
        if value.is_divergent() {
            flags.push(format!("mom_divergent:{}", kind.name()));
        }
        mom.push((kind.name().to_string(), value));
    }
    let snr = match mom.first() {
        Some((_, MomValue::Finite(f))) => Some(snr_per_shot(req.gamma, *f)?),
        Some((_, MomValue::Divergent { .. })) => Some(f64::INFINITY),
        None => None,
    };

    Ok(FisherResult {
        gamma_srs: req.gamma,
        h_srs: req.h,
        qfi: None,
        qfi_detected: None,
        mom,
        snr,
        eta_pu: req.eta_pu,
        eta_pr: req.eta_pr,
        n_tot: states::mean_total_photons(&req.probe),
        probe: req.probe,
        flags,
    })
}

/// Joint Fock-basis populations of the input state, choosing per-mode
/// truncations as it goes: the 4n+10 floor, geometric growth for
/// squeezed tails, and mode dimensions rounded up to multiples of 4 so
/// optimizer candidates share prepared channels. Never forms a joint
/// matrix.
fn input_populations(
    probe: &ProbeSpec,
    eps_trunc: f64,
    max_joint: usize,
) -> Result<(Vec<f64>, FockDims)> {
    use crate::states::ProbeFamily;
    let (pu_mean_chk, pr_mean_chk) = probe.mean_photons_per_mode();
    if !(pu_mean_chk.is_finite() && pr_mean_chk.is_finite())
        || pu_mean_chk.max(pr_mean_chk) > crate::states::MAX_MEAN_PHOTONS
    {
        return Err(Error::Truncation {
            reason: format!(
                "mean photon numbers ({pu_mean_chk:.3e}, {pr_mean_chk:.3e}) out of range"
            ),
            required_dim: usize::MAX,
        });
    }
    if !(eps_trunc > 0.0 && eps_trunc <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "eps_trunc must lie in (0, 1], got {eps_trunc}"
        )));
    }
    let eps_mode = eps_trunc / 2.0;
    let floor_dim = |n: f64| -> usize { ((4.0 * n + 10.0).ceil() as usize).next_multiple_of(4) };
    // Poissonian tails need mean + O(sqrt(mean)), much leaner than the
    // 4n + 10 rule once the mean is large
    let poisson_dim = |n: f64| -> usize {
        let lean = (n + 10.0 * n.sqrt() + 25.0).ceil() as usize;
        lean.min((4.0 * n + 10.0).ceil() as usize).next_multiple_of(4)
    };
    let (n_pu_mean, n_pr_mean) = probe.mean_photons_per_mode();

    let product = |pu: &[f64], pr: &[f64]| -> (Vec<f64>, FockDims) {
        let dims = FockDims { d_pu: pu.len(), d_pr: pr.len() };
        let mut pops = vec![0.0; dims.joint()];
        for (n_pu, wu) in pu.iter().enumerate() {
            for (n_pr, wr) in pr.iter().enumerate() {
                pops[dims.index(n_pu, n_pr)] = wu * wr;
            }
        }
        (pops, dims)
    };

    let check_cap = |dims: FockDims| -> Result<FockDims> {
        if dims.d_pu.saturating_mul(dims.d_pr) > max_joint {
            return Err(Error::Truncation {
                reason: format!("joint dimension {} exceeds cap {max_joint}", dims.joint()),
                required_dim: dims.d_pu.max(dims.d_pr),
            });
        }
        Ok(dims)
    };

    match probe.family {
        ProbeFamily::TwoModeSqueezed => {
            let lambda = probe.r_tms.tanh();
            let mut d = floor_dim(n_pu_mean).max(4);
            if lambda > 0.0 {
                let tail_dim = (eps_mode.ln() / (2.0 * lambda.ln())).ceil() as usize + 6;
                d = d.max(tail_dim.next_multiple_of(4));
            }
            let dims = check_cap(FockDims::new(d, d)?)?;
            let v = states::two_mode_squeezed_vacuum(probe.r_tms, dims, eps_trunc)?;
            let pops = (0..dims.joint()).map(|i| v[i].norm_sqr()).collect();
            Ok((pops, dims))
        }
        ProbeFamily::CoherentCoherent => {
            let dims = check_cap(FockDims::new(
                poisson_dim(n_pu_mean),
                poisson_dim(n_pr_mean),
            )?)?;
            let pu = poisson_populations(n_pu_mean, dims.d_pu, eps_mode)?;
            let pr = poisson_populations(n_pr_mean, dims.d_pr, eps_mode)?;
            Ok(product(&pu, &pr))
        }
        ProbeFamily::CoherentSqueezedCoherent => {
            let d_pu = poisson_dim(n_pu_mean);
            let mut d_pr = floor_dim(n_pr_mean);
            let pr = loop {
                if d_pu.saturating_mul(d_pr) > max_joint {
                    return Err(Error::Truncation {
                        reason: format!("joint dimension exceeds cap {max_joint}"),
                        required_dim: d_pr,
                    });
                }
                let v = states::squeezed_coherent_state(probe.alpha_pr, probe.zeta_pr, d_pr)?;
                if v[d_pr - 1].norm_sqr() < eps_mode {
                    break v;
                }
                d_pr += (d_pr / 4).next_multiple_of(4);
            };
            let dims = check_cap(FockDims::new(d_pu, d_pr)?)?;
            let pu = poisson_populations(n_pu_mean, dims.d_pu, eps_mode)?;
            let pr: Vec<f64> = pr.iter().map(|z| z.norm_sqr()).collect();
            Ok(product(&pu, &pr))
        }
    }
}

/// Poissonian photon-number weights, renormalized over d levels; errors
/// when the discarded tail exceeds eps.
fn poisson_populations(n_mean: f64, d: usize, eps: f64) -> Result<Vec<f64>> {
    if n_mean < 0.0 || !n_mean.is_finite() {
        return Err(Error::InvalidParameter(format!("bad coherent mean {n_mean}")));
    }
    let mut p = vec![0.0; d];
    p[0] = (-n_mean).exp();
    for n in 1..d {
        p[n] = p[n - 1] * n_mean / n as f64;
    }
    let total: f64 = p.iter().sum();
    if !(total > 0.0) || 1.0 - total > eps {
        return Err(Error::Truncation {
            reason: format!(
                "Poisson tail {:.3e} at mean {n_mean} exceeds {eps:.1e} for d = {d}",
                1.0 - total
            ),
            required_dim: (n_mean + 12.0 * n_mean.sqrt() + 30.0).ceil() as usize,
        });
    }
    for w in &mut p {
        *w /= total;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::apply_generator_matrix;
    use crate::fock::basis_state;
    use crate::linalg::{seeded_rng, I, ZERO};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn dims(d_pu: usize, d_pr: usize) -> FockDims {
        FockDims::new(d_pu, d_pr).unwrap()
    }

    #[test]
    fn qfi_of_zero_derivative_is_zero() {
        let d = dims(9, 9);
        let rho = crate::states::build_input(&ProbeSpec::tms(0.3), d).unwrap();
        let zero = CMat::zeros(81, 81);
        assert_eq!(qfi(&rho, &zero).unwrap(), 0.0);
    }

    #[test]
    fn qfi_matches_pure_state_phase_estimation_oracle() {
        // For |psi(theta)> = exp(-i theta n) |psi>, the QFI equals
        // 4 Var(n); drho = -i [n, rho] analytically.
        let d = dims(12, 2);
        let pu = crate::states::coherent_state(c(1.2), 12).unwrap();
        let pr = crate::states::coherent_state(ZERO, 2).unwrap();
        let rho = DensityMatrix::from_pure(d, &pu.kronecker(&pr)).unwrap();
        let n_op = Operator::pump_number(d).unwrap();
        let drho = (&n_op.matrix * &rho.matrix - &rho.matrix * &n_op.matrix) * (-I);
        let f = qfi(&rho, &drho).unwrap();
        let var = rho.variance(&n_op).unwrap();
        assert!((f - 4.0 * var).abs() / f < 1e-6, "F = {f}, 4Var = {}", 4.0 * var);
    }

    #[test]
    fn qfi_is_invariant_under_basis_rotation() {
        let d = dims(10, 10);
        let n = d.joint();
        let rho = crate::states::build_input(&ProbeSpec::tms(0.4), d).unwrap();
        let params = SrsParams::dissipative(0.05).unwrap();
        let cache = ChannelCache::new();
        let ch = cache.full_channel(&params, d).unwrap();
        let rho_out = ch.apply(&rho).unwrap();
        let drho = apply_generator_matrix(&SrsParams::dissipative(1.0).unwrap(), d, &rho_out.matrix);
        let f0 = qfi(&rho_out, &drho).unwrap();

        // random unitary by QR of a random complex matrix
        let mut rng = seeded_rng(9);
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        let u = m.qr().q();
        let rho_rot = DensityMatrix::new(d, &u * &rho_out.matrix * u.adjoint()).unwrap();
        let drho_rot = &u * &drho * u.adjoint();
        let f1 = qfi(&rho_rot, &drho_rot).unwrap();
        assert!((f0 - f1).abs() / f0 < 1e-8, "{f0} vs {f1}");
    }

    #[test]
    fn qfi_partial_path_matches_dense_path() {
        // same state evaluated through both eigendecomposition routes
        let d = dims(12, 12);
        let cache = ChannelCache::new();
        let rho_in = crate::states::build_input(&ProbeSpec::tms(0.5), d).unwrap();
        let out = channel_output_and_derivative(&rho_in, 2e-3, 0.0, DerivativeMode::FiniteDifference, &cache).unwrap();
        let dense = qfi_detailed(&out.rho, &out.drho, QFI_EIG_CUTOFF).unwrap().value;
        let partial = {
            let eig = partial_hermitian_eig(&out.rho.matrix, 1e-14, 0);
            qfi_partial(&eig, &out.drho, QFI_EIG_CUTOFF).value
        };
        assert!(
            (dense - partial).abs() / dense < 1e-7,
            "dense {dense} vs partial {partial}"
        );
    }

    #[test]
    fn drho_semigroup_oracle() {
        // at h = 0 the exact derivative is K1[rho(gamma)] with K1 the
        // unit-rate generator
        let d = dims(10, 10);
        let cache = ChannelCache::new();
        let probe = ProbeSpec::tms(0.4);
        let gamma = 5e-3;
        let fd = drho_dgamma(&probe, gamma, 0.0, d, &cache).unwrap();
        let rho_in = crate::states::build_input(&probe, d).unwrap();
        let ch = cache.full_channel(&SrsParams::dissipative(gamma).unwrap(), d).unwrap();
        let rho_out = ch.apply(&rho_in).unwrap();
        let exact =
            apply_generator_matrix(&SrsParams::dissipative(1.0).unwrap(), d, &rho_out.matrix);
        let rel = one_norm(&(&fd - &exact)) / one_norm(&exact);
        assert!(rel < 1e-7, "finite difference vs generator route: {rel:.2e}");
    }

    #[test]
    fn drho_of_vacuum_is_zero() {
        let d = dims(4, 4);
        let cache = ChannelCache::new();
        let probe = ProbeSpec::coherent(ZERO, ZERO);
        let drho = drho_dgamma(&probe, 1e-3, 0.0, d, &cache).unwrap();
        assert!(one_norm(&drho) < 1e-12);
    }

    #[test]
    fn drho_is_traceless() {
        let d = dims(10, 10);
        let cache = ChannelCache::new();
        let drho = drho_dgamma(&ProbeSpec::tms(0.4), 2e-3, 0.0, d, &cache).unwrap();
        let tr: Complex64 = drho.diagonal().iter().sum();
        assert!(tr.norm() < 1e-10);
    }

    #[test]
    fn mom_of_identity_observable_is_zero() {
        let d = dims(10, 10);
        let cache = ChannelCache::new();
        let rho_in = crate::states::build_input(&ProbeSpec::tms(0.4), d).unwrap();
        let out = channel_output_and_derivative(&rho_in, 2e-3, 0.0, DerivativeMode::FiniteDifference, &cache).unwrap();
        let eye = Operator::identity(crate::fock::OpDims::Joint(d));
        // Var(I) = 0 and derivative 0: finite zero, not divergent
        let v = mom_fisher(&out.rho, &out.drho, &eye).unwrap();
        assert_eq!(v, MomValue::Finite(0.0));
    }

    #[test]
    fn tms_at_gamma_zero_has_divergent_mom() {
        let cache = ChannelCache::new();
        let mut req = EvalRequest::new(ProbeSpec::tms(0.5), 0.0);
        req.compute_qfi = false;
        let res = evaluate(&req, &cache).unwrap();
        assert!(res.flags.iter().any(|f| f == "boundary"));
        assert!(res.mom_value("dn").unwrap().is_divergent());
    }

    #[test]
    fn detector_loss_removes_the_divergence() {
        let r = 0.5f64.sqrt().asinh();
        let mut req = EvalRequest::new(ProbeSpec::tms(r), 1e-5);
        req.eta_pu = 0.9;
        req.eta_pr = 0.9;
        req.compute_qfi = true;
        let cache = ChannelCache::new();
        let lossy = evaluate(&req, &cache).unwrap();
        let lossy_mom = lossy.mom_value("dn").unwrap();
        assert!(!lossy_mom.is_divergent());

        let mut req_ideal = req.clone();
        req_ideal.eta_pu = 1.0;
        req_ideal.eta_pr = 1.0;
        let ideal = evaluate(&req_ideal, &cache).unwrap();
        assert!(lossy_mom.as_f64() < ideal.mom_value("dn").unwrap().as_f64());
    }

    #[test]
    fn tms_mom_saturates_qfi_at_moderate_gamma() {
        let r = 0.5f64.sqrt().asinh(); // n_tot = 1
        let req = EvalRequest::new(ProbeSpec::tms(r), 2e-3);
        let cache = ChannelCache::new();
        let res = evaluate(&req, &cache).unwrap();
        let qfi_v = res.qfi.unwrap();
        let mom_v = res.mom_value("dn").unwrap().as_f64();
        assert!(mom_v / qfi_v >= 0.95, "saturation {}", mom_v / qfi_v);
        assert!(mom_v <= qfi_v * (1.0 + 1e-6));
    }

    #[test]
    fn qfi_grows_as_gamma_decreases_for_tms() {
        let r = 0.5f64.sqrt().asinh();
        let cache = ChannelCache::new();
        let mut last = f64::NEG_INFINITY;
        for gamma in [1e-2, 1e-3, 1e-4, 1e-5] {
            let req = EvalRequest::new(ProbeSpec::tms(r), gamma);
            let res = evaluate(&req, &cache).unwrap();
            let q = res.qfi.unwrap();
            assert!(q > last, "QFI not increasing as gamma decreases: {q} after {last}");
            last = q;
        }
    }

    #[test]
    fn populations_route_matches_full_route() {
        let cache = ChannelCache::new();
        let probe = ProbeSpec::squeezed_coherent(
            c(1.3),
            Complex64::from_polar(0.7, 0.4),
            Complex64::from_polar(0.3, 0.8),
        );
        let mut req = EvalRequest::new(probe, 3e-3);
        req.observables = vec![ObservableKind::ProbeNumber, ObservableKind::NumberDifference];
        req.compute_qfi = false;
        req.eta_pr = 0.85;
        let full = evaluate(&req, &cache).unwrap();
        let pops = evaluate_mom_populations(&req, &cache).unwrap();
        for (name, v_full) in &full.mom {
            let v_pops = pops.mom_value(name).unwrap();
            let (a, b) = (v_full.as_f64(), v_pops.as_f64());
            assert!(
                (a - b).abs() / a.abs().max(1e-300) < 1e-8,
                "{name}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn snr_algebraic_identities() {
        assert_eq!(snr_per_shot(0.5, 0.0).unwrap(), 0.0);
        let gamma = 2e-3;
        assert_abs_diff_eq!(
            snr_per_shot(gamma, 1.0 / (gamma * gamma)).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(snr_per_shot(1.0, -1.0).is_err());
    }

    #[test]
    fn qfi_rejects_non_traceless_derivative() {
        let d = dims(9, 9);
        let rho = crate::states::build_input(&ProbeSpec::tms(0.3), d).unwrap();
        let bad = CMat::identity(81, 81);
        assert!(qfi(&rho, &bad).is_err());
    }

    #[test]
    fn mom_rejects_non_hermitian_observable() {
        let d = dims(9, 9);
        let rho = crate::states::build_input(&ProbeSpec::tms(0.3), d).unwrap();
        let a = Operator::annihilation(9).unwrap().embed(crate::fock::Mode::Pump, d).unwrap();
        let zero = CMat::zeros(81, 81);
        assert!(mom_fisher(&rho, &zero, &a).is_err());
    }

    #[test]
    fn evaluate_reports_first_observable_snr() {
        let r = 0.5f64.sqrt().asinh();
        let mut req = EvalRequest::new(ProbeSpec::tms(r), 2e-3);
        req.observables = vec![ObservableKind::NumberDifference, ObservableKind::ProbeNumber];
        let cache = ChannelCache::new();
        let res = evaluate(&req, &cache).unwrap();
        let f = res.mom_value("dn").unwrap().as_f64();
        assert_abs_diff_eq!(res.snr.unwrap(), 2e-3 * f.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn semigroup_mode_matches_finite_differences() {
        let cache = ChannelCache::new();
        let probe = ProbeSpec::squeezed_coherent(
            c(1.1),
            Complex64::from_polar(0.6, 0.3),
            Complex64::from_polar(0.25, 0.9),
        );
        let mut fd = EvalRequest::new(probe, 3e-3);
        fd.observables = vec![ObservableKind::ProbeNumber, ObservableKind::NumberDifference];
        fd.eta_pr = 0.9;
        let mut sg = fd.clone();
        sg.derivative = DerivativeMode::Semigroup;

        // full path
        let a = evaluate(&fd, &cache).unwrap();
        let b = evaluate(&sg, &cache).unwrap();
        for (name, va) in &a.mom {
            let vb = b.mom_value(name).unwrap();
            let (x, y) = (va.as_f64(), vb.as_f64());
            assert!((x - y).abs() / x.abs() < 1e-6, "full {name}: {x} vs {y}");
        }
        assert!((a.qfi.unwrap() - b.qfi.unwrap()).abs() / a.qfi.unwrap() < 1e-6);

        // populations path
        let pa = evaluate_mom_populations(&fd, &cache).unwrap();
        let pb = evaluate_mom_populations(&sg, &cache).unwrap();
        for (name, va) in &pa.mom {
            let vb = pb.mom_value(name).unwrap();
            let (x, y) = (va.as_f64(), vb.as_f64());
            assert!((x - y).abs() / x.abs() < 1e-6, "pops {name}: {x} vs {y}");
        }
    }

    #[test]
    fn semigroup_mode_rejects_nonzero_h() {
        let cache = ChannelCache::new();
        let mut req = EvalRequest::new(ProbeSpec::tms(0.4), 2e-3);
        req.h = 0.1;
        req.derivative = DerivativeMode::Semigroup;
        assert!(evaluate(&req, &cache).is_err());
    }

    #[test]
    fn basis_state_probe_boundary_case() {
        // pure Fock input exercises the generator fixed point structure
        let d = dims(4, 4);
        let cache = ChannelCache::new();
        let rho = DensityMatrix::from_pure(d, &basis_state(d, 0, 2).unwrap()).unwrap();
        let out = channel_output_and_derivative(&rho, 1e-3, 0.0, DerivativeMode::FiniteDifference, &cache).unwrap();
        // pump vacuum is a fixed point: output equals input
        assert!(one_norm(&(&out.rho.matrix - &rho.matrix)) < 1e-12);
    }
}
