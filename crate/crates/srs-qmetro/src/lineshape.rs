//! Physical coupling constants from pulse and molecular parameters: the
//! two-photon spectral density and the Lorentzian-weighted overlap
//! integrals that produce h_srs and gamma_srs.
//!
//! Angular frequencies are in rad per user-chosen time unit; the field
//! strengths carry the compensating dimensions so the couplings come out
//! dimensionless.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::integrate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    Gaussian,
}

impl Default for PulseShape {
    fn default() -> Self {
        PulseShape::Gaussian
    }
}

/// Frequency-domain mode function of a pulse, normalized so that
/// integral d(omega)/2pi |psi|^2 = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub center_freq: f64,
    pub bandwidth: f64,
    #[serde(default)]
    pub shape: PulseShape,
}

impl PulseSpec {
    pub fn gaussian(center_freq: f64, bandwidth: f64) -> Result<Self> {
        let spec = PulseSpec { center_freq, bandwidth, shape: PulseShape::Gaussian };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() || !self.center_freq.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "pulse needs finite center and bandwidth > 0, got ({}, {})",
                self.center_freq, self.bandwidth
            )));
        }
        Ok(())
    }

    /// psi(omega), real for the Gaussian shape.
    pub fn mode_fn(&self, omega: f64) -> f64 {
        match self.shape {
            PulseShape::Gaussian => {
                let sigma = self.bandwidth;
                let norm = (2.0 * std::f64::consts::PI.sqrt() / sigma).sqrt();
                norm * (-(omega - self.center_freq).powi(2) / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    /// Support window outside which the mode function is negligible.
    fn support(&self) -> (f64, f64) {
        (
            self.center_freq - 8.0 * self.bandwidth,
            self.center_freq + 8.0 * self.bandwidth,
        )
    }
}

/// One Raman-active vibrational line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamanLine {
    /// Vibrational transition frequency.
    pub omega_line: f64,
    /// Lorentzian half width, > 0.
    pub gamma_line: f64,
    /// Squared Raman polarizability (detuning and dipoles pre-combined).
    pub polarizability_sq: f64,
}

impl RamanLine {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_line > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma_line must be > 0, got {}",
                self.gamma_line
            )));
        }
        if self.polarizability_sq < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "polarizability_sq must be >= 0, got {}",
                self.polarizability_sq
            )));
        }
        Ok(())
    }
}

/// Molecular and field parameters entering the coupling integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineshapeParams {
    pub n_molecules: u64,
    pub eps_pu: f64,
    pub eps_pr: f64,
    pub lines: Vec<RamanLine>,
}

impl LineshapeParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_molecules < 1 {
            return Err(Error::InvalidParameter("n_molecules must be >= 1".into()));
        }
        if self.lines.is_empty() {
            return Err(Error::InvalidParameter("at least one Raman line required".into()));
        }
        for line in &self.lines {
            line.validate()?;
        }
        Ok(())
    }
}

const INNER_REL_TOL: f64 = 1e-10;
const OUTER_REL_TOL: f64 = 1e-7;

/// Two-photon spectral density
/// Phi(omega) = integral d(omega')/2pi psi_pu(omega') psi_pr*(omega' - omega),
/// by adaptive quadrature over the overlap of the pulse supports. Real
/// because the shipped pulse shapes are real.
pub fn two_photon_spectral_density(pu: &PulseSpec, pr: &PulseSpec, omega: f64) -> Result<f64> {
    pu.validate()?;
    pr.validate()?;
    let (lo_pu, hi_pu) = pu.support();
    let (lo_pr, hi_pr) = (pr.support().0 + omega, pr.support().1 + omega);
    let lo = lo_pu.max(lo_pr);
    let hi = hi_pu.min(hi_pr);
    if lo >= hi {
        return Ok(0.0);
    }
    let peak_scale = pu.mode_fn(pu.center_freq) * pr.mode_fn(pr.center_freq) * (hi - lo);
    let r = integrate(
        |w| pu.mode_fn(w) * pr.mode_fn(w - omega),
        lo,
        hi,
        INNER_REL_TOL,
        1e-14 * peak_scale.abs().max(1e-300),
    )?;
    Ok(r.value / (2.0 * std::f64::consts::PI))
}

/// Combined bandwidth of the two pulses.
fn sigma_combined(pu: &PulseSpec, pr: &PulseSpec) -> f64 {
    (pu.bandwidth * pu.bandwidth + pr.bandwidth * pr.bandwidth).sqrt()
}

/// Integration window: +-8 combined bandwidths around the two-photon
/// detuning, widened to +-20 line widths around the line center.
fn line_window(pu: &PulseSpec, pr: &PulseSpec, line: &RamanLine) -> (f64, f64) {
    let mu = pu.center_freq - pr.center_freq;
    let sc = sigma_combined(pu, pr);
    let lo = (mu - 8.0 * sc).min(line.omega_line - 20.0 * line.gamma_line);
    let hi = (mu + 8.0 * sc).max(line.omega_line + 20.0 * line.gamma_line);
    (lo, hi)
}

fn line_integral(
    pu: &PulseSpec,
    pr: &PulseSpec,
    line: &RamanLine,
    dispersive: bool,
) -> Result<f64> {
    let (lo, hi) = line_window(pu, pr, line);
    // scale estimate from the absorptive kernel, used as the absolute
    // floor so the on-resonance dispersive integral can settle near zero
    let mu = pu.center_freq - pr.center_freq;
    let phi_peak = two_photon_spectral_density(pu, pr, mu)?;
    let scale = phi_peak * phi_peak / line.gamma_line * (hi - lo);
    let kernel = |w: f64| {
        let d = w - line.omega_line;
        let denom = d * d + line.gamma_line * line.gamma_line;
        if dispersive {
            d / denom
        } else {
            line.gamma_line / denom
        }
    };
    // center the seed split on the line so the odd kernel cancels when
    // |Phi|^2 is symmetric about it
    let split = line.omega_line.clamp(lo, hi);
    let mut total = 0.0;
    for (a, b) in [(lo, split), (split, hi)] {
        if a >= b {
            continue;
        }
        let r = integrate(
            |w| {
                let phi = two_photon_spectral_density(pu, pr, w).unwrap_or(0.0);
                kernel(w) * phi * phi
            },
            a,
            b,
            OUTER_REL_TOL,
            1e-10 * scale.abs().max(1e-300),
        )?;
        total += r.value;
    }
    Ok(total / (2.0 * std::f64::consts::PI))
}

/// Incoherent Raman gain strength: the absorptive Lorentzian kernel
/// weighted by |Phi|^2, summed over lines.
pub fn compute_gamma_srs(p: &LineshapeParams, pu: &PulseSpec, pr: &PulseSpec) -> Result<f64> {
    p.validate()?;
    let mut total = 0.0;
    for line in &p.lines {
        if line.polarizability_sq == 0.0 {
            continue;
        }
        total += line.polarizability_sq * line_integral(pu, pr, line, false)?;
    }
    let prefactor =
        2.0 * p.n_molecules as f64 * p.eps_pu * p.eps_pu * p.eps_pr * p.eps_pr;
    Ok(prefactor * total)
}

/// Coherent two-photon coupling: the dispersive (odd) kernel weighted by
/// |Phi|^2, summed over lines.
pub fn compute_h_srs(p: &LineshapeParams, pu: &PulseSpec, pr: &PulseSpec) -> Result<f64> {
    p.validate()?;
    let mut total = 0.0;
    for line in &p.lines {
        if line.polarizability_sq == 0.0 {
            continue;
        }
        total += line.polarizability_sq * line_integral(pu, pr, line, true)?;
    }
    let prefactor = p.n_molecules as f64 * p.eps_pu * p.eps_pu * p.eps_pr * p.eps_pr;
    Ok(prefactor * total)
}

/// Closed-form Gaussian overlap used as the oracle in tests and reports.
pub fn gaussian_phi_closed_form(pu: &PulseSpec, pr: &PulseSpec, omega: f64) -> f64 {
    let (s1, s2) = (pu.bandwidth, pr.bandwidth);
    let n1 = (2.0 * std::f64::consts::PI.sqrt() / s1).sqrt();
    let n2 = (2.0 * std::f64::consts::PI.sqrt() / s2).sqrt();
    let sc2 = s1 * s1 + s2 * s2;
    let mu = pu.center_freq - pr.center_freq;
    n1 * n2 / (2.0 * std::f64::consts::PI)
        * (2.0 * std::f64::consts::PI * s1 * s1 * s2 * s2 / sc2).sqrt()
        * (-(omega - mu).powi(2) / (2.0 * sc2)).exp()
}
