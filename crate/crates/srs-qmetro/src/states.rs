//! Probe-state families on the truncated Fock space: coherent,
//! squeezed-coherent and two-mode squeezed vacuum, plus the photon-budget
//! bookkeeping used by the optimizer.
//!
//! Operator-ordering convention: |alpha, zeta> = D(alpha) S(zeta) |0> with
//! S(zeta) = exp((conj(zeta) a^2 - zeta a^dag^2)/2), which makes
//! <n> = |alpha|^2 + sinh^2(r) exact.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockDims, DEFAULT_EPS_TRUNC};
use crate::linalg::{c, expm, CMat, CVec, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeFamily {
    #[serde(rename = "coherent-coherent")]
    CoherentCoherent,
    #[serde(rename = "coherent-squeezed-coherent")]
    CoherentSqueezedCoherent,
    #[serde(rename = "two-mode-squeezed")]
    TwoModeSqueezed,
}

/// Declarative description of the input light state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub family: ProbeFamily,
    /// Pump displacement.
    #[serde(default = "zero_c")]
    pub alpha_pu: Complex64,
    /// Probe displacement.
    #[serde(default = "zero_c")]
    pub alpha_pr: Complex64,
    /// Probe squeezing parameter zeta = r e^{i theta}.
    #[serde(default = "zero_c")]
    pub zeta_pr: Complex64,
    /// Two-mode squeezing parameter.
    #[serde(default)]
    pub r_tms: f64,
}

fn zero_c() -> Complex64 {
    ZERO
}

impl ProbeSpec {
    pub fn coherent(alpha_pu: Complex64, alpha_pr: Complex64) -> Self {
        ProbeSpec {
            family: ProbeFamily::CoherentCoherent,
            alpha_pu,
            alpha_pr,
            zeta_pr: ZERO,
            r_tms: 0.0,
        }
    }

    pub fn squeezed_coherent(alpha_pu: Complex64, alpha_pr: Complex64, zeta_pr: Complex64) -> Self {
        ProbeSpec {
            family: ProbeFamily::CoherentSqueezedCoherent,
            alpha_pu,
            alpha_pr,
            zeta_pr,
            r_tms: 0.0,
        }
    }

    pub fn tms(r: f64) -> Self {
        ProbeSpec {
            family: ProbeFamily::TwoModeSqueezed,
            alpha_pu: ZERO,
            alpha_pr: ZERO,
            zeta_pr: ZERO,
            r_tms: r,
        }
    }

    /// Fields irrelevant to the chosen family must be zero.
    pub fn validate(&self) -> Result<()> {
        let zero = |z: Complex64| z.norm() == 0.0;
        let ok = match self.family {
            ProbeFamily::CoherentCoherent => zero(self.zeta_pr) && self.r_tms == 0.0,
            ProbeFamily::CoherentSqueezedCoherent => self.r_tms == 0.0,
            ProbeFamily::TwoModeSqueezed => {
                zero(self.alpha_pu) && zero(self.alpha_pr) && zero(self.zeta_pr)
            }
        };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "probe spec has nonzero fields irrelevant to family {:?}",
                self.family
            )));
        }
        if self.r_tms < 0.0 {
            return Err(Error::InvalidParameter("r_tms must be >= 0".into()));
        }
        if !mean_total_photons(self).is_finite() {
            return Err(Error::InvalidParameter("photon budget is not finite".into()));
        }
        Ok(())
    }

    /// Closed-form mean photon number per mode (pump, probe).
    pub fn mean_photons_per_mode(&self) -> (f64, f64) {
        match self.family {
            ProbeFamily::CoherentCoherent => (self.alpha_pu.norm_sqr(), self.alpha_pr.norm_sqr()),
            ProbeFamily::CoherentSqueezedCoherent => (
                self.alpha_pu.norm_sqr(),
                self.alpha_pr.norm_sqr() + self.zeta_pr.norm().sinh().powi(2),
            ),
            ProbeFamily::TwoModeSqueezed => {
                let n = self.r_tms.sinh().powi(2);
                (n, n)
            }
        }
    }
}

/// Closed-form photon budget n_tot = <n_pu + n_pr>.
pub fn mean_total_photons(spec: &ProbeSpec) -> f64 {
    let (pu, pr) = spec.mean_photons_per_mode();
    pu + pr
}

/// Photon numbers beyond any desk-scale truncation; rejected up front so
/// hostile configs cannot request absurd allocations.
pub const MAX_MEAN_PHOTONS: f64 = 1e6;

fn required_dim(mean_photons: f64) -> usize {
    (4.0 * mean_photons + 10.0).ceil() as usize
}

/// Coherent state |alpha> truncated to d levels and renormalized.
pub fn coherent_state(alpha: Complex64, d: usize) -> Result<CVec> {
    if d < 2 {
        return Err(Error::Dimension(format!("coherent_state needs d >= 2, got {d}")));
    }
    let n_mean = alpha.norm_sqr();
    if n_mean > d as f64 / 4.0 {
        return Err(Error::Truncation {
            reason: format!("coherent amplitude |alpha|^2 = {n_mean:.3} too large for d = {d}"),
            required_dim: required_dim(n_mean),
        });
    }
    let mut v = CVec::zeros(d);
    let mut amp = c((-n_mean / 2.0).exp());
    v[0] = amp;
    for n in 1..d {
        amp *= alpha / c((n as f64).sqrt());
        v[n] = amp;
    }
    let norm = v.norm();
    Ok(v / c(norm))
}

/// Displaced squeezed state D(alpha) S(zeta) |0>, built on a padded
/// dimension and truncated back, which avoids recurrence instability at
/// the truncation edge.
pub fn squeezed_coherent_state(alpha: Complex64, zeta: Complex64, d: usize) -> Result<CVec> {
    if d < 2 {
        return Err(Error::Dimension(format!(
            "squeezed_coherent_state needs d >= 2, got {d}"
        )));
    }
    let r = zeta.norm();
    let n_mean = alpha.norm_sqr() + r.sinh().powi(2);
    if n_mean > d as f64 / 4.0 {
        return Err(Error::Truncation {
            reason: format!("squeezed-coherent photon number {n_mean:.3} too large for d = {d}"),
            required_dim: required_dim(n_mean),
        });
    }
    let d_pad = d + 10;
    let mut a = CMat::zeros(d_pad, d_pad);
    for n in 1..d_pad {
        a[(n - 1, n)] = c((n as f64).sqrt());
    }
    let a_dag = a.adjoint();

    let mut psi = CVec::zeros(d_pad);
    psi[0] = c(1.0);
    if r > 0.0 {
        let gen = (&a * &a) * (zeta.conj() * c(0.5)) - (&a_dag * &a_dag) * (zeta * c(0.5));
        psi = expm(&gen)? * psi;
    }
    if alpha.norm() > 0.0 {
        let gen = &a_dag * alpha - &a * alpha.conj();
        psi = expm(&gen)? * psi;
    }
    let truncated = CVec::from_iterator(d, psi.iter().take(d).copied());
    let norm = truncated.norm();
    Ok(truncated / c(norm))
}

/// Two-mode squeezed vacuum sum_n tanh^n(r)/cosh(r) |n, n>, renormalized
/// after truncation. `eps_trunc` bounds the discarded geometric tail.
pub fn two_mode_squeezed_vacuum(r: f64, dims: FockDims, eps_trunc: f64) -> Result<CVec> {
    if r < 0.0 {
        return Err(Error::InvalidParameter("TMS squeezing must be >= 0".into()));
    }
    let d_min = dims.d_pu.min(dims.d_pr);
    let lambda = r.tanh();
    let tail = lambda.powi(2 * d_min as i32);
    if tail >= eps_trunc {
        let needed = (eps_trunc.ln() / (2.0 * lambda.ln())).ceil() as usize + 1;
        return Err(Error::Truncation {
            reason: format!("TMS tail tanh(r)^(2 min(d)) = {tail:.3e} >= {eps_trunc:.1e}"),
            required_dim: needed,
        });
    }
    let mut v = CVec::zeros(dims.joint());
    let mut amp = 1.0 / r.cosh();
    for n in 0..d_min {
        v[dims.index(n, n)] = c(amp);
        amp *= lambda;
    }
    let norm = v.norm();
    Ok(v / c(norm))
}

/// Build the pure input density matrix of the requested family.
pub fn build_input(spec: &ProbeSpec, dims: FockDims) -> Result<DensityMatrix> {
    build_input_with_eps(spec, dims, DEFAULT_EPS_TRUNC)
}

pub fn build_input_with_eps(
    spec: &ProbeSpec,
    dims: FockDims,
    eps_trunc: f64,
) -> Result<DensityMatrix> {
    spec.validate()?;
    let psi = match spec.family {
        ProbeFamily::CoherentCoherent => {
            let pu = coherent_state(spec.alpha_pu, dims.d_pu)?;
            let pr = coherent_state(spec.alpha_pr, dims.d_pr)?;
            pu.kronecker(&pr)
        }
        ProbeFamily::CoherentSqueezedCoherent => {
            let pu = coherent_state(spec.alpha_pu, dims.d_pu)?;
            let pr = squeezed_coherent_state(spec.alpha_pr, spec.zeta_pr, dims.d_pr)?;
            pu.kronecker(&pr)
        }
        ProbeFamily::TwoModeSqueezed => two_mode_squeezed_vacuum(spec.r_tms, dims, eps_trunc)?,
    };
    DensityMatrix::from_pure(dims, &psi)
}

/// Per-mode truncation for a probe: d = ceil(4 n_mode + 10), grown further
/// until the constructed single-mode tails drop below eps, within a joint
/// dimension cap.
pub fn dims_for(spec: &ProbeSpec, eps_trunc: f64, max_joint: usize) -> Result<FockDims> {
    spec.validate()?;
    let (n_pu, n_pr) = spec.mean_photons_per_mode();
    if !(n_pu.is_finite() && n_pr.is_finite()) || n_pu.max(n_pr) > MAX_MEAN_PHOTONS {
        return Err(Error::Truncation {
            reason: format!("mean photon numbers ({n_pu:.3e}, {n_pr:.3e}) out of range"),
            required_dim: usize::MAX,
        });
    }
    if !(eps_trunc > 0.0 && eps_trunc <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "eps_trunc must lie in (0, 1], got {eps_trunc}"
        )));
    }
    let eps_mode = eps_trunc / 2.0;
    let (d_pu, d_pr) = match spec.family {
        ProbeFamily::TwoModeSqueezed => {
            let lambda = spec.r_tms.tanh();
            let mut d = required_dim(n_pu).max(3);
            if lambda > 0.0 {
                // headroom beyond the input tail: the channel pushes
                // population toward the probe top level
                let tail_dim = (eps_mode.ln() / (2.0 * lambda.ln())).ceil() as usize + 6;
                d = d.max(tail_dim);
            }
            (d, d)
        }
        ProbeFamily::CoherentCoherent => (required_dim(n_pu), required_dim(n_pr)),
        ProbeFamily::CoherentSqueezedCoherent => {
            let d_pu = required_dim(n_pu);
            let mut d_pr = required_dim(n_pr);
            // squeezed tails decay geometrically, not like a Poissonian
            loop {
                let v = squeezed_coherent_state(spec.alpha_pr, spec.zeta_pr, d_pr)?;
                if v[d_pr - 1].norm_sqr() < eps_mode
                    || d_pr > 4 * required_dim(n_pr)
                {
                    break;
                }
                d_pr += (d_pr / 4).max(2);
            }
            (d_pu, d_pr)
        }
    };
    let dims = FockDims::new(d_pu.max(2), d_pr.max(2))?;
    if dims.d_pu.saturating_mul(dims.d_pr) > max_joint {
        return Err(Error::Truncation {
            reason: format!(
                "joint dimension {} exceeds cap {max_joint} for probe {:?}",
                dims.joint(),
                spec.family
            ),
            required_dim: dims.d_pu.max(dims.d_pr),
        });
    }
    Ok(dims)
}
