//! The SRS quantum channel: generator construction, channel exponential,
//! and photon-loss channels modeling detector inefficiency.
//!
//! The generator K[rho] = -i h [L^dag L, rho]
//!                        + gamma (L rho L^dag - {L^dag L, rho}/2)
//! with L = A B^dag conserves the total photon number, and its jump term
//! only shifts the pump index of both sides of rho by one. The vectorized
//! generator therefore splits into independent bidiagonal chains, which
//! `SrsChannel` exponentiates exactly one small dense block at a time.
//! The dense D^2 x D^2 superoperator route stays available for modest
//! dimensions and cross-checks the chain route in the tests.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{sandwich_superop, vectorize, DensityMatrix, FockDims, Mode, Operator};
use crate::linalg::{c, expm, CMat, I};

/// Dimensionless couplings of the SRS generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrsParams {
    pub h_srs: f64,
    pub gamma_srs: f64,
}

impl SrsParams {
    pub fn new(h_srs: f64, gamma_srs: f64) -> Result<Self> {
        if gamma_srs < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gamma_srs must be >= 0 for a positive dissipator rate, got {gamma_srs}"
            )));
        }
        if !gamma_srs.is_finite() || !h_srs.is_finite() {
            return Err(Error::InvalidParameter("SRS couplings must be finite".into()));
        }
        Ok(SrsParams { h_srs, gamma_srs })
    }

    pub fn dissipative(gamma_srs: f64) -> Result<Self> {
        Self::new(0.0, gamma_srs)
    }
}

/// A linear map on vectorized density matrices, stored dense. Memory is
/// D^4 entries, so this form is for small joint dimensions and tests.
#[derive(Debug, Clone)]
pub struct Superoperator {
    pub dims: FockDims,
    pub matrix: CMat,
}

impl Superoperator {
    pub fn apply_to(&self, rho: &CMat) -> Result<CMat> {
        let v = self.matrix.clone() * vectorize(rho);
        crate::fock::devectorize(&v, self.dims)
    }

    /// Composition self after other.
    pub fn compose(&self, other: &Superoperator) -> Result<Superoperator> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.dims),
                got: format!("{:?}", other.dims),
            });
        }
        Ok(Superoperator { dims: self.dims, matrix: &self.matrix * &other.matrix })
    }

    /// Max deviation from trace preservation over a basis of matrix units.
    pub fn trace_preservation_deviation(&self) -> f64 {
        let d = self.dims.joint();
        let mut worst = 0.0f64;
        for col in 0..d * d {
            let (j, i) = (col / d, col % d); // column = action on |i><j|
            let mut tr = Complex64::new(0.0, 0.0);
            for k in 0..d {
                tr += self.matrix[(k * d + k, col)];
            }
            let expect = if i == j { 1.0 } else { 0.0 };
            let dev = (tr - c(expect)).norm();
            if dev > worst {
                worst = dev;
            }
        }
        worst
    }
}

/// q(a) = <a|L^dag L|a>: n_pu (n_pr + 1), zero when the probe raise leaves
/// the truncated space.
#[inline]
fn q_diag(dims: FockDims, n_pu: usize, n_pr: usize) -> f64 {
    if n_pr + 1 < dims.d_pr {
        (n_pu * (n_pr + 1)) as f64
    } else {
        0.0
    }
}

/// <t|L|s> for t = (s_pu - 1, s_pr + 1).
#[inline]
fn jump_amp(s_pu: usize, s_pr: usize) -> f64 {
    ((s_pu * (s_pr + 1)) as f64).sqrt()
}

/// Vectorized SRS generator as a dense superoperator matrix.
pub fn build_generator(params: &SrsParams, dims: FockDims) -> Result<Superoperator> {
    SrsParams::new(params.h_srs, params.gamma_srs)?;
    let l = Operator::srs_jump(dims)?;
    let q = l.adjoint().mul(&l)?;
    let eye = CMat::identity(dims.joint(), dims.joint());

    // rho -> A rho B^dag building blocks under column stacking.
    let left_q = sandwich_superop(&q.matrix, &eye);
    let right_q = sandwich_superop(&eye, &q.matrix);
    let jump = sandwich_superop(&l.matrix, &l.matrix);

    let matrix = (&left_q - &right_q) * (-I * c(params.h_srs))
        + (jump - (&left_q + &right_q) * c(0.5)) * c(params.gamma_srs);
    Ok(Superoperator { dims, matrix })
}

/// Matrix exponential of a superoperator (dense route).
pub fn matrix_exponential(m: &Superoperator) -> Result<Superoperator> {
    Ok(Superoperator { dims: m.dims, matrix: expm(&m.matrix)? })
}

/// K[rho] applied directly to a matrix, O(D^2). Used for the exact
/// semigroup-derivative cross-check and the generator-route tests.
pub fn apply_generator_matrix(params: &SrsParams, dims: FockDims, rho: &CMat) -> CMat {
    let d = dims.joint();
    let mut out = CMat::zeros(d, d);
    for ia in 0..d {
        let (na_pu, na_pr) = dims.unpack(ia);
        let qa = q_diag(dims, na_pu, na_pr);
        for ib in 0..d {
            let (nb_pu, nb_pr) = dims.unpack(ib);
            let qb = q_diag(dims, nb_pu, nb_pr);
            let diag = Complex64::new(
                -0.5 * params.gamma_srs * (qa + qb),
                -params.h_srs * (qa - qb),
            );
            let mut v = diag * rho[(ia, ib)];
            // gain from the pair with one more pump photon on both sides
            if na_pu + 1 < dims.d_pu && na_pr >= 1 && nb_pu + 1 < dims.d_pu && nb_pr >= 1 {
                let sa = dims.index(na_pu + 1, na_pr - 1);
                let sb = dims.index(nb_pu + 1, nb_pr - 1);
                let w = params.gamma_srs
                    * jump_amp(na_pu + 1, na_pr - 1)
                    * jump_amp(nb_pu + 1, nb_pr - 1);
                v += c(w) * rho[(sa, sb)];
            }
            out[(ia, ib)] = v;
        }
    }
    out
}

/// One bidiagonal chain of vectorized-density-matrix entries closed under
/// the generator. `pairs[j+1]` has one more pump photon than `pairs[j]` on
/// both the ket and bra side.
struct Chain {
    pairs: Vec<(u32, u32)>,
}

/// The SRS channel exp(K) prepared for one (params, dims) combination.
pub struct SrsChannel {
    pub dims: FockDims,
    pub params: SrsParams,
    chains: Vec<Chain>,
    /// Per-chain exponentials, kept when the total size is modest.
    exps: Option<Vec<CMat>>,
}

/// Upper cap on joint dimension for the full-matrix channel path; the
/// chain table is D^2 entries.
const MAX_FULL_JOINT_DIM: usize = 3000;
/// Precompute every chain exponential only for small joint dimensions,
/// where channels are reapplied to many dense inputs; above this the
/// zero-skip on untouched chains makes on-demand exponentials cheaper.
const EXP_CACHE_MAX_DIM: usize = 480;
const EXP_CACHE_ENTRIES: usize = 4_000_000;

impl SrsChannel {
    pub fn new(params: &SrsParams, dims: FockDims) -> Result<Self> {
        let params = SrsParams::new(params.h_srs, params.gamma_srs)?;
        let d = dims.joint();
        if d > MAX_FULL_JOINT_DIM {
            return Err(Error::Dimension(format!(
                "joint dimension {d} too large for the full-matrix channel (cap {MAX_FULL_JOINT_DIM}); \
                 use the populations path"
            )));
        }
        let chains = build_chains(dims, |_, _| true);
        let total_sq: usize = chains.iter().map(|ch| ch.pairs.len() * ch.pairs.len()).sum();
        let exps = if d <= EXP_CACHE_MAX_DIM && total_sq <= EXP_CACHE_ENTRIES {
            Some(
                chains
                    .iter()
                    .map(|ch| chain_exponential(&params, dims, ch))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(SrsChannel { dims, params, chains, exps })
    }

    /// exp(K) applied to a raw matrix.
    pub fn apply_matrix(&self, rho: &CMat) -> Result<CMat> {
        let d = self.dims.joint();
        if rho.nrows() != d || rho.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: format!("{d}x{d}"),
                got: format!("{}x{}", rho.nrows(), rho.ncols()),
            });
        }
        let mut out = CMat::zeros(d, d);
        let mut x: Vec<Complex64> = Vec::new();
        for (ci, chain) in self.chains.iter().enumerate() {
            let len = chain.pairs.len();
            x.clear();
            x.extend(
                chain
                    .pairs
                    .iter()
                    .map(|&(a, b)| rho[(a as usize, b as usize)]),
            );
            // untouched chains contribute nothing
            if x.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                continue;
            }
            let exp = match &self.exps {
                Some(exps) => exps[ci].clone(),
                None => chain_exponential(&self.params, self.dims, chain)?,
            };
            for j in 0..len {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..len {
                    acc += exp[(j, k)] * x[k];
                }
                let (a, b) = chain.pairs[j];
                out[(a as usize, b as usize)] = acc;
            }
        }
        Ok(out)
    }

    /// exp(K) applied to a state, with integrity checks: trace and
    /// Hermiticity always, total-photon-number conservation always, and a
    /// positivity certificate up to joint dimension 800 (cubic cost).
    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        if rho.dims != self.dims {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.dims),
                got: format!("{:?}", rho.dims),
            });
        }
        let n_tot_in = total_number_expectation(self.dims, &rho.matrix);
        let out = self.apply_matrix(&rho.matrix)?;
        let n_tot_out = total_number_expectation(self.dims, &out);
        if (n_tot_in - n_tot_out).abs() > 1e-9 {
            return Err(Error::Integrity(format!(
                "lossless SRS channel changed <n_tot> by {:.3e}",
                (n_tot_in - n_tot_out).abs()
            )));
        }
        if self.dims.joint() <= 800 {
            DensityMatrix::new(self.dims, out)
        } else {
            DensityMatrix::new_skip_psd(self.dims, out)
        }
    }
}

fn total_number_expectation(dims: FockDims, rho: &CMat) -> f64 {
    let mut acc = 0.0;
    for idx in 0..dims.joint() {
        let (n_pu, n_pr) = dims.unpack(idx);
        acc += (n_pu + n_pr) as f64 * rho[(idx, idx)].re;
    }
    acc
}

/// Enumerate the chains covering every (ket, bra) index pair for which
/// `keep` holds. Each retained pair appears in exactly one chain.
fn build_chains(dims: FockDims, keep: impl Fn(usize, usize) -> bool) -> Vec<Chain> {
    let d = dims.joint();
    let pred = |idx: usize| -> Option<usize> {
        let (n_pu, n_pr) = dims.unpack(idx);
        if n_pu >= 1 && n_pr + 1 < dims.d_pr {
            Some(dims.index(n_pu - 1, n_pr + 1))
        } else {
            None
        }
    };
    let succ = |idx: usize| -> Option<usize> {
        let (n_pu, n_pr) = dims.unpack(idx);
        if n_pu + 1 < dims.d_pu && n_pr >= 1 {
            Some(dims.index(n_pu + 1, n_pr - 1))
        } else {
            None
        }
    };
    let mut chains = Vec::new();
    for a0 in 0..d {
        for b0 in 0..d {
            if !keep(a0, b0) {
                continue;
            }
            // chain start: no predecessor pair inside the truncated space
            if pred(a0).is_some() && pred(b0).is_some() {
                continue;
            }
            let mut pairs = vec![(a0 as u32, b0 as u32)];
            let (mut a, mut b) = (a0, b0);
            while let (Some(na), Some(nb)) = (succ(a), succ(b)) {
                if !keep(na, nb) {
                    break;
                }
                pairs.push((na as u32, nb as u32));
                a = na;
                b = nb;
            }
            chains.push(Chain { pairs });
        }
    }
    chains
}

/// Dense exponential of the generator restricted to one chain.
fn chain_exponential(params: &SrsParams, dims: FockDims, chain: &Chain) -> Result<CMat> {
    let len = chain.pairs.len();
    let mut g = CMat::zeros(len, len);
    for j in 0..len {
        let (a, b) = chain.pairs[j];
        let (na_pu, na_pr) = dims.unpack(a as usize);
        let (nb_pu, nb_pr) = dims.unpack(b as usize);
        let qa = q_diag(dims, na_pu, na_pr);
        let qb = q_diag(dims, nb_pu, nb_pr);
        g[(j, j)] = Complex64::new(
            -0.5 * params.gamma_srs * (qa + qb),
            -params.h_srs * (qa - qb),
        );
        if j + 1 < len {
            let (sa, sb) = chain.pairs[j + 1];
            let (sa_pu, sa_pr) = dims.unpack(sa as usize);
            let (sb_pu, sb_pr) = dims.unpack(sb as usize);
            g[(j, j + 1)] = c(params.gamma_srs * jump_amp(sa_pu, sa_pr) * jump_amp(sb_pu, sb_pr));
        }
    }
    expm(&g)
}

/// Unit-rate classical generator applied to populations: the h term
/// cancels on the diagonal, so this is the exact gamma-derivative
/// generator of the population dynamics.
pub fn apply_generator_populations(dims: FockDims, pops: &[f64]) -> Vec<f64> {
    let d = dims.joint();
    let mut out = vec![0.0; d];
    for idx in 0..d {
        let (n_pu, n_pr) = dims.unpack(idx);
        let mut v = -q_diag(dims, n_pu, n_pr) * pops[idx];
        if n_pu + 1 < dims.d_pu && n_pr >= 1 {
            let src = dims.index(n_pu + 1, n_pr - 1);
            let amp = jump_amp(n_pu + 1, n_pr - 1);
            v += amp * amp * pops[src];
        }
        out[idx] = v;
    }
    out
}

/// Classical population dynamics of the channel: the diagonal pairs form
/// their own chains, so populations evolve autonomously. Scales to much
/// larger joint dimensions than the full-matrix path.
pub struct PreparedPopulations {
    pub dims: FockDims,
    chains: Vec<(Vec<u32>, DMatrix<f64>)>,
}

impl PreparedPopulations {
    pub fn new(params: &SrsParams, dims: FockDims) -> Result<Self> {
        let params = SrsParams::new(params.h_srs, params.gamma_srs)?;
        let d = dims.joint();
        let succ = |idx: usize| -> Option<usize> {
            let (n_pu, n_pr) = dims.unpack(idx);
            if n_pu + 1 < dims.d_pu && n_pr >= 1 {
                Some(dims.index(n_pu + 1, n_pr - 1))
            } else {
                None
            }
        };
        let pred_valid = |idx: usize| -> bool {
            let (n_pu, n_pr) = dims.unpack(idx);
            n_pu >= 1 && n_pr + 1 < dims.d_pr
        };
        let mut chains = Vec::new();
        for start in 0..d {
            if pred_valid(start) {
                continue;
            }
            let mut idx = vec![start as u32];
            let mut cur = start;
            while let Some(next) = succ(cur) {
                idx.push(next as u32);
                cur = next;
            }
            let len = idx.len();
            let mut g = DMatrix::<f64>::zeros(len, len);
            for j in 0..len {
                let (n_pu, n_pr) = dims.unpack(idx[j] as usize);
                g[(j, j)] = -params.gamma_srs * q_diag(dims, n_pu, n_pr);
                if j + 1 < len {
                    let (s_pu, s_pr) = dims.unpack(idx[j + 1] as usize);
                    let amp = jump_amp(s_pu, s_pr);
                    g[(j, j + 1)] = params.gamma_srs * amp * amp;
                }
            }
            let gc = g.map(|x| c(x));
            let exp = expm(&gc)?.map(|z| z.re);
            chains.push((idx, exp));
        }
        Ok(PreparedPopulations { dims, chains })
    }

    pub fn apply(&self, pops: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims.joint();
        if pops.len() != d {
            return Err(Error::DimensionMismatch {
                expected: format!("{d}"),
                got: format!("{}", pops.len()),
            });
        }
        let mut out = vec![0.0; d];
        for (idx, exp) in &self.chains {
            let len = idx.len();
            for j in 0..len {
                let mut acc = 0.0;
                for k in 0..len {
                    acc += exp[(j, k)] * pops[idx[k] as usize];
                }
                out[idx[j] as usize] = acc;
            }
        }
        Ok(out)
    }
}

/// Squared Kraus weight for beam-splitter loss: C(n, k) (1-eta)^k eta^(n-k),
/// computed in log space so large photon numbers stay finite.
fn loss_weight_sq(n: usize, k: usize, eta: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if eta >= 1.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if eta <= 0.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let mut ln = (n - k) as f64 * eta.ln() + k as f64 * (1.0 - eta).ln();
    for i in 1..=k {
        ln += (((n - k + i) as f64) / (i as f64)).ln();
    }
    ln.exp()
}

/// Single-mode Kraus operators of the attenuation channel with
/// transmissivity eta.
pub fn kraus_loss_ops(eta: f64, d: usize) -> Result<Vec<CMat>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "quantum efficiency must lie in [0, 1], got {eta}"
        )));
    }
    let mut ops = Vec::with_capacity(d);
    for k in 0..d {
        let mut m = CMat::zeros(d, d);
        for n in k..d {
            m[(n - k, n)] = c(loss_weight_sq(n, k, eta).sqrt());
        }
        ops.push(m);
    }
    Ok(ops)
}

/// Pure-loss (beam-splitter) channel on one mode as a dense superoperator.
pub fn loss_channel(eta: f64, mode: Mode, dims: FockDims) -> Result<Superoperator> {
    let d_mode = dims.mode_dim(mode);
    let ops = kraus_loss_ops(eta, d_mode)?;
    let d = dims.joint();
    let mut matrix = CMat::zeros(d * d, d * d);
    for k in &ops {
        let embedded = Operator::from_matrix(crate::fock::OpDims::Single(d_mode), k.clone())?
            .embed(mode, dims)?;
        matrix += sandwich_superop(&embedded.matrix, &embedded.matrix);
    }
    Ok(Superoperator { dims, matrix })
}

/// Beam-splitter loss applied to a raw matrix without building the
/// superoperator: a weighted shifted sum, O(d * D^2).
pub fn apply_loss_matrix(rho: &CMat, eta: f64, mode: Mode, dims: FockDims) -> Result<CMat> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "quantum efficiency must lie in [0, 1], got {eta}"
        )));
    }
    let d = dims.joint();
    if rho.nrows() != d || rho.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: format!("{d}x{d}"),
            got: format!("{}x{}", rho.nrows(), rho.ncols()),
        });
    }
    if eta == 1.0 {
        return Ok(rho.clone());
    }
    let (d_mode, d_other) = match mode {
        Mode::Pump => (dims.d_pu, dims.d_pr),
        Mode::Probe => (dims.d_pr, dims.d_pu),
    };
    let idx = |m: usize, o: usize| -> usize {
        match mode {
            Mode::Pump => dims.index(m, o),
            Mode::Probe => dims.index(o, m),
        }
    };
    let mut out = CMat::zeros(d, d);
    for k in 0..d_mode {
        for i1 in 0..d_mode - k {
            let wi = loss_weight_sq(i1 + k, k, eta).sqrt();
            for j1 in 0..d_mode - k {
                let w = wi * loss_weight_sq(j1 + k, k, eta).sqrt();
                if w == 0.0 {
                    continue;
                }
                for i2 in 0..d_other {
                    let row_out = idx(i1, i2);
                    let row_in = idx(i1 + k, i2);
                    for j2 in 0..d_other {
                        out[(row_out, idx(j1, j2))] +=
                            c(w) * rho[(row_in, idx(j1 + k, j2))];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Loss acting on populations only.
pub fn apply_loss_populations(
    pops: &[f64],
    eta: f64,
    mode: Mode,
    dims: FockDims,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "quantum efficiency must lie in [0, 1], got {eta}"
        )));
    }
    let d = dims.joint();
    if pops.len() != d {
        return Err(Error::DimensionMismatch {
            expected: format!("{d}"),
            got: format!("{}", pops.len()),
        });
    }
    if eta == 1.0 {
        return Ok(pops.to_vec());
    }
    let (d_mode, d_other) = match mode {
        Mode::Pump => (dims.d_pu, dims.d_pr),
        Mode::Probe => (dims.d_pr, dims.d_pu),
    };
    let idx = |m: usize, o: usize| -> usize {
        match mode {
            Mode::Pump => dims.index(m, o),
            Mode::Probe => dims.index(o, m),
        }
    };
    let mut out = vec![0.0; d];
    for k in 0..d_mode {
        for n in 0..d_mode - k {
            let w = loss_weight_sq(n + k, k, eta);
            if w == 0.0 {
                continue;
            }
            for o in 0..d_other {
                out[idx(n, o)] += w * pops[idx(n + k, o)];
            }
        }
    }
    Ok(out)
}

/// Cache of prepared channels keyed by rounded-to-bits (gamma, h, dims).
/// Get-or-compute is linearizable; racing threads may compute the same
/// entry twice and one result wins.
#[derive(Default)]
pub struct ChannelCache {
    full: RwLock<HashMap<(u64, u64, FockDims), Arc<SrsChannel>>>,
    pops: RwLock<HashMap<(u64, u64, FockDims), Arc<PreparedPopulations>>>,
}

impl ChannelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn full_channel(&self, params: &SrsParams, dims: FockDims) -> Result<Arc<SrsChannel>> {
        let key = (params.gamma_srs.to_bits(), params.h_srs.to_bits(), dims);
        if let Some(hit) = self.full.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let fresh = Arc::new(SrsChannel::new(params, dims)?);
        let mut guard = self.full.write().unwrap();
        Ok(guard.entry(key).or_insert(fresh).clone())
    }

    pub fn populations(
        &self,
        params: &SrsParams,
        dims: FockDims,
    ) -> Result<Arc<PreparedPopulations>> {
        let key = (params.gamma_srs.to_bits(), params.h_srs.to_bits(), dims);
        if let Some(hit) = self.pops.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let fresh = Arc::new(PreparedPopulations::new(params, dims)?);
        let mut guard = self.pops.write().unwrap();
        Ok(guard.entry(key).or_insert(fresh).clone())
    }
}
