//! Dense operator algebra on a two-mode truncated Fock space: ladder and
//! number operators, tensor embeddings, density matrices, expectation values
//! and vectorization.
//!
//! Conventions fixed here and relied on everywhere else:
//! - mode ordering is pump (x) probe, so a joint basis index is
//!   `n_pu * d_pr + n_pr`;
//! - `vectorize` stacks columns, so `vec(A rho B^dag) = kron(conj(B), A) vec(rho)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, hermiticity_deviation, is_psd_within, CMat, CVec};

/// Default cap on the tolerated population of the highest Fock level of
/// each mode. Violations flag the state; CLI acceptance runs escalate the
/// flag to a hard error because silent truncation bias corrupts the
/// Fisher-information curves.
pub const DEFAULT_EPS_TRUNC: f64 = 1e-8;

const TRACE_TOL: f64 = 1e-10;
const HERM_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Truncation dimensions of the two bosonic modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FockDims {
    pub d_pu: usize,
    pub d_pr: usize,
}

impl FockDims {
    pub fn new(d_pu: usize, d_pr: usize) -> Result<Self> {
        if d_pu < 2 || d_pr < 2 {
            return Err(Error::Dimension(format!(
                "mode truncations must be >= 2, got ({d_pu}, {d_pr})"
            )));
        }
        Ok(FockDims { d_pu, d_pr })
    }

    /// Joint Hilbert-space dimension.
    pub fn joint(&self) -> usize {
        self.d_pu * self.d_pr
    }

    #[inline]
    pub fn index(&self, n_pu: usize, n_pr: usize) -> usize {
        n_pu * self.d_pr + n_pr
    }

    #[inline]
    pub fn unpack(&self, idx: usize) -> (usize, usize) {
        (idx / self.d_pr, idx % self.d_pr)
    }

    pub fn mode_dim(&self, mode: Mode) -> usize {
        match mode {
            Mode::Pump => self.d_pu,
            Mode::Probe => self.d_pr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pump,
    Probe,
}

/// Dimension tag of an operator: a single mode or the joint space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpDims {
    Single(usize),
    Joint(FockDims),
}

impl OpDims {
    pub fn matrix_dim(&self) -> usize {
        match self {
            OpDims::Single(d) => *d,
            OpDims::Joint(dims) => dims.joint(),
        }
    }
}

/// A dense operator together with its dimension tag and a Hermitian flag
/// (set only when max|M - M^dag| < 1e-12 at construction).
#[derive(Debug, Clone)]
pub struct Operator {
    pub dims: OpDims,
    pub matrix: CMat,
    hermitian: bool,
}

impl Operator {
    pub fn from_matrix(dims: OpDims, matrix: CMat) -> Result<Self> {
        let d = dims.matrix_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: format!("{d}x{d}"),
                got: format!("{}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        let hermitian = hermiticity_deviation(&matrix) < HERM_TOL;
        Ok(Operator { dims, matrix, hermitian })
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Annihilation operator on a d-level mode: sqrt(n) on the first
    /// superdiagonal.
    pub fn annihilation(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Dimension(format!("annihilation needs d >= 2, got {d}")));
        }
        let mut m = CMat::zeros(d, d);
        for n in 1..d {
            m[(n - 1, n)] = c((n as f64).sqrt());
        }
        Operator::from_matrix(OpDims::Single(d), m)
    }

    pub fn creation(d: usize) -> Result<Self> {
        Ok(Self::annihilation(d)?.adjoint())
    }

    /// Number operator diag(0, 1, ..., d-1).
    pub fn number_op(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Dimension(format!("number_op needs d >= 2, got {d}")));
        }
        let mut m = CMat::zeros(d, d);
        for n in 0..d {
            m[(n, n)] = c(n as f64);
        }
        Operator::from_matrix(OpDims::Single(d), m)
    }

    pub fn identity(dims: OpDims) -> Self {
        let d = dims.matrix_dim();
        Operator { dims, matrix: CMat::identity(d, d), hermitian: true }
    }

    /// Embed a single-mode operator into the joint space, acting on the
    /// selected mode. Fixed ordering: pump (x) probe.
    pub fn embed(&self, mode: Mode, dims: FockDims) -> Result<Self> {
        let d = match self.dims {
            OpDims::Single(d) => d,
            OpDims::Joint(_) => {
                return Err(Error::Dimension("embed takes a single-mode operator".into()))
            }
        };
        if d != dims.mode_dim(mode) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}", dims.mode_dim(mode)),
                got: format!("{d}"),
            });
        }
        let m = match mode {
            Mode::Pump => self.matrix.kronecker(&CMat::identity(dims.d_pr, dims.d_pr)),
            Mode::Probe => CMat::identity(dims.d_pu, dims.d_pu).kronecker(&self.matrix),
        };
        Operator::from_matrix(OpDims::Joint(dims), m)
    }

    /// Jump operator L = A B^dag: annihilates a pump photon, creates a
    /// probe photon. Built from truncated single-mode ladder operators,
    /// so matrix elements raising the probe out of range are zero.
    pub fn srs_jump(dims: FockDims) -> Result<Self> {
        let a = Operator::annihilation(dims.d_pu)?.embed(Mode::Pump, dims)?;
        let b_dag = Operator::creation(dims.d_pr)?.embed(Mode::Probe, dims)?;
        a.mul(&b_dag)
    }

    /// Photon-number difference n_pu - n_pr.
    pub fn number_difference(dims: FockDims) -> Result<Self> {
        let n_pu = Operator::number_op(dims.d_pu)?.embed(Mode::Pump, dims)?;
        let n_pr = Operator::number_op(dims.d_pr)?.embed(Mode::Probe, dims)?;
        n_pu.sub(&n_pr)
    }

    /// Total photon number n_pu + n_pr.
    pub fn total_number(dims: FockDims) -> Result<Self> {
        let n_pu = Operator::number_op(dims.d_pu)?.embed(Mode::Pump, dims)?;
        let n_pr = Operator::number_op(dims.d_pr)?.embed(Mode::Probe, dims)?;
        n_pu.add(&n_pr)
    }

    /// Probe photon number as a joint operator.
    pub fn probe_number(dims: FockDims) -> Result<Self> {
        Operator::number_op(dims.d_pr)?.embed(Mode::Probe, dims)
    }

    /// Pump photon number as a joint operator.
    pub fn pump_number(dims: FockDims) -> Result<Self> {
        Operator::number_op(dims.d_pu)?.embed(Mode::Pump, dims)
    }

    pub fn adjoint(&self) -> Self {
        Operator {
            dims: self.dims,
            matrix: self.matrix.adjoint(),
            hermitian: self.hermitian,
        }
    }

    pub fn mul(&self, other: &Operator) -> Result<Self> {
        self.check_same_dims(other)?;
        Operator::from_matrix(self.dims, &self.matrix * &other.matrix)
    }

    pub fn add(&self, other: &Operator) -> Result<Self> {
        self.check_same_dims(other)?;
        Operator::from_matrix(self.dims, &self.matrix + &other.matrix)
    }

    pub fn sub(&self, other: &Operator) -> Result<Self> {
        self.check_same_dims(other)?;
        Operator::from_matrix(self.dims, &self.matrix - &other.matrix)
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Operator {
            dims: self.dims,
            matrix: &self.matrix * factor,
            hermitian: self.hermitian && factor.im == 0.0,
        }
    }

    pub fn commutator(&self, other: &Operator) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    /// Real diagonal of the operator if it is diagonal and real, used for
    /// the populations fast path.
    pub fn real_diagonal(&self) -> Option<Vec<f64>> {
        let n = self.matrix.nrows();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.matrix[(i, j)].norm() > 0.0 {
                    return None;
                }
            }
            if self.matrix[(i, i)].im != 0.0 {
                return None;
            }
        }
        Some((0..n).map(|i| self.matrix[(i, i)].re).collect())
    }

    fn check_same_dims(&self, other: &Operator) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.dims),
                got: format!("{:?}", other.dims),
            });
        }
        Ok(())
    }
}

/// Basis vector |n_pu, n_pr> of the joint space.
pub fn basis_state(dims: FockDims, n_pu: usize, n_pr: usize) -> Result<CVec> {
    if n_pu >= dims.d_pu || n_pr >= dims.d_pr {
        return Err(Error::Dimension(format!(
            "basis state ({n_pu}, {n_pr}) outside truncation ({}, {})",
            dims.d_pu, dims.d_pr
        )));
    }
    let mut v = CVec::zeros(dims.joint());
    v[dims.index(n_pu, n_pr)] = c(1.0);
    Ok(v)
}

/// Trace-one positive Hermitian operator on the joint space.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub dims: FockDims,
    pub matrix: CMat,
    /// Total population of the highest Fock level of each mode.
    tail_population: f64,
}

impl DensityMatrix {
    /// Validate trace, Hermiticity and positivity, then wrap.
    pub fn new(dims: FockDims, matrix: CMat) -> Result<Self> {
        Self::build(dims, matrix, true)
    }

    /// Validate trace and Hermiticity only. The positivity certificate is
    /// a Cholesky factorization, cubic in the joint dimension; large-state
    /// pipelines run it through the CPTP suite instead of on every
    /// construction.
    pub fn new_skip_psd(dims: FockDims, matrix: CMat) -> Result<Self> {
        Self::build(dims, matrix, false)
    }

    fn build(dims: FockDims, matrix: CMat, check_psd: bool) -> Result<Self> {
        let d = dims.joint();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: format!("{d}x{d}"),
                got: format!("{}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        let trace: Complex64 = matrix.diagonal().iter().sum();
        if (trace.re - 1.0).abs() > TRACE_TOL || trace.im.abs() > TRACE_TOL {
            return Err(Error::Integrity(format!(
                "trace deviates from 1 by {:.3e}",
                ((trace.re - 1.0).powi(2) + trace.im.powi(2)).sqrt()
            )));
        }
        let herm_dev = hermiticity_deviation(&matrix);
        if herm_dev > HERM_TOL {
            return Err(Error::NonHermitian { deviation: herm_dev });
        }
        if check_psd && !is_psd_within(&matrix, PSD_TOL) {
            return Err(Error::Integrity(format!(
                "state has an eigenvalue below -{PSD_TOL:.0e}"
            )));
        }
        let tail_population = tail_population(dims, &matrix);
        Ok(DensityMatrix { dims, matrix, tail_population })
    }

    /// Pure-state projector |psi><psi| from a normalized state vector.
    pub fn from_pure(dims: FockDims, psi: &CVec) -> Result<Self> {
        if psi.len() != dims.joint() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}", dims.joint()),
                got: format!("{}", psi.len()),
            });
        }
        let norm = psi.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Integrity(format!(
                "state vector norm deviates from 1 by {:.3e}",
                (norm - 1.0).abs()
            )));
        }
        let matrix = psi * psi.adjoint();
        let tail_population = tail_population(dims, &matrix);
        Ok(DensityMatrix { dims, matrix, tail_population })
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.diagonal().iter().sum()
    }

    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Population of the highest Fock level of each mode.
    pub fn tail_population(&self) -> f64 {
        self.tail_population
    }

    pub fn tail_flagged(&self, eps_trunc: f64) -> bool {
        self.tail_population > eps_trunc
    }

    /// Diagonal in the joint Fock basis (the populations).
    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|z| z.re).collect()
    }

    /// Tr(op rho).
    pub fn expectation(&self, op: &Operator) -> Result<Complex64> {
        let d = self.dims.joint();
        match op.dims {
            OpDims::Joint(dims) if dims == self.dims => {}
            _ => {
                return Err(Error::DimensionMismatch {
                    expected: format!("joint {:?}", self.dims),
                    got: format!("{:?}", op.dims),
                })
            }
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                acc += op.matrix[(i, j)] * self.matrix[(j, i)];
            }
        }
        Ok(acc)
    }

    /// <op^2> - <op>^2 for a Hermitian observable.
    pub fn variance(&self, op: &Operator) -> Result<f64> {
        if !op.is_hermitian() {
            return Err(Error::NonHermitian {
                deviation: hermiticity_deviation(&op.matrix),
            });
        }
        let mean = self.expectation(op)?.re;
        let second = if let Some(diag) = op.real_diagonal() {
            let pops = self.populations();
            diag.iter().zip(pops.iter()).map(|(x, p)| x * x * p).sum::<f64>()
        } else {
            let prod = &op.matrix * &self.matrix;
            let d = self.dims.joint();
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..d {
                for j in 0..d {
                    acc += op.matrix[(i, j)] * prod[(j, i)];
                }
            }
            acc.re
        };
        Ok(second - mean * mean)
    }

    pub fn vectorize(&self) -> CVec {
        vectorize(&self.matrix)
    }
}

fn tail_population(dims: FockDims, matrix: &CMat) -> f64 {
    let mut tail = 0.0;
    for n_pr in 0..dims.d_pr {
        tail += matrix[(dims.index(dims.d_pu - 1, n_pr), dims.index(dims.d_pu - 1, n_pr))].re;
    }
    for n_pu in 0..dims.d_pu.saturating_sub(1) {
        tail += matrix[(dims.index(n_pu, dims.d_pr - 1), dims.index(n_pu, dims.d_pr - 1))].re;
    }
    tail
}

/// Column-stacking vectorization: entry (i, j) lands at position j*D + i.
pub fn vectorize(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &CVec, dims: FockDims) -> Result<CMat> {
    let d = dims.joint();
    if v.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: format!("{}", d * d),
            got: format!("{}", v.len()),
        });
    }
    Ok(CMat::from_column_slice(d, d, v.as_slice()))
}

/// Superoperator matrix of rho -> A rho B^dag under column stacking:
/// kron(conj(B), A).
pub fn sandwich_superop(a: &CMat, b: &CMat) -> CMat {
    let b_conj = b.map(|z| z.conj());
    b_conj.kronecker(a)
}
