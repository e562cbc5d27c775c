//! Dense complex linear algebra shared by the whole crate: matrix
//! exponential, Hermitian eigendecompositions and positivity certificates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Deterministic RNG used wherever the crate needs random numbers.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Max column sum of moduli (the induced 1-norm).
pub fn one_norm(m: &CMat) -> f64 {
    let mut max = 0.0f64;
    for j in 0..m.ncols() {
        let s: f64 = m.column(j).iter().map(|z| z.norm()).sum();
        if s > max {
            max = s;
        }
    }
    max
}

/// Largest entrywise deviation from Hermiticity, max |M - M^dag|.
pub fn hermiticity_deviation(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut max = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            if d > max {
                max = d;
            }
        }
    }
    max
}

/// Hermitian part (M + M^dag)/2.
pub fn hermitian_part(m: &CMat) -> CMat {
    let mut out = m.clone();
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = (m[(i, j)] + m[(j, i)].conj()) * c(0.5);
        }
    }
    out
}

/// Padé(13) coefficients from the scaling-and-squaring method.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling-and-squaring with a Padé(13) approximant.
///
/// The scaling power is chosen from the 1-norm so that the scaled matrix
/// stays inside the Padé(13) backward-error region.
pub fn expm(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!(
            "expm needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidParameter(
            "expm input has non-finite entries".into(),
        ));
    }
    if n == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    if n == 1 {
        return Ok(CMat::from_element(1, 1, a[(0, 0)].exp()));
    }

    let theta13 = 5.371920351148152;
    let norm = one_norm(a);
    let s = if norm > theta13 {
        (norm / theta13).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a * c(0.5f64.powi(s as i32));

    let eye = CMat::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * c(PADE13[13]) + &a4 * c(PADE13[11]) + &a2 * c(PADE13[9]);
    let u = &scaled
        * (&a6 * &u_inner
            + &a6 * c(PADE13[7])
            + &a4 * c(PADE13[5])
            + &a2 * c(PADE13[3])
            + &eye * c(PADE13[1]));
    let v_inner = &a6 * c(PADE13[12]) + &a4 * c(PADE13[10]) + &a2 * c(PADE13[8]);
    let v = &a6 * &v_inner
        + &a6 * c(PADE13[6])
        + &a4 * c(PADE13[4])
        + &a2 * c(PADE13[2])
        + &eye * c(PADE13[0]);

    let num = &v + &u;
    let den = &v - &u;
    let mut x = den
        .lu()
        .solve(&num)
        .ok_or_else(|| Error::Integrity("Padé denominator is singular".into()))?;

    for _ in 0..s {
        x = &x * &x;
    }
    Ok(x)
}

/// Householder reduction of a Hermitian matrix to real symmetric
/// tridiagonal form, H = Z T Z^dag. Returns (diagonal, subdiagonal, Z);
/// Z is accumulated only when `want_vectors` is set.
fn tridiagonalize(m: &CMat, want_vectors: bool) -> (Vec<f64>, Vec<f64>, Option<CMat>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut reflectors: Vec<(usize, CVec)> = Vec::new();

    // magnitudes below this are treated as exact zeros; for unit-norm
    // inputs this sits far under the reduction roundoff while keeping
    // complex divisions clear of denormal underflow
    const TINY: f64 = 1e-150;

    for k in 0..n.saturating_sub(2) {
        let len = n - k - 1;
        let mut x = CVec::zeros(len);
        for i in 0..len {
            x[i] = a[(k + 1 + i, k)];
        }
        let xnorm = x.norm();
        if xnorm < TINY {
            continue;
        }
        let x0n = x[0].norm();
        let phase = if x0n > TINY {
            Complex64::new(x[0].re / x0n, x[0].im / x0n)
        } else {
            ONE
        };
        let alpha = -phase * c(xnorm);
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm < TINY {
            continue;
        }
        v = v.map(|z| Complex64::new(z.re / vnorm, z.im / vnorm));

        // two-sided update of the trailing block: H <- H - v u^dag - u v^dag
        // with p = H v and u = 2 (p - (v^dag p) v)
        let mut p = CVec::zeros(len);
        for i in 0..len {
            let mut acc = ZERO;
            for j in 0..len {
                acc += a[(k + 1 + i, k + 1 + j)] * v[j];
            }
            p[i] = acc * c(2.0);
        }
        let vp = v.dotc(&p);
        let u = &p - &v * vp;
        for i in 0..len {
            for j in 0..len {
                let upd = v[i] * u[j].conj() + u[i] * v[j].conj();
                a[(k + 1 + i, k + 1 + j)] -= upd;
            }
        }
        a[(k + 1, k)] = alpha;
        a[(k, k + 1)] = alpha.conj();
        for i in 2..=len {
            a[(k + i, k)] = ZERO;
            a[(k, k + i)] = ZERO;
        }
        reflectors.push((k, v));
    }

    // strip phases off the subdiagonal so T is real
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut phases = vec![ONE; n];
    for i in 0..n {
        d[i] = a[(i, i)].re;
    }
    for i in 0..n.saturating_sub(1) {
        let sub = a[(i + 1, i)];
        let mag = sub.norm();
        e[i] = mag;
        phases[i + 1] = if mag > 1e-150 {
            phases[i] * Complex64::new(sub.re / mag, sub.im / mag)
        } else {
            phases[i]
        };
    }

    let z = if want_vectors {
        let mut q = CMat::identity(n, n);
        for (k, v) in reflectors.iter().rev() {
            // q <- (I - 2 v v^dag) q on rows k+1..
            let len = v.len();
            for col in 0..n {
                let mut acc = ZERO;
                for i in 0..len {
                    acc += v[i].conj() * q[(k + 1 + i, col)];
                }
                let acc2 = acc * c(2.0);
                for i in 0..len {
                    let sub = acc2 * v[i];
                    q[(k + 1 + i, col)] -= sub;
                }
            }
        }
        for col in 0..n {
            let ph = phases[col];
            for row in 0..n {
                q[(row, col)] *= ph;
            }
        }
        Some(q)
    } else {
        None
    };
    (d, e, z)
}

/// Implicit-shift QL iteration on a real symmetric tridiagonal matrix,
/// optionally rotating the columns of Z along. The classic EISPACK tql2
/// scheme, robust to clustered and vanishing eigenvalues.
fn tql2(d: &mut [f64], e: &mut [f64], mut z: Option<&mut CMat>) -> Result<()> {
    let n = d.len();
    if n <= 1 {
        return Ok(());
    }
    // absolute deflation floor: zeroing a subdiagonal below eps * ||T||
    // perturbs eigenvalues by no more than the reduction roundoff
    let mut anorm = 0.0f64;
    for i in 0..n {
        let mut row = d[i].abs();
        if i > 0 {
            row += e[i - 1].abs();
        }
        if i + 1 < n {
            row += e[i].abs();
        }
        anorm = anorm.max(row);
    }
    let floor = f64::EPSILON * anorm;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= (f64::EPSILON * dd).max(floor) {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(Error::Integrity(
                    "tridiagonal QL iteration failed to converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            let sign_r = if g >= 0.0 { r } else { -r };
            g = d[m] - d[l] + e[l] / (g + sign_r);
            let (mut s, mut co) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = co * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                co = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * co * b;
                p = s * r;
                d[i + 1] = g + p;
                g = co * r - b;
                if let Some(zm) = z.as_deref_mut() {
                    for k in 0..zm.nrows() {
                        f = zm[(k, i + 1)].re;
                        let f_im = zm[(k, i + 1)].im;
                        let zi = zm[(k, i)];
                        zm[(k, i + 1)] =
                            Complex64::new(s * zi.re + co * f, s * zi.im + co * f_im);
                        zm[(k, i)] = Complex64::new(co * zi.re - s * f, co * zi.im - s * f_im);
                    }
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[doc(hidden)]
pub fn debug_tridiagonalize(m: &CMat, want_vectors: bool) -> (Vec<f64>, Vec<f64>, Option<CMat>) {
    tridiagonalize(m, want_vectors)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let (mut d, mut e, _) = tridiagonalize(m, false);
    tql2(&mut d, &mut e, None).expect("QL iteration diverged");
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d
}

/// Full Hermitian eigendecomposition, eigenvalues sorted descending.
pub struct HermitianEig {
    pub values: Vec<f64>,
    /// Column i is the eigenvector of `values[i]`.
    pub vectors: CMat,
}

pub fn hermitian_eigen(m: &CMat) -> HermitianEig {
    let n = m.nrows();
    let (mut d, mut e, z) = tridiagonalize(m, true);
    let mut z = z.unwrap();
    tql2(&mut d, &mut e, Some(&mut z)).expect("QL iteration diverged");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap());
    let mut vectors = CMat::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(d[src]);
        vectors.set_column(dst, &z.column(src));
    }
    HermitianEig { values, vectors }
}

/// Certify min eigenvalue >= -shift by attempting a Cholesky factorization
/// of M + shift*I with strictly positive real pivots. Cheap compared to an
/// eigendecomposition.
pub fn is_psd_within(m: &CMat, shift: f64) -> bool {
    let n = m.nrows();
    let mut l = m.clone();
    for i in 0..n {
        l[(i, i)] += c(shift);
    }
    for j in 0..n {
        let mut d = l[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let pivot = d.sqrt();
        l[(j, j)] = c(pivot);
        for i in j + 1..n {
            let mut v = l[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = v / pivot;
        }
    }
    true
}

/// Exact smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    let vals = m.symmetric_eigenvalues();
    vals.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Partial Hermitian eigendecomposition by block subspace iteration with
/// Rayleigh-Ritz extraction, for trace-normalized PSD matrices (density
/// matrices) whose numerical rank is far below the dimension. Returns
/// every eigenpair above `floor`; the captured-trace certificate grows
/// the block until the spectrum is accounted for, falling back to the
/// dense path if the rank estimate keeps growing.
pub fn partial_hermitian_eig(m: &CMat, floor: f64, seed: u64) -> HermitianEig {
    let n = m.nrows();
    let trace: f64 = m.diagonal().iter().map(|z| z.re).sum();
    let mut rank = 64.min(n);
    let max_rank = 384.min(n);
    let mut rng = seeded_rng(seed ^ 0x5153_5245_4947_4e45);

    loop {
        if rank >= n || rank > max_rank {
            return hermitian_eigen(m);
        }
        let mut block = CMat::zeros(n, rank);
        for j in 0..rank {
            for i in 0..n {
                block[(i, j)] = Complex64::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
            }
        }
        let mut q = thin_q(&block);
        for _ in 0..8 {
            q = thin_q(&(m * &q));
        }
        // Rayleigh-Ritz on the converged subspace.
        let mq = m * &q;
        let small = q.adjoint() * &mq;
        let small = hermitian_part(&small);
        let eig = hermitian_eigen(&small);
        let ritz = &q * &eig.vectors;

        // completeness certificate: the Ritz values must account for the
        // full trace down to well below the QFI eigenvalue cutoff, so no
        // cutoff-relevant eigenpair can hide in the complement
        let captured: f64 = eig.values.iter().sum();
        let missing = trace - captured;
        if missing.abs() > 1e-13 * trace.abs().max(1.0) {
            rank = (rank * 2).min(n);
            continue;
        }
        let kept: Vec<usize> = (0..rank).filter(|&i| eig.values[i] > floor).collect();
        let mritz = m * &ritz;
        let mut converged = true;
        for &i in &kept {
            let resid = (mritz.column(i) - ritz.column(i) * c(eig.values[i])).norm();
            if resid > 1e-10 {
                converged = false;
                break;
            }
        }
        if !converged {
            rank = (rank * 2).min(n);
            continue;
        }
        let mut vectors = CMat::zeros(n, kept.len());
        let mut values = Vec::with_capacity(kept.len());
        for (dst, &src) in kept.iter().enumerate() {
            values.push(eig.values[src]);
            vectors.set_column(dst, &ritz.column(src));
        }
        return HermitianEig { values, vectors };
    }
}

fn thin_q(m: &CMat) -> CMat {
    m.clone().qr().q()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let mut rng = seeded_rng(seed);
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        hermitian_part(&m)
    }

    #[test]
    fn expm_zero_is_identity() {
        let z = CMat::zeros(4, 4);
        let e = expm(&z).unwrap();
        assert!((e - CMat::identity(4, 4)).iter().all(|x| x.norm() < 1e-14));
    }

    #[test]
    fn expm_diagonal_matches_entrywise_exponential() {
        let mut d = CMat::zeros(3, 3);
        d[(0, 0)] = Complex64::new(0.3, -0.2);
        d[(1, 1)] = Complex64::new(-1.5, 0.4);
        d[(2, 2)] = Complex64::new(2.0, 0.0);
        let e = expm(&d).unwrap();
        for i in 0..3 {
            assert!((e[(i, i)] - d[(i, i)].exp()).norm() < 1e-13);
            for j in 0..3 {
                if i != j {
                    assert!(e[(i, j)].norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn expm_small_norm_matches_taylor_series() {
        // Independent oracle: I + K + K^2/2 + K^3/6 at ||K|| = 1e-4.
        let base = random_hermitian(6, 7);
        let k = &base * c(1e-4 / one_norm(&base));
        let taylor = CMat::identity(6, 6) + &k + (&k * &k) * c(0.5) + (&k * &k * &k) * c(1.0 / 6.0);
        let e = expm(&k).unwrap();
        assert!(one_norm(&(e - taylor)) < 1e-10);
    }

    #[test]
    fn expm_large_norm_uses_scaling() {
        let mut d = CMat::zeros(2, 2);
        d[(0, 0)] = c(50.0);
        d[(1, 1)] = c(-50.0);
        let e = expm(&d).unwrap();
        assert_abs_diff_eq!(e[(0, 0)].re, 50f64.exp(), epsilon = 1e-6 * 50f64.exp());
        assert!(e[(1, 1)].re.abs() < 1e-20);
    }

    #[test]
    fn expm_antihermitian_gives_unitary() {
        let h = random_hermitian(5, 3);
        let a = &h * I;
        let u = expm(&a).unwrap();
        let prod = &u * u.adjoint();
        assert!(one_norm(&(prod - CMat::identity(5, 5))) < 1e-12);
    }

    #[test]
    fn expm_rejects_non_finite() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 1)] = c(f64::NAN);
        assert!(expm(&m).is_err());
    }

    #[test]
    fn hermitian_eigen_reconstructs_matrix() {
        let m = random_hermitian(12, 11);
        let eig = hermitian_eigen(&m);
        let mut lam = CMat::zeros(12, 12);
        for i in 0..12 {
            lam[(i, i)] = c(eig.values[i]);
        }
        let recon = &eig.vectors * lam * eig.vectors.adjoint();
        assert!(one_norm(&(recon - m)) < 1e-10);
        for i in 1..12 {
            assert!(eig.values[i - 1] >= eig.values[i]);
        }
    }

    #[test]
    fn psd_certificate_agrees_with_min_eigenvalue() {
        let m = random_hermitian(10, 5);
        let min = min_eigenvalue(&m);
        assert!(is_psd_within(&m, -min + 1e-8));
        assert!(!is_psd_within(&m, -min - 0.1));
    }

    #[test]
    fn eigensolver_handles_rank_deficient_matrices() {
        // projector-like spectrum with a large exactly-degenerate null
        // cluster; classic QL failure mode for fragile implementations
        let n = 60;
        let mut rng = seeded_rng(23);
        let mut m = CMat::zeros(n, n);
        let mut basis: Vec<CVec> = Vec::new();
        for &w in &[1.0, 0.01, 1e-6] {
            let mut v = CVec::zeros(n);
            for i in 0..n {
                v[i] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            for b in &basis {
                let overlap = b.dotc(&v);
                v -= b * overlap;
            }
            let v = v.normalize();
            m += (&v * v.adjoint()) * c(w);
            basis.push(v);
        }
        let m = hermitian_part(&m);
        let eig = hermitian_eigen(&m);
        assert!(eig.values.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(eig.values[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(eig.values[1], 0.01, epsilon = 1e-9);
        assert_abs_diff_eq!(eig.values[2], 1e-6, epsilon = 1e-11);
        // orthonormal columns
        let gram = eig.vectors.adjoint() * &eig.vectors;
        assert!(one_norm(&(gram - CMat::identity(n, n))) < 1e-10);
        // reconstruction
        let mut lam = CMat::zeros(n, n);
        for i in 0..n {
            lam[(i, i)] = c(eig.values[i]);
        }
        let recon = &eig.vectors * lam * eig.vectors.adjoint();
        assert!(one_norm(&(recon - m)) < 1e-10);
    }

    #[test]
    fn eigenvalues_only_route_matches_full_route() {
        let m = random_hermitian(20, 31);
        let vals_only = hermitian_eigenvalues(&m);
        let full = hermitian_eigen(&m);
        let mut full_sorted = full.values.clone();
        full_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in vals_only.iter().zip(full_sorted.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn partial_eig_matches_dense_on_low_rank_matrix() {
        // Build a rank-8 PSD matrix in dimension 120.
        let n = 120;
        let mut rng = seeded_rng(17);
        let mut m = CMat::zeros(n, n);
        for k in 0..8usize {
            let mut v = CVec::zeros(n);
            for i in 0..n {
                v[i] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            let v = v.normalize();
            let w = 2f64.powi(-(k as i32));
            m += (&v * v.adjoint()) * c(w);
        }
        let m = hermitian_part(&m);
        let dense = hermitian_eigen(&m);
        let partial = partial_hermitian_eig(&m, 1e-10, 1);
        assert!(partial.values.len() >= 8);
        for k in 0..8 {
            assert_abs_diff_eq!(partial.values[k], dense.values[k], epsilon = 1e-9);
        }
    }
}
