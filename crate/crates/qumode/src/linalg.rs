//! Dense complex linear algebra helpers shared across the crate.
//!
//! Everything here operates on `nalgebra::DMatrix<Complex64>`. Gate-sized
//! matrices (up to a few hundred rows) go through exact Hermitian
//! eigendecomposition; the large lattice oracles use a Lanczos propagator
//! so the full Hamiltonian never has to be diagonalized.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Maximum deviation from Hermiticity, `max_ij |A_ij - conj(A_ji)|`.
pub fn hermiticity_error(a: &DMatrix<C64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (a[(i, j)] - a[(j, i)].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Largest entry magnitude.
pub fn max_abs(a: &DMatrix<C64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigendecomposition of a Hermitian matrix: `A = V diag(w) V†`.
///
/// Eigenvalues come back in ascending order.
pub fn eigh(a: &DMatrix<C64>) -> (DVector<f64>, DMatrix<C64>) {
    let eig = a.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let w = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut v = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        v.set_column(col, &eig.eigenvectors.column(i));
    }
    (w, v)
}

/// `exp(scale * A)` for Hermitian `A`, via eigendecomposition.
///
/// Exact at the truncated dimension for any complex `scale`, so the same
/// routine serves unitary evolution (`scale = -i t`) and Kraus damping
/// (`scale = -beta`).
pub fn expm_hermitian(a: &DMatrix<C64>, scale: C64) -> DMatrix<C64> {
    let (w, v) = eigh(a);
    let phases: Vec<C64> = w.iter().map(|&x| (scale * x).exp()).collect();
    let mut scaled = v.clone();
    for (c, phase) in phases.iter().enumerate() {
        let mut col = scaled.column_mut(c);
        col *= *phase;
    }
    &scaled * v.adjoint()
}

/// General dense matrix exponential by scaling-and-squaring on a Taylor
/// series. Used for series oracles and the non-Hermitian fallback.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let norm = a.iter().map(|z| z.norm()).fold(0.0, f64::max) * n as f64;
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.map(|z| z / 2f64.powi(squarings as i32));
    let mut result = DMatrix::<C64>::identity(n, n);
    let mut term = DMatrix::<C64>::identity(n, n);
    for k in 1..=24 {
        term = (&term * &scaled).map(|z| z / k as f64);
        result += &term;
        if term.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Spectral norm (largest singular value), via the largest eigenvalue of
/// `A† A`.
pub fn spectral_norm(a: &DMatrix<C64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = a.adjoint() * a;
    let (w, _) = eigh(&gram);
    w[w.len() - 1].max(0.0).sqrt()
}

/// Lanczos propagator: `exp(scale * H) v` for Hermitian `H` given only a
/// mat-vec closure. Restarts are not needed at the accuracies and spectral
/// ranges used here; the Krylov dimension grows until the residual estimate
/// drops below `tol * ||v||`.
pub fn lanczos_expmv<F>(matvec: F, v: &[C64], scale: C64, tol: f64, max_dim: usize) -> Result<Vec<C64>>
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let n = v.len();
    let beta0 = l2_norm(v);
    if beta0 == 0.0 {
        return Ok(vec![C64::new(0.0, 0.0); n]);
    }
    let mut basis: Vec<Vec<C64>> = vec![v.iter().map(|z| z / beta0).collect()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    let m_max = max_dim.min(n);
    let mut converged_coeffs: Option<Vec<C64>> = None;
    for j in 0..m_max {
        let mut w = matvec(&basis[j]);
        let alpha = dot(&basis[j], &w).re;
        alphas.push(alpha);
        axpy(&mut w, -C64::new(alpha, 0.0), &basis[j]);
        if j > 0 {
            let b = betas[j - 1];
            axpy(&mut w, -C64::new(b, 0.0), &basis[j - 1]);
        }
        // full reorthogonalization keeps the test oracles at 1e-12
        for q in &basis {
            let c = dot(q, &w);
            axpy(&mut w, -c, q);
        }
        let beta = l2_norm(&w);

        // evaluate exp on the tridiagonal projection and check the tail
        let m = alphas.len();
        let coeffs = tridiag_exp_e1(&alphas, &betas, scale);
        let tail = coeffs[m - 1].norm() * beta;
        if tail < tol || beta < 1e-14 || j + 1 == m_max {
            if tail >= tol && beta >= 1e-14 {
                return Err(Error::Format {
                    what: "lanczos_expmv",
                    msg: format!("no convergence at Krylov dimension {m_max} (tail {tail:.3e})"),
                });
            }
            converged_coeffs = Some(coeffs);
            break;
        }
        betas.push(beta);
        basis.push(w.iter().map(|z| z / beta).collect());
    }

    let coeffs = converged_coeffs.expect("loop either converges or errors");
    let mut out = vec![C64::new(0.0, 0.0); n];
    for (q, c) in basis.iter().zip(coeffs.iter()) {
        axpy(&mut out, *c * beta0, q);
    }
    Ok(out)
}

/// `exp(scale * T) e_1` for the real symmetric tridiagonal `T` built from
/// Lanczos coefficients.
fn tridiag_exp_e1(alphas: &[f64], betas: &[f64], scale: C64) -> Vec<C64> {
    let m = alphas.len();
    let mut t = DMatrix::<C64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = C64::new(alphas[i], 0.0);
        if i + 1 < m {
            t[(i, i + 1)] = C64::new(betas[i], 0.0);
            t[(i + 1, i)] = C64::new(betas[i], 0.0);
        }
    }
    let u = expm_hermitian(&t, scale);
    (0..m).map(|i| u[(i, 0)]).collect()
}

fn l2_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Hermitian generator `M` of a unitary `V = exp(i M)`, via the
/// eigendecomposition of `V`. `V` must be unitary to ~1e-12.
pub fn unitary_log(v: &DMatrix<C64>) -> DMatrix<C64> {
    // V is normal; Schur via the Hermitian trick: diagonalize V + V† and
    // V - V† simultaneously would be fragile, so use the eigendecomposition
    // of the Hermitian part rotated: for unitary V, (V + V†)/2 and the
    // skew part commute. Simplest robust route: eigendecompose V through
    // its Hermitian embedding H = [[0, V],[V†, 0]] is overkill at 2x2;
    // all callers pass 2x2 or diagonal blocks, handled analytically below.
    let n = v.nrows();
    assert_eq!(n, 2, "unitary_log is only used for 2x2 Givens factors");
    // 2x2 unitary: V = e^{i phi/2} [[a, b], [-b*, a*]]-like; recover the
    // Hermitian generator from the eigen-system of V directly. Eigenvalues
    // of a 2x2 matrix:
    let tr = v[(0, 0)] + v[(1, 1)];
    let det = v[(0, 0)] * v[(1, 1)] - v[(0, 1)] * v[(1, 0)];
    let disc = (tr * tr - det * 4.0).sqrt();
    let l1 = (tr + disc) * 0.5;
    let l2 = (tr - disc) * 0.5;
    let (e1, e2) = (eigvec_2x2(v, l1), eigvec_2x2(v, l2));
    let (p1, p2) = (l1.arg(), l2.arg());
    let mut m = DMatrix::<C64>::zeros(2, 2);
    for (lam, e) in [(p1, e1), (p2, e2)] {
        for i in 0..2 {
            for j in 0..2 {
                m[(i, j)] += C64::new(lam, 0.0) * e[i] * e[j].conj();
            }
        }
    }
    m
}

fn eigvec_2x2(v: &DMatrix<C64>, lam: C64) -> [C64; 2] {
    let a = v[(0, 0)] - lam;
    let b = v[(0, 1)];
    let c = v[(1, 0)];
    let d = v[(1, 1)] - lam;
    // pick the better-conditioned row
    let (x, y) = if a.norm() + b.norm() > c.norm() + d.norm() {
        (b, -a)
    } else {
        (d, -c)
    };
    let norm = (x.norm_sqr() + y.norm_sqr()).sqrt();
    if norm < 1e-300 {
        return [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    }
    [x / norm, y / norm]
}

/// A two-level (Givens) factor of a multi-mode passive unitary.
#[derive(Debug, Clone)]
pub struct GivensFactor {
    pub rows: (usize, usize),
    pub block: DMatrix<C64>,
}

/// Decompose an `n x n` unitary into two-level factors and a final diagonal
/// phase layer: `V = G_1 G_2 ... G_m D`.
///
/// Standard QR by Givens rotations; each factor mixes a pair of rows. The
/// factors come back in left-to-right matrix-product order.
pub fn decompose_unitary(v: &DMatrix<C64>) -> (Vec<GivensFactor>, Vec<f64>) {
    let n = v.nrows();
    let mut work = v.clone();
    let mut elim: Vec<GivensFactor> = Vec::new();
    for col in 0..n {
        for row in (col + 1..n).rev() {
            let a = work[(row - 1, col)];
            let b = work[(row, col)];
            if b.norm() < 1e-15 {
                continue;
            }
            let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let c = a.conj() / r;
            let s = b.conj() / r;
            // G = [[c, s], [-s*, c*]] zeroes work[row][col]
            let g = DMatrix::from_row_slice(2, 2, &[c, s, -s.conj(), c.conj()]);
            apply_two_level_left(&mut work, row - 1, row, &g);
            elim.push(GivensFactor {
                rows: (row - 1, row),
                block: g,
            });
        }
    }
    let phases: Vec<f64> = (0..n).map(|i| work[(i, i)].arg()).collect();
    // (G_m ... G_1) V = D, so V = G_1† G_2† ... G_m† D
    let factors = elim
        .into_iter()
        .map(|f| GivensFactor {
            rows: f.rows,
            block: f.block.adjoint(),
        })
        .collect();
    (factors, phases)
}

fn apply_two_level_left(m: &mut DMatrix<C64>, i: usize, j: usize, g: &DMatrix<C64>) {
    for col in 0..m.ncols() {
        let a = m[(i, col)];
        let b = m[(j, col)];
        m[(i, col)] = g[(0, 0)] * a + g[(0, 1)] * b;
        m[(j, col)] = g[(1, 0)] * a + g[(1, 1)] * b;
    }
}

/// Discrete Fourier matrix `F[x][k] = exp(sign * 2 pi i k x / n) / sqrt(n)`.
pub fn dft_matrix(n: usize, sign: f64) -> DMatrix<C64> {
    let norm = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |x, k| {
        let phi = sign * 2.0 * std::f64::consts::PI * (k as f64) * (x as f64) / n as f64;
        C64::new(0.0, phi).exp() * norm
    })
}
