//! Uniform position-space grids for single-mode wavefunctions.
//!
//! Grids are Fourier self-dual (`dq = sqrt(2π/n)`), so the momentum grid
//! coincides with the position grid and quarter rotations are exact FFTs.
//! Quadrature is plain Riemann/trapezoid — exponentially accurate for the
//! smooth, decaying wavefunctions handled here.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Grid {
    pub n: usize,
    pub dq: f64,
    pub points: Vec<f64>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.n)
            .field("dq", &self.dq)
            .field("range", &(self.points[0], self.points[self.n - 1]))
            .finish()
    }
}

impl Grid {
    /// Self-dual grid with `n` points (power of two, multiple of 4).
    pub fn self_dual(n: usize) -> Arc<Grid> {
        assert!(n.is_power_of_two() && n >= 4);
        let dq = (2.0 * std::f64::consts::PI / n as f64).sqrt();
        let points = (0..n).map(|j| (j as f64 - n as f64 / 2.0) * dq).collect();
        let mut planner = FftPlanner::new();
        Arc::new(Grid {
            n,
            dq,
            points,
            fft_fwd: planner.plan_fft_forward(n),
            fft_inv: planner.plan_fft_inverse(n),
        })
    }

    /// Smallest self-dual grid whose half-range exceeds `span`.
    pub fn covering(span: f64) -> Arc<Grid> {
        let mut n = 256usize;
        loop {
            let dq = (2.0 * std::f64::consts::PI / n as f64).sqrt();
            if (n as f64 / 2.0) * dq > span {
                return Self::self_dual(n);
            }
            n *= 2;
            assert!(n <= 1 << 22, "grid span {span} out of reach");
        }
    }

    pub fn half_range(&self) -> f64 {
        self.n as f64 / 2.0 * self.dq
    }

    /// `∫ |f|² dq`.
    pub fn norm_sqr(&self, f: &[C64]) -> f64 {
        f.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.dq
    }

    /// `∫ conj(a) b dq`.
    pub fn inner(&self, a: &[C64], b: &[C64]) -> C64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.conj() * y)
            .sum::<C64>()
            * self.dq
    }

    pub fn normalize(&self, f: &mut [C64]) -> f64 {
        let n = self.norm_sqr(f).sqrt();
        if n > 0.0 {
            for z in f.iter_mut() {
                *z /= n;
            }
        }
        n
    }

    /// `F₋[f](p) = (2π)^{-1/2} ∫ e^{-ipq} f(q) dq`, on the same grid.
    /// This is the action of `exp(-i π/2 N)`.
    pub fn fourier_minus(&self, f: &[C64]) -> Vec<C64> {
        self.fourier_impl(f, false)
    }

    /// `F₊[f](p) = (2π)^{-1/2} ∫ e^{+ipq} f(q) dq — `exp(+i π/2 N)`.
    pub fn fourier_plus(&self, f: &[C64]) -> Vec<C64> {
        self.fourier_impl(f, true)
    }

    fn fourier_impl(&self, f: &[C64], plus: bool) -> Vec<C64> {
        debug_assert_eq!(f.len(), self.n);
        let n = self.n;
        // with q_j = (j - n/2) dq and dq² = 2π/n:
        // e^{∓i p_k q_j} = e^{∓2πi kj/n} (-1)^{k+j} e^{∓iπn/2}
        // and n ≡ 0 (mod 4) kills the constant phase
        let mut buf: Vec<C64> = f
            .iter()
            .enumerate()
            .map(|(j, z)| if j % 2 == 0 { *z } else { -*z })
            .collect();
        if plus {
            self.fft_inv.process(&mut buf);
        } else {
            self.fft_fwd.process(&mut buf);
        }
        let scale = 1.0 / (n as f64).sqrt();
        for (k, z) in buf.iter_mut().enumerate() {
            if k % 2 == 1 {
                *z = -*z;
            }
            *z *= scale;
        }
        buf
    }

    /// `df/dq` by spectral differentiation.
    pub fn derivative(&self, f: &[C64]) -> Vec<C64> {
        let mut ft = self.fourier_minus(f);
        for (k, z) in ft.iter_mut().enumerate() {
            // d/dq ↔ multiplication by i p in the F₋ domain
            *z *= C64::new(0.0, self.points[k]);
        }
        self.fourier_plus(&ft)
    }

    /// `X(s) = e^{-i s P}`: translation `f(q) -> f(q - s)` via the
    /// momentum-space phase.
    pub fn translate_q(&self, f: &[C64], s: f64) -> Vec<C64> {
        let mut ft = self.fourier_minus(f);
        for (k, z) in ft.iter_mut().enumerate() {
            *z *= C64::new(0.0, -s * self.points[k]).exp();
        }
        self.fourier_plus(&ft)
    }

    /// `Z(t) = e^{i t Q}`: pointwise phase.
    pub fn translate_p(&self, f: &[C64], t: f64) -> Vec<C64> {
        f.iter()
            .zip(&self.points)
            .map(|(z, &q)| z * C64::new(0.0, t * q).exp())
            .collect()
    }

    /// Shear `exp(i κ Q²)`: pointwise chirp.
    pub fn shear(&self, f: &[C64], kappa: f64) -> Vec<C64> {
        f.iter()
            .zip(&self.points)
            .map(|(z, &q)| z * C64::new(0.0, kappa * q * q).exp())
            .collect()
    }

    /// Normalized Hermite function `φ_n(q)` for n = 0..=n_max, by the
    /// stable upward recurrence.
    pub fn hermite_functions(&self, n_max: usize) -> Vec<Vec<f64>> {
        hermite_rows(&self.points, n_max)
    }

    /// Squeezed-vacuum wavefunction of `S(r)|0⟩` (p-squeezed for r > 0):
    /// a Gaussian of q-width `e^r / sqrt(2)`.
    pub fn squeezed_vacuum(&self, r: f64) -> Vec<C64> {
        let sigma_sq = (2.0 * r).exp() / 2.0;
        let norm = (std::f64::consts::PI * 2.0 * sigma_sq).powf(-0.25);
        self.points
            .iter()
            .map(|&q| C64::new(norm * (-q * q / (4.0 * sigma_sq)).exp(), 0.0))
            .collect()
    }

    /// Fock coefficients `⟨n|f⟩` for n = 0..=n_max.
    pub fn to_fock(&self, f: &[C64], n_max: usize) -> Vec<C64> {
        let phis = self.hermite_functions(n_max);
        phis.iter()
            .map(|phi| {
                phi.iter()
                    .zip(f)
                    .map(|(&h, z)| h * z)
                    .sum::<C64>()
                    * self.dq
            })
            .collect()
    }

    /// Grid wavefunction of a Fock-coefficient vector.
    pub fn from_fock(&self, coeffs: &[C64]) -> Vec<C64> {
        let phis = self.hermite_functions(coeffs.len().saturating_sub(1));
        let mut out = vec![C64::new(0.0, 0.0); self.n];
        for (phi, c) in phis.iter().zip(coeffs) {
            for (o, &h) in out.iter_mut().zip(phi) {
                *o += c * h;
            }
        }
        out
    }
}

/// Hermite functions on arbitrary points.
pub fn hermite_rows(points: &[f64], n_max: usize) -> Vec<Vec<f64>> {
    let g = points.len();
    let mut rows = Vec::with_capacity(n_max + 1);
    let norm0 = std::f64::consts::PI.powf(-0.25);
    rows.push(
        points
            .iter()
            .map(|&q| norm0 * (-q * q / 2.0).exp())
            .collect::<Vec<f64>>(),
    );
    if n_max >= 1 {
        let r1: Vec<f64> = points
            .iter()
            .zip(&rows[0])
            .map(|(&q, &h0)| 2f64.sqrt() * q * h0)
            .collect();
        rows.push(r1);
    }
    for n in 2..=n_max {
        let mut row = vec![0.0; g];
        for i in 0..g {
            row[i] = (2.0 / n as f64).sqrt() * points[i] * rows[n - 1][i]
                - ((n - 1) as f64 / n as f64).sqrt() * rows[n - 2][i];
        }
        rows.push(row);
    }
    rows
}

/// `⟨m|_θ |q⟩`, the homodyne bra kernel on the grid, in closed form:
///
/// `(2π cosθ)^{-1/2} exp{-i[(tanθ/2)(q² + m²) + (m/cosθ) q]}`
///
/// (stationary phase of the harmonic propagator; θ = 0 reduces to the
/// plane wave `e^{-imq}/sqrt(2π)`). Valid for |θ| < π/2; m-independent
/// global phases are dropped. Equivalent to the Hermite sum
/// `Σ_n e^{-iθn} (-i)^n φ_n(m) φ_n(q)`.
pub fn homodyne_kernel(grid: &Grid, theta: f64, m: f64) -> Vec<C64> {
    assert!(theta.cos() > 1e-9, "homodyne kernel needs |θ| < π/2");
    let half_tan = 0.5 * theta.tan();
    let norm = (2.0 * std::f64::consts::PI * theta.cos()).powf(-0.5);
    let m_scaled = m / theta.cos();
    grid.points
        .iter()
        .map(|&q| C64::new(0.0, -(half_tan * (q * q + m * m) + m_scaled * q)).exp() * norm)
        .collect()
}
