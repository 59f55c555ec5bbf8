//! Spectral decompositions, complex-frequency Fourier transforms of one-,
//! three- and four-point correlators, and peak-based spectrum extraction.
//!
//! Conventions: `C_1pt(t) = Σ_n e^{-i t E_n} ⟨out|n⟩⟨n|in⟩`, transforms
//! use `∫ dt e^{i ω t} C(t)` with `Im ω > 0` so late times are damped,
//! and `Δω_n = ω - E_n`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Discrete spectrum with probe-state overlaps and an optional current
/// matrix in the energy eigenbasis.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    energies: Vec<f64>,
    /// `⟨n|ℓ_i⟩`
    overlaps_in: Vec<C64>,
    /// `⟨ℓ_f|n⟩`
    overlaps_out: Vec<C64>,
    /// `⟨n_f|J(0)|n_i⟩` in the eigenbasis, when a current is attached.
    current: Option<DMatrix<C64>>,
}

impl SpectralModel {
    pub fn new(energies: Vec<f64>, overlaps_in: Vec<C64>, overlaps_out: Vec<C64>) -> Self {
        assert_eq!(energies.len(), overlaps_in.len());
        assert_eq!(energies.len(), overlaps_out.len());
        assert!(energies.iter().all(|e| e.is_finite()));
        Self { energies, overlaps_in, overlaps_out, current: None }
    }

    pub fn with_current(mut self, current: DMatrix<C64>) -> Self {
        assert_eq!(current.nrows(), self.energies.len());
        assert_eq!(current.ncols(), self.energies.len());
        self.current = Some(current);
        self
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn overlaps_in(&self) -> &[C64] {
        &self.overlaps_in
    }

    pub fn overlaps_out(&self) -> &[C64] {
        &self.overlaps_out
    }

    pub fn current(&self) -> Option<&DMatrix<C64>> {
        self.current.as_ref()
    }

    /// `⟨n_f| J(t_c) J(0) |n_i⟩ = Σ_p e^{i t_c (E_f - E_p)} J_{fp} J_{pi}`.
    pub fn current_two_point(&self, nf: usize, ni: usize, t_c: f64) -> Result<C64> {
        let j = self.current.as_ref().ok_or(Error::Format {
            what: "SpectralModel",
            msg: "no current matrix attached".into(),
        })?;
        let ef = self.energies[nf];
        let mut acc = C64::new(0.0, 0.0);
        for (p, &ep) in self.energies.iter().enumerate() {
            acc += C64::new(0.0, t_c * (ef - ep)).exp() * j[(nf, p)] * j[(p, ni)];
        }
        Ok(acc)
    }
}

/// Time grid with complex correlator values and optional per-point
/// variances `(var_re, var_im)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorSeries {
    pub times: Vec<f64>,
    pub values: Vec<C64>,
    pub variance: Option<Vec<(f64, f64)>>,
}

impl CorrelatorSeries {
    pub fn new(times: Vec<f64>, values: Vec<C64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Format {
                what: "CorrelatorSeries",
                msg: "times and values lengths differ".into(),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format {
                what: "CorrelatorSeries",
                msg: "times must be strictly increasing".into(),
            });
        }
        Ok(Self { times, values, variance: None })
    }

    pub fn with_variance(mut self, variance: Vec<(f64, f64)>) -> Result<Self> {
        if variance.len() != self.times.len() {
            return Err(Error::Format {
                what: "CorrelatorSeries",
                msg: "variance length differs".into(),
            });
        }
        self.variance = Some(variance);
        Ok(self)
    }

    /// CSV with columns `t, re, im[, var_re, var_im]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.variance.is_some() {
            out.push_str("t,re,im,var_re,var_im\n");
        } else {
            out.push_str("t,re,im\n");
        }
        for (i, (&t, v)) in self.times.iter().zip(&self.values).enumerate() {
            match &self.variance {
                Some(var) => {
                    let (vr, vi) = var[i];
                    out.push_str(&format!("{:e},{:e},{:e},{:e},{:e}\n", t, v.re, v.im, vr, vi));
                }
                None => out.push_str(&format!("{:e},{:e},{:e}\n", t, v.re, v.im)),
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Format {
            what: "CorrelatorSeries",
            msg: "empty file".into(),
        })?;
        let has_var = header.trim_end().ends_with("var_im");
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut variance = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format {
                    what: "CorrelatorSeries",
                    msg: format!("line {}: {e}", ln + 2),
                })?;
            times.push(cols[0]);
            values.push(C64::new(cols[1], cols[2]));
            if has_var {
                variance.push((cols[3], cols[4]));
            }
        }
        let s = Self::new(times, values)?;
        if has_var { s.with_variance(variance) } else { Ok(s) }
    }
}

/// Frequency scan along a horizontal line `Im ω = omega_im > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyScan {
    pub omega_re: Vec<f64>,
    pub omega_im: f64,
    pub values: Vec<C64>,
}

impl FrequencyScan {
    pub fn new(omega_re: Vec<f64>, omega_im: f64, values: Vec<C64>) -> Result<Self> {
        if !(omega_im > 0.0) {
            return Err(Error::Format {
                what: "FrequencyScan",
                msg: format!("Im ω must be positive, got {omega_im}"),
            });
        }
        if omega_re.len() != values.len() {
            return Err(Error::Format {
                what: "FrequencyScan",
                msg: "grid and values lengths differ".into(),
            });
        }
        Ok(Self { omega_re, omega_im, values })
    }

    /// CSV with columns `re_omega, im_omega, re_val, im_val, abs_val`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re_omega,im_omega,re_val,im_val,abs_val\n");
        for (&w, v) in self.omega_re.iter().zip(&self.values) {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e}\n",
                w,
                self.omega_im,
                v.re,
                v.im,
                v.norm()
            ));
        }
        out
    }
}

/// `C_1pt(t) = Σ_n e^{-i t E_n} ⟨out|n⟩⟨n|in⟩`.
pub fn c1pt_from_spectrum(model: &SpectralModel, t: f64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for ((&e, oin), oout) in model
        .energies
        .iter()
        .zip(&model.overlaps_in)
        .zip(&model.overlaps_out)
    {
        acc += C64::new(0.0, -t * e).exp() * oout * oin;
    }
    acc
}

fn check_omega(model: &SpectralModel, omega: C64) -> Result<()> {
    if omega.im == 0.0 && model.energies.iter().any(|&e| (omega.re - e).abs() < 1e-14) {
        return Err(Error::PoleOnRealAxis { omega: omega.re });
    }
    Ok(())
}

/// Closed-form continuous transform
/// `∫_0^T dt e^{iωt} C_1pt(t) = i Σ_n (out·in / Δω_n)(1 - e^{i T Δω_n})`.
pub fn ft_continuous_model(model: &SpectralModel, omega: C64, t_max: f64) -> Result<C64> {
    assert!(t_max > 0.0);
    check_omega(model, omega)?;
    let mut acc = C64::new(0.0, 0.0);
    for ((&e, oin), oout) in model
        .energies
        .iter()
        .zip(&model.overlaps_in)
        .zip(&model.overlaps_out)
    {
        let dw = omega - e;
        let kernel = (C64::new(1.0, 0.0) - (C64::new(0.0, t_max) * dw).exp()) / dw;
        acc += oout * oin * kernel;
    }
    Ok(acc * C64::new(0.0, 1.0))
}

/// Adaptive-Simpson transform of a correlator callable,
/// `∫_0^T dt e^{iωt} C(t)`, to relative tolerance `tol`.
pub fn ft_continuous_quadrature<F>(c: F, omega: C64, t_max: f64, tol: f64) -> C64
where
    F: Fn(f64) -> C64,
{
    let f = |t: f64| (C64::new(0.0, t) * omega).exp() * c(t);
    // scale the absolute tolerance by a crude magnitude estimate
    let probe: f64 = (0..=8)
        .map(|i| f(t_max * i as f64 / 8.0).norm())
        .fold(0.0, f64::max);
    let abs_tol = (tol * probe * t_max).max(1e-300);
    adaptive_simpson(&f, 0.0, t_max, abs_tol, 28)
}

fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> C64
where
    F: Fn(f64) -> C64,
{
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = (fa + fm * 4.0 + fb) * ((b - a) / 6.0);
    simpson_step(f, a, m, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    m: f64,
    b: f64,
    fa: C64,
    fm: C64,
    fb: C64,
    whole: C64,
    tol: f64,
    depth: u32,
) -> C64
where
    F: Fn(f64) -> C64,
{
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (fa + flm * 4.0 + fm) * ((m - a) / 6.0);
    let right = (fm + frm * 4.0 + fb) * ((b - m) / 6.0);
    let delta = left + right - whole;
    if depth == 0 || delta.norm() <= 15.0 * tol {
        // Richardson correction
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, lm, m, fa, flm, fm, left, tol * 0.5, depth - 1)
        + simpson_step(f, m, rm, b, fm, frm, fb, right, tol * 0.5, depth - 1)
}

/// Continuous transform of a sampled series: exact integration of the
/// piecewise-linear interpolant against `e^{iωt}` (Filon-type, stable for
/// oscillatory kernels). The series must start at `t = 0` and reach
/// `t_max`.
pub fn ft_continuous_series(series: &CorrelatorSeries, omega: C64, t_max: f64) -> Result<C64> {
    let times = &series.times;
    if times.is_empty() || times[0] > 1e-12 || times[times.len() - 1] < t_max - 1e-9 {
        return Err(Error::Format {
            what: "ft_continuous_series",
            msg: "series must cover [0, T]".into(),
        });
    }
    let mut acc = C64::new(0.0, 0.0);
    for w in 0..times.len() - 1 {
        let (t0, t1) = (times[w], times[w + 1]);
        if t0 >= t_max {
            break;
        }
        let t1 = t1.min(t_max);
        let (c0, c1) = (series.values[w], series.values[w + 1]);
        let slope = (c1 - c0) / (times[w + 1] - times[w]);
        // ∫_{t0}^{t1} e^{iωt}(c0 + slope (t - t0)) dt, done exactly
        let iw = C64::new(0.0, 1.0) * omega;
        let e0 = (iw * t0).exp();
        let e1 = (iw * t1).exp();
        if omega.norm() * (t1 - t0) < 1e-8 {
            // small-phase fallback: trapezoid
            acc += (c0 + c1) * 0.5 * (t1 - t0) * ((iw * 0.5 * (t0 + t1)).exp());
        } else {
            let term0 = (e1 - e0) / iw * c0;
            let term1 = slope * ((e1 * (t1 - t0)) / iw - (e1 - e0) / (iw * iw));
            acc += term0 + term1;
        }
    }
    Ok(acc)
}

/// Closed-form discretized transform
/// `Δt Σ_{n_t=1}^{N_t} e^{i n_t Δt ω} C(n_t Δt)` via the geometric sum
/// `Δt Σ_n out·in e^{i Δω_n Δt} (1 - e^{i Δω_n T}) / (1 - e^{i Δω_n Δt})`.
pub fn ft_discrete_model(model: &SpectralModel, omega: C64, dt: f64, t_max: f64) -> Result<C64> {
    check_steps(dt, t_max)?;
    check_omega(model, omega)?;
    let mut acc = C64::new(0.0, 0.0);
    for ((&e, oin), oout) in model
        .energies
        .iter()
        .zip(&model.overlaps_in)
        .zip(&model.overlaps_out)
    {
        let dw = omega - e;
        let num = C64::new(1.0, 0.0) - (C64::new(0.0, t_max) * dw).exp();
        let den = C64::new(1.0, 0.0) - (C64::new(0.0, dt) * dw).exp();
        acc += oout * oin * (C64::new(0.0, dt) * dw).exp() * num / den;
    }
    Ok(acc * dt)
}

fn check_steps(dt: f64, t_max: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::NonIntegerSteps { t_total: t_max, dt });
    }
    let n = t_max / dt;
    let rounded = n.round();
    if (n - rounded).abs() > 1e-9 * n.max(1.0) || rounded < 1.0 {
        return Err(Error::NonIntegerSteps { t_total: t_max, dt });
    }
    Ok(rounded as usize)
}

/// Discrete transform of a sampled series on the grid `t = n Δt`,
/// `n = 1..N_t`. Returns the value and, when the series carries
/// variances, the linearly propagated `(var_re, var_im)`.
pub fn ft_discrete_series(
    series: &CorrelatorSeries,
    omega: C64,
    dt: f64,
    t_max: f64,
) -> Result<(C64, Option<(f64, f64)>)> {
    let n_t = check_steps(dt, t_max)?;
    let mut acc = C64::new(0.0, 0.0);
    let mut var = series.variance.as_ref().map(|_| (0.0f64, 0.0f64));
    for nt in 1..=n_t {
        let t = nt as f64 * dt;
        let idx = series
            .times
            .iter()
            .position(|&tt| (tt - t).abs() < 1e-9 * t.max(1.0))
            .ok_or(Error::Format {
                what: "ft_discrete_series",
                msg: format!("series missing grid point t = {t}"),
            })?;
        let w = (C64::new(0.0, t) * omega).exp() * dt;
        acc += w * series.values[idx];
        if let (Some((vr, vi)), Some(vs)) = (&mut var, &series.variance) {
            let (var_re, var_im) = vs[idx];
            *vr += w.re * w.re * var_re + w.im * w.im * var_im;
            *vi += w.im * w.im * var_re + w.re * w.re * var_im;
        }
    }
    Ok((acc, var))
}

/// The single-stable-particle toy spectrum: `N = 90` states with uniform
/// overlaps `1/sqrt(90)`, ground state at `m`, the rest from `2m` spaced
/// by `m/5`.
pub fn toy_model_fig1(m: f64) -> SpectralModel {
    let n = 90;
    let overlap = C64::new(1.0 / (n as f64).sqrt(), 0.0);
    let mut energies = Vec::with_capacity(n);
    energies.push(m);
    for j in 1..n {
        energies.push(2.0 * m + (j as f64 - 1.0) * m / 5.0);
    }
    SpectralModel::new(energies, vec![overlap; n], vec![overlap; n])
}

/// `C_3pt(t_f, t_i) = Σ e^{-i t_f E_f} e^{i t_i E_i} out_f in_i J_{fi}`.
pub fn c3pt_from_spectrum(model: &SpectralModel, t_f: f64, t_i: f64) -> Result<C64> {
    let j = model.current.as_ref().ok_or(Error::Format {
        what: "c3pt_from_spectrum",
        msg: "no current matrix attached".into(),
    })?;
    let mut acc = C64::new(0.0, 0.0);
    for (nf, &ef) in model.energies.iter().enumerate() {
        for (ni, &ei) in model.energies.iter().enumerate() {
            acc += C64::new(0.0, -t_f * ef).exp()
                * C64::new(0.0, t_i * ei).exp()
                * model.overlaps_out[nf]
                * model.overlaps_in[ni]
                * j[(nf, ni)];
        }
    }
    Ok(acc)
}

/// Double transform of the three-point correlator:
/// `Σ (i out_f / Δω_f)(i in_i / Δω_i)(1-e^{iT_f Δω_f})(1-e^{iT_i Δω_i}) J_{fi}`.
pub fn ft_c3pt(
    model: &SpectralModel,
    omega_f: C64,
    omega_i: C64,
    t_max_f: f64,
    t_max_i: f64,
) -> Result<C64> {
    assert!(t_max_f > 0.0 && t_max_i > 0.0);
    check_omega(model, omega_f)?;
    check_omega(model, omega_i)?;
    let j = model.current.as_ref().ok_or(Error::Format {
        what: "ft_c3pt",
        msg: "no current matrix attached".into(),
    })?;
    let i = C64::new(0.0, 1.0);
    let mut acc = C64::new(0.0, 0.0);
    for (nf, &ef) in model.energies.iter().enumerate() {
        let dwf = omega_f - ef;
        let kf = i * model.overlaps_out[nf] / dwf
            * (C64::new(1.0, 0.0) - (i * t_max_f * dwf).exp());
        for (ni, &ei) in model.energies.iter().enumerate() {
            let dwi = omega_i - ei;
            let ki = i * model.overlaps_in[ni] / dwi
                * (C64::new(1.0, 0.0) - (i * t_max_i * dwi).exp());
            acc += kf * ki * j[(nf, ni)];
        }
    }
    Ok(acc)
}

/// `C_4pt(t_f, t_c, t_i)` with the two-current Heisenberg element.
/// Requires `t_f > t_c > 0 > t_i`.
pub fn c4pt_from_spectrum(model: &SpectralModel, t_f: f64, t_c: f64, t_i: f64) -> Result<C64> {
    // non-strict at the boundaries: the transforms integrate t_i up to 0
    // and t_f down to t_c
    if !(t_f >= t_c && t_c >= 0.0 && 0.0 >= t_i) {
        return Err(Error::TimeOrdering(format!(
            "need t_f >= t_c >= 0 >= t_i, got t_f = {t_f}, t_c = {t_c}, t_i = {t_i}"
        )));
    }
    let mut acc = C64::new(0.0, 0.0);
    for (nf, &ef) in model.energies.iter().enumerate() {
        for (ni, &ei) in model.energies.iter().enumerate() {
            acc += C64::new(0.0, -t_f * ef).exp()
                * C64::new(0.0, t_i * ei).exp()
                * model.overlaps_out[nf]
                * model.overlaps_in[ni]
                * model.current_two_point(nf, ni, t_c)?;
        }
    }
    Ok(acc)
}

/// Double transform of the four-point correlator; the `t_f` integral runs
/// over `[t_c, T_f]`, giving the kernel `e^{i t_c Δω_f} - e^{i T_f Δω_f}`.
pub fn ft_c4pt(
    model: &SpectralModel,
    omega_f: C64,
    omega_i: C64,
    t_c: f64,
    t_max_f: f64,
    t_max_i: f64,
) -> Result<C64> {
    if t_c < 0.0 || t_max_f < t_c {
        return Err(Error::TimeOrdering(format!(
            "need T_f >= t_c >= 0, got t_c = {t_c}, T_f = {t_max_f}"
        )));
    }
    check_omega(model, omega_f)?;
    check_omega(model, omega_i)?;
    let i = C64::new(0.0, 1.0);
    let mut acc = C64::new(0.0, 0.0);
    for (nf, &ef) in model.energies.iter().enumerate() {
        let dwf = omega_f - ef;
        let kf = i * model.overlaps_out[nf] / dwf
            * ((i * t_c * dwf).exp() - (i * t_max_f * dwf).exp());
        for (ni, &ei) in model.energies.iter().enumerate() {
            let dwi = omega_i - ei;
            let ki = i * model.overlaps_in[ni] / dwi
                * (C64::new(1.0, 0.0) - (i * t_max_i * dwi).exp());
            acc += kf * ki * model.current_two_point(nf, ni, t_c)?;
        }
    }
    Ok(acc)
}

/// A local maximum of `|scan|`, refined by a parabola through the three
/// neighboring points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Refined `Re ω` of the maximum.
    pub omega: f64,
    /// Refined `|value|` at the maximum.
    pub value: f64,
    /// Half-width at half-maximum of the fitted parabola.
    pub half_width: f64,
}

/// Local maxima of `|value|` by 3-point comparison with parabolic
/// refinement. A monotone scan yields an empty list.
pub fn extract_peaks(scan: &FrequencyScan) -> Result<Vec<Peak>> {
    let n = scan.omega_re.len();
    if n < 3 {
        return Err(Error::ScanTooShort);
    }
    let mag: Vec<f64> = scan.values.iter().map(|v| v.norm()).collect();
    let mut peaks = Vec::new();
    for i in 1..n - 1 {
        if mag[i] > mag[i - 1] && mag[i] > mag[i + 1] {
            let dx = 0.5 * (scan.omega_re[i + 1] - scan.omega_re[i - 1]);
            let (ym, y0, yp) = (mag[i - 1], mag[i], mag[i + 1]);
            let denom = ym - 2.0 * y0 + yp;
            let (omega, value, curv) = if denom.abs() < 1e-300 {
                (scan.omega_re[i], y0, 0.0)
            } else {
                let shift = 0.5 * (ym - yp) / denom;
                let value = y0 - 0.125 * (ym - yp) * (ym - yp) / denom;
                // parabola y = value + a (x - x*)², a < 0 at a maximum
                let a = 0.5 * denom / (dx * dx);
                (scan.omega_re[i] + shift * dx, value, a)
            };
            let half_width = if curv < 0.0 {
                (value / (2.0 * -curv)).sqrt()
            } else {
                f64::INFINITY
            };
            peaks.push(Peak { omega, value, half_width });
        }
    }
    Ok(peaks)
}

/// Evaluate the model transform over a real-frequency grid.
pub fn scan_model(
    model: &SpectralModel,
    omega_re: &[f64],
    omega_im: f64,
    t_max: f64,
    dt: Option<f64>,
) -> Result<FrequencyScan> {
    let mut values = Vec::with_capacity(omega_re.len());
    for &w in omega_re {
        let omega = C64::new(w, omega_im);
        let v = match dt {
            None => ft_continuous_model(model, omega, t_max)?,
            Some(step) => ft_discrete_model(model, omega, step, t_max)?,
        };
        values.push(v);
    }
    FrequencyScan::new(omega_re.to_vec(), omega_im, values)
}
