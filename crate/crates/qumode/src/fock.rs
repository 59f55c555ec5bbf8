//! Truncated Fock-space states and few-mode operators.
//!
//! A state over `M` qumodes with per-mode photon cutoff `K` is a dense
//! complex tensor of `(K+1)^M` amplitudes, stored mode-major (mode 0
//! varies slowest). Operators act on one or two mode factors and are
//! applied by tensor contraction; the full `(K+1)^M` matrix is never
//! materialized.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Norm drift beyond which measurement entry points renormalize and warn.
pub const NORM_DRIFT_WARN: f64 = 1e-8;

/// Pure state of `num_modes` qumodes, each truncated at `cutoff` photons.
#[derive(Debug, Clone, PartialEq)]
pub struct FockState {
    num_modes: usize,
    cutoff: usize,
    amps: Vec<C64>,
}

impl FockState {
    /// Vacuum of `num_modes` modes.
    pub fn vacuum(num_modes: usize, cutoff: usize) -> Self {
        assert!(num_modes >= 1 && cutoff >= 1);
        let mut amps = vec![C64::new(0.0, 0.0); (cutoff + 1).pow(num_modes as u32)];
        amps[0] = C64::new(1.0, 0.0);
        Self { num_modes, cutoff, amps }
    }

    /// Product Fock state `|n_0, n_1, ...⟩`.
    pub fn fock(occupations: &[usize], cutoff: usize) -> Result<Self> {
        let mut s = Self::vacuum(occupations.len(), cutoff);
        for &n in occupations {
            if n > cutoff {
                return Err(Error::Format {
                    what: "FockState::fock",
                    msg: format!("occupation {n} exceeds cutoff {cutoff}"),
                });
            }
        }
        s.amps[0] = C64::new(0.0, 0.0);
        let idx = s.index_of(occupations);
        s.amps[idx] = C64::new(1.0, 0.0);
        Ok(s)
    }

    /// Build from raw amplitudes (mode-major, length `(K+1)^M`).
    pub fn from_amplitudes(num_modes: usize, cutoff: usize, amps: Vec<C64>) -> Result<Self> {
        let expect = (cutoff + 1).pow(num_modes as u32);
        if amps.len() != expect {
            return Err(Error::Format {
                what: "FockState::from_amplitudes",
                msg: format!("expected {expect} amplitudes, got {}", amps.len()),
            });
        }
        if amps.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("state amplitudes"));
        }
        Ok(Self { num_modes, cutoff, amps })
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Per-mode dimension `K + 1`.
    pub fn dim(&self) -> usize {
        self.cutoff + 1
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    /// Flat index of an occupation vector (mode 0 slowest).
    pub fn index_of(&self, occ: &[usize]) -> usize {
        debug_assert_eq!(occ.len(), self.num_modes);
        let d = self.dim();
        occ.iter().fold(0, |acc, &n| acc * d + n)
    }

    /// Occupation vector of a flat index.
    pub fn occupations_of(&self, mut index: usize) -> Vec<usize> {
        let d = self.dim();
        let mut occ = vec![0; self.num_modes];
        for m in (0..self.num_modes).rev() {
            occ[m] = index % d;
            index /= d;
        }
        occ
    }

    pub fn amplitude(&self, occ: &[usize]) -> C64 {
        self.amps[self.index_of(occ)]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for z in &mut self.amps {
                *z /= n;
            }
        }
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|⟨self|other⟩|² / (‖self‖² ‖other‖²)`.
    pub fn fidelity(&self, other: &Self) -> f64 {
        let d = self.norm_sqr() * other.norm_sqr();
        if d == 0.0 {
            return 0.0;
        }
        self.inner(other).norm_sqr() / d
    }

    /// Tensor product `self ⊗ other` (other's modes appended, varying faster).
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        if self.cutoff != other.cutoff {
            return Err(Error::CutoffMismatch { op: other.cutoff, state: self.cutoff });
        }
        let mut amps = Vec::with_capacity(self.amps.len() * other.amps.len());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Ok(Self {
            num_modes: self.num_modes + other.num_modes,
            cutoff: self.cutoff,
            amps,
        })
    }

    /// `⟨state|op ⊗ 1|state⟩ / ‖state‖²` for an operator on `targets`.
    pub fn expectation(&self, op: &ModeOperator, targets: &[usize]) -> Result<C64> {
        let applied = embed(op, targets, self)?;
        Ok(self.inner(&applied) / self.norm_sqr())
    }

    /// Drop a mode by contracting it against a bra vector of length `K+1`.
    /// Returns the (unnormalized) reduced state.
    pub fn project_mode(&self, mode: usize, bra: &[C64]) -> Result<Self> {
        if mode >= self.num_modes {
            return Err(Error::ModeOutOfRange { index: mode, num_modes: self.num_modes });
        }
        let d = self.dim();
        assert_eq!(bra.len(), d);
        if self.num_modes == 1 {
            let z: C64 = (0..d).map(|n| bra[n].conj() * self.amps[n]).sum();
            return Self::from_amplitudes(1, self.cutoff, vec![z, C64::new(0.0, 0.0)][..1].to_vec())
                .or_else(|_| {
                    // single-mode projection leaves a scalar; keep it as a
                    // 1-mode state with the scalar in the vacuum slot
                    let mut amps = vec![C64::new(0.0, 0.0); d];
                    amps[0] = z;
                    Self::from_amplitudes(1, self.cutoff, amps)
                });
        }
        let outer = d.pow(mode as u32);
        let stride = d.pow((self.num_modes - 1 - mode) as u32);
        let mut out = vec![C64::new(0.0, 0.0); self.amps.len() / d];
        for o in 0..outer {
            for i in 0..stride {
                let base = o * d * stride + i;
                let mut z = C64::new(0.0, 0.0);
                for n in 0..d {
                    z += bra[n].conj() * self.amps[base + n * stride];
                }
                out[o * stride + i] = z;
            }
        }
        Self::from_amplitudes(self.num_modes - 1, self.cutoff, out)
    }
}

/// Complex matrix acting on one or two qumode factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOperator {
    arity: usize,
    cutoff: usize,
    mat: DMatrix<C64>,
}

impl ModeOperator {
    pub fn new(arity: usize, cutoff: usize, mat: DMatrix<C64>) -> Result<Self> {
        assert!(arity == 1 || arity == 2);
        let d = (cutoff + 1).pow(arity as u32);
        if mat.nrows() != d || mat.ncols() != d {
            return Err(Error::Format {
                what: "ModeOperator::new",
                msg: format!("expected {d}x{d} matrix, got {}x{}", mat.nrows(), mat.ncols()),
            });
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("operator entries"));
        }
        Ok(Self { arity, cutoff, mat })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    /// Verify Hermiticity to `tol`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        linalg::hermiticity_error(&self.mat) <= tol
    }

    pub fn adjoint(&self) -> Self {
        Self {
            arity: self.arity,
            cutoff: self.cutoff,
            mat: self.mat.adjoint(),
        }
    }

    /// Two-mode operator `self ⊗ other` in row-major factor order
    /// (first factor slowest).
    pub fn kron(&self, other: &Self) -> Result<Self> {
        assert!(self.arity == 1 && other.arity == 1);
        if self.cutoff != other.cutoff {
            return Err(Error::CutoffMismatch { op: other.cutoff, state: self.cutoff });
        }
        Ok(Self {
            arity: 2,
            cutoff: self.cutoff,
            mat: self.mat.kronecker(&other.mat),
        })
    }
}

impl std::ops::Add for &ModeOperator {
    type Output = ModeOperator;
    fn add(self, rhs: &ModeOperator) -> ModeOperator {
        assert_eq!(self.arity, rhs.arity);
        assert_eq!(self.cutoff, rhs.cutoff);
        ModeOperator {
            arity: self.arity,
            cutoff: self.cutoff,
            mat: &self.mat + &rhs.mat,
        }
    }
}

impl std::ops::Mul for &ModeOperator {
    type Output = ModeOperator;
    fn mul(self, rhs: &ModeOperator) -> ModeOperator {
        assert_eq!(self.arity, rhs.arity);
        assert_eq!(self.cutoff, rhs.cutoff);
        ModeOperator {
            arity: self.arity,
            cutoff: self.cutoff,
            mat: &self.mat * &rhs.mat,
        }
    }
}

/// Annihilation operator: `⟨n-1|a|n⟩ = sqrt(n)`.
pub fn ladder_lower(cutoff: usize) -> ModeOperator {
    assert!(cutoff >= 1);
    let d = cutoff + 1;
    let mut m = DMatrix::<C64>::zeros(d, d);
    for n in 1..d {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    ModeOperator { arity: 1, cutoff, mat: m }
}

/// Creation operator, the adjoint of [`ladder_lower`].
pub fn ladder_raise(cutoff: usize) -> ModeOperator {
    ladder_lower(cutoff).adjoint()
}

/// Photon number operator `N = a† a` (diagonal, exact at the cutoff).
pub fn number(cutoff: usize) -> ModeOperator {
    let d = cutoff + 1;
    let m = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            C64::new(i as f64, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    ModeOperator { arity: 1, cutoff, mat: m }
}

/// Quadrature pair `Q = (a + a†)/√2`, `P = i(a† - a)/√2`.
pub fn quadratures(cutoff: usize) -> (ModeOperator, ModeOperator) {
    let a = ladder_lower(cutoff);
    let at = ladder_raise(cutoff);
    let inv_sqrt2 = C64::new(1.0 / 2f64.sqrt(), 0.0);
    let q = ModeOperator {
        arity: 1,
        cutoff,
        mat: (a.matrix() + at.matrix()) * inv_sqrt2,
    };
    let p = ModeOperator {
        arity: 1,
        cutoff,
        mat: (at.matrix() - a.matrix()) * C64::new(0.0, 1.0) * inv_sqrt2,
    };
    (q, p)
}

pub fn identity_op(arity: usize, cutoff: usize) -> ModeOperator {
    let d = (cutoff + 1).pow(arity as u32);
    ModeOperator {
        arity,
        cutoff,
        mat: DMatrix::identity(d, d),
    }
}

fn check_targets(targets: &[usize], arity: usize, state: &FockState) -> Result<()> {
    if targets.len() != arity {
        return Err(Error::ArityMismatch { arity, targets: targets.len() });
    }
    for &t in targets {
        if t >= state.num_modes {
            return Err(Error::ModeOutOfRange { index: t, num_modes: state.num_modes });
        }
    }
    if arity == 2 && targets[0] == targets[1] {
        return Err(Error::DuplicateTargets(targets.to_vec()));
    }
    Ok(())
}

/// Apply `op` on the target mode factor(s), identity elsewhere.
///
/// For two-mode targets the row-major factor order of `op` matches the
/// order of `targets`.
pub fn embed(op: &ModeOperator, targets: &[usize], state: &FockState) -> Result<FockState> {
    if op.cutoff != state.cutoff {
        return Err(Error::CutoffMismatch { op: op.cutoff, state: state.cutoff });
    }
    check_targets(targets, op.arity, state)?;
    let mut out = state.clone();
    match op.arity {
        1 => apply_one(&mut out, targets[0], &op.mat),
        2 => apply_two(&mut out, targets[0], targets[1], &op.mat),
        _ => unreachable!(),
    }
    Ok(out)
}

/// In-place single-mode contraction.
pub(crate) fn apply_one(state: &mut FockState, target: usize, m: &DMatrix<C64>) {
    let d = state.dim();
    let stride = d.pow((state.num_modes - 1 - target) as u32);
    let outer = state.amps.len() / (d * stride);
    let mut scratch = vec![C64::new(0.0, 0.0); d];
    for o in 0..outer {
        for i in 0..stride {
            let base = o * d * stride + i;
            for (n, s) in scratch.iter_mut().enumerate() {
                *s = state.amps[base + n * stride];
            }
            for r in 0..d {
                let mut z = C64::new(0.0, 0.0);
                for (c, s) in scratch.iter().enumerate() {
                    z += m[(r, c)] * s;
                }
                state.amps[base + r * stride] = z;
            }
        }
    }
}

/// In-place diagonal single-mode contraction.
pub(crate) fn apply_diag(state: &mut FockState, target: usize, diag: &[C64]) {
    let d = state.dim();
    let stride = d.pow((state.num_modes - 1 - target) as u32);
    let outer = state.amps.len() / (d * stride);
    for o in 0..outer {
        for n in 0..d {
            let base = o * d * stride + n * stride;
            let f = diag[n];
            for i in 0..stride {
                state.amps[base + i] *= f;
            }
        }
    }
}

/// In-place two-mode contraction; `m` is `(d², d²)` with row index
/// `i_t1 * d + i_t2`.
pub(crate) fn apply_two(state: &mut FockState, t1: usize, t2: usize, m: &DMatrix<C64>) {
    let d = state.dim();
    let s1 = d.pow((state.num_modes - 1 - t1) as u32);
    let s2 = d.pow((state.num_modes - 1 - t2) as u32);
    let dd = d * d;
    let total = state.amps.len();
    let mut gather = vec![C64::new(0.0, 0.0); dd];
    // iterate over all flat indices whose t1 and t2 digits are zero
    let mut bases = Vec::with_capacity(total / dd);
    let nm = state.num_modes;
    let mut occ = vec![0usize; nm];
    'outer: loop {
        let mut idx = 0usize;
        for (m_i, &o) in occ.iter().enumerate() {
            idx = idx * d + if m_i == t1 || m_i == t2 { 0 } else { o };
        }
        bases.push(idx);
        // increment occ over non-target modes
        let mut carry = true;
        for m_i in (0..nm).rev() {
            if m_i == t1 || m_i == t2 {
                continue;
            }
            if carry {
                occ[m_i] += 1;
                if occ[m_i] == d {
                    occ[m_i] = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break 'outer;
        }
    }
    for &base in &bases {
        for n1 in 0..d {
            for n2 in 0..d {
                gather[n1 * d + n2] = state.amps[base + n1 * s1 + n2 * s2];
            }
        }
        for r in 0..dd {
            let mut z = C64::new(0.0, 0.0);
            for (c, g) in gather.iter().enumerate() {
                z += m[(r, c)] * g;
            }
            state.amps[base + (r / d) * s1 + (r % d) * s2] = z;
        }
    }
}

/// Apply `exp(scale * G)` on the target modes.
///
/// Hermitian generators (checked to 1e-10) go through eigendecomposition,
/// which is exact at the truncated dimension; anything else falls back to
/// scaling-and-squaring.
pub fn expm_apply(
    generator: &ModeOperator,
    scale: C64,
    targets: &[usize],
    state: &FockState,
) -> Result<FockState> {
    if !scale.re.is_finite() || !scale.im.is_finite() {
        return Err(Error::NonFinite("expm_apply scale"));
    }
    let u = expm_operator(generator, scale)?;
    embed(&u, targets, state)
}

/// Dense `exp(scale * G)` as a [`ModeOperator`].
pub fn expm_operator(generator: &ModeOperator, scale: C64) -> Result<ModeOperator> {
    if generator
        .mat
        .iter()
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::NonFinite("expm generator"));
    }
    let scale_mag = linalg::max_abs(&generator.mat).max(1.0);
    let mat = if linalg::hermiticity_error(&generator.mat) <= 1e-10 * scale_mag {
        linalg::expm_hermitian(&generator.mat, scale)
    } else {
        linalg::expm(&generator.mat.map(|z| z * scale))
    };
    Ok(ModeOperator {
        arity: generator.arity,
        cutoff: generator.cutoff,
        mat,
    })
}

/// One PNR outcome: photon counts per mode and its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnrOutcome {
    pub counts: Vec<usize>,
    pub probability: f64,
}

/// All photon-number outcomes with probability above `floor`.
///
/// Probabilities sum to at most 1; the deficit is the dropped mass plus any
/// truncation leakage. States with norm drift beyond [`NORM_DRIFT_WARN`]
/// are renormalized with a warning.
pub fn pnr_distribution(state: &FockState, floor: f64) -> Vec<PnrOutcome> {
    let nsq = state.norm_sqr();
    let scale = if (nsq - 1.0).abs() > NORM_DRIFT_WARN {
        log::warn!(
            "pnr_distribution: norm drift {:.3e}, renormalizing",
            nsq - 1.0
        );
        1.0 / nsq
    } else {
        1.0
    };
    let mut out = Vec::new();
    for (idx, amp) in state.amps.iter().enumerate() {
        let p = amp.norm_sqr() * scale;
        if p > floor {
            out.push(PnrOutcome {
                counts: state.occupations_of(idx),
                probability: p,
            });
        }
    }
    out
}

/// Histogram of multinomial PNR samples, keyed by occupation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnrHistogram {
    pub shots: u64,
    /// Sorted by occupation vector; counts sum to `shots`.
    pub bins: Vec<(Vec<usize>, u64)>,
}

impl PnrHistogram {
    /// Total-variation distance to a reference distribution.
    pub fn tv_distance(&self, dist: &[PnrOutcome]) -> f64 {
        use std::collections::BTreeMap;
        let mut acc: BTreeMap<&[usize], f64> = BTreeMap::new();
        for o in dist {
            acc.insert(&o.counts, o.probability);
        }
        let mut tv = 0.0;
        let mut seen: Vec<&[usize]> = Vec::new();
        for (occ, count) in &self.bins {
            let emp = *count as f64 / self.shots as f64;
            let p = acc.get(occ.as_slice()).copied().unwrap_or(0.0);
            tv += (emp - p).abs();
            seen.push(occ);
        }
        for (occ, p) in acc {
            if !seen.contains(&occ) {
                tv += p;
            }
        }
        tv / 2.0
    }
}

/// Draw `shots` multinomial samples from the PNR distribution of `state`.
///
/// Deterministic for a fixed seed.
pub fn sample_pnr(state: &FockState, shots: u64, rng: &mut ChaCha8Rng) -> PnrHistogram {
    assert!(shots >= 1);
    let dist = pnr_distribution(state, 0.0);
    let mut cdf = Vec::with_capacity(dist.len());
    let mut acc = 0.0;
    for o in &dist {
        acc += o.probability;
        cdf.push(acc);
    }
    let total = acc;
    let mut counts = vec![0u64; dist.len()];
    for _ in 0..shots {
        let u: f64 = rng.gen::<f64>() * total;
        let k = cdf.partition_point(|&c| c < u).min(dist.len() - 1);
        counts[k] += 1;
    }
    let mut bins: Vec<(Vec<usize>, u64)> = dist
        .into_iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(o, c)| (o.counts, c))
        .collect();
    bins.sort();
    PnrHistogram { shots, bins }
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    layout: String,
    num_modes: usize,
    cutoff: usize,
    amplitudes: Vec<[f64; 2]>,
}

impl FockState {
    /// Serialize to the on-disk JSON schema
    /// `{layout, num_modes, cutoff, amplitudes: [[re, im], ...]}`.
    pub fn to_json(&self) -> String {
        let f = StateFile {
            layout: "mode-major".to_string(),
            num_modes: self.num_modes,
            cutoff: self.cutoff,
            amplitudes: self.amps.iter().map(|z| [z.re, z.im]).collect(),
        };
        serde_json::to_string_pretty(&f).expect("state serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: StateFile = serde_json::from_str(text)?;
        if f.layout != "mode-major" {
            return Err(Error::Format {
                what: "FockState::from_json",
                msg: format!("unsupported layout {:?}", f.layout),
            });
        }
        Self::from_amplitudes(
            f.num_modes,
            f.cutoff,
            f.amplitudes.iter().map(|&[re, im]| C64::new(re, im)).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn ladder_annihilates_and_lowers() {
        let a = ladder_lower(4);
        let one = FockState::fock(&[1], 4).unwrap();
        let lowered = embed(&a, &[0], &one).unwrap();
        assert_relative_eq!(lowered.amplitude(&[0]).re, 1.0, epsilon = 1e-15);
        let vac = FockState::vacuum(1, 4);
        let killed = embed(&a, &[0], &vac).unwrap();
        assert_relative_eq!(killed.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn number_eigenvalue() {
        let three = FockState::fock(&[3], 5).unwrap();
        let n = number(5);
        let val = three.expectation(&n, &[0]).unwrap();
        assert_relative_eq!(val.re, 3.0, epsilon = 1e-14);
        assert_relative_eq!(val.im, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn canonical_commutator_below_cutoff() {
        let k = 7;
        let (q, p) = quadratures(k);
        assert!(q.is_hermitian(1e-12) && p.is_hermitian(1e-12));
        let comm = &(&q * &p).into_matrix() - &(&p * &q).into_matrix();
        // exact i*1 on n <= K-1; the top row is the truncation boundary
        for i in 0..k {
            for j in 0..k {
                let expect = if i == j { C64::new(0.0, 1.0) } else { C64::new(0.0, 0.0) };
                assert!((comm[(i, j)] - expect).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn vacuum_q_variance() {
        let (q, _) = quadratures(8);
        let vac = FockState::vacuum(1, 8);
        let qq = &q * &q;
        let var = vac.expectation(&qq, &[0]).unwrap();
        assert_relative_eq!(var.re, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn q_matrix_element_frozen() {
        // ⟨1|Q|0⟩ = 1/sqrt(2), direct from the ladder definitions
        let (q, _) = quadratures(4);
        assert_relative_eq!(q.matrix()[(1, 0)].re, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn embed_identity_is_noop() {
        let mut s = FockState::vacuum(3, 2);
        s.amps[5] = C64::new(0.4, -0.2);
        s.amps[17] = C64::new(-0.1, 0.9);
        let id = identity_op(1, 2);
        let out = embed(&id, &[1], &s).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn embed_single_mode_ladder() {
        // a on mode 1 of |0,2⟩ -> sqrt(2) |0,1⟩
        let s = FockState::fock(&[0, 2], 3).unwrap();
        let out = embed(&ladder_lower(3), &[1], &s).unwrap();
        assert_relative_eq!(out.amplitude(&[0, 1]).re, 2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(out.norm_sqr(), 2.0, epsilon = 1e-13);
    }

    #[test]
    fn embed_two_mode_matches_dense_kron() {
        // (a† ⊗ a) on |1,1⟩ = sqrt(2)*1 |2,0⟩ at K >= 2
        let k = 3;
        let s = FockState::fock(&[1, 1], k).unwrap();
        let op = ladder_raise(k).kron(&ladder_lower(k)).unwrap();
        let out = embed(&op, &[0, 1], &s).unwrap();
        assert_relative_eq!(out.amplitude(&[2, 0]).re, 2f64.sqrt(), epsilon = 1e-14);

        // oracle: dense kron acting on the flattened amplitude vector
        let d = k + 1;
        let dense = ladder_raise(k).matrix().kronecker(ladder_lower(k).matrix());
        let v = nalgebra::DVector::from_column_slice(s.amplitudes());
        let expect = dense * v;
        for i in 0..d * d {
            assert!((out.amplitudes()[i] - expect[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn embed_two_mode_swapped_targets() {
        let k = 2;
        let mut s = FockState::vacuum(3, k);
        for (i, z) in s.amplitudes_mut().iter_mut().enumerate() {
            *z = C64::new(i as f64 * 0.07, -(i as f64) * 0.013);
        }
        let op = ladder_raise(k).kron(&ladder_lower(k)).unwrap();
        // (a†⊗a) on (2,0) must equal (a⊗a†) on (0,2)
        let a = embed(&op, &[2, 0], &s).unwrap();
        let op_swapped = ladder_lower(k).kron(&ladder_raise(k)).unwrap();
        let b = embed(&op_swapped, &[0, 2], &s).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!((x - y).norm() < 1e-13);
        }
    }

    #[test]
    fn expm_scale_zero_is_identity() {
        let s = FockState::fock(&[2], 6).unwrap();
        let out = expm_apply(&number(6), C64::new(0.0, 0.0), &[0], &s).unwrap();
        assert_eq!(out.amplitudes(), s.amplitudes());
    }

    #[test]
    fn expm_diagonal_generator_phases() {
        // exp(-i theta N)|n⟩ = e^{-i theta n}|n⟩
        let theta = 0.37;
        let s = FockState::fock(&[3], 6).unwrap();
        let out = expm_apply(&number(6), C64::new(0.0, -theta), &[0], &s).unwrap();
        let expect = C64::new(0.0, -theta * 3.0).exp();
        assert!((out.amplitude(&[3]) - expect).norm() < 1e-14);
    }

    #[test]
    fn single_mode_squeezed_series() {
        // exp(r(a†² - a²)/2)|0⟩ amplitudes against the closed-form series
        //   c_{2n} = (tanh r)^n sqrt((2n)!) / (2^n n! sqrt(cosh r))
        let k = 40;
        let r = 0.5f64;
        let a = ladder_lower(k);
        let at = ladder_raise(k);
        let gen = ModeOperator::new(
            1,
            k,
            (at.matrix() * at.matrix() - a.matrix() * a.matrix()) * C64::new(0.5, 0.0),
        )
        .unwrap();
        // generator is anti-Hermitian; exponentiate i*(-i G) through the
        // Hermitian path by passing scale to the Hermitian matrix -iG
        let herm = ModeOperator::new(1, k, gen.matrix() * C64::new(0.0, -1.0)).unwrap();
        let vac = FockState::vacuum(1, k);
        let out = expm_apply(&herm, C64::new(0.0, r), &[0], &vac).unwrap();

        let mut log_fact = vec![0.0f64; 2 * k + 2];
        for i in 1..log_fact.len() {
            log_fact[i] = log_fact[i - 1] + (i as f64).ln();
        }
        // deep-interior levels; the top of the ladder feels the cutoff
        for n in 0..=14 {
            let ln_c = (r.tanh().abs().ln()) * n as f64 + 0.5 * log_fact[2 * n]
                - (n as f64) * 2f64.ln()
                - log_fact[n]
                - 0.5 * r.cosh().ln();
            let expect = r.tanh().signum().powi(n as i32) * ln_c.exp();
            let got = out.amplitude(&[2 * n]);
            assert!(
                (got.re - expect).abs() < 1e-9 && got.im.abs() < 1e-9,
                "n = {n}: got {got}, expect {expect}"
            );
        }
    }

    #[test]
    fn pnr_distribution_simple() {
        let two = FockState::fock(&[2], 4).unwrap();
        let dist = pnr_distribution(&two, 1e-15);
        assert_eq!(dist.len(), 1);
        assert_eq!(dist[0].counts, vec![2]);
        assert_relative_eq!(dist[0].probability, 1.0, epsilon = 1e-14);

        let mut bell = FockState::vacuum(2, 2);
        bell.amps = vec![C64::new(0.0, 0.0); 9];
        let idx01 = bell.index_of(&[0, 1]);
        let idx10 = bell.index_of(&[1, 0]);
        bell.amps[idx01] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        bell.amps[idx10] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let dist = pnr_distribution(&bell, 1e-15);
        assert_eq!(dist.len(), 2);
        for o in dist {
            assert_relative_eq!(o.probability, 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn two_mode_squeezed_pnr_is_thermal_diagonal() {
        // P(n,n) = tanh^{2n}(r) / cosh²(r), off-diagonal zero
        let k = 30;
        let r = 0.5f64;
        let a = ladder_lower(k);
        let at = ladder_raise(k);
        let g2 = at.kron(&at).unwrap().matrix() - a.kron(&a).unwrap().matrix();
        let herm = ModeOperator::new(2, k, g2 * C64::new(0.0, -1.0)).unwrap();
        let vac = FockState::vacuum(2, k);
        let tms = expm_apply(&herm, C64::new(0.0, r), &[0, 1], &vac).unwrap();
        let dist = pnr_distribution(&tms, 1e-18);
        for o in &dist {
            let (n1, n2) = (o.counts[0], o.counts[1]);
            if n1 != n2 {
                assert!(o.probability < 1e-20, "off-diagonal outcome {:?}", o.counts);
            } else {
                let expect = r.tanh().powi(2 * n1 as i32) / r.cosh().powi(2);
                assert_relative_eq!(o.probability, expect, epsilon = 1e-10, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_concentrated() {
        let three = FockState::fock(&[3], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = sample_pnr(&three, 100, &mut rng);
        assert_eq!(h.bins, vec![(vec![3], 100)]);

        let mut rng_a = ChaCha8Rng::seed_from_u64(5);
        let mut rng_b = ChaCha8Rng::seed_from_u64(5);
        let mut bell = FockState::vacuum(1, 3);
        bell.amps[0] = C64::new(0.6, 0.0);
        bell.amps[2] = C64::new(0.0, 0.8);
        let ha = sample_pnr(&bell, 5000, &mut rng_a);
        let hb = sample_pnr(&bell, 5000, &mut rng_b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn state_json_roundtrip() {
        let mut s = FockState::vacuum(2, 3);
        s.amps[3] = C64::new(0.25, -0.75);
        s.amps[7] = C64::new(-0.125, 0.5);
        let text = s.to_json();
        assert!(text.contains("\"layout\": \"mode-major\""));
        let back = FockState::from_json(&text).unwrap();
        assert_eq!(s, back);
    }
}
