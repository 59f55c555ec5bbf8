//! 1+1D complex scalar φ⁴ theory on `L` sites, mapped onto `2L` qumodes.
//!
//! Momentum-mode qumodes are laid out as `slot(k, B) = k` for particles
//! and `slot(k, C) = L + k` for antiparticles, `k = 0..L`. All quantities
//! are in lattice units (`a = 1`).
//!
//! The Gaussian transform `G` is a layer of two-mode squeezers pairing
//! `(k, B)` with `(L-k mod L, C)` at parameter `r(k) = -ln(ω(k))/2`,
//! followed by the discrete-Fourier interferometer on the `B` block and
//! the conjugate DFT on the `C` block. Its Heisenberg action takes the
//! momentum-mode quadratures to the position-mode quadratures of the
//! interaction Hamiltonian.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, FockState, ModeOperator};
use crate::gates::{self, Circuit, GateSpec};

pub const DEFAULT_ORACLE_CAP: usize = 65536;

fn default_oracle_cap() -> usize {
    DEFAULT_ORACLE_CAP
}

/// Model parameters in lattice units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Number of lattice sites `L`.
    pub sites: usize,
    /// Physical mass `m` (must satisfy m > 0).
    pub mass: f64,
    /// Counterterm `δ_m = m₀² - m²`.
    pub delta_m: f64,
    /// Quartic coupling `λ`.
    pub lambda: f64,
    /// Per-mode photon cutoff `K`.
    pub cutoff: usize,
    /// Trotter step; `None` means the `0.1 / max ω(k)` default.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Number of Trotter steps for a fixed-time evolution.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Largest full-space dimension the dense oracles may build.
    #[serde(default = "default_oracle_cap")]
    pub oracle_cap: usize,
}

impl ModelParams {
    pub fn new(sites: usize, mass: f64, delta_m: f64, lambda: f64, cutoff: usize) -> Self {
        Self {
            sites,
            mass,
            delta_m,
            lambda,
            cutoff,
            dt: None,
            steps: None,
            oracle_cap: DEFAULT_ORACLE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 1 {
            return Err(Error::InvalidParams("sites must be >= 1".into()));
        }
        if !(self.mass > 0.0) {
            return Err(Error::InvalidParams(format!(
                "mass must be positive (m² > 0), got {}",
                self.mass
            )));
        }
        if self.cutoff < 2 {
            return Err(Error::InvalidParams("cutoff must be >= 2".into()));
        }
        if !self.delta_m.is_finite() || !self.lambda.is_finite() {
            return Err(Error::InvalidParams("couplings must be finite".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidParams("dt must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn num_modes(&self) -> usize {
        2 * self.sites
    }

    pub fn layout(&self) -> ModeLayout {
        ModeLayout { sites: self.sites }
    }

    /// Trotter step: configured value or `0.1 / max ω(k)`.
    pub fn dt_or_default(&self) -> f64 {
        self.dt.unwrap_or_else(|| {
            let omega_max = (0..self.sites)
                .map(|k| dispersion(k, self))
                .fold(0.0f64, f64::max);
            0.1 / omega_max
        })
    }

    pub fn full_dim(&self, cutoff: usize) -> usize {
        (cutoff + 1).pow(self.num_modes() as u32)
    }

    pub fn check_oracle_cap(&self, cutoff: usize) -> Result<usize> {
        let dim = self.full_dim(cutoff);
        if dim > self.oracle_cap {
            return Err(Error::OracleCapExceeded { dim, cap: self.oracle_cap });
        }
        Ok(dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    /// Particle modes `b(k)`.
    B,
    /// Antiparticle modes `c(k)`.
    C,
}

/// Mapping `(k, species) -> flat qumode slot`, plus the squeezer pairing
/// table `(k, B) <-> (L-k mod L, C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeLayout {
    pub sites: usize,
}

/// One squeezer pair of the Gaussian transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SqueezePair {
    pub k: usize,
    pub mode_b: usize,
    pub mode_c: usize,
}

impl ModeLayout {
    pub fn num_modes(&self) -> usize {
        2 * self.sites
    }

    pub fn slot(&self, k: usize, species: Species) -> usize {
        debug_assert!(k < self.sites);
        match species {
            Species::B => k,
            Species::C => self.sites + k,
        }
    }

    pub fn b_slots(&self) -> Vec<usize> {
        (0..self.sites).collect()
    }

    pub fn c_slots(&self) -> Vec<usize> {
        (self.sites..2 * self.sites).collect()
    }

    /// Species and momentum index of a flat slot.
    pub fn unslot(&self, slot: usize) -> (usize, Species) {
        if slot < self.sites {
            (slot, Species::B)
        } else {
            (slot - self.sites, Species::C)
        }
    }

    /// Squeezer pairing `(k, B) <-> (L-k mod L, C)`; one entry per `k`, so
    /// `k = 0` (and `k = L/2` for even `L`) self-pair across species.
    pub fn pairs(&self) -> Vec<SqueezePair> {
        (0..self.sites)
            .map(|k| SqueezePair {
                k,
                mode_b: self.slot(k, Species::B),
                mode_c: self.slot((self.sites - k) % self.sites, Species::C),
            })
            .collect()
    }

    /// Charge `N_b - N_c` of an occupation vector.
    pub fn charge_of(&self, occ: &[usize]) -> i64 {
        let l = self.sites;
        let nb: i64 = occ[..l].iter().map(|&n| n as i64).sum();
        let nc: i64 = occ[l..].iter().map(|&n| n as i64).sum();
        nb - nc
    }

    /// Momentum `Σ k (n_b(k) + n_c(k)) mod L` of an occupation vector.
    /// Both species carry physical momentum `2πk/L`, which is what the
    /// squeezer pairing `(k, b) <-> (L-k, c)` conserves.
    pub fn momentum_of(&self, occ: &[usize]) -> i64 {
        let l = self.sites as i64;
        let mut p = 0i64;
        for k in 0..self.sites {
            p += k as i64 * (occ[k] as i64 + occ[self.sites + k] as i64);
        }
        p.rem_euclid(l)
    }
}

/// Dispersion `ω(k) = sqrt(m² + 4 sin²(π k / L))`.
pub fn dispersion(k: usize, params: &ModelParams) -> f64 {
    let s = (std::f64::consts::PI * k as f64 / params.sites as f64).sin();
    (params.mass * params.mass + 4.0 * s * s).sqrt()
}

/// Effective squeezing parameter `r(k) = -ln(ω(k)) / 2`, so that
/// `cosh r = (ω^{-1/2} + ω^{1/2})/2` and `sinh r = (ω^{-1/2} - ω^{1/2})/2`.
pub fn squeezing_parameter(k: usize, params: &ModelParams) -> f64 {
    -0.5 * dispersion(k, params).ln()
}

/// Frequencies per flat slot (both species share `ω(k)`).
pub fn slot_frequencies(params: &ModelParams) -> Vec<f64> {
    let l = params.sites;
    let mut w = Vec::with_capacity(2 * l);
    for k in 0..l {
        w.push(dispersion(k, params));
    }
    for k in 0..l {
        w.push(dispersion(k, params));
    }
    w
}

/// Diagonal of `H₀ = Σ_k ω(k) (N_{k,b} + N_{k,c})` over the full basis;
/// the vacuum eigenvalue is zero.
pub fn h0_diagonal(params: &ModelParams, cutoff: usize) -> Vec<f64> {
    let freqs = slot_frequencies(params);
    let probe = FockState::vacuum(params.num_modes(), cutoff);
    let dim = params.full_dim(cutoff);
    (0..dim)
        .map(|i| {
            probe
                .occupations_of(i)
                .iter()
                .zip(&freqs)
                .map(|(&n, &w)| n as f64 * w)
                .sum()
        })
        .collect()
}

/// The Gaussian transform `G` as a circuit: squeezer layer, then the DFT
/// interferometer on the `B` block and the conjugate DFT on the `C` block.
///
/// For `L = 2` the interferometer blocks reduce to 50:50 beam splitters
/// up to a π phase rotation; the exact DFT has determinant -1 per block,
/// which plain beam splitters (determinant +1) cannot reproduce.
pub fn build_g(params: &ModelParams) -> Circuit {
    let layout = params.layout();
    let mut c = Circuit::new(params.num_modes());
    for pair in layout.pairs() {
        c.push(gates::squeeze2(
            squeezing_parameter(pair.k, params),
            pair.mode_b,
            pair.mode_c,
        ));
    }
    if params.sites > 1 {
        c.push(gates::dft(layout.b_slots(), 1.0));
        c.push(gates::dft(layout.c_slots(), -1.0));
    }
    c
}

/// Position-mode interaction generator on one `(b, c)` pair:
/// `h = δ_m/2 [(q_b+q_c)² + (p_b-p_c)²] + λ/16 [(q_b+q_c)² + (p_b-p_c)²]²`.
pub fn build_hint_position(params: &ModelParams, cutoff: usize) -> Result<ModeOperator> {
    let (q, p) = fock::quadratures(cutoff);
    let id = fock::identity_op(1, cutoff);
    let qsum = q.kron(&id)?.into_matrix() + id.kron(&q)?.into_matrix();
    let pdiff = p.kron(&id)?.into_matrix() - id.kron(&p)?.into_matrix();
    let m2 = &qsum * &qsum + &pdiff * &pdiff;
    let h = &m2 * C64::new(params.delta_m / 2.0, 0.0)
        + (&m2 * &m2) * C64::new(params.lambda / 16.0, 0.0);
    ModeOperator::new(2, cutoff, h)
}

/// The `P_int(k)` gate block realizing `exp(-i dt h_int)` on the pair
/// `(k, B), (k, C)` with beam splitters, rotations, shears and quartic
/// phase gates.
///
/// Relative to the circuit diagram conventions: the mass-counterterm gates
/// are shears `exp(-i δ_m dt Q²)` (not number rotations), the quartic
/// gates carry `γ = -λ dt`, the inner rotation angle is π/2 for the
/// `rotate = exp(iθN)` convention used here, and the two closing beam
/// splitters are inverses (swapped targets). These choices make the block
/// equal the exact exponential.
pub fn build_pint_circuit(k: usize, params: &ModelParams, dt: f64) -> Result<Circuit> {
    params.validate()?;
    if k >= params.sites {
        return Err(Error::ModeOutOfRange { index: k, num_modes: params.sites });
    }
    let layout = params.layout();
    let b = layout.slot(k, Species::B);
    let c = layout.slot(k, Species::C);
    let mut circ = Circuit::new(params.num_modes());
    push_pint_gates(&mut circ, b, c, params, dt);
    Ok(circ)
}

fn push_pint_gates(circ: &mut Circuit, b: usize, c: usize, params: &ModelParams, dt: f64) {
    use std::f64::consts::FRAC_PI_2;
    let kappa = -params.delta_m * dt;
    let gamma = -params.lambda * dt;
    circ.push(gates::beamsplitter_5050(b, c))
        .push(gates::rotation(FRAC_PI_2, c))
        .push(gates::shear(kappa, b))
        .push(gates::shear(kappa, c))
        .push(gates::quartic_phase(gamma, b))
        .push(gates::quartic_phase(gamma, c))
        .push(gates::beamsplitter_5050(b, c))
        .push(gates::quartic_phase(gamma, b))
        .push(gates::quartic_phase(gamma, c))
        .push(gates::beamsplitter_5050(c, b))
        .push(gates::rotation(-FRAC_PI_2, c))
        .push(gates::beamsplitter_5050(c, b));
}

/// One first-order Trotter step for `exp(-i dt H)`:
/// `G`, the per-k `P_int` blocks, `G†`, then the free rotations
/// `exp(-i ω(k) dt N)` on every mode.
pub fn build_trotter_step(params: &ModelParams, dt: f64) -> Result<Circuit> {
    params.validate()?;
    let layout = params.layout();
    let g = build_g(params);
    let mut circ = Circuit::new(params.num_modes());
    circ.extend(g.gates.iter().cloned());
    for k in 0..params.sites {
        push_pint_gates(
            &mut circ,
            layout.slot(k, Species::B),
            layout.slot(k, Species::C),
            params,
            dt,
        );
    }
    circ.extend(g.inverted()?.gates);
    for slot in 0..params.num_modes() {
        let (k, _) = layout.unslot(slot);
        circ.push(gates::rotation(-dispersion(k, params) * dt, slot));
    }
    Ok(circ)
}

/// Free-evolution circuit `exp(-i t H₀)` (rotations only).
pub fn build_free_evolution(params: &ModelParams, t: f64) -> Circuit {
    let layout = params.layout();
    let mut circ = Circuit::new(params.num_modes());
    for slot in 0..params.num_modes() {
        let (k, _) = layout.unslot(slot);
        circ.push(gates::rotation(-dispersion(k, params) * t, slot));
    }
    circ
}

/// Dense full-space Hamiltonian `H = H₀ + G† (Σ_k h_int(k)) G`, gated by
/// the oracle cap.
pub fn exact_hamiltonian(params: &ModelParams, cutoff: usize) -> Result<DMatrix<C64>> {
    params.validate()?;
    let dim = params.check_oracle_cap(cutoff)?;
    let layout = params.layout();
    let g = build_g(params).compile(cutoff)?;
    let ginv = build_g(params).inverted()?.compile(cutoff)?;
    let hint = build_hint_position(params, cutoff)?;
    let diag = h0_diagonal(params, cutoff);
    let nm = params.num_modes();

    let mut h = DMatrix::<C64>::zeros(dim, dim);
    for col in 0..dim {
        let basis = crate::oracle::basis_state(nm, cutoff, col);
        let (rotated, _) = g.apply(&basis)?;
        let mut acc = FockState::from_amplitudes(
            nm,
            cutoff,
            vec![C64::new(0.0, 0.0); dim],
        )?;
        for k in 0..params.sites {
            let applied = fock::embed(
                &hint,
                &[layout.slot(k, Species::B), layout.slot(k, Species::C)],
                &rotated,
            )?;
            for (a, b) in acc.amplitudes_mut().iter_mut().zip(applied.amplitudes()) {
                *a += b;
            }
        }
        let (back, _) = ginv.apply(&acc)?;
        for row in 0..dim {
            h[(row, col)] = back.amplitudes()[row];
        }
        h[(col, col)] += C64::new(diag[col], 0.0);
    }
    Ok(h)
}

/// U(1) current `J(x) = i [π(x) φ(x) - φ†(x) π†(x)]` as a dense
/// full-space Hermitian matrix (cap-gated).
///
/// This is the charge-conserving Noether density; it commutes with
/// `Σ (N_b - N_c)` exactly.
pub fn current_matrix(params: &ModelParams, site: usize, cutoff: usize) -> Result<DMatrix<C64>> {
    params.validate()?;
    if site >= params.sites {
        return Err(Error::ModeOutOfRange { index: site, num_modes: params.sites });
    }
    let dim = params.check_oracle_cap(cutoff)?;
    let nm = params.num_modes();
    let terms = current_terms(params, site);
    let mut j = DMatrix::<C64>::zeros(dim, dim);
    let a_op = fock::ladder_lower(cutoff);
    let at_op = fock::ladder_raise(cutoff);
    for col in 0..dim {
        let basis = crate::oracle::basis_state(nm, cutoff, col);
        let mut acc = vec![C64::new(0.0, 0.0); dim];
        for term in &terms {
            // apply the rightmost ladder factor first
            let mut s = basis.clone();
            let (m1, dag1) = term.second;
            crate::fock::apply_one(&mut s, m1, if dag1 { at_op.matrix() } else { a_op.matrix() });
            let (m0, dag0) = term.first;
            crate::fock::apply_one(&mut s, m0, if dag0 { at_op.matrix() } else { a_op.matrix() });
            for (a, b) in acc.iter_mut().zip(s.amplitudes()) {
                *a += term.coef * b;
            }
        }
        for row in 0..dim {
            j[(row, col)] = acc[row];
        }
    }
    Ok(j)
}

struct QuadraticTerm {
    coef: C64,
    /// (mode, daggered) applied second (leftmost).
    first: (usize, bool),
    /// (mode, daggered) applied first (rightmost).
    second: (usize, bool),
}

/// Expansion of `J(x) = W + W†` with `W = i π(x) φ(x)` into ladder
/// bilinears over the momentum modes.
fn current_terms(params: &ModelParams, site: usize) -> Vec<QuadraticTerm> {
    let l = params.sites;
    let layout = params.layout();
    let theta = |k: usize| 2.0 * std::f64::consts::PI * k as f64 * site as f64 / l as f64;
    let mut terms = Vec::new();
    for k in 0..l {
        for kp in 0..l {
            let wk = dispersion(k, params);
            let wkp = dispersion(kp, params);
            let coef = (wk / wkp).sqrt() / (2.0 * l as f64);
            let b_k = layout.slot(k, Species::B);
            let b_kp = layout.slot(kp, Species::B);
            let c_k = layout.slot(k, Species::C);
            let c_kp = layout.slot(kp, Species::C);
            // W = i π φ = -Σ coef [ b†_k b_k' e^{i(θ_k'-θ_k)}
            //                      + b†_k c†_k' e^{-i(θ_k+θ_k')}
            //                      - c_k b_k' e^{i(θ_k+θ_k')}
            //                      - c_k c†_k' e^{i(θ_k-θ_k')} ]
            let phases = [
                (theta(kp) - theta(k), (b_k, true), (b_kp, false), -1.0),
                (-(theta(k) + theta(kp)), (b_k, true), (c_kp, true), -1.0),
                (theta(k) + theta(kp), (c_k, false), (b_kp, false), 1.0),
                (theta(k) - theta(kp), (c_k, false), (c_kp, true), 1.0),
            ];
            for &(phi, first, second, sign) in &phases {
                let w_coef = C64::new(0.0, phi).exp() * (sign * coef);
                terms.push(QuadraticTerm { coef: w_coef, first, second });
                // the Hermitian conjugate term: reversed order, daggers
                // flipped, coefficient conjugated
                terms.push(QuadraticTerm {
                    coef: w_coef.conj(),
                    first: (second.0, !second.1),
                    second: (first.0, !first.1),
                });
            }
        }
    }
    terms
}

/// Largest `|H_{αβ}|` between basis states of different charge (must
/// vanish by the U(1) symmetry).
pub fn charge_violation(h: &DMatrix<C64>, params: &ModelParams, cutoff: usize) -> f64 {
    sector_violation(h, params, cutoff, |layout, occ| layout.charge_of(occ))
}

/// Largest `|H_{αβ}|` between basis states of different momentum mod L.
pub fn momentum_violation(h: &DMatrix<C64>, params: &ModelParams, cutoff: usize) -> f64 {
    sector_violation(h, params, cutoff, |layout, occ| layout.momentum_of(occ))
}

fn sector_violation(
    h: &DMatrix<C64>,
    params: &ModelParams,
    cutoff: usize,
    label: impl Fn(&ModeLayout, &[usize]) -> i64,
) -> f64 {
    let layout = params.layout();
    let probe = FockState::vacuum(params.num_modes(), cutoff);
    let dim = h.nrows();
    let labels: Vec<i64> = (0..dim)
        .map(|i| label(&layout, &probe.occupations_of(i)))
        .collect();
    let mut worst = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            if labels[i] != labels[j] {
                worst = worst.max(h[(i, j)].norm());
            }
        }
    }
    worst
}

/// Gate list helpers shared with the CLI: a `current_unitary` gate bound
/// to this model.
pub fn current_unitary(zeta: f64, site: usize) -> GateSpec {
    gates::current_unitary(zeta, site)
}
