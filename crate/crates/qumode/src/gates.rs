//! Gate set and circuits over truncated Fock space.
//!
//! Gate parameter conventions (all angles/strengths real unless noted):
//!
//! | kind             | params            | semantics                              |
//! |------------------|-------------------|----------------------------------------|
//! | `rotate`         | `[theta]`         | `exp(i theta a†a)`                     |
//! | `displace`       | `[re, im]`        | `exp(xi a† - xi* a)`                   |
//! | `shear`          | `[kappa]`         | `exp(i kappa Q²)`                      |
//! | `squeeze1`       | `[r]`             | `exp(r (a†² - a²) / 2)`                |
//! | `squeeze2`       | `[r]`             | `exp(r (a1†a2† - a1a2))`               |
//! | `beamsplitter`   | `[]`              | `exp(pi/4 (a1†a2 - a1a2†))`            |
//! | `cz`             | `[]`              | `exp(i Q1 Q2)`                         |
//! | `quartic_phase`  | `[gamma]`         | `exp(i gamma Q⁴ / 6)`                  |
//! | `translate_q`    | `[s]`             | `X(s) = exp(-i s P)`                   |
//! | `translate_p`    | `[t]`             | `Z(t) = exp(i t Q)`                    |
//! | `dft`            | `[sign]`          | passive DFT over the target block      |
//! | `current_unitary`| `[zeta, site]`    | `exp(i zeta J(site))`, needs model     |
//! | `controlled_n`   | `[dt]`            | `exp(-i dt N_anc ⊗ H)`, needs model    |
//! | `controlled_q`   | `[tau]`           | `exp(-i tau Q_anc ⊗ H)`, needs model   |
//!
//! The 50:50 beam splitter convention, with `(a1, a2)` the target modes in
//! order: `B a1 B† = (a1 - a2)/√2`, `B a2 B† = (a1 + a2)/√2`. Applying it
//! twice rotates the pair by `pi/2`. `B` with swapped targets is `B†`.
//!
//! `dft` targets an ordered block `[t_0, ..., t_{n-1}]` and implements the
//! passive mixing `U† a_{t_x} U = (1/√n) Σ_k exp(sign·2πi k x / n) a_{t_k}`,
//! compiled into two-mode Givens factors and phase rotations.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, FockState};
use crate::lattice::ModelParams;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Rotate,
    Displace,
    Shear,
    Squeeze1,
    Squeeze2,
    #[serde(rename = "beamsplitter")]
    BeamSplitter5050,
    Cz,
    QuarticPhase,
    CurrentUnitary,
    ControlledN,
    ControlledQ,
    TranslateQ,
    TranslateP,
    Dft,
}

impl GateKind {
    pub fn name(&self) -> &'static str {
        match self {
            GateKind::Rotate => "rotate",
            GateKind::Displace => "displace",
            GateKind::Shear => "shear",
            GateKind::Squeeze1 => "squeeze1",
            GateKind::Squeeze2 => "squeeze2",
            GateKind::BeamSplitter5050 => "beamsplitter",
            GateKind::Cz => "cz",
            GateKind::QuarticPhase => "quartic_phase",
            GateKind::CurrentUnitary => "current_unitary",
            GateKind::ControlledN => "controlled_n",
            GateKind::ControlledQ => "controlled_q",
            GateKind::TranslateQ => "translate_q",
            GateKind::TranslateP => "translate_p",
            GateKind::Dft => "dft",
        }
    }
}

/// One gate application: kind, target modes, real parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub params: Vec<f64>,
}

fn finite(params: &[f64], kind: GateKind) -> Result<()> {
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::GateParams {
            kind: kind.name().into(),
            msg: "non-finite parameter".into(),
        });
    }
    Ok(())
}

/// `exp(i theta a†a)` on one mode.
pub fn rotation(theta: f64, mode: usize) -> GateSpec {
    GateSpec { kind: GateKind::Rotate, targets: vec![mode], params: vec![theta] }
}

/// `exp(xi a† - xi* a)` on one mode.
pub fn displacement(xi: C64, mode: usize) -> GateSpec {
    GateSpec { kind: GateKind::Displace, targets: vec![mode], params: vec![xi.re, xi.im] }
}

/// Shear `exp(i kappa Q²)` on one mode.
pub fn shear(kappa: f64, mode: usize) -> GateSpec {
    GateSpec { kind: GateKind::Shear, targets: vec![mode], params: vec![kappa] }
}

/// Single-mode squeezer `exp(r (a†² - a²)/2)`.
pub fn squeeze1(r: f64, mode: usize) -> GateSpec {
    GateSpec { kind: GateKind::Squeeze1, targets: vec![mode], params: vec![r] }
}

/// Two-mode squeezer `exp(r (a1†a2† - a1a2))`.
pub fn squeeze2(r: f64, mode1: usize, mode2: usize) -> GateSpec {
    GateSpec { kind: GateKind::Squeeze2, targets: vec![mode1, mode2], params: vec![r] }
}

/// 50:50 beam splitter (convention in the module docs).
pub fn beamsplitter_5050(mode1: usize, mode2: usize) -> GateSpec {
    GateSpec { kind: GateKind::BeamSplitter5050, targets: vec![mode1, mode2], params: vec![] }
}

/// Entangling gate `exp(i Q1 Q2)`; symmetric under mode swap.
pub fn cz(mode1: usize, mode2: usize) -> GateSpec {
    GateSpec { kind: GateKind::Cz, targets: vec![mode1, mode2], params: vec![] }
}

/// Quartic phase gate `exp(i gamma Q⁴ / 6)`.
pub fn quartic_phase(gamma: f64, mode: usize) -> GateSpec {
    GateSpec { kind: GateKind::QuarticPhase, targets: vec![mode], params: vec![gamma] }
}

/// Position translation `X(s) = exp(-i s P)`.
pub fn translate_q(s: f64, mode: usize) -> GateSpec {
    GateSpec { kind: GateKind::TranslateQ, targets: vec![mode], params: vec![s] }
}

/// Momentum translation `Z(t) = exp(i t Q)`.
pub fn translate_p(t: f64, mode: usize) -> GateSpec {
    GateSpec { kind: GateKind::TranslateP, targets: vec![mode], params: vec![t] }
}

/// Passive DFT over an ordered mode block; `sign = ±1` picks the kernel
/// `exp(sign·2πi k x / n)`.
pub fn dft(modes: Vec<usize>, sign: f64) -> GateSpec {
    GateSpec { kind: GateKind::Dft, targets: modes, params: vec![sign] }
}

/// `exp(i zeta J(site))` with `J` the lattice U(1) current; resolved
/// against the circuit's model context.
pub fn current_unitary(zeta: f64, site: usize) -> GateSpec {
    GateSpec {
        kind: GateKind::CurrentUnitary,
        targets: vec![],
        params: vec![zeta, site as f64],
    }
}

/// Photon-number-controlled evolution `exp(-i dt N_anc ⊗ H)`; `targets`
/// is `[ancilla, system...]` and `H` is resolved from the model context.
pub fn controlled_n(dt: f64, ancilla: usize, system: Vec<usize>) -> GateSpec {
    let mut targets = vec![ancilla];
    targets.extend(system);
    GateSpec { kind: GateKind::ControlledN, targets, params: vec![dt] }
}

/// Quadrature-controlled evolution `exp(-i tau Q_anc ⊗ H)`.
pub fn controlled_q(tau: f64, ancilla: usize, system: Vec<usize>) -> GateSpec {
    let mut targets = vec![ancilla];
    targets.extend(system);
    GateSpec { kind: GateKind::ControlledQ, targets, params: vec![tau] }
}

/// Ordered gate list over a fixed number of modes. `model` supplies the
/// lattice context for `current_unitary` / `controlled_*` gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub num_modes: usize,
    pub gates: Vec<GateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
}

impl Circuit {
    pub fn new(num_modes: usize) -> Self {
        Self { num_modes, gates: Vec::new(), model: None }
    }

    pub fn with_model(num_modes: usize, model: ModelParams) -> Self {
        Self { num_modes, gates: Vec::new(), model: Some(model) }
    }

    pub fn push(&mut self, gate: GateSpec) -> &mut Self {
        self.gates.push(gate);
        self
    }

    pub fn extend(&mut self, gates: impl IntoIterator<Item = GateSpec>) -> &mut Self {
        self.gates.extend(gates);
        self
    }

    /// Gates of the inverse circuit (reversed order, each gate inverted).
    pub fn inverted(&self) -> Result<Self> {
        let mut gates = Vec::with_capacity(self.gates.len());
        for g in self.gates.iter().rev() {
            gates.push(invert_gate(g)?);
        }
        Ok(Self { num_modes: self.num_modes, gates, model: self.model.clone() })
    }

    pub fn validate(&self) -> Result<()> {
        for (index, g) in self.gates.iter().enumerate() {
            validate_gate(g, self.num_modes).map_err(|e| Error::Gate {
                index,
                kind: g.kind.name().into(),
                source: Box::new(e),
            })?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("circuit serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Circuit = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Compile all gates to dense applications at the given cutoff.
    pub fn compile(&self, cutoff: usize) -> Result<CompiledCircuit> {
        self.validate()?;
        let mut ops = Vec::new();
        for (index, g) in self.gates.iter().enumerate() {
            compile_gate(g, cutoff, self.model.as_ref(), &mut ops).map_err(|e| Error::Gate {
                index,
                kind: g.kind.name().into(),
                source: Box::new(e),
            })?;
        }
        Ok(CompiledCircuit { num_modes: self.num_modes, cutoff, ops })
    }

    /// Apply the circuit to a state, reporting per-gate truncation leakage.
    pub fn apply(&self, state: &FockState) -> Result<(FockState, LeakageReport)> {
        self.compile(state.cutoff())?.apply(state)
    }
}

fn invert_gate(g: &GateSpec) -> Result<GateSpec> {
    let mut out = g.clone();
    match g.kind {
        GateKind::Rotate | GateKind::Shear | GateKind::Squeeze1 | GateKind::Squeeze2
        | GateKind::QuarticPhase | GateKind::TranslateQ | GateKind::TranslateP
        | GateKind::CurrentUnitary | GateKind::ControlledN | GateKind::ControlledQ => {
            out.params[0] = -out.params[0];
        }
        GateKind::Displace => {
            out.params[0] = -out.params[0];
            out.params[1] = -out.params[1];
        }
        GateKind::BeamSplitter5050 => {
            out.targets.swap(0, 1);
        }
        GateKind::Cz => {
            // no real-parameter inverse within the gate set; callers that
            // need CZ† compose it from shears and beamsplitters
            return Err(Error::GateParams {
                kind: "cz".into(),
                msg: "cz has no parameterized inverse; invert via shear decomposition".into(),
            });
        }
        GateKind::Dft => {
            out.params[0] = -out.params[0];
        }
    }
    Ok(out)
}

fn validate_gate(g: &GateSpec, num_modes: usize) -> Result<()> {
    finite(&g.params, g.kind)?;
    let expect_targets: Option<usize> = match g.kind {
        GateKind::Rotate | GateKind::Displace | GateKind::Shear | GateKind::Squeeze1
        | GateKind::QuarticPhase | GateKind::TranslateQ | GateKind::TranslateP => Some(1),
        GateKind::Squeeze2 | GateKind::BeamSplitter5050 | GateKind::Cz => Some(2),
        GateKind::CurrentUnitary | GateKind::ControlledN | GateKind::ControlledQ
        | GateKind::Dft => None,
    };
    if let Some(n) = expect_targets {
        if g.targets.len() != n {
            return Err(Error::ArityMismatch { arity: n, targets: g.targets.len() });
        }
    }
    let expect_params = match g.kind {
        GateKind::BeamSplitter5050 | GateKind::Cz => 0,
        GateKind::Displace | GateKind::CurrentUnitary => 2,
        _ => 1,
    };
    if g.params.len() != expect_params {
        return Err(Error::GateParams {
            kind: g.kind.name().into(),
            msg: format!("expected {expect_params} params, got {}", g.params.len()),
        });
    }
    for &t in &g.targets {
        if t >= num_modes {
            return Err(Error::ModeOutOfRange { index: t, num_modes });
        }
    }
    let mut seen = g.targets.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != g.targets.len() {
        return Err(Error::DuplicateTargets(g.targets.clone()));
    }
    if matches!(g.kind, GateKind::ControlledN | GateKind::ControlledQ) && g.targets.len() < 2 {
        return Err(Error::ArityMismatch { arity: 2, targets: g.targets.len() });
    }
    if g.kind == GateKind::Dft && g.targets.is_empty() {
        return Err(Error::GateParams { kind: "dft".into(), msg: "empty mode block".into() });
    }
    Ok(())
}

/// A compiled gate application.
pub(crate) enum CompiledOp {
    Diag { target: usize, diag: Vec<C64> },
    One { target: usize, mat: DMatrix<C64> },
    Two { t1: usize, t2: usize, mat: DMatrix<C64> },
    /// Controlled evolution, block-diagonal over an ancilla basis.
    Controlled {
        anc: usize,
        sys: Vec<usize>,
        /// change of basis on the ancilla (None = number basis)
        anc_basis: Option<DMatrix<C64>>,
        /// per-level evolution scale: block j applies exp(-i scale_j H)
        scales: Vec<f64>,
        h_vecs: DMatrix<C64>,
        h_vals: Vec<f64>,
    },
    /// Full-space dense unitary (used by `current_unitary`).
    Full { mat: DMatrix<C64> },
}

pub struct CompiledCircuit {
    pub num_modes: usize,
    pub cutoff: usize,
    pub(crate) ops: Vec<CompiledOp>,
}

/// Truncation leakage accounting: `leakage = ‖ψ‖²_before - ‖ψ‖²_after`
/// per gate, accumulated over the circuit.
#[derive(Debug, Clone, Default)]
pub struct LeakageReport {
    pub per_gate: Vec<f64>,
    pub total: f64,
}

impl CompiledCircuit {
    pub fn apply(&self, state: &FockState) -> Result<(FockState, LeakageReport)> {
        if state.num_modes() != self.num_modes {
            return Err(Error::ModeCountMismatch { expected: self.num_modes, got: state.num_modes() });
        }
        if state.cutoff() != self.cutoff {
            return Err(Error::CutoffMismatch { op: self.cutoff, state: state.cutoff() });
        }
        let mut s = state.clone();
        let mut report = LeakageReport::default();
        let mut before = s.norm_sqr();
        for op in &self.ops {
            apply_op(&mut s, op);
            let after = s.norm_sqr();
            report.per_gate.push(before - after);
            before = after;
        }
        report.total = state.norm_sqr() - before;
        Ok((s, report))
    }
}

fn apply_op(state: &mut FockState, op: &CompiledOp) {
    match op {
        CompiledOp::Diag { target, diag } => fock::apply_diag(state, *target, diag),
        CompiledOp::One { target, mat } => fock::apply_one(state, *target, mat),
        CompiledOp::Two { t1, t2, mat } => fock::apply_two(state, *t1, *t2, mat),
        CompiledOp::Controlled { anc, sys, anc_basis, scales, h_vecs, h_vals } => {
            if let Some(v) = anc_basis {
                fock::apply_one(state, *anc, &v.adjoint());
            }
            apply_controlled_blocks(state, *anc, sys, scales, h_vecs, h_vals);
            if let Some(v) = anc_basis {
                fock::apply_one(state, *anc, v);
            }
        }
        CompiledOp::Full { mat } => {
            let v = nalgebra::DVector::from_column_slice(state.amplitudes());
            let out = mat * v;
            state.amplitudes_mut().copy_from_slice(out.as_slice());
        }
    }
}

/// For each ancilla level `j`, apply `exp(-i scale_j H)` to the system
/// block of every slice with that ancilla occupation.
fn apply_controlled_blocks(
    state: &mut FockState,
    anc: usize,
    sys: &[usize],
    scales: &[f64],
    h_vecs: &DMatrix<C64>,
    h_vals: &[f64],
) {
    let d = state.dim();
    let nm = state.num_modes();
    let bdim = d.pow(sys.len() as u32);
    let strides: Vec<usize> = sys.iter().map(|&m| d.pow((nm - 1 - m) as u32)).collect();
    let anc_stride = d.pow((nm - 1 - anc) as u32);

    // enumerate base indices with sys and anc digits zero
    let mut bases = Vec::new();
    let mut occ = vec![0usize; nm];
    loop {
        let mut idx = 0usize;
        for (m, &o) in occ.iter().enumerate() {
            let digit = if sys.contains(&m) || m == anc { 0 } else { o };
            idx = idx * d + digit;
        }
        bases.push(idx);
        let mut carry = true;
        for m in (0..nm).rev() {
            if sys.contains(&m) || m == anc {
                continue;
            }
            if carry {
                occ[m] += 1;
                if occ[m] == d {
                    occ[m] = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }

    // offsets of the system block relative to a base
    let mut offsets = vec![0usize; bdim];
    for (b, off) in offsets.iter_mut().enumerate() {
        let mut rem = b;
        let mut o = 0usize;
        for s in strides.iter().rev() {
            o += (rem % d) * s;
            rem /= d;
        }
        *off = o;
    }

    let mut gathered = vec![C64::new(0.0, 0.0); bdim];
    let mut rotated = vec![C64::new(0.0, 0.0); bdim];
    for (j, &scale) in scales.iter().enumerate() {
        let phases: Vec<C64> = h_vals.iter().map(|&e| C64::new(0.0, -scale * e).exp()).collect();
        for &base in &bases {
            let slice_base = base + j * anc_stride;
            for (g, off) in gathered.iter_mut().zip(&offsets) {
                *g = state.amplitudes()[slice_base + off];
            }
            // U = W diag(e^{-i s E}) W† applied to the gathered block
            for r in 0..bdim {
                let mut z = C64::new(0.0, 0.0);
                for c in 0..bdim {
                    z += h_vecs[(c, r)].conj() * gathered[c];
                }
                rotated[r] = z * phases[r];
            }
            for (r, off) in offsets.iter().enumerate() {
                let mut z = C64::new(0.0, 0.0);
                for (c, rot) in rotated.iter().enumerate() {
                    z += h_vecs[(r, c)] * rot;
                }
                state.amplitudes_mut()[slice_base + off] = z;
            }
        }
    }
}

fn compile_gate(
    g: &GateSpec,
    cutoff: usize,
    model: Option<&ModelParams>,
    ops: &mut Vec<CompiledOp>,
) -> Result<()> {
    let d = cutoff + 1;
    match g.kind {
        GateKind::Rotate => {
            let theta = g.params[0];
            let diag = (0..d).map(|n| C64::new(0.0, theta * n as f64).exp()).collect();
            ops.push(CompiledOp::Diag { target: g.targets[0], diag });
        }
        GateKind::Displace => {
            let xi = C64::new(g.params[0], g.params[1]);
            let a = fock::ladder_lower(cutoff);
            let at = fock::ladder_raise(cutoff);
            // xi a† - xi* a = i H with H Hermitian
            let h = (at.matrix() * xi - a.matrix() * xi.conj()) * C64::new(0.0, -1.0);
            ops.push(CompiledOp::One {
                target: g.targets[0],
                mat: linalg::expm_hermitian(&h, C64::new(0.0, 1.0)),
            });
        }
        GateKind::Shear => {
            let kappa = g.params[0];
            let (q, _) = fock::quadratures(cutoff);
            let q2 = q.matrix() * q.matrix();
            ops.push(CompiledOp::One {
                target: g.targets[0],
                mat: linalg::expm_hermitian(&q2, C64::new(0.0, kappa)),
            });
        }
        GateKind::Squeeze1 => {
            let r = g.params[0];
            let a = fock::ladder_lower(cutoff);
            let at = fock::ladder_raise(cutoff);
            let h = (at.matrix() * at.matrix() - a.matrix() * a.matrix()) * C64::new(0.0, -0.5);
            ops.push(CompiledOp::One {
                target: g.targets[0],
                mat: linalg::expm_hermitian(&h, C64::new(0.0, r)),
            });
        }
        GateKind::Squeeze2 => {
            let r = g.params[0];
            let a = fock::ladder_lower(cutoff);
            let at = fock::ladder_raise(cutoff);
            let gen = at.kron(&at)?.into_matrix() - a.kron(&a)?.into_matrix();
            let h = gen * C64::new(0.0, -1.0);
            ops.push(CompiledOp::Two {
                t1: g.targets[0],
                t2: g.targets[1],
                mat: linalg::expm_hermitian(&h, C64::new(0.0, r)),
            });
        }
        GateKind::BeamSplitter5050 => {
            ops.push(CompiledOp::Two {
                t1: g.targets[0],
                t2: g.targets[1],
                mat: beamsplitter_matrix(cutoff),
            });
        }
        GateKind::Cz => {
            let (q, _) = fock::quadratures(cutoff);
            let qq = q.kron(&q)?.into_matrix();
            ops.push(CompiledOp::Two {
                t1: g.targets[0],
                t2: g.targets[1],
                mat: linalg::expm_hermitian(&qq, C64::new(0.0, 1.0)),
            });
        }
        GateKind::QuarticPhase => {
            let gamma = g.params[0];
            let (q, _) = fock::quadratures(cutoff);
            let q2 = q.matrix() * q.matrix();
            let q4 = &q2 * &q2;
            ops.push(CompiledOp::One {
                target: g.targets[0],
                mat: linalg::expm_hermitian(&q4, C64::new(0.0, gamma / 6.0)),
            });
        }
        GateKind::TranslateQ => {
            let s = g.params[0];
            let (_, p) = fock::quadratures(cutoff);
            ops.push(CompiledOp::One {
                target: g.targets[0],
                mat: linalg::expm_hermitian(p.matrix(), C64::new(0.0, -s)),
            });
        }
        GateKind::TranslateP => {
            let t = g.params[0];
            let (q, _) = fock::quadratures(cutoff);
            ops.push(CompiledOp::One {
                target: g.targets[0],
                mat: linalg::expm_hermitian(q.matrix(), C64::new(0.0, t)),
            });
        }
        GateKind::Dft => {
            compile_dft(&g.targets, g.params[0], cutoff, ops);
        }
        GateKind::CurrentUnitary => {
            let model = model.ok_or(Error::MissingModel)?;
            let zeta = g.params[0];
            let site = g.params[1] as usize;
            let j = crate::lattice::current_matrix(model, site, cutoff)?;
            ops.push(CompiledOp::Full {
                mat: linalg::expm_hermitian(&j, C64::new(0.0, zeta)),
            });
        }
        GateKind::ControlledN | GateKind::ControlledQ => {
            let model = model.ok_or(Error::MissingModel)?;
            let anc = g.targets[0];
            let sys: Vec<usize> = g.targets[1..].to_vec();
            let h = crate::lattice::exact_hamiltonian(model, cutoff)?;
            if h.nrows() != d.pow(sys.len() as u32) {
                return Err(Error::GateParams {
                    kind: g.kind.name().into(),
                    msg: "system block does not match model mode count".into(),
                });
            }
            push_controlled(g.kind, g.params[0], anc, sys, &h, cutoff, ops);
        }
    }
    Ok(())
}

/// Apply a controlled evolution (`exp(-i s N_anc ⊗ H)` or
/// `exp(-i s Q_anc ⊗ H)`) with an explicit dense Hermitian `H` over the
/// `sys` mode block. Used by the interference gadgets, whose `H` is not
/// always a lattice model.
pub fn controlled_evolution_apply(
    state: &FockState,
    kind: GateKind,
    strength: f64,
    anc: usize,
    sys: &[usize],
    h: &DMatrix<C64>,
) -> crate::error::Result<FockState> {
    assert!(matches!(kind, GateKind::ControlledN | GateKind::ControlledQ));
    let cutoff = state.cutoff();
    if h.nrows() != (cutoff + 1).pow(sys.len() as u32) {
        return Err(Error::GateParams {
            kind: kind.name().into(),
            msg: "system block does not match H dimension".into(),
        });
    }
    let mut ops = Vec::new();
    push_controlled(kind, strength, anc, sys.to_vec(), h, cutoff, &mut ops);
    let mut out = state.clone();
    for op in &ops {
        apply_op(&mut out, op);
    }
    Ok(out)
}

/// Build the controlled-evolution op from a dense Hermitian `H` on the
/// system block. Exposed for gadgets whose `H` is not a lattice model.
pub(crate) fn push_controlled(
    kind: GateKind,
    strength: f64,
    anc: usize,
    sys: Vec<usize>,
    h: &DMatrix<C64>,
    cutoff: usize,
    ops: &mut Vec<CompiledOp>,
) {
    let d = cutoff + 1;
    let (h_vals, h_vecs) = linalg::eigh(h);
    let (anc_basis, scales) = match kind {
        GateKind::ControlledN => {
            // block n applies exp(-i n dt H)
            (None, (0..d).map(|n| strength * n as f64).collect::<Vec<_>>())
        }
        GateKind::ControlledQ => {
            let (q, _) = fock::quadratures(cutoff);
            let (qv, qw) = linalg::eigh(q.matrix());
            (Some(qw), qv.iter().map(|&s| strength * s).collect())
        }
        _ => unreachable!(),
    };
    ops.push(CompiledOp::Controlled {
        anc,
        sys,
        anc_basis,
        scales,
        h_vecs,
        h_vals: h_vals.as_slice().to_vec(),
    });
}

/// Dense 50:50 beam splitter matrix at the given cutoff.
pub fn beamsplitter_matrix(cutoff: usize) -> DMatrix<C64> {
    let a = fock::ladder_lower(cutoff);
    let at = fock::ladder_raise(cutoff);
    let id = fock::identity_op(1, cutoff);
    let gen = at.kron(&a).unwrap().into_matrix() - a.kron(&at).unwrap().into_matrix();
    let _ = id;
    let h = gen * C64::new(0.0, -1.0);
    linalg::expm_hermitian(&h, C64::new(0.0, std::f64::consts::FRAC_PI_4))
}

/// Compile the passive DFT into Givens two-mode mixers plus phase
/// rotations, via QR of the mode-mixing matrix.
fn compile_dft(modes: &[usize], sign: f64, cutoff: usize, ops: &mut Vec<CompiledOp>) {
    let n = modes.len();
    if n == 1 {
        return; // 1-mode DFT is the identity
    }
    let v = linalg::dft_matrix(n, sign);
    let (factors, phases) = linalg::decompose_unitary(&v);
    // V = G_1 ... G_m D. The Fock representation is a homomorphism, so the
    // operator product U(G_1)...U(G_m) U(D) is realized by applying U(D)
    // first, then U(G_m) ... U(G_1).
    let d = cutoff + 1;
    for (k, &phi) in phases.iter().enumerate() {
        if phi.abs() > 1e-15 {
            let diag = (0..d).map(|nn| C64::new(0.0, phi * nn as f64).exp()).collect();
            ops.push(CompiledOp::Diag { target: modes[k], diag });
        }
    }
    for f in factors.iter().rev() {
        let m2 = linalg::unitary_log(&f.block);
        let mat = passive_two_mode(&m2, cutoff);
        ops.push(CompiledOp::Two {
            t1: modes[f.rows.0],
            t2: modes[f.rows.1],
            mat,
        });
    }
}

/// Fock-space unitary realizing the 2x2 passive mixing `exp(i M)`:
/// `U† a_i U = Σ_j exp(i M)_{ij} a_j`.
fn passive_two_mode(m2: &DMatrix<C64>, cutoff: usize) -> DMatrix<C64> {
    let a = fock::ladder_lower(cutoff);
    let at = fock::ladder_raise(cutoff);
    let id = fock::identity_op(1, cutoff);
    let n1 = at.kron(&id).unwrap().into_matrix() * a.kron(&id).unwrap().into_matrix();
    let n2 = id.kron(&at).unwrap().into_matrix() * id.kron(&a).unwrap().into_matrix();
    let cross12 = at.kron(&a).unwrap().into_matrix();
    let cross21 = a.kron(&at).unwrap().into_matrix();
    let gen = n1 * m2[(0, 0)] + cross12 * m2[(0, 1)] + cross21 * m2[(1, 0)] + n2 * m2[(1, 1)];
    linalg::expm_hermitian(&gen, C64::new(0.0, 1.0))
}
