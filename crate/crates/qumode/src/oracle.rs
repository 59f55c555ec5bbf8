//! Brute-force cross-check machinery: dense circuit unitaries, restricted
//! operator norms, Lanczos evolution, and spectral models from exact
//! diagonalization.
//!
//! Everything here is an independent route against the production code
//! paths; the `verify` experiments and the test suites compare the two.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::correlator::SpectralModel;
use crate::error::Result;
use crate::fock::FockState;
use crate::gates::Circuit;
use crate::linalg;

/// Basis state with a single unit amplitude at `index`.
pub fn basis_state(num_modes: usize, cutoff: usize, index: usize) -> FockState {
    let mut s = FockState::vacuum(num_modes, cutoff);
    s.amplitudes_mut().fill(C64::new(0.0, 0.0));
    s.amplitudes_mut()[index] = C64::new(1.0, 0.0);
    s
}

/// Dense unitary of a circuit, column by column.
pub fn dense_unitary(circuit: &Circuit, cutoff: usize) -> Result<DMatrix<C64>> {
    let dim = (cutoff + 1).pow(circuit.num_modes as u32);
    let compiled = circuit.compile(cutoff)?;
    let mut u = DMatrix::<C64>::zeros(dim, dim);
    for col in 0..dim {
        let (out, _) = compiled.apply(&basis_state(circuit.num_modes, cutoff, col))?;
        for row in 0..dim {
            u[(row, col)] = out.amplitudes()[row];
        }
    }
    Ok(u)
}

/// Flat indices of the block with total photon number at most `n_max`.
pub fn total_photon_block(num_modes: usize, cutoff: usize, n_max: usize) -> Vec<usize> {
    let d = cutoff + 1;
    let dim = d.pow(num_modes as u32);
    (0..dim)
        .filter(|&i| {
            let mut rem = i;
            let mut total = 0;
            for _ in 0..num_modes {
                total += rem % d;
                rem /= d;
            }
            total <= n_max
        })
        .collect()
}

/// Spectral norm of `A` restricted to columns in `block`:
/// `max_{ψ in span(block), ‖ψ‖=1} ‖A ψ‖`.
pub fn column_restricted_norm(a: &DMatrix<C64>, block: &[usize]) -> f64 {
    let mut sub = DMatrix::<C64>::zeros(a.nrows(), block.len());
    for (c, &j) in block.iter().enumerate() {
        sub.set_column(c, &a.column(j));
    }
    linalg::spectral_norm(&sub)
}

/// Spectral norm of `P A P` with `P` the projector onto `block`.
pub fn block_restricted_norm(a: &DMatrix<C64>, block: &[usize]) -> f64 {
    let mut sub = DMatrix::<C64>::zeros(block.len(), block.len());
    for (r, &i) in block.iter().enumerate() {
        for (c, &j) in block.iter().enumerate() {
            sub[(r, c)] = a[(i, j)];
        }
    }
    linalg::spectral_norm(&sub)
}

/// `exp(-i t H) ψ` by Lanczos, for dense Hermitian `H`.
pub fn evolve_dense(h: &DMatrix<C64>, psi: &[C64], t: f64) -> Result<Vec<C64>> {
    linalg::lanczos_expmv(
        |x| {
            let xv = DVector::from_column_slice(x);
            (h * xv).as_slice().to_vec()
        },
        psi,
        C64::new(0.0, -t),
        1e-12,
        400,
    )
}

/// Spectral model of `H` probed by `⟨out| e^{-itH} |in⟩`: energies from
/// exact diagonalization, overlaps against the probe states.
pub fn spectral_model_from_hamiltonian(
    h: &DMatrix<C64>,
    probe_in: &[C64],
    probe_out: &[C64],
) -> SpectralModel {
    let (w, v) = linalg::eigh(h);
    let n = w.len();
    let mut energies = Vec::with_capacity(n);
    let mut overlaps_in = Vec::with_capacity(n);
    let mut overlaps_out = Vec::with_capacity(n);
    for j in 0..n {
        let col = v.column(j);
        // ⟨n|ℓ_i⟩ and ⟨ℓ_f|n⟩
        let oin: C64 = col.iter().zip(probe_in).map(|(e, p)| e.conj() * p).sum();
        let oout: C64 = probe_out.iter().zip(col.iter()).map(|(p, e)| p.conj() * e).sum();
        energies.push(w[j]);
        overlaps_in.push(oin);
        overlaps_out.push(oout);
    }
    SpectralModel::new(energies, overlaps_in, overlaps_out)
}

/// `⟨out| e^{-i t H} |in⟩` by direct Lanczos evolution.
pub fn correlator_direct(h: &DMatrix<C64>, probe_in: &[C64], probe_out: &[C64], t: f64) -> Result<C64> {
    let evolved = evolve_dense(h, probe_in, t)?;
    Ok(probe_out
        .iter()
        .zip(&evolved)
        .map(|(o, e)| o.conj() * e)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{self, Circuit};

    #[test]
    fn dense_unitary_of_rotation_is_diagonal() {
        let mut c = Circuit::new(1);
        c.push(gates::rotation(0.5, 0));
        let u = dense_unitary(&c, 4).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!(u[(i, j)].norm() < 1e-15);
                } else {
                    assert!((u[(i, i)] - C64::new(0.0, 0.5 * i as f64).exp()).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn block_enumeration() {
        let block = total_photon_block(2, 3, 1);
        // states |00⟩, |01⟩, |10⟩
        assert_eq!(block, vec![0, 1, 4]);
    }

    #[test]
    fn evolve_dense_matches_eigen_route() {
        let k = 9;
        let (q, _) = crate::fock::quadratures(k);
        let q2 = q.matrix() * q.matrix();
        let h = &q2 + crate::fock::number(k).matrix() * C64::new(1.3, 0.0);
        let psi: Vec<C64> = (0..=k).map(|i| C64::new(0.3 * (i as f64).cos(), 0.1)).collect();
        let direct = evolve_dense(&h, &psi, 0.9).unwrap();
        let u = linalg::expm_hermitian(&h, C64::new(0.0, -0.9));
        let expect = u * DVector::from_column_slice(&psi);
        for i in 0..=k {
            assert!((direct[i] - expect[i]).norm() < 1e-10);
        }
    }
}
