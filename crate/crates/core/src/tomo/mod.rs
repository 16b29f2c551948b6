//! Loss, two-mode homodyne sampling and maximum-likelihood reconstruction.
//!
//! Quadrature convention: `x_θ = (a e^{-iθ} + a† e^{iθ})/sqrt2`, so the
//! vacuum has variance 1/2 and `⟨x, θ|n⟩ = e^{-inθ} ψ_n(x)` with `ψ_n` the
//! oscillator eigenfunctions.

mod homodyne;
mod mle;

pub use homodyne::{read_samples_csv, sample_homodyne, write_samples_csv, PhaseStrategy, QuadratureSample};
pub use mle::{mle_reconstruct, MleConfig, TomoResult};

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, Occupation};
use crate::math::binomial;

/// Pure loss with transmissivity `eta` on every mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossChannel {
    pub eta: f64,
}

impl LossChannel {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidParameter(format!("transmissivity {eta} must lie in (0, 1]")));
        }
        Ok(LossChannel { eta })
    }

    /// Kraus amplitude `⟨n-k|E_k|n⟩ = sqrt(C(n,k) η^{n-k} (1-η)^k)`.
    fn kraus(&self, n: usize, k: usize) -> f64 {
        (binomial(n, k) * self.eta.powi((n - k) as i32) * (1.0 - self.eta).powi(k as i32)).sqrt()
    }

    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let mut out = rho.clone();
        if self.eta == 1.0 {
            return Ok(out);
        }
        for mode in 0..rho.modes() {
            out = self.apply_mode(&out, mode)?;
        }
        Ok(out)
    }

    fn apply_mode(&self, rho: &DensityMatrix, mode: usize) -> Result<DensityMatrix> {
        let mut support: BTreeSet<Occupation> = BTreeSet::new();
        for o in rho.basis() {
            for k in 0..=o.get(mode) {
                support.insert(o.with(mode, o.get(mode) - k));
            }
        }
        let basis: Vec<Occupation> = support.into_iter().collect();
        let pos = |o: &Occupation| basis.binary_search(o).expect("in support");
        let mut mat = DMatrix::<Complex64>::zeros(basis.len(), basis.len());
        let m = rho.matrix();
        for (i, oi) in rho.basis().iter().enumerate() {
            for (j, oj) in rho.basis().iter().enumerate() {
                let v = m[(i, j)];
                if v.norm_sqr() == 0.0 {
                    continue;
                }
                let (ni, nj) = (oi.get(mode), oj.get(mode));
                for k in 0..=ni.min(nj) {
                    let w = self.kraus(ni, k) * self.kraus(nj, k);
                    let a = pos(&oi.with(mode, ni - k));
                    let b = pos(&oj.with(mode, nj - k));
                    mat[(a, b)] += v * w;
                }
            }
        }
        DensityMatrix::from_parts(rho.modes(), rho.cutoff(), basis, mat)
    }
}

/// Sends every mode of `rho` through a loss channel of transmissivity `eta`.
pub fn apply_loss(rho: &DensityMatrix, eta: f64) -> Result<DensityMatrix> {
    LossChannel::new(eta)?.apply(rho)
}

/// Two-photon basis in report order.
pub const QUTRIT_BASIS: [[usize; 2]; 3] = [[2, 0], [1, 1], [0, 2]];

/// Qutrit-subspace summary of a two-mode state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QutritReport {
    /// Population of the two-photon subspace before renormalization.
    pub subspace_weight: f64,
    /// Renormalized block on `|20⟩, |11⟩, |02⟩`.
    pub block_real: [[f64; 3]; 3],
    pub block_imag: [[f64; 3]; 3],
    /// Uhlmann fidelity of the renormalized block with the target's block.
    pub subspace_fidelity: f64,
    /// Distribution of the total photon number.
    pub photon_number_distribution: Vec<f64>,
}

fn qutrit_block(rho: &DensityMatrix) -> Result<(f64, DensityMatrix)> {
    if rho.modes() != 2 {
        return Err(Error::ModeMismatch { left: rho.modes(), right: 2 });
    }
    let states: Vec<Vec<usize>> = QUTRIT_BASIS.iter().map(|s| s.to_vec()).collect();
    let block = rho.block(&states) / Complex64::new(rho.trace(), 0.0);
    let weight: f64 = block.diagonal().iter().map(|z| z.re).sum();
    if weight <= 0.0 {
        return Err(Error::ZeroAmplitude("two-photon subspace"));
    }
    // Basis order of DensityMatrix is lexicographic: |02⟩, |11⟩, |20⟩.
    let basis: Vec<Occupation> = states.iter().rev().map(|s| Occupation::new(s).expect("fits")).collect();
    let reversed = DMatrix::from_fn(3, 3, |i, j| block[(2 - i, 2 - j)] / weight);
    Ok((weight, DensityMatrix::from_parts(2, 2, basis, reversed)?))
}

/// Extracts and compares the two-photon blocks of `rho` and `target`.
pub fn qutrit_diagnostics(rho: &DensityMatrix, target: &DensityMatrix) -> Result<QutritReport> {
    let (weight, block) = qutrit_block(rho)?;
    let (_, target_block) = qutrit_block(target)?;
    let mut re = [[0.0; 3]; 3];
    let mut im = [[0.0; 3]; 3];
    for (i, a) in QUTRIT_BASIS.iter().enumerate() {
        for (j, b) in QUTRIT_BASIS.iter().enumerate() {
            let z = block.element(a, b);
            re[i][j] = z.re;
            im[i][j] = z.im;
        }
    }
    Ok(QutritReport {
        subspace_weight: weight,
        block_real: re,
        block_imag: im,
        subspace_fidelity: block.fidelity(&target_block)?,
        photon_number_distribution: rho.photon_number_distribution(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{full_basis, StateVector};
    use crate::optics::{apply_beamsplitter, BeamSplitter};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn balanced() -> StateVector {
        let k = c(1.0 / 3f64.sqrt(), 0.0);
        StateVector::from_terms(2, 2, [(vec![2, 0], k), (vec![1, 1], k), (vec![0, 2], k)]).unwrap()
    }

    /// Loss by splitting each mode with a vacuum ancilla and tracing it out.
    fn loss_by_dilation(psi: &StateVector, eta: f64) -> DensityMatrix {
        let m = psi.modes();
        let mut s = psi.tensor(&StateVector::vacuum(m, 0).unwrap()).unwrap();
        for mode in 0..m {
            let bs = BeamSplitter::real(eta.sqrt(), (1.0 - eta).sqrt(), mode, m + mode).unwrap();
            s = apply_beamsplitter(&s, &bs).unwrap();
        }
        DensityMatrix::from_pure(&s).partial_trace(&(0..m).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_at_unit_transmissivity() {
        let rho = DensityMatrix::from_pure(&balanced());
        assert_eq!(apply_loss(&rho, 1.0).unwrap(), rho);
        assert!(apply_loss(&rho, 0.0).is_err());
        assert!(apply_loss(&rho, 1.5).is_err());
    }

    #[test]
    fn single_photon_loss() {
        let rho = DensityMatrix::from_pure(&StateVector::basis(1, &[1]).unwrap());
        let out = apply_loss(&rho, 0.3).unwrap();
        assert!((out.element(&[1], &[1]).re - 0.3).abs() < 1e-15);
        assert!((out.element(&[0], &[0]).re - 0.7).abs() < 1e-15);
    }

    #[test]
    fn lossy_qutrit_populations() {
        let rho = apply_loss(&DensityMatrix::from_pure(&balanced()), 0.7).unwrap();
        let p = rho.photon_number_distribution();
        assert!((p[2] - 0.49).abs() < 1e-12);
        assert!((p[1] - 0.42).abs() < 1e-12);
        assert!((p[0] - 0.09).abs() < 1e-12);
        let oracle = loss_by_dilation(&balanced(), 0.7);
        assert!(rho.trace_distance(&oracle).unwrap() < 1e-12);
    }

    #[test]
    fn qutrit_report_for_pure_targets() {
        let rho = DensityMatrix::from_pure(&balanced());
        let r = qutrit_diagnostics(&rho, &rho).unwrap();
        assert!((r.subspace_fidelity - 1.0).abs() < 1e-10);
        assert!((r.subspace_weight - 1.0).abs() < 1e-14);
        assert!((r.block_real[0][1] - 1.0 / 3.0).abs() < 1e-14);

        let s2 = 2f64.sqrt();
        let second = StateVector::from_terms(
            2,
            2,
            [(vec![2, 0], c(s2 / 3.0, 0.0)), (vec![1, 1], c(1.0 / 3.0, s2 / 3.0)), (vec![0, 2], c(0.0, 2.0 / 3.0))],
        )
        .unwrap();
        assert!((second.norm_sqr() - 1.0).abs() < 1e-15);
        let rho2 = DensityMatrix::from_pure(&second);
        let r = qutrit_diagnostics(&rho2, &rho2).unwrap();
        assert!((r.subspace_fidelity - 1.0).abs() < 1e-10);
        assert!((r.block_imag[1][0] - (s2 / 3.0 * s2 / 3.0)).abs() < 1e-14);

        let lossy = apply_loss(&rho, 0.7).unwrap();
        let r = qutrit_diagnostics(&lossy, &rho).unwrap();
        assert!((r.subspace_fidelity - 1.0).abs() < 1e-10);
        assert!((r.subspace_weight - 0.49).abs() < 1e-12);
        for (got, want) in r.photon_number_distribution.iter().zip([0.09, 0.42, 0.49]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    fn arb_pure(modes: usize, cutoff: usize) -> impl Strategy<Value = StateVector> {
        let basis = full_basis(modes, cutoff);
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), basis.len()).prop_filter_map("nonzero", move |v| {
            let s = StateVector::from_terms(modes, cutoff, basis.iter().zip(v).map(|(o, (a, b))| (o.to_vec(), c(a, b))))
                .unwrap();
            (s.norm_sqr() > 1e-3).then(|| s.normalized())
        })
    }

    proptest! {
        #[test]
        fn kraus_matches_dilation(psi in arb_pure(2, 3), eta in 0.05f64..1.0) {
            let direct = apply_loss(&DensityMatrix::from_pure(&psi), eta).unwrap();
            let oracle = loss_by_dilation(&psi, eta);
            prop_assert!(direct.trace_distance(&oracle).unwrap() < 1e-10);
        }

        #[test]
        fn loss_is_trace_preserving_and_composes(psi in arb_pure(2, 3), e1 in 0.05f64..1.0, e2 in 0.05f64..1.0) {
            let rho = DensityMatrix::from_pure(&psi);
            let once = apply_loss(&apply_loss(&rho, e1).unwrap(), e2).unwrap();
            let direct = apply_loss(&rho, e1 * e2).unwrap();
            prop_assert!((once.trace() - rho.trace()).abs() < 1e-12);
            prop_assert!(once.trace_distance(&direct).unwrap() < 1e-10);
            once.validate().unwrap();
            let n_in = rho.mean_photon_number(0).unwrap();
            prop_assert!((direct.mean_photon_number(0).unwrap() - e1 * e2 * n_in).abs() < 1e-12);
        }
    }
}
