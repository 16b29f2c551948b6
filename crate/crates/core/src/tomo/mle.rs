//! Maximum-likelihood reconstruction from binned two-mode homodyne data.
//!
//! Each sample is assigned to the POVM element `|v⟩⟨v|` with
//! `v[n1, n2] = e^{i(n1θ1 + n2θ2)} ψ_{n1}(c1) ψ_{n2}(c2)`, where `c1, c2` are
//! the centers of the quadrature bins holding `x1, x2`. The iteration is the
//! `RρR` fixed point, falling back to the diluted map `(I + εR)ρ(I + εR)`
//! whenever a full step would lower the likelihood.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::homodyne::QuadratureSample;
use super::{qutrit_diagnostics, QutritReport};
use crate::error::{Error, Result};
use crate::fock::{full_basis, DensityMatrix, Occupation};
use crate::math::hermite_functions;

const SUM_CHUNK: usize = 2048;
const MIN_DILUTION: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    /// Largest total photon number in the reconstruction basis.
    pub cutoff: usize,
    pub max_iter: usize,
    /// Stop once the relative log-likelihood gain of an iteration drops below this.
    pub tol: f64,
    /// Quadrature bin width.
    pub bin_width: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig { cutoff: 2, max_iter: 2000, tol: 1e-10, bin_width: 0.05 }
    }
}

impl MleConfig {
    fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::InvalidParameter(format!("bin width {} must be positive", self.bin_width)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance {} must be non-negative", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TomoResult {
    pub rho: DensityMatrix,
    pub photon_number_dist: Vec<f64>,
    pub iterations: usize,
    /// Mean log-likelihood per sample after each accepted step (entry 0 is the start).
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    /// Set by [`TomoResult::compare_qutrit`].
    pub subspace_fidelity: Option<f64>,
}

impl TomoResult {
    /// Compares the two-photon block with `target` and records the subspace fidelity.
    pub fn compare_qutrit(&mut self, target: &DensityMatrix) -> Result<QutritReport> {
        let report = qutrit_diagnostics(&self.rho, target)?;
        self.subspace_fidelity = Some(report.subspace_fidelity);
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tomography result serialization cannot fail")
    }
}

/// Distinct POVM vectors with their sample frequencies.
struct Povms {
    dim: usize,
    vectors: Vec<Complex64>,
    freqs: Vec<f64>,
}

impl Povms {
    fn build(samples: &[QuadratureSample], basis: &[Occupation], cutoff: usize, width: f64) -> Self {
        let bin = |x: f64| (x / width).floor() as i64;
        let mut counts: HashMap<(u64, u64, i64, i64), usize> = HashMap::new();
        let mut order = Vec::new();
        for s in samples {
            let key = (s.theta1.to_bits(), s.theta2.to_bits(), bin(s.x1), bin(s.x2));
            let c = counts.entry(key).or_insert_with(|| {
                order.push(key);
                0
            });
            *c += 1;
        }
        let dim = basis.len();
        let total = samples.len() as f64;
        let mut vectors = Vec::with_capacity(order.len() * dim);
        let mut freqs = Vec::with_capacity(order.len());
        let mut psi1 = vec![0.0; cutoff + 1];
        let mut psi2 = vec![0.0; cutoff + 1];
        for key in order {
            let (t1, t2) = (f64::from_bits(key.0), f64::from_bits(key.1));
            hermite_functions(cutoff, (key.2 as f64 + 0.5) * width, &mut psi1);
            hermite_functions(cutoff, (key.3 as f64 + 0.5) * width, &mut psi2);
            for o in basis {
                let (n1, n2) = (o.get(0), o.get(1));
                let phase = Complex64::from_polar(1.0, n1 as f64 * t1 + n2 as f64 * t2);
                vectors.push(phase * psi1[n1] * psi2[n2]);
            }
            freqs.push(counts[&key] as f64 / total);
        }
        Povms { dim, vectors, freqs }
    }

    /// Mean log-likelihood of `rho` and the operator `R = Σ f_i |v_i⟩⟨v_i| / p_i`.
    fn evaluate(&self, rho: &DMatrix<Complex64>) -> (f64, DMatrix<Complex64>) {
        let d = self.dim;
        let n = self.freqs.len();
        let partials: Vec<(f64, DMatrix<Complex64>)> = (0..n.div_ceil(SUM_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut ll = 0.0;
                let mut r = DMatrix::<Complex64>::zeros(d, d);
                let mut w = vec![Complex64::new(0.0, 0.0); d];
                for i in c * SUM_CHUNK..((c + 1) * SUM_CHUNK).min(n) {
                    let v = &self.vectors[i * d..(i + 1) * d];
                    for (a, wa) in w.iter_mut().enumerate() {
                        *wa = (0..d).map(|b| rho[(a, b)] * v[b]).sum();
                    }
                    let p = v.iter().zip(&w).map(|(x, y)| x.conj() * y).sum::<Complex64>().re.max(f64::MIN_POSITIVE);
                    let f = self.freqs[i];
                    ll += f * p.ln();
                    let k = f / p;
                    for b in 0..d {
                        let vb = v[b].conj() * k;
                        for a in 0..d {
                            r[(a, b)] += v[a] * vb;
                        }
                    }
                }
                (ll, r)
            })
            .collect();
        let mut ll = 0.0;
        let mut r = DMatrix::<Complex64>::zeros(d, d);
        for (l, m) in partials {
            ll += l;
            r += m;
        }
        (ll, r)
    }
}

fn sandwich(a: &DMatrix<Complex64>, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let m = a * rho * a;
    let h = (&m + m.adjoint()).scale(0.5);
    let t: f64 = h.diagonal().iter().map(|z| z.re).sum();
    h.unscale(t)
}

/// Reconstructs a two-mode density matrix over all states with at most
/// `config.cutoff` photons in total.
///
/// The mean log-likelihood never decreases between accepted steps. The run
/// stops when the relative gain of a step falls below `config.tol`, when no
/// diluted step improves the likelihood, or after `config.max_iter` steps.
pub fn mle_reconstruct(samples: &[QuadratureSample], config: &MleConfig) -> Result<TomoResult> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    config.validate()?;
    let mut basis = full_basis(2, config.cutoff);
    basis.sort();
    let d = basis.len();
    let povms = Povms::build(samples, &basis, config.cutoff, config.bin_width);

    let mut rho = DMatrix::<Complex64>::identity(d, d).unscale(d as f64);
    let (mut ll, mut r) = povms.evaluate(&rho);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let eye = DMatrix::<Complex64>::identity(d, d);
    while iterations < config.max_iter {
        let mut eps = f64::INFINITY;
        let step = loop {
            let cand = if eps.is_infinite() { sandwich(&r, &rho) } else { sandwich(&(&eye + r.scale(eps)), &rho) };
            let (cand_ll, cand_r) = povms.evaluate(&cand);
            if cand_ll >= ll {
                break Some((cand, cand_ll, cand_r));
            }
            eps = if eps.is_infinite() { 1.0 } else { eps * 0.5 };
            if eps < MIN_DILUTION {
                break None;
            }
        };
        let Some((cand, cand_ll, cand_r)) = step else {
            converged = true;
            break;
        };
        iterations += 1;
        let gain = (cand_ll - ll) / ll.abs().max(f64::MIN_POSITIVE);
        rho = cand;
        ll = cand_ll;
        r = cand_r;
        trace.push(ll);
        if gain < config.tol {
            converged = true;
            break;
        }
    }

    let rho = DensityMatrix::from_parts(2, config.cutoff, basis, rho)?;
    Ok(TomoResult {
        photon_number_dist: rho.photon_number_distribution(),
        rho,
        iterations,
        log_likelihood: trace,
        converged,
        subspace_fidelity: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::StateVector;
    use crate::tomo::{apply_loss, sample_homodyne, PhaseStrategy};

    fn balanced() -> DensityMatrix {
        let k = Complex64::new(1.0 / 3f64.sqrt(), 0.0);
        DensityMatrix::from_pure(
            &StateVector::from_terms(2, 2, [(vec![2, 0], k), (vec![1, 1], k), (vec![0, 2], k)]).unwrap(),
        )
    }

    #[test]
    fn rejects_empty_input() {
        assert!(matches!(mle_reconstruct(&[], &MleConfig::default()), Err(Error::EmptySamples)));
        let s = [QuadratureSample { theta1: 0.0, theta2: 0.0, x1: 0.0, x2: 0.0 }];
        let bad = MleConfig { bin_width: 0.0, ..MleConfig::default() };
        assert!(mle_reconstruct(&s, &bad).is_err());
    }

    #[test]
    fn vacuum_reconstruction() {
        let vac = DensityMatrix::from_pure(&StateVector::vacuum(2, 0).unwrap());
        let samples = sample_homodyne(&vac, 20_000, PhaseStrategy::Uniform, 21).unwrap();
        let res = mle_reconstruct(&samples, &MleConfig::default()).unwrap();
        res.rho.validate().unwrap();
        assert!(res.rho.fidelity(&vac).unwrap() >= 0.99);
        for w in res.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn lossy_qutrit_reconstruction() {
        let truth = apply_loss(&balanced(), 0.7).unwrap();
        let samples = sample_homodyne(&truth, 100_000, PhaseStrategy::Uniform, 5).unwrap();
        let mut res = mle_reconstruct(&samples, &MleConfig::default()).unwrap();
        res.rho.validate().unwrap();
        assert!((res.photon_number_dist[2] - 0.49).abs() < 0.03, "{:?}", res.photon_number_dist);
        let report = res.compare_qutrit(&truth).unwrap();
        assert!(report.subspace_fidelity >= 0.97, "{}", report.subspace_fidelity);
        assert_eq!(res.subspace_fidelity, Some(report.subspace_fidelity));
        for w in res.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn grid_phases_are_merged_and_reproducible() {
        let truth = balanced();
        let samples = sample_homodyne(&truth, 4000, PhaseStrategy::Grid { steps: 6 }, 2).unwrap();
        let a = mle_reconstruct(&samples, &MleConfig { max_iter: 50, ..MleConfig::default() }).unwrap();
        let b = mle_reconstruct(&samples, &MleConfig { max_iter: 50, ..MleConfig::default() }).unwrap();
        assert_eq!(a.rho, b.rho);
        assert!(a.iterations <= 50);
        assert_eq!(a.log_likelihood.len(), a.iterations + 1);
    }
}
