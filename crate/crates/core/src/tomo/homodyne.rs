//! Two-mode homodyne sampling and the samples CSV format.
//!
//! Quadrature convention: `x = (a + a†)/sqrt2` (vacuum variance 1/2) and
//! `⟨x, θ|n⟩ = e^{-inθ} ψ_n(x)`.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::math::hermite_functions;

const CHUNK: usize = 4096;
const GRID_STEP: f64 = 0.01;
const GRID_MARGIN: f64 = 5.0;
const CSV_HEADER: [&str; 4] = ["theta1", "theta2", "x1", "x2"];

/// One joint quadrature measurement on both modes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSample {
    pub theta1: f64,
    pub theta2: f64,
    pub x1: f64,
    pub x2: f64,
}

impl QuadratureSample {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("x1", self.x1), ("x2", self.x2)] {
            if !v.is_finite() {
                return Err(Error::Parse(format!("{name} is not finite")));
            }
        }
        for (name, v) in [("theta1", self.theta1), ("theta2", self.theta2)] {
            if !(0.0..TAU).contains(&v) {
                return Err(Error::Parse(format!("{name} = {v} outside [0, 2π)")));
            }
        }
        Ok(())
    }
}

/// How local-oscillator phases are chosen per shot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseStrategy {
    /// Independent uniform phases for each shot.
    #[default]
    Uniform,
    /// Shot `i` uses `θ1 = 2π (i mod steps)/steps`, `θ2 = 2π ((i / steps) mod steps)/steps`.
    Grid { steps: usize },
    /// The same pair of phases for every shot.
    Fixed { theta1: f64, theta2: f64 },
}

impl PhaseStrategy {
    fn validate(&self) -> Result<()> {
        match *self {
            PhaseStrategy::Uniform => Ok(()),
            PhaseStrategy::Grid { steps } if steps == 0 => {
                Err(Error::InvalidParameter("phase grid needs at least one step".into()))
            }
            PhaseStrategy::Grid { .. } => Ok(()),
            PhaseStrategy::Fixed { theta1, theta2 } => {
                if (0.0..TAU).contains(&theta1) && (0.0..TAU).contains(&theta2) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("fixed phases must lie in [0, 2π)".into()))
                }
            }
        }
    }

    fn phases(&self, shot: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match *self {
            PhaseStrategy::Uniform => (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)),
            PhaseStrategy::Grid { steps } => {
                let s = steps as f64;
                ((shot % steps) as f64 * TAU / s, ((shot / steps) % steps) as f64 * TAU / s)
            }
            PhaseStrategy::Fixed { theta1, theta2 } => (theta1, theta2),
        }
    }
}

/// Dense two-mode operator with per-mode dimension `d`, index `n1 * d + n2`.
struct DenseTwoMode {
    d: usize,
    rho: DMatrix<Complex64>,
}

impl DenseTwoMode {
    fn new(rho: &DensityMatrix) -> Result<Self> {
        if rho.modes() != 2 {
            return Err(Error::ModeMismatch { left: rho.modes(), right: 2 });
        }
        let d = rho.basis().iter().map(|o| o.get(0).max(o.get(1))).max().unwrap_or(0) + 1;
        let idx: Vec<usize> = rho.basis().iter().map(|o| o.get(0) * d + o.get(1)).collect();
        let t = rho.trace();
        let mut dense = DMatrix::<Complex64>::zeros(d * d, d * d);
        for (i, &a) in idx.iter().enumerate() {
            for (j, &b) in idx.iter().enumerate() {
                dense[(a, b)] = rho.matrix()[(i, j)] / t;
            }
        }
        Ok(DenseTwoMode { d, rho: dense })
    }

    /// Reduced operator on mode 1, with phase `θ1` folded in, as a real
    /// kernel `K` such that `p(x1) = ψ(x1)ᵀ K ψ(x1)`.
    fn marginal_kernel(&self, theta1: f64) -> DMatrix<f64> {
        let d = self.d;
        DMatrix::from_fn(d, d, |a, b| {
            let mut acc = Complex64::new(0.0, 0.0);
            for n2 in 0..d {
                acc += self.rho[(a * d + n2, b * d + n2)];
            }
            (acc * Complex64::from_polar(1.0, -((a as f64) - (b as f64)) * theta1)).re
        })
    }

    /// Kernel for `p(x2 | x1)` given the phase-weighted mode-1 amplitudes `u1[n] = e^{-inθ1} ψ_n(x1)`.
    fn conditional_kernel(&self, u1: &[Complex64], theta2: f64) -> DMatrix<f64> {
        let d = self.d;
        DMatrix::from_fn(d, d, |a, b| {
            let mut acc = Complex64::new(0.0, 0.0);
            for n1 in 0..d {
                for m1 in 0..d {
                    acc += u1[n1] * self.rho[(n1 * d + a, m1 * d + b)] * u1[m1].conj();
                }
            }
            (acc * Complex64::from_polar(1.0, -((a as f64) - (b as f64)) * theta2)).re
        })
    }
}

/// Quadrature grid with oscillator eigenfunctions tabulated at cell centers.
struct Grid {
    d: usize,
    start: f64,
    cells: usize,
    psi: Vec<f64>,
}

impl Grid {
    fn new(d: usize) -> Self {
        let half = (2.0 * (d - 1) as f64 + 1.0).sqrt() + GRID_MARGIN;
        let cells = (2.0 * half / GRID_STEP).ceil() as usize;
        let start = -half;
        let mut psi = vec![0.0; cells * d];
        for c in 0..cells {
            let x = start + (c as f64 + 0.5) * GRID_STEP;
            hermite_functions(d - 1, x, &mut psi[c * d..(c + 1) * d]);
        }
        Grid { d, start, cells, psi }
    }

    /// Draws from the density `ψᵀ K ψ` by cell-mass inverse CDF, uniform within the cell.
    fn draw(&self, kernel: &DMatrix<f64>, cdf: &mut Vec<f64>, rng: &mut ChaCha8Rng) -> f64 {
        let d = self.d;
        cdf.clear();
        let mut acc = 0.0;
        for c in 0..self.cells {
            let p = &self.psi[c * d..(c + 1) * d];
            let mut v = 0.0;
            for a in 0..d {
                let mut row = 0.0;
                for b in 0..d {
                    row += kernel[(a, b)] * p[b];
                }
                v += p[a] * row;
            }
            acc += v.max(0.0);
            cdf.push(acc);
        }
        let u = rng.random::<f64>() * acc;
        let cell = cdf.partition_point(|&c| c <= u).min(self.cells - 1);
        self.start + (cell as f64 + rng.random::<f64>()) * GRID_STEP
    }
}

/// Draws `shots` joint quadrature samples from the two-mode state `rho`.
///
/// The phases follow `strategy`; `x1` comes from its marginal and `x2` from
/// the conditional density given `x1`. The output depends only on the inputs
/// and `seed`.
pub fn sample_homodyne(
    rho: &DensityMatrix,
    shots: usize,
    strategy: PhaseStrategy,
    seed: u64,
) -> Result<Vec<QuadratureSample>> {
    strategy.validate()?;
    let dense = DenseTwoMode::new(rho)?;
    let grid = Grid::new(dense.d);
    let chunks = shots.div_ceil(CHUNK);
    let parts: Vec<Vec<QuadratureSample>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let first = chunk * CHUNK;
            let last = (first + CHUNK).min(shots);
            let mut cdf = Vec::with_capacity(grid.cells);
            let mut psi1 = vec![0.0; dense.d];
            (first..last)
                .map(|shot| {
                    let (theta1, theta2) = strategy.phases(shot, &mut rng);
                    let x1 = grid.draw(&dense.marginal_kernel(theta1), &mut cdf, &mut rng);
                    hermite_functions(dense.d - 1, x1, &mut psi1);
                    let u1: Vec<Complex64> = psi1
                        .iter()
                        .enumerate()
                        .map(|(n, &p)| Complex64::from_polar(p, -(n as f64) * theta1))
                        .collect();
                    let x2 = grid.draw(&dense.conditional_kernel(&u1, theta2), &mut cdf, &mut rng);
                    QuadratureSample { theta1, theta2, x1, x2 }
                })
                .collect()
        })
        .collect();
    Ok(parts.into_iter().flatten().collect())
}

/// Writes samples as CSV, preceded by `#`-prefixed comment lines.
pub fn write_samples_csv<W: Write>(mut w: W, samples: &[QuadratureSample], comments: &[String]) -> Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for s in samples {
        out.write_record([s.theta1, s.theta2, s.x1, s.x2].iter().map(|v| format!("{v:e}")))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads samples written by [`write_samples_csv`]; `#` lines are ignored.
pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<QuadratureSample>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse(format!("expected header {}, found {:?}", CSV_HEADER.join(","), header)));
    }
    let mut samples = Vec::new();
    for (line, record) in reader.deserialize::<QuadratureSample>().enumerate() {
        let s = record?;
        s.validate().map_err(|e| Error::Parse(format!("record {}: {e}", line + 1)))?;
        samples.push(s);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::StateVector;
    use crate::stats::ks_distance;

    fn pure(cutoff: usize, terms: &[(Vec<usize>, f64)]) -> DensityMatrix {
        let psi = StateVector::from_terms(2, cutoff, terms.iter().map(|(o, a)| (o.clone(), Complex64::new(*a, 0.0))))
            .unwrap()
            .normalized();
        DensityMatrix::from_pure(&psi)
    }

    fn variance(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn vacuum_variance_is_one_half() {
        let rho = pure(0, &[(vec![0, 0], 1.0)]);
        let s = sample_homodyne(&rho, 100_000, PhaseStrategy::Uniform, 7).unwrap();
        assert_eq!(s.len(), 100_000);
        let x1: Vec<f64> = s.iter().map(|s| s.x1).collect();
        let x2: Vec<f64> = s.iter().map(|s| s.x2).collect();
        assert!((variance(&x1) - 0.5).abs() < 0.01);
        assert!((variance(&x2) - 0.5).abs() < 0.01);
    }

    #[test]
    fn single_photon_has_node_at_origin() {
        let rho = pure(1, &[(vec![1, 0], 1.0)]);
        let s = sample_homodyne(&rho, 100_000, PhaseStrategy::Uniform, 3).unwrap();
        let width = 0.05;
        let mut hist = std::collections::BTreeMap::<i64, usize>::new();
        for x in s.iter().map(|s| s.x1) {
            *hist.entry((x / width + 0.5).floor() as i64).or_default() += 1;
        }
        let peak = *hist.values().max().unwrap() as f64;
        let at_zero = *hist.get(&0).unwrap_or(&0) as f64;
        assert!(at_zero < 0.01 * peak, "{at_zero} vs {peak}");
        // The ψ_1² density has variance 3/2.
        assert!((variance(&s.iter().map(|s| s.x1).collect::<Vec<_>>()) - 1.5).abs() < 0.03);
    }

    #[test]
    fn phase_invariant_state_gives_phase_independent_marginals() {
        let rho = pure(2, &[(vec![1, 1], 1.0)]);
        let slice = |theta: f64, seed: u64| -> Vec<f64> {
            sample_homodyne(&rho, 100_000, PhaseStrategy::Fixed { theta1: theta, theta2: 0.0 }, seed)
                .unwrap()
                .into_iter()
                .map(|s| s.x1)
                .collect()
        };
        assert!(ks_distance(&slice(0.0, 1), &slice(1.3, 2)) < 0.02);
    }

    #[test]
    fn coherent_superposition_depends_on_phase() {
        // (|0⟩ + |1⟩)/√2 on mode 1 has ⟨x_θ⟩ = cos θ / √2.
        let rho = pure(1, &[(vec![0, 0], 1.0), (vec![1, 0], 1.0)]);
        let mean = |theta: f64| {
            let s = sample_homodyne(&rho, 50_000, PhaseStrategy::Fixed { theta1: theta, theta2: 0.0 }, 5).unwrap();
            s.iter().map(|s| s.x1).sum::<f64>() / s.len() as f64
        };
        let expect = std::f64::consts::FRAC_1_SQRT_2;
        assert!((mean(0.0) - expect).abs() < 0.02);
        assert!((mean(std::f64::consts::PI) + expect).abs() < 0.02);
        assert!(mean(std::f64::consts::FRAC_PI_2).abs() < 0.02);
    }

    #[test]
    fn correlated_modes() {
        // (|01⟩ + |10⟩)/√2 at equal phases: ⟨x1 x2⟩ = 1/2.
        let rho = pure(1, &[(vec![0, 1], 1.0), (vec![1, 0], 1.0)]);
        let s = sample_homodyne(&rho, 100_000, PhaseStrategy::Fixed { theta1: 0.0, theta2: 0.0 }, 9).unwrap();
        let c = s.iter().map(|s| s.x1 * s.x2).sum::<f64>() / s.len() as f64;
        assert!((c - 0.5).abs() < 0.02, "{c}");
    }

    #[test]
    fn deterministic_per_seed_and_grid_phases() {
        let rho = pure(2, &[(vec![2, 0], 1.0), (vec![0, 2], 1.0)]);
        let a = sample_homodyne(&rho, 5000, PhaseStrategy::Uniform, 11).unwrap();
        let b = sample_homodyne(&rho, 5000, PhaseStrategy::Uniform, 11).unwrap();
        let c = sample_homodyne(&rho, 5000, PhaseStrategy::Uniform, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let g = sample_homodyne(&rho, 20, PhaseStrategy::Grid { steps: 4 }, 0).unwrap();
        assert_eq!(g[5].theta1, TAU / 4.0);
        assert_eq!(g[5].theta2, TAU / 4.0);
        assert!(g.iter().all(|s| s.validate().is_ok()));
        assert!(sample_homodyne(&rho, 1, PhaseStrategy::Grid { steps: 0 }, 0).is_err());
    }

    #[test]
    fn csv_roundtrip_and_rejections() {
        let rho = pure(1, &[(vec![0, 1], 1.0)]);
        let s = sample_homodyne(&rho, 50, PhaseStrategy::Uniform, 1).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &s, &["seed 1".to_string()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# seed 1\ntheta1,theta2,x1,x2\n"));
        assert_eq!(read_samples_csv(text.as_bytes()).unwrap(), s);

        assert!(read_samples_csv("a,b,c,d\n1,2,3,4\n".as_bytes()).is_err());
        assert!(read_samples_csv("theta1,theta2,x1,x2\n7,0,0,0\n".as_bytes()).is_err());
        assert!(read_samples_csv("theta1,theta2,x1,x2\n0,0,NaN,0\n".as_bytes()).is_err());
        assert!(read_samples_csv("theta1,theta2,x1,x2\n0,0,1\n".as_bytes()).is_err());
        assert!(read_samples_csv("theta1,theta2,x1,x2\n".as_bytes()).unwrap().is_empty());
    }
}
