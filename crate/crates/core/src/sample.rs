//! Monte Carlo heralding statistics.
//!
//! Heralding events are rare (success probability of order `q^{2n}`), so
//! shots are drawn from the source distribution conditioned on the photon
//! numbers that can satisfy the detector pattern at all: exactly `n` idler
//! photons for number-resolving detectors, at least one per clicking
//! detector for threshold detectors. The probability `W` of that sector is
//! known exactly; for each drawn source configuration the detector outcome
//! is sampled from the exact output distribution of the circuit. Rates and
//! confidence intervals are reported for the unconditioned experiment, i.e.
//! scaled by `W`.
//!
//! Shots are split into fixed-size chunks with their own ChaCha streams, so
//! results depend only on the seed, never on the number of worker threads.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorPlan;
use crate::fock::StateVector;
use crate::herald::{build_herald_circuit, heralded_state_analytic, simulate_herald, DetectorKind, HeraldCircuit};
use crate::stats::{wilson_interval, Z95};

/// Shots per RNG stream.
pub const CHUNK: u64 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub shots: u64,
    pub seed: u64,
    pub q: f64,
    pub detector: DetectorKind,
    /// Photon cutoff per source.
    pub cutoff: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCount {
    pub pattern: Vec<usize>,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub q: f64,
    pub seed: u64,
    pub detector: DetectorKind,
    pub shots: u64,
    pub success_count: u64,
    /// Probability of the sampled source sector.
    pub sector_weight: f64,
    pub empirical_rate: f64,
    /// 95% Wilson interval for the rate.
    pub wilson_interval: [f64; 2],
    pub analytic_rate: f64,
    /// Detector outcomes seen within the sector (threshold outcomes are
    /// reported as click patterns).
    pub outcomes: Vec<OutcomeCount>,
}

struct OutcomeTable {
    patterns: Vec<Vec<usize>>,
    accepted: Vec<bool>,
    index: Option<WeightedIndex<f64>>,
}

struct Sampler {
    spec: HeraldCircuit,
    pairs: Vec<(usize, usize)>,
    pair_index: WeightedIndex<f64>,
    weight: f64,
    tables: Vec<OnceLock<OutcomeTable>>,
}

impl Sampler {
    fn new(spec: HeraldCircuit) -> Result<Self> {
        let q2 = spec.q * spec.q;
        let c = spec.source_cutoff;
        let min = spec.detector.pattern.iter().filter(|&&p| p > 0).count();
        let needed: Box<dyn Fn(usize) -> bool> = match spec.detector.kind {
            DetectorKind::Pnr => {
                let total: usize = spec.detector.pattern.iter().sum();
                Box::new(move |t| t == total)
            }
            DetectorKind::Threshold => Box::new(move |t| t >= min),
        };
        let p = |m: usize| (1.0 - q2) * q2.powi(m as i32);
        let mut pairs = Vec::new();
        let mut weights = Vec::new();
        for m1 in 0..=c {
            for m2 in 0..=c {
                if needed(m1 + m2) {
                    pairs.push((m1, m2));
                    weights.push(p(m1) * p(m2));
                }
            }
        }
        let weight: f64 = weights.iter().sum();
        let pair_index = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidParameter(format!("no source configuration can herald: {e}")))?;
        let tables = (0..pairs.len()).map(|_| OnceLock::new()).collect();
        Ok(Sampler { spec, pairs, pair_index, weight, tables })
    }

    /// Exact detector-outcome distribution for `m1`, `m2` idler photons.
    fn table(&self, i: usize) -> &OutcomeTable {
        self.tables[i].get_or_init(|| {
            let (m1, m2) = self.pairs[i];
            let spec = &self.spec;
            let mut occ = vec![0; spec.modes];
            occ[2] = m1;
            occ[3] = m2;
            let input = StateVector::basis(m1 + m2, &occ).expect("fits its own cutoff");
            let out = spec.circuit.apply(&input).expect("circuit validated with the spec");
            let det = &spec.detector;
            let mut dist: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
            for (o, a) in out.iter() {
                let pattern: Vec<usize> = det
                    .modes
                    .iter()
                    .map(|&m| match det.kind {
                        DetectorKind::Pnr => o.get(m),
                        DetectorKind::Threshold => o.get(m).min(1),
                    })
                    .collect();
                *dist.entry(pattern).or_default() += a.norm_sqr();
            }
            let accepted = dist
                .keys()
                .map(|p| {
                    p.iter().zip(&det.pattern).all(|(&got, &want)| match det.kind {
                        DetectorKind::Pnr => got == want,
                        DetectorKind::Threshold => (got > 0) == (want > 0),
                    })
                })
                .collect();
            let index = WeightedIndex::new(dist.values().copied()).ok();
            OutcomeTable { patterns: dist.into_keys().collect(), accepted, index }
        })
    }

    fn run_chunk(&self, seed: u64, chunk: u64, shots: u64) -> (u64, BTreeMap<Vec<usize>, u64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk);
        let mut hits = 0;
        let mut seen: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
        for _ in 0..shots {
            let pair = self.pair_index.sample(&mut rng);
            let table = self.table(pair);
            let Some(index) = &table.index else { continue };
            let k = index.sample(&mut rng);
            if table.accepted[k] {
                hits += 1;
            }
            *seen.entry(table.patterns[k].clone()).or_default() += 1;
        }
        (hits, seen)
    }
}

fn analytic_rate(plan: &FactorPlan, spec: &HeraldCircuit) -> Result<f64> {
    match spec.detector.kind {
        DetectorKind::Pnr => Ok(heralded_state_analytic(plan, spec.q)?.success_probability),
        DetectorKind::Threshold => Ok(simulate_herald(spec)?.success_probability),
    }
}

/// Samples `config.shots` heralding attempts for `plan`.
pub fn sample_events(plan: &FactorPlan, config: &SampleConfig) -> Result<RateReport> {
    if config.shots == 0 {
        return Err(Error::InvalidParameter("shots must be at least 1".into()));
    }
    let spec = build_herald_circuit(plan, config.q, config.detector, config.cutoff)?;
    let analytic = analytic_rate(plan, &spec)?;
    let sampler = Sampler::new(spec)?;

    let chunks = config.shots.div_ceil(CHUNK);
    let results: Vec<(u64, BTreeMap<Vec<usize>, u64>)> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let n = CHUNK.min(config.shots - i * CHUNK);
            sampler.run_chunk(config.seed, i, n)
        })
        .collect();
    let mut hits = 0;
    let mut seen: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    for (h, s) in results {
        hits += h;
        for (k, v) in s {
            *seen.entry(k).or_default() += v;
        }
    }

    let w = sampler.weight;
    let (lo, hi) = wilson_interval(hits, config.shots, Z95);
    Ok(RateReport {
        q: config.q,
        seed: config.seed,
        detector: config.detector,
        shots: config.shots,
        success_count: hits,
        sector_weight: w,
        empirical_rate: w * hits as f64 / config.shots as f64,
        wilson_interval: [w * lo, w * hi],
        analytic_rate: analytic,
        outcomes: seen.into_iter().map(|(pattern, count)| OutcomeCount { pattern, count }).collect(),
    })
}

/// One [`sample_events`] run per grid point, all with the same seed.
pub fn sweep_q(plan: &FactorPlan, q_grid: &[f64], config: &SampleConfig) -> Result<Vec<RateReport>> {
    q_grid.iter().map(|&q| sample_events(plan, &SampleConfig { q, ..*config })).collect()
}

/// Writes `q,shots,successes,rate,ci_lo,ci_hi,analytic` rows.
pub fn write_sweep_csv<W: std::io::Write>(reports: &[RateReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q", "shots", "successes", "rate", "ci_lo", "ci_hi", "analytic"])?;
    for r in reports {
        w.write_record([
            r.q.to_string(),
            r.shots.to_string(),
            r.success_count.to_string(),
            r.empirical_rate.to_string(),
            r.wilson_interval[0].to_string(),
            r.wilson_interval[1].to_string(),
            r.analytic_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{design, noon_plan, Factor, TargetState};
    use num_complex::Complex64;

    fn cfg(shots: u64, seed: u64, q: f64) -> SampleConfig {
        SampleConfig { shots, seed, q, detector: DetectorKind::Pnr, cutoff: 5 }
    }

    #[test]
    fn single_shot() {
        let plan = noon_plan(2).unwrap();
        for seed in 0..20 {
            let r = sample_events(&plan, &cfg(1, seed, 0.1)).unwrap();
            assert!(r.success_count <= 1);
            assert!(r.wilson_interval[0] <= r.empirical_rate && r.empirical_rate <= r.wilson_interval[1]);
        }
        assert!(sample_events(&plan, &cfg(0, 0, 0.1)).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let plan = noon_plan(2).unwrap();
        let a = sample_events(&plan, &cfg(200_000, 7, 0.1)).unwrap();
        let b = sample_events(&plan, &cfg(200_000, 7, 0.1)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = sample_events(&plan, &cfg(200_000, 8, 0.1)).unwrap();
        assert_ne!(a.success_count, c.success_count);
    }

    #[test]
    fn independent_of_thread_count() {
        let plan = noon_plan(2).unwrap();
        let config = cfg(300_000, 3, 0.1);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| sample_events(&plan, &config)).unwrap();
        let b = three.install(|| sample_events(&plan, &config)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rate_matches_analytic() {
        let plan = noon_plan(2).unwrap();
        let r = sample_events(&plan, &cfg(400_000, 11, 0.1)).unwrap();
        assert!(r.wilson_interval[0] <= r.analytic_rate && r.analytic_rate <= r.wilson_interval[1], "{r:?}");
        // Every n=2 sector outcome has exactly two detected photons.
        assert!(r.outcomes.iter().all(|o| o.pattern.iter().sum::<usize>() == 2));
    }

    #[test]
    fn threshold_rate_matches_simulation() {
        let plan = design(&TargetState::normalized(vec![Complex64::new(1.0, 0.0); 3]).unwrap()).unwrap();
        let config = SampleConfig { shots: 200_000, seed: 5, q: 0.2, detector: DetectorKind::Threshold, cutoff: 5 };
        let r = sample_events(&plan, &config).unwrap();
        assert!(r.wilson_interval[0] <= r.analytic_rate && r.analytic_rate <= r.wilson_interval[1], "{r:?}");
        assert!(r.outcomes.iter().all(|o| o.pattern.iter().all(|&p| p <= 1)));
    }

    #[test]
    fn parallel_factors_herald_more_often() {
        let b = Factor::new(Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)).unwrap();
        let perp = Factor::new(-b.r.conj(), b.t.conj()).unwrap();
        let par = FactorPlan::new(Complex64::new(1.0, 0.0), vec![b, b]).unwrap();
        let orth = FactorPlan::new(Complex64::new(1.0, 0.0), vec![b, perp]).unwrap();
        let rp = sample_events(&par, &cfg(300_000, 1, 0.05)).unwrap();
        let ro = sample_events(&orth, &cfg(300_000, 2, 0.05)).unwrap();
        assert!((rp.analytic_rate / ro.analytic_rate - 2.0).abs() < 1e-12);
        let ratio = rp.empirical_rate / ro.empirical_rate;
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn sweep_of_one_point_equals_sample() {
        let plan = noon_plan(2).unwrap();
        let config = cfg(50_000, 9, 0.1);
        let sweep = sweep_q(&plan, &[0.1], &config).unwrap();
        assert_eq!(sweep, vec![sample_events(&plan, &config).unwrap()]);
        let mut buf = Vec::new();
        write_sweep_csv(&sweep, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("q,shots,successes,rate,ci_lo,ci_hi,analytic\n"));
        assert_eq!(text.lines().count(), 2);
    }
}
