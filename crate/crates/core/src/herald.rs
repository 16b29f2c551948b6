//! Heralded two-mode states from two weakly squeezed sources.
//!
//! Each source emits `sqrt(1-q²) Σ q^m |m⟩_s |m⟩_i`. Both idlers are divided
//! over `n` detectors by equal splitters, detector pairs are mixed on
//! splitters `(t_k, r_k)`, and the pattern `(1,0,1,0,...)` heralds
//!
//! ```text
//! (1-q²) q^n n^{-n/2} ∏_k (t_k a₁† + r_k a₂†) |00⟩
//! ```
//!
//! on the signal modes. [`heralded_state_analytic`] evaluates this closed
//! form; [`simulate_herald`] runs the full Fock-space circuit and serves as
//! its oracle. The joint mode layout is
//! `[s1, s2, i1, i2, a1_1, a2_1, a1_2, a2_2, ...]`, where `a1_l`/`a2_l` are
//! the ancilla outputs of the idler-1/idler-2 splitters.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{expand_factors, expand_plan, loss_code_roots_squared, Factor, FactorPlan, TargetState};
use crate::fock::{DensityMatrix, Occupation, StateVector};
use crate::math::factorial;
use crate::optics::{equal_splitter, BeamSplitter, Circuit};

/// Tail mass of a truncated source above which its state is flagged.
pub const TMSV_TAIL_TOL: f64 = 1e-12;
/// Neglected source mass, relative to the success probability, above which
/// a threshold-detector outcome is flagged.
pub const HERALD_TAIL_TOL: f64 = 1e-10;
/// Extra photons per source kept above `n` by default.
pub const DEFAULT_CUTOFF_MARGIN: usize = 3;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("squeezing parameter q = {q} must lie in (0, 1)")));
    }
    Ok(())
}

/// `sqrt(1-q²) Σ_{m<=cutoff} q^m |m, m⟩` on (signal, idler). The result is
/// not renormalized; it is flagged when the dropped mass `q^{2(cutoff+1)}`
/// exceeds [`TMSV_TAIL_TOL`].
pub fn two_mode_squeezed(q: f64, cutoff: usize) -> Result<StateVector> {
    check_q(q)?;
    let pre = (1.0 - q * q).sqrt();
    let terms = (0..=cutoff).map(|m| (vec![m, m], c(pre * q.powi(m as i32), 0.0)));
    let s = StateVector::from_terms(2, 2 * cutoff, terms)?;
    let tail = q.powi(2 * (cutoff as i32 + 1));
    Ok(s.mark_truncated(tail > TMSV_TAIL_TOL))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    /// Photon-number resolving: projects onto exact counts.
    Pnr,
    /// Click/no-click: any nonzero count is a click.
    Threshold,
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pnr" => Ok(DetectorKind::Pnr),
            "threshold" => Ok(DetectorKind::Threshold),
            other => Err(Error::InvalidParameter(format!("unknown detector kind {other:?}"))),
        }
    }
}

/// Detected modes and the required outcome on each. For threshold
/// detectors a nonzero entry means "click".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub kind: DetectorKind,
    pub modes: Vec<usize>,
    pub pattern: Vec<usize>,
}

impl DetectorModel {
    fn accepts(&self, o: &Occupation) -> bool {
        self.modes.iter().zip(&self.pattern).all(|(&m, &p)| match self.kind {
            DetectorKind::Pnr => o.get(m) == p,
            DetectorKind::Threshold => (o.get(m) > 0) == (p > 0),
        })
    }

    /// Fewest idler photons compatible with the pattern.
    fn min_photons(&self) -> usize {
        match self.kind {
            DetectorKind::Pnr => self.pattern.iter().sum(),
            DetectorKind::Threshold => self.pattern.iter().filter(|&&p| p > 0).count(),
        }
    }
}

/// Full description of a heralding experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeraldCircuit {
    pub n: usize,
    pub q: f64,
    /// Photon cutoff per source.
    pub source_cutoff: usize,
    pub modes: usize,
    pub signal_modes: [usize; 2],
    pub circuit: Circuit,
    pub detector: DetectorModel,
    /// State the plan is meant to herald.
    pub target: TargetState,
}

impl HeraldCircuit {
    /// Same circuit conditioned on a different detector pattern.
    pub fn with_pattern(&self, pattern: Vec<usize>) -> Result<Self> {
        if pattern.len() != self.detector.modes.len() {
            return Err(Error::InvalidParameter(format!(
                "pattern has {} entries for {} detectors",
                pattern.len(),
                self.detector.modes.len()
            )));
        }
        let mut out = self.clone();
        out.detector.pattern = pattern;
        Ok(out)
    }
}

/// Mode indices of the idler-1 and idler-2 splitter outputs, in detector
/// pair order: `[i1, a1_1, a1_2, ...]` and `[i2, a2_1, ...]`.
fn idler_outputs(n: usize) -> (Vec<usize>, Vec<usize>) {
    let first = (0..n).map(|l| 2 + 2 * l).collect();
    let second = (0..n).map(|l| 3 + 2 * l).collect();
    (first, second)
}

/// Builds the two-source circuit for `plan`: equal splitters on both
/// idlers, then splitter `k` mixes the `k`-th output pair, and detector
/// pattern `(1,0,...,1,0)` on the pairs.
pub fn build_herald_circuit(plan: &FactorPlan, q: f64, kind: DetectorKind, cutoff: usize) -> Result<HeraldCircuit> {
    check_q(q)?;
    let n = plan.n();
    if cutoff < n {
        return Err(Error::CutoffTooSmall { cutoff, reason: format!("source cutoff must be at least n = {n}") });
    }
    let (first, second) = idler_outputs(n);
    let mut circuit = Circuit::new();
    circuit.extend(&equal_splitter(n, second[0], &second[1..])?);
    circuit.extend(&equal_splitter(n, first[0], &first[1..])?);
    for (k, f) in plan.factors().iter().enumerate() {
        circuit.push(BeamSplitter::new(f.t, f.r, first[k], second[k])?)?;
    }
    let modes = 2 + 2 * n;
    let detector = DetectorModel {
        kind,
        modes: (2..modes).collect(),
        pattern: (0..2 * n).map(|i| usize::from(i % 2 == 0)).collect(),
    };
    Ok(HeraldCircuit {
        n,
        q,
        source_cutoff: cutoff,
        modes,
        signal_modes: [0, 1],
        circuit,
        detector,
        target: expand_plan(plan),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "data", rename_all = "lowercase")]
pub enum HeraldState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

/// Normalized heralded signal state with its success probability.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeraldOutcome {
    pub state: HeraldState,
    pub success_probability: f64,
    pub purity: f64,
    pub fidelity_to_target: f64,
    pub truncated: bool,
}

impl HeraldOutcome {
    pub fn density_matrix(&self) -> DensityMatrix {
        match &self.state {
            HeraldState::Pure(s) => DensityMatrix::from_pure(s),
            HeraldState::Mixed(r) => r.clone(),
        }
    }

    pub fn pure_state(&self) -> Option<&StateVector> {
        match &self.state {
            HeraldState::Pure(s) => Some(s),
            HeraldState::Mixed(_) => None,
        }
    }
}

/// `‖∏(t_k a₁† + r_k a₂†)|00⟩‖²`, the plan-dependent part of the success
/// probability.
///
/// Computed as `Σ_k |p_k|² (n-k)! k!` from the monomial coefficients `p_k`
/// of `∏(t_k x + r_k y)`, so integer cases come out exact.
pub fn heralded_weight(factors: &[Factor]) -> f64 {
    let n = factors.len();
    let mut poly = vec![c(1.0, 0.0)];
    for f in factors {
        let mut next = vec![c(0.0, 0.0); poly.len() + 1];
        for (k, &p) in poly.iter().enumerate() {
            next[k] += p * f.t;
            next[k + 1] += p * f.r;
        }
        poly = next;
    }
    poly.iter().enumerate().map(|(k, p)| p.norm_sqr() * factorial(n - k) * factorial(k)).sum()
}

/// `(1-q²) q^n n^{-n/2} ∏(t_k a₁† + r_k a₂†)|00⟩`, unnormalized.
pub fn heralded_vector_analytic(plan: &FactorPlan, q: f64) -> Result<StateVector> {
    check_q(q)?;
    let n = plan.n();
    let amp = (1.0 - q * q) * q.powi(n as i32) / (n as f64).powf(n as f64 / 2.0);
    let coeffs = expand_factors(plan.factors());
    StateVector::from_terms(2, n, coeffs.iter().enumerate().map(|(k, &a)| (vec![n - k, k], a * amp)))
}

/// Closed-form heralded state and success probability
/// `(1-q²)² q^{2n} n^{-n} ‖∏(t_k a₁† + r_k a₂†)|00⟩‖²`.
pub fn heralded_state_analytic(plan: &FactorPlan, q: f64) -> Result<HeraldOutcome> {
    let v = heralded_vector_analytic(plan, q)?;
    let p = v.norm_sqr();
    let state = v.normalized();
    let fidelity = TargetState::from_state_vector(&state)?.fidelity(&expand_plan(plan))?;
    Ok(HeraldOutcome {
        state: HeraldState::Pure(state),
        success_probability: p,
        purity: 1.0,
        fidelity_to_target: fidelity.min(1.0),
        truncated: false,
    })
}

/// Joint source state in the herald layout: two truncated sources on
/// `(s1, i1)` and `(s2, i2)` plus vacuum ancillas.
fn joint_source_state(spec: &HeraldCircuit) -> Result<StateVector> {
    let tmsv = two_mode_squeezed(spec.q, spec.source_cutoff)?;
    let mut joint = tmsv.tensor(&tmsv)?;
    let ancillas = spec.modes - 4;
    if ancillas > 0 {
        joint = joint.tensor(&StateVector::vacuum(ancillas, 0)?)?;
    }
    let mut order = vec![0, 2, 1, 3];
    order.extend(4..spec.modes);
    joint.permute_modes(&order)
}

fn validate_spec(spec: &HeraldCircuit) -> Result<()> {
    check_q(spec.q)?;
    if spec.circuit.min_modes() > spec.modes {
        return Err(Error::InvalidMode { mode: spec.circuit.min_modes() - 1, modes: spec.modes });
    }
    let d = &spec.detector;
    if d.modes.len() != d.pattern.len() {
        return Err(Error::InvalidParameter("detector pattern length differs from detector count".into()));
    }
    for &m in d.modes.iter().chain(&spec.signal_modes) {
        if m >= spec.modes {
            return Err(Error::InvalidMode { mode: m, modes: spec.modes });
        }
    }
    if spec.source_cutoff < spec.n {
        return Err(Error::CutoffTooSmall {
            cutoff: spec.source_cutoff,
            reason: format!("source cutoff must be at least n = {}", spec.n),
        });
    }
    Ok(())
}

/// Runs the full circuit on the truncated sources and conditions on the
/// detector pattern.
///
/// The circuit acts only on idler modes and conserves their photon number,
/// so the joint state is processed one idler-photon-number sector at a time
/// (each sector normalized before propagation and reweighted afterwards).
/// Sectors never mix under the circuit and no detector outcome spans two
/// sectors, so this equals propagating the whole joint state at once.
pub fn simulate_herald(spec: &HeraldCircuit) -> Result<HeraldOutcome> {
    validate_spec(spec)?;
    let joint = joint_source_state(spec)?;
    let det = &spec.detector;
    let sig = spec.signal_modes;
    let idler_total = |o: &Occupation| det.modes.iter().map(|&m| o.get(m)).sum::<usize>();
    let max_total = 2 * spec.source_cutoff;
    let sectors: Vec<usize> = match det.kind {
        DetectorKind::Pnr => vec![det.min_photons()],
        DetectorKind::Threshold => (det.min_photons()..=max_total).collect(),
    };

    let mut branches: BTreeMap<Occupation, StateVector> = BTreeMap::new();
    let signal_cutoff = max_total;
    for total in sectors {
        let sector = joint.filtered(|o| idler_total(o) == total);
        let weight = sector.norm_sqr();
        if weight == 0.0 {
            continue;
        }
        let out = spec.circuit.apply(&sector.normalized())?;
        let root_w = c(weight.sqrt(), 0.0);
        for (o, a) in out.iter() {
            if !det.accepts(o) {
                continue;
            }
            let key = o.select(&det.modes);
            let branch = match branches.entry(key) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => e.insert(StateVector::zero(2, signal_cutoff)?),
            };
            let term = StateVector::from_terms(2, signal_cutoff, [(vec![o.get(sig[0]), o.get(sig[1])], a * root_w)])?;
            *branch = branch.add(&term)?;
        }
    }

    let target_vec = spec.target.to_state_vector().with_cutoff(signal_cutoff)?;
    match det.kind {
        DetectorKind::Pnr => {
            let v = branches.into_values().next().unwrap_or(StateVector::zero(2, signal_cutoff)?);
            let p = v.norm_sqr();
            if p == 0.0 {
                return Err(Error::ZeroAmplitude("heralded state"));
            }
            let state = v.normalized();
            let fidelity = state.fidelity(&target_vec)?;
            let n_sig = state.iter().map(|(o, _)| o.total()).max().unwrap_or(0);
            Ok(HeraldOutcome {
                state: HeraldState::Pure(state.with_cutoff(n_sig)?),
                success_probability: p,
                purity: 1.0,
                fidelity_to_target: fidelity.min(1.0),
                // Only the n-photon source sector can produce the pattern,
                // and it lies below the cutoff.
                truncated: false,
            })
        }
        DetectorKind::Threshold => {
            let vectors: Vec<StateVector> = branches.into_values().collect();
            let rho = DensityMatrix::from_ensemble(2, signal_cutoff, &vectors)?;
            let p = rho.trace();
            if p == 0.0 {
                return Err(Error::ZeroAmplitude("heralded state"));
            }
            let rho = rho.normalized();
            let tail = 1.0 - (1.0 - spec.q.powi(2 * (spec.source_cutoff as i32 + 1))).powi(2);
            Ok(HeraldOutcome {
                purity: rho.purity(),
                fidelity_to_target: rho.fidelity_pure(&target_vec)?.min(1.0),
                state: HeraldState::Mixed(rho),
                success_probability: p,
                truncated: tail > HERALD_TAIL_TOL * p,
            })
        }
    }
}

/// Codewords of the four-photon loss code:
/// `|0_L⟩ = (|40⟩+|04⟩)/sqrt2`, `|1_L⟩ = |22⟩`.
pub fn loss_codewords() -> [StateVector; 2] {
    let h = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [
        StateVector::from_terms(2, 4, [(vec![4, 0], h), (vec![0, 4], h)]).expect("fits"),
        StateVector::basis(4, &[2, 2]).expect("fits"),
    ]
}

fn apply_loss_operator(s: &StateVector, j: usize, l: usize) -> Result<StateVector> {
    let mut out = s.clone();
    for _ in 0..j {
        out = out.apply_annihilation(0)?;
    }
    for _ in 0..l {
        out = out.apply_annihilation(1)?;
    }
    Ok(out)
}

/// Largest violation of the Knill–Laflamme conditions
/// `⟨i|E_a† E_b|j⟩ = C_ab δ_ij` over the loss operators `a₁^j a₂^l` with
/// `j + l <= losses`.
pub fn knill_laflamme_violation(codewords: &[StateVector; 2], losses: usize) -> Result<f64> {
    let ops: Vec<(usize, usize)> = (0..=losses).flat_map(|t| (0..=t).map(move |j| (j, t - j))).collect();
    let images: Vec<[StateVector; 2]> = ops
        .iter()
        .map(|&(j, l)| Ok([apply_loss_operator(&codewords[0], j, l)?, apply_loss_operator(&codewords[1], j, l)?]))
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for a in &images {
        for b in &images {
            let off = a[0].inner_product(&b[1])?.norm().max(a[1].inner_product(&b[0])?.norm());
            let diag = (a[0].inner_product(&b[0])? - a[1].inner_product(&b[1])?).norm();
            worst = worst.max(off).max(diag);
        }
    }
    Ok(worst)
}

/// Number of photon losses a two-mode code corrects, probing up to
/// `max_losses`.
pub fn correctable_losses(codewords: &[StateVector; 2], max_losses: usize) -> Result<usize> {
    let mut k = 0;
    while k < max_losses && knill_laflamme_violation(codewords, k + 1)? <= 1e-12 {
        k += 1;
    }
    Ok(k)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageOverlap {
    pub first: String,
    pub second: String,
    pub overlap: f64,
}

/// Loss behaviour of `α|0_L⟩ + β|1_L⟩`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossCheckReport {
    /// `max_j |⟨a_j 0_L | a_j 1_L⟩|` (normalized images).
    pub single_loss_codeword_overlap: f64,
    /// Largest normalized overlap between the `a₁` and `a₂` error spaces.
    pub error_space_overlap: f64,
    /// Fidelity of `α|0_L⟩ + β|1_L⟩` with the state decoded after each
    /// single loss (`a₁`, `a₂`).
    pub decoded_fidelity: [f64; 2],
    pub knill_laflamme_single: f64,
    pub knill_laflamme_double: f64,
    /// Normalized overlaps between distinct two-loss images.
    pub two_loss_overlaps: Vec<ImageOverlap>,
    pub two_loss_max_overlap: f64,
}

fn normalized_overlap(a: &StateVector, b: &StateVector) -> Result<f64> {
    if a.norm_sqr() == 0.0 || b.norm_sqr() == 0.0 {
        return Ok(0.0);
    }
    Ok(a.normalized().inner_product(&b.normalized())?.norm())
}

pub fn code_loss_check(alpha: Complex64, beta: Complex64) -> Result<LossCheckReport> {
    let s = alpha.norm_sqr() + beta.norm_sqr();
    if (s - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!("|α|²+|β|² = {s}, expected 1")));
    }
    let words = loss_codewords();
    let psi = words[0].scaled(alpha).add(&words[1].scaled(beta))?;
    let img = |j: usize, l: usize, w: usize| apply_loss_operator(&words[w], j, l);

    let single = [(1, 0), (0, 1)];
    let mut single_overlap = 0.0f64;
    let mut decoded = [0.0; 2];
    for (idx, &(j, l)) in single.iter().enumerate() {
        let (e0, e1) = (img(j, l, 0)?, img(j, l, 1)?);
        single_overlap = single_overlap.max(normalized_overlap(&e0, &e1)?);
        let damaged = apply_loss_operator(&psi, j, l)?;
        let d0 = e0.normalized().inner_product(&damaged)?;
        let d1 = e1.normalized().inner_product(&damaged)?;
        let norm = (d0.norm_sqr() + d1.norm_sqr()).sqrt();
        decoded[idx] = ((alpha.conj() * d0 + beta.conj() * d1) / norm).norm_sqr();
    }
    let mut space_overlap = 0.0f64;
    for w in 0..2 {
        for v in 0..2 {
            space_overlap = space_overlap.max(normalized_overlap(&img(1, 0, w)?, &img(0, 1, v)?)?);
        }
    }

    let names = ["a1^2", "a1 a2", "a2^2"];
    let double = [(2, 0), (1, 1), (0, 2)];
    let mut images = Vec::new();
    for (name, &(j, l)) in names.iter().zip(&double) {
        for w in 0..2 {
            images.push((format!("{name} |{w}_L>"), img(j, l, w)?));
        }
    }
    let mut overlaps = Vec::new();
    for i in 0..images.len() {
        for k in i + 1..images.len() {
            overlaps.push(ImageOverlap {
                first: images[i].0.clone(),
                second: images[k].0.clone(),
                overlap: normalized_overlap(&images[i].1, &images[k].1)?,
            });
        }
    }
    let max_overlap = overlaps.iter().map(|o| o.overlap).fold(0.0, f64::max);

    Ok(LossCheckReport {
        single_loss_codeword_overlap: single_overlap,
        error_space_overlap: space_overlap,
        decoded_fidelity: decoded,
        knill_laflamme_single: knill_laflamme_violation(&words, 1)?,
        knill_laflamme_double: knill_laflamme_violation(&words, 2)?,
        two_loss_overlaps: overlaps,
        two_loss_max_overlap: max_overlap,
    })
}

/// Loss-code success probability three ways.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossCodeProbability {
    /// From the heralded amplitude of the closed-form plan.
    pub analytic: f64,
    /// `48/|α|² · q⁸/256 · (1-q²)² · (1+|s₊|)^{-2} (1+|s₋|)^{-2}`.
    pub closed_form: f64,
    /// The same prefactor with `(1+|s₊|²)^{-1} (1+|s₋|²)^{-1}`, i.e. with
    /// the factor normalizations evaluated at `s±` instead of `sqrt(s±)`.
    pub unsquared_root_form: f64,
}

pub fn loss_code_probability(alpha: Complex64, beta: Complex64, q: f64) -> Result<LossCodeProbability> {
    check_q(q)?;
    let plan = crate::factor::loss_code_plan(alpha, beta)?;
    let analytic = heralded_state_analytic(&plan, q)?.success_probability;
    let (sp, sm) = loss_code_roots_squared(alpha, beta);
    let pre = 48.0 / alpha.norm_sqr() * q.powi(8) / 256.0 * (1.0 - q * q).powi(2);
    Ok(LossCodeProbability {
        analytic,
        closed_form: pre / ((1.0 + sp.norm()).powi(2) * (1.0 + sm.norm()).powi(2)),
        unsquared_root_form: pre / ((1.0 + sp.norm_sqr()) * (1.0 + sm.norm_sqr())),
    })
}

/// NOON success probability from the general heralded amplitude next to
/// the `N^{-N/2}` closed form quoted for it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoonProbabilityReport {
    pub n: usize,
    pub q: f64,
    /// From the heralded amplitude of the NOON plan.
    pub analytic: f64,
    /// `q^{2N} (1-q²)² · 2·N!/2^N · N^{-N}`.
    pub closed_form: f64,
    /// `q^{2N} (1-q²)² · 2·N!/2^N · N^{-N/2}`.
    pub quoted_form: f64,
    /// Same with `(2N)!` in place of `2·N!`.
    pub quoted_form_double_factorial_reading: f64,
    /// `quoted_form / analytic`, equal to `N^{N/2}`.
    pub ratio: f64,
    pub discrepancy: bool,
}

pub fn noon_probability_report(n: usize, q: f64) -> Result<NoonProbabilityReport> {
    check_q(q)?;
    let plan = crate::factor::noon_plan(n)?;
    let analytic = heralded_state_analytic(&plan, q)?.success_probability;
    let nf = n as f64;
    let base = q.powi(2 * n as i32) * (1.0 - q * q).powi(2) / 2f64.powi(n as i32);
    let closed_form = base * 2.0 * factorial(n) / nf.powf(nf);
    let quoted_form = base * 2.0 * factorial(n) / nf.powf(nf / 2.0);
    let quoted_alt = base * factorial(2 * n) / nf.powf(nf / 2.0);
    let ratio = quoted_form / analytic;
    Ok(NoonProbabilityReport {
        n,
        q,
        analytic,
        closed_form,
        quoted_form,
        quoted_form_double_factorial_reading: quoted_alt,
        ratio,
        discrepancy: (ratio - 1.0).abs() > 1e-9,
    })
}
