//! Linear-optical elements acting on sparse Fock states.
//!
//! Beam splitters are defined by their Heisenberg action on annihilation
//! operators,
//!
//! ```text
//! U† a_k U =  t a_k + r a_l
//! U† a_l U = -r* a_k + t* a_l
//! ```
//!
//! so on kets the creation operators transform with the inverse matrix:
//! `U a_k† U† = t a_k† - r* a_l†` and `U a_l† U† = r a_k† + t* a_l†`.
//! With `t = r = 1/sqrt(2)` this sends `|1,1⟩` to `(|2,0⟩ - |0,2⟩)/sqrt(2)`.
//!
//! Circuits list elements in the order they act on the ket, i.e. the operator
//! product read right to left.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{add_amp, StateVector, PRUNE_EPS};
use crate::math::{binomial, factorial, laguerre};
use crate::serde_complex;

/// Relative norm loss above which a displacement raises the truncation flag.
pub const TRUNCATION_TOL: f64 = 1e-12;

const UNITARITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSplitter {
    #[serde(with = "serde_complex")]
    pub t: Complex64,
    #[serde(with = "serde_complex")]
    pub r: Complex64,
    pub modes: [usize; 2],
}

impl BeamSplitter {
    pub fn new(t: Complex64, r: Complex64, k: usize, l: usize) -> Result<Self> {
        let bs = BeamSplitter { t, r, modes: [k, l] };
        bs.check()?;
        Ok(bs)
    }

    /// Real-valued splitter `(t, r)`.
    pub fn real(t: f64, r: f64, k: usize, l: usize) -> Result<Self> {
        Self::new(Complex64::new(t, 0.0), Complex64::new(r, 0.0), k, l)
    }

    fn check(&self) -> Result<()> {
        let [k, l] = self.modes;
        if k == l {
            return Err(Error::ModeCollision(k));
        }
        if !(self.t.re.is_finite() && self.t.im.is_finite() && self.r.re.is_finite() && self.r.im.is_finite()) {
            return Err(Error::InvalidParameter("non-finite beam splitter coefficient".into()));
        }
        let s = self.t.norm_sqr() + self.r.norm_sqr();
        if (s - 1.0).abs() > UNITARITY_TOL {
            return Err(Error::InvalidParameter(format!("|t|²+|r|² = {s}, expected 1")));
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        BeamSplitter { t: self.t.conj(), r: -self.r, modes: self.modes }
    }

    /// `⟨m, N-m| U |nk, N-nk⟩` for all `m, nk <= N`, indexed `[m][nk]`.
    fn sector_table(&self, total: usize) -> Vec<Vec<Complex64>> {
        let pow = |z: Complex64| {
            let mut v = vec![Complex64::new(1.0, 0.0); total + 1];
            for i in 1..=total {
                v[i] = v[i - 1] * z;
            }
            v
        };
        let tp = pow(self.t);
        let tcp = pow(self.t.conj());
        let rp = pow(self.r);
        let mrcp = pow(-self.r.conj());
        let mut table = vec![vec![Complex64::new(0.0, 0.0); total + 1]; total + 1];
        for nk in 0..=total {
            let nl = total - nk;
            for i in 0..=nk {
                let a = binomial(nk, i) * tp[i] * mrcp[nk - i];
                for j in 0..=nl {
                    let b = binomial(nl, j) * rp[j] * tcp[nl - j];
                    table[i + j][nk] += a * b;
                }
            }
            for (m, row) in table.iter_mut().enumerate() {
                let norm = (factorial(m) * factorial(total - m) / (factorial(nk) * factorial(nl))).sqrt();
                row[nk] *= norm;
            }
        }
        table
    }
}

/// Single-mode phase `|n⟩ -> e^{i n theta}|n⟩` (a beam splitter restricted to
/// one mode with `t = e^{i theta}`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseShift {
    pub mode: usize,
    pub theta: f64,
}

/// Coherent displacement `exp(eps a† - eps* a)` on one mode, so that
/// `D† a D = a + eps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub mode: usize,
    #[serde(with = "serde_complex")]
    pub epsilon: Complex64,
}

impl Displacement {
    /// `⟨m|D(eps)|n⟩` on the untruncated space.
    pub fn matrix_element(&self, m: usize, n: usize) -> Complex64 {
        let x = self.epsilon.norm_sqr();
        let pre = (-0.5 * x).exp();
        if m >= n {
            let k = (m - n) as i32;
            let ratio = (factorial(n) / factorial(m)).sqrt();
            self.epsilon.powi(k) * (pre * ratio * laguerre(n, k as f64, x))
        } else {
            let k = (n - m) as i32;
            let ratio = (factorial(m) / factorial(n)).sqrt();
            (-self.epsilon.conj()).powi(k) * (pre * ratio * laguerre(m, k as f64, x))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Element {
    #[serde(rename = "bs")]
    BeamSplitter(BeamSplitter),
    #[serde(rename = "phase")]
    PhaseShift(PhaseShift),
    #[serde(rename = "disp")]
    Displacement(Displacement),
}

impl Element {
    pub fn modes(&self) -> Vec<usize> {
        match self {
            Element::BeamSplitter(b) => b.modes.to_vec(),
            Element::PhaseShift(p) => vec![p.mode],
            Element::Displacement(d) => vec![d.mode],
        }
    }

    pub fn inverse(&self) -> Self {
        match *self {
            Element::BeamSplitter(b) => Element::BeamSplitter(b.inverse()),
            Element::PhaseShift(p) => Element::PhaseShift(PhaseShift { theta: -p.theta, ..p }),
            Element::Displacement(d) => Element::Displacement(Displacement { epsilon: -d.epsilon, ..d }),
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            Element::BeamSplitter(b) => b.check(),
            Element::PhaseShift(p) if !p.theta.is_finite() => {
                Err(Error::InvalidParameter("non-finite phase".into()))
            }
            Element::Displacement(d) if !(d.epsilon.re.is_finite() && d.epsilon.im.is_finite()) => {
                Err(Error::InvalidParameter("non-finite displacement".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        match self {
            Element::BeamSplitter(b) => apply_beamsplitter(state, b),
            Element::PhaseShift(p) => apply_phase(state, p),
            Element::Displacement(d) => apply_displacement(state, d),
        }
    }
}

impl From<BeamSplitter> for Element {
    fn from(b: BeamSplitter) -> Self {
        Element::BeamSplitter(b)
    }
}

impl From<PhaseShift> for Element {
    fn from(p: PhaseShift) -> Self {
        Element::PhaseShift(p)
    }
}

impl From<Displacement> for Element {
    fn from(d: Displacement) -> Self {
        Element::Displacement(d)
    }
}

/// Ordered list of elements, first element acts first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Circuit {
    elements: Vec<Element>,
}

impl Circuit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_elements(elements: Vec<Element>) -> Result<Self> {
        for e in &elements {
            e.check()?;
        }
        Ok(Circuit { elements })
    }

    pub fn push(&mut self, e: impl Into<Element>) -> Result<()> {
        let e = e.into();
        e.check()?;
        self.elements.push(e);
        Ok(())
    }

    pub fn extend(&mut self, other: &Circuit) {
        self.elements.extend_from_slice(&other.elements);
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn inverse(&self) -> Self {
        Circuit { elements: self.elements.iter().rev().map(Element::inverse).collect() }
    }

    /// Smallest mode count this circuit can act on.
    pub fn min_modes(&self) -> usize {
        self.elements.iter().flat_map(|e| e.modes()).max().map_or(0, |m| m + 1)
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        apply_circuit(state, self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("circuit serialization cannot fail")
    }

    /// Parses and validates a circuit.
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Circuit = serde_json::from_str(s)?;
        Circuit::from_elements(c.elements)
    }
}

fn check_state_mode(state: &StateVector, mode: usize) -> Result<()> {
    if mode >= state.modes() {
        return Err(Error::InvalidMode { mode, modes: state.modes() });
    }
    Ok(())
}

/// Applies a beam splitter on the ket. Conserves the photon number in the two
/// modes, so it never truncates.
pub fn apply_beamsplitter(state: &StateVector, bs: &BeamSplitter) -> Result<StateVector> {
    bs.check()?;
    let [k, l] = bs.modes;
    check_state_mode(state, k)?;
    check_state_mode(state, l)?;

    let max_total = state.iter().map(|(o, _)| o.get(k) + o.get(l)).max().unwrap_or(0);
    let tables: Vec<Vec<Vec<Complex64>>> = (0..=max_total).map(|n| bs.sector_table(n)).collect();

    let mut out = BTreeMap::new();
    for (o, a) in state.iter() {
        let (nk, nl) = (o.get(k), o.get(l));
        let total = nk + nl;
        let table = &tables[total];
        for (m, row) in table.iter().enumerate() {
            let coef = row[nk];
            if coef.norm_sqr() == 0.0 {
                continue;
            }
            add_amp(&mut out, o.with_pair(k, m, l, total - m), a * coef);
        }
    }
    Ok(StateVector::from_map(state.modes(), state.cutoff(), out, state.is_truncated()).pruned(PRUNE_EPS))
}

pub fn apply_phase(state: &StateVector, p: &PhaseShift) -> Result<StateVector> {
    check_state_mode(state, p.mode)?;
    let mut out = BTreeMap::new();
    for (o, a) in state.iter() {
        let phase = Complex64::from_polar(1.0, p.theta * o.get(p.mode) as f64);
        add_amp(&mut out, o.clone(), a * phase);
    }
    Ok(StateVector::from_map(state.modes(), state.cutoff(), out, state.is_truncated()))
}

/// Applies `D(eps)` using exact matrix elements, restricted to the states
/// that fit under the cutoff. Raises the truncation flag when the norm lost
/// above the cutoff exceeds [`TRUNCATION_TOL`] relative to the input.
pub fn apply_displacement(state: &StateVector, d: &Displacement) -> Result<StateVector> {
    check_state_mode(state, d.mode)?;
    if d.epsilon == Complex64::new(0.0, 0.0) {
        return Ok(state.clone());
    }
    let cutoff = state.cutoff();
    let table: Vec<Vec<Complex64>> =
        (0..=cutoff).map(|m| (0..=cutoff).map(|n| d.matrix_element(m, n)).collect()).collect();

    let mut out = BTreeMap::new();
    for (o, a) in state.iter() {
        let n = o.get(d.mode);
        let headroom = cutoff - (o.total() - n);
        for (m, row) in table.iter().enumerate().take(headroom + 1) {
            add_amp(&mut out, o.with(d.mode, m), a * row[n]);
        }
    }
    let result = StateVector::from_map(state.modes(), cutoff, out, state.is_truncated()).pruned(PRUNE_EPS);
    let before = state.norm_sqr();
    let lost = before - result.norm_sqr();
    Ok(result.mark_truncated(lost > TRUNCATION_TOL * before))
}

/// Applies the elements in order, pruning after each one.
pub fn apply_circuit(state: &StateVector, circuit: &Circuit) -> Result<StateVector> {
    let mut s = state.clone();
    for e in &circuit.elements {
        s = e.apply(&s)?;
    }
    Ok(s)
}

/// Chain of splitters dividing `source_mode` equally over itself and the
/// `n - 1` ancilla modes. The operator is
/// `U(src,anc1)(1/sqrt2, -1/sqrt2) U(src,anc2)(sqrt(2/3), -1/sqrt3) ...
/// U(src,anc_{n-1})(sqrt((n-1)/n), -1/sqrt n)`, so the returned element order
/// starts from the last ancilla.
pub fn equal_splitter(n: usize, source_mode: usize, ancilla_modes: &[usize]) -> Result<Circuit> {
    if n == 0 {
        return Err(Error::InvalidParameter("equal splitter needs n >= 1".into()));
    }
    if ancilla_modes.len() != n - 1 {
        return Err(Error::InvalidParameter(format!(
            "equal splitter over {n} outputs needs {} ancilla modes, got {}",
            n - 1,
            ancilla_modes.len()
        )));
    }
    let mut c = Circuit::new();
    for l in (1..n).rev() {
        let lf = l as f64;
        let t = (lf / (lf + 1.0)).sqrt();
        let r = -1.0 / (lf + 1.0).sqrt();
        c.push(BeamSplitter::real(t, r, source_mode, ancilla_modes[l - 1])?)?;
    }
    Ok(c)
}
