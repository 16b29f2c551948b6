//! Sparse algebra on multimode bosonic Fock spaces with a total-photon cutoff.
//!
//! A [`StateVector`] maps occupation tuples to complex amplitudes and carries
//! a sticky truncation flag: any operation that would push a component above
//! the cutoff drops it and sets the flag on the result. States are not
//! required to be normalized, since heralded states carry their probability
//! weight in the norm.
//!
//! [`DensityMatrix`] is a dense Hermitian matrix over an explicit, sorted list
//! of basis occupations.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Amplitudes below this magnitude are dropped after composite operations.
pub const PRUNE_EPS: f64 = 1e-14;

/// Largest supported total-photon cutoff (counts are stored as `u8`).
pub const MAX_CUTOFF: usize = u8::MAX as usize;

/// Photon counts per mode, ordered lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Occupation(SmallVec<[u8; 16]>);

impl Occupation {
    pub fn new(counts: &[usize]) -> Result<Self> {
        let mut v = SmallVec::with_capacity(counts.len());
        for &c in counts {
            if c > MAX_CUTOFF {
                return Err(Error::InvalidParameter(format!(
                    "photon count {c} exceeds {MAX_CUTOFF}"
                )));
            }
            v.push(c as u8);
        }
        Ok(Occupation(v))
    }

    pub fn vacuum(modes: usize) -> Self {
        Occupation(smallvec::smallvec![0; modes])
    }

    pub fn modes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|&c| c as usize).sum()
    }

    pub fn get(&self, mode: usize) -> usize {
        self.0[mode] as usize
    }

    pub fn counts(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|&c| c as usize)
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.counts().collect()
    }

    /// Copy with `mode` set to `count`. `count` must fit in a `u8`.
    pub fn with(&self, mode: usize, count: usize) -> Self {
        let mut v = self.0.clone();
        v[mode] = count as u8;
        Occupation(v)
    }

    pub(crate) fn with_pair(&self, k: usize, nk: usize, l: usize, nl: usize) -> Self {
        let mut v = self.0.clone();
        v[k] = nk as u8;
        v[l] = nl as u8;
        Occupation(v)
    }

    /// Restriction to the listed modes, in the listed order.
    pub fn select(&self, modes: &[usize]) -> Self {
        Occupation(modes.iter().map(|&m| self.0[m]).collect())
    }

    /// Concatenation `self ⊗ other`.
    pub fn concat(&self, other: &Occupation) -> Self {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Occupation(v)
    }
}

/// All occupations of `modes` modes with total photon number `<= cutoff`,
/// in lexicographic order.
pub fn full_basis(modes: usize, cutoff: usize) -> Vec<Occupation> {
    fn rec(prefix: &mut Vec<usize>, modes: usize, budget: usize, out: &mut Vec<Occupation>) {
        if prefix.len() == modes {
            out.push(Occupation(prefix.iter().map(|&c| c as u8).collect()));
            return;
        }
        for c in 0..=budget {
            prefix.push(c);
            rec(prefix, modes, budget - c, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(modes), modes, cutoff.min(MAX_CUTOFF), &mut out);
    out
}

/// All occupations of `modes` modes with total photon number exactly `total`.
pub fn fixed_total_basis(modes: usize, total: usize) -> Vec<Occupation> {
    full_basis(modes, total)
        .into_iter()
        .filter(|o| o.total() == total)
        .collect()
}

pub(crate) fn add_amp(map: &mut BTreeMap<Occupation, Complex64>, occ: Occupation, amp: Complex64) {
    if amp == Complex64::new(0.0, 0.0) {
        return;
    }
    use std::collections::btree_map::Entry;
    match map.entry(occ) {
        Entry::Vacant(e) => {
            e.insert(amp);
        }
        Entry::Occupied(mut e) => {
            let v = *e.get() + amp;
            if v == Complex64::new(0.0, 0.0) {
                e.remove();
            } else {
                *e.get_mut() = v;
            }
        }
    }
}

/// Sparse, possibly unnormalized pure state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateVectorWire", into = "StateVectorWire")]
pub struct StateVector {
    modes: usize,
    cutoff: usize,
    amps: BTreeMap<Occupation, Complex64>,
    truncated: bool,
}

impl StateVector {
    /// The zero vector.
    pub fn zero(modes: usize, cutoff: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidParameter("state needs at least one mode".into()));
        }
        if cutoff > MAX_CUTOFF {
            return Err(Error::InvalidParameter(format!(
                "cutoff {cutoff} exceeds {MAX_CUTOFF}"
            )));
        }
        Ok(StateVector { modes, cutoff, amps: BTreeMap::new(), truncated: false })
    }

    pub fn vacuum(modes: usize, cutoff: usize) -> Result<Self> {
        let mut s = Self::zero(modes, cutoff)?;
        s.amps.insert(Occupation::vacuum(modes), Complex64::new(1.0, 0.0));
        Ok(s)
    }

    /// Normalized basis ket `|counts⟩`.
    pub fn basis(cutoff: usize, counts: &[usize]) -> Result<Self> {
        Self::from_terms(counts.len(), cutoff, [(counts.to_vec(), Complex64::new(1.0, 0.0))])
    }

    /// Builds a state from `(occupation, amplitude)` terms; repeated
    /// occupations are summed.
    pub fn from_terms<I>(modes: usize, cutoff: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, Complex64)>,
    {
        let mut s = Self::zero(modes, cutoff)?;
        for (counts, amp) in terms {
            if counts.len() != modes {
                return Err(Error::ModeMismatch { left: modes, right: counts.len() });
            }
            let occ = Occupation::new(&counts)?;
            if occ.total() > cutoff {
                return Err(Error::CutoffTooSmall {
                    cutoff,
                    reason: format!("term {counts:?} has {} photons", occ.total()),
                });
            }
            if !(amp.re.is_finite() && amp.im.is_finite()) {
                return Err(Error::InvalidParameter("non-finite amplitude".into()));
            }
            add_amp(&mut s.amps, occ, amp);
        }
        Ok(s)
    }

    pub(crate) fn from_map(
        modes: usize,
        cutoff: usize,
        amps: BTreeMap<Occupation, Complex64>,
        truncated: bool,
    ) -> Self {
        StateVector { modes, cutoff, amps, truncated }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub(crate) fn mark_truncated(mut self, flag: bool) -> Self {
        self.truncated |= flag;
        self
    }

    /// Number of stored (nonzero) amplitudes.
    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Occupation, &Complex64)> {
        self.amps.iter()
    }

    pub fn amplitude(&self, counts: &[usize]) -> Complex64 {
        Occupation::new(counts)
            .ok()
            .and_then(|o| self.amps.get(&o).copied())
            .unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Unit-norm copy; the zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        self.scaled(Complex64::new(1.0 / n, 0.0))
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let mut out = Self { amps: BTreeMap::new(), ..self.clone() };
        for (o, a) in &self.amps {
            add_amp(&mut out.amps, o.clone(), a * c);
        }
        out
    }

    /// `self + other`; the truncation flags are OR-ed.
    pub fn add(&self, other: &StateVector) -> Result<Self> {
        self.check_modes(other)?;
        let mut out = self.clone();
        out.cutoff = self.cutoff.max(other.cutoff);
        out.truncated |= other.truncated;
        for (o, a) in &other.amps {
            add_amp(&mut out.amps, o.clone(), *a);
        }
        Ok(out)
    }

    /// Drops amplitudes with magnitude below `eps`.
    pub fn pruned(mut self, eps: f64) -> Self {
        self.amps.retain(|_, a| a.norm() >= eps);
        self
    }

    /// Keeps only the terms whose occupation satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(&Occupation) -> bool) -> Self {
        let amps = self.amps.iter().filter(|(o, _)| keep(o)).map(|(o, a)| (o.clone(), *a)).collect();
        Self { modes: self.modes, cutoff: self.cutoff, amps, truncated: self.truncated }
    }

    fn check_modes(&self, other: &StateVector) -> Result<()> {
        if self.modes != other.modes {
            return Err(Error::ModeMismatch { left: self.modes, right: other.modes });
        }
        Ok(())
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.modes {
            return Err(Error::InvalidMode { mode, modes: self.modes });
        }
        Ok(())
    }

    /// `⟨self|other⟩`, conjugate-linear in `self`.
    pub fn inner_product(&self, other: &StateVector) -> Result<Complex64> {
        self.check_modes(other)?;
        let (small, large, conj_small) = if self.len() <= other.len() {
            (self, other, true)
        } else {
            (other, self, false)
        };
        let mut acc = Complex64::new(0.0, 0.0);
        for (o, a) in &small.amps {
            if let Some(b) = large.amps.get(o) {
                acc += if conj_small { a.conj() * b } else { b.conj() * a };
            }
        }
        Ok(acc)
    }

    /// `|⟨a|b⟩|² / (‖a‖² ‖b‖²)`.
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        let ip = self.inner_product(other)?;
        let d = self.norm_sqr() * other.norm_sqr();
        if d == 0.0 {
            return Ok(0.0);
        }
        Ok((ip.norm_sqr() / d).min(1.0))
    }

    /// `a†_mode |ψ⟩`.
    pub fn apply_creation(&self, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let mut out = Self { amps: BTreeMap::new(), ..self.clone() };
        for (o, a) in &self.amps {
            if o.total() + 1 > self.cutoff {
                out.truncated = true;
                continue;
            }
            let n = o.get(mode);
            add_amp(&mut out.amps, o.with(mode, n + 1), a * ((n + 1) as f64).sqrt());
        }
        Ok(out)
    }

    /// `a_mode |ψ⟩`.
    pub fn apply_annihilation(&self, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let mut out = Self { amps: BTreeMap::new(), ..self.clone() };
        for (o, a) in &self.amps {
            let n = o.get(mode);
            if n == 0 {
                continue;
            }
            add_amp(&mut out.amps, o.with(mode, n - 1), a * (n as f64).sqrt());
        }
        Ok(out)
    }

    /// `⟨n_mode⟩ / ‖ψ‖²`.
    pub fn mean_photon_number(&self, mode: usize) -> Result<f64> {
        self.check_mode(mode)?;
        let num: f64 = self.amps.iter().map(|(o, a)| o.get(mode) as f64 * a.norm_sqr()).sum();
        Ok(num / self.norm_sqr())
    }

    /// Weight of each total photon number, `p[N] = Σ_{|occ|=N} |amp|²`.
    pub fn photon_number_weights(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.cutoff + 1];
        for (o, a) in &self.amps {
            p[o.total()] += a.norm_sqr();
        }
        p
    }

    /// Copy with the global phase fixed so that the first nonzero amplitude
    /// (lexicographic occupation order) is real and positive.
    pub fn canonical_phase(&self) -> Self {
        match self.amps.values().next() {
            Some(first) => {
                let phase = first.conj() / first.norm();
                self.scaled(phase)
            }
            None => self.clone(),
        }
    }

    /// `|self⟩ ⊗ |other⟩` with modes concatenated and cutoffs summed.
    pub fn tensor(&self, other: &StateVector) -> Result<Self> {
        let cutoff = self.cutoff + other.cutoff;
        let mut out = Self::zero(self.modes + other.modes, cutoff)?;
        out.truncated = self.truncated || other.truncated;
        for (oa, a) in &self.amps {
            for (ob, b) in &other.amps {
                add_amp(&mut out.amps, oa.concat(ob), a * b);
            }
        }
        Ok(out)
    }

    /// Same amplitudes under a different cutoff; lowering the cutoff drops
    /// components and raises the truncation flag if anything was dropped.
    pub fn with_cutoff(&self, cutoff: usize) -> Result<Self> {
        let mut out = Self::zero(self.modes, cutoff)?;
        out.truncated = self.truncated;
        for (o, a) in &self.amps {
            if o.total() <= cutoff {
                out.amps.insert(o.clone(), *a);
            } else {
                out.truncated = true;
            }
        }
        Ok(out)
    }

    /// Reorders modes: mode `i` of the result is mode `order[i]` of `self`.
    pub fn permute_modes(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.modes];
        if order.len() != self.modes {
            return Err(Error::ModeMismatch { left: self.modes, right: order.len() });
        }
        for &m in order {
            self.check_mode(m)?;
            if std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidParameter(format!("mode {m} repeated in permutation")));
            }
        }
        let mut out = Self { amps: BTreeMap::new(), ..self.clone() };
        for (o, a) in &self.amps {
            out.amps.insert(o.select(order), *a);
        }
        Ok(out)
    }

    /// Projects `modes` onto the Fock pattern `counts` and returns the
    /// unnormalized state of the remaining modes (in their original order).
    pub fn project(&self, modes: &[usize], counts: &[usize]) -> Result<Self> {
        if modes.len() != counts.len() {
            return Err(Error::InvalidParameter("pattern length differs from mode list".into()));
        }
        for &m in modes {
            self.check_mode(m)?;
        }
        let rest: Vec<usize> = (0..self.modes).filter(|m| !modes.contains(m)).collect();
        if rest.is_empty() {
            return Err(Error::InvalidParameter("projection leaves no modes".into()));
        }
        let mut out = Self::zero(rest.len(), self.cutoff)?;
        out.truncated = self.truncated;
        for (o, a) in &self.amps {
            if modes.iter().zip(counts).all(|(&m, &c)| o.get(m) == c) {
                add_amp(&mut out.amps, o.select(&rest), *a);
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct TermWire {
    occ: Vec<usize>,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct StateVectorWire {
    modes: usize,
    cutoff: usize,
    terms: Vec<TermWire>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    truncated: bool,
}

impl From<StateVector> for StateVectorWire {
    fn from(s: StateVector) -> Self {
        StateVectorWire {
            modes: s.modes,
            cutoff: s.cutoff,
            terms: s
                .amps
                .iter()
                .map(|(o, a)| TermWire { occ: o.to_vec(), re: a.re, im: a.im })
                .collect(),
            truncated: s.truncated,
        }
    }
}

impl TryFrom<StateVectorWire> for StateVector {
    type Error = Error;

    fn try_from(w: StateVectorWire) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &w.terms {
            if !seen.insert(&t.occ) {
                return Err(Error::Parse(format!("duplicate occupation {:?}", t.occ)));
            }
        }
        let mut s = StateVector::from_terms(
            w.modes,
            w.cutoff,
            w.terms.into_iter().map(|t| (t.occ, Complex64::new(t.re, t.im))),
        )?;
        s.truncated = w.truncated;
        Ok(s)
    }
}

/// Hermitian operator on an explicit set of basis occupations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityMatrixWire", into = "DensityMatrixWire")]
pub struct DensityMatrix {
    modes: usize,
    cutoff: usize,
    basis: Vec<Occupation>,
    mat: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// `|ψ⟩⟨ψ|` over the support of `psi` (unnormalized if `psi` is).
    pub fn from_pure(psi: &StateVector) -> Self {
        Self::from_ensemble(psi.modes, psi.cutoff, std::slice::from_ref(psi))
            .expect("single state shares its own mode count")
    }

    /// `Σ_k |v_k⟩⟨v_k|`; weights live in the norms of the vectors.
    pub fn from_ensemble(modes: usize, cutoff: usize, vectors: &[StateVector]) -> Result<Self> {
        let mut support = std::collections::BTreeSet::new();
        for v in vectors {
            if v.modes != modes {
                return Err(Error::ModeMismatch { left: modes, right: v.modes });
            }
            support.extend(v.amps.keys().cloned());
        }
        let basis: Vec<Occupation> = support.into_iter().collect();
        let d = basis.len();
        let mut mat = DMatrix::<Complex64>::zeros(d, d);
        for v in vectors {
            let idx: Vec<(usize, Complex64)> = v
                .amps
                .iter()
                .map(|(o, a)| (basis.binary_search(o).expect("in support"), *a))
                .collect();
            for &(i, a) in &idx {
                for &(j, b) in &idx {
                    mat[(i, j)] += a * b.conj();
                }
            }
        }
        Ok(DensityMatrix { modes, cutoff, basis, mat })
    }

    /// Builds from parts. `basis` must be strictly increasing and match `mat`.
    pub fn from_parts(
        modes: usize,
        cutoff: usize,
        basis: Vec<Occupation>,
        mat: DMatrix<Complex64>,
    ) -> Result<Self> {
        if mat.nrows() != basis.len() || mat.ncols() != basis.len() {
            return Err(Error::InvalidDensityMatrix("matrix shape does not match basis".into()));
        }
        if basis.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDensityMatrix("basis must be strictly increasing".into()));
        }
        for o in &basis {
            if o.modes() != modes {
                return Err(Error::ModeMismatch { left: modes, right: o.modes() });
            }
            if o.total() > cutoff {
                return Err(Error::CutoffTooSmall {
                    cutoff,
                    reason: format!("basis element {:?}", o.to_vec()),
                });
            }
        }
        Ok(DensityMatrix { modes, cutoff, basis, mat })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn basis(&self) -> &[Occupation] {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn index_of(&self, counts: &[usize]) -> Option<usize> {
        let o = Occupation::new(counts).ok()?;
        self.basis.binary_search(&o).ok()
    }

    /// `⟨a|ρ|b⟩`, zero outside the stored basis.
    pub fn element(&self, a: &[usize], b: &[usize]) -> Complex64 {
        match (self.index_of(a), self.index_of(b)) {
            (Some(i), Some(j)) => self.mat[(i, j)],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    pub fn trace(&self) -> f64 {
        self.mat.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn normalized(&self) -> Self {
        let t = self.trace();
        let mut out = self.clone();
        if t > 0.0 {
            out.mat.unscale_mut(t);
        }
        out
    }

    /// `Tr ρ² / (Tr ρ)²`.
    pub fn purity(&self) -> f64 {
        let t = self.trace();
        let sq: f64 = self.mat.iter().map(|z| z.norm_sqr()).sum();
        sq / (t * t)
    }

    /// Eigenvalues of the Hermitian matrix, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.dim() == 0 {
            return Vec::new();
        }
        let mut ev: Vec<f64> = hermitian_part(&self.mat).symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Checks Hermiticity (1e-10), trace in (0, 1 + 1e-10] and eigenvalues
    /// `>= -1e-9`.
    pub fn validate(&self) -> Result<()> {
        let herm = (&self.mat - self.mat.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > 1e-10 {
            return Err(Error::InvalidDensityMatrix(format!("not Hermitian (deviation {herm:e})")));
        }
        let t = self.trace();
        if !(t > 0.0 && t <= 1.0 + 1e-10) {
            return Err(Error::InvalidDensityMatrix(format!("trace {t} outside (0, 1]")));
        }
        if let Some(&min) = self.eigenvalues().first() {
            if min < -1e-9 {
                return Err(Error::InvalidDensityMatrix(format!("negative eigenvalue {min:e}")));
            }
        }
        Ok(())
    }

    /// Reduced state on `keep` (result modes follow the order of `keep`).
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::InvalidParameter("partial trace must keep at least one mode".into()));
        }
        for (i, &m) in keep.iter().enumerate() {
            if m >= self.modes {
                return Err(Error::InvalidMode { mode: m, modes: self.modes });
            }
            if keep[..i].contains(&m) {
                return Err(Error::InvalidParameter(format!("mode {m} listed twice")));
            }
        }
        let traced: Vec<usize> = (0..self.modes).filter(|m| !keep.contains(m)).collect();
        let kept_occ: Vec<Occupation> = self.basis.iter().map(|o| o.select(keep)).collect();
        let mut new_basis = kept_occ.clone();
        new_basis.sort();
        new_basis.dedup();
        let new_idx: Vec<usize> =
            kept_occ.iter().map(|o| new_basis.binary_search(o).expect("present")).collect();

        let mut groups: BTreeMap<Occupation, Vec<usize>> = BTreeMap::new();
        for (i, o) in self.basis.iter().enumerate() {
            groups.entry(o.select(&traced)).or_default().push(i);
        }
        let d = new_basis.len();
        let mut mat = DMatrix::<Complex64>::zeros(d, d);
        for members in groups.values() {
            for &i in members {
                for &j in members {
                    mat[(new_idx[i], new_idx[j])] += self.mat[(i, j)];
                }
            }
        }
        Ok(DensityMatrix { modes: keep.len(), cutoff: self.cutoff, basis: new_basis, mat })
    }

    /// `⟨ψ|ρ|ψ⟩`.
    pub fn expectation(&self, psi: &StateVector) -> Result<Complex64> {
        if psi.modes != self.modes {
            return Err(Error::ModeMismatch { left: self.modes, right: psi.modes });
        }
        let v: Vec<Complex64> = self.basis.iter().map(|o| psi.amps.get(o).copied().unwrap_or_default()).collect();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.dim() {
            if v[i] == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..self.dim() {
                acc += v[i].conj() * self.mat[(i, j)] * v[j];
            }
        }
        Ok(acc)
    }

    /// Fidelity `⟨ψ|ρ|ψ⟩` of the normalized state against normalized `psi`.
    pub fn fidelity_pure(&self, psi: &StateVector) -> Result<f64> {
        let e = self.expectation(psi)?.re;
        Ok((e / (self.trace() * psi.norm_sqr())).clamp(0.0, 1.0))
    }

    /// Both operators embedded in the union of their bases.
    fn aligned(&self, other: &DensityMatrix) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
        if self.modes != other.modes {
            return Err(Error::ModeMismatch { left: self.modes, right: other.modes });
        }
        let mut union: Vec<Occupation> = self.basis.iter().chain(&other.basis).cloned().collect();
        union.sort();
        union.dedup();
        let embed = |m: &DensityMatrix| {
            let idx: Vec<usize> = m.basis.iter().map(|o| union.binary_search(o).expect("in union")).collect();
            let mut out = DMatrix::<Complex64>::zeros(union.len(), union.len());
            for (i, &a) in idx.iter().enumerate() {
                for (j, &b) in idx.iter().enumerate() {
                    out[(a, b)] = m.mat[(i, j)];
                }
            }
            out
        };
        Ok((embed(self), embed(other)))
    }

    /// Uhlmann fidelity `(Tr sqrt(sqrt(ρ) σ sqrt(ρ)))²` of the normalized operators.
    pub fn fidelity(&self, other: &DensityMatrix) -> Result<f64> {
        let (a, b) = self.aligned(other)?;
        let a = a.unscale(self.trace());
        let b = b.unscale(other.trace());
        let sa = psd_sqrt(&a);
        let m = &sa * b * &sa;
        let s: f64 = hermitian_part(&m).symmetric_eigenvalues().iter().map(|&l| l.max(0.0).sqrt()).sum();
        Ok((s * s).min(1.0))
    }

    /// `½ ‖ρ − σ‖₁` of the normalized operators.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        let (a, b) = self.aligned(other)?;
        let diff = a.unscale(self.trace()) - b.unscale(other.trace());
        Ok(0.5 * hermitian_part(&diff).symmetric_eigenvalues().iter().map(|l| l.abs()).sum::<f64>())
    }

    /// Weight of each total photon number on the diagonal, normalized by the trace.
    pub fn photon_number_distribution(&self) -> Vec<f64> {
        let t = self.trace();
        let mut p = vec![0.0; self.cutoff + 1];
        for (i, o) in self.basis.iter().enumerate() {
            p[o.total()] += self.mat[(i, i)].re / t;
        }
        p
    }

    pub fn mean_photon_number(&self, mode: usize) -> Result<f64> {
        if mode >= self.modes {
            return Err(Error::InvalidMode { mode, modes: self.modes });
        }
        let num: f64 = self.basis.iter().enumerate().map(|(i, o)| o.get(mode) as f64 * self.mat[(i, i)].re).sum();
        Ok(num / self.trace())
    }

    /// Block on the listed basis occupations (in the listed order).
    pub fn block(&self, states: &[Vec<usize>]) -> DMatrix<Complex64> {
        let idx: Vec<Option<usize>> = states.iter().map(|s| self.index_of(s)).collect();
        DMatrix::from_fn(states.len(), states.len(), |i, j| match (idx[i], idx[j]) {
            (Some(a), Some(b)) => self.mat[(a, b)],
            _ => Complex64::new(0.0, 0.0),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("density matrix serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn hermitian_part(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()).scale(0.5)
}

/// Square root of a positive semidefinite Hermitian matrix (negative
/// eigenvalues clipped to zero).
pub(crate) fn psd_sqrt(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let eig = hermitian_part(m).symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0)));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

#[derive(Serialize, Deserialize)]
struct DensityMatrixWire {
    modes: usize,
    cutoff: usize,
    basis: Vec<Vec<usize>>,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl From<DensityMatrix> for DensityMatrixWire {
    fn from(d: DensityMatrix) -> Self {
        let n = d.dim();
        DensityMatrixWire {
            modes: d.modes,
            cutoff: d.cutoff,
            basis: d.basis.iter().map(Occupation::to_vec).collect(),
            re: (0..n).map(|i| (0..n).map(|j| d.mat[(i, j)].re).collect()).collect(),
            im: (0..n).map(|i| (0..n).map(|j| d.mat[(i, j)].im).collect()).collect(),
        }
    }
}

impl TryFrom<DensityMatrixWire> for DensityMatrix {
    type Error = Error;

    fn try_from(w: DensityMatrixWire) -> Result<Self> {
        let n = w.basis.len();
        if w.re.len() != n || w.im.len() != n || w.re.iter().chain(&w.im).any(|r| r.len() != n) {
            return Err(Error::Parse("density matrix rows do not match basis".into()));
        }
        if w.cutoff > MAX_CUTOFF {
            return Err(Error::Parse(format!("cutoff {} exceeds {MAX_CUTOFF}", w.cutoff)));
        }
        let basis = w.basis.iter().map(|b| Occupation::new(b)).collect::<Result<Vec<_>>>()?;
        let mat = DMatrix::from_fn(n, n, |i, j| Complex64::new(w.re[i][j], w.im[i][j]));
        if mat.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Parse("non-finite matrix entry".into()));
        }
        DensityMatrix::from_parts(w.modes, w.cutoff, basis, mat)
    }
}

/// `⟨0|a^n a†^n|0⟩` evaluated by repeated operator application.
pub fn vacuum_moment(n: usize) -> Result<f64> {
    let mut s = StateVector::vacuum(1, n)?;
    for _ in 0..n {
        s = s.apply_creation(0)?;
    }
    for _ in 0..n {
        s = s.apply_annihilation(0)?;
    }
    Ok(s.amplitude(&[0]).re)
}
