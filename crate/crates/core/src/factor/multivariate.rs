//! Least-squares search for linear-form factorizations of multimode targets.
//!
//! A target `Σ c_o |o⟩` over `m` modes with exactly `n` photons is
//! `P(a†)|0⟩` for the homogeneous polynomial `P(x) = Σ c_o x^o / sqrt(∏ o_i!)`.
//! The fit minimizes `Σ |coeff(∏_j L_j) - coeff(P)|²` over `n` linear forms
//! `L_j(x) = Σ_i d_ji x_i`. The "up to `n` photons" form adds a constant
//! term to every linear form; it is handled as an extra homogenizing
//! variable that carries no factorial weight.
//!
//! This is a heuristic: a small residual certifies a factorization, a large
//! one across all starts is only evidence that none exists.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{fixed_total_basis, Occupation, StateVector};
use crate::math::factorial;

/// Residual at or below which a fit counts as a factorization.
pub const CERTIFY_RESIDUAL: f64 = 1e-8;

const ARMIJO: f64 = 1e-4;
const TINY_RESIDUAL: f64 = 1e-28;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultivariateForm {
    /// Every term carries exactly `n` photons.
    Exact,
    /// Terms carry at most `n` photons.
    UpTo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TargetWire", into = "TargetWire")]
pub struct MultivariateTarget {
    modes: usize,
    n: usize,
    form: MultivariateForm,
    terms: BTreeMap<Occupation, Complex64>,
}

#[derive(Serialize, Deserialize)]
struct TermWire {
    occ: Vec<usize>,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct TargetWire {
    modes: usize,
    n: usize,
    form: MultivariateForm,
    terms: Vec<TermWire>,
}

impl TryFrom<TargetWire> for MultivariateTarget {
    type Error = Error;

    fn try_from(w: TargetWire) -> Result<Self> {
        let terms = w.terms.into_iter().map(|t| (t.occ, c(t.re, t.im))).collect::<Vec<_>>();
        MultivariateTarget::new(w.modes, w.n, w.form, terms)
    }
}

impl From<MultivariateTarget> for TargetWire {
    fn from(t: MultivariateTarget) -> Self {
        TargetWire {
            modes: t.modes,
            n: t.n,
            form: t.form,
            terms: t.terms.iter().map(|(o, a)| TermWire { occ: o.to_vec(), re: a.re, im: a.im }).collect(),
        }
    }
}

impl MultivariateTarget {
    /// Requires normalized amplitudes (within 1e-10) and distinct
    /// occupations of the right length and photon number.
    pub fn new<I>(modes: usize, n: usize, form: MultivariateForm, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, Complex64)>,
    {
        let t = Self::build(modes, n, form, terms)?;
        let norm: f64 = t.terms.values().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > super::TARGET_NORM_TOL {
            return Err(Error::InvalidParameter(format!("target norm² = {norm}, expected 1")));
        }
        Ok(t)
    }

    pub fn normalized<I>(modes: usize, n: usize, form: MultivariateForm, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, Complex64)>,
    {
        let mut t = Self::build(modes, n, form, terms)?;
        let norm = t.terms.values().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::AllZero);
        }
        for a in t.terms.values_mut() {
            *a /= norm;
        }
        Ok(t)
    }

    fn build<I>(modes: usize, n: usize, form: MultivariateForm, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, Complex64)>,
    {
        if modes == 0 || n == 0 {
            return Err(Error::InvalidParameter("multivariate target needs modes >= 1 and n >= 1".into()));
        }
        let mut map = BTreeMap::new();
        for (occ, a) in terms {
            if occ.len() != modes {
                return Err(Error::ModeMismatch { left: occ.len(), right: modes });
            }
            if !(a.re.is_finite() && a.im.is_finite()) {
                return Err(Error::InvalidParameter("non-finite amplitude".into()));
            }
            let total: usize = occ.iter().sum();
            let ok = match form {
                MultivariateForm::Exact => total == n,
                MultivariateForm::UpTo => total <= n,
            };
            if !ok {
                return Err(Error::InvalidParameter(format!("term {occ:?} does not fit n = {n} ({form:?})")));
            }
            let o = Occupation::new(&occ)?;
            if map.insert(o, a).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate occupation {occ:?}")));
            }
        }
        map.retain(|_, a| a.norm_sqr() > 0.0);
        Ok(MultivariateTarget { modes, n, form, terms: map })
    }

    /// Reads a state vector; every term must fit `n` under `form`.
    pub fn from_state_vector(state: &StateVector, n: usize, form: MultivariateForm) -> Result<Self> {
        Self::normalized(state.modes(), n, form, state.iter().map(|(o, a)| (o.to_vec(), *a)))
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn form(&self) -> MultivariateForm {
        self.form
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Occupation, &Complex64)> {
        self.terms.iter()
    }

    pub fn to_state_vector(&self) -> StateVector {
        StateVector::from_terms(self.modes, self.n, self.terms.iter().map(|(o, a)| (o.to_vec(), *a)))
            .expect("terms fit their own cutoff")
    }

    /// Number of coefficients in each linear form.
    pub fn variables(&self) -> usize {
        match self.form {
            MultivariateForm::Exact => self.modes,
            MultivariateForm::UpTo => self.modes + 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("target serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Expands `∏_j L_j` on the vacuum. For the up-to form the last entry of
/// each linear form is its constant term.
pub fn expand_linear_forms(forms: &[Vec<Complex64>], modes: usize, form: MultivariateForm) -> Result<StateVector> {
    let vars = match form {
        MultivariateForm::Exact => modes,
        MultivariateForm::UpTo => modes + 1,
    };
    let mut s = StateVector::vacuum(modes, forms.len())?;
    for l in forms {
        if l.len() != vars {
            return Err(Error::ModeMismatch { left: l.len(), right: vars });
        }
        let mut next = match form {
            MultivariateForm::Exact => StateVector::zero(modes, forms.len())?,
            MultivariateForm::UpTo => s.scaled(l[modes]),
        };
        for (i, &d) in l.iter().take(modes).enumerate() {
            if d.norm_sqr() > 0.0 {
                next = next.add(&s.apply_creation(i)?.scaled(d))?;
            }
        }
        s = next;
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub starts: usize,
    pub max_iterations: usize,
    pub polish_iterations: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { starts: 32, max_iterations: 2000, polish_iterations: 100, seed: 0x51_6f_72_67 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Best `Σ |coeff(∏ L_j) - coeff(P)|²` over all starts.
    pub residual: f64,
    /// Best linear forms, `n` rows of `variables()` coefficients.
    pub factors: Vec<Vec<Complex64>>,
    pub best_start: usize,
    pub start_residuals: Vec<f64>,
}

impl FitResult {
    pub fn certified(&self) -> bool {
        self.residual <= CERTIFY_RESIDUAL
    }
}

/// Monomial bookkeeping for homogeneous polynomials of degree `<= n` in
/// `vars` variables.
struct Layout {
    vars: usize,
    n: usize,
    sizes: Vec<usize>,
    /// `up[d][idx][i]`: index in degree `d+1` of monomial `idx` times `x_i`.
    up: Vec<Vec<Vec<usize>>>,
}

impl Layout {
    fn new(vars: usize, n: usize) -> (Self, Vec<Occupation>) {
        let bases: Vec<Vec<Occupation>> = (0..=n).map(|d| fixed_total_basis(vars, d)).collect();
        let index: Vec<BTreeMap<&Occupation, usize>> =
            bases.iter().map(|b| b.iter().enumerate().map(|(i, o)| (o, i)).collect()).collect();
        let up = (0..n)
            .map(|d| {
                bases[d]
                    .iter()
                    .map(|o| (0..vars).map(|i| index[d + 1][&o.with(i, o.get(i) + 1)]).collect())
                    .collect()
            })
            .collect();
        let sizes = bases.iter().map(Vec::len).collect();
        let top = bases.into_iter().last().expect("degree n basis");
        (Layout { vars, n, sizes, up }, top)
    }

    fn product(&self, forms: &[Vec<Complex64>], skip: Option<usize>) -> Vec<Complex64> {
        let mut p = vec![c(1.0, 0.0)];
        let mut d = 0;
        for (j, l) in forms.iter().enumerate() {
            if Some(j) == skip {
                continue;
            }
            let mut next = vec![c(0.0, 0.0); self.sizes[d + 1]];
            for (b, &a) in p.iter().enumerate() {
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for (i, &li) in l.iter().enumerate() {
                    next[self.up[d][b][i]] += a * li;
                }
            }
            p = next;
            d += 1;
        }
        p
    }
}

struct Problem {
    layout: Layout,
    target: Vec<Complex64>,
}

impl Problem {
    fn new(t: &MultivariateTarget) -> Self {
        let vars = t.variables();
        let (layout, top) = Layout::new(vars, t.n);
        let target = top
            .iter()
            .map(|o| {
                let occ: Vec<usize> = (0..t.modes).map(|i| o.get(i)).collect();
                let weight: f64 = occ.iter().map(|&k| factorial(k)).product::<f64>().sqrt();
                let key = Occupation::new(&occ).expect("fits");
                t.terms.get(&key).map_or(c(0.0, 0.0), |a| a / weight)
            })
            .collect();
        Problem { layout, target }
    }

    fn error(&self, forms: &[Vec<Complex64>]) -> (f64, Vec<Complex64>) {
        let p = self.layout.product(forms, None);
        let e: Vec<Complex64> = p.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        (e.iter().map(|z| z.norm_sqr()).sum(), e)
    }

    /// `∂R/∂conj(d_ji)` for `R = ‖P - T‖²`, plus the partial products.
    fn gradient(&self, forms: &[Vec<Complex64>], e: &[Complex64]) -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
        let n = self.layout.n;
        let qs: Vec<Vec<Complex64>> = (0..n).map(|j| self.layout.product(forms, Some(j))).collect();
        let up = &self.layout.up[n - 1];
        let g = qs
            .iter()
            .map(|q| {
                (0..self.layout.vars)
                    .map(|i| q.iter().enumerate().map(|(b, qb)| qb.conj() * e[up[b][i]]).sum())
                    .collect()
            })
            .collect();
        (g, qs)
    }

    fn descend(&self, mut forms: Vec<Vec<Complex64>>, iterations: usize) -> (f64, Vec<Vec<Complex64>>) {
        let (mut r, mut e) = self.error(&forms);
        let mut step = 1.0;
        for _ in 0..iterations {
            if r < TINY_RESIDUAL {
                break;
            }
            let (g, _) = self.gradient(&forms, &e);
            let gg: f64 = g.iter().flatten().map(|z| z.norm_sqr()).sum();
            if gg < 1e-300 {
                break;
            }
            let mut accepted = false;
            while step > 1e-20 {
                let trial: Vec<Vec<Complex64>> =
                    forms.iter().zip(&g).map(|(l, gl)| l.iter().zip(gl).map(|(a, b)| a - step * b).collect()).collect();
                let (rt, et) = self.error(&trial);
                if rt <= r - ARMIJO * step * gg {
                    forms = trial;
                    r = rt;
                    e = et;
                    step *= 2.0;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (r, forms)
    }

    /// Levenberg–Marquardt on the complex residual vector; the product is
    /// holomorphic in the coefficients, so `J^H J` is the exact
    /// Gauss–Newton matrix.
    fn polish(&self, mut forms: Vec<Vec<Complex64>>, iterations: usize) -> (f64, Vec<Vec<Complex64>>) {
        let n = self.layout.n;
        let vars = self.layout.vars;
        let dim = n * vars;
        let (mut r, mut e) = self.error(&forms);
        let mut lambda = 1e-3;
        for _ in 0..iterations {
            if r < TINY_RESIDUAL || lambda > 1e16 {
                break;
            }
            let (_, qs) = self.gradient(&forms, &e);
            let up = &self.layout.up[n - 1];
            let mut jac = DMatrix::<Complex64>::zeros(e.len(), dim);
            for (j, q) in qs.iter().enumerate() {
                for (b, &qb) in q.iter().enumerate() {
                    for i in 0..vars {
                        jac[(up[b][i], j * vars + i)] += qb;
                    }
                }
            }
            let jh = jac.adjoint();
            let a = &jh * &jac;
            let rhs = -(&jh * DVector::from_column_slice(&e));
            let diag_max = (0..dim).map(|i| a[(i, i)].re).fold(0.0, f64::max).max(1e-300);
            loop {
                let mut damped = a.clone();
                for i in 0..dim {
                    damped[(i, i)] += c(lambda * diag_max, 0.0);
                }
                let Some(delta) = damped.lu().solve(&rhs) else {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break;
                    }
                    continue;
                };
                let trial: Vec<Vec<Complex64>> = forms
                    .iter()
                    .enumerate()
                    .map(|(j, l)| l.iter().enumerate().map(|(i, &x)| x + delta[j * vars + i]).collect())
                    .collect();
                let (rt, et) = self.error(&trial);
                if rt < r {
                    forms = trial;
                    r = rt;
                    e = et;
                    lambda = (lambda / 3.0).max(1e-15);
                    break;
                }
                lambda *= 4.0;
                if lambda > 1e16 {
                    break;
                }
            }
        }
        (r, forms)
    }

    fn start(&self, seed: u64, index: usize) -> Vec<Vec<Complex64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let vars = self.layout.vars;
        let spread = 1.0 / (vars as f64).sqrt();
        let mut forms: Vec<Vec<Complex64>> = (0..self.layout.n)
            .map(|_| {
                (0..vars)
                    .map(|_| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        c(re, im) * spread
                    })
                    .collect()
            })
            .collect();
        let p_norm = self.layout.product(&forms, None).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let t_norm = self.target.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if p_norm > 0.0 {
            let k = (t_norm / p_norm).powf(1.0 / self.layout.n as f64);
            forms.iter_mut().flatten().for_each(|z| *z *= k);
        }
        forms
    }
}

/// Multi-start fit: each start runs backtracking gradient descent, then a
/// Levenberg–Marquardt polish. Starts run in parallel with per-start RNG
/// streams, so the result does not depend on the worker count.
pub fn multivariate_factor_fit(target: &MultivariateTarget, config: &FitConfig) -> FitResult {
    let problem = Problem::new(target);
    let runs: Vec<(f64, Vec<Vec<Complex64>>)> = (0..config.starts.max(1))
        .into_par_iter()
        .map(|s| {
            let forms = problem.start(config.seed, s);
            let (_, forms) = problem.descend(forms, config.max_iterations);
            problem.polish(forms, config.polish_iterations)
        })
        .collect();
    let best_start = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one start");
    FitResult {
        residual: runs[best_start].0,
        factors: runs[best_start].1.clone(),
        best_start,
        start_residuals: runs.iter().map(|r| r.0).collect(),
    }
}
