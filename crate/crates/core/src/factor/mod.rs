//! Target states to beam-splitter recipes.
//!
//! A two-mode `n`-photon target `Σ_k c_k |n-k, k⟩` equals
//! `P(a₁†, a₂†)|00⟩` with `P(x, y) = Σ_k c_k / sqrt((n-k)! k!) x^(n-k) y^k`.
//! Dehomogenizing with `z = x/y` gives a univariate polynomial whose roots
//! `ρ` turn into linear factors `x - ρ y`, i.e. normalized splitter settings
//! `t = 1/sqrt(1+|ρ|²)`, `r = -ρ t`. Leading zero coefficients (targets
//! with no weight on `|n,0⟩`) contribute pure mode-2 factors `(0, 1)`.

mod multivariate;
pub mod roots;

pub use multivariate::{
    expand_linear_forms, multivariate_factor_fit, FitConfig, FitResult, MultivariateForm, MultivariateTarget,
};
pub use roots::{find_roots, Roots};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::StateVector;
use crate::math::factorial;
use crate::serde_complex;

/// Normalization tolerance for targets.
pub const TARGET_NORM_TOL: f64 = 1e-10;
/// Normalization tolerance for each factor.
pub const FACTOR_NORM_TOL: f64 = 1e-12;
/// Largest allowed `‖scale·expand(factors) - target‖`.
pub const ROUNDTRIP_TOL: f64 = 1e-9;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn finite(z: Complex64) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// Two-mode state with exactly `n` photons; `coeffs[k]` multiplies
/// `|n-k, k⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TargetWire", into = "TargetWire")]
pub struct TargetState {
    coeffs: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct TargetWire {
    n: usize,
    #[serde(with = "serde_complex::vec")]
    coeffs: Vec<Complex64>,
}

impl TryFrom<TargetWire> for TargetState {
    type Error = Error;

    fn try_from(w: TargetWire) -> Result<Self> {
        if w.coeffs.len() != w.n + 1 {
            return Err(Error::InvalidParameter(format!(
                "target with n = {} needs {} coefficients, got {}",
                w.n,
                w.n + 1,
                w.coeffs.len()
            )));
        }
        TargetState::new(w.coeffs)
    }
}

impl From<TargetState> for TargetWire {
    fn from(t: TargetState) -> Self {
        TargetWire { n: t.n(), coeffs: t.coeffs }
    }
}

impl TargetState {
    /// Requires `Σ|c_k|² = 1` within [`TARGET_NORM_TOL`].
    pub fn new(coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidParameter("target needs at least one coefficient".into()));
        }
        if !coeffs.iter().all(|&z| finite(z)) {
            return Err(Error::InvalidParameter("non-finite target coefficient".into()));
        }
        let norm: f64 = coeffs.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > TARGET_NORM_TOL {
            return Err(Error::InvalidParameter(format!("target norm² = {norm}, expected 1")));
        }
        Ok(TargetState { coeffs })
    }

    /// Normalizes `coeffs` first.
    pub fn normalized(coeffs: Vec<Complex64>) -> Result<Self> {
        if !coeffs.iter().all(|&z| finite(z)) {
            return Err(Error::InvalidParameter("non-finite target coefficient".into()));
        }
        let norm = coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::AllZero);
        }
        TargetState::new(coeffs.into_iter().map(|z| z / norm).collect())
    }

    /// The Fock state `|n-k, k⟩`.
    pub fn basis(n: usize, k: usize) -> Result<Self> {
        if k > n {
            return Err(Error::InvalidParameter(format!("k = {k} exceeds n = {n}")));
        }
        let mut v = vec![c(0.0, 0.0); n + 1];
        v[k] = c(1.0, 0.0);
        TargetState::new(v)
    }

    pub fn n(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// `⟨self|other⟩`.
    pub fn overlap(&self, other: &TargetState) -> Result<Complex64> {
        if self.n() != other.n() {
            return Err(Error::InvalidParameter(format!(
                "photon numbers differ: {} vs {}",
                self.n(),
                other.n()
            )));
        }
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn fidelity(&self, other: &TargetState) -> Result<f64> {
        Ok(self.overlap(other)?.norm_sqr())
    }

    pub fn to_state_vector(&self) -> StateVector {
        let n = self.n();
        StateVector::from_terms(2, n, self.coeffs.iter().enumerate().map(|(k, &a)| (vec![n - k, k], a)))
            .expect("target terms fit their own cutoff")
    }

    /// Reads a two-mode state whose terms all carry the same photon number.
    pub fn from_state_vector(state: &StateVector) -> Result<Self> {
        if state.modes() != 2 {
            return Err(Error::ModeMismatch { left: state.modes(), right: 2 });
        }
        let mut iter = state.iter();
        let n = iter.next().ok_or(Error::AllZero)?.0.total();
        let mut coeffs = vec![c(0.0, 0.0); n + 1];
        for (o, a) in state.iter() {
            if o.total() != n {
                return Err(Error::InvalidParameter("state mixes different photon numbers".into()));
            }
            coeffs[o.get(1)] = *a;
        }
        TargetState::normalized(coeffs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("target serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One linear factor `t a₁† + r a₂†` with `|t|² + |r|² = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    #[serde(with = "serde_complex")]
    pub t: Complex64,
    #[serde(with = "serde_complex")]
    pub r: Complex64,
}

impl Factor {
    pub fn new(t: Complex64, r: Complex64) -> Result<Self> {
        if !(finite(t) && finite(r)) {
            return Err(Error::InvalidParameter("non-finite factor coefficient".into()));
        }
        let s = t.norm_sqr() + r.norm_sqr();
        if (s - 1.0).abs() > FACTOR_NORM_TOL {
            return Err(Error::InvalidParameter(format!("factor |t|²+|r|² = {s}, expected 1")));
        }
        Ok(Factor { t, r })
    }

    /// Factor proportional to `x - ρ y`.
    pub fn from_root(rho: Complex64) -> Self {
        let t = 1.0 / (1.0 + rho.norm_sqr()).sqrt();
        Factor { t: c(t, 0.0), r: -rho * t }
    }

    /// Pure mode-2 factor `a₂†`.
    pub fn mode2() -> Self {
        Factor { t: c(0.0, 0.0), r: c(1.0, 0.0) }
    }

    /// Splitting ratio `|t|²`.
    pub fn transmissivity(&self) -> f64 {
        self.t.norm_sqr()
    }

    /// Relative phase `arg(r) - arg(t)`; zero when either vanishes.
    pub fn relative_phase(&self) -> f64 {
        if self.t.norm_sqr() == 0.0 || self.r.norm_sqr() == 0.0 {
            0.0
        } else {
            (self.r / self.t).arg()
        }
    }
}

/// Ordered list of factors plus the global constant relating their product
/// to the target: `target = scale · ∏(t_k a₁† + r_k a₂†)|00⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanWire", into = "PlanWire")]
pub struct FactorPlan {
    scale: Complex64,
    factors: Vec<Factor>,
}

#[derive(Serialize, Deserialize)]
struct PlanWire {
    #[serde(with = "serde_complex")]
    scale: Complex64,
    factors: Vec<Factor>,
}

impl TryFrom<PlanWire> for FactorPlan {
    type Error = Error;

    fn try_from(w: PlanWire) -> Result<Self> {
        FactorPlan::new(w.scale, w.factors)
    }
}

impl From<FactorPlan> for PlanWire {
    fn from(p: FactorPlan) -> Self {
        PlanWire { scale: p.scale, factors: p.factors }
    }
}

impl FactorPlan {
    pub fn new(scale: Complex64, factors: Vec<Factor>) -> Result<Self> {
        if !finite(scale) || scale.norm_sqr() == 0.0 {
            return Err(Error::InvalidParameter("plan scale must be finite and nonzero".into()));
        }
        if factors.is_empty() {
            return Err(Error::InvalidParameter("plan needs at least one factor".into()));
        }
        for f in &factors {
            Factor::new(f.t, f.r)?;
        }
        Ok(FactorPlan { scale, factors })
    }

    /// Plan whose scale is fitted to `target`; fails with
    /// [`Error::RoundtripResidual`] when the factors do not reproduce it.
    pub fn fitted(factors: Vec<Factor>, target: &TargetState) -> Result<Self> {
        if factors.len() != target.n() {
            return Err(Error::InvalidParameter(format!(
                "{} factors cannot produce an n = {} target",
                factors.len(),
                target.n()
            )));
        }
        let raw = expand_factors(&factors);
        let raw_norm: f64 = raw.iter().map(|z| z.norm_sqr()).sum();
        let proj: Complex64 = raw.iter().zip(target.coeffs()).map(|(a, b)| a.conj() * b).sum();
        let scale = proj / raw_norm;
        let residual = raw
            .iter()
            .zip(target.coeffs())
            .map(|(a, b)| (scale * a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if !(residual <= ROUNDTRIP_TOL) {
            return Err(Error::RoundtripResidual(residual));
        }
        FactorPlan::new(scale, factors)
    }

    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn scale(&self) -> Complex64 {
        self.scale
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Coefficients of `∏(t_k a₁† + r_k a₂†)|00⟩` on `|n-k, k⟩`, unnormalized.
/// Expanded by repeated creation-operator application.
pub fn expand_factors(factors: &[Factor]) -> Vec<Complex64> {
    let n = factors.len();
    let mut s = StateVector::vacuum(2, n).expect("two-mode vacuum");
    for f in factors {
        let x = s.apply_creation(0).expect("mode 0").scaled(f.t);
        let y = s.apply_creation(1).expect("mode 1").scaled(f.r);
        s = x.add(&y).expect("same shape");
    }
    (0..=n).map(|k| s.amplitude(&[n - k, k])).collect()
}

/// `scale · ∏(t_k a₁† + r_k a₂†)|00⟩`, normalized.
pub fn expand_plan(plan: &FactorPlan) -> TargetState {
    let raw: Vec<Complex64> = expand_factors(&plan.factors).into_iter().map(|z| z * plan.scale).collect();
    TargetState::normalized(raw).expect("normalized factors never expand to zero")
}

/// Ascending-power polynomial: entry `n-k` is `c_k / sqrt((n-k)! k!)`.
pub fn build_polynomial(target: &TargetState) -> Vec<Complex64> {
    let n = target.n();
    let mut poly = vec![c(0.0, 0.0); n + 1];
    for (k, &ck) in target.coeffs().iter().enumerate() {
        poly[n - k] = ck / (factorial(n - k) * factorial(k)).sqrt();
    }
    poly
}

/// Turns roots into a canonical plan: factors sorted by `(Re ρ, Im ρ)`,
/// deficit factors `(0, 1)` last.
pub fn roots_to_plan(roots: &Roots, target: &TargetState) -> Result<FactorPlan> {
    if roots.roots.len() + roots.degree_deficit != target.n() {
        return Err(Error::InvalidParameter(format!(
            "{} roots + {} deficit do not match n = {}",
            roots.roots.len(),
            roots.degree_deficit,
            target.n()
        )));
    }
    let mut sorted = roots.roots.clone();
    sorted.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let mut factors: Vec<Factor> = sorted.into_iter().map(Factor::from_root).collect();
    factors.extend(std::iter::repeat(Factor::mode2()).take(roots.degree_deficit));
    FactorPlan::fitted(factors, target)
}

/// Full pipeline: polynomial, roots, plan.
pub fn design(target: &TargetState) -> Result<FactorPlan> {
    let poly = build_polynomial(target);
    let roots = find_roots(&poly)?;
    roots_to_plan(&roots, target)
}

/// `(|N0⟩ + |0N⟩)/sqrt 2`.
pub fn noon_target(n: usize) -> Result<TargetState> {
    if n == 0 {
        return Err(Error::InvalidParameter("NOON state needs N >= 1".into()));
    }
    let mut v = vec![c(0.0, 0.0); n + 1];
    v[0] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    v[n] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    TargetState::new(v)
}

/// NOON plan from the roots of `z^N + 1`: factor `k` has `t = 1/sqrt 2`,
/// `r = -e^{iπ(2k+1)/N}/sqrt 2`.
pub fn noon_plan(n: usize) -> Result<FactorPlan> {
    let target = noon_target(n)?;
    let factors = (0..n)
        .map(|k| {
            let rho = Complex64::from_polar(1.0, std::f64::consts::PI * (2 * k + 1) as f64 / n as f64);
            Factor::from_root(rho)
        })
        .collect();
    FactorPlan::fitted(factors, &target)
}

fn check_unit(amps: &[Complex64]) -> Result<()> {
    if !amps.iter().all(|&z| finite(z)) {
        return Err(Error::InvalidParameter("non-finite amplitude".into()));
    }
    let s: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
    if (s - 1.0).abs() > TARGET_NORM_TOL {
        return Err(Error::InvalidParameter(format!("amplitudes have norm² {s}, expected 1")));
    }
    Ok(())
}

/// `α (|40⟩ + |04⟩)/sqrt 2 + β |22⟩`.
pub fn loss_code_target(alpha: Complex64, beta: Complex64) -> Result<TargetState> {
    check_unit(&[alpha, beta])?;
    let a = alpha * std::f64::consts::FRAC_1_SQRT_2;
    TargetState::new(vec![a, c(0.0, 0.0), beta, c(0.0, 0.0), a])
}

/// The two values `s± = -sqrt3 β/α ± sqrt(3β²/α² - 1)`; the loss-code
/// polynomial is `(z² - s₊)(z² - s₋)` up to scale.
pub fn loss_code_roots_squared(alpha: Complex64, beta: Complex64) -> (Complex64, Complex64) {
    let u = beta / alpha;
    let root = (3.0 * u * u - 1.0).sqrt();
    let base = -(3f64.sqrt()) * u;
    (base + root, base - root)
}

/// Closed-form loss-code plan with roots `±sqrt(s±)`, in the order
/// `sqrt s₊, sqrt s₋, -sqrt s₊, -sqrt s₋`. Requires both amplitudes nonzero;
/// use [`design`] otherwise.
pub fn loss_code_plan(alpha: Complex64, beta: Complex64) -> Result<FactorPlan> {
    let target = loss_code_target(alpha, beta)?;
    if alpha.norm_sqr() == 0.0 {
        return Err(Error::ZeroAmplitude("alpha"));
    }
    if beta.norm_sqr() == 0.0 {
        return Err(Error::ZeroAmplitude("beta"));
    }
    let (sp, sm) = loss_code_roots_squared(alpha, beta);
    let (rp, rm) = (sp.sqrt(), sm.sqrt());
    let factors = [rp, rm, -rp, -rm].into_iter().map(Factor::from_root).collect();
    FactorPlan::fitted(factors, &target)
}

/// `α|20⟩ + β|02⟩ + γ|11⟩`.
pub fn two_photon_target(alpha: Complex64, beta: Complex64, gamma: Complex64) -> Result<TargetState> {
    check_unit(&[alpha, beta, gamma])?;
    TargetState::new(vec![alpha, gamma, beta])
}

/// Closed-form plan for `α|20⟩ + β|02⟩ + γ|11⟩` with roots
/// `ρ± = -γ/(sqrt2 α) ± sqrt(γ²/(2α²) - β/α)` (principal branch), `ρ₊` first.
pub fn general_two_photon_plan(alpha: Complex64, beta: Complex64, gamma: Complex64) -> Result<FactorPlan> {
    let target = two_photon_target(alpha, beta, gamma)?;
    if alpha.norm_sqr() == 0.0 {
        return Err(Error::ZeroAmplitude("alpha"));
    }
    let g = gamma / (std::f64::consts::SQRT_2 * alpha);
    let root = (g * g - beta / alpha).sqrt();
    let factors = vec![Factor::from_root(-g + root), Factor::from_root(-g - root)];
    FactorPlan::fitted(factors, &target)
}
