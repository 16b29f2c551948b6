//! Named target states.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::factor::{
    design, general_two_photon_plan, loss_code_plan, loss_code_target, noon_plan, noon_target, two_photon_target,
    FactorPlan, MultivariateForm, MultivariateTarget, TargetState,
};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `(|20⟩ + |11⟩ + |02⟩)/√3`.
pub fn balanced_qutrit() -> TargetState {
    let k = c(1.0 / 3f64.sqrt(), 0.0);
    TargetState::new(vec![k, k, k]).expect("normalized")
}

/// `[√2|20⟩ + (1 + √2 i)|11⟩ + 2i|02⟩]/3`.
pub fn phased_qutrit() -> TargetState {
    let s2 = 2f64.sqrt();
    TargetState::new(vec![c(s2 / 3.0, 0.0), c(1.0 / 3.0, s2 / 3.0), c(0.0, 2.0 / 3.0)]).expect("normalized")
}

/// `(a1† + a2†)(a1† + a3†)(a2† − a3†)|000⟩ / (2√3)`, a three-mode state that
/// factorizes into linear forms.
pub fn three_mode_product() -> MultivariateTarget {
    let k = 1.0 / 6f64.sqrt();
    MultivariateTarget::new(
        3,
        3,
        MultivariateForm::Exact,
        [
            (vec![2, 1, 0], c(k, 0.0)),
            (vec![2, 0, 1], c(-k, 0.0)),
            (vec![1, 2, 0], c(k, 0.0)),
            (vec![1, 0, 2], c(-k, 0.0)),
            (vec![0, 2, 1], c(k, 0.0)),
            (vec![0, 1, 2], c(-k, 0.0)),
        ],
    )
    .expect("normalized")
}

/// A named two-mode target with the plan that prepares it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum Preset {
    Qutrit,
    PhasedQutrit,
    Noon { n: usize },
    LossCode { alpha: Complex64, beta: Complex64 },
    TwoPhoton { alpha: Complex64, beta: Complex64, gamma: Complex64 },
    Basis { n: usize, k: usize },
}

/// Names accepted by [`Preset::parse`] with a one-line description each.
pub const CATALOG: [(&str, &str); 6] = [
    ("qutrit", "(|20> + |11> + |02>)/sqrt3"),
    ("phased-qutrit", "[sqrt2|20> + (1 + sqrt2 i)|11> + 2i|02>]/3"),
    ("noon", "(|N0> + |0N>)/sqrt2, needs N"),
    ("losscode", "alpha|0_L> + beta|1_L> of the four-photon loss code, needs alpha and beta"),
    ("twophoton", "alpha|20> + gamma|11> + beta|02>, needs alpha, beta and gamma"),
    ("basis", "|n-k, k>, needs N and k"),
];

/// Parameters a preset may draw on; unused ones are ignored.
#[derive(Clone, Copy, Debug, Default)]
pub struct PresetParams {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub alpha: Option<Complex64>,
    pub beta: Option<Complex64>,
    pub gamma: Option<Complex64>,
}

impl Preset {
    pub fn parse(name: &str, p: &PresetParams) -> std::result::Result<Self, String> {
        fn need<T>(name: &str, v: Option<T>, what: &str) -> std::result::Result<T, String> {
            v.ok_or_else(|| format!("preset {name} needs {what}"))
        }
        Ok(match name {
            "qutrit" => Preset::Qutrit,
            "phased-qutrit" => Preset::PhasedQutrit,
            "noon" => Preset::Noon { n: need(name, p.n, "N")? },
            "losscode" => Preset::LossCode { alpha: need(name, p.alpha, "alpha")?, beta: need(name, p.beta, "beta")? },
            "twophoton" => Preset::TwoPhoton {
                alpha: need(name, p.alpha, "alpha")?,
                beta: need(name, p.beta, "beta")?,
                gamma: need(name, p.gamma, "gamma")?,
            },
            "basis" => Preset::Basis { n: need(name, p.n, "N")?, k: need(name, p.k, "k")? },
            other => {
                let names: Vec<&str> = CATALOG.iter().map(|(n, _)| *n).collect();
                return Err(format!("unknown preset {other}; expected one of {}", names.join(", ")));
            }
        })
    }

    pub fn target(&self) -> Result<TargetState> {
        match *self {
            Preset::Qutrit => Ok(balanced_qutrit()),
            Preset::PhasedQutrit => Ok(phased_qutrit()),
            Preset::Noon { n } => noon_target(n),
            Preset::LossCode { alpha, beta } => loss_code_target(alpha, beta),
            Preset::TwoPhoton { alpha, beta, gamma } => two_photon_target(alpha, beta, gamma),
            Preset::Basis { n, k } => TargetState::basis(n, k),
        }
    }

    /// The plan from the closed form where one exists, otherwise from root finding.
    pub fn plan(&self) -> Result<FactorPlan> {
        match *self {
            Preset::Noon { n } => noon_plan(n),
            Preset::LossCode { alpha, beta } => loss_code_plan(alpha, beta),
            Preset::TwoPhoton { alpha, beta, gamma } => general_two_photon_plan(alpha, beta, gamma),
            _ => design(&self.target()?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::expand_plan;

    #[test]
    fn every_preset_expands_to_its_target() {
        let s = 0.5f64.sqrt();
        let p = PresetParams {
            n: Some(4),
            k: Some(1),
            alpha: Some(c(0.6, 0.0)),
            beta: Some(c(0.0, 0.8)),
            gamma: Some(c(s, 0.0)),
        };
        for (name, _) in CATALOG {
            let preset = if name == "twophoton" {
                Preset::TwoPhoton { alpha: c(0.5, 0.0), beta: c(0.5, 0.0), gamma: c(s, 0.0) }
            } else {
                Preset::parse(name, &p).unwrap()
            };
            let target = preset.target().unwrap();
            let f = expand_plan(&preset.plan().unwrap()).fidelity(&target).unwrap();
            assert!((f - 1.0).abs() < 1e-10, "{name}: {f}");
        }
    }

    #[test]
    fn parse_errors() {
        assert!(Preset::parse("noon", &PresetParams::default()).unwrap_err().contains("needs N"));
        assert!(Preset::parse("bogus", &PresetParams::default()).unwrap_err().contains("unknown preset"));
    }

    #[test]
    fn fixed_states_are_normalized() {
        let norm = |t: &TargetState| t.coeffs().iter().map(|z| z.norm_sqr()).sum::<f64>();
        assert!((norm(&balanced_qutrit()) - 1.0).abs() < 1e-15);
        assert!((norm(&phased_qutrit()) - 1.0).abs() < 1e-15);
        assert!((three_mode_product().to_state_vector().norm_sqr() - 1.0).abs() < 1e-15);
    }
}
