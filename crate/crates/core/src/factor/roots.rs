//! Roots of complex polynomials stored in ascending-power order
//! (`poly[i]` is the coefficient of `z^i`).

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Iteration budget for the simultaneous root iteration.
pub const MAX_ITERATIONS: usize = 500;

const RESIDUAL_REL: f64 = 1e-12;
const ROUNDING_SLACK: f64 = 64.0 * f64::EPSILON;
const POLISH_STEPS: usize = 3;

/// Roots of a polynomial together with the number of leading (highest
/// power) coefficients that were zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Roots {
    pub roots: Vec<Complex64>,
    pub degree_deficit: usize,
}

pub fn eval(poly: &[Complex64], z: Complex64) -> Complex64 {
    poly.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

fn eval_with_derivative(poly: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in poly.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// `Σ |c_i| |z|^i`, the scale against which rounding in `eval` is measured.
pub fn eval_scale(poly: &[Complex64], z: Complex64) -> f64 {
    let r = z.norm();
    poly.iter().rev().fold(0.0, |acc, c| acc * r + c.norm())
}

fn max_abs(poly: &[Complex64]) -> f64 {
    poly.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Residual target at `z`: the requested relative level, relaxed to the
/// rounding floor of evaluating the polynomial at `z`.
fn tolerance(poly: &[Complex64], scale: f64, z: Complex64) -> f64 {
    (RESIDUAL_REL * scale).max(ROUNDING_SLACK * eval_scale(poly, z))
}

/// Finds all roots with multiplicity.
///
/// Leading zero coefficients are stripped and counted in
/// `degree_deficit`; trailing zero coefficients give exact zero roots.
/// Degrees one and two use closed forms, higher degrees use the
/// Aberth–Ehrlich simultaneous iteration followed by a Newton polish.
pub fn find_roots(poly: &[Complex64]) -> Result<Roots> {
    if poly.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(Error::InvalidParameter("non-finite polynomial coefficient".into()));
    }
    let top = poly.iter().rposition(|c| c.norm_sqr() > 0.0).ok_or(Error::AllZero)?;
    let degree_deficit = poly.len() - 1 - top;
    let trimmed = &poly[..=top];
    let zeros = trimmed.iter().position(|c| c.norm_sqr() > 0.0).unwrap_or(0);
    let core = &trimmed[zeros..];

    let mut roots = vec![Complex64::new(0.0, 0.0); zeros];
    roots.extend(match core.len() - 1 {
        0 => Vec::new(),
        1 => vec![-core[0] / core[1]],
        2 => quadratic(core[2], core[1], core[0]),
        _ => aberth(core)?,
    });
    Ok(Roots { roots, degree_deficit })
}

/// Roots of `a z² + b z + c` with `a, c != 0`, principal square-root
/// branch, arranged to avoid cancellation.
fn quadratic(a: Complex64, b: Complex64, c: Complex64) -> Vec<Complex64> {
    let disc = (b * b - 4.0 * a * c).sqrt();
    let plus = b + disc;
    let minus = b - disc;
    let q = if plus.norm() >= minus.norm() { -0.5 * plus } else { -0.5 * minus };
    vec![q / a, c / q]
}

/// Taylor shift: coefficients of `p(z + c)`.
fn shifted(poly: &[Complex64], c: Complex64) -> Vec<Complex64> {
    let mut b = poly.to_vec();
    let n = b.len();
    for i in 0..n {
        for j in (i..n - 1).rev() {
            let next = b[j + 1];
            b[j] += c * next;
        }
    }
    b
}

fn aberth(poly: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = poly.len() - 1;
    let lead = poly[n];
    let monic: Vec<Complex64> = poly.iter().map(|c| c / lead).collect();
    let scale = max_abs(&monic);

    // Start on a circle around the root centroid whose radius bounds the
    // shifted roots (Fujiwara), slightly rotated to avoid symmetric stalls.
    let centre = -monic[n - 1] / n as f64;
    let s = shifted(&monic, centre);
    let radius = (1..=n)
        .map(|k| {
            let c = s[n - k].norm();
            if k == n { (c / 2.0).powf(1.0 / k as f64) } else { c.powf(1.0 / k as f64) }
        })
        .fold(0.0, f64::max)
        * 2.0;
    let radius = if radius > 0.0 { radius } else { 1e-3 * (1.0 + centre.norm()) };
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / n as f64 + 0.4;
            let r = radius * (1.0 + 0.05 * (k as f64 / n as f64));
            centre + Complex64::from_polar(r, angle)
        })
        .collect();

    let converged = |z: &[Complex64]| z.iter().all(|&zk| eval(&monic, zk).norm() <= tolerance(&monic, scale, zk));

    let mut iterations = 0;
    while !converged(&z) {
        if iterations == MAX_ITERATIONS {
            let residual = z.iter().map(|&zk| eval(&monic, zk).norm() / scale).fold(0.0, f64::max);
            return Err(Error::NonConvergence { iterations, residual });
        }
        iterations += 1;
        for k in 0..n {
            let (p, dp) = eval_with_derivative(&monic, z[k]);
            if p.norm_sqr() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let sum: Complex64 = (0..n).filter(|&j| j != k).map(|j| (z[k] - z[j]).inv()).sum();
            let w = ratio / (Complex64::new(1.0, 0.0) - ratio * sum);
            if w.re.is_finite() && w.im.is_finite() {
                z[k] -= w;
            }
        }
    }

    for zk in z.iter_mut() {
        let mut best = eval(&monic, *zk).norm();
        for _ in 0..POLISH_STEPS {
            let (p, dp) = eval_with_derivative(&monic, *zk);
            if dp.norm_sqr() == 0.0 {
                break;
            }
            let candidate = *zk - p / dp;
            let r = eval(&monic, candidate).norm();
            if !(r < best) {
                break;
            }
            *zk = candidate;
            best = r;
        }
    }
    Ok(z)
}
