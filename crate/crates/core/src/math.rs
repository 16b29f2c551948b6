//! Special-function helpers: factorials, binomials, Laguerre polynomials and
//! harmonic-oscillator eigenfunctions.

use std::sync::OnceLock;

const TABLE_LEN: usize = 171;

fn factorial_table() -> &'static [f64; TABLE_LEN] {
    static TABLE: OnceLock<[f64; TABLE_LEN]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [1.0; TABLE_LEN];
        for i in 1..TABLE_LEN {
            t[i] = t[i - 1] * i as f64;
        }
        t
    })
}

/// `n!` as a float; exact up to 22!, finite up to 170!.
pub fn factorial(n: usize) -> f64 {
    if n < TABLE_LEN {
        factorial_table()[n]
    } else {
        f64::INFINITY
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Generalized Laguerre polynomial `L_n^{(alpha)}(x)` by the three-term recurrence.
pub fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - x) * cur - (kf + alpha) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Oscillator eigenfunctions `psi_0(x) ..= psi_max(x)` for the quadrature
/// `x = (a + a^dag)/sqrt(2)`, written into `out`.
pub fn hermite_functions(max: usize, x: f64, out: &mut [f64]) {
    debug_assert!(out.len() > max);
    out[0] = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    if max >= 1 {
        out[1] = std::f64::consts::SQRT_2 * x * out[0];
    }
    for n in 1..max {
        let nf = n as f64;
        out[n + 1] = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorials_and_binomials() {
        assert_eq!(factorial(0), 1.0);
        assert_eq!(factorial(8), 40320.0);
        assert_eq!(binomial(8, 3), 56.0);
        assert_eq!(binomial(3, 5), 0.0);
    }

    #[test]
    fn laguerre_closed_forms() {
        let x = 0.37;
        assert!((laguerre(1, 2.0, x) - (3.0 - x)).abs() < 1e-14);
        let l2 = x * x / 2.0 - (2.0 + 2.0) * x + (2.0 + 1.0) * (2.0 + 2.0) / 2.0;
        assert!((laguerre(2, 2.0, x) - l2).abs() < 1e-13);
    }

    #[test]
    fn hermite_functions_are_orthonormal() {
        let mut buf = [0.0; 6];
        let h = 0.001;
        let mut gram = [[0.0; 6]; 6];
        let mut x = -12.0;
        while x <= 12.0 {
            hermite_functions(5, x, &mut buf);
            for i in 0..6 {
                for j in 0..6 {
                    gram[i][j] += buf[i] * buf[j] * h;
                }
            }
            x += h;
        }
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i][j] - want).abs() < 1e-6, "({i},{j}) {}", gram[i][j]);
            }
        }
    }
}
