//! Log-gamma, digamma and trigamma for positive real arguments.
//!
//! Small arguments are shifted up by the recurrences
//! `lnΓ(x) = lnΓ(x+1) − ln x`, `ψ(x) = ψ(x+1) − 1/x`, `ψ₁(x) = ψ₁(x+1) + 1/x²`
//! until `x ≥ 10`, where the Stirling-type asymptotic series converge to well
//! below 1e-13.

use crate::{Error, Result};

const SHIFT_TO: f64 = 10.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn check(x: f64, name: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} requires x > 0, got {x}")))
    }
}

/// ln Γ(x) for x > 0.
pub fn lgamma(x: f64) -> Result<f64> {
    check(x, "lgamma")?;
    let mut x = x;
    let mut acc = 0.0;
    while x < SHIFT_TO {
        acc -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2
                        * (1.0 / 1260.0
                            + inv2
                                * (-1.0 / 1680.0
                                    + inv2 * (1.0 / 1188.0 + inv2 * (-691.0 / 360_360.0 + inv2 / 156.0))))));
    Ok(acc + (x - 0.5) * x.ln() - x + HALF_LN_2PI + series)
}

/// Digamma ψ(x) = d/dx ln Γ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    check(x, "digamma")?;
    let mut x = x;
    let mut acc = 0.0;
    while x < SHIFT_TO {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let series = inv2
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 120.0
                    + inv2
                        * (1.0 / 252.0
                            + inv2 * (-1.0 / 240.0 + inv2 * (1.0 / 132.0 + inv2 * (-691.0 / 32_760.0 + inv2 / 12.0))))));
    Ok(acc + x.ln() - 0.5 / x - series)
}

/// Trigamma ψ₁(x) = d/dx ψ(x) for x > 0.
pub fn trigamma(x: f64) -> Result<f64> {
    check(x, "trigamma")?;
    let mut x = x;
    let mut acc = 0.0;
    while x < SHIFT_TO {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * inv2
        * (1.0 / 6.0
            + inv2
                * (-1.0 / 30.0
                    + inv2
                        * (1.0 / 42.0
                            + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0 + inv2 * (-691.0 / 2730.0 + inv2 * 7.0 / 6.0))))));
    Ok(acc + inv + 0.5 * inv2 + series)
}

/// ln B(a, b) = lnΓ(a) + lnΓ(b) − lnΓ(a+b).
pub fn ln_beta(a: f64, b: f64) -> Result<f64> {
    Ok(lgamma(a)? + lgamma(b)? - lgamma(a + b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn lgamma_at_one_and_two_is_zero() {
        assert!(lgamma(1.0).unwrap().abs() < 1e-14);
        assert!(lgamma(2.0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn lgamma_known_values() {
        assert!((lgamma(0.5).unwrap() - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-13);
        assert!((lgamma(10.0).unwrap() - 362_880f64.ln()).abs() < 1e-12);
        assert!((lgamma(100.0).unwrap() - 359.134_205_369_575_4).abs() < 1e-10);
    }

    #[test]
    fn digamma_at_one_is_minus_euler() {
        assert!((digamma(1.0).unwrap() + EULER_GAMMA).abs() < 1e-13);
        assert!((digamma(0.5).unwrap() + EULER_GAMMA + 2.0 * 2f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn digamma_recurrence() {
        for &x in &[0.1, 0.37, 1.0, 2.5, 7.9, 33.0, 99.0] {
            let d = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((d - 1.0 / x).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn trigamma_known_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0).unwrap() - pi2_6).abs() < 1e-12);
        assert!((trigamma(0.5).unwrap() - 3.0 * pi2_6).abs() < 1e-11);
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        for &x in &[0.3, 1.7, 6.0, 42.0] {
            let h = 1e-5;
            let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
            assert!((fd - trigamma(x).unwrap()).abs() < 1e-6 * trigamma(x).unwrap().max(1.0));
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(lgamma(0.0), Err(Error::Domain(_))));
        assert!(matches!(digamma(-1.0), Err(Error::Domain(_))));
        assert!(matches!(trigamma(f64::NAN), Err(Error::Domain(_))));
    }
}
