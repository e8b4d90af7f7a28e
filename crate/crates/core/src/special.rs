//! Modified Bessel functions of the second kind for integer order.
//!
//! `K_0` and `K_1` come from the integral representation
//! `K_ν(x) = ∫₀^∞ exp(−x cosh t) cosh(ν t) dt`, evaluated in the scaled form
//! `e^{−x} ∫₀^∞ exp(−x (cosh t − 1)) cosh(ν t) dt` by the trapezoidal rule.
//! The integrand is analytic and decays double-exponentially, so the rule
//! converges geometrically in the step size. Higher orders use the upward
//! recurrence `K_{n+1}(x) = K_{n−1}(x) + (2n/x) K_n(x)`, which is stable for
//! this (dominant) solution.

use crate::error::{Error, Result};

/// Integrand cut-off: stop once `x (cosh t − 1)` exceeds this.
const EXPONENT_CUTOFF: f64 = 745.0;

fn scaled_integral(order: f64, x: f64) -> f64 {
    let h = 0.1_f64.min(0.1 / x.sqrt());
    let mut sum = 0.5; // t = 0 contributes exp(0)·cosh(0) with trapezoid weight 1/2
    let mut i = 1usize;
    loop {
        let t = i as f64 * h;
        let exponent = x * (t.cosh() - 1.0);
        if exponent > EXPONENT_CUTOFF + order * t {
            break;
        }
        let term = (-exponent).exp() * (order * t).cosh();
        sum += term;
        if term < 1e-18 * sum && exponent > 50.0 {
            break;
        }
        i += 1;
    }
    sum * h
}

/// `K_0(x)` and `K_1(x)` for `x > 0`.
pub fn bessel_k01(x: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bessel K needs a positive finite argument, got {x}"
        )));
    }
    let scale = (-x).exp();
    Ok((scale * scaled_integral(0.0, x), scale * scaled_integral(1.0, x)))
}

/// `K_n(x)` for integer `n ≥ 0` and `x > 0`.
pub fn bessel_k(order: u32, x: f64) -> Result<f64> {
    let (k0, k1) = bessel_k01(x)?;
    if order == 0 {
        return Ok(k0);
    }
    let (mut prev, mut cur) = (k0, k1);
    for n in 1..order {
        let next = prev + (2.0 * n as f64 / x) * cur;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// `n!` as a float (exact for the small orders used by the kernels).
pub fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}
