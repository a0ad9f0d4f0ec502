//! Closed-form scalar linear-quadratic solutions, used as test oracles.
//!
//! For `dX = (aX + bu) dt + σ dW` with cost `qx² + ru²`, the discounted value
//! is `V(x) = Px² + m` with feedback `u = κx`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiSolution {
    pub p: f64,
    pub m: f64,
    pub kappa: f64,
}

/// Nonnegative root of `(b²/r) P² + (α − 2a) P − q = 0`, with `m = σ²P/α`
/// and `κ = −bP/r`.
pub fn riccati_oracle(a: f64, b: f64, q: f64, r: f64, alpha: f64, sigma: f64) -> Result<RiccatiSolution> {
    if !(r > 0.0 && q >= 0.0 && alpha > 0.0) || ![a, b, q, r, alpha, sigma].iter().all(|v| v.is_finite()) {
        return Err(Error::NoPositiveRoot);
    }
    let p = positive_root(b * b / r, alpha - 2.0 * a, q)?;
    Ok(RiccatiSolution { p, m: sigma * sigma * p / alpha, kappa: -b * p / r })
}

/// Average-cost version: `(b²/r) P² − 2a P − q = 0`, `ρ = σ²P`.
pub fn riccati_ergodic(a: f64, b: f64, q: f64, r: f64, sigma: f64) -> Result<(f64, f64, f64)> {
    if !(r > 0.0 && q >= 0.0) {
        return Err(Error::NoPositiveRoot);
    }
    let p = positive_root(b * b / r, -2.0 * a, q)?;
    Ok((p, sigma * sigma * p, -b * p / r))
}

/// Nonnegative root of `A P² + B P − q` with `A ≥ 0`, `q ≥ 0`, in the
/// cancellation-free form.
fn positive_root(qa: f64, qb: f64, q: f64) -> Result<f64> {
    if q == 0.0 {
        return Ok(0.0);
    }
    if qa == 0.0 {
        return if qb > 0.0 { Ok(q / qb) } else { Err(Error::NoPositiveRoot) };
    }
    let disc = (qb * qb + 4.0 * qa * q).sqrt();
    Ok(if qb > 0.0 { 2.0 * q / (qb + disc) } else { (disc - qb) / (2.0 * qa) })
}
