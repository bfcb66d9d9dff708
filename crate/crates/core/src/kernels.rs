//! Gaussian heat kernel and the Brownian-bridge kernel.
//!
//! All densities are evaluated as `exp(log_density)` so that arguments far in
//! the tails keep full relative precision until the final exponentiation.

use crate::error::{domain, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Variances below this are treated as a point mass.
const DEGENERATE_VARIANCE: f64 = 1e-300;

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return domain(format!("time must be positive and finite, got {t}"));
    }
    Ok(())
}

fn check_space(x: f64) -> Result<()> {
    if !x.is_finite() {
        return domain(format!("space coordinate must be finite, got {x}"));
    }
    Ok(())
}

/// Log of the heat kernel, `-x²/(2t) - ½ log(2πt)`.
pub fn log_heat_kernel(t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    check_space(x)?;
    Ok(log_heat_kernel_unchecked(t, x))
}

#[inline]
pub(crate) fn log_heat_kernel_unchecked(t: f64, x: f64) -> f64 {
    -x * x / (2.0 * t) - 0.5 * (LN_2PI + t.ln())
}

/// Heat kernel `p_t(x) = (2πt)^{-1/2} exp(-x²/(2t))`.
pub fn heat_kernel(t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    check_space(x)?;
    Ok(p(t, x))
}

/// Unchecked heat kernel for hot loops whose arguments are already validated.
#[inline]
pub(crate) fn p(t: f64, x: f64) -> f64 {
    let e = x * x / (2.0 * t);
    if e < 700.0 {
        // product form: the normalization is then exact to one rounding
        (-e).exp() / (2.0 * std::f64::consts::PI * t).sqrt()
    } else {
        log_heat_kernel_unchecked(t, x).exp()
    }
}

/// Bridge kernel `p_{s(t-s)/t}(y - (s/t) x)`: the density at `y` of a Brownian
/// bridge from 0 at time 0 to `x` at time `t`, observed at time `s`.
pub fn bridge_kernel(s: f64, t: f64, y: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    check_space(x)?;
    check_space(y)?;
    if !(s > 0.0 && s < t) {
        return domain(format!("bridge time s={s} must lie in (0, {t})"));
    }
    let var = s * (t - s) / t;
    let arg = y - (s / t) * x;
    if var < DEGENERATE_VARIANCE {
        // Point mass: only reachable for s within rounding of 0 or t.
        return Ok(if arg == 0.0 { f64::INFINITY } else { 0.0 });
    }
    Ok(p(var, arg))
}

/// The ratio `p_{t-s}(x-y) p_s(y) / p_t(x)`, evaluated through log-densities.
///
/// Analytically equal to [`bridge_kernel`]; exposed for identity checks.
pub fn bridge_ratio(s: f64, t: f64, y: f64, x: f64) -> Result<f64> {
    if !(s > 0.0 && s < t) {
        return domain(format!("bridge time s={s} must lie in (0, {t})"));
    }
    let l = log_heat_kernel(t - s, x - y)? + log_heat_kernel(s, y)? - log_heat_kernel(t, x)?;
    Ok(l.exp())
}
