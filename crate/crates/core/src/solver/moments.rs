//! Exact second moments of the discrete scheme.
//!
//! With `M_k(h) = E[U_k(x) U_k(x+h)]` and the scheme's independent noise,
//! one step gives
//! `M_{k+1}(h) = Σ_j p_{2σ}(c h - h_j) M_k(h_j) dx + dt M_k(0) p_{2σ}(c h)`,
//! `M_1 ≡ 1`, where `c = t_k/t_{k+1}` and `σ = dt c` as in the stepper. The
//! lattice sums of Gaussian products collapse to single Gaussians up to
//! terms of order `exp(-2π²σ/dx²)`, so this reproduces the scheme's moments
//! without Monte Carlo error and isolates its time-discretization bias.

use super::trapezoid_weights;
use crate::error::{Error, Result};

const KERNEL_SDS: f64 = 8.0;

/// `M(l dx) = E[U(t,x) U(t,x + l dx)]` for the scheme at `(dt, dx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeMoments {
    pub t: f64,
    pub dt: f64,
    pub dx: f64,
    pub m: Vec<f64>,
}

impl SchemeMoments {
    /// `E[U(t,x)²] = E[u(t,x)²]/p_t(x)²`.
    pub fn second_moment(&self) -> f64 {
        self.m[0]
    }

    /// `Cov(U(t,x), U(t,x + l dx))`; beyond the computed range the
    /// covariance is taken as 0.
    pub fn covariance(&self, l: usize) -> f64 {
        self.m.get(l).map_or(0.0, |v| v - 1.0)
    }

    /// Exact variance of the trapezoid average `𝒮_{N,t}` under the scheme.
    pub fn average_variance(&self, n: f64) -> Result<f64> {
        let cells = (n / self.dx).round();
        if !(cells >= 1.0) || (cells * self.dx - n).abs() > 1e-9 * n {
            return Err(Error::Argument(format!(
                "N={n} must be a positive multiple of dx={}",
                self.dx
            )));
        }
        let cells = cells as usize;
        if cells >= self.m.len() {
            return Err(Error::Argument(format!(
                "moments were computed only up to lag {}",
                self.m.len() - 1
            )));
        }
        // Σ_{i,i'} a_i a_{i'} C(|i-i'|) = Σ_l C(|l|) A_l, A_l = Σ_i a_i a_{i+l}
        let a = trapezoid_weights(cells + 1);
        let w = a[1];
        let lag_weight = |l: usize| -> f64 {
            if l == 0 {
                (cells as f64 - 0.5) * w * w
            } else if l < cells {
                (cells - l) as f64 * w * w
            } else {
                0.25 * w * w
            }
        };
        let mut v = self.covariance(0) * lag_weight(0);
        for l in 1..=cells {
            v += 2.0 * self.covariance(l) * lag_weight(l);
        }
        Ok(v)
    }
}

/// Second moments of the scheme at time `t` for lags `0..=h_max`.
pub fn scheme_moments(t: f64, dt: f64, dx: f64, h_max: f64) -> Result<SchemeMoments> {
    if !(dt > 0.0 && dx > 0.0 && h_max >= 0.0 && t >= dt) {
        return Err(Error::Argument(format!(
            "moments need t >= dt > 0, dx > 0, h_max >= 0; got t={t}, dt={dt}, dx={dx}, h_max={h_max}"
        )));
    }
    let steps = (t / dt).round();
    if (steps * dt - t).abs() > 1e-9 * t {
        return Err(Error::Argument(format!("t={t} is not a whole number of steps dt={dt}")));
    }
    let steps = steps as usize;
    let t = steps as f64 * dt;
    let slack = KERNEL_SDS * (2.0 * dt).sqrt() + 2.0 * dx;
    let reach = |k: usize| -> usize {
        let s = k as f64 * dt;
        let spread = KERNEL_SDS * (2.0 * s * (t - s) / t).max(0.0).sqrt() + slack;
        ((s / t * h_max + spread) / dx).ceil() as usize
    };
    let mut cur = vec![1.0; reach(1) + 1];
    let mut next: Vec<f64> = Vec::new();
    for k in 1..steps {
        let c = k as f64 / (k + 1) as f64;
        let var = 2.0 * dt * c;
        let half = (KERNEL_SDS * var.sqrt() / dx).ceil() as i64 + 1;
        let inv2v = 0.5 / var;
        let rho = (-dx * dx / var).exp();
        let norm = dx / (2.0 * std::f64::consts::PI * var).sqrt();
        let m0 = cur[0];
        let at = |j: i64| -> f64 { cur.get(j.unsigned_abs() as usize).copied().unwrap_or(1.0) };
        let top = reach(k + 1);
        next.clear();
        next.reserve(top + 1);
        for l in 0..=top {
            let mu = c * l as f64;
            let jc = mu.round();
            let d0 = (jc - mu) * dx;
            let e0 = (-d0 * d0 * inv2v).exp();
            let r_right = (-(2.0 * d0 * dx + dx * dx) * inv2v).exp();
            let r_left = (-(-2.0 * d0 * dx + dx * dx) * inv2v).exp();
            let jc = jc as i64;
            let mut acc = 0.0;
            let (mut e, mut r) = (e0, r_right);
            for m in 0..=half {
                acc += e * at(jc + m);
                e *= r;
                r *= rho;
            }
            let (mut e, mut r) = (e0, r_left);
            for m in 1..=half {
                e *= r;
                r *= rho;
                acc += e * at(jc - m);
            }
            // noise term dt M_k(0) p_{2σ}(c h)
            let h = mu * dx;
            let noise = dt * m0 * (-h * h * inv2v).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            next.push(norm * acc + noise);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let keep = ((h_max / dx).round() as usize + 1).min(cur.len());
    cur.truncate(keep.max(1));
    Ok(SchemeMoments { t, dt, dx, m: cur })
}
