//! Monte Carlo solution of the parabolic Anderson model with delta initial
//! data, the exactly Gaussian proxy field, renormalization and spatial
//! averages.

mod moments;
mod pam;
mod proxy;

pub use moments::{scheme_moments, SchemeMoments};
pub use pam::{
    pam_average_paths, pam_point_values, solve_pam, solve_renormalized, solve_renormalized_batch, SolveStats, Window,
    LANES,
};
pub use proxy::{
    lattice_proxy_covariance, proxy_point_values, sample_gaussian_proxy, LatticeResolution, ProxyAverageLattice,
};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kernels::p;
use crate::noise::GridSpec;

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Convolve with the exact kernel `p_dt`, then add the one-step noise with
    /// the same kernel weights.
    #[default]
    SemigroupEuler,
}

/// How the first step away from the delta initial condition is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstStep {
    /// `u(dt, ·) = p_dt(·)` exactly, without noise.
    #[default]
    ExactKernel,
}

/// Solver configuration: the lattice plus the margin `L` added beyond
/// `[0, N]` on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub grid: GridSpec,
    pub truncation_margin: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub first_step: FirstStep,
}

/// Smallest margin accepted, in units of `√t_max`.
pub const MIN_MARGIN_SDS: f64 = 6.0;

impl SolverConfig {
    /// Grid `[-L, N + L]` with `L` the smallest multiple of `dx` that is at
    /// least `6 √t_max`.
    pub fn for_scale(n: f64, t_max: f64, dt: f64, dx: f64) -> Result<Self> {
        let steps = (MIN_MARGIN_SDS * t_max.sqrt() / dx - 1e-9).ceil();
        Self::with_margin(n, t_max, dt, dx, steps * dx)
    }

    /// Grid `[-L, N + L]` for an explicit margin `L` (rounded up to a multiple of `dx`).
    pub fn with_margin(n: f64, t_max: f64, dt: f64, dx: f64, margin: f64) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::Argument(format!("dx must be positive, got {dx}")));
        }
        let l = (margin / dx - 1e-9).ceil() * dx;
        let cells = (n / dx).round();
        let grid = GridSpec::new(t_max, dt, -l, cells * dx + l, dx)?;
        let cfg = Self {
            grid,
            truncation_margin: l,
            scheme: Scheme::SemigroupEuler,
            first_step: FirstStep::ExactKernel,
        };
        cfg.validate()?;
        cfg.validate_scale(n)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let need = MIN_MARGIN_SDS * self.grid.t_max.sqrt();
        if !(self.truncation_margin >= need * (1.0 - 1e-12)) {
            return Err(Error::Argument(format!(
                "truncation_margin {} is below 6 sqrt(t_max) = {need}",
                self.truncation_margin
            )));
        }
        if self.grid.x_min > -self.truncation_margin * (1.0 - 1e-12) {
            return Err(Error::Argument(format!(
                "grid starts at {} and does not cover -L = {}",
                self.grid.x_min, -self.truncation_margin
            )));
        }
        Ok(())
    }

    /// The grid covers `[-L, N + L]` and `N` sits on a node.
    pub fn validate_scale(&self, n: f64) -> Result<()> {
        if !(n >= self.grid.dx) {
            return Err(Error::Argument(format!("N={n} must be at least dx={}", self.grid.dx)));
        }
        if self.grid.node_index(n).is_none() || self.grid.node_index(0.0).is_none() {
            return Err(Error::Argument(format!("0 and N={n} must be grid nodes")));
        }
        if self.grid.x_max < n + self.truncation_margin * (1.0 - 1e-12) {
            return Err(Error::Argument(format!(
                "grid ends at {} and does not cover N + L = {}",
                self.grid.x_max,
                n + self.truncation_margin
            )));
        }
        Ok(())
    }
}

/// Which field a [`FieldSlice`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceKind {
    /// The solution `u`.
    #[serde(rename = "u")]
    Solution,
    /// The renormalized field `U = u/p_t`.
    #[serde(rename = "U")]
    Renormalized,
    /// The Gaussian proxy `V`.
    #[serde(rename = "V")]
    Proxy,
}

/// Values of one field at a fixed time on ordered space points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSlice {
    pub t: f64,
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: SliceKind,
}

/// One replica's trajectory `t ↦ 𝒮_{N,t}` (or `𝒢_{N,t}` for the proxy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragePath {
    #[serde(rename = "N")]
    pub n: f64,
    pub replica_id: u64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// `U(t,x) = u(t,x)/p_t(x)` pointwise.
pub fn renormalize(slice: &FieldSlice) -> Result<FieldSlice> {
    if slice.kind != SliceKind::Solution {
        return domain(format!("renormalize expects a u slice, got {:?}", slice.kind));
    }
    if !(slice.t > 0.0) {
        return domain("U(0, .) is the constant 1 and is not computed by division");
    }
    let mut values = Vec::with_capacity(slice.values.len());
    for (&x, &u) in slice.xs.iter().zip(&slice.values) {
        let pt = p(slice.t, x);
        if pt == 0.0 {
            return domain(format!("p_t(x) underflows at t={}, x={x}", slice.t));
        }
        values.push(u / pt);
    }
    Ok(FieldSlice {
        t: slice.t,
        xs: slice.xs.clone(),
        values,
        kind: SliceKind::Renormalized,
    })
}

/// Trapezoid weights of `(1/N) ∫₀^N f dx` on `n + 1` equispaced nodes.
pub fn trapezoid_weights(nodes: usize) -> Vec<f64> {
    let cells = (nodes - 1) as f64;
    let mut w = vec![1.0 / cells; nodes];
    w[0] *= 0.5;
    w[nodes - 1] *= 0.5;
    w
}

/// Trapezoid approximation of `(1/N) ∫₀^N [U(t,x) - 1] dx`.
pub fn spatial_average(slice: &FieldSlice, n: f64) -> Result<f64> {
    if !(slice.xs.len() >= 2) {
        return domain("spatial average needs at least two nodes");
    }
    let dx = slice.xs[1] - slice.xs[0];
    if !(n >= dx * (1.0 - 1e-9)) {
        return domain(format!("N={n} is below the grid step {dx}"));
    }
    let locate = |x: f64| -> Option<usize> {
        let r = (x - slice.xs[0]) / dx;
        let j = r.round();
        ((r - j).abs() < 1e-6 && j >= 0.0 && (j as usize) < slice.xs.len()).then_some(j as usize)
    };
    let (Some(a), Some(b)) = (locate(0.0), locate(n)) else {
        return domain(format!(
            "[0, {n}] is not covered by slice nodes [{}, {}]",
            slice.xs[0],
            slice.xs[slice.xs.len() - 1]
        ));
    };
    Ok(average_of(&slice.values[a..=b]))
}

/// `(1/N) ∫ (U - 1)` by the trapezoid rule over all of `values`.
pub(crate) fn average_of(values: &[f64]) -> f64 {
    let m = values.len() - 1;
    let inner: f64 = values[1..m].iter().map(|v| v - 1.0).sum();
    (inner + 0.5 * (values[0] - 1.0 + values[m] - 1.0)) / m as f64
}
