//! The Gaussian proxy `V(t,x) = 1 + ∫₀^t ∫ p_{s(t-s)/t}(y - (s/t)x) η(ds dy)`
//! and its spatial averages `𝒢_{N,t}`.
//!
//! Pointwise values use the solver's uniform lattice with midpoint times.
//! Averages use a graded lattice instead: the integrand
//! `g_{N,t}(s,y) = (1/N) ∫₀^N p_{s(t-s)/t}(y - (s/t)x) dx` carries equal
//! variance on every logarithmic time scale from `(t/N)²` up to `t`, far
//! below any practical uniform `dt`. The graded lattice uses geometric time
//! levels and, within each level, cells bounded by rays `y = λ s`. Each cell
//! receives one independent normal, weighted by the cell average of `g`, which
//! is the exact law of the white-noise integral of the projection of `g` onto
//! cell indicators. The captured fraction of the variance is reported.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AveragePath, FieldSlice, SliceKind, SolverConfig};
use crate::error::{Error, Result};
use crate::kernels::p;
use crate::noise::{make_noise, NoiseSlab, NoiseStream, TAG_GRADED};
use crate::specfun::g_weight_integral;

const KERNEL_SDS: f64 = 8.0;

/// Weights of `V(t,x) - 1` on the uniform lattice: one row per time cell,
/// `(k, first node, weights)`.
fn point_weights(cfg: &SolverConfig, t: f64, x: f64) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let g = &cfg.grid;
    let steps = g
        .step_index(t)
        .filter(|&k| k >= 1)
        .ok_or_else(|| Error::Argument(format!("t={t} must be a positive whole number of steps within t_max")))?;
    if !(x >= g.x_min && x <= g.x_max) {
        return Err(Error::Argument(format!(
            "x={x} lies outside the grid [{}, {}]",
            g.x_min, g.x_max
        )));
    }
    let t = g.t(steps);
    let scale = (g.dt * g.dx).sqrt();
    let top = g.n_space() as f64 - 1.0;
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let s = (k as f64 + 0.5) * g.dt;
        let var = s * (t - s) / t;
        let centre = s / t * x;
        let reach = KERNEL_SDS * var.sqrt() + g.dx;
        let j0 = ((centre - reach - g.x_min) / g.dx).floor().clamp(0.0, top) as usize;
        let j1 = ((centre + reach - g.x_min) / g.dx).ceil().clamp(0.0, top) as usize;
        let w = (j0..=j1).map(|j| p(var, g.x(j) - centre) * scale).collect();
        rows.push((k, j0, w));
    }
    Ok(rows)
}

/// `V(t, x)` at each `x` in `xs`, driven by the slab's noise.
pub fn sample_gaussian_proxy(cfg: &SolverConfig, noise: &NoiseSlab, t: f64, xs: &[f64]) -> Result<FieldSlice> {
    if noise.grid != cfg.grid {
        return Err(Error::Argument("noise grid differs from the solver grid".into()));
    }
    let mut stream = noise.stream();
    let mut row = Vec::new();
    let mut values = Vec::with_capacity(xs.len());
    for &x in xs {
        let mut v = 1.0;
        for (k, j0, w) in point_weights(cfg, t, x)? {
            row.resize(w.len(), 0.0);
            noise.fill_slice_with(&mut stream, k, j0, &mut row);
            v += w.iter().zip(&row).map(|(a, b)| a * b).sum::<f64>();
        }
        if !v.is_finite() {
            return Err(Error::NonFinite {
                t,
                x,
                replica: noise.replica_id,
            });
        }
        values.push(v);
    }
    Ok(FieldSlice {
        t,
        xs: xs.to_vec(),
        values,
        kind: SliceKind::Proxy,
    })
}

/// Exact covariance of the lattice `V(t,x)` and `V(t,x')`.
pub fn lattice_proxy_covariance(cfg: &SolverConfig, t: f64, x: f64, x2: f64) -> Result<f64> {
    let a = point_weights(cfg, t, x)?;
    let b = point_weights(cfg, t, x2)?;
    let mut sum = 0.0;
    for ((_, ja, wa), (_, jb, wb)) in a.iter().zip(&b) {
        for (m, w) in wa.iter().enumerate() {
            let j = ja + m;
            if j >= *jb && j < jb + wb.len() {
                sum += w * wb[j - jb];
            }
        }
    }
    Ok(sum)
}

/// `V(t, x)` for each `x` over replicas `0..replicas`; `[replica][x]`.
pub fn proxy_point_values(cfg: &SolverConfig, t: f64, xs: &[f64], seed: u64, replicas: u64) -> Result<Vec<Vec<f64>>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let slab = make_noise(cfg.grid, seed, r)?;
            Ok(sample_gaussian_proxy(cfg, &slab, t, xs)?.values)
        })
        .collect()
}

/// Resolution of the graded lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeResolution {
    /// Ratio between consecutive time levels.
    pub level_ratio: f64,
    /// Cells per bridge standard deviation across the edges of `g`.
    pub cells_per_sd: f64,
    /// Lowest level, as a multiple of `(t_min/N)²`.
    pub floor: f64,
}

impl Default for LatticeResolution {
    fn default() -> Self {
        Self {
            level_ratio: 1.03,
            cells_per_sd: 4.0,
            floor: 1e-8,
        }
    }
}

impl LatticeResolution {
    pub fn validate(&self) -> Result<()> {
        if !(self.level_ratio > 1.0 && self.level_ratio <= 2.0) {
            return Err(Error::Argument(format!(
                "level_ratio must lie in (1, 2], got {}",
                self.level_ratio
            )));
        }
        if !(self.cells_per_sd >= 0.5 && self.cells_per_sd <= 64.0) {
            return Err(Error::Argument(format!(
                "cells_per_sd must lie in [0.5, 64], got {}",
                self.cells_per_sd
            )));
        }
        if !(self.floor > 0.0 && self.floor <= 1e-2) {
            return Err(Error::Argument(format!(
                "floor must lie in (0, 1e-2], got {}",
                self.floor
            )));
        }
        Ok(())
    }
}

/// Four-point Gauss–Legendre nodes and weights on `[-1, 1]`.
const GL4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Graded lattice for `𝒢_{N,t}` at a fixed set of times.
#[derive(Debug, Clone)]
pub struct ProxyAverageLattice {
    pub n: f64,
    pub times: Vec<f64>,
    /// `weights[i][c]`: weight of cell `c` in `𝒢_{N,t_i}`; cells are ordered
    /// by level, and time `i` uses only a prefix of them.
    weights: Vec<Vec<f64>>,
    cells: usize,
}

fn merge_zones(mut zones: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    zones.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(zones.len());
    for z in zones {
        match out.last_mut() {
            Some(last) if z.0 <= last.1 => last.1 = last.1.max(z.1),
            _ => out.push(z),
        }
    }
    out
}

impl ProxyAverageLattice {
    pub fn build(n: f64, times: &[f64], res: LatticeResolution) -> Result<Self> {
        res.validate()?;
        if !(n.is_finite() && n >= std::f64::consts::E) {
            return Err(Error::Argument(format!("N must be at least e, got {n}")));
        }
        if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Argument("times must be nonempty and positive".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument("times must be strictly increasing".into()));
        }
        let t_min = times[0];
        let t_max = times[times.len() - 1];
        // level boundaries: geometric, with every requested time snapped in
        let q = res.level_ratio;
        let mut bounds = vec![res.floor * (t_min / n).powi(2)];
        while *bounds.last().unwrap() * q < t_max {
            let b = *bounds.last().unwrap() * q;
            bounds.push(b);
        }
        for &t in times {
            let i = bounds.partition_point(|&b| b < t);
            // replace the nearest boundary so no level gets thin
            if i < bounds.len() && (i == 0 || bounds[i] / t < t / bounds[i - 1]) {
                bounds[i] = t;
            } else if i == bounds.len() {
                bounds.push(t);
            } else {
                bounds[i - 1] = t;
            }
        }
        bounds.dedup();
        let levels: Vec<(f64, f64)> = bounds.windows(2).map(|w| (w[0], w[1])).collect();
        let hc = 1.0 / res.cells_per_sd;
        // per level: cells as λ intervals and per-time weights
        let per_level: Vec<(Vec<(f64, f64)>, Vec<Vec<f64>>)> = levels
            .par_iter()
            .map(|&(sa, sb)| {
                let active: Vec<f64> = times.iter().copied().filter(|&t| t >= sb * (1.0 - 1e-12)).collect();
                let half = KERNEL_SDS * sb.sqrt() / sa;
                let step = hc * sa.sqrt() / sb;
                let mut edges = vec![0.0];
                edges.extend(active.iter().map(|t| n / t));
                let zones = merge_zones(edges.iter().map(|&e| (e - half, e + half)).collect());
                let mut cells = Vec::new();
                for (zi, &(a, b)) in zones.iter().enumerate() {
                    let k = ((b - a) / step).ceil().max(1.0) as usize;
                    let h = (b - a) / k as f64;
                    cells.extend(
                        (0..k).map(|m| (a + m as f64 * h, if m + 1 == k { b } else { a + (m + 1) as f64 * h })),
                    );
                    if let Some(&(next, _)) = zones.get(zi + 1) {
                        cells.push((b, next));
                    }
                }
                let ds = sb - sa;
                let area_s = 0.5 * (sb * sb - sa * sa);
                let weights = active
                    .iter()
                    .map(|&t| {
                        cells
                            .iter()
                            .map(|&(la, lb)| {
                                let mut integral = 0.0;
                                for &(z, w) in &GL4 {
                                    let s = sa + 0.5 * ds * (z + 1.0);
                                    integral += w * g_weight_integral(n, t, s, la * s, lb * s);
                                }
                                0.5 * ds * integral / ((lb - la) * area_s).sqrt()
                            })
                            .collect()
                    })
                    .collect();
                (cells, weights)
            })
            .collect();
        let cells: usize = per_level.iter().map(|(c, _)| c.len()).sum();
        let mut weights: Vec<Vec<f64>> = times.iter().map(|_| Vec::new()).collect();
        for (_, w) in &per_level {
            for (i, wi) in w.iter().enumerate() {
                // active times are a suffix of `times`
                let offset = times.len() - w.len();
                weights[offset + i].extend_from_slice(wi);
            }
        }
        Ok(Self {
            n,
            times: times.to_vec(),
            weights,
            cells,
        })
    }

    /// Number of cells (independent normals) per replica.
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// `Σ w²` per time: the exact variance of the sampled averages.
    pub fn lattice_variance(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.iter().map(|v| v * v).sum()).collect()
    }

    /// Exact covariance matrix of the sampled averages.
    pub fn lattice_covariance(&self) -> Vec<Vec<f64>> {
        let m = self.times.len();
        let mut c = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                let len = self.weights[i].len().min(self.weights[j].len());
                c[i][j] = (0..len).map(|k| self.weights[i][k] * self.weights[j][k]).sum();
            }
        }
        c
    }

    /// `𝒢_{N,t}` at each lattice time for one replica.
    pub fn sample(&self, seed: u64, replica: u64) -> AveragePath {
        let mut stream = NoiseStream::new(seed, replica, TAG_GRADED);
        let mut xi = vec![0.0; self.cells];
        stream.fill_from(0, &mut xi);
        let values = self
            .weights
            .iter()
            .map(|w| w.iter().zip(&xi).map(|(a, b)| a * b).sum())
            .collect();
        AveragePath {
            n: self.n,
            replica_id: replica,
            times: self.times.clone(),
            values,
        }
    }

    /// Paths for replicas `0..replicas`, in replica order.
    pub fn sample_paths(&self, seed: u64, replicas: u64) -> Vec<AveragePath> {
        (0..replicas).into_par_iter().map(|r| self.sample(seed, r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{cov_avg_kind, cov_field, proxy_point_variance, CovQuery, FieldKind};
    use crate::specfun::QuadratureSpec;

    #[test]
    fn graded_lattice_captures_the_variance() {
        let spec = QuadratureSpec::default();
        for &(n, ref ts) in &[
            (100.0, vec![0.5]),
            (1000.0, vec![0.25, 0.5, 1.0]),
            (100.0, vec![0.01, 0.05, 0.1]),
        ] {
            let lat = ProxyAverageLattice::build(n, ts, LatticeResolution::default()).unwrap();
            let cov = lat.lattice_covariance();
            for (i, &ti) in ts.iter().enumerate() {
                for (j, &tj) in ts.iter().enumerate() {
                    let want = cov_avg_kind(n, ti, tj, FieldKind::GaussianProxy, spec).unwrap();
                    let frac = cov[i][j] / want;
                    assert!(frac <= 1.0 + 1e-9 || i != j, "N={n} ({ti},{tj}) captured {frac}");
                    assert!((frac - 1.0).abs() < 1e-3, "N={n} ({ti},{tj}) captured {frac}");
                }
            }
        }
    }

    #[test]
    fn graded_samples_are_deterministic() {
        let lat = ProxyAverageLattice::build(10.0, &[0.5, 1.0], LatticeResolution::default()).unwrap();
        let a = lat.sample(3, 7);
        assert_eq!(a, lat.sample(3, 7));
        assert_ne!(a, lat.sample(3, 8));
        assert_eq!(lat.sample_paths(3, 9)[7], a);
        assert_eq!(a.times, vec![0.5, 1.0]);
    }

    #[test]
    fn graded_lattice_rejects_bad_input() {
        let r = LatticeResolution::default();
        assert!(ProxyAverageLattice::build(1.0, &[0.5], r).is_err());
        assert!(ProxyAverageLattice::build(10.0, &[], r).is_err());
        assert!(ProxyAverageLattice::build(10.0, &[1.0, 0.5], r).is_err());
        let bad = LatticeResolution { level_ratio: 1.0, ..r };
        assert!(ProxyAverageLattice::build(10.0, &[0.5], bad).is_err());
    }

    #[test]
    fn uniform_lattice_covariance_is_close_to_the_kernel() {
        let cfg = SolverConfig::for_scale(1.0, 1.0, 2e-3, 1e-2).unwrap();
        let v = lattice_proxy_covariance(&cfg, 1.0, 0.0, 0.0).unwrap();
        let exact = proxy_point_variance(1.0);
        // midpoint times miss part of the s^{-1/2} mass at both ends
        assert!(v < exact && v > 0.97 * exact, "{v} vs {exact}");
        let c = lattice_proxy_covariance(&cfg, 1.0, 0.0, 0.7).unwrap();
        let want = cov_field(
            CovQuery::new(1.0, 1.0, 0.0, 0.7).unwrap(),
            FieldKind::GaussianProxy,
            QuadratureSpec::default(),
        )
        .unwrap();
        assert!((c - want).abs() < 0.03 * want, "{c} vs {want}");
    }

    #[test]
    fn pointwise_proxy_is_deterministic_and_checks_input() {
        let cfg = SolverConfig::for_scale(1.0, 0.5, 1e-2, 2e-2).unwrap();
        let slab = make_noise(cfg.grid, 1, 2).unwrap();
        let a = sample_gaussian_proxy(&cfg, &slab, 0.5, &[0.0, 0.4]).unwrap();
        assert_eq!(a, sample_gaussian_proxy(&cfg, &slab, 0.5, &[0.0, 0.4]).unwrap());
        assert_eq!(a.kind, SliceKind::Proxy);
        let zero = NoiseSlab::zero(cfg.grid).unwrap();
        assert_eq!(
            sample_gaussian_proxy(&cfg, &zero, 0.5, &[0.0]).unwrap().values,
            vec![1.0]
        );
        assert!(sample_gaussian_proxy(&cfg, &slab, 0.505, &[0.0]).is_err());
        assert!(sample_gaussian_proxy(&cfg, &slab, 0.5, &[100.0]).is_err());
    }
}
