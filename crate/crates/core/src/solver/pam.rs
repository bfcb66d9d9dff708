//! Time stepping of the PAM scheme.
//!
//! The scheme is
//! `u(t+dt, x) = Σ_y p_dt(x-y) u(t,y) [dx + ξ_{t,y} √(dt dx)]` with
//! `u(dt, ·) = p_dt`. Dividing by `p_{t+dt}(x)` and using the bridge identity
//! `p_dt(x-y) p_t(y) / p_{t+dt}(x) = p_σ(y - c x)`, `c = t/(t+dt)`,
//! `σ = dt·c`, gives the same recursion for `U = u/p_t`:
//! `U(t+dt, x) = Σ_y p_σ(y - c x) U(t,y) [dx + ξ_{t,y} √(dt dx)]`, `U(dt,·) = 1`.
//! Stepping `U` avoids the huge dynamic range of `u` and lets the work be
//! restricted to the cone of nodes that can influence the requested outputs.
//! Outside that cone the field is replaced by its mean 1; the bridge weight
//! of anything outside is below `e^{-32}`.

use rayon::prelude::*;
use serde::Serialize;

use super::{average_of, AveragePath, FieldSlice, SliceKind, SolverConfig};
use crate::error::{Error, Result};
use crate::kernels::p;
use crate::noise::{make_noise, NoiseSlab, NoiseStream};

/// Replicas advanced together; the kernel weights are shared across lanes.
pub const LANES: usize = 16;

/// Kernel truncation in standard deviations.
const KERNEL_SDS: f64 = 8.0;

/// Outputs are requested at or after this many steps, where the division by
/// `p_t` no longer amplifies the start-up error.
pub const MIN_OUTPUT_STEPS: usize = 10;

/// An output request: `U(t, x)` for grid nodes `x ∈ [x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub t: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Window {
    pub fn point(t: f64, x: f64) -> Self {
        Self { t, x_lo: x, x_hi: x }
    }
}

/// Per-replica bookkeeping of the march.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolveStats {
    /// Computed node values that came out negative (kept, not clamped).
    pub negative_cells: u64,
    /// All computed node values.
    pub cells: u64,
}

impl SolveStats {
    pub fn merge(&mut self, other: &SolveStats) {
        self.negative_cells += other.negative_cells;
        self.cells += other.cells;
    }
}

struct Target {
    step: usize,
    lo: usize,
    hi: usize,
}

struct Plan {
    last_step: usize,
    /// Active node range at step `k`, stored at index `k`; entry 0 unused.
    ranges: Vec<(usize, usize)>,
    targets: Vec<Target>,
}

fn plan(cfg: &SolverConfig, windows: &[Window], min_steps: usize) -> Result<Plan> {
    cfg.validate()?;
    let g = &cfg.grid;
    if windows.is_empty() {
        return Err(Error::Argument("no output windows requested".into()));
    }
    let mut targets = Vec::with_capacity(windows.len());
    for w in windows {
        let step = g.step_index(w.t).filter(|&k| k >= min_steps.max(1)).ok_or_else(|| {
            Error::Argument(format!(
                "output time {} must be a whole number of steps between {} dt and t_max",
                w.t,
                min_steps.max(1)
            ))
        })?;
        let lo = g.node_index(w.x_lo);
        let hi = g.node_index(w.x_hi);
        match (lo, hi) {
            (Some(lo), Some(hi)) if lo <= hi => targets.push(Target { step, lo, hi }),
            _ => {
                return Err(Error::Argument(format!(
                    "output window [{}, {}] must run between grid nodes in [{}, {}]",
                    w.x_lo, w.x_hi, g.x_min, g.x_max
                )))
            }
        }
    }
    let last_step = targets.iter().map(|t| t.step).max().unwrap_or(1);
    let slack = KERNEL_SDS * g.dt.sqrt() + 2.0 * g.dx;
    let top = g.n_space() as f64 - 1.0;
    let mut ranges = vec![(0usize, 0usize); last_step + 1];
    for (k, r) in ranges.iter_mut().enumerate().skip(1) {
        let s = g.t(k);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for tg in targets.iter().filter(|tg| tg.step >= k) {
            let tt = g.t(tg.step);
            let spread = KERNEL_SDS * (s * (tt - s) / tt).max(0.0).sqrt() + slack;
            let frac = k as f64 / tg.step as f64;
            lo = lo.min(frac * g.x(tg.lo) - spread);
            hi = hi.max(frac * g.x(tg.hi) + spread);
        }
        let a = ((lo - g.x_min) / g.dx).floor().clamp(0.0, top) as usize;
        let b = ((hi - g.x_min) / g.dx).ceil().clamp(0.0, top) as usize;
        *r = (a, b);
    }
    Ok(Plan {
        last_step,
        ranges,
        targets,
    })
}

/// March `L` replicas at once. Lanes beyond `slabs.len()` are padding.
fn march<const L: usize>(
    cfg: &SolverConfig,
    slabs: &[NoiseSlab],
    plan: &Plan,
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<SolveStats>)> {
    let g = &cfg.grid;
    let (dt, dx) = (g.dt, g.dx);
    let used = slabs.len();
    debug_assert!(used >= 1 && used <= L);
    let mut streams: Vec<NoiseStream> = slabs.iter().map(|s| s.stream()).collect();
    let noise_scale = (dt * dx).sqrt();
    let mut stats = vec![SolveStats::default(); used];
    // outputs[target][lane] = values on the target's node range
    let mut outputs: Vec<Vec<Vec<f64>>> = plan.targets.iter().map(|_| vec![Vec::new(); used]).collect();

    let (lo1, hi1) = plan.ranges[1];
    let mut cur_lo = lo1;
    let mut cur: Vec<[f64; L]> = vec![[1.0; L]; hi1 - lo1 + 1];
    let mut row: Vec<f64> = Vec::new();
    let mut buf: Vec<[f64; L]> = Vec::new();
    let mut next: Vec<[f64; L]> = Vec::new();

    let emit = |outputs: &mut Vec<Vec<Vec<f64>>>, k: usize, lo: usize, vals: &[[f64; L]]| {
        for (ti, tg) in plan.targets.iter().enumerate() {
            if tg.step == k {
                for (lane, out) in outputs[ti].iter_mut().enumerate() {
                    *out = (tg.lo..=tg.hi).map(|j| vals[j - lo][lane]).collect();
                }
            }
        }
    };
    emit(&mut outputs, 1, cur_lo, &cur);

    for k in 1..plan.last_step {
        let (lo, hi) = (cur_lo, cur_lo + cur.len() - 1);
        let (nlo, nhi) = plan.ranges[k + 1];
        let c = k as f64 / (k + 1) as f64;
        let sigma = dt * c;
        let half = (KERNEL_SDS * sigma.sqrt() / dx).ceil() as i64 + 1;
        let centre = |i: usize| (c * g.x(i) - g.x_min) / dx;
        // multiplicand a_j = U_k(y_j) (dx + ξ √(dt dx)) over every tap in reach
        let a0 = centre(nlo).round() as i64 - half;
        let a1 = centre(nhi).round() as i64 + half;
        buf.clear();
        buf.resize((a1 - a0 + 1) as usize, [dx; L]);
        let (olo, ohi) = ((lo as i64).max(a0), (hi as i64).min(a1));
        if olo <= ohi {
            let (olo, ohi) = (olo as usize, ohi as usize);
            row.resize(ohi - olo + 1, 0.0);
            for lane in 0..used {
                slabs[lane].fill_slice_with(&mut streams[lane], k, olo, &mut row);
                for (m, xi) in row.iter().enumerate() {
                    let j = olo + m;
                    buf[(j as i64 - a0) as usize][lane] = cur[j - lo][lane] * (dx + xi * noise_scale);
                }
            }
            if used < L {
                for j in olo..=ohi {
                    for lane in used..L {
                        buf[(j as i64 - a0) as usize][lane] = dx;
                    }
                }
            }
        }
        // weights e^{-d²/2σ} by the recursion e_{m+1} = e_m r_m, r_{m+1} = r_m ρ
        let inv2s = 0.5 / sigma;
        let rho = (-dx * dx / sigma).exp();
        let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma).sqrt();
        next.clear();
        next.reserve(nhi - nlo + 1);
        for i in nlo..=nhi {
            let mu = centre(i);
            let jc = mu.round();
            let d0 = (jc - mu) * dx;
            let e0 = (-d0 * d0 * inv2s).exp();
            let r_right = (-(2.0 * d0 * dx + dx * dx) * inv2s).exp();
            let r_left = (-(-2.0 * d0 * dx + dx * dx) * inv2s).exp();
            let base = (jc as i64 - a0) as usize;
            let mut acc = [0.0; L];
            let (mut e, mut r) = (e0, r_right);
            for m in 0..=half as usize {
                let a = &buf[base + m];
                for l in 0..L {
                    acc[l] += e * a[l];
                }
                e *= r;
                r *= rho;
            }
            let (mut e, mut r) = (e0, r_left);
            for m in 1..=half as usize {
                e *= r;
                r *= rho;
                let a = &buf[base - m];
                for l in 0..L {
                    acc[l] += e * a[l];
                }
            }
            for v in acc.iter_mut() {
                *v *= norm;
            }
            next.push(acc);
        }
        for lane in 0..used {
            let st = &mut stats[lane];
            st.cells += next.len() as u64;
            match scan_lane(&next, lane) {
                Ok(neg) => st.negative_cells += neg,
                Err(m) => {
                    return Err(Error::NonFinite {
                        t: g.t(k + 1),
                        x: g.x(nlo + m),
                        replica: slabs[lane].replica_id,
                    })
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        cur_lo = nlo;
        emit(&mut outputs, k + 1, cur_lo, &cur);
    }
    Ok((outputs, stats))
}

/// Negative count of one lane, or the position of its first non-finite value.
fn scan_lane<const L: usize>(vals: &[[f64; L]], lane: usize) -> std::result::Result<u64, usize> {
    let mut neg = 0;
    for (m, v) in vals.iter().enumerate() {
        let x = v[lane];
        if !x.is_finite() {
            return Err(m);
        }
        neg += (x < 0.0) as u64;
    }
    Ok(neg)
}

fn check_slabs(cfg: &SolverConfig, slabs: &[NoiseSlab]) -> Result<()> {
    for s in slabs {
        if s.grid != cfg.grid {
            return Err(Error::Argument(format!(
                "noise grid of replica {} differs from the solver grid",
                s.replica_id
            )));
        }
    }
    Ok(())
}

fn to_slices(cfg: &SolverConfig, plan: &Plan, windows: &[Window], per_target: Vec<Vec<f64>>) -> Vec<FieldSlice> {
    let g = &cfg.grid;
    per_target
        .into_iter()
        .zip(plan.targets.iter().zip(windows))
        .map(|(values, (tg, w))| FieldSlice {
            t: w.t,
            xs: (tg.lo..=tg.hi).map(|j| g.x(j)).collect(),
            values,
            kind: SliceKind::Renormalized,
        })
        .collect()
}

/// `U` on each window, for up to [`LANES`] replicas marched together.
/// Returns `[replica][window]` slices and per-replica stats.
pub fn solve_renormalized_batch(
    cfg: &SolverConfig,
    slabs: &[NoiseSlab],
    windows: &[Window],
) -> Result<(Vec<Vec<FieldSlice>>, Vec<SolveStats>)> {
    solve_batch(cfg, slabs, windows, MIN_OUTPUT_STEPS)
}

fn solve_batch(
    cfg: &SolverConfig,
    slabs: &[NoiseSlab],
    windows: &[Window],
    min_steps: usize,
) -> Result<(Vec<Vec<FieldSlice>>, Vec<SolveStats>)> {
    if slabs.is_empty() || slabs.len() > LANES {
        return Err(Error::Argument(format!(
            "a batch holds 1 to {LANES} replicas, got {}",
            slabs.len()
        )));
    }
    check_slabs(cfg, slabs)?;
    let plan = plan(cfg, windows, min_steps)?;
    let (outputs, stats) = if slabs.len() == 1 {
        march::<1>(cfg, slabs, &plan)?
    } else {
        march::<LANES>(cfg, slabs, &plan)?
    };
    // outputs is [target][lane]; regroup as [lane][target]
    let mut per_lane: Vec<Vec<Vec<f64>>> = (0..slabs.len()).map(|_| Vec::with_capacity(windows.len())).collect();
    for by_lane in outputs {
        for (lane, v) in by_lane.into_iter().enumerate() {
            per_lane[lane].push(v);
        }
    }
    let slices = per_lane
        .into_iter()
        .map(|v| to_slices(cfg, &plan, windows, v))
        .collect();
    Ok((slices, stats))
}

/// `U` on each window for one replica.
pub fn solve_renormalized(
    cfg: &SolverConfig,
    noise: &NoiseSlab,
    windows: &[Window],
) -> Result<(Vec<FieldSlice>, SolveStats)> {
    let (mut s, st) = solve_renormalized_batch(cfg, std::slice::from_ref(noise), windows)?;
    Ok((s.pop().unwrap_or_default(), st[0]))
}

/// `u(t, ·)` on the whole grid at each requested time (each a whole number of
/// steps, at least `dt`).
pub fn solve_pam(cfg: &SolverConfig, noise: &NoiseSlab, times: &[f64]) -> Result<Vec<FieldSlice>> {
    let g = &cfg.grid;
    let windows: Vec<Window> = times
        .iter()
        .map(|&t| Window {
            t,
            x_lo: g.x_min,
            x_hi: g.x(g.n_space() - 1),
        })
        .collect();
    let (mut s, _) = solve_batch(cfg, std::slice::from_ref(noise), &windows, 1)?;
    let mut slices = s.pop().unwrap_or_default();
    for sl in slices.iter_mut() {
        for (v, &x) in sl.values.iter_mut().zip(&sl.xs) {
            *v *= p(sl.t, x);
        }
        sl.kind = SliceKind::Solution;
    }
    Ok(slices)
}

/// Run `replicas` replicas in parallel batches, mapping each batch's slices
/// through `reduce`; results come back in replica order regardless of the
/// schedule.
fn ensemble<T, F>(
    cfg: &SolverConfig,
    windows: &[Window],
    seed: u64,
    replicas: u64,
    reduce: F,
) -> Result<(Vec<T>, SolveStats)>
where
    T: Send,
    F: Fn(u64, Vec<FieldSlice>) -> Result<T> + Sync,
{
    if replicas == 0 {
        return Err(Error::Argument("replicas must be positive".into()));
    }
    plan(cfg, windows, MIN_OUTPUT_STEPS)?;
    let batches = replicas.div_ceil(LANES as u64);
    let per_batch: Vec<Result<(Vec<T>, SolveStats)>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let first = b * LANES as u64;
            let last = (first + LANES as u64).min(replicas);
            let slabs = (first..last)
                .map(|r| make_noise(cfg.grid, seed, r))
                .collect::<Result<Vec<_>>>()?;
            let (slices, stats) = solve_renormalized_batch(cfg, &slabs, windows)?;
            let mut total = SolveStats::default();
            stats.iter().for_each(|s| total.merge(s));
            let out = slices
                .into_iter()
                .zip(first..last)
                .map(|(s, r)| reduce(r, s))
                .collect::<Result<Vec<T>>>()?;
            Ok((out, total))
        })
        .collect();
    let mut all = Vec::with_capacity(replicas as usize);
    let mut stats = SolveStats::default();
    for r in per_batch {
        let (v, s) = r?;
        all.extend(v);
        stats.merge(&s);
    }
    Ok((all, stats))
}

/// `U(t, x)` at each time for replicas `0..replicas`; `[replica][time]`.
pub fn pam_point_values(
    cfg: &SolverConfig,
    times: &[f64],
    x: f64,
    seed: u64,
    replicas: u64,
) -> Result<(Vec<Vec<f64>>, SolveStats)> {
    let windows: Vec<Window> = times.iter().map(|&t| Window::point(t, x)).collect();
    ensemble(cfg, &windows, seed, replicas, |_, slices| {
        Ok(slices.iter().map(|s| s.values[0]).collect())
    })
}

/// `𝒮_{N,t}` for every `N` in `ns` and `t` in `times`, from one field per
/// replica over `[0, max N]`; `[replica][N]`.
pub fn pam_average_paths(
    cfg: &SolverConfig,
    ns: &[f64],
    times: &[f64],
    seed: u64,
    replicas: u64,
) -> Result<(Vec<Vec<AveragePath>>, SolveStats)> {
    let n_max = ns.iter().cloned().fold(f64::NAN, f64::max);
    if ns.is_empty() || !(n_max > 0.0) {
        return Err(Error::Argument("N list must be nonempty and positive".into()));
    }
    for &n in ns {
        cfg.validate_scale(n)?;
    }
    let dx = cfg.grid.dx;
    let windows: Vec<Window> = times
        .iter()
        .map(|&t| Window {
            t,
            x_lo: 0.0,
            x_hi: n_max,
        })
        .collect();
    ensemble(cfg, &windows, seed, replicas, |r, slices| {
        Ok(ns
            .iter()
            .map(|&n| {
                let nodes = (n / dx).round() as usize + 1;
                AveragePath {
                    n,
                    replica_id: r,
                    times: times.to_vec(),
                    values: slices.iter().map(|s| average_of(&s.values[..nodes])).collect(),
                }
            })
            .collect())
    })
}
