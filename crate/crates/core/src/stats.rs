//! Estimators and checks that confront Monte Carlo ensembles of spatial
//! averages with the oracles: normality, variance sweeps, finite-dimensional
//! covariances, ergodic decay and the small-time roughness statistic.
//!
//! All reductions run in a fixed order, so equal ensembles give bit-equal
//! outputs.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::noise::{NoiseStream, TAG_AUX};
use crate::oracle::{asymptotic_var, clt_scale, cov_avg_kind, var_avg, AvgVarianceQuery, FieldKind};
use crate::solver::{
    pam_average_paths, scheme_moments, AveragePath, LatticeResolution, ProxyAverageLattice, SolverConfig,
};
use crate::specfun::{log_plus, std_normal_cdf, QuadratureSpec};

/// Asymptotic 1% critical value of `√n D_n`.
pub const KS_CRIT_1PCT: f64 = 1.6276;
/// Standard deviation of the Kolmogorov limit law, `√(π²/12 - (π ln 2)²/2)`.
pub const KS_LIMIT_SD: f64 = 0.260_332_2;
/// Resamples used by bootstrap standard errors.
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Smallest ensemble accepted by the sweeps.
pub const MIN_REPLICAS: u64 = 100;

/// One-sample Kolmogorov–Smirnov summary against a normal law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalitySummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr_mean: f64,
    pub ks_stat: f64,
    pub ks_critical_1pct: f64,
}

impl NormalitySummary {
    /// Whether the 1% test does not reject.
    pub fn passes(&self) -> bool {
        self.ks_stat < self.ks_critical_1pct
    }
}

/// Sample mean and unbiased variance.
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, if xs.len() > 1 { ss / (n - 1.0) } else { 0.0 })
}

/// Standard error of a sample variance of near-Gaussian data, `s² √(2/(n-1))`.
pub fn variance_se(variance: f64, n: usize) -> f64 {
    variance * (2.0 / (n as f64 - 1.0)).sqrt()
}

/// `sup |F_n - F|` for the empirical law of `samples`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d.min(1.0)
}

/// KS test of `samples` against `N(mean, variance)`.
pub fn ks_normal(samples: &[f64], mean: f64, variance: f64) -> Result<NormalitySummary> {
    if samples.len() < 8 {
        return Err(Error::Argument(format!(
            "ks_normal needs at least 8 samples, got {}",
            samples.len()
        )));
    }
    if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
        return Err(Error::Argument(format!(
            "reference law N({mean}, {variance}) is invalid"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return domain("samples contain non-finite values");
    }
    let (m, v) = mean_variance(samples);
    if !(v > 0.0) {
        return domain("samples have zero spread");
    }
    let n = samples.len();
    let sd = variance.sqrt();
    Ok(NormalitySummary {
        n,
        mean: m,
        variance: v,
        stderr_mean: (v / n as f64).sqrt(),
        ks_stat: ks_statistic(samples, |x| std_normal_cdf((x - mean) / sd)),
        ks_critical_1pct: KS_CRIT_1PCT / (n as f64).sqrt(),
    })
}

/// Bootstrap standard error of `stat` from [`BOOTSTRAP_RESAMPLES`] resamples.
pub fn bootstrap_se<F: Fn(&[f64]) -> f64>(samples: &[f64], stat: F, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.len();
    let mut buf = vec![0.0; n];
    let vals: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = samples[rng.gen_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    mean_variance(&vals).1.sqrt()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &[Vec<f64>]) -> f64 {
    let k = m.len();
    let mat = DMatrix::from_fn(k, k, |i, j| m[i][j]);
    mat.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Monotonicity with at most one adjacent pair out of order by no more than
/// the standard error of their difference.
pub fn monotone_with_slack(values: &[f64], ses: &[f64], decreasing: bool) -> bool {
    let mut slack_used = false;
    for i in 1..values.len() {
        let step = if decreasing {
            values[i - 1] - values[i]
        } else {
            values[i] - values[i - 1]
        };
        if step > 0.0 {
            continue;
        }
        let se = (ses[i - 1].powi(2) + ses[i].powi(2)).sqrt();
        if slack_used || -step > se {
            return false;
        }
        slack_used = true;
    }
    true
}

/// Empirical `q`-quantile of the KS distance between `n` standard normal
/// draws, scaled by their own variance about the known mean 0, and
/// `N(0, 1)`. This is the null law of the statistic that [`clt_sweep`] reports.
pub fn ks_null_quantile(n: usize, batches: usize, q: f64, seed: u64) -> Result<f64> {
    if n < 8 || batches < 10 || !(q > 0.0 && q < 1.0) {
        return Err(Error::Argument(format!(
            "bad calibration request n={n}, batches={batches}, q={q}"
        )));
    }
    let mut ks: Vec<f64> = (0..batches as u64)
        .map(|b| {
            let mut xs = vec![0.0; n];
            NoiseStream::new(seed, b, TAG_AUX).fill_from(0, &mut xs);
            let v = mean_variance(&xs).1;
            let sd = v.sqrt();
            ks_statistic(&xs, |x| std_normal_cdf(x / sd))
        })
        .collect();
    ks.sort_by(f64::total_cmp);
    let idx = ((q * batches as f64).ceil() as usize).clamp(1, batches) - 1;
    Ok(ks[idx])
}

/// Resolution of the Monte Carlo fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Resolution {
    /// Time step of the PAM scheme.
    pub dt: f64,
    /// Space step of the PAM scheme.
    pub dx: f64,
    /// Graded lattice of the proxy averages.
    pub lattice: LatticeResolution,
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            dx: 1e-2,
            lattice: LatticeResolution::default(),
        }
    }
}

impl Resolution {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.dx > 0.0 && self.dx.is_finite()) {
            return Err(Error::Argument(format!(
                "dt and dx must be positive, got dt={}, dx={}",
                self.dt, self.dx
            )));
        }
        self.lattice.validate()
    }
}

/// Averages `𝒮_{N,t}` (or `𝒢_{N,t}`) of one ensemble, `paths[N][replica]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub kind: FieldKind,
    pub ns: Vec<f64>,
    pub times: Vec<f64>,
    pub paths: Vec<Vec<AveragePath>>,
    /// Negative `u` cells seen by the PAM solver, and cells computed.
    pub negative_cells: u64,
    pub cells: u64,
}

impl Ensemble {
    pub fn replicas(&self) -> usize {
        self.paths[0].len()
    }

    /// Samples of the average at `(ns[ni], times[ti])` in replica order.
    pub fn values(&self, ni: usize, ti: usize) -> Vec<f64> {
        self.paths[ni].iter().map(|p| p.values[ti]).collect()
    }

    fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.max(1.0))
            .ok_or_else(|| Error::Argument(format!("t={t} is not among the simulated times")))
    }
}

fn check_scales(ns: &[f64]) -> Result<()> {
    if ns.is_empty() {
        return Err(Error::Argument("N list must be nonempty".into()));
    }
    if ns.iter().any(|n| !(n.is_finite() && *n >= std::f64::consts::E)) {
        return Err(Error::Argument("every N must be at least e".into()));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("N list must be strictly ascending".into()));
    }
    Ok(())
}

fn check_times(ts: &[f64]) -> Result<()> {
    if ts.is_empty() || ts.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::Argument("times must be nonempty and positive".into()));
    }
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("times must be strictly ascending".into()));
    }
    Ok(())
}

fn check_replicas(replicas: u64) -> Result<()> {
    if replicas < MIN_REPLICAS {
        return Err(Error::Argument(format!(
            "replicas must be at least {MIN_REPLICAS}, got {replicas}"
        )));
    }
    Ok(())
}

/// Simulates `replicas` independent fields and records their averages at
/// every `N` in `ns` and `t` in `times`. A PAM replica is one field on
/// `[0, max N]`, so all `N` share it; a proxy replica samples each `N` from
/// its own graded lattice.
pub fn simulate_averages(
    kind: FieldKind,
    ns: &[f64],
    times: &[f64],
    replicas: u64,
    seed: u64,
    res: &Resolution,
) -> Result<Ensemble> {
    check_scales(ns)?;
    check_times(times)?;
    if replicas == 0 {
        return Err(Error::Argument("replicas must be positive".into()));
    }
    let (paths, negative_cells, cells) = match kind {
        FieldKind::Pam => {
            let t_max = times[times.len() - 1];
            let cfg = SolverConfig::for_scale(ns[ns.len() - 1], t_max, res.dt, res.dx)?;
            let (per_replica, st) = pam_average_paths(&cfg, ns, times, seed, replicas)?;
            let mut by_n: Vec<Vec<AveragePath>> = ns.iter().map(|_| Vec::with_capacity(replicas as usize)).collect();
            for row in per_replica {
                for (i, p) in row.into_iter().enumerate() {
                    by_n[i].push(p);
                }
            }
            (by_n, st.negative_cells, st.cells)
        }
        FieldKind::GaussianProxy => {
            let mut by_n = Vec::with_capacity(ns.len());
            for &n in ns {
                let lat = ProxyAverageLattice::build(n, times, res.lattice)?;
                by_n.push(lat.sample_paths(seed, replicas));
            }
            (by_n, 0, 0)
        }
    };
    Ok(Ensemble {
        kind,
        ns: ns.to_vec(),
        times: times.to_vec(),
        paths,
        negative_cells,
        cells,
    })
}

/// Variance and normality of `√(N/log N) 𝒮_{N,t}` along a sweep in `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub t: f64,
    pub field_kind: FieldKind,
    pub replicas: usize,
    #[serde(rename = "Ns")]
    pub ns: Vec<f64>,
    /// Empirical `Var · (N/log N) / 2t`.
    pub var_ratio: Vec<f64>,
    pub var_ratio_se: Vec<f64>,
    /// Oracle `Var · (N/log N) / 2t`.
    pub oracle_ratio: Vec<f64>,
    /// KS distance to `N(0, empirical variance)`.
    pub ks: Vec<f64>,
    pub ks_critical_1pct: Vec<f64>,
}

/// [`clt_sweep`] on an existing ensemble at time `t`.
pub fn sweep_from_ensemble(ens: &Ensemble, t: f64, quad: QuadratureSpec) -> Result<SweepResult> {
    let ti = ens.time_index(t)?;
    let mut out = SweepResult {
        t,
        field_kind: ens.kind,
        replicas: ens.replicas(),
        ns: ens.ns.clone(),
        var_ratio: Vec::new(),
        var_ratio_se: Vec::new(),
        oracle_ratio: Vec::new(),
        ks: Vec::new(),
        ks_critical_1pct: Vec::new(),
    };
    for (ni, &n) in ens.ns.iter().enumerate() {
        let scale = clt_scale(n).sqrt();
        let xs: Vec<f64> = ens.values(ni, ti).iter().map(|s| scale * s).collect();
        let (_, v) = mean_variance(&xs);
        let summary = ks_normal(&xs, 0.0, v)?;
        out.var_ratio.push(v / (2.0 * t));
        out.var_ratio_se.push(variance_se(v, xs.len()) / (2.0 * t));
        out.oracle_ratio
            .push(var_avg(AvgVarianceQuery::new(n, t, ens.kind)?, quad)? / asymptotic_var(n, t));
        out.ks.push(summary.ks_stat);
        out.ks_critical_1pct.push(summary.ks_critical_1pct);
    }
    Ok(out)
}

/// Simulates the field at each `N` and compares the normalized averages with
/// the oracle variance and with a centred normal law.
pub fn clt_sweep(
    t: f64,
    ns: &[f64],
    replicas: u64,
    seed: u64,
    kind: FieldKind,
    res: &Resolution,
    quad: QuadratureSpec,
) -> Result<SweepResult> {
    check_scales(ns)?;
    check_replicas(replicas)?;
    let ens = simulate_averages(kind, ns, &[t], replicas, seed, res)?;
    sweep_from_ensemble(&ens, t, quad)
}

/// One entry of the scaled covariance matrix `Cov(𝒮_{N,t_i}, 𝒮_{N,t_j}) N/log N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FddEntry {
    pub t_i: f64,
    pub t_j: f64,
    pub emp_scaled_cov: f64,
    pub se: f64,
    pub oracle_scaled_cov: f64,
    pub limit_2min: f64,
}

/// Scaled covariance matrix at one `N`, entries for `i ≤ j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FddResult {
    #[serde(rename = "N")]
    pub n: f64,
    pub field_kind: FieldKind,
    pub replicas: usize,
    pub entries: Vec<FddEntry>,
    /// Smallest eigenvalue of the empirical matrix.
    pub min_eigenvalue: f64,
}

/// Unbiased sample covariance matrix of the columns `cols[i][replica]`.
pub fn covariance_matrix(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = cols.len();
    let n = cols[0].len() as f64;
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let s: f64 = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(a, b)| (a - means[i]) * (b - means[j]))
                .sum();
            m[i][j] = s / (n - 1.0);
            m[j][i] = m[i][j];
        }
    }
    m
}

/// [`fdd_check`] on an existing ensemble at `ns[ni]`.
pub fn fdd_from_ensemble(ens: &Ensemble, ni: usize, quad: QuadratureSpec) -> Result<FddResult> {
    let n = ens.ns[ni];
    let scale = clt_scale(n);
    let cols: Vec<Vec<f64>> = (0..ens.times.len()).map(|ti| ens.values(ni, ti)).collect();
    let cov = covariance_matrix(&cols);
    let reps = ens.replicas();
    let mut entries = Vec::new();
    for i in 0..cov.len() {
        for j in i..cov.len() {
            let (ti, tj) = (ens.times[i], ens.times[j]);
            let se = ((cov[i][i] * cov[j][j] + cov[i][j] * cov[i][j]) / (reps as f64 - 1.0)).sqrt();
            entries.push(FddEntry {
                t_i: ti,
                t_j: tj,
                emp_scaled_cov: cov[i][j] * scale,
                se: se * scale,
                oracle_scaled_cov: cov_avg_kind(n, ti, tj, ens.kind, quad)? * scale,
                limit_2min: 2.0 * ti.min(tj),
            });
        }
    }
    Ok(FddResult {
        n,
        field_kind: ens.kind,
        replicas: reps,
        entries,
        min_eigenvalue: min_eigenvalue(&cov),
    })
}

/// Empirical scaled covariances of the averages at times `ts`, against the
/// oracle and the limit `2 min(t_i, t_j)`.
pub fn fdd_check(
    ts: &[f64],
    n: f64,
    replicas: u64,
    seed: u64,
    kind: FieldKind,
    res: &Resolution,
    quad: QuadratureSpec,
) -> Result<FddResult> {
    check_times(ts)?;
    check_replicas(replicas)?;
    let ens = simulate_averages(kind, &[n], ts, replicas, seed, res)?;
    fdd_from_ensemble(&ens, 0, quad)
}

/// Root mean square of the samples about zero.
pub fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `L²` size of `𝒮_{N,t}` at one `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicRow {
    #[serde(rename = "N")]
    pub n: f64,
    pub t: f64,
    pub rms: f64,
    pub rms_se: f64,
    /// `√Var(𝒮_{N,t})` from the oracle.
    pub oracle_rms: f64,
    /// `√Var(𝒮_{N,t})` of the PAM scheme itself, from its exact moments.
    pub scheme_rms: Option<f64>,
    /// `rms / √(t log₊(1/t) log N / N)`.
    pub bound_constant: f64,
}

/// [`ergodic_check`] on an existing ensemble at time `t`.
pub fn ergodic_from_ensemble(
    ens: &Ensemble,
    t: f64,
    res: &Resolution,
    quad: QuadratureSpec,
) -> Result<Vec<ErgodicRow>> {
    let ti = ens.time_index(t)?;
    let scheme = match ens.kind {
        FieldKind::Pam => Some(scheme_moments(t, res.dt, res.dx, ens.ns[ens.ns.len() - 1])?),
        FieldKind::GaussianProxy => None,
    };
    let mut rows = Vec::with_capacity(ens.ns.len());
    for (ni, &n) in ens.ns.iter().enumerate() {
        let xs = ens.values(ni, ti);
        let r = rms(&xs);
        let squares: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let (_, v2) = mean_variance(&squares);
        let se_ms = (v2 / xs.len() as f64).sqrt();
        let scheme_rms = match &scheme {
            Some(sm) => Some(sm.average_variance(n)?.sqrt()),
            None => None,
        };
        rows.push(ErgodicRow {
            n,
            t,
            rms: r,
            rms_se: if r > 0.0 { se_ms / (2.0 * r) } else { 0.0 },
            oracle_rms: var_avg(AvgVarianceQuery::new(n, t, ens.kind)?, quad)?.sqrt(),
            scheme_rms,
            bound_constant: r / (t * log_plus(1.0 / t) * n.ln() / n).sqrt(),
        });
    }
    Ok(rows)
}

/// RMS of the averages along `ns`, with the oracle value at each `N`.
pub fn ergodic_check(
    t: f64,
    ns: &[f64],
    replicas: u64,
    seed: u64,
    kind: FieldKind,
    res: &Resolution,
    quad: QuadratureSpec,
) -> Result<Vec<ErgodicRow>> {
    check_scales(ns)?;
    check_replicas(replicas)?;
    let ens = simulate_averages(kind, ns, &[t], replicas, seed, res)?;
    ergodic_from_ensemble(&ens, t, res, quad)
}

/// `ℛ_{N,t} = 𝒮²/(t log(1/t))` for `t ∈ (0, 1/e]`.
pub fn roughness(s: f64, t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= (-1.0f64).exp() * (1.0 + 1e-12)) {
        return domain(format!("roughness needs t in (0, 1/e], got {t}"));
    }
    Ok(s * s / (t * (1.0 / t).ln().max(1.0)))
}

/// Roughness along one path and its running maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughnessSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub running_max: Vec<f64>,
}

/// `ℛ_{N,t}` at each `t` in `t_grid`, read from `path`.
pub fn roughness_series(path: &AveragePath, t_grid: &[f64]) -> Result<RoughnessSeries> {
    let mut out = RoughnessSeries {
        times: t_grid.to_vec(),
        values: Vec::with_capacity(t_grid.len()),
        running_max: Vec::with_capacity(t_grid.len()),
    };
    let mut top = f64::NEG_INFINITY;
    for &t in t_grid {
        let i = path
            .times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t)
            .ok_or_else(|| Error::Argument(format!("path does not cover t={t}")))?;
        let r = roughness(path.values[i], t)?;
        top = top.max(r);
        out.values.push(r);
        out.running_max.push(top);
    }
    Ok(out)
}

/// Mean roughness and the Paley–Zygmund frequency at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughnessRow {
    #[serde(rename = "N")]
    pub n: f64,
    pub t: f64,
    pub mean: f64,
    pub mean_se: f64,
    /// `Var(𝒢_{N,t}) / (t log(1/t))` from the oracle.
    pub oracle_mean: f64,
    /// Fraction of replicas with `ℛ ≥ E[ℛ]/2`.
    pub pz_fraction: f64,
    pub pz_fraction_se: f64,
    /// `(E ℛ)² / (4 E[ℛ²])`.
    pub pz_bound: f64,
    pub pz_bound_se: f64,
}

/// Roughness statistics over an ensemble at `ns[ni]` for each `t` in `t_grid`.
pub fn roughness_check(
    ens: &Ensemble,
    ni: usize,
    t_grid: &[f64],
    seed: u64,
    quad: QuadratureSpec,
) -> Result<Vec<RoughnessRow>> {
    let n = ens.ns[ni];
    let series: Vec<RoughnessSeries> = ens.paths[ni]
        .iter()
        .map(|p| roughness_series(p, t_grid))
        .collect::<Result<_>>()?;
    let reps = series.len() as f64;
    let pz = |r: &[f64]| -> f64 {
        let m1 = r.iter().sum::<f64>() / r.len() as f64;
        let m2 = r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
        m1 * m1 / (4.0 * m2)
    };
    let mut rows = Vec::with_capacity(t_grid.len());
    for (k, &t) in t_grid.iter().enumerate() {
        let r: Vec<f64> = series.iter().map(|s| s.values[k]).collect();
        let (mean, var) = mean_variance(&r);
        let frac = r.iter().filter(|&&x| x >= 0.5 * mean).count() as f64 / reps;
        let log = (1.0 / t).ln().max(1.0);
        rows.push(RoughnessRow {
            n,
            t,
            mean,
            mean_se: (var / reps).sqrt(),
            oracle_mean: var_avg(AvgVarianceQuery::new(n, t, ens.kind)?, quad)? / (t * log),
            pz_fraction: frac,
            pz_fraction_se: (frac * (1.0 - frac) / reps).sqrt(),
            pz_bound: pz(&r),
            pz_bound_se: bootstrap_se(&r, pz, seed ^ k as u64),
        });
    }
    Ok(rows)
}
