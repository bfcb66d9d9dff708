//! Globally adaptive Gauss–Kronrod quadrature (G10/K21 pair).
//!
//! The interval with the largest error estimate is bisected until the summed
//! estimate meets `max(abs_tol, rel_tol·|value|)`. Infinite ranges are mapped
//! onto `[0, 1)` with `x = a + u/(1-u)`. The optional inverse-time endpoint
//! substitution handles integrable blow-ups at the left end of a finite range.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Endpoint treatment for finite domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EndpointSubstitution {
    #[default]
    None,
    /// `s = a + (b-a)/(1+θ)` with `θ = e^w - 1`, i.e. `s - a = (b-a)e^{-w}`.
    ///
    /// The exponential parametrization of θ lets the half-line in `w` be
    /// compactified with a bounded Jacobian while still resolving features
    /// that sit many decades below `b - a` near the left endpoint.
    InverseTime,
}

/// Error-control policy for one quadrature call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    pub endpoint_substitution: EndpointSubstitution,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 2000,
            endpoint_substitution: EndpointSubstitution::None,
        }
    }
}

impl QuadratureSpec {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_substitution(mut self, sub: EndpointSubstitution) -> Self {
        self.endpoint_substitution = sub;
        self
    }

    pub fn with_max_subdivisions(mut self, n: usize) -> Self {
        self.max_subdivisions = n;
        self
    }

    /// Same spec with both tolerances scaled by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.abs_tol *= factor;
        self.rel_tol *= factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok_tol = |v: f64| v.is_finite() && v > 0.0;
        if !ok_tol(self.abs_tol) || !ok_tol(self.rel_tol) {
            return Err(Error::Argument(format!(
                "quadrature tolerances must be positive, got abs={} rel={}",
                self.abs_tol, self.rel_tol
            )));
        }
        if self.max_subdivisions < 1 {
            return Err(Error::Argument("max_subdivisions must be at least 1".into()));
        }
        Ok(())
    }
}

/// Integration range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Finite(f64, f64),
    /// `[a, ∞)`
    UpperInfinite(f64),
    /// `(-∞, b]`
    LowerInfinite(f64),
    Whole,
}

/// Outcome of a converged quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub subdivisions: usize,
    pub evaluations: usize,
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_005_134_006,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Gauss weights for the nodes `XGK[1], XGK[3], …, XGK[9]`.
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk21<F>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    let fc = eval(f, center)?;
    let mut resk = WGK[10] * fc;
    let mut resg = 0.0;
    let mut resabs = resk.abs();
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = eval(f, center - dx)?;
        let f2 = eval(f, center + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let reskh = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - reskh).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }
    let result = resk * half;
    let resabs = resabs * half.abs();
    let resasc = resasc * half.abs();
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    Ok((result, err))
}

#[inline]
fn eval<F>(f: &mut F, x: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let v = f(x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("integrand is not finite at x={x:e}")))
    }
}

/// Adaptive integration of `f` over `[a, b]`, starting from the given cut
/// points (which must be sorted and inside `(a, b)`).
fn adapt<F>(f: &mut F, cuts: &[f64], spec: &QuadratureSpec) -> Result<QuadResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut heap = BinaryHeap::new();
    let mut value = 0.0;
    let mut error = 0.0;
    let mut evaluations = 0;
    for w in cuts.windows(2) {
        let (v, e) = gk21(f, w[0], w[1])?;
        evaluations += 21;
        value += v;
        error += e;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }
    let mut subdivisions = 0;
    // Segments too narrow to bisect keep their error in `frozen`.
    let mut frozen_value = 0.0;
    let mut frozen_error = 0.0;
    loop {
        let tol = spec.abs_tol.max(spec.rel_tol * value.abs());
        if error <= tol {
            break;
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if subdivisions >= spec.max_subdivisions || !(mid > worst.a && mid < worst.b) {
            if subdivisions >= spec.max_subdivisions {
                heap.push(worst);
                break;
            }
            frozen_value += worst.value;
            frozen_error += worst.error;
            continue;
        }
        let (v1, e1) = gk21(f, worst.a, mid)?;
        let (v2, e2) = gk21(f, mid, worst.b)?;
        evaluations += 42;
        subdivisions += 1;
        value += v1 + v2 - worst.value;
        error += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum from scratch to shed the drift of the running totals.
    let mut segs: Vec<Segment> = heap.into_vec();
    segs.sort_by(|x, y| x.a.total_cmp(&y.a));
    let value = segs.iter().map(|s| s.value).sum::<f64>() + frozen_value;
    let error = segs.iter().map(|s| s.error).sum::<f64>() + frozen_error;
    let tol = spec.abs_tol.max(spec.rel_tol * value.abs());
    if error > tol {
        return Err(Error::NonConvergence {
            value,
            error_estimate: error,
            subdivisions,
        });
    }
    Ok(QuadResult {
        value,
        error_estimate: error,
        subdivisions,
        evaluations,
    })
}

/// Integrate a fallible integrand; errors raised by `f` are propagated.
pub fn try_quad<F>(mut f: F, domain: Domain, spec: QuadratureSpec) -> Result<QuadResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    try_quad_points(&mut f, domain, &[], spec)
}

/// Integrate an infallible integrand.
pub fn quad<F>(mut f: F, domain: Domain, spec: QuadratureSpec) -> Result<QuadResult>
where
    F: FnMut(f64) -> f64,
{
    try_quad(|x| Ok(f(x)), domain, spec)
}

/// Like [`try_quad`], with interior break points for a finite domain.
///
/// Break points are ignored for infinite domains and when an endpoint
/// substitution is active.
pub fn try_quad_points<F>(f: &mut F, domain: Domain, points: &[f64], spec: QuadratureSpec) -> Result<QuadResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    spec.validate()?;
    match domain {
        Domain::Finite(a, b) => {
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::Argument(format!("finite domain has endpoints {a}, {b}")));
            }
            if a == b {
                return Ok(QuadResult {
                    value: 0.0,
                    error_estimate: 0.0,
                    subdivisions: 0,
                    evaluations: 0,
                });
            }
            if a > b {
                let r = try_quad_points(f, Domain::Finite(b, a), points, spec)?;
                return Ok(QuadResult { value: -r.value, ..r });
            }
            match spec.endpoint_substitution {
                EndpointSubstitution::None => {
                    let mut cuts = Vec::with_capacity(points.len() + 2);
                    cuts.push(a);
                    let mut inner: Vec<f64> = points.iter().copied().filter(|&p| p > a && p < b).collect();
                    inner.sort_by(f64::total_cmp);
                    inner.dedup();
                    cuts.extend(inner);
                    cuts.push(b);
                    adapt(f, &cuts, &spec)
                }
                EndpointSubstitution::InverseTime => {
                    // s - a = (b - a) e^{-w}, w = u/(1-u)
                    let len = b - a;
                    let mut g = |u: f64| -> Result<f64> {
                        let v = 1.0 - u;
                        let w = u / v;
                        let off = len * (-w).exp();
                        if off == 0.0 {
                            return Ok(0.0);
                        }
                        Ok(f(a + off)? * off / (v * v))
                    };
                    adapt(&mut g, &[0.0, 1.0], &spec)
                }
            }
        }
        Domain::UpperInfinite(a) => {
            let mut g = |u: f64| -> Result<f64> {
                let v = 1.0 - u;
                Ok(f(a + u / v)? / (v * v))
            };
            adapt(&mut g, &[0.0, 1.0], &spec)
        }
        Domain::LowerInfinite(b) => {
            let mut g = |u: f64| -> Result<f64> {
                let v = 1.0 - u;
                Ok(f(b - u / v)? / (v * v))
            };
            adapt(&mut g, &[0.0, 1.0], &spec)
        }
        Domain::Whole => {
            let mut g = |u: f64| -> Result<f64> {
                let v = 1.0 - u;
                let x = u / v;
                Ok((f(x)? + f(-x)?) / (v * v))
            };
            adapt(&mut g, &[0.0, 1.0], &spec)
        }
    }
}

/// Integrate over `[a, b]` with the inverse-time substitution applied at
/// both ends (split at the midpoint). Suited to integrands with integrable
/// singularities at either endpoint.
///
/// The integrand receives `(s, b - s)`; on the right half the distance to `b`
/// is exact, so factors like `1/(b - s)` stay finite arbitrarily close to `b`.
pub fn try_quad_both_ends<F>(mut f: F, a: f64, b: f64, spec: QuadratureSpec) -> Result<QuadResult>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let mid = 0.5 * (a + b);
    let spec = spec.with_substitution(EndpointSubstitution::InverseTime);
    let left = try_quad(|s| f(s, b - s), Domain::Finite(a, mid), spec)?;
    // mirror the right half so its endpoint at b becomes a left endpoint
    let right = try_quad(|r| f(b - r, r), Domain::Finite(0.0, b - mid), spec)?;
    Ok(QuadResult {
        value: left.value + right.value,
        error_estimate: left.error_estimate + right.error_estimate,
        subdivisions: left.subdivisions + right.subdivisions,
        evaluations: left.evaluations + right.evaluations,
    })
}
