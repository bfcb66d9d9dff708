//! Special functions θ, φ, G and g, Gaussian helpers, and the quadrature
//! engine used by every oracle.

pub mod quad;

use std::f64::consts::{E, PI, SQRT_2};

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
pub use quad::{
    quad, try_quad, try_quad_both_ends, try_quad_points, Domain, EndpointSubstitution, QuadResult, QuadratureSpec,
};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, accurate in both tails.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal survival function `1 - Φ(z)`.
#[inline]
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// `P(lo < Z < hi)` for a standard normal `Z`, without cancellation when both
/// bounds sit in the same tail.
pub fn normal_interval_prob(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        0.0
    } else if lo >= 0.0 {
        std_normal_sf(lo) - std_normal_sf(hi)
    } else if hi <= 0.0 {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    } else {
        1.0 - std_normal_cdf(lo) - std_normal_sf(hi)
    }
}

/// `Ψ(z) = zΦ(z) + ϕ(z)`, the antiderivative of Φ that vanishes at -∞.
#[inline]
pub fn psi(z: f64) -> f64 {
    z * std_normal_cdf(z) + std_normal_pdf(z)
}

/// `∫_a^b Φ(z) dz`, arranged so the result keeps relative accuracy when the
/// interval lies deep in either tail.
pub fn integral_of_cdf(a: f64, b: f64) -> f64 {
    if b < a {
        return -integral_of_cdf(b, a);
    }
    if a >= 0.0 {
        // Φ = 1 - Φ(-z); ∫_a^b Φ(-z) dz = Ψ(-a) - Ψ(-b)
        (b - a) - (psi(-a) - psi(-b))
    } else if b <= 0.0 {
        psi(b) - psi(a)
    } else {
        integral_of_cdf(a, 0.0) + integral_of_cdf(0.0, b)
    }
}

/// `log₊(w) = log(e + w)` for `w ≥ 0`.
#[inline]
pub fn log_plus(w: f64) -> f64 {
    (E + w).ln()
}

/// θ(s) = e^{s/4} √(πs) Φ(√(s/2)), the exact correction in
/// `E[u(s,z)²] = p_s(z)² (1 + θ(s))`.
pub fn theta(s: f64) -> Result<f64> {
    if !(s.is_finite() && s > 0.0) {
        return domain(format!("theta requires s > 0, got {s}"));
    }
    Ok(theta_unchecked(s))
}

#[inline]
pub(crate) fn theta_unchecked(s: f64) -> f64 {
    (s / 4.0).exp() * (PI * s).sqrt() * std_normal_cdf((s / 2.0).sqrt())
}

/// φ(z) = (1 - cos z)/z², with φ(0) = 1/2.
///
/// Evaluated as `½ (sin(z/2)/(z/2))²`, which avoids cancellation near 0.
#[inline]
pub fn phi(z: f64) -> f64 {
    let h = 0.5 * z;
    if h == 0.0 {
        return 0.5;
    }
    let r = h.sin() / h;
    0.5 * r * r
}

/// Arguments of `G_{N,t}(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GFnQuery {
    #[serde(rename = "N")]
    pub n: f64,
    pub t: f64,
    pub x: f64,
}

impl GFnQuery {
    pub fn new(n: f64, t: f64, x: f64) -> Result<Self> {
        let q = Self { n, t, x };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n.is_finite() && self.n >= E) {
            return domain(format!("G requires N >= e, got {}", self.n));
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return domain(format!("G requires t > 0, got {}", self.t));
        }
        if !(self.x.is_finite() && self.x != 0.0) {
            return domain(format!("G requires finite x != 0, got {}", self.x));
        }
        Ok(())
    }

    /// The shift `a = t x²/N²` in `∫₀^∞ e^{-s}/(s + a) ds`.
    pub fn shift(&self) -> f64 {
        let r = self.x / self.n;
        self.t * r * r
    }
}

/// `G_{N,t}(x) = (t/log N) ∫₀^t exp(-((t-s)t/s) x²/N²) ds/s`.
///
/// With `s = t e^{-w}` the integral becomes `∫₀^∞ exp(-a(e^w - 1)) dw`, and
/// `v = a(e^w - 1)` turns that into `∫₀^∞ e^{-v}/(v + a) dv`. The `w` form
/// is integrated: it is bounded by 1 and needs no special endpoint care.
pub fn g_fn(q: GFnQuery, spec: QuadratureSpec) -> Result<f64> {
    q.validate()?;
    let a = q.shift();
    if a < 1e-250 {
        // e^a E1(a) = -γ - log a + O(a log a); the quadrature would run off to
        // w ≈ 575 for no gain, and `a` itself may have underflowed
        let log_a = q.t.ln() + 2.0 * (q.x.abs().ln() - q.n.ln());
        return Ok(q.t / q.n.ln() * (-EULER_GAMMA - log_a));
    }
    let spec = spec.with_substitution(EndpointSubstitution::None);
    // The integrand is ≈1 up to w ≈ log(1/a) and then collapses; cutting there
    // gives the adaptive pass a head start.
    let knee = (1.0 / a).ln().max(0.0);
    let r = if knee > 0.0 {
        let head = quad(|w| (-a * w.exp_m1()).exp(), Domain::Finite(0.0, knee), spec)?;
        let tail = quad(|w| (-a * w.exp_m1()).exp(), Domain::UpperInfinite(knee), spec)?;
        head.value + tail.value
    } else {
        quad(|w| (-a * w.exp_m1()).exp(), Domain::UpperInfinite(0.0), spec)?.value
    };
    Ok(q.t / q.n.ln() * r)
}

/// The three pieces of `∫₀^∞ e^{-s}/(s + a) ds = A - B + C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GDecomposition {
    /// `∫₀¹ ds/(s + a) = log(1/a + 1)`
    pub a_n: f64,
    /// `∫₀¹ (1 - e^{-s})/(s + a) ds`
    pub b_n: f64,
    /// `∫₁^∞ e^{-s}/(s + a) ds`
    pub c_n: f64,
    /// `(t/log N)(A - B + C)`
    pub value: f64,
}

/// `G_{N,t}(x)` through the split into a logarithm and two bounded integrals.
pub fn g_fn_decomposition(q: GFnQuery, spec: QuadratureSpec) -> Result<GDecomposition> {
    q.validate()?;
    let a = q.shift();
    let spec = spec.with_substitution(EndpointSubstitution::None);
    let a_n = (1.0 / a).ln_1p();
    let b_n = quad(|s| -(-s).exp_m1() / (s + a), Domain::Finite(0.0, 1.0), spec)?.value;
    let c_n = quad(|s| (-s).exp() / (s + a), Domain::UpperInfinite(1.0), spec)?.value;
    Ok(GDecomposition {
        a_n,
        b_n,
        c_n,
        value: q.t / q.n.ln() * (a_n - b_n + c_n),
    })
}

/// `g_{N,t}(s,y) = (1/N) ∫₀^N p_{s(t-s)/t}(y - (s/t)x) dx`, in closed form.
///
/// Substituting `x` gives `(t/(sN)) P((y - sN/t)/σ < Z < y/σ)` with
/// `σ² = s(t-s)/t`.
pub fn g_weight(n: f64, t: f64, s: f64, y: f64) -> Result<f64> {
    if !(n.is_finite() && n > 0.0) {
        return domain(format!("g requires N > 0, got {n}"));
    }
    if !(t.is_finite() && t > 0.0) {
        return domain(format!("g requires t > 0, got {t}"));
    }
    if !(s > 0.0 && s < t) {
        return domain(format!("g requires s in (0, t), got s={s}, t={t}"));
    }
    if !y.is_finite() {
        return domain(format!("g requires finite y, got {y}"));
    }
    Ok(g_weight_unchecked(n, t, s, y))
}

#[inline]
pub(crate) fn g_weight_unchecked(n: f64, t: f64, s: f64, y: f64) -> f64 {
    let c = s / t;
    let sd = (s * (t - s) / t).sqrt();
    normal_interval_prob((y - c * n) / sd, y / sd) / (c * n)
}

/// `∫ g_{N,t}(s,y) dy` over `[y_lo, y_hi]`, in closed form via [`integral_of_cdf`].
pub(crate) fn g_weight_integral(n: f64, t: f64, s: f64, y_lo: f64, y_hi: f64) -> f64 {
    let c = s / t;
    let sd = (s * (t - s) / t).sqrt();
    let shift = c * n / sd;
    let (a, b) = (y_lo / sd, y_hi / sd);
    let width = (y_hi - y_lo) / sd;
    // ∫_a^b [Φ(z) - Φ(z - δ)] dz, grouped so the two large pieces never cancel
    let diff = if shift < width {
        cdf_span(b - shift, b, shift) - cdf_span(a - shift, a, shift)
    } else {
        cdf_span(a, b, width) - cdf_span(a - shift, b - shift, width)
    };
    sd * diff / (c * n)
}

/// `∫_lo^hi Φ(z) dz` where the caller supplies `len = hi - lo` without the
/// rounding error of the subtraction; the dominant term is then exact.
fn cdf_span(lo: f64, hi: f64, len: f64) -> f64 {
    if lo >= 0.0 {
        len - (psi(-lo) - psi(-hi))
    } else {
        integral_of_cdf(lo, hi)
    }
}

/// `J(ε) = ∫ (ε ∧ z^{-2}) log₊(1/|z|) dz` by quadrature.
pub fn j_integral(eps: f64, spec: QuadratureSpec) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return domain(format!("J requires eps in (0, 1), got {eps}"));
    }
    let z0 = 1.0 / eps.sqrt();
    // the log-time map is kept to [0, 1], where the log singularity is; over
    // [1, z0] it would put a knee near ln z0 that can fool the error estimate
    let near = quad(
        |z| eps * log_plus(1.0 / z),
        Domain::Finite(0.0, 1.0),
        spec.with_substitution(EndpointSubstitution::InverseTime),
    )?;
    let far = quad(
        |z| eps * log_plus(1.0 / z),
        Domain::Finite(1.0, z0),
        spec.with_substitution(EndpointSubstitution::None),
    )?;
    let outer = quad(
        |z| log_plus(1.0 / z) / (z * z),
        Domain::UpperInfinite(z0),
        spec.with_substitution(EndpointSubstitution::None),
    )?;
    Ok(2.0 * (near.value + far.value + outer.value))
}

/// Closed form of [`j_integral`].
pub fn j_closed_form(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return domain(format!("J requires eps in (0, 1), got {eps}"));
    }
    let w = eps.sqrt();
    let z0 = 1.0 / w;
    let inner = z0 * log_plus(w) + (E * z0).ln_1p() / E;
    let outer = (E + w) * (E + w).ln() - w - E;
    Ok(2.0 * (eps * inner + outer))
}

/// `∫₀^{2πK} φ(z) g(z) dz`, summed over the `K` arches of φ between its zeros.
///
/// The first arch uses the inverse-time substitution so that `g` may have an
/// integrable singularity at 0.
pub fn phi_arches<F>(mut g: F, arches: usize, spec: QuadratureSpec) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let two_pi = 2.0 * PI;
    let mut total = 0.0;
    for k in 0..arches {
        let (a, b) = (two_pi * k as f64, two_pi * (k + 1) as f64);
        let sub = if k == 0 {
            EndpointSubstitution::InverseTime
        } else {
            EndpointSubstitution::None
        };
        let r = try_quad(
            |z| Ok(phi(z) * g(z)?),
            Domain::Finite(a, b),
            spec.with_substitution(sub),
        )?;
        total += r.value;
    }
    Ok(total)
}

/// `∫_Z^∞ φ(z) dz` for `Z = 2πK`, via the asymptotic expansion.
pub fn phi_tail(z: f64) -> f64 {
    let z2 = z * z;
    1.0 / z - 2.0 / (z * z2) + 24.0 / (z2 * z2 * z)
}

/// `∫ φ(z) dz` over the whole line (equals π).
pub fn phi_total_integral(spec: QuadratureSpec) -> Result<f64> {
    let k = 200;
    let head = phi_arches(|_| Ok(1.0), k, spec)?;
    Ok(2.0 * (head + phi_tail(2.0 * PI * k as f64)))
}

/// `∫ φ(z) log₊(1/|z|) dz`.
pub fn phi_log_plus_integral(spec: QuadratureSpec) -> Result<f64> {
    let k = 2000;
    let z = 2.0 * PI * k as f64;
    // beyond Z, log₊(1/z) = 1 + 1/(ez) - 1/(2e²z²) + …; the cos part of φ
    // contributes only at higher order
    let rest = 1.0 / (E * 2.0 * z * z) - 1.0 / (2.0 * E * E * 3.0 * z * z * z);
    let head = phi_arches(|z| Ok(log_plus(1.0 / z)), k, spec)?;
    Ok(2.0 * (head + phi_tail(z) + rest))
}

/// `K = (6/π) ∫ φ(z) log₊(1/|z|) dz`.
pub fn k_constant(spec: QuadratureSpec) -> Result<f64> {
    Ok(6.0 / PI * phi_log_plus_integral(spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tight() -> QuadratureSpec {
        QuadratureSpec::new(1e-14, 1e-13).with_max_subdivisions(5000)
    }

    /// Exponential integral scaled: `e^a E1(a)`, by series or continued fraction.
    fn exp_e1(a: f64) -> f64 {
        if a < 1.0 {
            let mut sum = 0.0;
            let mut term = 1.0;
            for k in 1..200 {
                term *= -a / k as f64;
                let add = -term / k as f64;
                sum += add;
                if add.abs() < 1e-18 * sum.abs() {
                    break;
                }
            }
            let e1 = -0.577_215_664_901_532_9 - a.ln() + sum;
            a.exp() * e1
        } else {
            // modified Lentz on e^a E1(a) = 1/(a+1-1/(a+3-4/(a+5-…)))
            let tiny = 1e-300;
            let mut b = a + 1.0;
            let mut c = 1.0 / tiny;
            let mut d = 1.0 / b;
            let mut h = d;
            for i in 1..500 {
                let an = -((i * i) as f64);
                b += 2.0;
                d = 1.0 / (an * d + b);
                c = b + an / c;
                let del = c * d;
                h *= del;
                if (del - 1.0).abs() < 1e-16 {
                    break;
                }
            }
            h
        }
    }

    #[test]
    fn theta_pins() {
        let cases = [
            (2.0, 3.477_051_811_703_694_5),
            (1.0, 1.730_234_433_703_700_2),
            (0.5, 0.982_008_747_678_996_9),
            (0.25, 0.602_032_725_223_878_0),
        ];
        for (s, v) in cases {
            let th = theta(s).unwrap();
            assert!((th - v).abs() < 2e-15 * v, "theta({s}) = {th}");
        }
        assert!(theta(1e-8).unwrap() < 1e-3);
        assert!(theta(0.0).is_err());
        assert!(theta(-1.0).is_err());
    }

    #[test]
    fn theta_matches_its_integral_form() {
        for &s in &[0.1f64, 1.0, 4.0] {
            let q = quad(
                |y| (-y * y / 2.0).exp(),
                Domain::LowerInfinite((s / 2.0).sqrt()),
                tight(),
            )
            .unwrap();
            let direct = (s / 4.0).exp() * (s / 2.0).sqrt() * q.value;
            assert!((direct - theta(s).unwrap()).abs() < 1e-12 * direct);
        }
    }

    #[test]
    fn theta_bound_and_monotone() {
        for i in 1..=100 {
            let s = 0.1 * i as f64;
            assert!(theta(s).unwrap() <= (s / 4.0).exp() * (PI * s).sqrt());
        }
        let mut prev = 0.0;
        for i in 1..=1000 {
            let th = theta(0.01 * i as f64).unwrap();
            assert!(th > prev);
            prev = th;
        }
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(0.0), 0.5);
        assert!((phi(PI) - 2.0 / (PI * PI)).abs() < 1e-16);
        let z = 1e-5;
        assert!((phi(z) - 0.5).abs() < 1e-11);
        for &z in &[0.3, 2.0, 7.5, 40.0] {
            let naive = (1.0 - f64::cos(z)) / (z * z);
            assert!((phi(z) - naive).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn phi_bounds(z in -1e3f64..1e3) {
            let v = phi(z);
            prop_assert_eq!(v, phi(-z));
            prop_assert!(v <= 0.5);
            prop_assert!(v >= 0.0);
            if z.abs() >= 2.0 {
                prop_assert!(v <= 2.0 / (z * z));
            }
        }
    }

    #[test]
    fn phi_integrates_to_pi() {
        let v = phi_total_integral(QuadratureSpec::new(1e-13, 1e-12)).unwrap();
        assert!((v - PI).abs() < 1e-10, "{v}");
    }

    #[test]
    fn interval_prob_tails() {
        // deep right tail: naive difference of CDFs would be 0
        let p = normal_interval_prob(30.0, 31.0);
        let exact = std_normal_sf(30.0) - std_normal_sf(31.0);
        assert!(p > 0.0 && (p - exact).abs() <= 1e-14 * exact);
        assert!((normal_interval_prob(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-15);
        assert_eq!(normal_interval_prob(1.0, -1.0), 0.0);
    }

    #[test]
    fn integral_of_cdf_matches_quadrature() {
        for &(a, b) in &[(-3.0, 2.0), (1.0, 9.0), (-12.0, -4.0), (30.0, 31.0), (-0.5, 0.5)] {
            let q = quad(std_normal_cdf, Domain::Finite(a, b), tight()).unwrap();
            assert!((integral_of_cdf(a, b) - q.value).abs() < 1e-12 * (1.0 + q.value.abs()));
        }
    }

    #[test]
    fn g_limit_pin() {
        // |G_{1e12,1}(1) - 2|, frozen from a 30-digit evaluation of (t/log N) e^a E1(a)
        let q = GFnQuery::new(1e12, 1.0, 1.0).unwrap();
        let g = g_fn(q, tight()).unwrap();
        assert!((g - 1.979_109_868_488_762_3).abs() < 1e-12, "{g}");
        assert!((g - 2.0).abs() < 0.021);
    }

    #[test]
    fn g_routes_agree() {
        let pts = [
            (10.0, 0.5, 0.3),
            (1e3, 2.0, 7.0),
            (E, 1e-3, 1e-4),
            (1e8, 0.1, 1e9),
            (50.0, 5.0, 400.0),
            (1e12, 1.0, 1.0),
            (1e3, 1.0, 1e-126),
        ];
        for (n, t, x) in pts {
            let q = GFnQuery::new(n, t, x).unwrap();
            let direct = g_fn(q, tight()).unwrap();
            let dec = g_fn_decomposition(q, tight()).unwrap();
            let exact = t / n.ln() * exp_e1(q.shift());
            assert!(
                (direct - dec.value).abs() < 1e-10 * direct.max(1e-300) + 1e-14,
                "{n} {t} {x}"
            );
            assert!(
                (direct - exact).abs() < 1e-11 * exact,
                "{n} {t} {x}: {direct} vs {exact}"
            );
            assert!(dec.b_n > 0.0 && dec.b_n < 1.0 && dec.c_n > 0.0 && dec.c_n < 1.0);
        }
    }

    #[test]
    fn g_query_validation() {
        assert!(GFnQuery::new(2.0, 1.0, 1.0).is_err());
        assert!(GFnQuery::new(10.0, 0.0, 1.0).is_err());
        assert!(GFnQuery::new(10.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn g_weight_integrates_to_one() {
        for &(n, t, s) in &[(10.0, 1.0, 0.3), (100.0, 0.5, 0.49), (3.0, 2.0, 1e-4)] {
            let r = quad(|y| g_weight(n, t, s, y).unwrap(), Domain::Whole, tight()).unwrap();
            assert!((r.value - 1.0).abs() < 1e-10, "{n} {t} {s}: {}", r.value);
            let closed = g_weight_integral(n, t, s, -50.0, 50.0 + n);
            assert!((closed - 1.0).abs() < 1e-12, "{closed}");
        }
    }

    #[test]
    fn g_weight_matches_quadrature_definition() {
        let (n, t, s, y) = (7.0, 1.3, 0.4, 2.2);
        let sd2 = s * (t - s) / t;
        let r = quad(
            |x| crate::kernels::p(sd2, y - s / t * x),
            Domain::Finite(0.0, n),
            tight(),
        )
        .unwrap();
        assert!((r.value / n - g_weight(n, t, s, y).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn g_weight_terminal_limit() {
        let (n, t) = (5.0, 1.0);
        let s = t * (1.0 - 1e-6);
        // inside (0, N) the weight tends to 1/N, outside to 0
        for &(y, lim) in &[(2.5, 1.0 / n), (0.01, 1.0 / n), (-0.01, 0.0), (5.01, 0.0)] {
            let g = g_weight(n, t, s, y).unwrap();
            assert!((g - lim).abs() < 1e-6, "y={y}: {g}");
        }
        assert!(g_weight(n, t, t, 1.0).is_err());
        assert!(g_weight(n, t, 0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn g_weight_bound(ln_n in 0.0f64..12.0, t in 0.01f64..5.0, frac in 0.001f64..0.999, y in -50.0f64..50.0) {
            let n = ln_n.exp();
            let s = frac * t;
            let g = g_weight(n, t, s, y * n).unwrap();
            prop_assert!(g >= 0.0);
            prop_assert!(g <= (t / s) / n * (1.0 + 1e-14));
        }
    }

    #[test]
    fn j_pin_and_bound() {
        let v = j_integral(0.01, tight()).unwrap();
        assert!((v - 0.435_424_852_131_907_09).abs() < 1e-12, "{v}");
        assert!((j_closed_form(0.01).unwrap() - v).abs() < 1e-12);
        assert!(v < 1.0);
        assert!(j_integral(1.0, tight()).is_err());
    }

    #[test]
    fn j_quadrature_matches_the_closed_form_across_scales() {
        // 4.03e-8 once slipped past the error estimate with a 9e-7 gap
        let spec = QuadratureSpec::default();
        for &eps in &[1e-8, 4.03e-8, 4.06e-8, 1e-5, 0.3, 0.999] {
            let q = j_integral(eps, spec).unwrap();
            let c = j_closed_form(eps).unwrap();
            assert!((q / c - 1.0).abs() < 1e-9, "eps {eps}: {q} vs {c}");
        }
    }

    #[test]
    fn k_constant_pin() {
        let spec = QuadratureSpec::new(1e-13, 1e-12);
        let i = phi_log_plus_integral(spec).unwrap();
        assert!((i - 4.248_220_591_244_701).abs() < 1e-9, "{i}");
        let k = k_constant(spec).unwrap();
        assert!((k - 8.113_503_677_296_42).abs() < 2e-9);
    }
}
