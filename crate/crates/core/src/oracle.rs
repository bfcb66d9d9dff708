//! Quadrature oracles for second moments of `u`, covariances of `U`, and the
//! variance and covariance of spatial averages.
//!
//! Every integral over the noise time `s` has an integrable singularity at
//! `s = 0` (and at `s = t` for equal times and points), so these routines
//! always apply the inverse-time substitution at both ends of `[0, t₁∧t₂]`,
//! whatever the substitution field of the supplied `QuadratureSpec` says.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::kernels::p;
use crate::specfun::{
    g_fn, phi_arches, psi, std_normal_cdf, theta_unchecked, try_quad_both_ends, try_quad_points, Domain,
    EndpointSubstitution, GFnQuery, QuadratureSpec,
};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Which random field a variance query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// The renormalized PAM solution `U`.
    #[default]
    Pam,
    /// The Gaussian field `V` obtained by freezing `U ≡ 1` inside the noise integral.
    GaussianProxy,
}

impl FieldKind {
    /// Weight `1 + θ(s)` for PAM, `1` for the proxy.
    #[inline]
    fn weight(self, s: f64) -> f64 {
        match self {
            FieldKind::Pam => 1.0 + theta_unchecked(s),
            FieldKind::GaussianProxy => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Pam => "pam",
            FieldKind::GaussianProxy => "gaussian_proxy",
        }
    }
}

/// Arguments of `Cov[U(t₁,x), U(t₂,y)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovQuery {
    pub t1: f64,
    pub t2: f64,
    pub x: f64,
    pub y: f64,
}

impl CovQuery {
    pub fn new(t1: f64, t2: f64, x: f64, y: f64) -> Result<Self> {
        let q = Self { t1, t2, x, y };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        check_time("t1", self.t1)?;
        check_time("t2", self.t2)?;
        if !(self.x.is_finite() && self.y.is_finite()) {
            return domain(format!("points must be finite, got x={} y={}", self.x, self.y));
        }
        Ok(())
    }
}

/// Arguments of `Var(𝒮_{N,t})` or `Var(𝒢_{N,t})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvgVarianceQuery {
    #[serde(rename = "N")]
    pub n: f64,
    pub t: f64,
    pub field_kind: FieldKind,
}

impl AvgVarianceQuery {
    pub fn new(n: f64, t: f64, field_kind: FieldKind) -> Result<Self> {
        let q = Self { n, t, field_kind };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.n)?;
        check_time("t", self.t)
    }
}

fn check_time(name: &str, t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return domain(format!("{name} must be positive and finite, got {t}"));
    }
    Ok(())
}

fn check_scale(n: f64) -> Result<()> {
    if !(n.is_finite() && n >= E) {
        return domain(format!("N must be at least e, got {n}"));
    }
    Ok(())
}

fn singular_spec(spec: QuadratureSpec) -> QuadratureSpec {
    spec.with_substitution(EndpointSubstitution::InverseTime)
}

/// `E[u(s,z)²] = p_s(z)² (1 + θ(s))`.
pub fn second_moment_u(s: f64, z: f64) -> Result<f64> {
    check_time("s", s)?;
    if !z.is_finite() {
        return domain(format!("z must be finite, got {z}"));
    }
    let ps = crate::kernels::log_heat_kernel(s, z)?;
    Ok((2.0 * ps).exp() * (1.0 + theta_unchecked(s)))
}

/// `Cov[U(t₁,x), U(t₂,y)] = ∫₀^{t₁∧t₂} p_{σ(s)}(s(x/t₁ - y/t₂)) (1 + θ(s)) ds`
/// with `σ(s) = s[(t₁-s)/t₁ + (t₂-s)/t₂]`.
pub fn cov_u(q: CovQuery, spec: QuadratureSpec) -> Result<f64> {
    cov_field(q, FieldKind::Pam, spec)
}

/// Covariance of either field at two space-time points.
pub fn cov_field(q: CovQuery, kind: FieldKind, spec: QuadratureSpec) -> Result<f64> {
    q.validate()?;
    let CovQuery { t1, t2, x, y } = q;
    let tm = t1.min(t2);
    let (g1, g2) = (t1 - tm, t2 - tm);
    let shift = x / t1 - y / t2;
    let r = try_quad_both_ends(
        |s, r| {
            // t_i - s = (t_i - T) + r keeps σ exact as s → T
            let var = s * ((g1 + r) / t1 + (g2 + r) / t2);
            if var <= 0.0 {
                return Ok(0.0);
            }
            Ok(p(var, s * shift) * kind.weight(s))
        },
        0.0,
        tm,
        singular_spec(spec),
    )?;
    Ok(r.value)
}

/// `∫₀^A ∫₀^B ϕ(u - v) dv du` for the standard normal density ϕ.
pub fn gaussian_rectangle(a: f64, b: f64) -> f64 {
    // symmetric in (A, B); fix the order so the result is too, bit for bit
    let (a, b) = if a >= b { (a, b) } else { (b, a) };
    if a < 1e-2 {
        return a * b * small_rectangle_ratio(a, b);
    }
    if a == b {
        // Ψ(A) - 2Ψ(0) + Ψ(-A) = A erf(A/√2) - 2ϕ(0)(1 - e^{-A²/2})
        return a * (2.0 * std_normal_cdf(a) - 1.0) + 2.0 * INV_SQRT_2PI * (-0.5 * a * a).exp_m1();
    }
    psi(a) - psi(0.0) - psi(a - b) + psi(-b)
}

/// `gaussian_rectangle(A, B) / (AB)` from the Taylor expansion of
/// `e^{-(u-v)²/2}` to fourth order; accurate for `max(A, B) < 1e-2`.
fn small_rectangle_ratio(a: f64, b: f64) -> f64 {
    let (a2, b2, ab) = (a * a, b * b, a * b);
    let s2 = a2 / 3.0 - ab / 2.0 + b2 / 3.0;
    let s4 = b2 * b2 / 5.0 - ab * b2 / 2.0 + 2.0 * a2 * b2 / 3.0 - a2 * ab / 2.0 + a2 * a2 / 5.0;
    INV_SQRT_2PI * (1.0 - s2 / 2.0 + s4 / 8.0)
}

/// `∫₀^N ∫₀^N p_σ(αx - βy) dx dy` in closed form.
pub fn heat_rectangle(n: f64, var: f64, alpha: f64, beta: f64) -> f64 {
    let sd = var.sqrt();
    let (a, b) = (alpha * n / sd, beta * n / sd);
    if a.max(b) < 1e-2 {
        // (σ^{1/2}/(αβ))·AB = N²/σ^{1/2}; kept apart to avoid overflow for tiny s
        return n * n / sd * small_rectangle_ratio(a, b);
    }
    sd / (alpha * beta) * gaussian_rectangle(a, b)
}

/// `Cov(𝒮_{N,t₁}, 𝒮_{N,t₂})` for the PAM field.
pub fn cov_avg(n: f64, t1: f64, t2: f64, spec: QuadratureSpec) -> Result<f64> {
    cov_avg_kind(n, t1, t2, FieldKind::Pam, spec)
}

/// `(1/N²) ∬_{[0,N]²} Cov[U(t₁,x), U(t₂,y)] dx dy`.
///
/// The spatial double integral of the covariance integrand is Gaussian in
/// `(x, y)` and is done in closed form, so only the `s` integral is numeric.
pub fn cov_avg_kind(n: f64, t1: f64, t2: f64, kind: FieldKind, spec: QuadratureSpec) -> Result<f64> {
    check_scale(n)?;
    check_time("t1", t1)?;
    check_time("t2", t2)?;
    let tm = t1.min(t2);
    let (g1, g2) = (t1 - tm, t2 - tm);
    let r = try_quad_both_ends(
        |s, r| {
            let var = s * ((g1 + r) / t1 + (g2 + r) / t2);
            let (alpha, beta) = (s / t1, s / t2);
            let inner = if var <= 0.0 {
                // σ = 0 only at s = T with t₁ = t₂: the kernel is a point mass
                n / alpha
            } else {
                heat_rectangle(n, var, alpha, beta)
            };
            Ok(inner * kind.weight(s))
        },
        0.0,
        tm,
        singular_spec(spec),
    )?;
    Ok(r.value / (n * n))
}

/// `Var(𝒮_{N,t})` (PAM) or `Var(𝒢_{N,t})` (proxy).
pub fn var_avg(q: AvgVarianceQuery, spec: QuadratureSpec) -> Result<f64> {
    q.validate()?;
    cov_avg_kind(q.n, q.t, q.t, q.field_kind, spec)
}

/// `N/log N` normalization.
pub fn clt_scale(n: f64) -> f64 {
    n / n.ln()
}

/// `Cov(𝒮_{N,t₁}, 𝒮_{N,t₂}) · N/log N`, whose limit is `2(t₁∧t₂)`.
pub fn scaled_cov_avg(n: f64, t1: f64, t2: f64, kind: FieldKind, spec: QuadratureSpec) -> Result<f64> {
    Ok(cov_avg_kind(n, t1, t2, kind, spec)? * clt_scale(n))
}

/// Leading-order variance `2t log N / N`.
pub fn asymptotic_var(n: f64, t: f64) -> f64 {
    2.0 * t * n.ln() / n
}

/// `Var(𝒮_{N,t}) · N / (2t log N)`, which tends to 1.
pub fn var_ratio(q: AvgVarianceQuery, spec: QuadratureSpec) -> Result<f64> {
    Ok(var_avg(q, spec)? / asymptotic_var(q.n, q.t))
}

/// Equal-time covariance at lag `h`: `∫₀^t p_{2s(t-s)/t}(sh/t) w(s) ds`.
pub fn lag_covariance(t: f64, h: f64, kind: FieldKind, spec: QuadratureSpec) -> Result<f64> {
    cov_field(CovQuery::new(t, t, 0.0, h)?, kind, spec)
}

/// Average variance by the stationarity reduction
/// `(2/N²) ∫₀^N (N - h) C_t(h) dh`, with each `C_t(h)` its own quadrature.
///
/// Much slower than [`var_avg`]; kept as an independent cross-check.
pub fn var_avg_lag_route(q: AvgVarianceQuery, spec: QuadratureSpec) -> Result<f64> {
    q.validate()?;
    let AvgVarianceQuery { n, t, field_kind } = q;
    let inner = spec.scaled(1e-2);
    let sd = t.sqrt();
    let pts: Vec<f64> = [0.01, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|k| k * sd)
        .filter(|&h| h < n)
        .collect();
    let mut f = |h: f64| -> Result<f64> { Ok((n - h) * lag_covariance(t, h, field_kind, inner)?) };
    let r = try_quad_points(
        &mut f,
        Domain::Finite(0.0, n),
        &pts,
        spec.with_substitution(EndpointSubstitution::None),
    )?;
    Ok(2.0 * r.value / (n * n))
}

/// Proxy variance by the spectral route
/// `Var(𝒢_{N,t}) = (log N/(πN)) ∫ φ(z) G_{N,t}(z) dz`.
pub fn var_avg_proxy_spectral(n: f64, t: f64, spec: QuadratureSpec) -> Result<f64> {
    check_scale(n)?;
    check_time("t", t)?;
    let inner = spec.scaled(1e-2);
    // G is flat-ish up to z ~ N/√t and then decays like N²/(z² log N)
    let cut = 50.0 * n / t.sqrt();
    let arches = (cut / (2.0 * PI)).ceil() as usize;
    let z = 2.0 * PI * arches as f64;
    let head = phi_arches(|z| g_fn(GFnQuery::new(n, t, z)?, inner), arches, spec)?;
    // tail: φ·G ≈ (1 - cos z)/z² · c/z² (1 - N²/(t z²)), c = N²/log N
    let c = n * n / n.ln();
    let tail = c * (1.0 / (3.0 * z.powi(3)) - n * n / (t * 5.0 * z.powi(5)));
    let integral = 2.0 * (head + tail);
    Ok(n.ln() / (PI * n) * integral)
}

/// `∫₀^N ∫₀^N p_t(x₁ - x₂) dx₁ dx₂` by nested adaptive quadrature.
pub fn heat_square_nested(n: f64, t: f64, spec: QuadratureSpec) -> Result<f64> {
    check_time("t", t)?;
    let inner_spec = spec.scaled(1e-2).with_substitution(EndpointSubstitution::None);
    let sd = t.sqrt();
    let mut outer = |x1: f64| -> Result<f64> {
        let mut f = |x2: f64| Ok(p(t, x1 - x2));
        let pts: Vec<f64> = [-8.0, -2.0, 0.0, 2.0, 8.0].iter().map(|k| x1 + k * sd).collect();
        Ok(try_quad_points(&mut f, Domain::Finite(0.0, n), &pts, inner_spec)?.value)
    };
    let pts: Vec<f64> = (1..=4).map(|k| k as f64 * sd).flat_map(|d| [d, n - d]).collect();
    Ok(try_quad_points(
        &mut outer,
        Domain::Finite(0.0, n),
        &pts,
        spec.with_substitution(EndpointSubstitution::None),
    )?
    .value)
}

/// `(N/π) ∫ φ(z) e^{-t z²/(2N²)} dz`.
pub fn heat_square_spectral(n: f64, t: f64, spec: QuadratureSpec) -> Result<f64> {
    check_time("t", t)?;
    // the Gaussian factor is below e^{-60} beyond z = 11 N/√t
    let cut = 11.0 * n / t.sqrt();
    let arches = (cut / (2.0 * PI)).ceil() as usize;
    let k = t / (2.0 * n * n);
    let head = phi_arches(|z| Ok((-k * z * z).exp()), arches, spec)?;
    Ok(n / PI * 2.0 * head)
}

/// `∫₀^N ∫₀^N p_t(x₁ - x₂) dx₁ dx₂` in closed form.
pub fn heat_square_closed(n: f64, t: f64) -> f64 {
    heat_rectangle(n, t, 1.0, 1.0)
}

/// Integrated covariance of the proxy field over the full line in `s`,
/// `∫₀^t p_{2s(t-s)/t}(0) ds = √(πt/4)`.
pub fn proxy_point_variance(t: f64) -> f64 {
    (PI * t / 4.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{theta, try_quad, GFnQuery};
    use nalgebra::{Matrix4, SymmetricEigen};
    use proptest::prelude::*;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::new(1e-13, 1e-11)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn second_moment_pin() {
        let v = second_moment_u(1.0, 0.0).unwrap();
        assert!(rel(v, 0.434_530_305_923_645_5) < 1e-15);
        assert_eq!(second_moment_u(0.7, 1.3).unwrap(), second_moment_u(0.7, -1.3).unwrap());
        let s = 1e-9;
        let ratio = second_moment_u(s, 0.0).unwrap() / crate::kernels::heat_kernel(s, 0.0).unwrap().powi(2);
        assert!((ratio - 1.0).abs() < 1e-4);
        assert!(second_moment_u(0.0, 0.0).is_err());
    }

    #[test]
    fn point_variance_is_theta() {
        // Var U(t,x) = ∫₀^t p_{2s(t-s)/t}(0)(1+θ(s)) ds collapses to θ(t)
        for &t in &[0.25, 0.5, 1.0, 2.0] {
            let v = cov_u(CovQuery::new(t, t, 0.3, 0.3).unwrap(), spec()).unwrap();
            assert!(rel(v, theta(t).unwrap()) < 1e-10, "t={t}: {v}");
            let g = cov_field(CovQuery::new(t, t, 0.0, 0.0).unwrap(), FieldKind::GaussianProxy, spec()).unwrap();
            assert!(rel(g, proxy_point_variance(t)) < 1e-10);
            assert!(v >= g);
        }
        assert!((proxy_point_variance(1.0) - 0.886_226_925_452_758).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn cov_symmetry(t1 in 0.05f64..3.0, t2 in 0.05f64..3.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
            let a = cov_u(CovQuery::new(t1, t2, x, y).unwrap(), spec()).unwrap();
            let b = cov_u(CovQuery::new(t2, t1, y, x).unwrap(), spec()).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12));
        }

        #[test]
        fn cov_stationary(t in 0.05f64..3.0, x in -5.0f64..5.0, y in -5.0f64..5.0, h in -10.0f64..10.0) {
            let a = cov_u(CovQuery::new(t, t, x, y).unwrap(), spec()).unwrap();
            let b = cov_u(CovQuery::new(t, t, x + h, y + h).unwrap(), spec()).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn covariance_matrix_is_psd() {
        for &t in &[0.3, 1.0] {
            let xs = [0.0, 1.0, 2.0, 3.0];
            let m = Matrix4::from_fn(|i, j| cov_u(CovQuery::new(t, t, xs[i], xs[j]).unwrap(), spec()).unwrap());
            let eig = SymmetricEigen::new(m);
            assert!(eig.eigenvalues.iter().all(|&l| l > -1e-9), "{:?}", eig.eigenvalues);
        }
    }

    #[test]
    fn rectangle_branches_agree() {
        // the series and closed-form branches meet continuously at the switch
        for &(a, b) in &[(1.0, 1.0), (1.0, 0.5), (1.0, 0.2)] {
            let lo = 0.999_999e-2;
            let hi = 1.000_001e-2;
            let v_lo = gaussian_rectangle(a * lo, b * lo) / (a * b * lo * lo);
            let v_hi = gaussian_rectangle(a * hi, b * hi) / (a * b * hi * hi);
            assert!((v_lo - v_hi).abs() < 1e-9, "{a} {b}: {v_lo} {v_hi}");
        }
        for &a in &[0.5, 3.0, 40.0] {
            let general = psi(a) - psi(0.0) - psi(a - a) + psi(-a);
            let v = gaussian_rectangle(a, a);
            assert!((v - general).abs() <= 1e-13 * v);
        }
        assert_eq!(gaussian_rectangle(2.0, 0.7), gaussian_rectangle(0.7, 2.0));
    }

    #[test]
    fn heat_square_three_routes() {
        for &n in &[10.0, 100.0] {
            for &t in &[0.5, 1.0, 2.0] {
                let nested = heat_square_nested(n, t, spec()).unwrap();
                let spectral = heat_square_spectral(n, t, spec()).unwrap();
                let closed = heat_square_closed(n, t);
                assert!(rel(nested, spectral) < 1e-8, "{n} {t}");
                assert!(rel(closed, spectral) < 1e-10, "{n} {t}");
            }
        }
    }

    /// Pins frozen from an independent 25-digit evaluation.
    const PAM_VAR: [(f64, f64, f64); 10] = [
        (0.5, 1e2, 0.050_089_949_763_731_701_535),
        (0.5, 1e3, 0.007_324_400_289_938_298_715_9),
        (0.5, 1e4, 0.000_962_930_020_449_967_638_21),
        (0.5, 1e6, 0.000_014_234_849_323_342_381_331),
        (0.5, 1e8, 1.884_002_557_818_113_732e-7),
        (1.0, 1e2, 0.101_905_520_079_317_641_3),
        (1.0, 1e3, 0.014_857_306_013_361_937_552),
        (1.0, 1e4, 0.001_947_277_015_983_428_966),
        (1.0, 1e6, 0.000_028_684_740_126_761_363_221),
        (1.0, 1e8, 3.789_510_591_282_501_635_8e-7),
    ];

    #[test]
    fn pam_average_variance_pins() {
        for (t, n, v) in PAM_VAR {
            let q = AvgVarianceQuery::new(n, t, FieldKind::Pam).unwrap();
            let got = var_avg(q, spec()).unwrap();
            assert!(rel(got, v) < 1e-9, "t={t} N={n}: {got} vs {v}");
        }
    }

    #[test]
    fn ratio_decreases_to_one() {
        for &t in &[0.5, 1.0] {
            let mut prev = f64::INFINITY;
            for &n in &[1e2, 1e3, 1e4, 1e6, 1e8] {
                let r = var_ratio(AvgVarianceQuery::new(n, t, FieldKind::Pam).unwrap(), spec()).unwrap();
                assert!(r > 1.0 && r < prev);
                prev = r;
            }
        }
    }

    #[test]
    fn proxy_routes_agree() {
        let q = AvgVarianceQuery::new(100.0, 0.5, FieldKind::GaussianProxy).unwrap();
        let closed = var_avg(q, spec()).unwrap();
        assert!(rel(closed, 0.042_528_347_525_914_856_427) < 1e-10);
        let lag = var_avg_lag_route(q, QuadratureSpec::new(1e-12, 1e-10)).unwrap();
        assert!(rel(lag, closed) < 1e-9);
        let spectral = var_avg_proxy_spectral(100.0, 0.5, QuadratureSpec::new(1e-12, 1e-10)).unwrap();
        assert!(rel(spectral, closed) < 1e-9);
        let pam = var_avg(
            AvgVarianceQuery {
                field_kind: FieldKind::Pam,
                ..q
            },
            spec(),
        )
        .unwrap();
        assert!(pam > closed);
    }

    #[test]
    fn pam_lag_route_agrees() {
        let q = AvgVarianceQuery::new(50.0, 1.0, FieldKind::Pam).unwrap();
        let a = var_avg(q, spec()).unwrap();
        let b = var_avg_lag_route(q, QuadratureSpec::new(1e-12, 1e-10)).unwrap();
        assert!(rel(a, b) < 1e-9);
    }

    #[test]
    fn cov_avg_properties() {
        let (n, t1, t2) = (1e6, 0.5, 1.0);
        let a = scaled_cov_avg(n, t1, t2, FieldKind::Pam, spec()).unwrap();
        let b = scaled_cov_avg(n, t2, t1, FieldKind::Pam, spec()).unwrap();
        assert!(rel(a, b) < 1e-10);
        assert!(rel(a, 1.030_352_737_767_490_6) < 1e-6, "{a}");
        let same = cov_avg(200.0, 0.7, 0.7, spec()).unwrap();
        let var = var_avg(AvgVarianceQuery::new(200.0, 0.7, FieldKind::Pam).unwrap(), spec()).unwrap();
        assert_eq!(same, var);
        // scaled off-diagonal entries head toward 2 min(t1, t2) = 1
        let mut prev = 0.0;
        for &n in &[1e2, 1e4, 1e6, 1e8] {
            let g = scaled_cov_avg(n, 0.5, 1.0, FieldKind::GaussianProxy, spec()).unwrap();
            assert!(g > prev && g < 1.0);
            prev = g;
        }
    }

    #[test]
    fn off_diagonal_matches_direct_double_integral() {
        // nested quadrature of the covariance of averages, no closed form
        let (n, t1, t2) = (3.0, 0.4, 0.9);
        let inner = QuadratureSpec::new(1e-12, 1e-10);
        let mut fx = |x: f64| -> Result<f64> {
            let mut fy = |y: f64| cov_field(CovQuery::new(t1, t2, x, y)?, FieldKind::Pam, inner);
            Ok(try_quad(&mut fy, Domain::Finite(0.0, n), QuadratureSpec::new(1e-11, 1e-9))?.value)
        };
        let direct = try_quad(&mut fx, Domain::Finite(0.0, n), QuadratureSpec::new(1e-10, 1e-8)).unwrap();
        let closed = cov_avg(n, t1, t2, spec()).unwrap();
        assert!(rel(direct.value / (n * n), closed) < 1e-7);
    }

    #[test]
    fn increasing_in_t() {
        let mut prev = 0.0;
        for i in 1..=20 {
            let t = 0.1 * i as f64;
            let v = var_avg(AvgVarianceQuery::new(100.0, t, FieldKind::Pam).unwrap(), spec()).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn proxy_small_time_and_envelope() {
        let quad = QuadratureSpec::new(1e-13, 1e-12);
        let k = crate::specfun::k_constant(quad).unwrap();
        let c_phi = crate::specfun::phi_log_plus_integral(quad).unwrap() / PI;
        for &n in &[10.0, 100.0, 1e4] {
            for &t in &[0.01, 0.05, 0.1, 0.3] {
                let v = var_avg(AvgVarianceQuery::new(n, t, FieldKind::GaussianProxy).unwrap(), spec()).unwrap();
                assert!((v - t * (1.0 / t).ln() / n).abs() <= k * t * n.ln() / n);
                let scaled = v * n / n.ln();
                assert!(scaled > 0.0 && scaled <= 7.0 * t * crate::specfun::log_plus(1.0 / t) * c_phi);
            }
        }
    }

    #[test]
    fn spectral_integrand_is_g() {
        let g = g_fn(GFnQuery::new(100.0, 0.5, 3.0).unwrap(), spec()).unwrap();
        assert!(g > 0.0);
    }

    #[test]
    fn query_validation() {
        assert!(AvgVarianceQuery::new(2.0, 1.0, FieldKind::Pam).is_err());
        assert!(AvgVarianceQuery::new(10.0, -1.0, FieldKind::Pam).is_err());
        assert!(CovQuery::new(1.0, 0.0, 0.0, 0.0).is_err());
        assert!(cov_avg(1.0, 1.0, 1.0, spec()).is_err());
    }
}
