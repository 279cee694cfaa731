//! Generalized Pareto distribution: distribution functions, the deviance used
//! as boosting objective, its analytic derivatives, the unconditional
//! maximum-likelihood fit and tail-quantile extrapolation.
//!
//! Formulas are written in terms of the standardized exceedance `x = z / σ`
//! and `u = γ x`. Wherever `1/γ` terms would cancel catastrophically the
//! γ-dependent parts switch to their power series about `γ = 0`, which
//! coincides with the exponential limit at `γ = 0` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|γ|` the distribution functions use the exponential limit.
pub const GAMMA_EPS: f64 = 1e-6;

/// Smallest admissible value of `1 + γ z / σ` before the support-violation
/// surrogate takes over.
pub const SUPPORT_FLOOR: f64 = 1e-10;

/// `|γ z / σ|` below which γ-dependent terms are evaluated by series.
const SERIES_CUTOFF: f64 = 1e-2;
const SERIES_TERMS: usize = 14;

/// Box for the unconditional MLE.
pub const MLE_SIGMA_MIN: f64 = 1e-8;
pub const MLE_SIGMA_MAX: f64 = 1e8;
pub const MLE_GAMMA_MIN: f64 = -0.45;
pub const MLE_GAMMA_MAX: f64 = 5.0;
pub const MLE_MIN_EXCEEDANCES: usize = 5;

/// Scale and shape of a generalized Pareto distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub sigma: f64,
    pub gamma: f64,
}

impl GpdParams {
    pub fn new(sigma: f64, gamma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("scale must be positive and finite, got {sigma}")));
        }
        if !gamma.is_finite() {
            return Err(Error::domain(format!("shape must be finite, got {gamma}")));
        }
        Ok(GpdParams { sigma, gamma })
    }

    /// Upper endpoint of the support, infinite unless `γ < 0`.
    pub fn upper_endpoint(&self) -> f64 {
        if self.gamma < 0.0 {
            -self.sigma / self.gamma
        } else {
            f64::INFINITY
        }
    }
}

/// A threshold exceedance `(y - u)_+`; zero encodes "below threshold".
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Exceedance(f64);

impl Exceedance {
    pub fn new(z: f64) -> Result<Self> {
        if z >= 0.0 && z.is_finite() {
            Ok(Exceedance(z))
        } else {
            Err(Error::domain(format!("exceedance must be finite and nonnegative, got {z}")))
        }
    }

    /// Excess of `y` over `threshold`, floored at zero.
    pub fn over(y: f64, threshold: f64) -> Self {
        let z = y - threshold;
        Exceedance(if z > 0.0 { z } else { 0.0 })
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0.0
    }
}

pub fn gpd_cdf(y: f64, p: GpdParams) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::domain(format!("GPD cdf needs y >= 0, got {y}")));
    }
    let GpdParams { sigma, gamma } = p;
    if gamma.abs() < GAMMA_EPS {
        return Ok(-(-y / sigma).exp_m1());
    }
    if gamma < 0.0 && y >= p.upper_endpoint() {
        return Ok(1.0);
    }
    let log_survival = -(gamma * y / sigma).ln_1p() / gamma;
    Ok(-log_survival.exp_m1())
}

pub fn gpd_quantile(prob: f64, p: GpdParams) -> Result<f64> {
    if !(0.0..1.0).contains(&prob) {
        return Err(Error::domain(format!("GPD quantile needs p in [0, 1), got {prob}")));
    }
    let GpdParams { sigma, gamma } = p;
    let log_survival = (-prob).ln_1p();
    if gamma.abs() < GAMMA_EPS {
        return Ok(-sigma * log_survival);
    }
    Ok(sigma * (-gamma * log_survival).exp_m1() / gamma)
}

/// Quantile at level `tau` extrapolated from the level-`tau0` quantile with a
/// GPD tail above it.
pub fn extreme_quantile(q_tau0: f64, p: GpdParams, tau0: f64, tau: f64) -> Result<f64> {
    if !(tau0 > 0.0 && tau0 < 1.0) || !(tau < 1.0) {
        return Err(Error::domain(format!(
            "need 0 < tau0 <= tau < 1, got tau0 = {tau0}, tau = {tau}"
        )));
    }
    if tau < tau0 {
        return Err(Error::domain(format!("tau below tau0 ({tau} < {tau0})")));
    }
    if tau == tau0 {
        return Ok(q_tau0);
    }
    let log_ratio = ((1.0 - tau0) / (1.0 - tau)).ln();
    let GpdParams { sigma, gamma } = p;
    let growth = if gamma.abs() < GAMMA_EPS {
        log_ratio
    } else {
        (gamma * log_ratio).exp_m1() / gamma
    };
    Ok(q_tau0 + sigma * growth)
}

/// `f(γ) = (1 + 1/γ) log(1 + γ x)` with first and second γ-derivatives,
/// summed as a power series in `γ`.
fn shape_terms_series(x: f64, gamma: f64) -> (f64, f64, f64) {
    let u = gamma * x;
    let mut f = x;
    let mut f1 = 0.0;
    let mut f2 = 0.0;
    // u^(m-1) and u^(m-2)
    let mut u_m1 = 1.0;
    let mut u_m2 = 0.0;
    let mut sign = 1.0;
    for m in 1..=SERIES_TERMS {
        let mf = m as f64;
        let core = 1.0 / mf - x / (mf + 1.0);
        f += sign * x * u_m1 * gamma * core;
        f1 += sign * mf * x * u_m1 * core;
        if m >= 2 {
            f2 += sign * mf * (mf - 1.0) * x * x * u_m2 * core;
        }
        u_m2 = u_m1;
        u_m1 *= u;
        sign = -sign;
    }
    (f, f1, f2)
}

fn shape_terms_closed(x: f64, gamma: f64) -> (f64, f64, f64) {
    let u = gamma * x;
    let log1p = u.ln_1p();
    let a = 1.0 + 1.0 / gamma;
    let g2 = gamma * gamma;
    let f = a * log1p;
    let f1 = -log1p / g2 + a * x / (1.0 + u);
    let f2 = 2.0 * log1p / (g2 * gamma) - 2.0 * x / (g2 * (1.0 + u)) - a * x * x / ((1.0 + u) * (1.0 + u));
    (f, f1, f2)
}

fn shape_terms(x: f64, gamma: f64) -> (f64, f64, f64) {
    if (gamma * x).abs() < SERIES_CUTOFF {
        shape_terms_series(x, gamma)
    } else {
        shape_terms_closed(x, gamma)
    }
}

/// Point where `1 + γ z / σ` meets the support floor (only for `γ < 0`).
fn clamp_point(sigma: f64, gamma: f64) -> f64 {
    sigma * (SUPPORT_FLOOR - 1.0) / gamma
}

fn violates_support(z: f64, sigma: f64, gamma: f64) -> bool {
    gamma < 0.0 && 1.0 + gamma * z / sigma <= SUPPORT_FLOOR
}

/// Deviance on raw values; `z` is assumed nonnegative, `sigma` positive.
pub(crate) fn deviance_raw(z: f64, sigma: f64, gamma: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if violates_support(z, sigma, gamma) {
        let zc = clamp_point(sigma, gamma);
        let slope = ((1.0 + gamma) / (sigma * SUPPORT_FLOOR)).abs();
        let at_clamp = (1.0 + 1.0 / gamma) * SUPPORT_FLOOR.ln() + sigma.ln();
        return at_clamp + slope * (z - zc);
    }
    shape_terms(z / sigma, gamma).0 + sigma.ln()
}

/// GPD deviance (negative log-likelihood) of one exceedance; zero below the
/// threshold.
pub fn deviance(z: Exceedance, p: GpdParams) -> f64 {
    deviance_raw(z.0, p.sigma, p.gamma)
}

/// First and second partial derivatives of the deviance in σ and γ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Derivatives {
    pub d_sigma: f64,
    pub d_gamma: f64,
    pub d2_sigma: f64,
    pub d2_gamma: f64,
}

impl Derivatives {
    const ZERO: Derivatives = Derivatives {
        d_sigma: 0.0,
        d_gamma: 0.0,
        d2_sigma: 0.0,
        d2_gamma: 0.0,
    };
}

pub(crate) fn derivatives_raw(z: f64, sigma: f64, gamma: f64) -> Derivatives {
    if z <= 0.0 {
        return Derivatives::ZERO;
    }
    let z = if violates_support(z, sigma, gamma) {
        clamp_point(sigma, gamma)
    } else {
        z
    };
    let x = z / sigma;
    let w = 1.0 + gamma * x;
    let (_, f1, f2) = shape_terms(x, gamma);
    Derivatives {
        d_sigma: (1.0 - (1.0 + gamma) * x / w) / sigma,
        d_gamma: f1,
        d2_sigma: (x + (x - 1.0) / w) / (sigma * sigma * w),
        d2_gamma: f2,
    }
}

pub fn deviance_derivatives(z: Exceedance, p: GpdParams) -> Derivatives {
    derivatives_raw(z.0, p.sigma, p.gamma)
}

/// Gradient `(∂ℓ/∂σ, ∂ℓ/∂γ)`.
pub fn deviance_grad(z: Exceedance, p: GpdParams) -> (f64, f64) {
    let d = deviance_derivatives(z, p);
    (d.d_sigma, d.d_gamma)
}

/// Diagonal of the Hessian `(∂²ℓ/∂σ², ∂²ℓ/∂γ²)`.
pub fn deviance_hessian_diag(z: Exceedance, p: GpdParams) -> (f64, f64) {
    let d = deviance_derivatives(z, p);
    (d.d2_sigma, d.d2_gamma)
}

pub fn total_deviance(zs: &[Exceedance], p: GpdParams) -> f64 {
    zs.iter().map(|&z| deviance(z, p)).sum()
}

/// Unconditional maximum-likelihood fit of a GPD to positive exceedances.
///
/// Minimizes the summed deviance over `log σ` and `γ` inside the MLE box by
/// Nelder-Mead, restarted from its own optimum until it stops improving.
pub fn fit_unconditional_mle(zs: &[Exceedance]) -> Result<GpdParams> {
    let values: Vec<f64> = zs.iter().map(|z| z.0).filter(|&z| z > 0.0).collect();
    if values.len() < MLE_MIN_EXCEEDANCES {
        return Err(Error::InsufficientData(format!(
            "GPD fit needs at least {MLE_MIN_EXCEEDANCES} positive exceedances, got {}",
            values.len()
        )));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo <= 1e-12 * hi {
        return Err(Error::NonConvergence(
            "all exceedances are identical; the GPD likelihood is degenerate".into(),
        ));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;

    let objective = |v: &[f64; 2]| -> f64 {
        let (log_sigma, gamma) = (v[0], v[1]);
        if !(MLE_SIGMA_MIN.ln()..=MLE_SIGMA_MAX.ln()).contains(&log_sigma)
            || !(MLE_GAMMA_MIN..=MLE_GAMMA_MAX).contains(&gamma)
        {
            return f64::INFINITY;
        }
        let sigma = log_sigma.exp();
        values.iter().map(|&z| deviance_raw(z, sigma, gamma)).sum()
    };

    let start = [mean.ln().clamp(MLE_SIGMA_MIN.ln(), MLE_SIGMA_MAX.ln()), 0.1];
    let mut best = nelder_mead(&objective, start, [0.5, 0.2], 4000);
    for _ in 0..8 {
        let next = nelder_mead(&objective, best.point, [0.05, 0.02], 4000);
        let improved = next.value < best.value - 1e-13 * (1.0 + best.value.abs());
        if next.value <= best.value {
            best = next;
        }
        if !improved {
            break;
        }
    }
    if !best.value.is_finite() {
        return Err(Error::NonConvergence(
            "GPD likelihood search found no finite objective".into(),
        ));
    }
    GpdParams::new(best.point[0].exp(), best.point[1])
}

struct Optimum {
    point: [f64; 2],
    value: f64,
}

fn nelder_mead(f: &impl Fn(&[f64; 2]) -> f64, start: [f64; 2], step: [f64; 2], max_iter: usize) -> Optimum {
    let mut simplex = [
        start,
        [start[0] + step[0], start[1]],
        [start[0], start[1] + step[1]],
    ];
    let mut values = simplex.map(|p| f(&p));
    let lerp = |a: &[f64; 2], b: &[f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];

    for _ in 0..max_iter {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);

        let spread = (values[2] - values[0]).abs();
        let diameter = simplex[1..]
            .iter()
            .map(|p| (p[0] - simplex[0][0]).abs().max((p[1] - simplex[0][1]).abs()))
            .fold(0.0, f64::max);
        if values[0].is_finite() && spread <= 1e-14 * (1.0 + values[0].abs()) && diameter < 1e-10 {
            break;
        }

        let centroid = lerp(&simplex[0], &simplex[1], 0.5);
        let reflected = lerp(&simplex[2], &centroid, 2.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = lerp(&simplex[2], &centroid, 3.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let (contracted, fc) = if fr < values[2] {
                let c = lerp(&simplex[2], &centroid, 1.5);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = lerp(&simplex[2], &centroid, 0.5);
                let fc = f(&c);
                (c, fc)
            };
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = lerp(&simplex[0], &simplex[i], 0.5);
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Optimum {
        point: simplex[best],
        value: values[best],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(sigma: f64, gamma: f64) -> GpdParams {
        GpdParams::new(sigma, gamma).unwrap()
    }

    fn ex(z: f64) -> Exceedance {
        Exceedance::new(z).unwrap()
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(gpd_cdf(0.0, p(1.0, 1.0)).unwrap(), 0.0);
        assert!((gpd_cdf(1.0, p(1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(gpd_cdf(2.0, p(1.0, -0.5)).unwrap(), 1.0);
        assert_eq!(gpd_cdf(3.0, p(1.0, -0.5)).unwrap(), 1.0);
        assert!(matches!(gpd_cdf(-0.1, p(1.0, 0.2)), Err(Error::Domain(_))));
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(gpd_quantile(0.0, p(3.0, 0.4)).unwrap(), 0.0);
        assert!((gpd_quantile(0.5, p(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-14);
        assert!((gpd_quantile(0.5, p(1.0, 0.0)).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(gpd_quantile(1.0, p(1.0, 0.0)).is_err());
        assert!(gpd_quantile(-0.1, p(1.0, 0.0)).is_err());
    }

    #[test]
    fn params_validate() {
        assert!(GpdParams::new(0.0, 0.1).is_err());
        assert!(GpdParams::new(-1.0, 0.1).is_err());
        assert!(GpdParams::new(1.0, f64::NAN).is_err());
        assert!(Exceedance::new(-1e-3).is_err());
        assert_eq!(Exceedance::over(1.0, 2.0).value(), 0.0);
    }

    #[test]
    fn deviance_examples() {
        assert_eq!(deviance(ex(0.0), p(1.0, 1.0)), 0.0);
        assert!((deviance(ex(1.0), p(1.0, 1.0)) - 2.0 * 2f64.ln()).abs() < 1e-14);
        assert!((deviance(ex(1.0), p(2.0, 0.0)) - (0.5 + 2f64.ln())).abs() < 1e-14);
        // can go negative through log σ
        assert!(deviance(ex(0.01), p(0.1, 0.1)) < 0.0);
    }

    #[test]
    fn derivative_examples() {
        let (ds, dg) = deviance_grad(ex(1.0), p(1.0, 1.0));
        assert!(ds.abs() < 1e-15);
        assert!((dg - (1.0 - 2f64.ln())).abs() < 1e-14);
        let (ds, _) = deviance_grad(ex(2.0), p(2.0, 1.0));
        assert!(ds.abs() < 1e-15);
        let (hs, hg) = deviance_hessian_diag(ex(1.0), p(1.0, 1.0));
        assert!((hs - 0.5).abs() < 1e-15);
        assert!((hg - (2.0 * 2f64.ln() - 1.5)).abs() < 1e-14);
    }

    #[test]
    fn hessian_sigma_near_zero_exceedance_matches_differences() {
        let z = 1e-3;
        let h = 1e-6;
        let g = |s: f64| deviance_grad(ex(z), p(s, 1.0)).0;
        let fd = (g(1.0 + h) - g(1.0 - h)) / (2.0 * h);
        let (hs, _) = deviance_hessian_diag(ex(z), p(1.0, 1.0));
        assert!((hs - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{hs} vs {fd}");
    }

    #[test]
    fn series_and_closed_forms_agree_at_cutoff() {
        for &x in &[0.5, 1.0, 3.0, 10.0] {
            for &sgn in &[-1.0, 1.0] {
                let g = sgn * SERIES_CUTOFF / x;
                let a = shape_terms_series(x, g);
                let b = shape_terms_closed(x, g);
                assert!((a.0 - b.0).abs() < 1e-12 * (1.0 + b.0.abs()));
                assert!((a.1 - b.1).abs() < 1e-9 * (1.0 + b.1.abs()), "{a:?} {b:?}");
                assert!((a.2 - b.2).abs() < 1e-6 * (1.0 + b.2.abs()), "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn deviance_continuous_across_gamma_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let z = rng.gen_range(0.1..10.0);
            let sigma = rng.gen_range(0.1..10.0);
            let x = z / sigma;
            for &g in &[GAMMA_EPS, -GAMMA_EPS] {
                let general = (1.0 + 1.0 / g) * (g * x).ln_1p() + sigma.ln();
                let limit = shape_terms_series(x, g).0 + sigma.ln();
                assert!((general - limit).abs() <= 1e-8, "{general} vs {limit}");
                let exp_limit = x + sigma.ln();
                let at_zero = deviance(ex(z), p(sigma, 0.0));
                assert_eq!(at_zero, exp_limit);
            }
        }
    }

    #[test]
    fn support_violation_is_penalized_and_finite() {
        let params = p(1.0, -0.5);
        let inside = deviance(ex(1.9), params);
        let edge = deviance(ex(2.0), params);
        let beyond = deviance(ex(3.0), params);
        assert!(edge.is_finite() && beyond.is_finite());
        assert!(beyond > edge && edge > inside);
        let (ds, dg) = deviance_grad(ex(3.0), params);
        assert!(ds.is_finite() && dg.is_finite());
        // increasing σ moves back toward the support
        assert!(ds < 0.0);
    }

    #[test]
    fn extreme_quantile_examples() {
        let any = p(1.3, 0.2);
        assert_eq!(extreme_quantile(5.0, any, 0.8, 0.8).unwrap(), 5.0);
        assert!((extreme_quantile(0.0, p(1.0, 1.0), 0.8, 0.99).unwrap() - 19.0).abs() < 1e-12);
        let expected = 2.0 * 20f64.ln();
        assert!((extreme_quantile(0.0, p(2.0, 0.0), 0.8, 0.99).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(extreme_quantile(0.0, any, 0.8, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn mle_rejects_degenerate_input() {
        let zs = vec![ex(1.5); 5];
        assert!(matches!(fit_unconditional_mle(&zs), Err(Error::NonConvergence(_))));
        let few = vec![ex(1.0), ex(2.0)];
        assert!(matches!(fit_unconditional_mle(&few), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn mle_recovers_exponential_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zs: Vec<Exceedance> = (0..5000)
            .map(|_| {
                let u: f64 = rng.gen();
                ex(gpd_quantile(u, p(1.0, 0.0)).unwrap())
            })
            .collect();
        let fit = fit_unconditional_mle(&zs).unwrap();
        assert!(fit.gamma.abs() <= 0.1, "{fit:?}");
        assert!((fit.sigma - 1.0).abs() < 0.1, "{fit:?}");
    }
}
