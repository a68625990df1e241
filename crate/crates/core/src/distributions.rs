//! Random variate generation and densities used by the sampler.
//!
//! The Polya-Gamma `PG(1, c)` sampler is the exact alternating-series
//! accept/reject method: proposals come from a mixture of a truncated
//! inverse-Gaussian on `(0, 0.64]` and a shifted exponential on
//! `(0.64, inf)`, and acceptance is decided by the partial sums of the
//! Jacobi-theta series, which alternately bound the target density.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

/// Truncation point between the two proposal pieces.
const PG_TRUNC: f64 = 0.64;
/// Hard cap on outer accept/reject rounds.
pub const PG_MAX_PROPOSALS: usize = 10_000;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Draws from `PG(1, c)`.
///
/// Symmetric in `c`. Returns [`Error::SamplerExhausted`] only if the
/// acceptance loop runs past [`PG_MAX_PROPOSALS`], which points to a broken
/// random stream rather than bad luck.
pub fn sample_pg1<R: Rng + ?Sized>(rng: &mut R, c: f64) -> Result<f64> {
    if !c.is_finite() {
        return Err(Error::Domain(format!("PG tilt must be finite, got {c}")));
    }
    let z = 0.5 * c.abs();
    let k = 0.125 * PI * PI + 0.5 * z * z;
    let p_exp = exponential_piece_mass(z, k);
    for _ in 0..PG_MAX_PROPOSALS {
        let x = if rng.random::<f64>() < p_exp {
            let e: f64 = Exp1.sample(rng);
            PG_TRUNC + e / k
        } else {
            truncated_inverse_gaussian(rng, z)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0usize;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return Ok(0.25 * x);
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
    Err(Error::SamplerExhausted(PG_MAX_PROPOSALS))
}

/// Mean of `PG(1, c)`: `tanh(c/2) / (2c)`, with the limit `1/4` at zero.
pub fn pg1_mean(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-6 {
        // series: 1/4 - c^2/48
        0.25 - c * c / 48.0
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Variance of `PG(1, c)`: `(sinh c - c) / (4 c^3 cosh^2(c/2))`, limit 1/24.
pub fn pg1_var(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-3 {
        1.0 / 24.0 - c * c / 120.0
    } else {
        let ch = (0.5 * c).cosh();
        (c.sinh() - c) / (4.0 * c * c * c * ch * ch)
    }
}

/// Probability of proposing from the exponential tail piece.
fn exponential_piece_mass(z: f64, k: f64) -> f64 {
    let t = PG_TRUNC;
    let rt = (1.0 / t).sqrt();
    let b = rt * (t * z - 1.0);
    let a = -rt * (t * z + 1.0);
    let x0 = k.ln() + k * t;
    let xb = x0 - z + ln_std_normal_cdf(b);
    let xa = x0 + z + ln_std_normal_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// n-th coefficient of the alternating series for the `J*(1, 0)` density.
#[inline]
fn series_coef(n: usize, x: f64) -> f64 {
    let np = n as f64 + 0.5;
    if x > PG_TRUNC {
        PI * np * (-0.5 * np * np * PI * PI * x).exp()
    } else {
        (2.0 / (PI * x)).powf(1.5) * PI * np * (-2.0 * np * np / x).exp()
    }
}

/// Inverse-Gaussian `IG(1/z, 1)` truncated to `(0, 0.64]`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(rng: &mut R, z: f64) -> f64 {
    let t = PG_TRUNC;
    let mu = if z > 0.0 { 1.0 / z } else { f64::INFINITY };
    if mu > t {
        // Proposal from the z = 0 limit (a 1/chi-square on (0, t]) with
        // exponential-tilt acceptance.
        loop {
            let x = loop {
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / t {
                    let d = 1.0 + t * e1;
                    break t / (d * d);
                }
            };
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let mut x = mu + 0.5 * mu * mu * y - 0.5 * mu * (4.0 * mu * y + (mu * y).powi(2)).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= t {
                return x;
            }
        }
    }
}

/// `PG(1, c)` sampler owning its random stream.
#[derive(Debug, Clone)]
pub struct PolyaGammaSampler<R> {
    rng: R,
}

impl<R: Rng> PolyaGammaSampler<R> {
    pub fn new(rng: R) -> Self {
        Self { rng }
    }

    pub fn draw(&mut self, c: f64) -> Result<f64> {
        sample_pg1(&mut self.rng, c)
    }

    pub fn into_inner(self) -> R {
        self.rng
    }
}

/// Multivariate normal with a positive-definite covariance.
#[derive(Debug, Clone)]
pub struct MvnSpec {
    mean: DVector<f64>,
    factor: SpdFactor,
}

impl MvnSpec {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::Dimension {
                context: "normal covariance",
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        let factor = SpdFactor::strict(cov, "normal covariance")?;
        Ok(Self { mean, factor })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn sample_mvn<R: Rng + ?Sized>(spec: &MvnSpec, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_iterator(spec.dim(), (0..spec.dim()).map(|_| StandardNormal.sample(rng)));
    &spec.mean + spec.factor.scale(&z)
}

/// Inverse-gamma draw with density proportional to `x^{-shape-1} exp(-scale/x)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
        return Err(Error::Domain(format!(
            "inverse-gamma needs positive shape and scale, got ({shape}, {scale})"
        )));
    }
    let g = Gamma::new(shape, 1.0 / scale).map_err(|e| Error::Domain(e.to_string()))?;
    let mut x: f64 = g.sample(rng);
    // a zero gamma draw is possible for tiny shapes
    if x <= 0.0 {
        x = f64::MIN_POSITIVE;
    }
    Ok(1.0 / x)
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::Domain(format!("normal variance must be positive, got {var}")));
    }
    Ok(normal_logpdf_unchecked(x, mean, var))
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> Result<f64> {
    normal_logpdf(x, mean, var).map(f64::exp)
}

#[inline]
pub fn normal_logpdf_unchecked(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Phi(x)`, accurate deep into the left tail.
pub fn ln_std_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        std_normal_cdf(x).ln()
    } else {
        // asymptotic Mills-ratio expansion
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * LN_2PI + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Standard normal quantile: Acklam's rational approximation polished with
/// one Halley step.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let lo = 0.02425;
    let x = if p < lo {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - lo {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = std_normal_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(logistic(x))` without overflow.
#[inline]
pub fn ln_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pg_mean_formula_matches_series_representation() {
        // PG(1,c) = (1/(2 pi^2)) sum_k g_k / ((k - 1/2)^2 + c^2/(4 pi^2)), g_k ~ Exp(1)
        for &c in &[0.0, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let shift = c * c / (4.0 * PI * PI);
            let mut sum = 0.0;
            for k in 1..2_000_000u64 {
                let h = k as f64 - 0.5;
                sum += 1.0 / (h * h + shift);
            }
            let series = sum / (2.0 * PI * PI);
            assert!((series - pg1_mean(c)).abs() < 1e-6, "c={c}: {series} vs {}", pg1_mean(c));
        }
        assert!((pg1_mean(2.0) - 0.190_399).abs() < 1e-6);
    }

    #[test]
    fn pg_mean_formula_matches_laplace_transform_derivative() {
        // E exp(-t w) = cosh(c/2) / cosh(sqrt(c^2/4 + t/2))
        for &c in &[0.3f64, 1.0, 2.0, 5.0] {
            let lt = |t: f64| (0.5 * c).cosh() / (0.25 * c * c + 0.5 * t).sqrt().cosh();
            let h = 1e-5;
            let deriv = (lt(h) - lt(-h)) / (2.0 * h);
            assert!((-deriv - pg1_mean(c)).abs() < 1e-8);
            let second = (lt(h) - 2.0 * lt(0.0) + lt(-h)) / (h * h);
            let var = second - deriv * deriv;
            assert!((var - pg1_var(c)).abs() < 1e-4, "c={c}: {var} vs {}", pg1_var(c));
        }
    }

    #[test]
    fn pg_draws_positive_and_mean_correct() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &c in &[0.0, 1.5, -3.0, 40.0] {
            let n = 100_000;
            let mut sum = 0.0;
            for _ in 0..n {
                let w = sample_pg1(&mut rng, c).unwrap();
                assert!(w > 0.0);
                sum += w;
            }
            let se = (pg1_var(c) / n as f64).sqrt();
            assert!(((sum / n as f64) - pg1_mean(c)).abs() < 4.0 * se, "c = {c}");
        }
    }

    #[test]
    fn pg_is_reproducible_from_seed() {
        let a: Vec<f64> = {
            let mut s = PolyaGammaSampler::new(ChaCha8Rng::seed_from_u64(5));
            (0..50).map(|i| s.draw(i as f64 * 0.3).unwrap()).collect()
        };
        let b: Vec<f64> = {
            let mut s = PolyaGammaSampler::new(ChaCha8Rng::seed_from_u64(5));
            (0..50).map(|i| s.draw(i as f64 * 0.3).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn pg_rejects_non_finite_tilt() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_pg1(&mut rng, f64::NAN).is_err());
    }

    #[test]
    fn normal_density_values() {
        assert!((normal_logpdf(0.0, 0.0, 1.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let v = 2.5;
        assert!((normal_pdf(1.0, 1.0, v).unwrap() - 1.0 / (2.0 * PI * v).sqrt()).abs() < 1e-15);
        assert!(normal_pdf(0.0, 0.0, 0.0).is_err());
        assert!(normal_logpdf(0.0, 0.0, -1.0).is_err());
        // trapezoid over a wide grid
        let (lo, hi, n) = (-40.0, 40.0, 400_000);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * normal_pdf(x, 1.3, 4.0).unwrap();
        }
        assert!((acc * h - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mvn_identity_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = MvnSpec::new(DVector::zeros(3), &DMatrix::identity(3, 3)).unwrap();
        let n = 100_000;
        let mut cov = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let x = sample_mvn(&spec, &mut rng);
            cov += &x * x.transpose();
        }
        cov /= n as f64;
        assert!((cov - DMatrix::identity(3, 3)).abs().max() < 0.02);
    }

    #[test]
    fn mvn_univariate_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = MvnSpec::new(DVector::from_element(1, 5.0), &DMatrix::from_element(1, 1, 4.0)).unwrap();
        let n = 100_000;
        let inside = (0..n)
            .filter(|_| {
                let x = sample_mvn(&spec, &mut rng)[0];
                (1.08..=8.92).contains(&x)
            })
            .count();
        assert!((inside as f64 / n as f64 - 0.95).abs() < 0.005);
    }

    #[test]
    fn mvn_singular_covariance_is_an_error() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match MvnSpec::new(DVector::zeros(2), &cov) {
            Err(Error::NotPositiveDefinite { condition, .. }) => assert!(condition > 1e12),
            other => panic!("expected factorization error, got {other:?}"),
        }
    }

    #[test]
    fn inverse_gamma_mean_and_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_inverse_gamma(3.0, 4.0, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        // var = scale^2 / ((shape-1)^2 (shape-2)) = 4
        let se = (4.0f64 / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "{mean}");
        assert!(sample_inverse_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_inverse_gamma(1.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-4, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
            let x = std_normal_quantile(p);
            let tail = p.min(1.0 - p);
            assert!((std_normal_cdf(x) - p).abs() / tail < 1e-9, "p = {p}");
        }
        // the asymptotic branch joins the direct branch
        let a = ln_std_normal_cdf(-29.9999);
        let b = ln_std_normal_cdf(-30.0001);
        assert!((a - b).abs() < 0.01 && a > b);
    }

    #[test]
    fn logistic_is_stable() {
        assert!((logistic(3f64.ln()) - 0.75).abs() < 1e-15);
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(800.0) == 1.0 && logistic(-800.0) >= 0.0);
        assert!((logistic(50.0) - (1.0 - logistic(-50.0))).abs() < 1e-15);
        assert!(ln_logistic(-800.0).is_finite() && ln_logistic(800.0) == 0.0);
    }
}
