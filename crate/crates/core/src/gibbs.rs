//! Conjugate full-conditional updates.
//!
//! Mean equation: Normal-Inverse-Gamma composition sampling of
//! `(B_s, sigma_s^2)`. Transition equation: Polya-Gamma augmentation, which
//! turns each state's Bernoulli persistence likelihood into a Gaussian
//! regression on the pseudo-responses `k_t / omega_t`.
//!
//! Sufficient statistics are accumulated once over the full pool and
//! restricted to a mask on demand, so the reversible-jump step can score any
//! neighbouring model without another pass over the data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::distributions::{sample_inverse_gamma, sample_pg1};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::types::{
    linear_predictor, transition_observations, CoefPrior, Mask, PriorConfig, State, StateRegression,
    TimeSeriesDataset,
};

/// Cross-products of `(1, full pool)` design rows with a response.
#[derive(Debug, Clone)]
pub struct SuffStats {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
    pub n: usize,
}

impl SuffStats {
    pub(crate) fn zeros(width: usize) -> Self {
        Self {
            xtx: DMatrix::zeros(width + 1, width + 1),
            xty: DVector::zeros(width + 1),
            yty: 0.0,
            n: 0,
        }
    }

    #[inline]
    fn add(&mut self, row: &[f64], weight: f64, response: f64) {
        let d = row.len() + 1;
        let x = |i: usize| if i == 0 { 1.0 } else { row[i - 1] };
        for i in 0..d {
            let xi = x(i) * weight;
            for j in 0..=i {
                self.xtx[(i, j)] += xi * x(j);
            }
            self.xty[i] += xi * response;
        }
        self.yty += weight * response * response;
        self.n += 1;
    }

    fn finish(mut self) -> Self {
        self.xtx.fill_upper_triangle_with_lower_triangle();
        self
    }

    fn restrict(&self, mask: Mask) -> (DMatrix<f64>, DVector<f64>) {
        let c = mask.coordinates();
        let k = c.len();
        (
            DMatrix::from_fn(k, k, |a, b| self.xtx[(c[a], c[b])]),
            DVector::from_iterator(k, c.iter().map(|&i| self.xty[i])),
        )
    }
}

/// Mean-equation statistics of state `s`: rows `t - 1` for every `t >= 1`
/// with `z[t] = s`.
pub fn mean_suff_stats(dataset: &TimeSeriesDataset, z_path: &[State], s: State) -> SuffStats {
    let mut st = SuffStats::zeros(dataset.pool_width());
    let y = dataset.y();
    for t in 1..y.len() {
        if z_path[t] == s {
            st.add(dataset.row(t - 1), 1.0, y[t]);
        }
    }
    st.finish()
}

/// Gaussian prior restricted to a mask, with its precision factored.
struct RestrictedPrior {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    ln_det_cov: f64,
    /// `m0' V0^{-1} m0`.
    quad: f64,
}

impl RestrictedPrior {
    fn new(prior: &CoefPrior, mask: Mask) -> Result<Self> {
        let (mean, cov) = prior.restrict(mask);
        if prior.cov.is_none() {
            let k = mean.len() as f64;
            let c = prior.variance;
            return Ok(Self {
                quad: mean.norm_squared() / c,
                precision: DMatrix::from_diagonal_element(mean.len(), mean.len(), 1.0 / c),
                ln_det_cov: k * c.ln(),
                mean,
            });
        }
        let f = SpdFactor::new(&cov, "coefficient prior covariance")?;
        Ok(Self {
            quad: f.quad_inv(&mean),
            precision: f.inverse(),
            ln_det_cov: f.ln_det(),
            mean,
        })
    }
}

/// Normal-Inverse-Gamma posterior of one state's mean regression.
#[derive(Debug, Clone)]
pub struct MeanPosterior {
    /// Posterior mean `L_s`.
    pub l: DVector<f64>,
    /// Posterior covariance scale `V_s`; `Cov(B | sigma2) = sigma2 V_s`.
    pub v: DMatrix<f64>,
    pub ig_shape: f64,
    pub ig_scale: f64,
    pub n: usize,
    /// Set when no observation was assigned to the state.
    pub prior_only: bool,
    precision: SpdFactor,
    prior_ln_det: f64,
    prior_quad: f64,
    /// `L' V^{-1} L`.
    post_quad: f64,
}

impl MeanPosterior {
    /// Log of the `sigma2`-conditional evidence up to terms that do not
    /// depend on the mask: `0.5 ln|V| - 0.5 ln|V0| - (L0'V0^-1 L0 - L'V^-1 L) / (2 sigma2)`.
    pub fn log_evidence_kernel(&self, sigma2: f64) -> f64 {
        -0.5 * self.precision.ln_det() - 0.5 * self.prior_ln_det - (self.prior_quad - self.post_quad) / (2.0 * sigma2)
    }

    /// Draws `B ~ N(L, sigma2 V)`.
    pub fn draw_coefficients<R: Rng + ?Sized>(&self, sigma2: f64, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(self.l.len(), (0..self.l.len()).map(|_| StandardNormal.sample(rng)));
        &self.l + self.precision.solve_upper_transpose(&z) * sigma2.sqrt()
    }
}

pub fn mean_posterior(
    dataset: &TimeSeriesDataset,
    z_path: &[State],
    s: State,
    mean_mask: Mask,
    prior: &PriorConfig,
) -> Result<MeanPosterior> {
    if z_path.len() != dataset.len() {
        return Err(Error::Dimension {
            context: "state path",
            expected: dataset.len(),
            found: z_path.len(),
        });
    }
    mean_posterior_from_stats(&mean_suff_stats(dataset, z_path, s), mean_mask, prior)
}

pub fn mean_posterior_from_stats(stats: &SuffStats, mask: Mask, prior: &PriorConfig) -> Result<MeanPosterior> {
    let rp = RestrictedPrior::new(&prior.mean_coef, mask)?;
    let (xtx, xty) = stats.restrict(mask);
    let prec = &rp.precision + xtx;
    let rhs = &rp.precision * &rp.mean + xty;
    let f = SpdFactor::new(&prec, "mean posterior precision")?;
    let l = f.solve(&rhs);
    let post_quad = l.dot(&rhs);
    let v = f.inverse();
    let ig_scale = prior.ig_scale + 0.5 * (rp.quad + stats.yty - post_quad);
    Ok(MeanPosterior {
        l,
        v,
        ig_shape: prior.ig_shape + 0.5 * stats.n as f64,
        ig_scale: ig_scale.max(prior.ig_scale * f64::EPSILON),
        n: stats.n,
        prior_only: stats.n == 0,
        precision: f,
        prior_ln_det: rp.ln_det_cov,
        prior_quad: rp.quad,
        post_quad,
    })
}

/// Composition draw: `sigma2 ~ IG(shape, scale)`, then `B | sigma2`.
pub fn draw_mean_params<R: Rng + ?Sized>(post: &MeanPosterior, rng: &mut R) -> Result<StateRegression> {
    let sigma2 = sample_inverse_gamma(post.ig_shape, post.ig_scale, rng)?;
    let b = post.draw_coefficients(sigma2, rng);
    Ok(StateRegression {
        b: b.iter().copied().collect(),
        sigma2,
    })
}

/// Gaussian posterior of one state's logistic coefficients given the
/// Polya-Gamma auxiliaries.
#[derive(Debug, Clone)]
pub struct LogisticPosterior {
    pub m_omega: DVector<f64>,
    pub v_omega: DMatrix<f64>,
    pub prior_only: bool,
    precision: SpdFactor,
    prior_ln_det: f64,
    prior_quad: f64,
    post_quad: f64,
}

impl LogisticPosterior {
    /// Same form as [`MeanPosterior::log_evidence_kernel`] with unit scale.
    pub fn log_evidence_kernel(&self) -> f64 {
        -0.5 * self.precision.ln_det() - 0.5 * self.prior_ln_det - 0.5 * (self.prior_quad - self.post_quad)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let k = self.m_omega.len();
        let z = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(rng)));
        &self.m_omega + self.precision.solve_upper_transpose(&z)
    }
}

/// Augmented statistics `X' Omega X` and `X' k`, with `k_t = z~_t - 1/2`.
pub fn logistic_suff_stats(dataset: &TimeSeriesDataset, rows: &[usize], responses: &[u8], omega: &[f64]) -> SuffStats {
    let mut st = SuffStats::zeros(dataset.pool_width());
    for ((&t, &r), &w) in rows.iter().zip(responses).zip(omega) {
        let k = f64::from(r) - 0.5;
        // weight w, pseudo-response k / w: contributes w x x' and k x
        st.add(dataset.row(t), w, k / w);
    }
    st.finish()
}

pub fn logistic_posterior_from_stats(stats: &SuffStats, mask: Mask, prior: &PriorConfig) -> Result<LogisticPosterior> {
    let rp = RestrictedPrior::new(&prior.trans_coef, mask)?;
    let (xtox, xtk) = stats.restrict(mask);
    let prec = &rp.precision + xtox;
    let rhs = &rp.precision * &rp.mean + xtk;
    let f = SpdFactor::new(&prec, "logistic posterior precision")?;
    let m = f.solve(&rhs);
    let post_quad = m.dot(&rhs);
    Ok(LogisticPosterior {
        v_omega: f.inverse(),
        m_omega: m,
        prior_only: stats.n == 0,
        precision: f,
        prior_ln_det: rp.ln_det_cov,
        prior_quad: rp.quad,
        post_quad,
    })
}

/// Result of one two-step Polya-Gamma update.
#[derive(Debug, Clone)]
pub struct LogisticDraw {
    pub beta: Vec<f64>,
    pub omega: Vec<f64>,
    /// State `s` had no transition observations; `beta` came from the prior.
    pub prior_only: bool,
    pub stats: SuffStats,
}

/// Step 1: `omega_t ~ PG(1, x_t beta_current)` per transition observation.
/// Step 2: `beta ~ N(m_omega, V_omega)`.
pub fn draw_logistic_params<R: Rng + ?Sized>(
    dataset: &TimeSeriesDataset,
    z_path: &[State],
    s: State,
    trans_mask: Mask,
    beta_current: &[f64],
    prior: &PriorConfig,
    rng: &mut R,
) -> Result<LogisticDraw> {
    if beta_current.len() != trans_mask.dim() {
        return Err(Error::Dimension {
            context: "logistic coefficients",
            expected: trans_mask.dim(),
            found: beta_current.len(),
        });
    }
    let (rows, responses) = transition_observations(z_path, s);
    let mut omega = Vec::with_capacity(rows.len());
    for &t in &rows {
        let psi = linear_predictor(dataset.row(t), trans_mask, beta_current);
        omega.push(sample_pg1(rng, psi)?);
    }
    let stats = logistic_suff_stats(dataset, &rows, &responses, &omega);
    let post = logistic_posterior_from_stats(&stats, trans_mask, prior)?;
    let beta = post.draw(rng).iter().copied().collect();
    Ok(LogisticDraw {
        beta,
        omega,
        prior_only: rows.is_empty(),
        stats,
    })
}

/// `k_t = z~_t - 1/2`.
pub fn pg_offsets(responses: &[u8]) -> Vec<f64> {
    responses.iter().map(|&r| f64::from(r) - 0.5).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::logistic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_col(y: Vec<f64>, x: Vec<f64>) -> TimeSeriesDataset {
        TimeSeriesDataset::new(y, x.into_iter().map(|v| vec![v]).collect(), vec!["X1".into()]).unwrap()
    }

    #[test]
    fn no_data_recovers_prior() {
        let d = one_col(vec![1.0, 2.0, 3.0], vec![0.5, 0.1, -0.2]);
        let z = [State::One; 3];
        let prior = PriorConfig::default();
        let post = mean_posterior(&d, &z, State::Two, Mask::full(1), &prior).unwrap();
        assert!(post.prior_only);
        assert_eq!(post.l, DVector::zeros(2));
        assert!((&post.v - DMatrix::from_diagonal_element(2, 2, 100.0)).abs().max() < 1e-9);
        assert_eq!(post.ig_shape, prior.ig_shape);
        assert!((post.ig_scale - prior.ig_scale).abs() < 1e-15);
    }

    #[test]
    fn flat_prior_single_point_regression() {
        // one emission y[1] = 2 with x[0] = 1, slope-only design through the intercept column
        let d = one_col(vec![0.0, 2.0, 0.0], vec![1.0, 0.0, 0.0]);
        let z = [State::Two, State::One, State::Two];
        let mut prior = PriorConfig::default();
        prior.mean_coef = CoefPrior::isotropic(1e8);
        let post = mean_posterior(&d, &z, State::One, Mask::empty(1), &prior).unwrap();
        assert_eq!(post.n, 1);
        assert!((post.l[0] - 2.0).abs() < 1e-6);
        assert!((post.v[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pg_offsets_example() {
        assert_eq!(pg_offsets(&[1, 0, 1]), vec![0.5, -0.5, 0.5]);
    }

    #[test]
    fn collapsed_covariance_gives_posterior_mean() {
        // huge design precision: V ~ 0
        let y: Vec<f64> = (0..2000).map(|t| if t == 0 { 0.0 } else { 3.0 }).collect();
        let d = one_col(y, vec![0.0; 2000]);
        let z = vec![State::One; 2000];
        let post = mean_posterior(&d, &z, State::One, Mask::empty(1), &PriorConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let b = post.draw_coefficients(1e-6, &mut rng);
            assert!((b[0] - post.l[0]).abs() < 1e-4);
        }
    }

    #[test]
    fn mean_draw_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..30).map(|i| 1.0 + 2.0 * x[i.max(1) - 1] + 0.3 * (i as f64).cos()).collect();
        let d = one_col(y, x);
        let z = vec![State::One; 30];
        let post = mean_posterior(&d, &z, State::One, Mask::full(1), &PriorConfig::default()).unwrap();
        assert!(post.ig_shape > 2.0);
        let n = 100_000;
        let mut b_sum = DVector::zeros(2);
        let mut s2 = Vec::with_capacity(n);
        for _ in 0..n {
            let r = draw_mean_params(&post, &mut rng).unwrap();
            b_sum += DVector::from_vec(r.b);
            s2.push(r.sigma2);
        }
        let e_s2 = post.ig_scale / (post.ig_shape - 1.0);
        let var_s2 = e_s2 * e_s2 / (post.ig_shape - 2.0);
        let mean_s2 = s2.iter().sum::<f64>() / n as f64;
        assert!((mean_s2 - e_s2).abs() < 3.0 * (var_s2 / n as f64).sqrt());
        // Cov(B) = E[sigma2] V
        let bbar = b_sum / n as f64;
        for i in 0..2 {
            let se = (e_s2 * post.v[(i, i)] / n as f64).sqrt();
            assert!((bbar[i] - post.l[i]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn mean_draws_reproducible() {
        let d = one_col(vec![0.1, 0.5, 0.9, 1.2], vec![0.0, 1.0, 2.0, 3.0]);
        let z = vec![State::One; 4];
        let post = mean_posterior(&d, &z, State::One, Mask::full(1), &PriorConfig::default()).unwrap();
        let a = draw_mean_params(&post, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = draw_mean_params(&post, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_transition_set_draws_from_prior() {
        let d = one_col(vec![0.0; 3], vec![0.0; 3]);
        let z = [State::One, State::One, State::Two];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = draw_logistic_params(&d, &z, State::Two, Mask::empty(1), &[0.0], &PriorConfig::default(), &mut rng).unwrap();
        assert!(r.prior_only);
        assert!(r.omega.is_empty());
        let post = logistic_posterior_from_stats(&r.stats, Mask::empty(1), &PriorConfig::default()).unwrap();
        assert!((post.v_omega[(0, 0)] - 80.0).abs() < 1e-9);
        assert_eq!(post.m_omega[0], 0.0);
    }

    #[test]
    fn one_pg_draw_per_transition_observation() {
        let d = one_col(vec![0.0; 6], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let z = [State::One, State::Two, State::One, State::One, State::Two, State::Two];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = draw_logistic_params(&d, &z, State::One, Mask::full(1), &[0.0, 0.0], &PriorConfig::default(), &mut rng).unwrap();
        assert_eq!(r.omega.len(), 3);
        assert_eq!(r.beta.len(), 2);
    }

    #[test]
    fn balanced_responses_give_symmetric_intercept() {
        let n_obs = 21;
        // alternate stay/leave for state 1, keeping state 2 as a one-step detour
        let mut z = Vec::new();
        for i in 0..n_obs {
            z.push(State::One);
            if i % 2 == 1 {
                z.push(State::Two);
            }
        }
        let d = one_col(vec![0.0; z.len()], vec![0.0; z.len()]);
        let (_, resp) = transition_observations(&z, State::One);
        let ones = resp.iter().filter(|&&r| r == 1).count();
        assert_eq!(ones * 2, resp.len());
        let prior = PriorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut beta = vec![0.0];
        let sweeps = 10_000;
        let mut draws = Vec::with_capacity(sweeps);
        for _ in 0..sweeps {
            beta = draw_logistic_params(&d, &z, State::One, Mask::empty(1), &beta, &prior, &mut rng).unwrap().beta;
            draws.push(beta[0]);
        }
        let mean = draws.iter().sum::<f64>() / sweeps as f64;
        let var = draws.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / sweeps as f64;
        // PG-Gibbs on an intercept mixes fast; inflate SE for mild autocorrelation
        assert!(mean.abs() < 3.0 * (2.0 * var / sweeps as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn all_stay_observations_push_persistence_up() {
        let z = vec![State::One; 51];
        let d = one_col(vec![0.0; 51], vec![0.0; 51]);
        let prior = PriorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut beta = vec![0.0];
        let mut acc = 0.0;
        let sweeps = 4000;
        for i in 0..sweeps + 500 {
            beta = draw_logistic_params(&d, &z, State::One, Mask::empty(1), &beta, &prior, &mut rng).unwrap().beta;
            assert!(beta[0].is_finite());
            if i >= 500 {
                acc += logistic(beta[0]);
            }
        }
        assert!(acc / sweeps as f64 > 0.9);
    }
}
