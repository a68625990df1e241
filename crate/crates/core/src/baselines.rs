//! Comparison models: a homogeneous two-state HMM and a single-regime
//! Bayesian linear regression with autoregressive terms.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::{logistic, normal_logpdf_unchecked};
use crate::error::{Error, Result};
use crate::forecast::{FutureCovariates, ForecastEnsemble, PredictionMode};
use crate::gibbs::{draw_mean_params, mean_posterior_from_stats, mean_suff_stats, SuffStats};
use crate::hmm::ffbs_sample;
use crate::rjmcmc::{accept_mean_jump_with_stats, propose_jump, JumpAction, ModelPrior};
use crate::sampler::{initial_state, JumpStats};
use crate::types::{
    linear_predictor, ChainStore, DrawForecast, Equation, Mask, McmcDraw, ModelIndicator, NhhmmParams,
    PredictiveMixture, PriorConfig, State, StateLogistic, StateParams, StateRegression, TimeSeriesDataset,
};

/// Sweep settings shared by both baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub rj_enabled: bool,
    pub model_prior: ModelPrior,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            sweeps: 25_000,
            burn_in: 10_000,
            thin: 1,
            rj_enabled: false,
            model_prior: ModelPrior::Uniform,
        }
    }
}

impl BaselineConfig {
    fn validate(&self) -> Result<()> {
        if self.burn_in >= self.sweeps || self.thin == 0 {
            return Err(Error::Config(format!(
                "invalid sweep schedule: sweeps {}, burn-in {}, thin {}",
                self.sweeps, self.burn_in, self.thin
            )));
        }
        self.model_prior.validate()
    }
}

/// Parameters of the homogeneous HMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HhmmParams {
    pub regression: [StateRegression; 2],
    pub p11: f64,
    pub p22: f64,
    pub pi1: [f64; 2],
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl HhmmParams {
    /// The equivalent NHHMM: empty transition mask and intercept-only
    /// logistic coefficients `logit(p_ss)`.
    pub fn to_nhhmm(&self) -> NhhmmParams {
        let sp = |s: usize, p: f64| StateParams {
            regression: self.regression[s].clone(),
            logistic: StateLogistic { beta: vec![logit(p)] },
        };
        NhhmmParams {
            states: [sp(0, self.p11), sp(1, self.p22)],
            pi1: self.pi1,
        }
    }

    pub fn from_nhhmm(p: &NhhmmParams) -> Result<Self> {
        if p.states.iter().any(|s| s.logistic.beta.len() != 1) {
            return Err(Error::InvalidData("HHMM draws carry intercept-only logistic coefficients".into()));
        }
        Ok(Self {
            regression: [p.states[0].regression.clone(), p.states[1].regression.clone()],
            p11: logistic(p.states[0].logistic.beta[0]),
            p22: logistic(p.states[1].logistic.beta[0]),
            pi1: p.pi1,
        })
    }
}

/// Log likelihood of the homogeneous model with the state path summed out,
/// by a forward recursion over the constant transition matrix in log space.
pub fn hhmm_log_marginal(dataset: &TimeSeriesDataset, params: &HhmmParams, mean_mask: Mask) -> Result<f64> {
    for p in [params.p11, params.p22] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("persistence probability {p} outside (0, 1)")));
        }
    }
    let ln_p = [
        [params.p11.ln(), (1.0 - params.p11).ln()],
        [(1.0 - params.p22).ln(), params.p22.ln()],
    ];
    let y = dataset.y();
    let mut la = [params.pi1[0].ln(), params.pi1[1].ln()];
    for t in 1..y.len() {
        let mut next = [0.0; 2];
        for (j, n) in next.iter_mut().enumerate() {
            let a = la[0] + ln_p[0][j];
            let b = la[1] + ln_p[1][j];
            let m = a.max(b);
            let reg = &params.regression[j];
            let mu = linear_predictor(dataset.row(t - 1), mean_mask, &reg.b);
            *n = m + ((a - m).exp() + (b - m).exp()).ln() + normal_logpdf_unchecked(y[t], mu, reg.sigma2);
        }
        la = next;
    }
    let m = la[0].max(la[1]);
    Ok(m + ((la[0] - m).exp() + (la[1] - m).exp()).ln())
}

fn beta_draw<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let d = Beta::new(a, b).map_err(|e| Error::Domain(format!("beta({a}, {b}): {e}")))?;
    Ok(d.sample(rng).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
}

/// Gibbs sampler for the homogeneous HMM with Beta(1, 1) priors on the
/// persistence probabilities. Draws are stored in NHHMM form so the
/// forecasting and scoring code applies unchanged.
pub fn fit_hhmm<R: Rng + ?Sized>(
    dataset: &TimeSeriesDataset,
    mean_mask: Mask,
    prior: &PriorConfig,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> Result<(ChainStore<McmcDraw>, JumpStats)> {
    cfg.validate()?;
    prior.validate(dataset.pool_width())?;
    let width = dataset.pool_width();
    let mut indicator = ModelIndicator::new(mean_mask, Mask::empty(width));
    let (init, _) = initial_state(dataset, &indicator, prior)?;
    let mut hp = HhmmParams {
        regression: [init.states[0].regression.clone(), init.states[1].regression.clone()],
        p11: 0.5,
        p22: 0.5,
        pi1: [0.5, 0.5],
    };
    let mut store = ChainStore::new(cfg.burn_in, cfg.thin);
    let mut jumps = JumpStats::default();
    for sweep in 0..cfg.sweeps {
        let mut step = || -> Result<(Vec<State>, f64)> {
            let params = hp.to_nhhmm();
            let (z, lm) = ffbs_sample(dataset, &params, &indicator, rng)?;
            let stats: [SuffStats; 2] = State::BOTH.map(|s| mean_suff_stats(dataset, &z, s));
            for s in State::BOTH {
                let post = mean_posterior_from_stats(&stats[s.index()], indicator.mean_mask, prior)?;
                hp.regression[s.index()] = draw_mean_params(&post, rng)?;
            }
            let mut n = [[0usize; 2]; 2];
            for w in z.windows(2) {
                n[w[0].index()][w[1].index()] += 1;
            }
            hp.p11 = beta_draw(1.0 + n[0][0] as f64, 1.0 + n[0][1] as f64, rng)?;
            hp.p22 = beta_draw(1.0 + n[1][1] as f64, 1.0 + n[1][0] as f64, rng)?;
            if cfg.rj_enabled {
                let sigma2 = [hp.regression[0].sigma2, hp.regression[1].sigma2];
                let p = propose_jump(&indicator, Equation::Mean, rng);
                let out = accept_mean_jump_with_stats(&stats, &indicator, &p, sigma2, prior, cfg.model_prior, rng)?;
                jumps.proposed += 1;
                jumps.noop += usize::from(p.is_noop());
                jumps.non_finite += usize::from(out.non_finite);
                if let Some([b1, b2]) = out.coefficients {
                    jumps.accepted += 1;
                    indicator = out.indicator;
                    hp.regression[0].b = b1;
                    hp.regression[1].b = b2;
                }
            }
            Ok((z, lm))
        };
        let (z, lm) = step().map_err(|e| e.at_sweep(sweep))?;
        if store.retains(sweep) {
            store.push(McmcDraw {
                sweep,
                params: hp.to_nhhmm(),
                indicator,
                z_path: z,
                aug_omega: None,
                forecast: None,
                log_marginal: lm,
            });
        }
    }
    Ok((store, jumps))
}

/// Parameters of the single-regime regression over
/// `(1, selected covariates, y lags)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinRegParams {
    pub b: Vec<f64>,
    pub sigma2: f64,
    pub n_lags: usize,
}

/// One retained regression draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinRegDraw {
    pub sweep: usize,
    pub params: LinRegParams,
    /// Mask over the lag-augmented pool; lag columns are always set.
    pub mask: Mask,
}

/// A fitted regression: retained draws plus the lag-augmented data they
/// refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRegFit {
    pub chain: ChainStore<LinRegDraw>,
    pub dataset: TimeSeriesDataset,
    pub ar_columns: Vec<(usize, usize)>,
    pub jumps: JumpStats,
}

/// Conjugate Normal-Inverse-Gamma sampler for
/// `y_t = (1, X_{t-1}, y_{t-1}, ..., y_{t-n_lags}) B + e_t`.
///
/// `mask` selects pool covariates; with reversible jump enabled it is the
/// starting model and only pool covariates move, never the lags.
pub fn fit_linreg<R: Rng + ?Sized>(
    dataset: &TimeSeriesDataset,
    mask: Mask,
    n_lags: usize,
    prior: &PriorConfig,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> Result<LinRegFit> {
    cfg.validate()?;
    let base = dataset.pool_width();
    if mask.width() != base {
        return Err(Error::Dimension {
            context: "regression mask width",
            expected: base,
            found: mask.width(),
        });
    }
    let (aug, ar_columns) = dataset.with_ar_lags(n_lags)?;
    if aug.len() <= mask.dim() + n_lags {
        return Err(Error::InvalidData(format!(
            "{} observations cannot support {} regression coefficients",
            aug.len(),
            mask.dim() + n_lags
        )));
    }
    let aug_prior = PriorConfig {
        mean_coef: extend_prior(&prior.mean_coef, aug.pool_width()),
        ..prior.clone()
    };
    let lag_bits: u64 = ar_columns.iter().fold(0, |b, &(c, _)| b | (1 << c));
    let to_aug = |m: Mask| -> Mask {
        let idx: Vec<usize> = (0..aug.pool_width()).filter(|&j| (j < base && m.contains(j)) || lag_bits >> j & 1 == 1).collect();
        Mask::from_indices(aug.pool_width(), &idx).expect("valid lag mask")
    };
    let z = vec![State::One; aug.len()];
    let stats = mean_suff_stats(&aug, &z, State::One);
    let mut cov_mask = mask;
    let mut post = mean_posterior_from_stats(&stats, to_aug(cov_mask), &aug_prior)?;
    let mut reg = draw_mean_params(&post, rng)?;
    let mut chain = ChainStore::new(cfg.burn_in, cfg.thin);
    let mut jumps = JumpStats::default();
    for sweep in 0..cfg.sweeps {
        if cfg.rj_enabled {
            let ind = ModelIndicator::new(cov_mask, Mask::empty(base));
            let p = propose_jump(&ind, Equation::Mean, rng);
            jumps.proposed += 1;
            if let Some(j) = p.covariate_index {
                let proposed = cov_mask.toggled(j);
                let new = mean_posterior_from_stats(&stats, to_aug(proposed), &aug_prior)?;
                let log_a = p.log_proposal_ratio
                    + prior_log_ratio(cfg.model_prior, p.action)
                    + new.log_evidence_kernel(reg.sigma2)
                    - post.log_evidence_kernel(reg.sigma2);
                if !log_a.is_finite() {
                    jumps.non_finite += 1;
                } else if log_a >= 0.0 || rng.random::<f64>().ln() < log_a {
                    jumps.accepted += 1;
                    cov_mask = proposed;
                    post = new;
                }
            } else {
                jumps.noop += 1;
            }
        }
        reg = draw_mean_params(&post, rng).map_err(|e| e.at_sweep(sweep))?;
        if chain.retains(sweep) {
            chain.push(LinRegDraw {
                sweep,
                params: LinRegParams {
                    b: reg.b.clone(),
                    sigma2: reg.sigma2,
                    n_lags,
                },
                mask: to_aug(cov_mask),
            });
        }
    }
    Ok(LinRegFit {
        chain,
        dataset: aug,
        ar_columns,
        jumps,
    })
}

fn prior_log_ratio(p: ModelPrior, action: JumpAction) -> f64 {
    match (p, action) {
        (ModelPrior::Uniform, _) => 0.0,
        (ModelPrior::Bernoulli(q), JumpAction::Add) => (q / (1.0 - q)).ln(),
        (ModelPrior::Bernoulli(q), JumpAction::Remove) => ((1.0 - q) / q).ln(),
    }
}

/// Pads a pool prior with the isotropic variance for lag coordinates.
fn extend_prior(p: &crate::types::CoefPrior, width: usize) -> crate::types::CoefPrior {
    let dim = width + 1;
    let mut out = p.clone();
    if let Some(m) = &mut out.mean {
        m.resize(dim, 0.0);
    }
    if let Some(c) = &mut out.cov {
        let old = c.len();
        for row in c.iter_mut() {
            row.resize(dim, 0.0);
        }
        for i in old..dim {
            let mut row = vec![0.0; dim];
            row[i] = p.variance;
            c.push(row);
        }
    }
    out
}

/// Iterated predictive path of one regression draw.
pub fn linreg_predict_path<R: Rng + ?Sized>(
    draw: &LinRegDraw,
    future: &FutureCovariates,
    horizons: usize,
    rng: &mut R,
) -> Result<DrawForecast> {
    if future.len() < horizons || horizons == 0 {
        return Err(Error::Dimension {
            context: "future covariate rows",
            expected: horizons.max(1),
            found: future.len(),
        });
    }
    let mut values = Vec::with_capacity(horizons);
    let mut mixtures = Vec::with_capacity(horizons);
    let mut row = Vec::new();
    for h in 0..horizons {
        future.row_for(h, &values, &mut row);
        if row.len() != draw.mask.width() {
            return Err(Error::Dimension {
                context: "future covariate row",
                expected: draw.mask.width(),
                found: row.len(),
            });
        }
        let mu = linear_predictor(&row, draw.mask, &draw.params.b);
        let e: f64 = StandardNormal.sample(rng);
        values.push(mu + draw.params.sigma2.sqrt() * e);
        mixtures.push(PredictiveMixture {
            weights: vec![1.0],
            means: vec![mu],
            vars: vec![draw.params.sigma2],
        });
    }
    Ok(DrawForecast { values, mixtures })
}

/// Predictive ensemble of a fitted regression. `holdout_rows` carry the
/// original pool covariates only.
pub fn linreg_ensemble<R: Rng + ?Sized>(
    fit: &LinRegFit,
    holdout_rows: &[Vec<f64>],
    horizons: usize,
    rng: &mut R,
) -> Result<ForecastEnsemble> {
    let future = FutureCovariates::from_holdout_lagged(&fit.dataset, holdout_rows, horizons, &fit.ar_columns)?;
    let paths = fit
        .chain
        .draws
        .iter()
        .map(|d| linreg_predict_path(d, &future, horizons, rng))
        .collect::<Result<Vec<_>>>()?;
    ForecastEnsemble::from_forecasts(paths, PredictionMode::Bma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{compute_transitions, emission_log_densities, forward_filter};
    use crate::simgen::{generate, SimConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hhmm_world(p11: f64, p22: f64, t_len: usize) -> SimConfig {
        SimConfig {
            name: "hhmm".into(),
            t_len,
            holdout: 0,
            covariate_means: vec![0.0, 1.0],
            covariate_sds: vec![1.0, 1.0],
            mean_covariates: vec![0],
            trans_covariates: vec![],
            b: [vec![3.0, 1.0], vec![-3.0, 0.5]],
            sigma2: [1.0, 0.5],
            beta: [vec![logit(p11)], vec![logit(p22)]],
            seed: 5,
        }
    }

    #[test]
    fn forward_recursions_agree() {
        let sim = hhmm_world(0.9, 0.8, 200);
        let out = generate(&sim).unwrap();
        let hp = HhmmParams::from_nhhmm(&sim.params()).unwrap();
        let mask = sim.indicator().unwrap().mean_mask;
        let direct = hhmm_log_marginal(&out.dataset, &hp, mask).unwrap();
        let ind = ModelIndicator::new(mask, Mask::empty(2));
        let p = hp.to_nhhmm();
        let tr = compute_transitions(&out.dataset, ind.trans_mask, &p.states[0].logistic.beta, &p.states[1].logistic.beta).unwrap();
        let em = emission_log_densities(&out.dataset, &p, ind.mean_mask).unwrap();
        let f = forward_filter(&tr, &em, p.pi1).unwrap();
        assert!((f.log_marginal() - direct).abs() < 1e-8);
    }

    #[test]
    fn hhmm_recovers_persistence() {
        let sim = hhmm_world(0.9, 0.8, 1000);
        let out = generate(&sim).unwrap();
        let cfg = BaselineConfig {
            sweeps: 1500,
            burn_in: 500,
            ..BaselineConfig::default()
        };
        let mask = sim.indicator().unwrap().mean_mask;
        let (chain, _) = fit_hhmm(&out.dataset, mask, &PriorConfig::default(), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let n = chain.len() as f64;
        let mut hp: Vec<HhmmParams> = chain.draws.iter().map(|d| HhmmParams::from_nhhmm(&d.params).unwrap()).collect();
        if hp.iter().map(|h| h.regression[0].b[0]).sum::<f64>() < 0.0 {
            for h in &mut hp {
                std::mem::swap(&mut h.p11, &mut h.p22);
            }
        }
        let p11 = hp.iter().map(|h| h.p11).sum::<f64>() / n;
        let p22 = hp.iter().map(|h| h.p22).sum::<f64>() / n;
        assert!((p11 - 0.9).abs() < 0.05 && (p22 - 0.8).abs() < 0.05, "{p11} {p22}");
    }

    #[test]
    fn absorbing_state_gives_high_persistence() {
        // a short visit to the low regime, then the high regime forever
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..400)
            .map(|t| {
                let e: f64 = StandardNormal.sample(&mut rng);
                if t < 20 { -5.0 + e } else { 5.0 + e }
            })
            .collect();
        let d = TimeSeriesDataset::new(y, vec![vec![]; 400], vec![]).unwrap();
        let cfg = BaselineConfig {
            sweeps: 600,
            burn_in: 200,
            ..BaselineConfig::default()
        };
        let (chain, _) = fit_hhmm(&d, Mask::empty(0), &PriorConfig::default(), &cfg, &mut rng).unwrap();
        let mut stay = 0.0;
        for dr in &chain.draws {
            let hp = HhmmParams::from_nhhmm(&dr.params).unwrap();
            let high_is_one = hp.regression[0].b[0] > hp.regression[1].b[0];
            stay += if high_is_one { hp.p11 } else { hp.p22 };
        }
        let stay = stay / chain.len() as f64;
        assert!(stay > 0.99, "{stay}");
    }

    #[test]
    fn ar1_coefficient_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 2000;
        let mut y = vec![0.0; n];
        for t in 1..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            y[t] = 0.5 * y[t - 1] + e;
        }
        let d = TimeSeriesDataset::new(y, vec![vec![]; n], vec![]).unwrap();
        let cfg = BaselineConfig {
            sweeps: 2000,
            burn_in: 500,
            ..BaselineConfig::default()
        };
        let fit = fit_linreg(&d, Mask::empty(0), 1, &PriorConfig::default(), &cfg, &mut rng).unwrap();
        let phi = fit.chain.draws.iter().map(|d| d.params.b[1]).sum::<f64>() / fit.chain.len() as f64;
        assert!((phi - 0.5).abs() < 0.05, "{phi}");
    }

    #[test]
    fn noiseless_regression_recovers_coefficients() {
        let n = 50;
        let x: Vec<Vec<f64>> = (0..n).map(|t| vec![(t as f64 * 0.7).sin(), (t as f64 * 0.3).cos()]).collect();
        let y: Vec<f64> = (0..n).map(|t| if t == 0 { 0.0 } else { 1.5 - 2.0 * x[t - 1][0] + 0.25 * x[t - 1][1] }).collect();
        let d = TimeSeriesDataset::new(y, x, vec!["a".into(), "b".into()]).unwrap();
        let prior = PriorConfig {
            mean_coef: crate::types::CoefPrior::isotropic(1e12),
            ig_shape: 1e-3,
            ig_scale: 1e-12,
            ..PriorConfig::default()
        };
        let cfg = BaselineConfig {
            sweeps: 10,
            burn_in: 5,
            ..BaselineConfig::default()
        };
        let fit = fit_linreg(&d, Mask::full(2), 0, &prior, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for dr in &fit.chain.draws {
            for (a, b) in dr.params.b.iter().zip([1.5, -2.0, 0.25]) {
                assert!((a - b).abs() < 1e-6, "{:?}", dr.params.b);
            }
        }
    }

    #[test]
    fn linreg_one_step_mean_matches_draw() {
        let n = 100;
        let x: Vec<Vec<f64>> = (0..n).map(|t| vec![(t as f64).sin()]).collect();
        let y: Vec<f64> = (0..n).map(|t| (t as f64 * 0.1).cos()).collect();
        let d = TimeSeriesDataset::new(y, x, vec!["a".into()]).unwrap();
        let cfg = BaselineConfig {
            sweeps: 30,
            burn_in: 10,
            ..BaselineConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fit = fit_linreg(&d, Mask::full(1), 2, &PriorConfig::default(), &cfg, &mut rng).unwrap();
        let future = FutureCovariates::from_holdout_lagged(&fit.dataset, &[vec![0.3]], 1, &fit.ar_columns).unwrap();
        let draw = &fit.chain.draws[0];
        // horizon 1 reads the last observed row: x[99], y[99], y[98]
        let b = &draw.params.b;
        let expect = b[0] + b[1] * (99f64).sin() + b[2] * (9.9f64).cos() + b[3] * (9.8f64).cos();
        let f = linreg_predict_path(draw, &future, 1, &mut rng).unwrap();
        assert!((f.mixtures[0].means[0] - expect).abs() < 1e-10);
    }
}
