//! The MCMC driver.
//!
//! One sweep: transition probabilities, FFBS state path, mean-equation
//! Gibbs step, Polya-Gamma logistic step, the double reversible jump (mean
//! first, then transition) and, for retained sweeps, a predictive path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{ess, split_rhat, Ess};
use crate::error::{Error, Result};
use crate::forecast::{predict_path, quantile_sorted, FutureCovariates, PredictionMode};
use crate::gibbs::{draw_logistic_params, draw_mean_params, mean_posterior_from_stats, mean_suff_stats, SuffStats};
use crate::hmm::ffbs_sample;
use crate::rjmcmc::{accept_mean_jump_with_stats, accept_trans_jump, propose_jump, JumpOutcome, ModelPrior};
use crate::types::{
    linear_predictor, ChainStore, Equation, McmcDraw, ModelIndicator, NhhmmParams, PriorConfig, State,
    StateLogistic, StateParams, StateRegression, TimeSeriesDataset,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Total sweeps, burn-in included.
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub rj_enabled: bool,
    pub forecast_horizons: usize,
    pub prediction_mode: PredictionMode,
    pub model_prior: ModelPrior,
    /// Starting model; the full pool in both equations when absent.
    pub initial_indicator: Option<ModelIndicator>,
    /// Keep the Polya-Gamma auxiliaries in every retained draw.
    pub store_omega: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sweeps: 25_000,
            burn_in: 10_000,
            thin: 1,
            n_chains: 1,
            seed: 0,
            rj_enabled: true,
            forecast_horizons: 0,
            prediction_mode: PredictionMode::Bma,
            model_prior: ModelPrior::Uniform,
            initial_indicator: None,
            store_omega: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.sweeps {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the number of sweeps ({})",
                self.burn_in, self.sweeps
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be at least 1".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("need at least one chain".into()));
        }
        self.model_prior.validate()
    }
}

/// Reversible-jump counters of one chain.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JumpStats {
    pub proposed: usize,
    pub accepted: usize,
    /// Moves with no eligible covariate.
    pub noop: usize,
    pub non_finite: usize,
}

impl JumpStats {
    fn record(&mut self, o: &JumpOutcome) {
        self.proposed += 1;
        self.accepted += usize::from(o.accepted);
        self.noop += usize::from(o.proposal.is_noop());
        self.non_finite += usize::from(o.non_finite);
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn merge(&mut self, o: &JumpStats) {
        self.proposed += o.proposed;
        self.accepted += o.accepted;
        self.noop += o.noop;
        self.non_finite += o.non_finite;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainStats {
    pub mean_jumps: JumpStats,
    pub trans_jumps: JumpStats,
    /// Sweeps where a state had no transition observations.
    pub empty_state_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub chains: Vec<ChainStore<McmcDraw>>,
    pub stats: Vec<ChainStats>,
}

/// Per-chain generator: a fixed seed with the chain index as stream.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Median split of `y`, per-cluster regression fits and zero logistic
/// coefficients.
pub fn initial_state(
    dataset: &TimeSeriesDataset,
    indicator: &ModelIndicator,
    prior: &PriorConfig,
) -> Result<(NhhmmParams, Vec<State>)> {
    let y = dataset.y();
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = quantile_sorted(&sorted, 0.5);
    let mut z: Vec<State> = y.iter().map(|&v| if v > med { State::Two } else { State::One }).collect();
    if z.iter().all(|&s| s == z[0]) {
        // constant series: split in time instead
        let half = z.len() / 2;
        for s in &mut z[half..] {
            *s = State::Two;
        }
    }
    let mut states = Vec::with_capacity(2);
    for s in State::BOTH {
        let st = mean_suff_stats(dataset, &z, s);
        let post = mean_posterior_from_stats(&st, indicator.mean_mask, prior)?;
        let b: Vec<f64> = post.l.iter().copied().collect();
        let (mut rss, mut n) = (0.0, 0usize);
        for t in 1..y.len() {
            if z[t] == s {
                let r = y[t] - linear_predictor(dataset.row(t - 1), indicator.mean_mask, &b);
                rss += r * r;
                n += 1;
            }
        }
        let var = if n > 1 { rss / (n - 1) as f64 } else { 1.0 };
        states.push(StateParams {
            regression: StateRegression {
                b,
                sigma2: var.max(1e-6),
            },
            logistic: StateLogistic {
                beta: vec![0.0; indicator.trans_mask.dim()],
            },
        });
    }
    let states: [StateParams; 2] = states.try_into().expect("two states");
    Ok((NhhmmParams { states, pi1: [0.5, 0.5] }, z))
}

/// Runs every chain; chains execute on separate threads when there are
/// several.
pub fn run(
    dataset: &TimeSeriesDataset,
    prior: &PriorConfig,
    cfg: &RunConfig,
    future: Option<&FutureCovariates>,
) -> Result<RunOutput> {
    cfg.validate()?;
    prior.validate(dataset.pool_width())?;
    if cfg.forecast_horizons > 0 {
        match future {
            Some(f) if f.len() >= cfg.forecast_horizons => {}
            Some(f) => {
                return Err(Error::Dimension {
                    context: "future covariate rows",
                    expected: cfg.forecast_horizons,
                    found: f.len(),
                })
            }
            None => return Err(Error::Config("forecasting requested without future covariates".into())),
        }
    }
    let results: Vec<Result<(ChainStore<McmcDraw>, ChainStats)>> = if cfg.n_chains == 1 {
        vec![run_chain(dataset, prior, cfg, future, 0)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..cfg.n_chains)
                .map(|c| scope.spawn(move || run_chain(dataset, prior, cfg, future, c)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidData("chain thread panicked".into()))))
                .collect()
        })
    };
    let mut chains = Vec::with_capacity(cfg.n_chains);
    let mut stats = Vec::with_capacity(cfg.n_chains);
    for r in results {
        let (c, s) = r?;
        chains.push(c);
        stats.push(s);
    }
    Ok(RunOutput { chains, stats })
}

/// One chain with its own generator stream.
pub fn run_chain(
    dataset: &TimeSeriesDataset,
    prior: &PriorConfig,
    cfg: &RunConfig,
    future: Option<&FutureCovariates>,
    chain: usize,
) -> Result<(ChainStore<McmcDraw>, ChainStats)> {
    let mut rng = chain_rng(cfg.seed, chain);
    let width = dataset.pool_width();
    let mut indicator = cfg.initial_indicator.unwrap_or_else(|| ModelIndicator::full(width));
    if indicator.mean_mask.width() != width || indicator.trans_mask.width() != width {
        return Err(Error::Dimension {
            context: "initial model width",
            expected: width,
            found: indicator.mean_mask.width(),
        });
    }
    let (mut params, _) = initial_state(dataset, &indicator, prior)?;
    let mut store = ChainStore::new(cfg.burn_in, cfg.thin);
    let mut stats = ChainStats::default();
    for sweep in 0..cfg.sweeps {
        let draw = sweep_once(dataset, prior, cfg, &mut params, &mut indicator, &mut stats, &mut rng)
            .map_err(|e| e.at_sweep(sweep))?;
        if store.retains(sweep) {
            let (z_path, log_marginal, omega) = draw;
            let mut d = McmcDraw {
                sweep,
                params: params.clone(),
                indicator,
                z_path,
                aug_omega: if cfg.store_omega { Some(omega) } else { None },
                forecast: None,
                log_marginal,
            };
            if cfg.forecast_horizons > 0 {
                let f = future.expect("checked in run");
                d.forecast = Some(predict_path(&d, f, cfg.forecast_horizons, &mut rng).map_err(|e| e.at_sweep(sweep))?);
            }
            store.push(d);
        }
    }
    Ok((store, stats))
}

type SweepDraw = (Vec<State>, f64, [Vec<f64>; 2]);

fn sweep_once<R: Rng + ?Sized>(
    dataset: &TimeSeriesDataset,
    prior: &PriorConfig,
    cfg: &RunConfig,
    params: &mut NhhmmParams,
    indicator: &mut ModelIndicator,
    stats: &mut ChainStats,
    rng: &mut R,
) -> Result<SweepDraw> {
    let (z, log_marginal) = ffbs_sample(dataset, params, indicator, rng)?;

    let mean_stats: [SuffStats; 2] = State::BOTH.map(|s| mean_suff_stats(dataset, &z, s));
    for s in State::BOTH {
        let post = mean_posterior_from_stats(&mean_stats[s.index()], indicator.mean_mask, prior)?;
        params.state_mut(s).regression = draw_mean_params(&post, rng)?;
    }

    let mut aug: Vec<SuffStats> = Vec::with_capacity(2);
    let mut omega: Vec<Vec<f64>> = Vec::with_capacity(2);
    for s in State::BOTH {
        let current = params.state(s).logistic.beta.clone();
        let ld = draw_logistic_params(dataset, &z, s, indicator.trans_mask, &current, prior, rng)?;
        stats.empty_state_sweeps += usize::from(ld.prior_only);
        params.state_mut(s).logistic.beta = ld.beta;
        aug.push(ld.stats);
        omega.push(ld.omega);
    }
    let aug: [SuffStats; 2] = aug.try_into().expect("two states");

    if cfg.rj_enabled {
        let sigma2 = State::BOTH.map(|s| params.state(s).regression.sigma2);
        let p = propose_jump(indicator, Equation::Mean, rng);
        let out = accept_mean_jump_with_stats(&mean_stats, indicator, &p, sigma2, prior, cfg.model_prior, rng)?;
        stats.mean_jumps.record(&out);
        if let Some([b1, b2]) = out.coefficients {
            *indicator = out.indicator;
            params.states[0].regression.b = b1;
            params.states[1].regression.b = b2;
        }
        let p = propose_jump(indicator, Equation::Trans, rng);
        let out = accept_trans_jump(&aug, indicator, &p, prior, cfg.model_prior, rng)?;
        stats.trans_jumps.record(&out);
        if let Some([b1, b2]) = out.coefficients {
            *indicator = out.indicator;
            params.states[0].logistic.beta = b1;
            params.states[1].logistic.beta = b2;
        }
    }
    let [o1, o2]: [Vec<f64>; 2] = omega.try_into().expect("two states");
    Ok((z, log_marginal, [o1, o2]))
}

/// Swaps the state labels of every draw.
pub fn relabel(chains: &mut [ChainStore<McmcDraw>]) {
    for c in chains {
        for d in &mut c.draws {
            d.params = d.params.swapped();
            for z in &mut d.z_path {
                *z = z.other();
            }
            if let Some([a, b]) = d.aug_omega.take() {
                d.aug_omega = Some([b, a]);
            }
        }
    }
}

/// Relabels whole chains so their sampled paths agree best with
/// `reference`. Label switches between chains then no longer mix the two
/// states in pooled summaries.
pub fn align_to_path(chains: &mut [ChainStore<McmcDraw>], reference: &[State]) {
    for i in 0..chains.len() {
        let (mut same, mut total) = (0usize, 0usize);
        for d in &chains[i].draws {
            same += d.z_path.iter().zip(reference).filter(|(a, b)| a == b).count();
            total += d.z_path.len().min(reference.len());
        }
        if 2 * same < total {
            relabel(&mut chains[i..=i]);
        }
    }
}

/// Pointwise most probable state of the first chain, a reference for
/// [`align_to_path`].
pub fn modal_path(chain: &ChainStore<McmcDraw>) -> Vec<State> {
    state_probabilities(std::slice::from_ref(chain))
        .into_iter()
        .map(|p| if p >= 0.5 { State::One } else { State::Two })
        .collect()
}

/// Names of the scalar parameters, in table order. Coefficients of pool
/// covariates are listed when any draw includes them.
pub fn parameter_names(chains: &[ChainStore<McmcDraw>], names: &[String]) -> Vec<String> {
    let (mut mean_any, mut trans_any) = (0u64, 0u64);
    for d in chains.iter().flat_map(|c| &c.draws) {
        mean_any |= d.indicator.mean_mask.bits();
        trans_any |= d.indicator.trans_mask.bits();
    }
    let mut out = Vec::new();
    for s in ["s1", "s2"] {
        out.push(format!("{s}.b.const"));
        out.extend((0..names.len()).filter(|j| mean_any >> j & 1 == 1).map(|j| format!("{s}.b.{}", names[j])));
        out.push(format!("{s}.sigma2"));
        out.push(format!("{s}.beta.const"));
        out.extend((0..names.len()).filter(|j| trans_any >> j & 1 == 1).map(|j| format!("{s}.beta.{}", names[j])));
    }
    out
}

/// Scalar parameters of one draw over the whole pool; excluded covariates
/// contribute zero.
pub fn embed_draw(d: &McmcDraw, names: &[String]) -> Vec<(String, f64)> {
    let w = names.len();
    let mut out = Vec::new();
    for (si, s) in ["s1", "s2"].into_iter().enumerate() {
        let sp = &d.params.states[si];
        let mut b = vec![0.0; w];
        for (k, j) in d.indicator.mean_mask.active().enumerate() {
            b[j] = sp.regression.b[k + 1];
        }
        out.push((format!("{s}.b.const"), sp.regression.b[0]));
        out.extend((0..w).map(|j| (format!("{s}.b.{}", names[j]), b[j])));
        out.push((format!("{s}.sigma2"), sp.regression.sigma2));
        let mut beta = vec![0.0; w];
        for (k, j) in d.indicator.trans_mask.active().enumerate() {
            beta[j] = sp.logistic.beta[k + 1];
        }
        out.push((format!("{s}.beta.const"), sp.logistic.beta[0]));
        out.extend((0..w).map(|j| (format!("{s}.beta.{}", names[j]), beta[j])));
    }
    out
}

/// Per-chain traces of every named parameter.
pub fn traces(chains: &[ChainStore<McmcDraw>], names: &[String]) -> Vec<(String, Vec<Vec<f64>>)> {
    let params = parameter_names(chains, names);
    let mut out: Vec<(String, Vec<Vec<f64>>)> = params.iter().map(|p| (p.clone(), vec![Vec::new(); chains.len()])).collect();
    let index: std::collections::HashMap<&str, usize> = params.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    for (ci, c) in chains.iter().enumerate() {
        for d in &c.draws {
            for (name, v) in embed_draw(d, names) {
                if let Some(&i) = index.get(name.as_str()) {
                    out[i].1[ci].push(v);
                }
            }
        }
    }
    out
}

/// One row of the posterior summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    /// `None` when the trace is constant.
    pub ess: Option<f64>,
    /// Split R-hat across chains; `NaN` when undefined.
    pub rhat: f64,
}

pub fn summarize(chains: &[ChainStore<McmcDraw>], names: &[String]) -> Vec<ParameterSummary> {
    traces(chains, names)
        .into_iter()
        .map(|(parameter, per_chain)| {
            let mut all: Vec<f64> = per_chain.iter().flatten().copied().collect();
            let n = all.len() as f64;
            let mean = all.iter().sum::<f64>() / n;
            let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
            all.sort_by(f64::total_cmp);
            let refs: Vec<&[f64]> = per_chain.iter().map(|c| c.as_slice()).collect();
            ParameterSummary {
                parameter,
                mean,
                sd,
                q025: quantile_sorted(&all, 0.025),
                median: quantile_sorted(&all, 0.5),
                q975: quantile_sorted(&all, 0.975),
                ess: match ess(&refs) {
                    Ess::Value(v) => Some(v),
                    Ess::Degenerate => None,
                },
                rhat: split_rhat(&refs),
            }
        })
        .collect()
}

/// Columns `parameter,mean,sd,q025,median,q975,ess,rhat`.
pub fn write_summary_csv<W: std::io::Write>(rows: &[ParameterSummary], mut w: W) -> Result<()> {
    writeln!(w, "parameter,mean,sd,q025,median,q975,ess,rhat")?;
    for r in rows {
        let ess = r.ess.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{},{},{}", r.parameter, r.mean, r.sd, r.q025, r.median, r.q975, ess, r.rhat)?;
    }
    Ok(())
}

/// Columns `chain,sweep,parameter,value`.
pub fn write_trace_csv<W: std::io::Write>(chains: &[ChainStore<McmcDraw>], names: &[String], mut w: W) -> Result<()> {
    writeln!(w, "chain,sweep,parameter,value")?;
    for (ci, c) in chains.iter().enumerate() {
        for d in &c.draws {
            for (p, v) in embed_draw(d, names) {
                writeln!(w, "{ci},{},{p},{v}", d.sweep)?;
            }
        }
    }
    Ok(())
}

/// Posterior mean of `P(z[t+1] = s | z[t] = s)` for every slot.
pub fn posterior_persistence(chains: &[ChainStore<McmcDraw>], dataset: &TimeSeriesDataset) -> [Vec<f64>; 2] {
    let slots = dataset.len() - 1;
    let mut acc = [vec![0.0; slots], vec![0.0; slots]];
    let mut n = 0usize;
    for d in chains.iter().flat_map(|c| &c.draws) {
        for s in State::BOTH {
            let beta = &d.params.state(s).logistic.beta;
            for (t, a) in acc[s.index()].iter_mut().enumerate() {
                *a += crate::distributions::logistic(linear_predictor(dataset.row(t), d.indicator.trans_mask, beta));
            }
        }
        n += 1;
    }
    for v in acc.iter_mut().flatten() {
        *v /= n.max(1) as f64;
    }
    acc
}

/// Posterior probability of state 1 at each time.
pub fn state_probabilities(chains: &[ChainStore<McmcDraw>]) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for d in chains.iter().flat_map(|c| &c.draws) {
        if acc.is_empty() {
            acc = vec![0.0; d.z_path.len()];
        }
        for (a, z) in acc.iter_mut().zip(&d.z_path) {
            *a += f64::from(u8::from(*z == State::One));
        }
        n += 1;
    }
    acc.iter().map(|a| a / n.max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{exp3, generate};

    fn small_cfg() -> RunConfig {
        RunConfig {
            sweeps: 60,
            burn_in: 20,
            thin: 2,
            n_chains: 2,
            seed: 7,
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut c = small_cfg();
        c.burn_in = 60;
        assert!(c.validate().is_err());
        c.burn_in = 0;
        c.thin = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn short_run_has_expected_shape_and_is_deterministic() {
        let mut sim = exp3();
        sim.t_len = 200;
        let out = generate(&sim).unwrap();
        let cfg = small_cfg();
        let a = run(&out.dataset, &PriorConfig::default(), &cfg, None).unwrap();
        assert_eq!(a.chains.len(), 2);
        assert_eq!(a.chains[0].len(), 20);
        assert!(a.chains[0].draws.iter().all(|d| d.sweep >= 20 && d.sweep % 2 == 0));
        let b = run(&out.dataset, &PriorConfig::default(), &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.chains[0].draws, a.chains[1].draws);
        let s = summarize(&a.chains, out.dataset.names());
        assert_eq!(s.len(), parameter_names(&a.chains, out.dataset.names()).len());
    }

    #[test]
    fn fixed_model_run_keeps_the_initial_model() {
        let mut sim = exp3();
        sim.t_len = 150;
        let out = generate(&sim).unwrap();
        let ind = sim.indicator().unwrap();
        let cfg = RunConfig {
            rj_enabled: false,
            initial_indicator: Some(ind),
            n_chains: 1,
            ..small_cfg()
        };
        let r = run(&out.dataset, &PriorConfig::default(), &cfg, None).unwrap();
        assert!(r.chains[0].draws.iter().all(|d| d.indicator == ind));
        assert_eq!(r.stats[0].mean_jumps.proposed, 0);
    }

    #[test]
    fn forecasts_are_stored_when_requested() {
        let mut sim = exp3();
        sim.t_len = 150;
        let out = generate(&sim).unwrap();
        let f = FutureCovariates::from_holdout(&out.dataset, &out.holdout_x, 3).unwrap();
        let cfg = RunConfig {
            forecast_horizons: 3,
            n_chains: 1,
            ..small_cfg()
        };
        let r = run(&out.dataset, &PriorConfig::default(), &cfg, Some(&f)).unwrap();
        assert!(r.chains[0].draws.iter().all(|d| d.forecast.as_ref().unwrap().values.len() == 3));
        let cfg = RunConfig { forecast_horizons: 3, ..small_cfg() };
        assert!(run(&out.dataset, &PriorConfig::default(), &cfg, None).is_err());
    }

    #[test]
    fn relabel_swaps_states() {
        let mut sim = exp3();
        sim.t_len = 100;
        let out = generate(&sim).unwrap();
        let cfg = RunConfig { n_chains: 1, ..small_cfg() };
        let r = run(&out.dataset, &PriorConfig::default(), &cfg, None).unwrap();
        let mut chains = r.chains.clone();
        relabel(&mut chains);
        let (a, b) = (&r.chains[0].draws[0], &chains[0].draws[0]);
        assert_eq!(a.params.states[0], b.params.states[1]);
        assert_eq!(a.z_path[5], b.z_path[5].other());
    }
}
