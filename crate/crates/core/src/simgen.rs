//! Synthetic two-state NHHMM data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::logistic;
use crate::error::{Error, Result};
use crate::types::{
    linear_predictor, Mask, ModelIndicator, NhhmmParams, State, StateLogistic, StateParams, StateRegression,
    TimeSeriesDataset,
};

/// A simulated world: independent normal covariates, logistic persistence
/// and a Gaussian regression per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub name: String,
    /// Training length.
    pub t_len: usize,
    /// Extra observations generated after the training window.
    pub holdout: usize,
    pub covariate_means: Vec<f64>,
    pub covariate_sds: Vec<f64>,
    /// Active pool indices (0-based) of the mean equation.
    pub mean_covariates: Vec<usize>,
    /// Active pool indices (0-based) of the transition equation.
    pub trans_covariates: Vec<usize>,
    /// Mean coefficients per state over `(1, mean covariates)`.
    pub b: [Vec<f64>; 2],
    pub sigma2: [f64; 2],
    /// Logistic persistence coefficients per state over `(1, trans covariates)`.
    pub beta: [Vec<f64>; 2],
    pub seed: u64,
}

impl SimConfig {
    pub fn width(&self) -> usize {
        self.covariate_means.len()
    }

    pub fn indicator(&self) -> Result<ModelIndicator> {
        Ok(ModelIndicator::new(
            Mask::from_indices(self.width(), &self.mean_covariates)?,
            Mask::from_indices(self.width(), &self.trans_covariates)?,
        ))
    }

    /// True parameters in the sampler's representation. Zero variances are
    /// kept as given.
    pub fn params(&self) -> NhhmmParams {
        let sp = |s: usize| StateParams {
            regression: StateRegression {
                b: self.b[s].clone(),
                sigma2: self.sigma2[s],
            },
            logistic: StateLogistic {
                beta: self.beta[s].clone(),
            },
        };
        NhhmmParams {
            states: [sp(0), sp(1)],
            pi1: [0.5, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.width();
        if self.covariate_sds.len() != w {
            return Err(Error::Dimension {
                context: "covariate sds",
                expected: w,
                found: self.covariate_sds.len(),
            });
        }
        if let Some(sd) = self.covariate_sds.iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::Config(format!("covariate sd must be positive, got {sd}")));
        }
        if self.t_len < 3 {
            return Err(Error::Config(format!("need at least 3 training observations, got {}", self.t_len)));
        }
        let ind = self.indicator()?;
        for s in 0..2 {
            if self.b[s].len() != ind.mean_mask.dim() {
                return Err(Error::Dimension {
                    context: "true mean coefficients",
                    expected: ind.mean_mask.dim(),
                    found: self.b[s].len(),
                });
            }
            if self.beta[s].len() != ind.trans_mask.dim() {
                return Err(Error::Dimension {
                    context: "true logistic coefficients",
                    expected: ind.trans_mask.dim(),
                    found: self.beta[s].len(),
                });
            }
            if !(self.sigma2[s] >= 0.0) {
                return Err(Error::Config(format!("noise variance must be non-negative, got {}", self.sigma2[s])));
            }
        }
        Ok(())
    }
}

/// Generated data with its hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub dataset: TimeSeriesDataset,
    pub z_true: Vec<State>,
    pub holdout_y: Vec<f64>,
    pub holdout_x: Vec<Vec<f64>>,
    pub holdout_z: Vec<State>,
    /// True persistence probabilities per transition slot of the training
    /// window: `p_stay[s][t] = P(z[t+1] = s | z[t] = s)`.
    pub p_stay: [Vec<f64>; 2],
}

/// Ground truth sidecar written next to simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SimConfig,
    pub indicator: String,
    pub z_true: Vec<State>,
    pub holdout_z: Vec<State>,
    pub p11: Vec<f64>,
    pub p22: Vec<f64>,
}

impl SimOutput {
    pub fn ground_truth(&self, config: &SimConfig) -> Result<GroundTruth> {
        Ok(GroundTruth {
            config: config.clone(),
            indicator: config.indicator()?.key(),
            z_true: self.z_true.clone(),
            holdout_z: self.holdout_z.clone(),
            p11: self.p_stay[0].clone(),
            p22: self.p_stay[1].clone(),
        })
    }
}

/// Draws a series of `t_len + holdout` observations and splits off the suffix.
///
/// An extra covariate row is drawn before the first observation so that
/// `y[0]` also comes from its state's regression; it is not kept.
pub fn generate(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let ind = config.indicator()?;
    let params = config.params();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.t_len + config.holdout;
    let w = config.width();
    let draw_row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..w)
            .map(|j| {
                let e: f64 = StandardNormal.sample(rng);
                config.covariate_means[j] + config.covariate_sds[j] * e
            })
            .collect()
    };
    let pre_row = draw_row(&mut rng);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| draw_row(&mut rng)).collect();

    let mut z = Vec::with_capacity(n);
    z.push(if rng.random::<f64>() < 0.5 { State::One } else { State::Two });
    let mut p_stay = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for t in 0..n - 1 {
        for s in State::BOTH {
            p_stay[s.index()].push(logistic(linear_predictor(
                &rows[t],
                ind.trans_mask,
                &params.state(s).logistic.beta,
            )));
        }
        let prev = z[t];
        let stay = rng.random::<f64>() < p_stay[prev.index()][t];
        z.push(if stay { prev } else { prev.other() });
    }

    let mut y = Vec::with_capacity(n);
    for t in 0..n {
        let row = if t == 0 { &pre_row } else { &rows[t - 1] };
        let reg = &params.state(z[t]).regression;
        let e: f64 = StandardNormal.sample(&mut rng);
        y.push(linear_predictor(row, ind.mean_mask, &reg.b) + reg.sigma2.sqrt() * e);
    }

    let t = config.t_len;
    let names = (1..=w).map(|j| format!("X{j}")).collect();
    let dataset = TimeSeriesDataset::new(y[..t].to_vec(), rows[..t].to_vec(), names)?;
    for p in &mut p_stay {
        p.truncate(t - 1);
    }
    Ok(SimOutput {
        dataset,
        z_true: z[..t].to_vec(),
        holdout_y: y[t..].to_vec(),
        holdout_x: rows[t..].to_vec(),
        holdout_z: z[t..].to_vec(),
        p_stay,
    })
}

/// Built-in experiment configurations.
pub fn presets() -> Vec<SimConfig> {
    vec![exp1(), exp2(), exp3(), exp4(), exp3_homogeneous()]
}

pub fn preset(name: &str) -> Result<SimConfig> {
    presets()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))
}

fn sds(variances: &[f64]) -> Vec<f64> {
    variances.iter().map(|v| v.sqrt()).collect()
}

/// Fixed-model experiment with seven pool covariates.
pub fn exp1() -> SimConfig {
    SimConfig {
        name: "exp1".into(),
        t_len: 1000,
        holdout: 10,
        covariate_means: vec![4.0, 3.0, -2.0, -5.0, 7.0, -1.0, 0.6],
        covariate_sds: sds(&[1.0, 1.0, 0.3, 0.8, 1.0, 1.0, 0.25]),
        mean_covariates: vec![0, 1, 2, 6],
        trans_covariates: vec![0, 2, 3, 4, 5],
        b: [vec![3.0, -4.0, 3.0, 1.0, 2.0], vec![5.0, 1.0, 3.0, 2.0, 4.0]],
        sigma2: [1.3, 0.8],
        beta: [vec![2.0, 4.0, 1.0, 2.0, -1.0, 3.0], vec![-2.0, 3.0, 2.0, 4.0, 1.0, -2.0]],
        seed: 1,
    }
}

/// Fixed-model experiment with four pool covariates.
pub fn exp2() -> SimConfig {
    SimConfig {
        name: "exp2".into(),
        t_len: 1500,
        holdout: 10,
        covariate_means: vec![4.0, 3.0, -2.0, -5.0],
        covariate_sds: sds(&[1.0, 1.0, 0.25, 1.0]),
        mean_covariates: vec![0, 1, 2],
        trans_covariates: vec![0, 1, 3],
        b: [vec![2.0, -0.3, 2.0, 2.0], vec![1.0, 3.0, 4.0, 3.0]],
        sigma2: [1.5, 0.8],
        beta: [vec![1.5, 1.0, 2.0, 3.0], vec![3.0, -2.5, 4.0, 1.0]],
        seed: 2,
    }
}

/// Selection experiment: five pool covariates, two true in each equation.
pub fn exp3() -> SimConfig {
    SimConfig {
        name: "exp3".into(),
        t_len: 1200,
        holdout: 10,
        covariate_means: vec![4.0, 3.0, -2.0, -5.0, 7.0],
        covariate_sds: sds(&[1.0, 1.0, 0.3, 0.8, 1.0]),
        mean_covariates: vec![0, 1],
        trans_covariates: vec![0, 1],
        b: [vec![2.0, -1.0, 2.0], vec![-3.0, 2.0, -3.0]],
        sigma2: [1.0, 1.2],
        beta: [vec![-1.0, 4.0, -4.0], vec![5.0, -4.0, 4.0]],
        seed: 3,
    }
}

/// Selection experiment: eight pool covariates.
pub fn exp4() -> SimConfig {
    SimConfig {
        name: "exp4".into(),
        t_len: 1500,
        holdout: 10,
        covariate_means: vec![4.0, 3.0, -2.0, -5.0, 7.0, -1.0, 0.6, 2.0],
        covariate_sds: sds(&[1.0, 1.0, 0.3, 0.8, 1.0, 1.0, 0.25, 1.0]),
        mean_covariates: vec![0, 1, 2],
        trans_covariates: vec![0, 1, 4, 5, 6],
        b: [vec![2.0, -1.0, 2.0, 1.5], vec![-6.0, -1.5, 2.5, 1.0]],
        sigma2: [0.3, 0.25],
        beta: [vec![0.0, 1.5, 2.25, -1.5, 3.0, 4.5], vec![-4.0, -2.25, 1.5, 0.75, -3.0, 3.0]],
        seed: 7,
    }
}

/// The first selection experiment's pool and mean equation with constant
/// persistence probabilities.
pub fn exp3_homogeneous() -> SimConfig {
    SimConfig {
        name: "exp3_homogeneous".into(),
        trans_covariates: vec![],
        beta: [vec![2.5], vec![2.0]],
        seed: 33,
        ..exp3()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for c in presets() {
            c.validate().unwrap();
        }
        let e1 = exp1();
        assert_eq!((e1.t_len, e1.holdout, e1.width()), (1000, 10, 7));
        assert_eq!(e1.beta[1], vec![-2.0, 3.0, 2.0, 4.0, 1.0, -2.0]);
        assert_eq!((exp3().t_len, exp3().width()), (1200, 5));
        assert_eq!((exp4().t_len, exp4().width()), (1500, 8));
        assert!(preset("nope").is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&exp3()).unwrap();
        let b = generate(&exp3()).unwrap();
        assert_eq!(a, b);
        let mut c = exp3();
        c.seed += 1;
        assert_ne!(generate(&c).unwrap().dataset, a.dataset);
    }

    #[test]
    fn holdout_is_a_suffix() {
        let mut c = exp3();
        c.holdout = 0;
        c.t_len = 1210;
        let full = generate(&c).unwrap();
        let split = generate(&exp3()).unwrap();
        assert_eq!(&full.dataset.y()[..1200], split.dataset.y());
        assert_eq!(&full.dataset.y()[1200..], &split.holdout_y[..]);
        assert_eq!(full.dataset.row(1205), &split.holdout_x[5][..]);
        assert_eq!(split.holdout_y.len(), 10);
        assert_eq!(split.p_stay[0].len(), 1199);
    }

    #[test]
    fn noiseless_separated_states_identify_z() {
        let c = SimConfig {
            sigma2: [0.0, 0.0],
            b: [vec![10.0, 0.0, 0.0], vec![-10.0, 0.0, 0.0]],
            ..exp3()
        };
        let out = generate(&c).unwrap();
        for (y, z) in out.dataset.y().iter().zip(&out.z_true) {
            assert_eq!(*y > 0.0, *z == State::One);
        }
    }

    #[test]
    fn transitions_follow_the_logistic_law() {
        // chi-square across 5 bins of the true persistence probability
        let c = SimConfig {
            t_len: 100_000,
            holdout: 0,
            covariate_means: vec![0.0],
            covariate_sds: vec![1.0],
            mean_covariates: vec![],
            trans_covariates: vec![0],
            b: [vec![0.0], vec![0.0]],
            sigma2: [1.0, 1.0],
            beta: [vec![0.5, 1.5], vec![-0.3, -1.0]],
            name: "chi".into(),
            seed: 11,
        };
        let out = generate(&c).unwrap();
        let z = &out.z_true;
        let edges = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0 + 1e-12];
        let mut stat = 0.0;
        let mut df = 0;
        for s in State::BOTH {
            for b in 0..5 {
                let (mut n, mut stays, mut expect) = (0.0, 0.0, 0.0);
                for t in 0..z.len() - 1 {
                    let p = out.p_stay[s.index()][t];
                    if z[t] == s && p >= edges[b] && p < edges[b + 1] {
                        n += 1.0;
                        expect += p;
                        stays += f64::from(u8::from(z[t + 1] == s));
                    }
                }
                if n < 50.0 {
                    continue;
                }
                let var: f64 = (0..z.len() - 1)
                    .filter(|&t| z[t] == s && out.p_stay[s.index()][t] >= edges[b] && out.p_stay[s.index()][t] < edges[b + 1])
                    .map(|t| {
                        let p = out.p_stay[s.index()][t];
                        p * (1.0 - p)
                    })
                    .sum();
                stat += (stays - expect).powi(2) / var;
                df += 1;
            }
        }
        // 0.999 quantile of chi-square with up to 10 df is 29.6
        assert!(df >= 6 && stat < 29.6, "stat {stat} df {df}");
    }
}
