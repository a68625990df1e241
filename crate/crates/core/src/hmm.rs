//! Time-varying transition matrices, the complete-data likelihood and
//! scaled forward-filtering backward-sampling.
//!
//! Slot `t` of a [`TransitionSequence`] governs the move from time `t` to
//! `t + 1` and is computed from covariate row `t`. Emissions start at
//! `t = 1` because the mean design for `y[0]` would need covariate row `-1`;
//! `z[0]` only carries the initial distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{ln_logistic, logistic, normal_logpdf_unchecked};
use crate::error::{Error, Result};
use crate::types::{linear_predictor, Mask, ModelIndicator, NhhmmParams, State, TimeSeriesDataset};

/// Persistence probabilities `p_11(t)`, `p_22(t)` for `t = 0..T-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSequence {
    logit: [Vec<f64>; 2],
}

impl TransitionSequence {
    pub fn from_logits(logit1: Vec<f64>, logit2: Vec<f64>) -> Result<Self> {
        if logit1.len() != logit2.len() {
            return Err(Error::Dimension {
                context: "transition logits",
                expected: logit1.len(),
                found: logit2.len(),
            });
        }
        Ok(Self {
            logit: [logit1, logit2],
        })
    }

    /// Homogeneous chain with constant persistence probabilities.
    pub fn constant(len: usize, p11: f64, p22: f64) -> Result<Self> {
        for p in [p11, p22] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Domain(format!("persistence probability {p} outside (0, 1)")));
            }
        }
        let l = |p: f64| (p / (1.0 - p)).ln();
        Ok(Self {
            logit: [vec![l(p11); len], vec![l(p22); len]],
        })
    }

    pub fn len(&self) -> usize {
        self.logit[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.logit[0].is_empty()
    }

    #[inline]
    pub fn p_stay(&self, s: State, t: usize) -> f64 {
        logistic(self.logit[s.index()][t])
    }

    pub fn p11(&self) -> Vec<f64> {
        self.logit[0].iter().map(|&x| logistic(x)).collect()
    }

    pub fn p22(&self) -> Vec<f64> {
        self.logit[1].iter().map(|&x| logistic(x)).collect()
    }

    /// `P(z[t+1] = to | z[t] = from)`.
    #[inline]
    pub fn prob(&self, t: usize, from: State, to: State) -> f64 {
        let x = self.logit[from.index()][t];
        if from == to {
            logistic(x)
        } else {
            logistic(-x)
        }
    }

    #[inline]
    pub fn ln_prob(&self, t: usize, from: State, to: State) -> f64 {
        let x = self.logit[from.index()][t];
        if from == to {
            ln_logistic(x)
        } else {
            ln_logistic(-x)
        }
    }
}

/// Persistence probabilities for every slot from covariate rows `0..T-1`.
pub fn compute_transitions(
    dataset: &TimeSeriesDataset,
    trans_mask: Mask,
    beta1: &[f64],
    beta2: &[f64],
) -> Result<TransitionSequence> {
    check_mask(dataset, trans_mask)?;
    for beta in [beta1, beta2] {
        if beta.len() != trans_mask.dim() {
            return Err(Error::Dimension {
                context: "logistic coefficients",
                expected: trans_mask.dim(),
                found: beta.len(),
            });
        }
    }
    let slots = dataset.len() - 1;
    let l1 = (0..slots).map(|t| linear_predictor(dataset.row(t), trans_mask, beta1)).collect();
    let l2 = (0..slots).map(|t| linear_predictor(dataset.row(t), trans_mask, beta2)).collect();
    TransitionSequence::from_logits(l1, l2)
}

fn check_mask(dataset: &TimeSeriesDataset, mask: Mask) -> Result<()> {
    if mask.width() != dataset.pool_width() {
        return Err(Error::Dimension {
            context: "mask width",
            expected: dataset.pool_width(),
            found: mask.width(),
        });
    }
    Ok(())
}

/// Log emission densities `ln f_s(y[t])`; row 0 is zero (no emission).
pub fn emission_log_densities(
    dataset: &TimeSeriesDataset,
    params: &NhhmmParams,
    mean_mask: Mask,
) -> Result<Vec<[f64; 2]>> {
    check_mask(dataset, mean_mask)?;
    for sp in &params.states {
        if sp.regression.b.len() != mean_mask.dim() {
            return Err(Error::Dimension {
                context: "mean coefficients",
                expected: mean_mask.dim(),
                found: sp.regression.b.len(),
            });
        }
        if !(sp.regression.sigma2 > 0.0) {
            return Err(Error::Domain(format!(
                "state variance must be positive, got {}",
                sp.regression.sigma2
            )));
        }
    }
    let y = dataset.y();
    let mut out = Vec::with_capacity(y.len());
    out.push([0.0, 0.0]);
    for t in 1..y.len() {
        let row = dataset.row(t - 1);
        let mut e = [0.0; 2];
        for s in State::BOTH {
            let r = &params.state(s).regression;
            let mu = linear_predictor(row, mean_mask, &r.b);
            e[s.index()] = normal_logpdf_unchecked(y[t], mu, r.sigma2);
        }
        out.push(e);
    }
    Ok(out)
}

/// Log of the joint density of `(y, z)` given the parameters.
pub fn log_joint_likelihood(
    dataset: &TimeSeriesDataset,
    params: &NhhmmParams,
    indicator: &ModelIndicator,
    z_path: &[State],
) -> Result<f64> {
    params.validate(indicator)?;
    if z_path.len() != dataset.len() {
        return Err(Error::Dimension {
            context: "state path",
            expected: dataset.len(),
            found: z_path.len(),
        });
    }
    let trans = compute_transitions(
        dataset,
        indicator.trans_mask,
        &params.states[0].logistic.beta,
        &params.states[1].logistic.beta,
    )?;
    let emis = emission_log_densities(dataset, params, indicator.mean_mask)?;
    let mut ll = params.pi1[z_path[0].index()].ln();
    for t in 1..z_path.len() {
        ll += trans.ln_prob(t - 1, z_path[t - 1], z_path[t]);
        ll += emis[t][z_path[t].index()];
    }
    Ok(ll)
}

/// Scaled forward variables.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// `P(z[t] = s | y[..=t])`.
    pub scaled_alpha: Vec<[f64; 2]>,
    /// Per-step log normalizers; their sum is the log marginal likelihood.
    pub log_norm_consts: Vec<f64>,
}

impl FilterState {
    pub fn log_marginal(&self) -> f64 {
        self.log_norm_consts.iter().sum()
    }
}

/// Forward recursion normalized at every step. Emission densities are
/// rescaled by their per-step maximum before leaving log space.
pub fn forward_filter(trans: &TransitionSequence, emis: &[[f64; 2]], pi1: [f64; 2]) -> Result<FilterState> {
    let n = emis.len();
    if trans.len() + 1 != n {
        return Err(Error::Dimension {
            context: "transition slots",
            expected: n.saturating_sub(1),
            found: trans.len(),
        });
    }
    let mut alpha = Vec::with_capacity(n);
    let mut logc = Vec::with_capacity(n);
    let c0 = pi1[0] + pi1[1];
    if !(c0 > 0.0) {
        return Err(Error::FilterUnderflow { t: 0 });
    }
    alpha.push([pi1[0] / c0, pi1[1] / c0]);
    logc.push(c0.ln());
    for t in 1..n {
        let prev: [f64; 2] = alpha[t - 1];
        let m = emis[t][0].max(emis[t][1]);
        let mut a = [0.0; 2];
        for j in State::BOTH {
            let pred = prev[0] * trans.prob(t - 1, State::One, j) + prev[1] * trans.prob(t - 1, State::Two, j);
            a[j.index()] = pred * (emis[t][j.index()] - m).exp();
        }
        let c = a[0] + a[1];
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::FilterUnderflow { t });
        }
        alpha.push([a[0] / c, a[1] / c]);
        logc.push(c.ln() + m);
    }
    Ok(FilterState {
        scaled_alpha: alpha,
        log_norm_consts: logc,
    })
}

/// Samples a path from the filtered probabilities, last state first.
pub fn backward_sample<R: Rng + ?Sized>(
    filter: &FilterState,
    trans: &TransitionSequence,
    rng: &mut R,
) -> Vec<State> {
    let n = filter.scaled_alpha.len();
    let mut z = vec![State::One; n];
    let last = filter.scaled_alpha[n - 1];
    z[n - 1] = draw_state(rng, last[0] / (last[0] + last[1]));
    for t in (0..n - 1).rev() {
        let next = z[t + 1];
        let a = filter.scaled_alpha[t];
        let w1 = a[0] * trans.prob(t, State::One, next);
        let w2 = a[1] * trans.prob(t, State::Two, next);
        z[t] = draw_state(rng, w1 / (w1 + w2));
    }
    z
}

#[inline]
fn draw_state<R: Rng + ?Sized>(rng: &mut R, p_one: f64) -> State {
    if rng.random::<f64>() < p_one {
        State::One
    } else {
        State::Two
    }
}

/// Exact draw of the hidden path given parameters, with the log marginal
/// likelihood of `y`.
pub fn ffbs_sample<R: Rng + ?Sized>(
    dataset: &TimeSeriesDataset,
    params: &NhhmmParams,
    indicator: &ModelIndicator,
    rng: &mut R,
) -> Result<(Vec<State>, f64)> {
    params.validate(indicator)?;
    let trans = compute_transitions(
        dataset,
        indicator.trans_mask,
        &params.states[0].logistic.beta,
        &params.states[1].logistic.beta,
    )?;
    let emis = emission_log_densities(dataset, params, indicator.mean_mask)?;
    let filter = forward_filter(&trans, &emis, params.pi1)?;
    let path = backward_sample(&filter, &trans, rng);
    Ok((path, filter.log_marginal()))
}

/// Smoothed marginals `P(z[t] = s | y)` by the scaled backward recursion.
pub fn smoothed_probabilities(filter: &FilterState, trans: &TransitionSequence) -> Vec<[f64; 2]> {
    let n = filter.scaled_alpha.len();
    let mut out = vec![[0.0; 2]; n];
    out[n - 1] = filter.scaled_alpha[n - 1];
    for t in (0..n - 1).rev() {
        let a = filter.scaled_alpha[t];
        // predicted P(z[t+1] = j | y[..=t])
        let mut pred = [0.0; 2];
        for j in State::BOTH {
            pred[j.index()] = a[0] * trans.prob(t, State::One, j) + a[1] * trans.prob(t, State::Two, j);
        }
        let mut s = [0.0; 2];
        for i in State::BOTH {
            let mut acc = 0.0;
            for j in State::BOTH {
                if pred[j.index()] > 0.0 {
                    acc += trans.prob(t, i, j) * out[t + 1][j.index()] / pred[j.index()];
                }
            }
            s[i.index()] = a[i.index()] * acc;
        }
        let c = s[0] + s[1];
        out[t] = [s[0] / c, s[1] / c];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{StateLogistic, StateParams, StateRegression};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(b: [f64; 2], s2: [f64; 2], beta: [Vec<f64>; 2]) -> NhhmmParams {
        let mk = |i: usize| StateParams {
            regression: StateRegression {
                b: vec![b[i]],
                sigma2: s2[i],
            },
            logistic: StateLogistic { beta: beta[i].clone() },
        };
        NhhmmParams {
            states: [mk(0), mk(1)],
            pi1: [0.5, 0.5],
        }
    }

    fn dataset(y: Vec<f64>, x: Vec<f64>) -> TimeSeriesDataset {
        let rows = x.into_iter().map(|v| vec![v]).collect();
        TimeSeriesDataset::new(y, rows, vec!["X1".into()]).unwrap()
    }

    #[test]
    fn zero_coefficients_give_one_half() {
        let d = dataset(vec![0.0; 5], vec![1.0, -2.0, 3.0, 0.5, 9.0]);
        let tr = compute_transitions(&d, Mask::full(1), &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(tr.p11().iter().chain(tr.p22().iter()).all(|&p| p == 0.5));
        assert_eq!(tr.len(), 4);
    }

    #[test]
    fn intercept_ln3_gives_three_quarters() {
        let d = dataset(vec![0.0; 4], vec![1.0, 2.0, 3.0, 4.0]);
        let b = [3f64.ln()];
        let tr = compute_transitions(&d, Mask::empty(1), &b, &b).unwrap();
        assert!(tr.p11().iter().all(|&p| (p - 0.75).abs() < 1e-15));
    }

    #[test]
    fn large_logit_is_stable() {
        let d = dataset(vec![0.0; 3], vec![50.0, 700.0, -700.0]);
        let tr = compute_transitions(&d, Mask::full(1), &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert!((tr.p_stay(State::One, 0) - (1.0 - logistic(-50.0))).abs() < 1e-15);
        assert!(tr.ln_prob(1, State::One, State::Two).is_finite());
        assert!(tr.ln_prob(1, State::One, State::One).abs() < 1e-300);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let d = dataset(vec![0.0; 3], vec![0.0; 3]);
        assert!(compute_transitions(&d, Mask::full(1), &[0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn three_step_joint_matches_hand_expansion() {
        let d = dataset(vec![0.3, -1.2, 2.5], vec![0.7, -0.4, 1.1]);
        let p = NhhmmParams {
            states: [
                StateParams {
                    regression: StateRegression { b: vec![0.2, -0.5], sigma2: 0.8 },
                    logistic: StateLogistic { beta: vec![0.4, 1.3] },
                },
                StateParams {
                    regression: StateRegression { b: vec![1.5, 0.9], sigma2: 2.1 },
                    logistic: StateLogistic { beta: vec![-0.6, 0.2] },
                },
            ],
            pi1: [0.3, 0.7],
        };
        let ind = ModelIndicator::full(1);
        let z = [State::Two, State::One, State::One];
        let lg = |x: f64| 1.0 / (1.0 + (-x).exp());
        let f = |y: f64, m: f64, v: f64| (-(y - m) * (y - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        // z0 = 2 -> z1 = 1 via slot 0 (x = 0.7); z1 = 1 -> z2 = 1 via slot 1 (x = -0.4)
        let expected = 0.7
            * (1.0 - lg(-0.6 + 0.2 * 0.7))
            * f(-1.2, 0.2 - 0.5 * 0.7, 0.8)
            * lg(0.4 + 1.3 * -0.4)
            * f(2.5, 0.2 - 0.5 * -0.4, 0.8);
        let got = log_joint_likelihood(&d, &p, &ind, &z).unwrap();
        assert!((got - expected.ln()).abs() < 1e-12);
    }

    #[test]
    fn joint_invariant_to_zero_padding() {
        let y = vec![0.1, 1.0, -0.5, 2.0];
        let x1 = vec![0.3, 1.2, -0.7, 0.0];
        let d1 = dataset(y.clone(), x1.clone());
        let d2 = TimeSeriesDataset::new(
            y,
            x1.iter().map(|&v| vec![v, 0.0]).collect(),
            vec!["X1".into(), "Z".into()],
        )
        .unwrap();
        let p1 = params([0.5, -1.0], [1.0, 2.0], [vec![0.2, 0.3], vec![-0.1, 0.4]]);
        let mut p2 = p1.clone();
        for sp in &mut p2.states {
            sp.regression.b = vec![sp.regression.b[0], 0.0];
            sp.logistic.beta.push(0.0);
        }
        let ind1 = ModelIndicator::new(Mask::empty(1), Mask::full(1));
        let ind2 = ModelIndicator::new(Mask::from_indices(2, &[1]).unwrap(), Mask::full(2));
        let z = [State::One, State::Two, State::Two, State::One];
        let a = log_joint_likelihood(&d1, &p1, &ind1, &z).unwrap();
        let b = log_joint_likelihood(&d2, &p2, &ind2, &z).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn symmetric_model_gives_equiprobable_states() {
        let d = dataset(vec![0.5, -0.2, 1.0, 0.3, -0.9, 0.0], vec![0.0; 6]);
        let p = params([0.0, 0.0], [1.0, 1.0], [vec![0.0], vec![0.0]]);
        let ind = ModelIndicator::empty(1);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut ones = vec![0usize; 6];
        for _ in 0..n {
            let (z, _) = ffbs_sample(&d, &p, &ind, &mut rng).unwrap();
            for (c, s) in ones.iter_mut().zip(&z) {
                *c += usize::from(*s == State::One);
            }
        }
        for c in ones {
            assert!((c as f64 / n as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn separated_emissions_pin_the_path() {
        let truth = [State::One, State::One, State::Two, State::One, State::Two, State::Two, State::One];
        let y: Vec<f64> = truth.iter().map(|s| if *s == State::One { -100.0 } else { 100.0 }).collect();
        let d = dataset(y, vec![0.0; 7]);
        let p = params([-100.0, 100.0], [1.0, 1.0], [vec![0.0], vec![0.0]]);
        let ind = ModelIndicator::empty(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hits = 0;
        for _ in 0..10_000 {
            let (z, _) = ffbs_sample(&d, &p, &ind, &mut rng).unwrap();
            // z[0] carries no emission, so only t >= 1 is identified
            hits += usize::from(z[1..] == truth[1..]);
        }
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn smoothed_probabilities_sum_to_one() {
        let d = dataset(vec![0.5, -0.2, 1.0, 3.3, -0.9, 0.0], vec![0.1, 0.4, -1.0, 0.3, 0.2, 0.0]);
        let p = params([0.0, 2.0], [1.0, 0.5], [vec![0.5, 1.0], vec![0.2, -1.0]]);
        let ind = ModelIndicator::new(Mask::empty(1), Mask::full(1));
        let tr = compute_transitions(&d, ind.trans_mask, &p.states[0].logistic.beta, &p.states[1].logistic.beta).unwrap();
        let emis = emission_log_densities(&d, &p, ind.mean_mask).unwrap();
        let f = forward_filter(&tr, &emis, p.pi1).unwrap();
        let sm = smoothed_probabilities(&f, &tr);
        assert!(sm.iter().all(|r| (r[0] + r[1] - 1.0).abs() < 1e-12));
        assert_eq!(sm[5], f.scaled_alpha[5]);
    }
}
