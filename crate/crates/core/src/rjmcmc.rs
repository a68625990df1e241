//! Double reversible jump over covariate inclusion.
//!
//! Each move toggles one covariate in one equation. Coefficients are
//! integrated out of the acceptance ratio (conditionally on the state
//! variances for the mean equation and on the Polya-Gamma auxiliaries for the
//! transition equation), and on acceptance both states' coefficients are
//! redrawn from their full conditionals under the new mask.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{logistic_posterior_from_stats, mean_posterior_from_stats, mean_suff_stats, SuffStats};
use crate::types::{ChainStore, Equation, Mask, McmcDraw, ModelIndicator, PriorConfig, State, TimeSeriesDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpAction {
    Add,
    Remove,
}

/// Prior over model indicators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelPrior {
    #[default]
    Uniform,
    /// Each covariate enters each equation independently with this probability.
    Bernoulli(f64),
}

impl ModelPrior {
    fn log_ratio(&self, action: JumpAction) -> f64 {
        match (*self, action) {
            (ModelPrior::Uniform, _) => 0.0,
            (ModelPrior::Bernoulli(p), JumpAction::Add) => (p / (1.0 - p)).ln(),
            (ModelPrior::Bernoulli(p), JumpAction::Remove) => ((1.0 - p) / p).ln(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelPrior::Bernoulli(p) if !(p > 0.0 && p < 1.0) => {
                Err(Error::Config(format!("inclusion prior {p} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpProposal {
    pub target: Equation,
    pub action: JumpAction,
    /// `None` when no covariate is eligible for the action.
    pub covariate_index: Option<usize>,
    /// `ln(q(m | m*) / q(m* | m))`.
    pub log_proposal_ratio: f64,
}

impl JumpProposal {
    pub fn is_noop(&self) -> bool {
        self.covariate_index.is_none()
    }

    /// Mask after the move.
    pub fn apply(&self, mask: Mask) -> Mask {
        match self.covariate_index {
            Some(j) => mask.toggled(j),
            None => mask,
        }
    }
}

/// Add or remove with probability 1/2, then a uniform eligible covariate.
pub fn propose_jump<R: Rng + ?Sized>(indicator: &ModelIndicator, target: Equation, rng: &mut R) -> JumpProposal {
    let mask = indicator.mask(target);
    let n = mask.width();
    let a = mask.count();
    let action = if rng.random::<f64>() < 0.5 {
        JumpAction::Add
    } else {
        JumpAction::Remove
    };
    let eligible = match action {
        JumpAction::Add => n - a,
        JumpAction::Remove => a,
    };
    if eligible == 0 {
        return JumpProposal {
            target,
            action,
            covariate_index: None,
            log_proposal_ratio: 0.0,
        };
    }
    let pick = rng.random_range(0..eligible);
    let (j, ratio) = match action {
        JumpAction::Add => (mask.inactive().nth(pick), (n - a) as f64 / (a + 1) as f64),
        JumpAction::Remove => (mask.active().nth(pick), a as f64 / (n - a + 1) as f64),
    };
    JumpProposal {
        target,
        action,
        covariate_index: j,
        log_proposal_ratio: ratio.ln(),
    }
}

/// Outcome of one reversible-jump attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpOutcome {
    pub proposal: JumpProposal,
    pub accepted: bool,
    /// `ln A`; zero for a no-op.
    pub log_ratio: f64,
    /// The ratio was NaN or infinite and the move was rejected.
    pub non_finite: bool,
    pub indicator: ModelIndicator,
    /// Per-state coefficients under the new mask when accepted.
    pub coefficients: Option<[Vec<f64>; 2]>,
}

impl JumpOutcome {
    fn rejected(proposal: JumpProposal, indicator: ModelIndicator, log_ratio: f64, non_finite: bool) -> Self {
        Self {
            proposal,
            accepted: false,
            log_ratio,
            non_finite,
            indicator,
            coefficients: None,
        }
    }
}

fn metropolis<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Mean-equation move given per-state statistics over the full pool.
pub fn accept_mean_jump_with_stats<R: Rng + ?Sized>(
    stats: &[SuffStats; 2],
    indicator: &ModelIndicator,
    proposal: &JumpProposal,
    sigma2: [f64; 2],
    prior: &PriorConfig,
    model_prior: ModelPrior,
    rng: &mut R,
) -> Result<JumpOutcome> {
    debug_assert_eq!(proposal.target, Equation::Mean);
    if proposal.is_noop() {
        return Ok(JumpOutcome::rejected(*proposal, *indicator, 0.0, false));
    }
    let current = indicator.mean_mask;
    let proposed = proposal.apply(current);
    let mut log_a = proposal.log_proposal_ratio + model_prior.log_ratio(proposal.action);
    let mut posts = Vec::with_capacity(2);
    for s in 0..2 {
        let old = mean_posterior_from_stats(&stats[s], current, prior)?;
        let new = mean_posterior_from_stats(&stats[s], proposed, prior)?;
        log_a += new.log_evidence_kernel(sigma2[s]) - old.log_evidence_kernel(sigma2[s]);
        posts.push(new);
    }
    if !log_a.is_finite() {
        return Ok(JumpOutcome::rejected(*proposal, *indicator, log_a, true));
    }
    if !metropolis(log_a, rng) {
        return Ok(JumpOutcome::rejected(*proposal, *indicator, log_a, false));
    }
    let b0 = posts[0].draw_coefficients(sigma2[0], rng).iter().copied().collect();
    let b1 = posts[1].draw_coefficients(sigma2[1], rng).iter().copied().collect();
    Ok(JumpOutcome {
        proposal: *proposal,
        accepted: true,
        log_ratio: log_a,
        non_finite: false,
        indicator: ModelIndicator::new(proposed, indicator.trans_mask),
        coefficients: Some([b0, b1]),
    })
}

/// Mean-equation move conditional on the state path and variances.
#[allow(clippy::too_many_arguments)]
pub fn accept_mean_jump<R: Rng + ?Sized>(
    dataset: &TimeSeriesDataset,
    z_path: &[State],
    indicator: &ModelIndicator,
    proposal: &JumpProposal,
    sigma2: [f64; 2],
    prior: &PriorConfig,
    model_prior: ModelPrior,
    rng: &mut R,
) -> Result<JumpOutcome> {
    if z_path.len() != dataset.len() {
        return Err(Error::Dimension {
            context: "state path",
            expected: dataset.len(),
            found: z_path.len(),
        });
    }
    let stats = [
        mean_suff_stats(dataset, z_path, State::One),
        mean_suff_stats(dataset, z_path, State::Two),
    ];
    accept_mean_jump_with_stats(&stats, indicator, proposal, sigma2, prior, model_prior, rng)
}

/// Transition-equation move conditional on the Polya-Gamma statistics
/// `X' Omega X`, `X' k` of each state.
pub fn accept_trans_jump<R: Rng + ?Sized>(
    augmented: &[SuffStats; 2],
    indicator: &ModelIndicator,
    proposal: &JumpProposal,
    prior: &PriorConfig,
    model_prior: ModelPrior,
    rng: &mut R,
) -> Result<JumpOutcome> {
    debug_assert_eq!(proposal.target, Equation::Trans);
    if proposal.is_noop() {
        return Ok(JumpOutcome::rejected(*proposal, *indicator, 0.0, false));
    }
    let current = indicator.trans_mask;
    let proposed = proposal.apply(current);
    let mut log_a = proposal.log_proposal_ratio + model_prior.log_ratio(proposal.action);
    let mut posts = Vec::with_capacity(2);
    for st in augmented {
        let old = logistic_posterior_from_stats(st, current, prior)?;
        let new = logistic_posterior_from_stats(st, proposed, prior)?;
        log_a += new.log_evidence_kernel() - old.log_evidence_kernel();
        posts.push(new);
    }
    if !log_a.is_finite() {
        return Ok(JumpOutcome::rejected(*proposal, *indicator, log_a, true));
    }
    if !metropolis(log_a, rng) {
        return Ok(JumpOutcome::rejected(*proposal, *indicator, log_a, false));
    }
    let b0 = posts[0].draw(rng).iter().copied().collect();
    let b1 = posts[1].draw(rng).iter().copied().collect();
    Ok(JumpOutcome {
        proposal: *proposal,
        accepted: true,
        log_ratio: log_a,
        non_finite: false,
        indicator: ModelIndicator::new(indicator.mean_mask, proposed),
        coefficients: Some([b0, b1]),
    })
}

/// Visit counts over model indicators.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelTally {
    pub counts: BTreeMap<ModelIndicator, usize>,
    pub mean_inclusion: Vec<usize>,
    pub trans_inclusion: Vec<usize>,
    pub total: usize,
}

impl ModelTally {
    pub fn new(width: usize) -> Self {
        Self {
            counts: BTreeMap::new(),
            mean_inclusion: vec![0; width],
            trans_inclusion: vec![0; width],
            total: 0,
        }
    }

    pub fn record(&mut self, indicator: &ModelIndicator) {
        *self.counts.entry(*indicator).or_insert(0) += 1;
        for j in indicator.mean_mask.active() {
            self.mean_inclusion[j] += 1;
        }
        for j in indicator.trans_mask.active() {
            self.trans_inclusion[j] += 1;
        }
        self.total += 1;
    }

    pub fn merge(&mut self, other: &ModelTally) {
        for (k, v) in &other.counts {
            *self.counts.entry(*k).or_insert(0) += v;
        }
        for (a, b) in self.mean_inclusion.iter_mut().zip(&other.mean_inclusion) {
            *a += b;
        }
        for (a, b) in self.trans_inclusion.iter_mut().zip(&other.trans_inclusion) {
            *a += b;
        }
        self.total += other.total;
    }

    /// Visit frequencies keyed by `"mean|trans"` bit strings.
    pub fn frequencies(&self) -> BTreeMap<String, f64> {
        self.counts
            .iter()
            .map(|(k, &c)| (k.key(), c as f64 / self.total as f64))
            .collect()
    }

    pub fn summarize(&self) -> Result<ModelSummary> {
        if self.total == 0 {
            return Err(Error::InvalidData("empty chain".into()));
        }
        let (map_model, map_count) = self
            .counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(k, &c)| (*k, c))
            .expect("non-empty tally");
        let n = self.total as f64;
        let mean_probs: Vec<f64> = self.mean_inclusion.iter().map(|&c| c as f64 / n).collect();
        let trans_probs: Vec<f64> = self.trans_inclusion.iter().map(|&c| c as f64 / n).collect();
        let width = mean_probs.len();
        let median = |p: &[f64]| {
            let idx: Vec<usize> = (0..width).filter(|&j| p[j] >= 0.5).collect();
            Mask::from_indices(width, &idx).expect("indices within width")
        };
        Ok(ModelSummary {
            map_model,
            map_prob: map_count as f64 / n,
            median_model: ModelIndicator::new(median(&mean_probs), median(&trans_probs)),
            mean_inclusion: mean_probs,
            trans_inclusion: trans_probs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub map_model: ModelIndicator,
    pub map_prob: f64,
    pub median_model: ModelIndicator,
    pub mean_inclusion: Vec<f64>,
    pub trans_inclusion: Vec<f64>,
}

/// MAP and median-probability models of one or more chains.
pub fn tally_and_summarize<'a, I>(chains: I) -> Result<ModelSummary>
where
    I: IntoIterator<Item = &'a ChainStore<McmcDraw>>,
{
    tally(chains)?.summarize()
}

pub fn tally<'a, I>(chains: I) -> Result<ModelTally>
where
    I: IntoIterator<Item = &'a ChainStore<McmcDraw>>,
{
    let mut t: Option<ModelTally> = None;
    for chain in chains {
        for d in &chain.draws {
            t.get_or_insert_with(|| ModelTally::new(d.indicator.mean_mask.width()))
                .record(&d.indicator);
        }
    }
    t.ok_or_else(|| Error::InvalidData("empty chain".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::logistic_suff_stats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ind(width: usize, mean: &[usize], trans: &[usize]) -> ModelIndicator {
        ModelIndicator::new(
            Mask::from_indices(width, mean).unwrap(),
            Mask::from_indices(width, trans).unwrap(),
        )
    }

    #[test]
    fn full_mask_add_is_a_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = ModelIndicator::full(3);
        for _ in 0..100 {
            let p = propose_jump(&m, Equation::Mean, &mut rng);
            assert_eq!(p.is_noop(), p.action == JumpAction::Add);
        }
    }

    #[test]
    fn remove_picks_uniformly_among_active() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ind(5, &[1, 3], &[]);
        let mut hits = [0usize; 5];
        let mut removes = 0;
        for _ in 0..20_000 {
            let p = propose_jump(&m, Equation::Mean, &mut rng);
            if p.action == JumpAction::Remove {
                removes += 1;
                hits[p.covariate_index.unwrap()] += 1;
            }
        }
        assert_eq!(hits[0] + hits[2] + hits[4], 0);
        let f = hits[1] as f64 / removes as f64;
        assert!((f - 0.5).abs() < 0.02);
    }

    #[test]
    fn proposal_law_is_uniform_over_action_index_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = ind(4, &[0, 2], &[]);
        let n = 100_000;
        let mut counts = BTreeMap::new();
        for _ in 0..n {
            let p = propose_jump(&m, Equation::Mean, &mut rng);
            *counts.entry((p.action == JumpAction::Add, p.covariate_index.unwrap())).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 4);
        for (&(add, j), &c) in &counts {
            assert_eq!(add, j == 1 || j == 3);
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn proposal_ratio_accounts_for_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ModelIndicator::empty(4);
        loop {
            let p = propose_jump(&m, Equation::Trans, &mut rng);
            if !p.is_noop() {
                // q(m*|m) = 1/2 * 1/4, reverse q(m|m*) = 1/2 * 1/1
                assert!((p.log_proposal_ratio - 4f64.ln()).abs() < 1e-15);
                break;
            }
        }
    }

    #[test]
    fn noop_jump_has_unit_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let st = SuffStats::zeros(2);
        let m = ModelIndicator::full(2);
        let p = JumpProposal {
            target: Equation::Mean,
            action: JumpAction::Add,
            covariate_index: None,
            log_proposal_ratio: 0.0,
        };
        let out = accept_mean_jump_with_stats(&[st.clone(), st.clone()], &m, &p, [1.0, 1.0], &PriorConfig::default(), ModelPrior::Uniform, &mut rng).unwrap();
        assert_eq!(out.log_ratio, 0.0);
        assert_eq!(out.indicator, m);
        let p = JumpProposal { target: Equation::Trans, ..p };
        let out = accept_trans_jump(&[st.clone(), st], &m, &p, &PriorConfig::default(), ModelPrior::Uniform, &mut rng).unwrap();
        assert_eq!(out.log_ratio, 0.0);
    }

    #[test]
    fn tally_of_identical_draws() {
        let mut t = ModelTally::new(3);
        let m = ind(3, &[0, 2], &[1]);
        for _ in 0..7 {
            t.record(&m);
        }
        let s = t.summarize().unwrap();
        assert_eq!(s.map_prob, 1.0);
        assert_eq!(s.map_model, m);
        assert_eq!(s.median_model, m);
        assert_eq!(s.mean_inclusion, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn median_model_uses_half_threshold() {
        let mut t = ModelTally::new(2);
        t.record(&ind(2, &[0], &[]));
        t.record(&ind(2, &[1], &[]));
        t.record(&ind(2, &[0], &[1]));
        t.record(&ind(2, &[0, 1], &[]));
        let s = t.summarize().unwrap();
        assert_eq!(s.median_model, ind(2, &[0, 1], &[]));
        assert_eq!(s.trans_inclusion, vec![0.0, 0.25]);
    }

    #[test]
    fn bernoulli_prior_shifts_ratio() {
        assert_eq!(ModelPrior::Uniform.log_ratio(JumpAction::Add), 0.0);
        let p = ModelPrior::Bernoulli(0.2);
        assert!((p.log_ratio(JumpAction::Add) + 4f64.ln()).abs() < 1e-15);
        assert!(ModelPrior::Bernoulli(1.0).validate().is_err());
    }

    #[test]
    fn trans_jump_prefers_informative_covariate() {
        // state-1 persistence depends strongly on column 0
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400;
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![if i % 2 == 0 { 2.0 } else { -2.0 }, ((i * 7) % 5) as f64 - 2.0]).collect();
        let d = TimeSeriesDataset::new(vec![0.0; n], x, vec!["a".into(), "b".into()]).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let resp: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        let omega = vec![0.25; n];
        let st = logistic_suff_stats(&d, &rows, &resp, &omega);
        let m = ind(2, &[], &[]);
        let p = JumpProposal {
            target: Equation::Trans,
            action: JumpAction::Add,
            covariate_index: Some(0),
            log_proposal_ratio: 2f64.ln(),
        };
        let out = accept_trans_jump(&[st.clone(), st], &m, &p, &PriorConfig::default(), ModelPrior::Uniform, &mut rng).unwrap();
        assert!(out.accepted && out.log_ratio > 10.0);
        assert_eq!(out.coefficients.as_ref().unwrap()[0].len(), 2);
    }
}
