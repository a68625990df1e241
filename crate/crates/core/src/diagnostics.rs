//! Convergence diagnostics for scalar traces.
//!
//! Effective sample size uses Geyer's initial monotone sequence on the
//! multi-chain autocorrelation estimate; R-hat is the rank-normalized split
//! version, taking the worse of the bulk and folded statistics.

use serde::{Deserialize, Serialize};

use crate::distributions::std_normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Ess {
    Value(f64),
    /// Zero within-chain variance; ESS is undefined.
    Degenerate,
}

impl Ess {
    pub fn value(self) -> Option<f64> {
        match self {
            Ess::Value(v) => Some(v),
            Ess::Degenerate => None,
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Biased autocovariance at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / n as f64
}

/// Effective sample size of one or more equal-length chains.
pub fn ess(chains: &[&[f64]]) -> Ess {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return Ess::Degenerate;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| autocov(c, mu, 0) * nf / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    if !(w > 0.0) || !w.is_finite() {
        return Ess::Degenerate;
    }
    let grand = mean(&means);
    let b_over_n = if m > 1 {
        means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1) as f64
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    let rho = |t: usize| {
        let acov = chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, t)).sum::<f64>() / m as f64;
        1.0 - (w - acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = (m * n) as f64;
    // antithetic chains can push tau below 1/log10(N); cap as usual
    let tau = tau.max(1.0 / total.log10());
    Ess::Value(total / tau)
}

fn rhat_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if !(w > 0.0) {
        return f64::NAN;
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Normal scores of pooled ranks, average ranks for ties.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.iter().enumerate().map(move |(i, &v)| (v, ci, i)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = std_normal_quantile((rank - 0.375) / (s + 0.25));
        for k in i..=j {
            out[all[k].1][all[k].2] = z;
        }
        i = j + 1;
    }
    out
}

/// Rank-normalized split R-hat. `NaN` when every draw is identical or a
/// chain is shorter than 4.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if chains.is_empty() || n < 4 {
        return f64::NAN;
    }
    let half = n / 2;
    let mut split = Vec::with_capacity(2 * chains.len());
    for c in chains {
        split.push(c[..half].to_vec());
        split.push(c[n - half..n].to_vec());
    }
    let bulk = rhat_raw(&rank_normalize(&split));
    let mut pooled: Vec<f64> = split.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let med = crate::forecast::quantile_sorted(&pooled, 0.5);
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|x| (x - med).abs()).collect()).collect();
    let tail = rhat_raw(&rank_normalize(&folded));
    match (bulk.is_nan(), tail.is_nan()) {
        (true, true) => f64::NAN,
        (false, true) => bulk,
        (true, false) => tail,
        _ => bulk.max(tail),
    }
}
