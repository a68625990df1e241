//! Forecast evaluation: CRPS, logarithmic score, point errors and the
//! hidden-state 0-1 loss.
//!
//! CRPS is negatively oriented, `0.5 E|Y - Y'| - E|Y - y|`, so every value is
//! at most zero and larger is better.

use serde::{Deserialize, Serialize};

use crate::distributions::normal_logpdf_unchecked;
use crate::error::{Error, Result};
use crate::types::{PredictiveMixture, State};

/// Log score reported in place of `-inf` when every draw's density underflows.
pub const LOG_SCORE_FLOOR: f64 = -1.0e300;

/// Ensemble CRPS. The pairwise term averages over all `D^2` ordered pairs,
/// self-pairs included, and is evaluated in `O(D log D)` by sorting.
pub fn crps(ensemble: &[f64], y_obs: f64) -> Result<f64> {
    let d = ensemble.len();
    if d < 2 {
        return Err(Error::InvalidData(format!("CRPS needs at least 2 draws, got {d}")));
    }
    if !y_obs.is_finite() || ensemble.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite value in CRPS input".into()));
    }
    let mut sorted = ensemble.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = d as f64;
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - D + 1) x_(i)
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * i as f64 - n + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    let abs_err = sorted.iter().map(|&x| (x - y_obs).abs()).sum::<f64>() / n;
    Ok(0.5 * pair_sum / (n * n) - abs_err)
}

/// Log of the draw-averaged predictive density at one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogScore {
    pub value: f64,
    /// The density underflowed and `value` is [`LOG_SCORE_FLOOR`].
    pub underflow: bool,
}

/// `ln((1/D) sum_j sum_k w_jk N(y; m_jk, v_jk))` with log-sum-exp.
pub fn log_score<'a, I>(mixtures: I, y_obs: f64) -> Result<LogScore>
where
    I: IntoIterator<Item = &'a PredictiveMixture>,
{
    let mut terms = Vec::new();
    let mut d = 0usize;
    for m in mixtures {
        d += 1;
        if m.weights.len() != m.means.len() || m.weights.len() != m.vars.len() {
            return Err(Error::Dimension {
                context: "predictive mixture",
                expected: m.weights.len(),
                found: m.means.len().min(m.vars.len()),
            });
        }
        for ((&w, &mu), &v) in m.weights.iter().zip(&m.means).zip(&m.vars) {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("predictive variance must be positive, got {v}")));
            }
            if w > 0.0 {
                terms.push(w.ln() + normal_logpdf_unchecked(y_obs, mu, v));
            }
        }
    }
    if d == 0 {
        return Err(Error::InvalidData("log score needs at least one draw".into()));
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok(LogScore {
            value: LOG_SCORE_FLOOR,
            underflow: true,
        });
    }
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    Ok(LogScore {
        value: lse - (d as f64).ln(),
        underflow: false,
    })
}

/// `(MAFE, MSFE)`.
pub fn point_errors(point_forecasts: &[f64], y_obs: &[f64]) -> Result<(f64, f64)> {
    if point_forecasts.len() != y_obs.len() {
        return Err(Error::Dimension {
            context: "point forecasts",
            expected: y_obs.len(),
            found: point_forecasts.len(),
        });
    }
    if y_obs.is_empty() {
        return Err(Error::InvalidData("no observations to score".into()));
    }
    let n = y_obs.len() as f64;
    let (a, s) = point_forecasts
        .iter()
        .zip(y_obs)
        .fold((0.0, 0.0), |(a, s), (f, y)| (a + (y - f).abs(), s + (y - f).powi(2)));
    Ok((a / n, s / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroOneLoss {
    /// Mean mismatches per draw under the labels as sampled.
    pub raw: f64,
    /// Mean mismatches per draw after swapping the labels of every draw.
    pub swapped: f64,
    /// `min(raw, swapped)`.
    pub loss: f64,
    /// `loss / T`.
    pub rate: f64,
}

/// Mean number of mis-estimated states per draw.
pub fn state_zero_one_loss<'a, I>(z_true: &[State], z_draws: I) -> Result<ZeroOneLoss>
where
    I: IntoIterator<Item = &'a [State]>,
{
    let mut raw = 0usize;
    let mut n = 0usize;
    let t = z_true.len();
    for z in z_draws {
        if z.len() != t {
            return Err(Error::Dimension {
                context: "state path",
                expected: t,
                found: z.len(),
            });
        }
        raw += z.iter().zip(z_true).filter(|(a, b)| a != b).count();
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidData("no state draws".into()));
    }
    let raw = raw as f64 / n as f64;
    let swapped = t as f64 - raw;
    let loss = raw.min(swapped);
    Ok(ZeroOneLoss {
        raw,
        swapped,
        loss,
        rate: loss / t.max(1) as f64,
    })
}

/// Scores of one forecaster over a set of held-out observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_observation_crps: Vec<f64>,
    pub mean_crps: f64,
    pub per_observation_log_score: Vec<f64>,
    /// Sum over observations.
    pub log_score: f64,
    pub log_score_underflow: bool,
    pub point_forecasts: Vec<f64>,
    pub actuals: Vec<f64>,
    pub mafe: f64,
    pub msfe: f64,
}

impl ScoreReport {
    /// `ensemble[h]` holds the draws for observation `h`; `mixtures[h]` the
    /// per-draw predictive densities, when available.
    pub fn compute(
        ensemble: &[Vec<f64>],
        mixtures: Option<&[Vec<PredictiveMixture>]>,
        point_forecasts: &[f64],
        actuals: &[f64],
    ) -> Result<Self> {
        if ensemble.len() != actuals.len() {
            return Err(Error::Dimension {
                context: "ensemble horizons",
                expected: actuals.len(),
                found: ensemble.len(),
            });
        }
        let per_observation_crps = ensemble
            .iter()
            .zip(actuals)
            .map(|(e, &y)| crps(e, y))
            .collect::<Result<Vec<_>>>()?;
        let mean_crps = per_observation_crps.iter().sum::<f64>() / per_observation_crps.len().max(1) as f64;
        let mut per_observation_log_score = Vec::new();
        let mut underflow = false;
        if let Some(mix) = mixtures {
            if mix.len() != actuals.len() {
                return Err(Error::Dimension {
                    context: "mixture horizons",
                    expected: actuals.len(),
                    found: mix.len(),
                });
            }
            for (m, &y) in mix.iter().zip(actuals) {
                let ls = log_score(m, y)?;
                underflow |= ls.underflow;
                per_observation_log_score.push(ls.value);
            }
        }
        let (mafe, msfe) = point_errors(point_forecasts, actuals)?;
        Ok(Self {
            log_score: per_observation_log_score.iter().sum(),
            per_observation_log_score,
            log_score_underflow: underflow,
            mean_crps,
            per_observation_crps,
            point_forecasts: point_forecasts.to_vec(),
            actuals: actuals.to_vec(),
            mafe,
            msfe,
        })
    }

    /// One CSV row per observation: `index,actual,point,crps,log_score`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,actual,point,crps,log_score")?;
        for i in 0..self.actuals.len() {
            let ls = self
                .per_observation_log_score
                .get(i)
                .map(|v| v.to_string())
                .unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{}",
                i + 1,
                self.actuals[i],
                self.point_forecasts[i],
                self.per_observation_crps[i],
                ls
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_crps(e: &[f64], y: f64) -> f64 {
        let d = e.len() as f64;
        let mut pair = 0.0;
        for a in e {
            for b in e {
                pair += (a - b).abs();
            }
        }
        0.5 * pair / (d * d) - e.iter().map(|x| (x - y).abs()).sum::<f64>() / d
    }

    #[test]
    fn hand_case() {
        assert_eq!(crps(&[0.0, 2.0], 1.0).unwrap(), -0.5);
    }

    #[test]
    fn degenerate_ensemble_reduces_to_absolute_error() {
        assert_eq!(crps(&[3.5; 10], 1.25).unwrap(), -2.25);
        assert_eq!(crps(&[3.5; 10], 3.5).unwrap(), 0.0);
    }

    #[test]
    fn single_draw_is_rejected() {
        assert!(crps(&[1.0], 0.0).is_err());
    }

    #[test]
    fn log_score_examples() {
        let single = PredictiveMixture {
            weights: vec![1.0, 0.0],
            means: vec![0.0, 5.0],
            vars: vec![1.0, 1.0],
        };
        let ls = log_score([&single], 0.0).unwrap();
        assert!((ls.value + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        let sym = PredictiveMixture {
            weights: vec![0.5, 0.5],
            means: vec![-1.0, 1.0],
            vars: vec![1.0, 1.0],
        };
        let ls = log_score([&sym], 0.0).unwrap();
        assert!((ls.value - (-0.5f64).exp().ln() + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        assert!((ls.value + 1.4189).abs() < 1e-4);
    }

    #[test]
    fn point_error_examples() {
        assert_eq!(point_errors(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert_eq!(point_errors(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), (1.0, 1.0));
        assert_eq!(point_errors(&[0.0, 0.0], &[3.0, -4.0]).unwrap(), (3.5, 12.5));
        assert!(point_errors(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_one_loss_examples() {
        use State::{One, Two};
        let truth = [One, Two, Two, One];
        let same: Vec<&[State]> = vec![&truth, &truth];
        assert_eq!(state_zero_one_loss(&truth, same).unwrap().loss, 0.0);
        let flipped = [Two, Two, Two, One];
        let l = state_zero_one_loss(&truth, vec![&flipped[..], &flipped[..]]).unwrap();
        assert_eq!(l.loss, 1.0);
        let swapped = [Two, One, One, Two];
        let l = state_zero_one_loss(&truth, vec![&swapped[..]]).unwrap();
        assert_eq!((l.raw, l.loss), (4.0, 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sorted_matches_naive(e in prop::collection::vec(-50.0f64..50.0, 2..500), y in -60.0f64..60.0) {
                let a = crps(&e, y).unwrap();
                let b = naive_crps(&e, y);
                prop_assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
            }

            #[test]
            fn translation_equivariant(e in prop::collection::vec(-10.0f64..10.0, 2..60), y in -10.0f64..10.0, c in -100.0f64..100.0) {
                let shifted: Vec<f64> = e.iter().map(|v| v + c).collect();
                prop_assert!((crps(&e, y).unwrap() - crps(&shifted, y + c).unwrap()).abs() < 1e-9);
            }

            #[test]
            fn never_positive(e in prop::collection::vec(-10.0f64..10.0, 2..60), y in -10.0f64..10.0) {
                prop_assert!(crps(&e, y).unwrap() <= 1e-12);
            }

            #[test]
            fn log_score_matches_direct_sum_and_ignores_order(
                parts in prop::collection::vec((0.01f64..0.99, -3.0f64..3.0, -3.0f64..3.0, 0.1f64..4.0, 0.1f64..4.0), 1..20),
                y in -4.0f64..4.0,
            ) {
                let mix: Vec<PredictiveMixture> = parts.iter().map(|&(w, m1, m2, v1, v2)| PredictiveMixture {
                    weights: vec![w, 1.0 - w], means: vec![m1, m2], vars: vec![v1, v2],
                }).collect();
                let pdf = |y: f64, m: f64, v: f64| (-(y - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
                let direct = (mix.iter().map(|m| m.weights[0] * pdf(y, m.means[0], m.vars[0]) + m.weights[1] * pdf(y, m.means[1], m.vars[1])).sum::<f64>() / mix.len() as f64).ln();
                let ls = log_score(&mix, y).unwrap().value;
                prop_assert!((ls - direct).abs() < 1e-12);
                let rev: Vec<PredictiveMixture> = mix.iter().rev().cloned().collect();
                prop_assert!((log_score(&rev, y).unwrap().value - ls).abs() < 1e-12);
            }
        }
    }
}
