//! Posterior predictive simulation.
//!
//! For each parameter draw the hidden state is propagated from the draw's
//! last state through the covariate-driven transition law, and an observation
//! is drawn from the regression of the simulated state. Row `h` of the future
//! covariates drives step `h`: it sets both the transition out of the previous
//! state and the mean of the new observation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::logistic;
use crate::error::{Error, Result};
use crate::rjmcmc::tally_and_summarize;
use crate::types::{linear_predictor, ChainStore, DrawForecast, McmcDraw, PredictiveMixture, State, TimeSeriesDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    #[default]
    Bma,
    #[serde(alias = "map")]
    MapModel,
    #[serde(alias = "median")]
    MedianModel,
}

impl std::str::FromStr for PredictionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bma" => Ok(Self::Bma),
            "map" | "map_model" => Ok(Self::MapModel),
            "median" | "median_model" => Ok(Self::MedianModel),
            other => Err(Error::Config(format!("unknown prediction mode '{other}'"))),
        }
    }
}

/// Covariate rows for the forecast period.
///
/// Row 0 holds the covariates observed at the last training time; row `h`
/// drives the forecast of the observation `h + 1` steps ahead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureCovariates {
    pub rows: Vec<Vec<f64>>,
    /// `(column, lag)` pairs of autoregressive columns. Column `c` with lag
    /// `j` at row `h` holds the observation `j - 1` steps before the target
    /// of row `h - 1`; once that lies in the forecast period it is replaced by
    /// the simulated value.
    #[serde(default)]
    pub ar_columns: Vec<(usize, usize)>,
}

impl FutureCovariates {
    pub fn new(rows: Vec<Vec<f64>>, width: usize) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::Dimension {
                    context: "future covariate row",
                    expected: width,
                    found: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("non-finite future covariate in row {i}")));
            }
        }
        Ok(Self {
            rows,
            ar_columns: Vec::new(),
        })
    }

    /// Last training row followed by the first `horizons - 1` held-out rows.
    pub fn from_holdout(dataset: &TimeSeriesDataset, holdout_rows: &[Vec<f64>], horizons: usize) -> Result<Self> {
        if horizons == 0 {
            return Err(Error::Config("forecast horizon must be at least 1".into()));
        }
        if holdout_rows.len() + 1 < horizons {
            return Err(Error::Dimension {
                context: "held-out covariate rows",
                expected: horizons - 1,
                found: holdout_rows.len(),
            });
        }
        let mut rows = vec![dataset.row(dataset.len() - 1).to_vec()];
        rows.extend(holdout_rows[..horizons - 1].iter().cloned());
        Self::new(rows, dataset.pool_width())
    }

    /// Like [`FutureCovariates::from_holdout`] for a dataset built with
    /// [`TimeSeriesDataset::with_ar_lags`]. Held-out rows carry only the
    /// original covariates; lag entries are filled from the observed series
    /// and overwritten by the simulated path during prediction.
    pub fn from_holdout_lagged(
        dataset: &TimeSeriesDataset,
        holdout_rows: &[Vec<f64>],
        horizons: usize,
        ar_columns: &[(usize, usize)],
    ) -> Result<Self> {
        if ar_columns.is_empty() {
            return Self::from_holdout(dataset, holdout_rows, horizons);
        }
        if horizons == 0 {
            return Err(Error::Config("forecast horizon must be at least 1".into()));
        }
        if holdout_rows.len() + 1 < horizons {
            return Err(Error::Dimension {
                context: "held-out covariate rows",
                expected: horizons - 1,
                found: holdout_rows.len(),
            });
        }
        let base = dataset.pool_width() - ar_columns.len();
        let y = dataset.y();
        let n = y.len();
        let mut rows = vec![dataset.row(n - 1).to_vec()];
        for h in 1..horizons {
            let src = &holdout_rows[h - 1];
            if src.len() != base {
                return Err(Error::Dimension {
                    context: "held-out covariate row",
                    expected: base,
                    found: src.len(),
                });
            }
            let mut row = src.clone();
            row.resize(dataset.pool_width(), 0.0);
            for &(c, lag) in ar_columns {
                if h < lag {
                    row[c] = y[n + h - lag];
                }
            }
            rows.push(row);
        }
        Self::new(rows, dataset.pool_width())?.with_ar_columns(ar_columns.to_vec())
    }

    pub fn with_ar_columns(mut self, ar_columns: Vec<(usize, usize)>) -> Result<Self> {
        let width = self.rows.first().map_or(0, Vec::len);
        if let Some(&(c, l)) = ar_columns.iter().find(|&&(c, l)| c >= width || l == 0) {
            return Err(Error::Config(format!("invalid autoregressive column {c} with lag {l}")));
        }
        self.ar_columns = ar_columns;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row `h` with autoregressive entries taken from the simulated path
    /// where the lag reaches into the forecast period.
    pub(crate) fn row_for(&self, h: usize, simulated: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(&self.rows[h]);
        for &(c, lag) in &self.ar_columns {
            if h >= lag {
                buf[c] = simulated[h - lag];
            }
        }
    }
}

struct Step {
    state: State,
    value: f64,
    mixture: PredictiveMixture,
}

fn step<R: Rng + ?Sized>(draw: &McmcDraw, prev: State, row: &[f64], rng: &mut R) -> Step {
    let ind = draw.indicator;
    let p_stay = logistic(linear_predictor(
        row,
        ind.trans_mask,
        &draw.params.state(prev).logistic.beta,
    ));
    let mut weights = [0.0; 2];
    weights[prev.index()] = p_stay;
    weights[prev.other().index()] = 1.0 - p_stay;
    let means = State::BOTH.map(|s| linear_predictor(row, ind.mean_mask, &draw.params.state(s).regression.b));
    let vars = State::BOTH.map(|s| draw.params.state(s).regression.sigma2);
    let u: f64 = rng.random();
    let state = if u < p_stay { prev } else { prev.other() };
    let eps: f64 = StandardNormal.sample(rng);
    let value = means[state.index()] + vars[state.index()].sqrt() * eps;
    Step {
        state,
        value,
        mixture: PredictiveMixture {
            weights: weights.to_vec(),
            means: means.to_vec(),
            vars: vars.to_vec(),
        },
    }
}

fn last_state(draw: &McmcDraw) -> Result<State> {
    draw.z_path
        .last()
        .copied()
        .ok_or_else(|| Error::InvalidData("draw carries no state path".into()))
}

fn check_row(draw: &McmcDraw, row: &[f64]) -> Result<()> {
    let w = draw.indicator.mean_mask.width();
    if row.len() != w {
        return Err(Error::Dimension {
            context: "future covariate row",
            expected: w,
            found: row.len(),
        });
    }
    Ok(())
}

/// One-step-ahead predictive draw.
pub fn predict_one_step<R: Rng + ?Sized>(draw: &McmcDraw, future_row: &[f64], rng: &mut R) -> Result<f64> {
    check_row(draw, future_row)?;
    Ok(step(draw, last_state(draw)?, future_row, rng).value)
}

/// Iterated `L`-step path, carrying the simulated state forward.
pub fn predict_path<R: Rng + ?Sized>(
    draw: &McmcDraw,
    future: &FutureCovariates,
    horizons: usize,
    rng: &mut R,
) -> Result<DrawForecast> {
    if horizons == 0 {
        return Err(Error::Config("forecast horizon must be at least 1".into()));
    }
    if future.len() < horizons {
        return Err(Error::Dimension {
            context: "future covariate rows",
            expected: horizons,
            found: future.len(),
        });
    }
    check_row(draw, &future.rows[0])?;
    let mut prev = last_state(draw)?;
    let mut values = Vec::with_capacity(horizons);
    let mut mixtures = Vec::with_capacity(horizons);
    let mut row = Vec::new();
    for h in 0..horizons {
        future.row_for(h, &values, &mut row);
        let s = step(draw, prev, &row, rng);
        prev = s.state;
        values.push(s.value);
        mixtures.push(s.mixture);
    }
    Ok(DrawForecast { values, mixtures })
}

/// Predictive draws arranged `D x L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastEnsemble {
    pub horizons: usize,
    pub draws: Vec<Vec<f64>>,
    /// Per-draw, per-horizon predictive mixtures.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mixtures: Vec<Vec<PredictiveMixture>>,
    pub mode: PredictionMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: usize,
    pub q025: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q975: f64,
    pub mean: f64,
    pub mode: f64,
}

/// Which point summary of the ensemble to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PointForecast {
    #[default]
    Mean,
    Median,
    Mode,
}

impl ForecastEnsemble {
    pub fn from_forecasts(forecasts: Vec<DrawForecast>, mode: PredictionMode) -> Result<Self> {
        let horizons = forecasts.first().map(|f| f.values.len()).ok_or_else(|| Error::InvalidData("empty ensemble".into()))?;
        if forecasts.iter().any(|f| f.values.len() != horizons) {
            return Err(Error::InvalidData("ragged forecast paths".into()));
        }
        let (draws, mixtures) = forecasts.into_iter().map(|f| (f.values, f.mixtures)).unzip();
        Ok(Self {
            horizons,
            draws,
            mixtures,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// All draws at horizon `h` (0-based).
    pub fn column(&self, h: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[h]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.horizons).map(|h| self.column(h)).collect()
    }

    /// Mixtures at each horizon, or `None` when the ensemble carries none.
    pub fn mixture_columns(&self) -> Option<Vec<Vec<PredictiveMixture>>> {
        if self.mixtures.len() != self.draws.len() || self.mixtures.is_empty() {
            return None;
        }
        Some(
            (0..self.horizons)
                .map(|h| self.mixtures.iter().map(|m| m[h].clone()).collect())
                .collect(),
        )
    }

    pub fn point(&self, kind: PointForecast) -> Vec<f64> {
        self.summaries()
            .iter()
            .map(|s| match kind {
                PointForecast::Mean => s.mean,
                PointForecast::Median => s.q50,
                PointForecast::Mode => s.mode,
            })
            .collect()
    }

    pub fn summaries(&self) -> Vec<HorizonSummary> {
        (0..self.horizons)
            .map(|h| {
                let mut col = self.column(h);
                col.sort_by(f64::total_cmp);
                HorizonSummary {
                    horizon: h + 1,
                    q025: quantile_sorted(&col, 0.025),
                    q25: quantile_sorted(&col, 0.25),
                    q50: quantile_sorted(&col, 0.5),
                    q75: quantile_sorted(&col, 0.75),
                    q975: quantile_sorted(&col, 0.975),
                    mean: col.iter().sum::<f64>() / col.len() as f64,
                    mode: histogram_mode_sorted(&col),
                }
            })
            .collect()
    }

    /// Columns `horizon,draw_index,value`.
    pub fn write_draws_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "horizon,draw_index,value")?;
        for h in 0..self.horizons {
            for (i, d) in self.draws.iter().enumerate() {
                writeln!(w, "{},{},{}", h + 1, i, d[h])?;
            }
        }
        Ok(())
    }

    /// Columns `horizon,q025,q25,q50,q75,q975,mean`.
    pub fn write_quantiles_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "horizon,q025,q25,q50,q75,q975,mean")?;
        for s in self.summaries() {
            writeln!(w, "{},{},{},{},{},{},{}", s.horizon, s.q025, s.q25, s.q50, s.q75, s.q975, s.mean)?;
        }
        Ok(())
    }

    /// Reads the `horizon,draw_index,value` layout back.
    pub fn read_draws_csv<R: std::io::BufRead>(r: R, mode: PredictionMode) -> Result<Self> {
        let mut cells: Vec<(usize, usize, f64)> = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let parse_err = || Error::InvalidData(format!("malformed ensemble line {}: '{line}'", i + 1));
            let mut it = line.split(',');
            let h: usize = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(parse_err)?;
            let d: usize = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(parse_err)?;
            let v: f64 = it.next().and_then(|v| v.trim().parse().ok()).ok_or_else(parse_err)?;
            if h == 0 {
                return Err(parse_err());
            }
            cells.push((h - 1, d, v));
        }
        let horizons = cells.iter().map(|c| c.0 + 1).max().ok_or_else(|| Error::InvalidData("empty ensemble file".into()))?;
        let n = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
        let mut draws = vec![vec![f64::NAN; horizons]; n];
        for (h, d, v) in cells {
            draws[d][h] = v;
        }
        if draws.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::InvalidData("ensemble file has missing (horizon, draw) cells".into()));
        }
        Ok(Self {
            horizons,
            draws,
            mixtures: Vec::new(),
            mode,
        })
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Midpoint of the fullest Freedman-Diaconis histogram bin.
pub fn histogram_mode_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let width = 2.0 * iqr / (n as f64).cbrt();
    if !(width > 0.0) || hi <= lo {
        return quantile_sorted(sorted, 0.5);
    }
    let bins = (((hi - lo) / width).ceil() as usize).clamp(1, 100_000);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in sorted {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let best = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    lo + (best as f64 + 0.5) * width
}

/// Draws to forecast from under `mode`: all of them for model averaging,
/// otherwise only those that visited the MAP or median model.
pub fn select_model_draws(chains: &[ChainStore<McmcDraw>], mode: PredictionMode) -> Result<Vec<ChainStore<McmcDraw>>> {
    let target = match mode {
        PredictionMode::Bma => return Ok(chains.to_vec()),
        PredictionMode::MapModel => tally_and_summarize(chains)?.map_model,
        PredictionMode::MedianModel => tally_and_summarize(chains)?.median_model,
    };
    let out: Vec<ChainStore<McmcDraw>> = chains
        .iter()
        .map(|c| ChainStore {
            draws: c.draws.iter().filter(|d| d.indicator == target).cloned().collect(),
            burn_in: c.burn_in,
            thin: c.thin,
        })
        .collect();
    if out.iter().all(ChainStore::is_empty) {
        return Err(Error::InvalidData(format!(
            "no retained draw visited model {}; rerun with that model fixed",
            target.key()
        )));
    }
    Ok(out)
}

/// Maps every retained draw of `chains` to a predictive path.
///
/// In model-averaged mode the draws are whatever the sampler visited; for the
/// MAP and median modes the caller supplies chains from a fixed-model rerun.
pub fn ensemble_from_chain<R: Rng + ?Sized>(
    chains: &[ChainStore<McmcDraw>],
    future: &FutureCovariates,
    horizons: usize,
    mode: PredictionMode,
    rng: &mut R,
) -> Result<ForecastEnsemble> {
    let mut out = Vec::new();
    for chain in chains {
        for d in &chain.draws {
            out.push(predict_path(d, future, horizons, rng)?);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidData("cannot forecast from an empty chain".into()));
    }
    ForecastEnsemble::from_forecasts(out, mode)
}

/// Collects the forecasts the sampler drew inside its loop.
pub fn ensemble_from_stored(chains: &[ChainStore<McmcDraw>], mode: PredictionMode) -> Result<ForecastEnsemble> {
    let forecasts: Vec<DrawForecast> = chains
        .iter()
        .flat_map(|c| c.draws.iter())
        .map(|d| d.forecast.clone().ok_or_else(|| Error::InvalidData("draw has no stored forecast".into())))
        .collect::<Result<_>>()?;
    ForecastEnsemble::from_forecasts(forecasts, mode)
}
