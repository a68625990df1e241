//! Data model shared by the sampler, forecaster and scorers.
//!
//! Time is indexed from zero internally. Row `t` of the covariate pool is the
//! covariate vector available at time `t`; the mean equation for `y[t]` and
//! the transition from `t - 1` into `t` both read row `t - 1`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden regime label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum State {
    One,
    Two,
}

impl State {
    pub const BOTH: [State; 2] = [State::One, State::Two];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            State::One => 0,
            State::Two => 1,
        }
    }

    #[inline]
    pub fn from_index(i: usize) -> State {
        if i == 0 {
            State::One
        } else {
            State::Two
        }
    }

    #[inline]
    pub fn other(self) -> State {
        match self {
            State::One => State::Two,
            State::Two => State::One,
        }
    }
}

impl From<State> for u8 {
    fn from(s: State) -> u8 {
        s.index() as u8 + 1
    }
}

impl TryFrom<u8> for State {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(State::One),
            2 => Ok(State::Two),
            other => Err(format!("state label must be 1 or 2, got {other}")),
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

/// Observed series plus the common covariate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    y: Vec<f64>,
    /// Row-major `T x (r - 1)`.
    x_pool: Vec<f64>,
    width: usize,
    names: Vec<String>,
    t_index: Option<Vec<String>>,
}

impl TimeSeriesDataset {
    /// Builds a dataset from the observed series and pool rows.
    pub fn new(y: Vec<f64>, rows: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        let width = names.len();
        if rows.len() != y.len() {
            return Err(Error::Dimension {
                context: "covariate rows vs observations",
                expected: y.len(),
                found: rows.len(),
            });
        }
        let mut x_pool = Vec::with_capacity(y.len() * width);
        for (t, row) in rows.into_iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidData(format!(
                    "row {t} has {} covariates, expected {width}",
                    row.len()
                )));
            }
            x_pool.extend(row);
        }
        Self::from_row_major(y, x_pool, names)
    }

    pub fn from_row_major(y: Vec<f64>, x_pool: Vec<f64>, names: Vec<String>) -> Result<Self> {
        let width = names.len();
        if y.len() < 3 {
            return Err(Error::InvalidData(format!(
                "need at least 3 observations, got {}",
                y.len()
            )));
        }
        if width > Mask::MAX_WIDTH {
            return Err(Error::InvalidData(format!(
                "covariate pool of {width} exceeds the supported {}",
                Mask::MAX_WIDTH
            )));
        }
        if x_pool.len() != y.len() * width {
            return Err(Error::Dimension {
                context: "covariate pool size",
                expected: y.len() * width,
                found: x_pool.len(),
            });
        }
        if let Some(t) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite observation at t = {t}")));
        }
        if let Some(i) = x_pool.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite covariate at t = {}, column {}",
                i / width.max(1),
                names[i % width.max(1)]
            )));
        }
        Ok(Self {
            y,
            x_pool,
            width,
            names,
            t_index: None,
        })
    }

    pub fn with_time_index(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.y.len() {
            return Err(Error::Dimension {
                context: "time index",
                expected: self.y.len(),
                found: labels.len(),
            });
        }
        self.t_index = Some(labels);
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of pool covariates, `r - 1`.
    #[inline]
    pub fn pool_width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.x_pool[t * self.width..(t + 1) * self.width]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn time_index(&self) -> Option<&[String]> {
        self.t_index.as_deref()
    }

    /// Appends autoregressive columns `y_lag1..y_lagk`.
    ///
    /// Column `y_lagj` at row `t` holds `y[t - j + 1]`, so the mean of
    /// `y[t + 1]`, which reads row `t`, sees the observation `j` steps back.
    /// The first `k - 1` observations lack a full lag history and are dropped.
    /// Returns the new dataset and its `(column, lag)` pairs.
    pub fn with_ar_lags(&self, k: usize) -> Result<(Self, Vec<(usize, usize)>)> {
        if k == 0 {
            return Ok((self.clone(), Vec::new()));
        }
        let n = self.len();
        if n < k + 2 {
            return Err(Error::InvalidData(format!(
                "{n} observations are too few for {k} autoregressive lags"
            )));
        }
        let width = self.width + k;
        let mut x_pool = Vec::with_capacity((n - k + 1) * width);
        for t in k - 1..n {
            x_pool.extend_from_slice(self.row(t));
            x_pool.extend((1..=k).map(|j| self.y[t + 1 - j]));
        }
        let mut names = self.names.clone();
        names.extend((1..=k).map(|j| format!("y_lag{j}")));
        let mut out = Self::from_row_major(self.y[k - 1..].to_vec(), x_pool, names)?;
        if let Some(idx) = &self.t_index {
            out.t_index = Some(idx[k - 1..].to_vec());
        }
        let cols = (1..=k).map(|j| (self.width + j - 1, j)).collect();
        Ok((out, cols))
    }

    /// Leading `n` observations as a new dataset.
    pub fn head(&self, n: usize) -> Result<Self> {
        let mut out = Self::from_row_major(
            self.y[..n].to_vec(),
            self.x_pool[..n * self.width].to_vec(),
            self.names.clone(),
        )?;
        if let Some(idx) = &self.t_index {
            out.t_index = Some(idx[..n].to_vec());
        }
        Ok(out)
    }
}

/// Inclusion bitmask over the covariate pool. Intercepts are implicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mask {
    bits: u64,
    width: usize,
}

impl Mask {
    pub const MAX_WIDTH: usize = 64;

    pub fn empty(width: usize) -> Self {
        assert!(width <= Self::MAX_WIDTH, "mask width {width} too large");
        Self { bits: 0, width }
    }

    pub fn full(width: usize) -> Self {
        let bits = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
        Self { bits, width }
    }

    pub fn from_indices(width: usize, active: &[usize]) -> Result<Self> {
        let mut m = Self::empty(width);
        for &j in active {
            if j >= width {
                return Err(Error::Dimension {
                    context: "mask index",
                    expected: width,
                    found: j,
                });
            }
            m.insert(j);
        }
        Ok(m)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn contains(&self, j: usize) -> bool {
        j < self.width && self.bits & (1 << j) != 0
    }

    pub fn insert(&mut self, j: usize) {
        assert!(j < self.width);
        self.bits |= 1 << j;
    }

    pub fn remove(&mut self, j: usize) {
        assert!(j < self.width);
        self.bits &= !(1 << j);
    }

    pub fn toggled(mut self, j: usize) -> Self {
        assert!(j < self.width);
        self.bits ^= 1 << j;
        self
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    /// Coefficient count including the intercept.
    #[inline]
    pub fn dim(&self) -> usize {
        self.count() + 1
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(move |&j| self.contains(j))
    }

    pub fn inactive(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(move |&j| !self.contains(j))
    }

    /// Positions of (intercept, active covariates) within the full
    /// `1 + width` coefficient vector.
    pub fn coordinates(&self) -> Vec<usize> {
        std::iter::once(0).chain(self.active().map(|j| j + 1)).collect()
    }

    /// Bit string in pool order, e.g. `"11000"`.
    pub fn key(&self) -> String {
        (0..self.width)
            .map(|j| if self.contains(j) { '1' } else { '0' })
            .collect()
    }

    pub fn parse_key(key: &str) -> Result<Self> {
        let mut m = Self::empty(key.len());
        for (j, c) in key.chars().enumerate() {
            match c {
                '1' => m.insert(j),
                '0' => {}
                _ => return Err(Error::InvalidData(format!("bad mask key {key:?}"))),
            }
        }
        Ok(m)
    }

    /// Covariate names of the active set, e.g. `X1,X2`.
    pub fn describe(&self, names: &[String]) -> String {
        let v: Vec<&str> = self.active().map(|j| names[j].as_str()).collect();
        if v.is_empty() {
            "(intercept only)".to_string()
        } else {
            v.join(",")
        }
    }
}

/// Which equation a design or mask belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Mean,
    Trans,
}

/// The pair of inclusion masks identifying one of `2^(2(r-1))` models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelIndicator {
    pub mean_mask: Mask,
    pub trans_mask: Mask,
}

impl ModelIndicator {
    pub fn new(mean_mask: Mask, trans_mask: Mask) -> Self {
        Self {
            mean_mask,
            trans_mask,
        }
    }

    pub fn full(width: usize) -> Self {
        Self::new(Mask::full(width), Mask::full(width))
    }

    pub fn empty(width: usize) -> Self {
        Self::new(Mask::empty(width), Mask::empty(width))
    }

    pub fn mask(&self, eq: Equation) -> Mask {
        match eq {
            Equation::Mean => self.mean_mask,
            Equation::Trans => self.trans_mask,
        }
    }

    pub fn mask_mut(&mut self, eq: Equation) -> &mut Mask {
        match eq {
            Equation::Mean => &mut self.mean_mask,
            Equation::Trans => &mut self.trans_mask,
        }
    }

    /// `mean|trans` bit strings.
    pub fn key(&self) -> String {
        format!("{}|{}", self.mean_mask.key(), self.trans_mask.key())
    }

    pub fn parse_key(key: &str) -> Result<Self> {
        let (m, t) = key
            .split_once('|')
            .ok_or_else(|| Error::InvalidData(format!("bad indicator key {key:?}")))?;
        Ok(Self::new(Mask::parse_key(m)?, Mask::parse_key(t)?))
    }
}

/// Mean regression of one state: `y_t = x_{t-1} b + e`, `e ~ N(0, sigma2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRegression {
    pub b: Vec<f64>,
    pub sigma2: f64,
}

/// Logistic persistence coefficients of one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLogistic {
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    pub regression: StateRegression,
    pub logistic: StateLogistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NhhmmParams {
    pub states: [StateParams; 2],
    pub pi1: [f64; 2],
}

impl NhhmmParams {
    #[inline]
    pub fn state(&self, s: State) -> &StateParams {
        &self.states[s.index()]
    }

    #[inline]
    pub fn state_mut(&mut self, s: State) -> &mut StateParams {
        &mut self.states[s.index()]
    }

    /// Checks coefficient lengths, variances and the initial distribution.
    pub fn validate(&self, indicator: &ModelIndicator) -> Result<()> {
        for sp in &self.states {
            if sp.regression.b.len() != indicator.mean_mask.dim() {
                return Err(Error::Dimension {
                    context: "mean coefficients",
                    expected: indicator.mean_mask.dim(),
                    found: sp.regression.b.len(),
                });
            }
            if sp.logistic.beta.len() != indicator.trans_mask.dim() {
                return Err(Error::Dimension {
                    context: "logistic coefficients",
                    expected: indicator.trans_mask.dim(),
                    found: sp.logistic.beta.len(),
                });
            }
            if !(sp.regression.sigma2 > 0.0) || !sp.regression.sigma2.is_finite() {
                return Err(Error::Domain(format!(
                    "state variance must be positive, got {}",
                    sp.regression.sigma2
                )));
            }
            if sp.logistic.beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::Domain("non-finite logistic coefficient".into()));
            }
        }
        let [a, b] = self.pi1;
        if a < 0.0 || b < 0.0 || ((a + b) - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "initial distribution ({a}, {b}) is not a probability pair"
            )));
        }
        Ok(())
    }

    /// Swaps the two state labels.
    pub fn swapped(&self) -> Self {
        Self {
            states: [self.states[1].clone(), self.states[0].clone()],
            pi1: [self.pi1[1], self.pi1[0]],
        }
    }
}

/// Per-horizon two-component normal mixture implied by one draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawForecast {
    pub values: Vec<f64>,
    pub mixtures: Vec<PredictiveMixture>,
}

/// One retained posterior sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcDraw {
    pub sweep: usize,
    pub params: NhhmmParams,
    pub indicator: ModelIndicator,
    pub z_path: Vec<State>,
    /// Polya-Gamma auxiliaries per state, in time order of the state's
    /// transition observations. Omitted unless the run asks for them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aug_omega: Option<[Vec<f64>; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<DrawForecast>,
    pub log_marginal: f64,
}

/// Append-only archive of retained draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStore<D = McmcDraw> {
    pub draws: Vec<D>,
    pub burn_in: usize,
    pub thin: usize,
}

impl<D> ChainStore<D> {
    pub fn new(burn_in: usize, thin: usize) -> Self {
        Self {
            draws: Vec::new(),
            burn_in,
            thin: thin.max(1),
        }
    }

    /// Whether the sweep (zero-based) survives burn-in and thinning.
    #[inline]
    pub fn retains(&self, sweep: usize) -> bool {
        sweep >= self.burn_in && (sweep - self.burn_in) % self.thin == 0
    }

    pub fn push(&mut self, draw: D) {
        self.draws.push(draw);
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

impl<D: Serialize + for<'de> Deserialize<'de>> ChainStore<D> {
    /// Newline-delimited JSON, one draw per line.
    pub fn write_ndjson<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for d in &self.draws {
            serde_json::to_writer(&mut w, d)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: std::io::BufRead>(r: R, burn_in: usize, thin: usize) -> Result<Self> {
        let mut store = Self::new(burn_in, thin);
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            store.push(serde_json::from_str(&line)?);
        }
        Ok(store)
    }
}

/// Gaussian prior over the intercept plus the full pool. Restricted to the
/// active coordinates of a mask whenever a model is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefPrior {
    /// Prior mean over `1 + width` coordinates; zeros when absent.
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    /// Isotropic variance `c` used when no full covariance is given.
    pub variance: f64,
    #[serde(default)]
    pub cov: Option<Vec<Vec<f64>>>,
}

impl CoefPrior {
    pub fn isotropic(variance: f64) -> Self {
        Self {
            mean: None,
            variance,
            cov: None,
        }
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        let dim = width + 1;
        if !(self.variance > 0.0) {
            return Err(Error::Config(format!(
                "prior variance must be positive, got {}",
                self.variance
            )));
        }
        if let Some(m) = &self.mean {
            if m.len() != dim {
                return Err(Error::Dimension {
                    context: "prior mean",
                    expected: dim,
                    found: m.len(),
                });
            }
        }
        if let Some(c) = &self.cov {
            if c.len() != dim || c.iter().any(|r| r.len() != dim) {
                return Err(Error::Dimension {
                    context: "prior covariance",
                    expected: dim,
                    found: c.len(),
                });
            }
            let m = DMatrix::from_fn(dim, dim, |i, j| c[i][j]);
            if m.cholesky().is_none() {
                return Err(Error::Config("prior covariance is not positive definite".into()));
            }
        }
        Ok(())
    }

    /// Mean and covariance restricted to the mask's coordinates.
    pub fn restrict(&self, mask: Mask) -> (DVector<f64>, DMatrix<f64>) {
        let coords = mask.coordinates();
        let k = coords.len();
        let mean = match &self.mean {
            Some(m) => DVector::from_iterator(k, coords.iter().map(|&i| m[i])),
            None => DVector::zeros(k),
        };
        let cov = match &self.cov {
            Some(c) => DMatrix::from_fn(k, k, |a, b| c[coords[a]][coords[b]]),
            None => DMatrix::from_diagonal_element(k, k, self.variance),
        };
        (mean, cov)
    }
}

/// Hyperparameters of the conjugate priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Inverse-gamma shape `p` for the state variances.
    pub ig_shape: f64,
    /// Inverse-gamma scale `q`.
    pub ig_scale: f64,
    /// `B_s | sigma_s^2 ~ N(L0, sigma_s^2 V0)`.
    pub mean_coef: CoefPrior,
    /// `beta_s ~ N(m0, V0w)`.
    pub trans_coef: CoefPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            ig_shape: 0.1,
            ig_scale: 0.1,
            mean_coef: CoefPrior::isotropic(100.0),
            trans_coef: CoefPrior::isotropic(80.0),
        }
    }
}

impl PriorConfig {
    pub fn validate(&self, width: usize) -> Result<()> {
        if !(self.ig_shape > 0.0 && self.ig_scale > 0.0) {
            return Err(Error::Config(format!(
                "inverse-gamma hyperparameters must be positive, got ({}, {})",
                self.ig_shape, self.ig_scale
            )));
        }
        self.mean_coef.validate(width)?;
        self.trans_coef.validate(width)
    }
}

/// Design matrix `(1, selected covariates)` with lag-1 alignment.
///
/// Both equations have `T - 1` usable rows. Row `i` of the mean design
/// explains `y[i + 1]`; row `i` of the transition design governs the move
/// from `i` to `i + 1`. Either way the row reads covariate row `i`.
pub fn active_design(dataset: &TimeSeriesDataset, mask: Mask, _which: Equation) -> Result<DMatrix<f64>> {
    if mask.width() != dataset.pool_width() {
        return Err(Error::Dimension {
            context: "mask width",
            expected: dataset.pool_width(),
            found: mask.width(),
        });
    }
    let rows = dataset.len() - 1;
    let coords = mask.coordinates();
    Ok(DMatrix::from_fn(rows, coords.len(), |i, c| {
        if c == 0 {
            1.0
        } else {
            dataset.row(i)[coords[c] - 1]
        }
    }))
}

/// Linear predictor `(1, x[mask]) . coef` without materializing the row.
#[inline]
pub fn linear_predictor(row: &[f64], mask: Mask, coef: &[f64]) -> f64 {
    let mut acc = coef[0];
    let mut k = 1;
    let mut bits = mask.bits();
    while bits != 0 {
        let j = bits.trailing_zeros() as usize;
        acc += coef[k] * row[j];
        k += 1;
        bits &= bits - 1;
    }
    acc
}

/// Transition observations of state `s`: the times `t < T - 1` spent in `s`
/// and whether the chain stayed there at `t + 1`.
pub fn transition_observations(z_path: &[State], s: State) -> (Vec<usize>, Vec<u8>) {
    let mut rows = Vec::new();
    let mut responses = Vec::new();
    for t in 0..z_path.len().saturating_sub(1) {
        if z_path[t] == s {
            rows.push(t);
            responses.push(u8::from(z_path[t + 1] == s));
        }
    }
    (rows, responses)
}

/// Visit count of each state.
pub fn state_counts(z_path: &[State]) -> [usize; 2] {
    let mut n = [0usize; 2];
    for z in z_path {
        n[z.index()] += 1;
    }
    n
}

/// Map of indicator keys to visit frequency, ordered for stable export.
pub type ModelFrequencies = BTreeMap<String, f64>;
