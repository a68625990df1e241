//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string so the page needs no glue beyond
//! `JSON.parse`.

use nhhmm::distributions::{pg1_mean, pg1_var, sample_pg1};
use nhhmm::hmm::{compute_transitions, emission_log_densities, forward_filter, smoothed_probabilities};
use nhhmm::sampler::chain_rng;
use nhhmm::simgen::{generate, preset};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

fn js_err(e: nhhmm::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    pub sample_mean: f64,
    pub sample_var: f64,
    pub exact_mean: f64,
    pub exact_var: f64,
}

/// `n` Pólya-Gamma PG(1, c) draws binned into a density histogram.
pub fn pg_histogram_native(c: f64, n: usize, bins: usize, seed: u64) -> nhhmm::Result<Histogram> {
    let bins = bins.max(1);
    let mut rng = chain_rng(seed, 0);
    let draws = (0..n.max(1)).map(|_| sample_pg1(&mut rng, c)).collect::<nhhmm::Result<Vec<_>>>()?;
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
    let hi = draws.iter().copied().fold(0.0, f64::max);
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for x in &draws {
        counts[((x / width) as usize).min(bins - 1)] += 1;
    }
    Ok(Histogram {
        edges: (0..=bins).map(|i| i as f64 * width).collect(),
        density: counts.iter().map(|&k| k as f64 / (draws.len() as f64 * width)).collect(),
        sample_mean: mean,
        sample_var: var,
        exact_mean: pg1_mean(c),
        exact_var: pg1_var(c),
    })
}

#[wasm_bindgen]
pub fn pg_histogram(c: f64, n: usize, bins: usize, seed: u64) -> Result<String, JsError> {
    to_js(&pg_histogram_native(c, n, bins, seed).map_err(js_err)?)
}

#[derive(Serialize)]
pub struct Smoothed {
    pub y: Vec<f64>,
    /// True regime, 1 or 2.
    pub z_true: Vec<u8>,
    /// Smoothed `P(z[t] = 1 | y)` at the generating parameters.
    pub p_state1: Vec<f64>,
    pub p11: Vec<f64>,
    pub p22: Vec<f64>,
    pub log_likelihood: f64,
}

/// Simulates a preset and runs the forward filter and backward smoother at
/// the generating parameters.
pub fn simulate_smooth_native(preset_name: &str, seed: u64) -> nhhmm::Result<Smoothed> {
    let mut sim = preset(preset_name)?;
    sim.seed = seed;
    let out = generate(&sim)?;
    let ind = sim.indicator()?;
    let params = sim.params();
    let trans = compute_transitions(
        &out.dataset,
        ind.trans_mask,
        &params.states[0].logistic.beta,
        &params.states[1].logistic.beta,
    )?;
    let emis = emission_log_densities(&out.dataset, &params, ind.mean_mask)?;
    let filter = forward_filter(&trans, &emis, params.pi1)?;
    let smooth = smoothed_probabilities(&filter, &trans);
    Ok(Smoothed {
        y: out.dataset.y().to_vec(),
        z_true: out.z_true.iter().map(|s| s.index() as u8 + 1).collect(),
        p_state1: smooth.iter().map(|p| p[0]).collect(),
        p11: trans.p11(),
        p22: trans.p22(),
        log_likelihood: filter.log_marginal(),
    })
}

#[wasm_bindgen]
pub fn simulate_smooth(preset_name: &str, seed: u64) -> Result<String, JsError> {
    to_js(&simulate_smooth_native(preset_name, seed).map_err(js_err)?)
}

/// Ensemble CRPS of `y` (negatively oriented: larger is better).
#[wasm_bindgen]
pub fn crps(ensemble: Vec<f64>, y: f64) -> Result<f64, JsError> {
    nhhmm::scoring::crps(&ensemble, y).map_err(js_err)
}
