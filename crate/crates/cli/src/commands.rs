use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use nhhmm::forecast::{
    ensemble_from_chain, select_model_draws, ForecastEnsemble, FutureCovariates, PointForecast, PredictionMode,
};
use nhhmm::rjmcmc::{tally, ModelSummary};
use nhhmm::sampler::{
    align_to_path, chain_rng, modal_path, posterior_persistence, run, state_probabilities, summarize, write_summary_csv,
    write_trace_csv, ChainStats,
};
use nhhmm::scoring::ScoreReport;
use nhhmm::simgen::{generate, preset};
use nhhmm::{ChainStore, McmcDraw, TimeSeriesDataset};
use serde::{Deserialize, Serialize};

use crate::config::{FileConfig, SweepOverrides};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_csv, read_table, write_series_csv};
use crate::output::{Manifest, OutputDir};

pub const CHAIN_PREFIX: &str = "chain_";
pub const FIT_RECORD: &str = "fit.json";

/// What `forecast` needs to know about a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub data_path: String,
    pub base_names: Vec<String>,
    pub ar_columns: Vec<(usize, usize)>,
    pub config: FileConfig,
    pub dataset: TimeSeriesDataset,
    pub n_chains: usize,
}

#[derive(Debug, Clone, Serialize)]
struct ModelProbability {
    model: String,
    mean: String,
    trans: String,
    probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelReport {
    map_model: String,
    map_probability: f64,
    map_mean: String,
    map_trans: String,
    median_model: String,
    median_mean: String,
    median_trans: String,
    mean_inclusion: Vec<(String, f64)>,
    trans_inclusion: Vec<(String, f64)>,
    models: Vec<ModelProbability>,
    jump_statistics: Vec<ChainStats>,
}

impl ModelReport {
    pub fn new(chains: &[ChainStore<McmcDraw>], names: &[String], stats: &[ChainStats]) -> CliResult<(Self, ModelSummary)> {
        let t = tally(chains)?;
        let s = t.summarize()?;
        let mut models: Vec<ModelProbability> = t
            .counts
            .iter()
            .map(|(m, &c)| ModelProbability {
                model: m.key(),
                mean: m.mean_mask.describe(names),
                trans: m.trans_mask.describe(names),
                probability: c as f64 / t.total as f64,
            })
            .collect();
        models.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.model.cmp(&b.model)));
        let named = |v: &[f64]| names.iter().cloned().zip(v.iter().copied()).collect();
        Ok((
            Self {
                map_model: s.map_model.key(),
                map_probability: s.map_prob,
                map_mean: s.map_model.mean_mask.describe(names),
                map_trans: s.map_model.trans_mask.describe(names),
                median_model: s.median_model.key(),
                median_mean: s.median_model.mean_mask.describe(names),
                median_trans: s.median_model.trans_mask.describe(names),
                mean_inclusion: named(&s.mean_inclusion),
                trans_inclusion: named(&s.trans_inclusion),
                models,
                jump_statistics: stats.to_vec(),
            },
            s,
        ))
    }
}

/// Chains, posterior summaries, model tables, persistence and state
/// probabilities of one fit.
fn write_fit_artifacts(
    out: &mut OutputDir,
    chains: &[ChainStore<McmcDraw>],
    dataset: &TimeSeriesDataset,
    stats: &[ChainStats],
    truth: Option<&McmcDraw>,
) -> CliResult<ModelSummary> {
    let names = dataset.names();
    for (i, c) in chains.iter().enumerate() {
        out.write(&format!("{CHAIN_PREFIX}{i}.ndjson"), |w| Ok(c.write_ndjson(w)?))?;
    }
    let summary = summarize(chains, names);
    match truth {
        None => out.write("summary.csv", |w| Ok(write_summary_csv(&summary, w)?))?,
        Some(t) => {
            let true_values = nhhmm::sampler::embed_draw(t, names);
            out.write("summary.csv", |w| {
                writeln!(w, "parameter,true,mean,sd,q025,median,q975,ess,rhat")?;
                for r in &summary {
                    let tv = true_values.iter().find(|(n, _)| *n == r.parameter).map_or(0.0, |p| p.1);
                    let ess = r.ess.map(|v| v.to_string()).unwrap_or_default();
                    writeln!(
                        w,
                        "{},{tv},{},{},{},{},{},{ess},{}",
                        r.parameter, r.mean, r.sd, r.q025, r.median, r.q975, r.rhat
                    )?;
                }
                Ok(())
            })?;
        }
    }
    out.write("trace.csv", |w| Ok(write_trace_csv(chains, names, w)?))?;
    let (report, model_summary) = ModelReport::new(chains, names, stats)?;
    out.write_json("models.json", &report)?;
    out.write("inclusion.csv", |w| {
        writeln!(w, "covariate,mean_equation,transition_equation")?;
        for (j, n) in names.iter().enumerate() {
            writeln!(w, "{n},{},{}", model_summary.mean_inclusion[j], model_summary.trans_inclusion[j])?;
        }
        Ok(())
    })?;
    let pers = posterior_persistence(chains, dataset);
    let truth_pers = truth.map(|t| posterior_persistence(&[single(t)], dataset));
    out.write("persistence.csv", |w| {
        match &truth_pers {
            Some(_) => writeln!(w, "t,true_p11,posterior_p11,true_p22,posterior_p22")?,
            None => writeln!(w, "t,posterior_p11,posterior_p22")?,
        }
        for t in 0..pers[0].len() {
            match &truth_pers {
                Some(tp) => writeln!(w, "{t},{},{},{},{}", tp[0][t], pers[0][t], tp[1][t], pers[1][t])?,
                None => writeln!(w, "{t},{},{}", pers[0][t], pers[1][t])?,
            }
        }
        Ok(())
    })?;
    let probs = state_probabilities(chains);
    out.write("state_probabilities.csv", |w| {
        writeln!(w, "t,p_state1")?;
        for (t, p) in probs.iter().enumerate() {
            writeln!(w, "{t},{p}")?;
        }
        Ok(())
    })?;
    Ok(model_summary)
}

fn single(d: &McmcDraw) -> ChainStore<McmcDraw> {
    let mut c = ChainStore::new(0, 1);
    c.push(d.clone());
    c
}

/// Draws, quantile fan and density histogram of one ensemble.
fn write_ensemble(out: &mut OutputDir, prefix: &str, e: &ForecastEnsemble) -> CliResult<()> {
    out.write(&format!("{prefix}_draws.csv"), |w| Ok(e.write_draws_csv(w)?))?;
    out.write(&format!("{prefix}_quantiles.csv"), |w| Ok(e.write_quantiles_csv(w)?))?;
    out.write(&format!("{prefix}_density.csv"), |w| {
        const BINS: usize = 40;
        writeln!(w, "horizon,bin_low,bin_high,density")?;
        for h in 0..e.horizons {
            let col = e.column(h);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = if hi > lo { (hi - lo) / BINS as f64 } else { 1.0 };
            let mut counts = [0usize; BINS];
            for v in &col {
                counts[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
            }
            for (b, c) in counts.iter().enumerate() {
                let a = lo + b as f64 * width;
                writeln!(w, "{},{a},{},{}", h + 1, a + width, *c as f64 / (col.len() as f64 * width))?;
            }
        }
        Ok(())
    })
}

fn score(e: &ForecastEnsemble, actuals: &[f64]) -> CliResult<ScoreReport> {
    let mixtures = e.mixture_columns();
    Ok(ScoreReport::compute(&e.columns(), mixtures.as_deref(), &e.point(PointForecast::Mean), actuals)?)
}

// ------------------------------------------------------------------ simulate

pub fn simulate(preset_name: &str, seed: Option<u64>, out: Option<&Path>) -> CliResult<PathBuf> {
    let mut sim = preset(preset_name)?;
    if let Some(s) = seed {
        sim.seed = s;
    }
    let data = generate(&sim)?;
    let mut out = OutputDir::resolve(out)?;
    write_simulation(&mut out, &sim, &data)?;
    let hash = crate::config::hex(&<sha2::Sha256 as sha2::Digest>::digest(serde_json::to_vec(&sim)?));
    out.finish(Manifest::new("simulate", Some(sim.seed), &sim, hash)?)
}

fn write_simulation(out: &mut OutputDir, sim: &nhhmm::simgen::SimConfig, data: &nhhmm::simgen::SimOutput) -> CliResult<()> {
    let ds = &data.dataset;
    let rows: Vec<Vec<f64>> = (0..ds.len()).map(|t| ds.row(t).to_vec()).collect();
    out.write("data.csv", |w| Ok(write_series_csv(w, 0, ds.y(), &rows, ds.names())?))?;
    out.write("holdout.csv", |w| {
        Ok(write_series_csv(w, ds.len(), &data.holdout_y, &data.holdout_x, ds.names())?)
    })?;
    out.write_json("truth.json", &data.ground_truth(sim)?)?;
    Ok(())
}

// ------------------------------------------------------------------ fit

pub struct FitArgs<'a> {
    pub data: &'a Path,
    pub config: Option<&'a Path>,
    pub ar_lags: Option<usize>,
    pub no_rj: bool,
    pub seed: Option<u64>,
    pub sweeps: &'a SweepOverrides,
    pub out: Option<&'a Path>,
}

pub fn fit(args: FitArgs<'_>) -> CliResult<PathBuf> {
    let mut cfg = FileConfig::load(args.config)?;
    if let Some(k) = args.ar_lags {
        cfg.ar_lags = k;
    }
    if args.no_rj {
        cfg.run.rj_enabled = false;
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    args.sweeps.apply(&mut cfg.run);
    cfg.run.forecast_horizons = 0;
    let ing = ingest_csv(args.data, cfg.ar_lags)?;
    cfg.validate(ing.dataset.pool_width())?;
    let mut out = OutputDir::resolve(args.out)?;
    let result = run(&ing.dataset, &cfg.prior, &cfg.run, None)?;
    let mut chains = result.chains;
    let reference = modal_path(&chains[0]);
    align_to_path(&mut chains, &reference);
    write_fit_artifacts(&mut out, &chains, &ing.dataset, &result.stats, None)?;
    out.write_json(
        FIT_RECORD,
        &FitRecord {
            data_path: args.data.display().to_string(),
            base_names: ing.base_names,
            ar_columns: ing.ar_columns,
            config: cfg.clone(),
            dataset: ing.dataset,
            n_chains: chains.len(),
        },
    )?;
    let manifest = Manifest::new("fit", Some(cfg.run.seed), &cfg, cfg.hash())?.input(args.data)?;
    let manifest = match args.config {
        Some(c) => manifest.input(c)?,
        None => manifest,
    };
    out.finish(manifest)
}

// ------------------------------------------------------------------ forecast

pub struct ForecastArgs<'a> {
    pub chain_dir: &'a Path,
    pub future: &'a Path,
    pub horizons: usize,
    pub mode: PredictionMode,
    pub seed: u64,
    pub out: Option<&'a Path>,
}

pub fn load_fit(dir: &Path) -> CliResult<(FitRecord, Vec<ChainStore<McmcDraw>>)> {
    let rec_path = dir.join(FIT_RECORD);
    let text = std::fs::read_to_string(&rec_path)
        .map_err(|e| CliError::validation(format!("{}: {e}", rec_path.display())))?;
    let rec: FitRecord =
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", rec_path.display())))?;
    let mut chains = Vec::with_capacity(rec.n_chains);
    for i in 0..rec.n_chains {
        let p = dir.join(format!("{CHAIN_PREFIX}{i}.ndjson"));
        let f = std::fs::File::open(&p).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
        chains.push(ChainStore::read_ndjson(BufReader::new(f), rec.config.run.burn_in, rec.config.run.thin)?);
    }
    Ok((rec, chains))
}

pub fn forecast(args: ForecastArgs<'_>) -> CliResult<PathBuf> {
    if args.horizons == 0 {
        return Err(CliError::validation("--horizons must be at least 1"));
    }
    let (rec, chains) = load_fit(args.chain_dir)?;
    let table = read_table(args.future)?;
    let rows = table.select(&rec.base_names, args.future)?;
    let future = FutureCovariates::from_holdout_lagged(&rec.dataset, &rows, args.horizons, &rec.ar_columns)?;
    let selected = select_model_draws(&chains, args.mode)?;
    let mut rng = chain_rng(args.seed, 0);
    let ensemble = ensemble_from_chain(&selected, &future, args.horizons, args.mode, &mut rng)?;
    let mut out = OutputDir::resolve(args.out)?;
    write_ensemble(&mut out, "forecast", &ensemble)?;
    #[derive(Serialize)]
    struct ForecastConfig {
        horizons: usize,
        mode: PredictionMode,
        seed: u64,
    }
    let fc = ForecastConfig {
        horizons: args.horizons,
        mode: args.mode,
        seed: args.seed,
    };
    let hash = crate::config::hex(&<sha2::Sha256 as sha2::Digest>::digest(serde_json::to_vec(&fc)?));
    let mut manifest = Manifest::new("forecast", Some(args.seed), &fc, hash)?.input(args.future)?;
    for i in 0..rec.n_chains {
        manifest = manifest.input(&args.chain_dir.join(format!("{CHAIN_PREFIX}{i}.ndjson")))?;
    }
    out.finish(manifest)
}

// ------------------------------------------------------------------ score

/// Reads actual values: the `y` column, or the only value column.
pub fn read_actuals(path: &Path) -> CliResult<Vec<f64>> {
    let table = read_table(path)?;
    if let Some(y) = table.column("y") {
        return Ok(y);
    }
    match table.names.len() {
        1 => Ok(table.rows.iter().map(|r| r[0]).collect()),
        _ => Err(CliError::validation(format!(
            "{}: expected a 'y' column or a single value column",
            path.display()
        ))),
    }
}

pub fn score_files(ensemble: &Path, actuals: &Path) -> CliResult<ScoreReport> {
    let f = std::fs::File::open(ensemble).map_err(|e| CliError::validation(format!("{}: {e}", ensemble.display())))?;
    let e = ForecastEnsemble::read_draws_csv(BufReader::new(f), PredictionMode::Bma)?;
    let y = read_actuals(actuals)?;
    if y.len() < e.horizons {
        return Err(CliError::validation(format!(
            "{}: {} actual values for {} horizons",
            actuals.display(),
            y.len(),
            e.horizons
        )));
    }
    score(&e, &y[..e.horizons])
}

// ------------------------------------------------------------------ replicate

pub struct ReplicateArgs<'a> {
    pub experiment: &'a str,
    pub seed: u64,
    pub config: Option<&'a Path>,
    pub sweeps: &'a SweepOverrides,
    pub out: Option<&'a Path>,
}

#[derive(Debug, Clone, Serialize)]
struct Comparison {
    model: &'static str,
    mean_crps: f64,
    log_score: Option<f64>,
    mafe: f64,
    msfe: f64,
}

pub fn replicate(args: ReplicateArgs<'_>) -> CliResult<PathBuf> {
    let selection = match args.experiment {
        "exp1" | "exp2" => false,
        "exp3" | "exp4" => true,
        other => return Err(CliError::validation(format!("unknown experiment '{other}'; expected exp1..exp4"))),
    };
    let sim = preset(args.experiment)?;
    let data = generate(&sim)?;
    let truth = sim.indicator()?;
    let mut cfg = FileConfig::load(args.config)?;
    args.sweeps.apply(&mut cfg.run);
    cfg.run.seed = args.seed;
    cfg.run.forecast_horizons = data.holdout_y.len();
    cfg.run.rj_enabled = selection;
    if !selection {
        cfg.run.initial_indicator = Some(truth);
    }
    let lr_lags = cfg.lr_lags.unwrap_or(1);
    let ds = &data.dataset;
    cfg.validate(ds.pool_width())?;

    let mut out = OutputDir::resolve(args.out)?;
    write_simulation(&mut out, &sim, &data)?;

    let future = FutureCovariates::from_holdout(ds, &data.holdout_x, cfg.run.forecast_horizons)?;
    let result = run(ds, &cfg.prior, &cfg.run, Some(&future))?;
    let mut chains = result.chains;
    align_to_path(&mut chains, &data.z_true);
    let truth_draw = McmcDraw {
        sweep: 0,
        params: sim.params(),
        indicator: truth,
        z_path: data.z_true.clone(),
        aug_omega: None,
        forecast: None,
        log_marginal: 0.0,
    };
    let summary = write_fit_artifacts(&mut out, &chains, ds, &result.stats, Some(&truth_draw))?;
    let zero_one = nhhmm::scoring::state_zero_one_loss(
        &data.z_true,
        chains.iter().flat_map(|c| &c.draws).map(|d| d.z_path.as_slice()),
    )?;

    let selected = select_model_draws(&chains, cfg.run.prediction_mode)?;
    let nh = nhhmm::forecast::ensemble_from_stored(&selected, cfg.run.prediction_mode)?;

    let bc = nhhmm::baselines::BaselineConfig {
        sweeps: cfg.run.sweeps,
        burn_in: cfg.run.burn_in,
        thin: cfg.run.thin,
        rj_enabled: selection,
        model_prior: cfg.run.model_prior,
    };
    let mask = if selection {
        nhhmm::Mask::full(ds.pool_width())
    } else {
        truth.mean_mask
    };
    let mut rng = chain_rng(args.seed, 1001);
    let (hc, _) = nhhmm::baselines::fit_hhmm(ds, mask, &cfg.prior, &bc, &mut rng)?;
    let hh = ensemble_from_chain(std::slice::from_ref(&hc), &future, future.len(), PredictionMode::Bma, &mut rng)?;
    let mut rng = chain_rng(args.seed, 1002);
    let lf = nhhmm::baselines::fit_linreg(ds, mask, lr_lags, &cfg.prior, &bc, &mut rng)?;
    let lr = nhhmm::baselines::linreg_ensemble(&lf, &data.holdout_x, future.len(), &mut rng)?;

    let mut comparison = Vec::new();
    let mut per_obs = Vec::new();
    for (name, e) in [("nhhmm", &nh), ("hhmm", &hh), ("lr", &lr)] {
        write_ensemble(&mut out, name, e)?;
        let rep = score(e, &data.holdout_y)?;
        out.write(&format!("{name}_scores.csv"), |w| Ok(rep.write_csv(w)?))?;
        comparison.push(Comparison {
            model: name,
            mean_crps: rep.mean_crps,
            log_score: (!rep.per_observation_log_score.is_empty()).then_some(rep.log_score),
            mafe: rep.mafe,
            msfe: rep.msfe,
        });
        per_obs.push(rep.per_observation_crps);
    }
    out.write("crps_by_observation.csv", |w| {
        writeln!(w, "horizon,y,nhhmm,hhmm,lr")?;
        for (h, y) in data.holdout_y.iter().enumerate() {
            writeln!(w, "{},{y},{},{},{}", h + 1, per_obs[0][h], per_obs[1][h], per_obs[2][h])?;
        }
        Ok(())
    })?;
    out.write("forecast_criteria.csv", |w| {
        writeln!(w, "model,mean_crps,log_score,mafe,msfe")?;
        for c in &comparison {
            let ls = c.log_score.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{ls},{},{}", c.model, c.mean_crps, c.mafe, c.msfe)?;
        }
        Ok(())
    })?;

    #[derive(Serialize)]
    struct Selection<'a> {
        true_model: String,
        map_model: String,
        map_probability: f64,
        median_model: String,
        map_is_true: bool,
        median_is_true: bool,
        state_zero_one_loss: nhhmm::scoring::ZeroOneLoss,
        forecasts: &'a [Comparison],
    }
    out.write_json(
        "replication.json",
        &Selection {
            true_model: truth.key(),
            map_model: summary.map_model.key(),
            map_probability: summary.map_prob,
            median_model: summary.median_model.key(),
            map_is_true: summary.map_model == truth,
            median_is_true: summary.median_model == truth,
            state_zero_one_loss: zero_one,
            forecasts: &comparison,
        },
    )?;
    out.finish(Manifest::new("replicate", Some(args.seed), &cfg, cfg.hash())?)
}
