use nhhmm::sampler::{parameter_names, relabel, run, summarize, RunConfig};
use nhhmm::simgen::{generate, preset};
use nhhmm::{ChainStore, McmcDraw, PriorConfig};

fn mean_intercept(c: &ChainStore<McmcDraw>, s: usize) -> f64 {
    c.draws.iter().map(|d| d.params.states[s].regression.b[0]).sum::<f64>() / c.len() as f64
}

/// Puts the state with the larger mean intercept first in every chain.
fn align(chains: &mut [ChainStore<McmcDraw>]) {
    for i in 0..chains.len() {
        if mean_intercept(&chains[i], 0) < mean_intercept(&chains[i], 1) {
            relabel(&mut chains[i..=i]);
        }
    }
}

#[test]
fn selection_and_frozen_true_model_agree_when_selection_concentrates() {
    let sim = preset("exp3").unwrap();
    let data = generate(&sim).unwrap();
    let base = RunConfig {
        sweeps: 4000,
        burn_in: 1500,
        seed: 21,
        ..RunConfig::default()
    };
    let frozen_cfg = RunConfig {
        rj_enabled: false,
        initial_indicator: Some(sim.indicator().unwrap()),
        ..base.clone()
    };
    let mut rj = run(&data.dataset, &PriorConfig::default(), &base, None).unwrap().chains;
    let mut frozen = run(&data.dataset, &PriorConfig::default(), &frozen_cfg, None).unwrap().chains;
    align(&mut rj);
    align(&mut frozen);
    let names = data.dataset.names().to_vec();
    let a = summarize(&rj, &names);
    let b = summarize(&frozen, &names);
    // compare the coefficients of the true model, present in both tables
    for pb in &b {
        let pa = a.iter().find(|p| p.parameter == pb.parameter).expect("parameter in both runs");
        let z = (pa.mean - pb.mean).abs() / (pa.sd.powi(2) + pb.sd.powi(2)).sqrt();
        assert!(z < 1.0, "{}: {} vs {}", pb.parameter, pa.mean, pb.mean);
    }
}

#[test]
fn parallel_chains_converge_to_one_posterior() {
    let sim = preset("exp3").unwrap();
    let data = generate(&sim).unwrap();
    let cfg = RunConfig {
        sweeps: 3000,
        burn_in: 1000,
        n_chains: 3,
        seed: 22,
        rj_enabled: false,
        initial_indicator: Some(sim.indicator().unwrap()),
        ..RunConfig::default()
    };
    let mut chains = run(&data.dataset, &PriorConfig::default(), &cfg, None).unwrap().chains;
    align(&mut chains);
    let names = parameter_names(&chains, data.dataset.names());
    for p in summarize(&chains, data.dataset.names()) {
        assert!(p.rhat < 1.05, "{} rhat {}", p.parameter, p.rhat);
        assert!(p.ess.unwrap() > 100.0, "{} ess {:?}", p.parameter, p.ess);
    }
    assert!(!names.is_empty());
}
