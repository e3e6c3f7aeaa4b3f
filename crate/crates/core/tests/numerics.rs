mod oracles;

use cpforge::active::oracle_label;
use cpforge::clustering::Standardization;
use cpforge::content::{ContentFeatures, FEATURE_COUNT};
use cpforge::dataset::Label;
use cpforge::quality::{train_traced, Hyper, TrainingSet};
use cpforge::sampler::{sample_dataset, SamplerParams};

fn oracle_labelled(n: usize, seed: u64) -> Vec<(ContentFeatures, Label)> {
    let ds = sample_dataset(n, &SamplerParams { seed, ..Default::default() }).unwrap();
    ds.records().iter().map(|r| (r.features, oracle_label(&r.grid).label)).collect()
}

fn toy_enemy_threshold() -> Vec<(ContentFeatures, Label)> {
    (0..200)
        .map(|i| {
            let f = ContentFeatures {
                enemy_count: i % 7,
                coin_count: (i * 3) % 5,
                density: 0.1 + (i % 11) as f64 * 0.03,
                ..Default::default()
            };
            (f, Label::from_accept(f.enemy_count < 3))
        })
        .collect()
}

fn training_set(labeled: &[(ContentFeatures, Label)]) -> TrainingSet {
    let rows: Vec<[f64; FEATURE_COUNT]> = labeled.iter().map(|(f, _)| f.to_vec()).collect();
    TrainingSet::new(&Standardization::fit(&rows), labeled)
}

/// Mean log-loss plus `l2/2 * |w|^2`, written out directly from the definition.
fn reference_objective(set: &TrainingSet, params: &[f64], l2: f64) -> f64 {
    let (w, b) = params.split_at(FEATURE_COUNT);
    let mut total = 0.0;
    for (x, &y) in set.x.iter().zip(&set.y) {
        let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b[0];
        let p = 1.0 / (1.0 + (-z).exp());
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / set.y.len() as f64 + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

#[test]
fn gradient_matches_central_differences() {
    let set = training_set(&oracle_labelled(400, 3));
    let mut rng = oracles::XorShift(12345);
    let l2 = 0.01;
    for point in 0..20 {
        let params: Vec<f64> = (0..=FEATURE_COUNT).map(|_| rng.unit() * 2.0 - 1.0).collect();
        let w: [f64; FEATURE_COUNT] = std::array::from_fn(|i| params[i]);
        let (gw, gb) = set.gradient(&w, params[FEATURE_COUNT], l2);
        let fd = oracles::central_difference(|p| reference_objective(&set, p, l2), &params, 1e-5);
        for i in 0..FEATURE_COUNT {
            assert!(oracles::rel_err(gw[i], fd[i]) < 1e-4, "point {point} w{i}: {} vs {}", gw[i], fd[i]);
        }
        assert!(oracles::rel_err(gb, fd[FEATURE_COUNT]) < 1e-4, "point {point} bias");
    }
}

#[test]
fn objective_matches_reference() {
    let set = training_set(&toy_enemy_threshold());
    let params: Vec<f64> = (0..=FEATURE_COUNT).map(|i| (i as f64 - 5.0) * 0.1).collect();
    let w: [f64; FEATURE_COUNT] = std::array::from_fn(|i| params[i]);
    let lib = set.objective(&w, params[FEATURE_COUNT], 0.3);
    assert!((lib - reference_objective(&set, &params, 0.3)).abs() < 1e-12);
}

#[test]
fn training_objective_never_increases() {
    let fixtures = [
        toy_enemy_threshold(),
        oracle_labelled(300, 1),
        oracle_labelled(1000, 2),
        oracle_labelled(60, 4),
    ];
    for (i, labeled) in fixtures.iter().enumerate() {
        for l2 in [0.0, 0.01, 1.0] {
            let (_, trace) = train_traced(labeled, Hyper { l2, lr: 0.1, epochs: 300 }).unwrap();
            for (e, pair) in trace.objective.windows(2).enumerate() {
                assert!(pair[1] <= pair[0] + 1e-12, "fixture {i} l2 {l2} epoch {e}: {pair:?}");
            }
        }
    }
}
