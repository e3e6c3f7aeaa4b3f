//! wasm-bindgen wrapper behind `www/index.html`.
//!
//! A [`Demo`] trains a quality model on oracle labels and builds a CP set once;
//! the page then calls its methods and draws the returned JSON.

use cpforge::active::oracle_label;
use cpforge::content::{difficulty_score, Band, ControlParams};
use cpforge::cp::generate_cps;
use cpforge::dda::{run_adaptive, DdaConfig, PlayerSim};
use cpforge::level::{generate_level, CpSource};
use cpforge::quality::{train, Hyper};
use cpforge::rules::rule_filter;
use cpforge::sampler::{sample_dataset, sample_record, SamplerParams};
use cpforge::{CpSet, QualityModel, SegmentGrid};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const TRAIN_SEGMENTS: usize = 600;
const CP_COUNT: usize = 800;
const THETA: f64 = 0.5;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn segment_json(grid: &SegmentGrid, model: &QualityModel) -> Value {
    let f = cpforge::content::extract_features(grid);
    let verdict = rule_filter(grid);
    json!({
        "rows": grid.to_rows(),
        "difficulty": difficulty_score(&f),
        "enemy_density": f.enemy_density(),
        "p": model.predict(&f),
        "oracle": oracle_label(grid).label.is_accept(),
        "violations": verdict.violations.iter().map(|r| r.as_str()).collect::<Vec<_>>(),
    })
}

#[wasm_bindgen]
pub struct Demo {
    model: QualityModel,
    cps: CpSet,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsValue> {
        let params = SamplerParams { seed: seed.into(), ..Default::default() };
        let ds = sample_dataset(TRAIN_SEGMENTS, &params).map_err(js_err)?;
        let labeled: Vec<_> = ds.records().iter().map(|r| (r.features, oracle_label(&r.grid).label)).collect();
        let model = train(&labeled, Hyper::default()).map_err(js_err)?;
        let cp_params = SamplerParams { seed: u64::from(seed) + 1, ..Default::default() };
        let cps = generate_cps(&model, CP_COUNT, &cp_params, THETA, CP_COUNT * 200).map_err(js_err)?;
        Ok(Demo { model, cps })
    }

    #[wasm_bindgen(getter)]
    pub fn cp_count(&self) -> usize {
        self.cps.len()
    }

    /// One raw sampler draw with its rule verdict and model score.
    pub fn sample(&self, seed: u32) -> String {
        let params = SamplerParams { seed: seed.into(), ..Default::default() };
        let record = sample_record(&params, 0);
        segment_json(&record.grid, &self.model).to_string()
    }

    /// Assembles a level from the CP set, keeping every segment's difficulty in `[lo, hi]`.
    pub fn level(&self, seed: u32, length: usize, lo: f64, hi: f64) -> Result<String, JsValue> {
        let control = ControlParams {
            difficulty: Some(Band::new(lo, hi).map_err(js_err)?),
            ..Default::default()
        };
        let level = generate_level(CpSource::Set(&self.cps), length, &control, seed.into()).map_err(js_err)?;
        let segments: Vec<Value> = level.segments.iter().map(|g| segment_json(g, &self.model)).collect();
        Ok(json!({ "segments": segments, "mean_difficulty": level.mean_difficulty() }).to_string())
    }

    /// Runs the adaptive policy against a simulated player and returns the trace as CSV.
    pub fn adapt(&self, skill: f64, episodes: usize, seed: u32) -> Result<String, JsValue> {
        let mut player = PlayerSim::new(skill, seed.into());
        let run = run_adaptive(&self.cps, &mut player, episodes, seed.into(), &DdaConfig::default()).map_err(js_err)?;
        Ok(run.trace.to_csv())
    }
}
