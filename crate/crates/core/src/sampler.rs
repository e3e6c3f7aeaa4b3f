//! Randomised constructive generator for raw (unfiltered) segments.

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content::{extract_features, SegmentGrid, Tile, HEIGHT, WIDTH};
use crate::dataset::{Dataset, SegmentRecord};
use crate::rng::{item_rng, Rng};

/// Chance that a placed enemy is dropped into the air instead of onto ground.
pub const FLOATING_ENEMY_PROB: f64 = 0.1;

const MIN_WALK_ELEV: usize = 1;
const MAX_WALK_ELEV: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerParams {
    /// Per-column chance of starting a gap run.
    pub gap_prob: f64,
    /// Longest gap run the generator emits.
    pub max_gap: usize,
    /// Mean enemies per segment.
    pub enemy_rate: f64,
    /// Mean coins per segment.
    pub coin_rate: f64,
    /// Per-column chance of a pipe.
    pub pipe_prob: f64,
    /// Chance of one floating platform run per segment.
    pub platform_prob: f64,
    /// Per-column chance of a +-1 step in the ground walk.
    pub elev_step_prob: f64,
    /// Starting ground height.
    pub base_elev: usize,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            gap_prob: 0.08,
            max_gap: 5,
            enemy_rate: 1.5,
            coin_rate: 2.0,
            pipe_prob: 0.04,
            platform_prob: 0.3,
            elev_step_prob: 0.25,
            base_elev: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("InvalidParams: {0}")]
    InvalidParams(String),
    #[error("EmptyDataset: count must be at least 1")]
    EmptyDataset,
}

impl SamplerParams {
    /// Every randomness source disabled: the output is flat ground at `base_elev`.
    pub fn deterministic_flat(base_elev: usize) -> Self {
        SamplerParams {
            gap_prob: 0.0,
            enemy_rate: 0.0,
            coin_rate: 0.0,
            pipe_prob: 0.0,
            platform_prob: 0.0,
            elev_step_prob: 0.0,
            base_elev,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let probs = [
            ("gap_prob", self.gap_prob),
            ("pipe_prob", self.pipe_prob),
            ("platform_prob", self.platform_prob),
            ("elev_step_prob", self.elev_step_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(SamplerError::InvalidParams(format!("{name}={p} outside [0,1]")));
            }
        }
        for (name, r) in [("enemy_rate", self.enemy_rate), ("coin_rate", self.coin_rate)] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(SamplerError::InvalidParams(format!("{name}={r} must be >= 0")));
            }
        }
        if !(1..=8).contains(&self.max_gap) {
            return Err(SamplerError::InvalidParams(format!(
                "max_gap={} outside [1,8]",
                self.max_gap
            )));
        }
        if !(1..=6).contains(&self.base_elev) {
            return Err(SamplerError::InvalidParams(format!(
                "base_elev={} outside [1,6]",
                self.base_elev
            )));
        }
        Ok(())
    }
}

fn poisson(rng: &mut Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map_or(0, |d| d.sample(rng) as usize)
}

/// Builds one segment: ground walk, gap runs, pipes, an optional platform,
/// then enemies and coins. The result is syntactically valid but may break
/// any quality rule.
pub fn sample_segment(p: &SamplerParams, rng: &mut Rng) -> SegmentGrid {
    let mut elev = [p.base_elev; WIDTH];
    for c in 1..WIDTH {
        let mut e = elev[c - 1];
        if rng.random_bool(p.elev_step_prob) {
            e = if rng.random_bool(0.5) { e + 1 } else { e - 1 };
            e = e.clamp(MIN_WALK_ELEV, MAX_WALK_ELEV);
        }
        elev[c] = e;
    }

    // Gap runs stay clear of both boundary columns.
    let mut gap = [false; WIDTH];
    let mut c = 1;
    while c < WIDTH - 1 {
        if rng.random_bool(p.gap_prob) {
            let len = rng.random_range(1..=p.max_gap);
            for g in gap.iter_mut().take(WIDTH - 1).skip(c).take(len) {
                *g = true;
            }
            // Leave at least one ground column so runs never merge.
            c += len + 1;
        } else {
            c += 1;
        }
    }

    let mut grid = SegmentGrid::empty();
    for c in 0..WIDTH {
        grid.fill_ground(c, if gap[c] { 0 } else { elev[c] });
    }
    // Row where an object resting on the surface of column c sits.
    let surface = |c: usize| HEIGHT - 1 - if gap[c] { p.base_elev } else { elev[c] };

    let mut last_pipe: Option<usize> = None;
    for c in 0..WIDTH {
        if gap[c] || !rng.random_bool(p.pipe_prob) {
            continue;
        }
        if last_pipe.is_some_and(|l| l + 1 == c) {
            continue;
        }
        let h = rng.random_range(2..=3);
        let s = surface(c);
        grid.set(s + 1 - h, c, Tile::PipeTop);
        for r in s + 2 - h..=s {
            grid.set(r, c, Tile::PipeBody);
        }
        last_pipe = Some(c);
    }

    if rng.random_bool(p.platform_prob) {
        let len = rng.random_range(2..=4);
        let start = rng.random_range(0..=WIDTH - len);
        let top = (start..start + len).map(surface).min().unwrap_or(HEIGHT - 1);
        let lift = rng.random_range(2..=3);
        if top >= lift {
            let row = top - lift;
            for c in start..start + len {
                if grid.get(row, c) == Tile::Air {
                    grid.set(row, c, Tile::Platform);
                }
            }
        }
    }

    for _ in 0..poisson(rng, p.enemy_rate) {
        if rng.random_bool(FLOATING_ENEMY_PROB) {
            let c = rng.random_range(0..WIDTH);
            let lift = rng.random_range(1..=3);
            let s = surface(c);
            if s >= lift {
                let r = s - lift;
                if grid.get(r, c) == Tile::Air && grid.get(r + 1, c) == Tile::Air {
                    grid.set(r, c, Tile::Enemy);
                }
            }
        } else {
            let free: Vec<usize> = (0..WIDTH)
                .filter(|&c| !gap[c] && grid.get(surface(c), c) == Tile::Air)
                .collect();
            if !free.is_empty() {
                let c = free[rng.random_range(0..free.len())];
                grid.set(surface(c), c, Tile::Enemy);
            }
        }
    }

    for _ in 0..poisson(rng, p.coin_rate) {
        let c = rng.random_range(0..WIDTH);
        let lift = rng.random_range(0..=3);
        let s = surface(c);
        if s >= lift && grid.get(s - lift, c) == Tile::Air {
            grid.set(s - lift, c, Tile::Coin);
        }
    }

    grid
}

/// Record `id` of the dataset described by `p`.
pub fn sample_record(p: &SamplerParams, id: u64) -> SegmentRecord {
    let mut rng = item_rng(p.seed, id);
    let grid = sample_segment(p, &mut rng);
    let features = extract_features(&grid);
    SegmentRecord { id, grid, features }
}

/// `count` records with ids `0..count`, each drawn from its own sub-seeded stream.
pub fn sample_dataset(count: usize, p: &SamplerParams) -> Result<Dataset, SamplerError> {
    p.validate()?;
    if count == 0 {
        return Err(SamplerError::EmptyDataset);
    }
    #[cfg(feature = "parallel")]
    let records = {
        use rayon::prelude::*;
        (0..count as u64)
            .into_par_iter()
            .map(|id| sample_record(p, id))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let records = (0..count as u64).map(|id| sample_record(p, id)).collect();
    Ok(Dataset::new(records))
}
