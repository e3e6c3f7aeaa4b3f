//! Online level assembly from constructive primitives.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::Rng as _;
use thiserror::Error;

use crate::content::{
    decode_segment, difficulty_score, encode_segment, extract_features, matches_control, Band,
    ControlParams, SegmentGrid, FEATURE_COUNT, FEATURE_NAMES, HEIGHT, WIDTH,
};
use crate::cp::{generate_cps, is_cp, CpEntry, CpError, CpSet};
use crate::quality::QualityModel;
use crate::rng::{splitmix64, stream_rng};
use crate::rules::rule_filter;
use crate::sampler::SamplerParams;

/// Largest elevation change allowed across a segment seam.
pub const MAX_SEAM_STEP: usize = 2;
/// Positions undone before the assembler gives up on the current prefix.
pub const MAX_BACKTRACK: usize = 3;
/// Total placement attempts per level.
pub const MAX_ASSEMBLY_ATTEMPTS: usize = 1_000;

const LEVEL_MAGIC: &str = "# cpforge-level v1";
const SEGMENT_MARK: &str = "=== segment";

/// `|elev_end(a) - elev_start(b)| <= 2`.
pub fn compatible(a: &SegmentGrid, b: &SegmentGrid) -> bool {
    a.elevation(WIDTH - 1).abs_diff(b.elevation(0)) <= MAX_SEAM_STEP
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelMeta {
    pub seed: u64,
    pub model_id: String,
    pub theta: f64,
    pub control: ControlParams,
    pub segment_difficulty: Vec<f64>,
    pub mean_features: [f64; FEATURE_COUNT],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub segments: Vec<SegmentGrid>,
    pub meta: LevelMeta,
}

#[derive(Debug, Error)]
pub enum LevelError {
    #[error("InsufficientCPs: no CP matches the control parameters")]
    InsufficientCps,
    #[error("AssemblyFailed: no compatible chain of {length} segments after {attempts} attempts")]
    AssemblyFailed { length: usize, attempts: usize },
    #[error("InvalidRequest: {0}")]
    InvalidRequest(String),
    #[error("ParseError: line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Cp(#[from] CpError),
}

/// Where candidate segments come from.
#[derive(Debug, Clone, Copy)]
pub enum CpSource<'a> {
    /// A prebuilt CP set; its model id and threshold are recorded in the level.
    Set(&'a CpSet),
    /// Generate-and-test on demand. The sampler's enemy rate is steered towards
    /// the middle of the enemy-density band when one is given.
    OnTheFly {
        model: &'a QualityModel,
        sampler: &'a SamplerParams,
        theta: f64,
        batch: usize,
    },
}

struct Pool {
    entries: Vec<CpEntry>,
    model_id: String,
    theta: f64,
    expansions: u64,
}

impl Pool {
    fn build(source: &CpSource<'_>, control: &ControlParams, seed: u64) -> Result<Self, LevelError> {
        match *source {
            CpSource::Set(set) => Ok(Pool {
                entries: set
                    .entries
                    .iter()
                    .filter(|e| matches_control(&e.features, control))
                    .cloned()
                    .collect(),
                model_id: set.model_id.clone(),
                theta: set.theta,
                expansions: 0,
            }),
            CpSource::OnTheFly { model, theta, .. } => {
                let mut pool = Pool {
                    entries: Vec::new(),
                    model_id: model.id(),
                    theta,
                    expansions: 0,
                };
                pool.expand(source, control, seed)?;
                Ok(pool)
            }
        }
    }

    /// Adds freshly generated CPs; returns false for a fixed set.
    fn expand(&mut self, source: &CpSource<'_>, control: &ControlParams, seed: u64) -> Result<bool, LevelError> {
        let CpSource::OnTheFly { model, sampler, theta, batch } = *source else {
            return Ok(false);
        };
        let mut params = sampler.clone();
        params.seed = splitmix64(seed ^ splitmix64(self.expansions + 1) ^ sampler.seed);
        if let Some(band) = control.enemy_density {
            params.enemy_rate = (band.lo + band.hi) / 2.0 * WIDTH as f64;
        }
        self.expansions += 1;
        let attempts = batch.saturating_mul(20).max(batch);
        let found = match generate_cps(model, batch, &params, theta, attempts) {
            Ok(set) => set,
            Err(CpError::YieldTooLow { partial, .. }) => *partial,
            Err(e) => return Err(e.into()),
        };
        let known: HashSet<SegmentGrid> = self.entries.iter().map(|e| e.grid.clone()).collect();
        self.entries.extend(
            found
                .entries
                .into_iter()
                .filter(|e| matches_control(&e.features, control) && !known.contains(&e.grid)),
        );
        Ok(true)
    }
}

/// Greedy left-to-right assembly with bounded backtracking.
pub fn generate_level(
    source: CpSource<'_>,
    length: usize,
    control: &ControlParams,
    seed: u64,
) -> Result<Level, LevelError> {
    if length == 0 {
        return Err(LevelError::InvalidRequest("length must be at least 1".into()));
    }
    let mut pool = Pool::build(&source, control, seed)?;
    if pool.entries.is_empty() {
        return Err(LevelError::InsufficientCps);
    }
    let mut rng = stream_rng(seed, "level-assembly");
    let mut chosen: Vec<usize> = Vec::with_capacity(length);
    // tried[i]: candidates already placed at position i under the current prefix.
    let mut tried: Vec<HashSet<usize>> = vec![HashSet::new()];
    let mut backtracks = 0;
    let mut frontier = 0;
    let mut attempts = 0;

    while chosen.len() < length {
        attempts += 1;
        if attempts > MAX_ASSEMBLY_ATTEMPTS {
            return Err(LevelError::AssemblyFailed { length, attempts: attempts - 1 });
        }
        let pos = chosen.len();
        let prev = chosen.last().map(|&i| &pool.entries[i].grid);
        let candidates: Vec<usize> = (0..pool.entries.len())
            .filter(|i| !tried[pos].contains(i))
            .filter(|&i| prev.is_none_or(|p| compatible(p, &pool.entries[i].grid)))
            .collect();
        if !candidates.is_empty() {
            let pick = candidates[rng.random_range(0..candidates.len())];
            tried[pos].insert(pick);
            chosen.push(pick);
            tried.truncate(pos + 1);
            tried.push(HashSet::new());
            if chosen.len() > frontier {
                frontier = chosen.len();
                backtracks = 0;
            }
            continue;
        }
        if pos > 0 && backtracks < MAX_BACKTRACK {
            chosen.pop();
            tried.truncate(pos);
            backtracks += 1;
            continue;
        }
        // Dead end: widen the pool if possible, otherwise restart from a fresh first segment.
        backtracks = 0;
        frontier = 0;
        if pool.expand(&source, control, seed)? {
            tried.iter_mut().for_each(HashSet::clear);
        } else {
            chosen.clear();
            tried = vec![HashSet::new()];
        }
    }

    let segments: Vec<SegmentGrid> = chosen.iter().map(|&i| pool.entries[i].grid.clone()).collect();
    let meta = LevelMeta {
        seed,
        model_id: pool.model_id,
        theta: pool.theta,
        control: *control,
        segment_difficulty: chosen.iter().map(|&i| pool.entries[i].d).collect(),
        mean_features: mean_features(&segments),
    };
    Ok(Level { segments, meta })
}

fn mean_features(segments: &[SegmentGrid]) -> [f64; FEATURE_COUNT] {
    let mut sum = [0.0; FEATURE_COUNT];
    for g in segments {
        for (s, v) in sum.iter_mut().zip(extract_features(g).to_vec()) {
            *s += v;
        }
    }
    let n = segments.len().max(1) as f64;
    sum.map(|s| s / n)
}

impl Level {
    pub fn mean_difficulty(&self) -> f64 {
        let d = &self.meta.segment_difficulty;
        d.iter().sum::<f64>() / d.len().max(1) as f64
    }

    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let band = |b: &Option<Band>| b.map_or_else(|| "-".to_string(), |b| b.to_string());
        let list = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "{LEVEL_MAGIC}");
        let _ = writeln!(s, "seed {}", m.seed);
        let _ = writeln!(s, "model_id {}", m.model_id);
        let _ = writeln!(s, "theta {}", m.theta);
        let _ = writeln!(s, "length {}", self.segments.len());
        let _ = writeln!(s, "enemy_density {}", band(&m.control.enemy_density));
        let _ = writeln!(s, "gap_frequency {}", band(&m.control.gap_frequency));
        let _ = writeln!(s, "difficulty {}", band(&m.control.difficulty));
        let _ = writeln!(s, "segment_difficulty {}", list(&m.segment_difficulty));
        let _ = writeln!(s, "mean_features {}", list(&m.mean_features));
        for (i, g) in self.segments.iter().enumerate() {
            let _ = writeln!(s, "{SEGMENT_MARK} {i}");
            s.push_str(&encode_segment(g));
        }
        s
    }

    /// Parses a level file. Segment content is not validated here; see [`validate_level`].
    pub fn from_text(text: &str) -> Result<Self, LevelError> {
        let lines: Vec<&str> = text.lines().collect();
        let err = |line: usize, msg: String| LevelError::Parse { line, msg };
        if lines.first().map(|l| l.trim()) != Some(LEVEL_MAGIC) {
            return Err(err(1, "missing level header".into()));
        }
        let mut header = std::collections::HashMap::new();
        let mut i = 1;
        while i < lines.len() && !lines[i].starts_with(SEGMENT_MARK) {
            let line = lines[i];
            if !line.trim().is_empty() {
                let (k, v) = line.split_once(' ').unwrap_or((line, ""));
                header.insert(k, (i + 1, v.trim()));
            }
            i += 1;
        }
        let field = |k: &str| header.get(k).copied().ok_or_else(|| err(1, format!("header missing `{k}`")));
        let parse_u64 = |k: &str| -> Result<u64, LevelError> {
            let (ln, v) = field(k)?;
            v.parse().map_err(|_| err(ln, format!("{k}: bad integer {v:?}")))
        };
        let parse_f64 = |k: &str| -> Result<f64, LevelError> {
            let (ln, v) = field(k)?;
            v.parse().map_err(|_| err(ln, format!("{k}: bad number {v:?}")))
        };
        let parse_band = |k: &str| -> Result<Option<Band>, LevelError> {
            let (ln, v) = field(k)?;
            if v == "-" {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|e| err(ln, format!("{k}: {e}")))
            }
        };
        let parse_list = |k: &str| -> Result<Vec<f64>, LevelError> {
            let (ln, v) = field(k)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|x| x.parse().map_err(|_| err(ln, format!("{k}: bad number {x:?}"))))
                .collect()
        };

        let seed = parse_u64("seed")?;
        let model_id = field("model_id")?.1.to_string();
        let theta = parse_f64("theta")?;
        let length = parse_u64("length")? as usize;
        let control = ControlParams {
            enemy_density: parse_band("enemy_density")?,
            gap_frequency: parse_band("gap_frequency")?,
            difficulty: parse_band("difficulty")?,
        };
        let segment_difficulty = parse_list("segment_difficulty")?;
        let mf = parse_list("mean_features")?;
        let mean_features: [f64; FEATURE_COUNT] = mf.try_into().map_err(|v: Vec<f64>| {
            err(
                field("mean_features").map_or(1, |f| f.0),
                format!("mean_features: expected {} values ({}), got {}", FEATURE_COUNT, FEATURE_NAMES.join(","), v.len()),
            )
        })?;

        let mut segments = Vec::new();
        while i < lines.len() {
            let mark = lines[i];
            let expected = format!("{SEGMENT_MARK} {}", segments.len());
            if mark.trim() != expected {
                return Err(err(i + 1, format!("expected `{expected}`, found {mark:?}")));
            }
            let block = lines.get(i + 1..i + 1 + HEIGHT).ok_or_else(|| err(i + 1, "truncated segment".into()))?;
            let grid = decode_segment(&block.join("\n")).map_err(|e| err(i + 2, e.to_string()))?;
            segments.push(grid);
            i += 1 + HEIGHT;
        }
        if segments.len() != length {
            return Err(err(1, format!("length {length} but {} segments", segments.len())));
        }
        if segment_difficulty.len() != length {
            return Err(err(1, format!("segment_difficulty has {} entries for {length} segments", segment_difficulty.len())));
        }
        Ok(Level {
            segments,
            meta: LevelMeta {
                seed,
                model_id,
                theta,
                control,
                segment_difficulty,
                mean_features,
            },
        })
    }
}

/// Re-derives every level invariant from the grids: rule verdicts, CP
/// membership (when a model is supplied), seam compatibility, control bands
/// and recorded difficulties.
pub fn validate_level(level: &Level, model: Option<&QualityModel>) -> Vec<String> {
    let mut problems = Vec::new();
    let m = &level.meta;
    if let Some(model) = model {
        if model.id() != m.model_id {
            problems.push(format!("model_id {} does not match model {}", m.model_id, model.id()));
        }
    }
    for (i, g) in level.segments.iter().enumerate() {
        for v in rule_filter(g).violations {
            problems.push(format!("segment {i}: {v}"));
        }
        let f = extract_features(g);
        if let Some(model) = model {
            if !is_cp(model, g, m.theta) {
                problems.push(format!("segment {i}: not a CP under theta {}", m.theta));
            }
        }
        if !matches_control(&f, &m.control) {
            problems.push(format!("segment {i}: outside control bands"));
        }
        let d = difficulty_score(&f);
        if let Some(&rec) = m.segment_difficulty.get(i) {
            if (rec - d).abs() > 1e-12 {
                problems.push(format!("segment {i}: recorded difficulty {rec} but grid gives {d}"));
            }
        }
    }
    for (i, pair) in level.segments.windows(2).enumerate() {
        if !compatible(&pair[0], &pair[1]) {
            problems.push(format!(
                "seam {i}-{}: elevation {} -> {} exceeds {MAX_SEAM_STEP}",
                i + 1,
                pair[0].elevation(WIDTH - 1),
                pair[1].elevation(0)
            ));
        }
    }
    let mf = mean_features(&level.segments);
    if mf.iter().zip(&m.mean_features).any(|(a, b)| (a - b).abs() > 1e-9) {
        problems.push("mean_features do not match segments".into());
    }
    problems
}
