//! Real-time difficulty adjustment: a tabular Q-learning policy picks the
//! difficulty bin of the next CP from the player's recent performance.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content::BIN_COUNT;
use crate::cp::CpSet;
use crate::quality::sigmoid;
use crate::rng::{rng_from_seed, stream_rng, Rng};

/// Number of recent-performance buckets.
pub const PERF_BUCKETS: usize = 3;
/// Episodes averaged into the performance bucket.
pub const PERF_HISTORY: usize = 3;
pub const STATE_COUNT: usize = BIN_COUNT * PERF_BUCKETS;
pub const ACTION_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DdaError {
    #[error("BinEmpty: difficulty bin {0} has no CPs")]
    BinEmpty(usize),
    #[error("TraceTooShort: {len} rows, need {tail}")]
    TraceTooShort { len: usize, tail: usize },
    #[error("InvalidRequest: {0}")]
    InvalidRequest(String),
    #[error("NonFinite: Q-table left the reals at episode {0}")]
    NonFinite(usize),
    #[error("ParseError: line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Logistic-response player: each attempt at a segment of difficulty `d`
/// succeeds with probability `sigmoid(steepness * (skill - d))`.
#[derive(Debug, Clone)]
pub struct PlayerSim {
    pub skill: f64,
    pub steepness: f64,
    pub persistence: u32,
    rng: Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub success: bool,
    pub attempts: u32,
    /// `1 / attempts` on success, 0 on failure.
    pub perf: f64,
}

impl PlayerSim {
    pub const DEFAULT_STEEPNESS: f64 = 5.0;
    pub const DEFAULT_PERSISTENCE: u32 = 3;

    pub fn new(skill: f64, seed: u64) -> Self {
        PlayerSim {
            skill,
            steepness: Self::DEFAULT_STEEPNESS,
            persistence: Self::DEFAULT_PERSISTENCE,
            rng: stream_rng(seed, "player"),
        }
    }

    pub fn with_persistence(mut self, persistence: u32) -> Self {
        self.persistence = persistence.max(1);
        self
    }

    pub fn success_prob(&self, d: f64) -> f64 {
        sigmoid(self.steepness * (self.skill - d))
    }

    /// Up to `persistence` Bernoulli attempts at a segment of difficulty `d`.
    pub fn play(&mut self, d: f64) -> PerformanceRecord {
        let p = self.success_prob(d);
        for attempt in 1..=self.persistence {
            if self.rng.random_bool(p) {
                return PerformanceRecord {
                    success: true,
                    attempts: attempt,
                    perf: 1.0 / attempt as f64,
                };
            }
        }
        PerformanceRecord {
            success: false,
            attempts: self.persistence,
            perf: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdaConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    /// Target performance ("moderate challenge").
    pub tau: f64,
    pub start_bin: usize,
    /// Initial value of every Q entry. The default sits just above the best
    /// attainable discounted return, so untried actions look attractive.
    pub q_init: f64,
}

impl Default for DdaConfig {
    fn default() -> Self {
        DdaConfig {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 0.2,
            epsilon_decay: 0.995,
            epsilon_floor: 0.01,
            tau: 0.6,
            start_bin: 2,
            q_init: 5.0,
        }
    }
}

impl DdaConfig {
    /// Exploration rate used in episode `t` (0-based).
    pub fn epsilon(&self, t: usize) -> f64 {
        (self.epsilon_start * self.epsilon_decay.powi(t as i32)).max(self.epsilon_floor)
    }
}

/// `1 - |perf - tau| / max(tau, 1 - tau)`, peaking at `perf = tau`.
pub fn reward(perf: f64, tau: f64) -> f64 {
    1.0 - (perf - tau).abs() / tau.max(1.0 - tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Down,
    Stay,
    Up,
}

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [Action::Down, Action::Stay, Action::Up];

    pub fn apply(self, bin: usize) -> usize {
        match self {
            Action::Down => bin.saturating_sub(1),
            Action::Stay => bin,
            Action::Up => (bin + 1).min(BIN_COUNT - 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct State {
    pub bin: usize,
    pub bucket: usize,
}

impl State {
    pub fn index(self) -> usize {
        self.bin * PERF_BUCKETS + self.bucket
    }
}

/// `floor(mean * 3)` of the recent performances, clamped to the last bucket.
/// An empty history sits in the middle bucket.
pub fn perf_bucket(recent: &[f64]) -> usize {
    if recent.is_empty() {
        return PERF_BUCKETS / 2;
    }
    let mean = recent.iter().sum::<f64>() / recent.len() as f64;
    ((mean * PERF_BUCKETS as f64).floor().max(0.0) as usize).min(PERF_BUCKETS - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QPolicy {
    pub q: [[f64; ACTION_COUNT]; STATE_COUNT],
}

impl Default for QPolicy {
    fn default() -> Self {
        QPolicy {
            q: [[0.0; ACTION_COUNT]; STATE_COUNT],
        }
    }
}

impl QPolicy {
    pub fn filled(v: f64) -> Self {
        QPolicy {
            q: [[v; ACTION_COUNT]; STATE_COUNT],
        }
    }

    /// Greedy action; ties resolve in the order down, stay, up.
    pub fn greedy(&self, s: State) -> Action {
        let row = &self.q[s.index()];
        let mut best = 0;
        for a in 1..ACTION_COUNT {
            if row[a] > row[best] {
                best = a;
            }
        }
        Action::ALL[best]
    }

    /// Epsilon-greedy action selection.
    pub fn dda_step(&self, s: State, epsilon: f64, rng: &mut Rng) -> Action {
        if rng.random_bool(epsilon.clamp(0.0, 1.0)) {
            Action::ALL[rng.random_range(0..ACTION_COUNT)]
        } else {
            self.greedy(s)
        }
    }

    /// One-step Q-learning backup.
    pub fn update(&mut self, s: State, a: Action, r: f64, next: State, cfg: &DdaConfig) {
        let target = r + cfg.gamma * self.q[next.index()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let q = &mut self.q[s.index()][a as usize];
        *q += cfg.alpha * (target - *q);
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub bin: usize,
    pub difficulty: f64,
    pub perf: f64,
    pub reward: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
}

const TRACE_HEADER: &str = "episode,bin,difficulty,perf,reward,epsilon";

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn tail(&self, tail: usize) -> Result<&[TraceRow], DdaError> {
        if tail == 0 || self.rows.len() < tail {
            return Err(DdaError::TraceTooShort {
                len: self.rows.len(),
                tail,
            });
        }
        Ok(&self.rows[self.rows.len() - tail..])
    }

    pub fn tail_mean(&self, tail: usize, f: impl Fn(&TraceRow) -> f64) -> Result<f64, DdaError> {
        let rows = self.tail(tail)?;
        Ok(rows.iter().map(f).sum::<f64>() / tail as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.episode, r.bin, r.difficulty, r.perf, r.reward, r.epsilon
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, DdaError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(TRACE_HEADER) {
            return Err(DdaError::Parse {
                line: 1,
                msg: format!("expected header `{TRACE_HEADER}`"),
            });
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| DdaError::Parse {
                line: i + 2,
                msg: msg.to_string(),
            };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(bad("expected 6 columns"));
            }
            let f = |k: usize| cols[k].parse::<f64>().map_err(|_| bad("bad number"));
            let row = TraceRow {
                episode: cols[0].parse().map_err(|_| bad("bad episode"))?,
                bin: cols[1].parse().map_err(|_| bad("bad bin"))?,
                difficulty: f(2)?,
                perf: f(3)?,
                reward: f(4)?,
                epsilon: f(5)?,
            };
            if rows.last().is_some_and(|p: &TraceRow| p.episode >= row.episode) {
                return Err(bad("episodes out of order"));
            }
            rows.push(row);
        }
        Ok(EpisodeTrace { rows })
    }

    pub fn summary(&self, tail: usize) -> Result<TraceSummary, DdaError> {
        Ok(TraceSummary {
            episodes: self.rows.len(),
            tail,
            tail_mean_difficulty: self.tail_mean(tail, |r| r.difficulty)?,
            tail_mean_perf: self.tail_mean(tail, |r| r.perf)?,
            tail_mean_reward: self.tail_mean(tail, |r| r.reward)?,
            tail_mean_bin: self.tail_mean(tail, |r| r.bin as f64)?,
            final_epsilon: self.rows.last().map_or(0.0, |r| r.epsilon),
        })
    }
}

/// Tail statistics persisted next to a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub episodes: usize,
    pub tail: usize,
    pub tail_mean_difficulty: f64,
    pub tail_mean_perf: f64,
    pub tail_mean_reward: f64,
    pub tail_mean_bin: f64,
    pub final_epsilon: f64,
}

/// Mean served difficulty over the last `tail` episodes.
pub fn converged_difficulty(trace: &EpisodeTrace, tail: usize) -> Result<f64, DdaError> {
    trace.tail_mean(tail, |r| r.difficulty)
}

#[derive(Debug, Clone)]
pub struct AdaptiveRun {
    pub trace: EpisodeTrace,
    pub policy: QPolicy,
}

/// One segment per episode: serve a random CP from the current bin, observe
/// the player, back up the previous (state, action), then pick the next move.
pub fn run_adaptive(
    cps: &CpSet,
    player: &mut PlayerSim,
    episodes: usize,
    seed: u64,
    cfg: &DdaConfig,
) -> Result<AdaptiveRun, DdaError> {
    run_adaptive_with(cps, player, episodes, seed, cfg, |_, _| {})
}

/// As [`run_adaptive`], calling `before_episode(t, player)` first in each
/// episode (used to change the player mid-run).
pub fn run_adaptive_with(
    cps: &CpSet,
    player: &mut PlayerSim,
    episodes: usize,
    seed: u64,
    cfg: &DdaConfig,
    mut before_episode: impl FnMut(usize, &mut PlayerSim),
) -> Result<AdaptiveRun, DdaError> {
    if episodes == 0 {
        return Err(DdaError::InvalidRequest("episodes must be at least 1".into()));
    }
    if cfg.start_bin >= BIN_COUNT {
        return Err(DdaError::InvalidRequest(format!("start bin {}", cfg.start_bin)));
    }
    let bins = cps.bins();
    if let Some(empty) = bins.iter().position(Vec::is_empty) {
        return Err(DdaError::BinEmpty(empty));
    }
    let mut rng = rng_from_seed(seed);
    let mut policy = QPolicy::filled(cfg.q_init);
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(PERF_HISTORY);
    let mut bin = cfg.start_bin;
    let mut prev: Option<(State, Action)> = None;
    let mut rows = Vec::with_capacity(episodes);

    for t in 0..episodes {
        before_episode(t, player);
        let epsilon = cfg.epsilon(t);
        let pool = &bins[bin];
        let served = &cps.entries[pool[rng.random_range(0..pool.len())]];
        let outcome = player.play(served.d);
        let r = reward(outcome.perf, cfg.tau);

        if recent.len() == PERF_HISTORY {
            recent.pop_front();
        }
        recent.push_back(outcome.perf);
        let state = State {
            bin,
            bucket: perf_bucket(recent.make_contiguous()),
        };
        if let Some((s, a)) = prev {
            policy.update(s, a, r, state, cfg);
            if !policy.is_finite() {
                return Err(DdaError::NonFinite(t));
            }
        }
        let action = policy.dda_step(state, epsilon, &mut rng);
        rows.push(TraceRow {
            episode: t,
            bin,
            difficulty: served.d,
            perf: outcome.perf,
            reward: r,
            epsilon,
        });
        prev = Some((state, action));
        bin = action.apply(bin);
    }
    Ok(AdaptiveRun {
        trace: EpisodeTrace { rows },
        policy,
    })
}
