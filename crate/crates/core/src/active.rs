//! Oracle annotator and the pool-based active-learning session.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content::{extract_features, ContentFeatures, SegmentGrid};
use crate::dataset::{Dataset, Label, LabelSource, LabeledRecord};
use crate::quality::{train, Hyper, QualityModel};
use crate::rng::{stream_rng, Rng};
use crate::rules::{self, MAX_GAP_WIDTH};

/// Version of the golden labelling rules; bump when any threshold changes.
pub const ORACLE_RULES_VERSION: u32 = 1;
pub const ORACLE_DENSITY_MIN: f64 = 0.1;
pub const ORACLE_DENSITY_MAX: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OracleReason {
    Unplayable,
    FloatingEnemy,
    PipeIntegrity,
    Density,
    MaxGap,
    BoundaryGround,
}

impl fmt::Display for OracleReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OracleReason::Unplayable => "UNPLAYABLE",
            OracleReason::FloatingEnemy => "FLOATING_ENEMY",
            OracleReason::PipeIntegrity => "PIPE_INTEGRITY",
            OracleReason::Density => "DENSITY",
            OracleReason::MaxGap => "MAX_GAP",
            OracleReason::BoundaryGround => "BOUNDARY_GROUND",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleVerdict {
    pub label: Label,
    pub reasons: Vec<OracleReason>,
}

/// Golden labelling rules standing in for a developer at desk scale.
pub fn oracle_label(g: &SegmentGrid) -> OracleVerdict {
    let f = extract_features(g);
    let checks = [
        (OracleReason::Unplayable, rules::is_traversable(g)),
        (OracleReason::FloatingEnemy, rules::enemies_supported(g)),
        (OracleReason::PipeIntegrity, rules::pipes_intact(g)),
        (
            OracleReason::Density,
            (ORACLE_DENSITY_MIN..=ORACLE_DENSITY_MAX).contains(&f.density),
        ),
        (OracleReason::MaxGap, f.max_gap_width <= MAX_GAP_WIDTH),
        (OracleReason::BoundaryGround, rules::boundary_ground(g)),
    ];
    let reasons: Vec<OracleReason> = checks.iter().filter(|(_, ok)| !ok).map(|(r, _)| *r).collect();
    OracleVerdict {
        label: Label::from_accept(reasons.is_empty()),
        reasons,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("BudgetExhausted: all {0} queries used")]
    BudgetExhausted(usize),
    #[error("PoolEmpty: no unlabeled segments left")]
    PoolEmpty,
    #[error("UnknownId: segment {0} is not in the unlabeled pool")]
    UnknownId(u64),
    #[error("AlreadyLabeled: segment {0}")]
    AlreadyLabeled(u64),
    #[error("BudgetTooSmall: budget {budget} cannot cover {medoids} medoids")]
    BudgetTooSmall { budget: usize, medoids: usize },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub budget: usize,
    pub holdout_frac: f64,
    pub seed: u64,
    /// Reject budgets smaller than the number of medoids.
    pub strict: bool,
    pub hyper: Hyper,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            budget: 200,
            holdout_frac: 0.2,
            seed: 0,
            strict: false,
            hyper: Hyper::default(),
        }
    }
}

/// Point-in-time view of a session's progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub queries_made: usize,
    pub budget: usize,
    pub labeled: usize,
    pub pool: usize,
    pub holdout_accuracy: f64,
}

/// Single-writer annotation state machine.
///
/// Cluster medoids are queried first and count against the budget; after
/// that every query is the pool segment with the highest model uncertainty.
/// The model is retrained from zero weights after every label.
#[derive(Debug, Clone)]
pub struct AlSession {
    dataset: Arc<Dataset>,
    medoids: Vec<u64>,
    labels: Vec<(u64, Label, LabelSource)>,
    labeled_index: HashMap<u64, usize>,
    pool: BTreeSet<u64>,
    holdout: Vec<u64>,
    holdout_labels: Vec<Label>,
    model: QualityModel,
    budget: usize,
    queries_made: usize,
    holdout_accuracy: f64,
    seed: u64,
    hyper: Hyper,
}

impl AlSession {
    pub fn new(
        dataset: Arc<Dataset>,
        medoid_ids: &[u64],
        cfg: &SessionConfig,
    ) -> Result<Self, SessionError> {
        if !(0.0..1.0).contains(&cfg.holdout_frac) {
            return Err(SessionError::InvalidConfig(format!(
                "holdout_frac {} outside [0,1)",
                cfg.holdout_frac
            )));
        }
        let mut medoids = Vec::with_capacity(medoid_ids.len());
        for &id in medoid_ids {
            if dataset.get(id).is_none() {
                return Err(SessionError::UnknownId(id));
            }
            if !medoids.contains(&id) {
                medoids.push(id);
            }
        }
        if cfg.strict && cfg.budget < medoids.len() {
            return Err(SessionError::BudgetTooSmall {
                budget: cfg.budget,
                medoids: medoids.len(),
            });
        }

        let n = dataset.len();
        let holdout_size = (cfg.holdout_frac * n as f64).round() as usize;
        let mut candidates: Vec<u64> = dataset
            .records()
            .iter()
            .map(|r| r.id)
            .filter(|id| !medoids.contains(id))
            .collect();
        let holdout_size = holdout_size.min(candidates.len());
        let mut rng = stream_rng(cfg.seed, "holdout");
        candidates.partial_shuffle(&mut rng, holdout_size);
        let mut holdout: Vec<u64> = candidates[..holdout_size].to_vec();
        holdout.sort_unstable();

        let held: BTreeSet<u64> = holdout.iter().copied().collect();
        let pool: BTreeSet<u64> = dataset
            .records()
            .iter()
            .map(|r| r.id)
            .filter(|id| !held.contains(id))
            .collect();
        let holdout_labels = holdout
            .iter()
            .map(|&id| oracle_label(&dataset.get(id).expect("holdout id").grid).label)
            .collect();

        let mut s = AlSession {
            dataset,
            medoids,
            labels: Vec::new(),
            labeled_index: HashMap::new(),
            pool,
            holdout,
            holdout_labels,
            model: QualityModel::zero(cfg.hyper),
            budget: cfg.budget,
            queries_made: 0,
            holdout_accuracy: 0.0,
            seed: cfg.seed,
            hyper: cfg.hyper,
        };
        s.holdout_accuracy = s.evaluate_holdout();
        Ok(s)
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn model(&self) -> &QualityModel {
        &self.model
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn queries_made(&self) -> usize {
        self.queries_made
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn medoids(&self) -> &[u64] {
        &self.medoids
    }

    pub fn holdout(&self) -> &[u64] {
        &self.holdout
    }

    pub fn pool(&self) -> &BTreeSet<u64> {
        &self.pool
    }

    pub fn labels(&self) -> &[(u64, Label, LabelSource)] {
        &self.labels
    }

    pub fn is_labeled(&self, id: u64) -> bool {
        self.labeled_index.contains_key(&id)
    }

    pub fn holdout_accuracy(&self) -> f64 {
        self.holdout_accuracy
    }

    pub fn metrics(&self) -> SessionMetrics {
        SessionMetrics {
            queries_made: self.queries_made,
            budget: self.budget,
            labeled: self.labels.len(),
            pool: self.pool.len(),
            holdout_accuracy: self.holdout_accuracy,
        }
    }

    /// First medoid still waiting for a label.
    pub fn pending_medoid(&self) -> Option<u64> {
        self.medoids.iter().copied().find(|id| self.pool.contains(id))
    }

    fn check_can_query(&self) -> Result<(), SessionError> {
        if self.queries_made >= self.budget {
            return Err(SessionError::BudgetExhausted(self.budget));
        }
        if self.pool.is_empty() {
            return Err(SessionError::PoolEmpty);
        }
        Ok(())
    }

    /// Next segment to annotate. Does not change the session.
    pub fn next_query(&self) -> Result<u64, SessionError> {
        self.check_can_query()?;
        if let Some(id) = self.pending_medoid() {
            return Ok(id);
        }
        let mut best = None;
        let mut best_u = f64::NEG_INFINITY;
        for &id in &self.pool {
            let u = self.model.uncertainty(&self.features(id));
            if u > best_u {
                best_u = u;
                best = Some(id);
            }
        }
        best.ok_or(SessionError::PoolEmpty)
    }

    /// Medoids first, then a uniformly random pool member.
    pub fn next_random_query(&self, rng: &mut Rng) -> Result<u64, SessionError> {
        self.check_can_query()?;
        if let Some(id) = self.pending_medoid() {
            return Ok(id);
        }
        let i = rng.random_range(0..self.pool.len());
        self.pool.iter().nth(i).copied().ok_or(SessionError::PoolEmpty)
    }

    fn features(&self, id: u64) -> ContentFeatures {
        self.dataset.get(id).expect("id from dataset").features
    }

    pub fn submit_label(
        &mut self,
        id: u64,
        label: Label,
        source: LabelSource,
    ) -> Result<SessionMetrics, SessionError> {
        if self.is_labeled(id) {
            return Err(SessionError::AlreadyLabeled(id));
        }
        if !self.pool.contains(&id) {
            return Err(SessionError::UnknownId(id));
        }
        if self.queries_made >= self.budget {
            return Err(SessionError::BudgetExhausted(self.budget));
        }
        self.pool.remove(&id);
        self.labeled_index.insert(id, self.labels.len());
        self.labels.push((id, label, source));
        self.queries_made += 1;
        self.retrain();
        Ok(self.metrics())
    }

    fn retrain(&mut self) {
        let training: Vec<(ContentFeatures, Label)> = self
            .labels
            .iter()
            .map(|&(id, label, _)| (self.features(id), label))
            .collect();
        self.model = train(&training, self.hyper).unwrap_or_else(|_| QualityModel::zero(self.hyper));
        self.holdout_accuracy = self.evaluate_holdout();
    }

    /// Fraction of holdout segments where `p >= 0.5` agrees with the oracle.
    fn evaluate_holdout(&self) -> f64 {
        if self.holdout.is_empty() {
            return 0.0;
        }
        let correct = self
            .holdout
            .iter()
            .zip(&self.holdout_labels)
            .filter(|(&id, l)| (self.model.predict(&self.features(id)) >= 0.5) == l.is_accept())
            .count();
        correct as f64 / self.holdout.len() as f64
    }

    pub fn labeled_records(&self) -> Vec<LabeledRecord> {
        self.labels
            .iter()
            .map(|&(id, label, source)| {
                let r = self.dataset.get(id).expect("labeled id");
                LabeledRecord {
                    id,
                    grid: r.grid.clone(),
                    features: r.features,
                    label,
                    source,
                }
            })
            .collect()
    }

    fn seeding_done(&self) -> bool {
        self.pending_medoid().is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub queries: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryStrategy {
    Uncertainty,
    /// Uniform pool sampling after the medoids, seeded separately.
    Random { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct OracleRun {
    pub model: QualityModel,
    pub curve: Vec<CurvePoint>,
    pub session: AlSession,
}

/// Runs the query/label loop to the budget with the oracle as annotator.
///
/// The curve gets one point when the medoid seeding finishes and one after
/// every later query.
pub fn run_with_oracle(
    dataset: Arc<Dataset>,
    medoid_ids: &[u64],
    cfg: &SessionConfig,
    strategy: QueryStrategy,
) -> Result<OracleRun, SessionError> {
    let mut session = AlSession::new(dataset, medoid_ids, cfg)?;
    let mut rng = match strategy {
        QueryStrategy::Random { seed } => Some(stream_rng(seed, "random-query")),
        QueryStrategy::Uncertainty => None,
    };
    let mut curve = Vec::new();
    loop {
        let next = match rng.as_mut() {
            Some(r) => session.next_random_query(r),
            None => session.next_query(),
        };
        let id = match next {
            Ok(id) => id,
            Err(SessionError::BudgetExhausted(_)) | Err(SessionError::PoolEmpty) => break,
            Err(e) => return Err(e),
        };
        let label = oracle_label(&session.dataset.get(id).expect("query id").grid).label;
        session.submit_label(id, label, LabelSource::Oracle)?;
        if session.seeding_done() {
            curve.push(CurvePoint {
                queries: session.queries_made,
                accuracy: session.holdout_accuracy,
            });
        }
    }
    if curve.is_empty() {
        curve.push(CurvePoint {
            queries: session.queries_made,
            accuracy: session.holdout_accuracy,
        });
    }
    Ok(OracleRun {
        model: session.model.clone(),
        curve,
        session,
    })
}

/// Replays a fixed `(id, label)` sequence through a fresh session.
pub fn replay_labels(
    dataset: Arc<Dataset>,
    medoid_ids: &[u64],
    cfg: &SessionConfig,
    labels: &[(u64, Label)],
) -> Result<AlSession, SessionError> {
    let mut s = AlSession::new(dataset, medoid_ids, cfg)?;
    for &(id, label) in labels {
        s.submit_label(id, label, LabelSource::Oracle)?;
    }
    Ok(s)
}

/// Learning-curve rows as CSV with a `queries,accuracy` header.
pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("queries,accuracy\n");
    for p in curve {
        s.push_str(&format!("{},{}\n", p.queries, p.accuracy));
    }
    s
}
