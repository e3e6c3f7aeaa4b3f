//! Constructive-primitive generation: rule filter first, learned classifier
//! second, survivors binned by difficulty.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content::{
    difficulty_bin, difficulty_score, extract_features, ContentFeatures, SegmentGrid, BIN_COUNT,
};
use crate::dataset::RecordError;
use crate::quality::QualityModel;
use crate::rng::{item_rng, splitmix64};
use crate::rules::rule_filter;
use crate::sampler::{sample_segment, SamplerError, SamplerParams};

/// Default acceptance threshold on the classifier probability.
pub const DEFAULT_THETA: f64 = 0.5;
/// Version tag written into CP-set headers; covers the rule set and bin layout.
pub const CP_FORMAT_VERSION: u32 = 1;
const CP_FORMAT: &str = "cpforge-cpset";
const CANDIDATE_STREAM: u64 = 0x4350_5f47_454e_0001;

/// `rule_filter(g).pass && predict(m, features(g)) >= theta`.
pub fn is_cp(m: &QualityModel, g: &SegmentGrid, theta: f64) -> bool {
    rule_filter(g).pass && m.predict(&extract_features(g)) >= theta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpEntry {
    pub grid: SegmentGrid,
    pub features: ContentFeatures,
    pub p: f64,
    pub d: f64,
    pub bin: usize,
}

impl CpEntry {
    fn new(grid: SegmentGrid, features: ContentFeatures, p: f64) -> Self {
        let d = difficulty_score(&features);
        CpEntry {
            grid,
            features,
            p,
            d,
            bin: difficulty_bin(d),
        }
    }
}

/// Counters from one generate-and-test run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GenerationStats {
    pub attempts: usize,
    pub rule_checks: usize,
    pub rule_passes: usize,
    pub classifier_evals: usize,
    pub duplicates: usize,
    pub kept: usize,
}

impl GenerationStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.kept as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpHeader {
    pub format: String,
    pub version: u32,
    pub model_id: String,
    pub theta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpSet {
    pub model_id: String,
    pub theta: f64,
    pub seed: u64,
    pub entries: Vec<CpEntry>,
    pub stats: GenerationStats,
}

#[derive(Debug, Error)]
pub enum CpError {
    #[error("YieldTooLow: found {found} of {target} CPs in {attempts} attempts")]
    YieldTooLow {
        found: usize,
        target: usize,
        attempts: usize,
        partial: Box<CpSet>,
    },
    #[error("InvalidRequest: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

impl CpSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices grouped by difficulty bin.
    pub fn bins(&self) -> [Vec<usize>; BIN_COUNT] {
        let mut bins: [Vec<usize>; BIN_COUNT] = Default::default();
        for (i, e) in self.entries.iter().enumerate() {
            bins[e.bin].push(i);
        }
        bins
    }

    pub fn header(&self) -> CpHeader {
        CpHeader {
            format: CP_FORMAT.to_string(),
            version: CP_FORMAT_VERSION,
            model_id: self.model_id.clone(),
            theta: self.theta,
            seed: self.seed,
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), RecordError> {
        serde_json::to_writer(&mut w, &self.header()).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, RecordError> {
        let mut lines = r.lines();
        let first = lines.next().ok_or(RecordError::Parse {
            line: 1,
            msg: "empty CP-set file".into(),
        })??;
        let header: CpHeader = serde_json::from_str(&first).map_err(|e| RecordError::Parse {
            line: 1,
            msg: e.to_string(),
        })?;
        if header.format != CP_FORMAT {
            return Err(RecordError::Parse {
                line: 1,
                msg: format!("not a CP set: format {:?}", header.format),
            });
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| RecordError::Parse {
                line: i + 2,
                msg: e.to_string(),
            })?);
        }
        Ok(CpSet {
            model_id: header.model_id,
            theta: header.theta,
            seed: header.seed,
            stats: GenerationStats {
                kept: entries.len(),
                ..Default::default()
            },
            entries,
        })
    }
}

/// Outcome of evaluating one candidate.
enum Candidate {
    RuleFail,
    Scored(SegmentGrid, ContentFeatures, f64),
}

fn evaluate(m: &QualityModel, p: &SamplerParams, stream: u64, i: u64) -> Candidate {
    let grid = sample_segment(p, &mut item_rng(stream, i));
    if !rule_filter(&grid).pass {
        return Candidate::RuleFail;
    }
    let features = extract_features(&grid);
    let prob = m.predict(&features);
    Candidate::Scored(grid, features, prob)
}

const CHUNK: usize = 256;

/// Generate-and-test: samples candidates until `target` distinct CPs are kept
/// or `max_attempts` candidates have been drawn. The classifier only sees
/// candidates that pass the rule filter.
pub fn generate_cps(
    m: &QualityModel,
    target: usize,
    p: &SamplerParams,
    theta: f64,
    max_attempts: usize,
) -> Result<CpSet, CpError> {
    p.validate()?;
    if target == 0 || max_attempts < target {
        return Err(CpError::InvalidRequest(format!(
            "need 1 <= target ({target}) <= max_attempts ({max_attempts})"
        )));
    }
    let stream = splitmix64(p.seed ^ CANDIDATE_STREAM);
    let mut set = CpSet {
        model_id: m.id(),
        theta,
        seed: p.seed,
        entries: Vec::new(),
        stats: GenerationStats::default(),
    };
    let mut seen: HashSet<SegmentGrid> = HashSet::new();
    let mut next = 0usize;
    'outer: while next < max_attempts {
        let end = (next + CHUNK).min(max_attempts);
        #[cfg(feature = "parallel")]
        let batch: Vec<Candidate> = {
            use rayon::prelude::*;
            (next..end)
                .into_par_iter()
                .map(|i| evaluate(m, p, stream, i as u64))
                .collect()
        };
        #[cfg(not(feature = "parallel"))]
        let batch: Vec<Candidate> = (next..end).map(|i| evaluate(m, p, stream, i as u64)).collect();
        next = end;

        for cand in batch {
            let s = &mut set.stats;
            s.attempts += 1;
            s.rule_checks += 1;
            if let Candidate::Scored(grid, features, prob) = cand {
                s.rule_passes += 1;
                s.classifier_evals += 1;
                if prob >= theta {
                    if seen.contains(&grid) {
                        s.duplicates += 1;
                    } else {
                        seen.insert(grid.clone());
                        set.entries.push(CpEntry::new(grid, features, prob));
                        s.kept += 1;
                        if s.kept == target {
                            break 'outer;
                        }
                    }
                }
            }
        }
    }
    if set.entries.len() < target {
        return Err(CpError::YieldTooLow {
            found: set.entries.len(),
            target,
            attempts: set.stats.attempts,
            partial: Box::new(set),
        });
    }
    Ok(set)
}

/// Problems found when re-deriving a CP set from its grids.
pub fn validate_cpset(set: &CpSet, model: Option<&QualityModel>) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    if let Some(m) = model {
        if m.id() != set.model_id {
            problems.push(format!(
                "header model_id {} does not match model {}",
                set.model_id,
                m.id()
            ));
        }
    }
    for (i, e) in set.entries.iter().enumerate() {
        let f = extract_features(&e.grid);
        if f != e.features {
            problems.push(format!("cp {i}: stored features differ from grid"));
        }
        let d = difficulty_score(&f);
        if (d - e.d).abs() > 1e-12 {
            problems.push(format!("cp {i}: difficulty {} but grid gives {d}", e.d));
        }
        if e.bin != difficulty_bin(d) {
            problems.push(format!("cp {i}: bin {} but difficulty {d} gives {}", e.bin, difficulty_bin(d)));
        }
        let verdict = rule_filter(&e.grid);
        for v in &verdict.violations {
            problems.push(format!("cp {i}: {v}"));
        }
        if e.p < set.theta {
            problems.push(format!("cp {i}: p {} below theta {}", e.p, set.theta));
        }
        if let Some(m) = model {
            let p = m.predict(&f);
            if p < set.theta {
                problems.push(format!("cp {i}: model gives p {p} below theta {}", set.theta));
            }
        }
        if !seen.insert(&e.grid) {
            problems.push(format!("cp {i}: duplicate grid"));
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quality::Hyper;

    #[test]
    fn rule_failure_dominates() {
        let mut g = SegmentGrid::flat(2);
        for c in 4..10 {
            g.fill_ground(c, 0);
        }
        // Zero model says 0.5; with theta 0 the classifier always agrees.
        let m = QualityModel::zero(Hyper::default());
        assert!(!is_cp(&m, &g, 0.0));
        assert!(is_cp(&m, &SegmentGrid::flat(2), 0.0));
    }

    #[test]
    fn theta_boundary_is_inclusive() {
        let m = QualityModel::zero(Hyper::default());
        assert!(is_cp(&m, &SegmentGrid::flat(2), 0.5));
        assert!(!is_cp(&m, &SegmentGrid::flat(2), 0.5 + 1e-12));
    }

    #[test]
    fn impossible_threshold_yields_nothing() {
        let m = QualityModel::zero(Hyper::default());
        match generate_cps(&m, 5, &SamplerParams::default(), 1.0 + f64::EPSILON, 300) {
            Err(CpError::YieldTooLow { found, partial, attempts, .. }) => {
                assert_eq!(found, 0);
                assert!(partial.is_empty());
                assert_eq!(attempts, 300);
                assert_eq!(partial.stats.classifier_evals, partial.stats.rule_passes);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kept_cps_reverify() {
        let m = QualityModel::zero(Hyper::default());
        let set = generate_cps(&m, 50, &SamplerParams { seed: 3, ..Default::default() }, 0.5, 2_000)
            .unwrap();
        assert_eq!(set.len(), 50);
        for e in &set.entries {
            assert!(is_cp(&m, &e.grid, set.theta));
        }
        assert!(validate_cpset(&set, Some(&m)).is_empty());
        let s = set.stats;
        assert_eq!(s.classifier_evals, s.rule_passes);
        assert!(s.rule_passes < s.rule_checks);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let m = QualityModel::zero(Hyper::default());
        let p = SamplerParams { seed: 9, ..Default::default() };
        let a = generate_cps(&m, 30, &p, 0.5, 1_000).unwrap();
        let b = generate_cps(&m, 30, &p, 0.5, 1_000).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write(&mut ba).unwrap();
        b.write(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let back = CpSet::read(&ba[..]).unwrap();
        assert_eq!(back.entries, a.entries);
        assert_eq!(back.header(), a.header());
    }

    #[test]
    fn low_p_is_flagged() {
        let m = QualityModel::zero(Hyper::default());
        let mut set = generate_cps(&m, 3, &SamplerParams::default(), 0.5, 500).unwrap();
        set.entries[1].p = 0.2;
        let problems = validate_cpset(&set, None);
        assert_eq!(problems.len(), 1);
        assert!(problems[0].contains("below theta"));
    }
}
