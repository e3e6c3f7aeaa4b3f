//! Header sniffing and invariant re-derivation for every file the tool writes.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use cpforge::clustering::ClusterReport;
use cpforge::content::{difficulty_bin, extract_features, BIN_COUNT};
use cpforge::cp::{validate_cpset, CpSet};
use cpforge::dataset::{read_labeled, write_labeled};
use cpforge::dda::EpisodeTrace;
use cpforge::level::{validate_level, Level};
use cpforge::{Dataset, QualityModel};
use serde_json::Value;

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Dataset,
    Labels,
    Clusters,
    Model,
    CpSet,
    Level,
    Trace,
}

impl fmt::Display for FileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FileKind::Dataset => "dataset",
            FileKind::Labels => "labeled set",
            FileKind::Clusters => "cluster report",
            FileKind::Model => "model",
            FileKind::CpSet => "CP set",
            FileKind::Level => "level",
            FileKind::Trace => "trace",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub kind: FileKind,
    pub items: usize,
    pub problems: Vec<String>,
}

impl Report {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Decides the file kind from its first non-blank line.
pub fn sniff(text: &str) -> Option<FileKind> {
    let first = text.lines().find(|l| !l.trim().is_empty())?.trim();
    if first == "cpforge-model v1" {
        return Some(FileKind::Model);
    }
    if first.starts_with("# cpforge-level") {
        return Some(FileKind::Level);
    }
    if first.starts_with("episode,bin,") {
        return Some(FileKind::Trace);
    }
    let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(first) else {
        return None;
    };
    if obj.get("format").and_then(Value::as_str) == Some("cpforge-cpset") {
        Some(FileKind::CpSet)
    } else if obj.contains_key("medoid_ids") {
        Some(FileKind::Clusters)
    } else if obj.contains_key("label") {
        Some(FileKind::Labels)
    } else if obj.contains_key("grid") {
        Some(FileKind::Dataset)
    } else {
        None
    }
}

fn parse_err(path: &Path, msg: impl fmt::Display) -> AppError {
    AppError::Parse {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Reads `path`, sniffs its kind and lists every violated invariant.
/// `model` enables CP-membership and model-id checks for CP sets and levels.
pub fn validate_file(path: &Path, model: Option<&QualityModel>) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let kind = sniff(&text).ok_or_else(|| parse_err(path, "unrecognised file header"))?;
    let mut problems = Vec::new();
    let items = match kind {
        FileKind::Model => {
            let m = QualityModel::from_text(&text).map_err(|e| parse_err(path, e))?;
            if m.to_text() != text {
                problems.push("model text is not in canonical form".into());
            }
            if !m.weights.iter().chain([&m.bias]).all(|w| w.is_finite()) {
                problems.push("non-finite weight".into());
            }
            if m.standardization.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                problems.push("standard deviations must be positive".into());
            }
            1
        }
        FileKind::Level => {
            let level = Level::from_text(&text).map_err(|e| parse_err(path, e))?;
            problems.extend(validate_level(&level, model));
            if level.to_text() != text {
                problems.push("level text is not in canonical form".into());
            }
            level.segments.len()
        }
        FileKind::CpSet => {
            let set = CpSet::read(text.as_bytes()).map_err(|e| parse_err(path, e))?;
            problems.extend(validate_cpset(&set, model));
            let mut back = Vec::new();
            set.write(&mut back).map_err(|e| parse_err(path, e))?;
            if back != text.as_bytes() {
                problems.push("CP set does not re-serialise byte-identically".into());
            }
            set.len()
        }
        FileKind::Dataset => {
            let ds = Dataset::read_jsonl(text.as_bytes()).map_err(|e| parse_err(path, e))?;
            for (i, r) in ds.records().iter().enumerate() {
                if r.id != i as u64 {
                    problems.push(format!("record {i}: id {} out of sequence", r.id));
                }
                if extract_features(&r.grid) != r.features {
                    problems.push(format!("record {}: stored features differ from grid", r.id));
                }
            }
            let mut back = Vec::new();
            ds.write_jsonl(&mut back).map_err(|e| parse_err(path, e))?;
            if back != text.as_bytes() {
                problems.push("dataset does not re-serialise byte-identically".into());
            }
            ds.len()
        }
        FileKind::Labels => {
            let recs = read_labeled(text.as_bytes()).map_err(|e| parse_err(path, e))?;
            let mut seen = HashSet::new();
            for r in &recs {
                if !seen.insert(r.id) {
                    problems.push(format!("record {}: labeled twice", r.id));
                }
                if extract_features(&r.grid) != r.features {
                    problems.push(format!("record {}: stored features differ from grid", r.id));
                }
            }
            let mut back = Vec::new();
            write_labeled(&recs, &mut back).map_err(|e| parse_err(path, e))?;
            if back != text.as_bytes() {
                problems.push("labeled set does not re-serialise byte-identically".into());
            }
            recs.len()
        }
        FileKind::Clusters => {
            let rep: ClusterReport = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
            if rep.medoid_ids.len() != rep.k || rep.sizes.len() != rep.k {
                problems.push(format!(
                    "k = {} but {} medoids and {} sizes",
                    rep.k,
                    rep.medoid_ids.len(),
                    rep.sizes.len()
                ));
            }
            if rep.sizes.contains(&0) {
                problems.push("empty cluster".into());
            }
            if rep.medoid_ids.iter().collect::<HashSet<_>>().len() != rep.medoid_ids.len() {
                problems.push("medoid ids are not distinct".into());
            }
            if !(-1.0..=1.0).contains(&rep.silhouette) {
                problems.push(format!("silhouette {} outside [-1, 1]", rep.silhouette));
            }
            rep.k
        }
        FileKind::Trace => {
            let trace = EpisodeTrace::from_csv(&text).map_err(|e| parse_err(path, e))?;
            for (i, r) in trace.rows.iter().enumerate() {
                if r.episode != i {
                    problems.push(format!("row {i}: episode {} out of sequence", r.episode));
                }
                if r.bin >= BIN_COUNT || difficulty_bin(r.difficulty) != r.bin {
                    problems.push(format!("episode {}: difficulty {} not in bin {}", r.episode, r.difficulty, r.bin));
                }
                for (name, x) in [("perf", r.perf), ("reward", r.reward), ("epsilon", r.epsilon)] {
                    if !(0.0..=1.0).contains(&x) {
                        problems.push(format!("episode {}: {name} {x} outside [0, 1]", r.episode));
                    }
                }
            }
            for w in trace.rows.windows(2) {
                if w[0].bin.abs_diff(w[1].bin) > 1 {
                    problems.push(format!("episode {}: bin jumped {} -> {}", w[1].episode, w[0].bin, w[1].bin));
                }
            }
            trace.len()
        }
    };
    Ok(Report { kind, items, problems })
}
