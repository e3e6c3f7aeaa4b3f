//! Line-delimited record files: sampled datasets and labeled sets.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content::{ContentFeatures, SegmentGrid};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("ParseError: line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub id: u64,
    pub grid: SegmentGrid,
    pub features: ContentFeatures,
}

/// Sampled segments indexed by id. Ids are `0..len` in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<SegmentRecord>,
}

impl Dataset {
    pub fn new(records: Vec<SegmentRecord>) -> Self {
        Dataset { records }
    }

    pub fn records(&self) -> &[SegmentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&SegmentRecord> {
        // Fast path for the usual dense layout.
        match self.records.get(id as usize) {
            Some(r) if r.id == id => Some(r),
            _ => self.records.iter().find(|r| r.id == id),
        }
    }

    pub fn features(&self) -> Vec<ContentFeatures> {
        self.records.iter().map(|r| r.features).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), RecordError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, RecordError> {
        read_records(r).map(Dataset::new)
    }
}

pub(crate) fn read_records<T, R>(r: R) -> Result<Vec<T>, RecordError>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Accept,
    Reject,
}

impl Label {
    pub fn is_accept(self) -> bool {
        self == Label::Accept
    }

    pub fn from_accept(accept: bool) -> Self {
        if accept {
            Label::Accept
        } else {
            Label::Reject
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Accept => "accept",
            Label::Reject => "reject",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accept" => Ok(Label::Accept),
            "reject" => Ok(Label::Reject),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Human,
    Oracle,
}

/// Dataset record plus its annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledRecord {
    pub id: u64,
    pub grid: SegmentGrid,
    pub features: ContentFeatures,
    pub label: Label,
    pub source: LabelSource,
}

pub fn write_labeled<W: Write>(records: &[LabeledRecord], mut w: W) -> Result<(), RecordError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_labeled<R: BufRead>(r: R) -> Result<Vec<LabeledRecord>, RecordError> {
    read_records(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::content::extract_features;

    #[test]
    fn jsonl_round_trip_and_field_names() {
        let grid = SegmentGrid::flat(2);
        let features = extract_features(&grid);
        let d = Dataset::new(vec![SegmentRecord { id: 0, grid, features }]);
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert!(line.starts_with("{\"id\":0,\"grid\":[\"----------------\""));
        assert!(line.contains("\"max_gap_width\":0"));
        assert_eq!(line.matches('\n').count(), 1);
        assert_eq!(Dataset::read_jsonl(&buf[..]).unwrap(), d);
    }

    #[test]
    fn bad_record_reports_line() {
        let text = b"\n{\"id\":0}\n";
        match Dataset::read_jsonl(&text[..]) {
            Err(RecordError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_text() {
        assert_eq!("accept".parse::<Label>().unwrap(), Label::Accept);
        assert!("maybe".parse::<Label>().is_err());
        assert_eq!(serde_json::to_string(&Label::Reject).unwrap(), "\"reject\"");
    }
}
