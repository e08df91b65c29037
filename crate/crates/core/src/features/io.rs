use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;

use super::{Branch, FeatureMatrix, Level};
use crate::error::{Error, Result};
use crate::table::{fmt_f64, Csv};

/// Reads a feature CSV (`sample_id,f0,...,f{d-1}`).
pub fn load_features(path: &Path, level: Level, branch: Branch) -> Result<FeatureMatrix> {
    let text = std::fs::read_to_string(path)?;
    parse_features(&text, level, branch)
}

/// Parses feature CSV text. Errors carry the 1-based line number.
pub fn parse_features(text: &str, level: Level, branch: Branch) -> Result<FeatureMatrix> {
    let mut lines = text.split('\n').enumerate().filter(|(_, l)| !l.trim_end_matches('\r').is_empty());
    let (_, header) = lines.next().ok_or(Error::TooFewSamples { got: 0, need: 2 })?;
    let header: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if header.first() != Some(&"sample_id") {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "header must start with sample_id".into(),
        });
    }
    let d = header.len() - 1;
    if d == 0 {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "header declares no feature columns".into(),
        });
    }
    for (j, name) in header[1..].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("column {} should be named f{j}, found {name:?}", j + 1),
            });
        }
    }

    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let fields: Vec<&str> = raw.trim_end_matches('\r').split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", d + 1, fields.len()),
            });
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty sample id".into(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        for (j, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("column f{j}: cannot parse {f:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: ids.len(), col: j });
            }
            data.push(v);
        }
        ids.push(id.to_string());
    }
    if ids.len() < 2 {
        return Err(Error::TooFewSamples { got: ids.len(), need: 2 });
    }
    let n = ids.len();
    FeatureMatrix::new(ids, DMatrix::from_row_slice(n, d, &data), level, branch)
}

pub fn write_features(m: &FeatureMatrix) -> String {
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..m.d()).map(|j| format!("f{j}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header_refs);
    for (i, id) in m.sample_ids().iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(m.values().row(i).iter().map(|&v| fmt_f64(v)));
        csv.row(row);
    }
    csv.into_string()
}
