// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("coverage line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("coverage line {line}: duplicate row for {id:?}")]
    Duplicate { line: usize, id: String },
    #[error("reading coverage: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoverageRow {
    instance_id: String,
    elements: Vec<String>,
}

/// Program elements (statements) covered by each test, keyed by instance id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageMatrix {
    rows: BTreeMap<String, BTreeSet<String>>,
}

impl CoverageMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<I, S>(&mut self, id: impl Into<String>, elements: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.rows
            .insert(id.into(), elements.into_iter().map(Into::into).collect());
    }

    pub fn row(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.rows.get(id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Reads `{"instance_id": ..., "elements": [...]}` lines.
pub fn parse_coverage<R: BufRead>(reader: R) -> Result<CoverageMatrix, CoverageError> {
    let mut m = CoverageMatrix::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: CoverageRow = serde_json::from_str(&line).map_err(|e| CoverageError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if m.rows.contains_key(&row.instance_id) {
            return Err(CoverageError::Duplicate {
                line: idx + 1,
                id: row.instance_id,
            });
        }
        m.insert(row.instance_id, row.elements);
    }
    Ok(m)
}

pub fn write_coverage<W: Write>(mut w: W, m: &CoverageMatrix) -> std::io::Result<()> {
    for (id, elems) in &m.rows {
        let row = CoverageRow {
            instance_id: id.clone(),
            elements: elems.iter().cloned().collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&row).expect("rows serialize"))?;
    }
    Ok(())
}
