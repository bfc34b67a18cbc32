// SPDX-License-Identifier: Apache-2.0

//! Test oracles and bug de-duplication.
//!
//! A record is judged by a fixed ladder: library-side failures invalidate
//! the test, unsupported-feature crashes are filtered, other crashes are
//! bugs, and surviving runs are compared by Chebyshev distance.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_UNSUPPORTED_PATTERNS: [&str; 2] = ["unsupported type", "unsupported operator"];

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("output tensor: {0}")]
    Tensor(String),
    #[error("execution record: {0}")]
    Record(String),
    #[error("conversion map: {0}")]
    ConvMap(#[from] serde_json::Error),
    #[error("reading: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense row-major numeric tensor, serialized as nested JSON arrays.
///
/// `null` elements stand for NaN, since JSON has no NaN literal.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NumericTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, OracleError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(OracleError::Tensor(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(NumericTensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        NumericTensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(x: f64) -> Self {
        NumericTensor {
            shape: vec![],
            data: vec![x],
        }
    }

    fn from_json(v: &serde_json::Value) -> Result<Self, String> {
        fn shape_of(v: &serde_json::Value, shape: &mut Vec<usize>) {
            if let serde_json::Value::Array(items) = v {
                shape.push(items.len());
                if let Some(first) = items.first() {
                    shape_of(first, shape);
                }
            }
        }
        fn fill(v: &serde_json::Value, shape: &[usize], out: &mut Vec<f64>) -> Result<(), String> {
            match (v, shape.split_first()) {
                (serde_json::Value::Array(items), Some((&n, rest))) => {
                    if items.len() != n {
                        return Err(format!("ragged array: expected {n} items, got {}", items.len()));
                    }
                    items.iter().try_for_each(|it| fill(it, rest, out))
                }
                (serde_json::Value::Number(x), None) => {
                    out.push(x.as_f64().ok_or("number out of range")?);
                    Ok(())
                }
                (serde_json::Value::Null, None) => {
                    out.push(f64::NAN);
                    Ok(())
                }
                (other, _) => Err(format!("unexpected element {other}")),
            }
        }
        let mut shape = Vec::new();
        shape_of(v, &mut shape);
        let mut data = Vec::new();
        fill(v, &shape, &mut data)?;
        Ok(NumericTensor { shape, data })
    }

    fn to_json(&self) -> serde_json::Value {
        fn build(shape: &[usize], data: &mut std::slice::Iter<'_, f64>) -> serde_json::Value {
            match shape.split_first() {
                None => {
                    let x = *data.next().expect("element count matches shape");
                    serde_json::Number::from_f64(x)
                        .map(serde_json::Value::Number)
                        .unwrap_or(serde_json::Value::Null)
                }
                Some((&n, rest)) => serde_json::Value::Array((0..n).map(|_| build(rest, data)).collect()),
            }
        }
        build(&self.shape, &mut self.data.iter())
    }
}

impl Serialize for NumericTensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NumericTensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(deserializer)?;
        NumericTensor::from_json(&v).map_err(serde::de::Error::custom)
    }
}

/// Maximum elementwise absolute difference.
///
/// Differing shapes yield `+inf`: a shape divergence is itself an
/// inconsistency. NaN equals NaN; NaN against a number is `+inf`.
pub fn chebyshev(a: &NumericTensor, b: &NumericTensor) -> f64 {
    if a.shape != b.shape {
        return f64::INFINITY;
    }
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| match (x.is_nan(), y.is_nan()) {
            (true, true) => 0.0,
            (false, false) => (x - y).abs(),
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// Largest per-output distance; a differing output count is `+inf`.
pub fn output_distance(reference: &[NumericTensor], compiled: &[NumericTensor]) -> f64 {
    if reference.len() != compiled.len() {
        return f64::INFINITY;
    }
    reference
        .iter()
        .zip(compiled)
        .map(|(a, b)| chebyshev(a, b))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LibraryRun {
    Ok,
    Crash,
    Nondeterministic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseOutcome {
    Ok,
    Crash,
    #[default]
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phases {
    pub library_run: LibraryRun,
    #[serde(default)]
    pub compile: PhaseOutcome,
    #[serde(default)]
    pub compiled_run: PhaseOutcome,
}

/// Result file written by an executor for one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionRecord {
    pub instance_id: String,
    pub phases: Phases,
    #[serde(default)]
    pub reference_output: Vec<NumericTensor>,
    #[serde(default)]
    pub compiled_output: Vec<NumericTensor>,
    #[serde(default)]
    pub stderr_excerpt: String,
    #[serde(default)]
    pub wall_time_s: f64,
}

impl ExecutionRecord {
    pub fn passing(id: impl Into<String>, outputs: Vec<NumericTensor>) -> Self {
        ExecutionRecord {
            instance_id: id.into(),
            phases: Phases {
                library_run: LibraryRun::Ok,
                compile: PhaseOutcome::Ok,
                compiled_run: PhaseOutcome::Ok,
            },
            reference_output: outputs.clone(),
            compiled_output: outputs,
            stderr_excerpt: String::new(),
            wall_time_s: 0.0,
        }
    }

    /// A compile crash with the given message; the library side ran fine.
    pub fn compile_crash(id: impl Into<String>, message: impl Into<String>) -> Self {
        ExecutionRecord {
            instance_id: id.into(),
            phases: Phases {
                library_run: LibraryRun::Ok,
                compile: PhaseOutcome::Crash,
                compiled_run: PhaseOutcome::Skipped,
            },
            reference_output: Vec::new(),
            compiled_output: Vec::new(),
            stderr_excerpt: message.into(),
            wall_time_s: 0.0,
        }
    }

    /// Checks that phases are consistent and outputs only follow ok phases.
    pub fn validate(&self) -> Result<(), OracleError> {
        let p = &self.phases;
        if p.compile != PhaseOutcome::Ok && p.compiled_run != PhaseOutcome::Skipped {
            return Err(OracleError::Record(format!(
                "{}: compiled_run recorded although compile did not succeed",
                self.instance_id
            )));
        }
        if p.library_run != LibraryRun::Ok && !self.reference_output.is_empty() {
            return Err(OracleError::Record(format!(
                "{}: reference_output present although library_run is not ok",
                self.instance_id
            )));
        }
        if p.compiled_run != PhaseOutcome::Ok && !self.compiled_output.is_empty() {
            return Err(OracleError::Record(format!(
                "{}: compiled_output present although compiled_run is not ok",
                self.instance_id
            )));
        }
        if !self.wall_time_s.is_finite() || self.wall_time_s < 0.0 {
            return Err(OracleError::Record(format!(
                "{}: wall_time_s must be a non-negative number",
                self.instance_id
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        let rec: ExecutionRecord = serde_json::from_str(text).map_err(|e| OracleError::Record(e.to_string()))?;
        rec.validate()?;
        Ok(rec)
    }
}

mod distance_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &f64, s: S) -> Result<S::Ok, S::Error> {
        if d.is_finite() {
            s.serialize_f64(*d)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Outcome of judging one execution record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    CrashBug {
        message: String,
    },
    /// `distance` is `null` on the wire when infinite (shape divergence).
    InconsistencyBug {
        #[serde(with = "distance_repr")]
        distance: f64,
    },
    FilteredUnsupported {
        message: String,
    },
    InvalidTest,
    Nondeterministic,
}

impl Verdict {
    /// The wire tag, e.g. `crash_bug`.
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::CrashBug { .. } => "crash_bug",
            Verdict::InconsistencyBug { .. } => "inconsistency_bug",
            Verdict::FilteredUnsupported { .. } => "filtered_unsupported",
            Verdict::InvalidTest => "invalid_test",
            Verdict::Nondeterministic => "nondeterministic",
        }
    }

    pub fn oracle_kind(&self) -> Option<OracleKind> {
        match self {
            Verdict::CrashBug { .. } => Some(OracleKind::Crash),
            Verdict::InconsistencyBug { .. } => Some(OracleKind::Inconsistency),
            _ => None,
        }
    }

    pub fn is_bug(&self) -> bool {
        self.oracle_kind().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Crash,
    Inconsistency,
}

impl OracleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OracleKind::Crash => "crash",
            OracleKind::Inconsistency => "inconsistency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    tolerance: f64,
    pub unsupported_patterns: Vec<String>,
    /// Operator signature to conversion function; unmapped operators are
    /// their own conversion function.
    pub conv_map: BTreeMap<String, String>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            tolerance: DEFAULT_TOLERANCE,
            unsupported_patterns: DEFAULT_UNSUPPORTED_PATTERNS.iter().map(|s| s.to_string()).collect(),
            conv_map: BTreeMap::new(),
        }
    }
}

impl OracleConfig {
    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self, OracleError> {
        if !(tolerance > 0.0 && tolerance.is_finite()) {
            return Err(OracleError::BadTolerance(tolerance));
        }
        self.tolerance = tolerance;
        Ok(self)
    }

    pub fn with_conv_map(mut self, conv_map: BTreeMap<String, String>) -> Self {
        self.conv_map = conv_map;
        self
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn conversion_function<'a>(&'a self, op: &'a str) -> &'a str {
        self.conv_map.get(op).map(String::as_str).unwrap_or(op)
    }

    pub fn is_unsupported(&self, message: &str) -> bool {
        let lower = message.to_lowercase();
        self.unsupported_patterns
            .iter()
            .any(|p| lower.contains(&p.to_lowercase()))
    }
}

/// Reads a conversion map: a JSON object of operator signature to function key.
pub fn load_conv_map<R: Read>(reader: R) -> Result<BTreeMap<String, String>, OracleError> {
    Ok(serde_json::from_reader(reader)?)
}

/// Judges one record.
///
/// A record whose compile succeeded but whose compiled model was never run
/// (a conversion-only executor) passes.
pub fn classify(record: &ExecutionRecord, cfg: &OracleConfig) -> Verdict {
    let p = &record.phases;
    match p.library_run {
        LibraryRun::Crash => return Verdict::InvalidTest,
        LibraryRun::Nondeterministic => return Verdict::Nondeterministic,
        LibraryRun::Ok => {}
    }
    let crashed =
        p.compile == PhaseOutcome::Crash || (p.compile == PhaseOutcome::Ok && p.compiled_run == PhaseOutcome::Crash);
    if crashed {
        let message = record.stderr_excerpt.clone();
        return if cfg.is_unsupported(&message) {
            Verdict::FilteredUnsupported { message }
        } else {
            Verdict::CrashBug { message }
        };
    }
    if p.compile != PhaseOutcome::Ok || p.compiled_run != PhaseOutcome::Ok {
        return Verdict::Pass;
    }
    let distance = output_distance(&record.reference_output, &record.compiled_output);
    if distance > cfg.tolerance {
        Verdict::InconsistencyBug { distance }
    } else {
        Verdict::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub instance_id: String,
    pub op_signature: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniqueBug {
    pub conversion_function: String,
    pub kind: OracleKind,
    /// Lexicographically smallest member id.
    pub representative: String,
    pub members: Vec<String>,
}

impl UniqueBug {
    pub fn key(&self) -> (String, OracleKind) {
        (self.conversion_function.clone(), self.kind)
    }
}

/// Collapses failures into one bug per (conversion function, oracle kind).
///
/// Non-bug verdicts are ignored. Output is sorted by key.
pub fn dedup(failures: &[Failure], cfg: &OracleConfig) -> Vec<UniqueBug> {
    let mut groups: BTreeMap<(String, OracleKind), Vec<String>> = BTreeMap::new();
    for f in failures {
        if let Some(kind) = f.verdict.oracle_kind() {
            let func = cfg.conversion_function(&f.op_signature).to_string();
            groups.entry((func, kind)).or_default().push(f.instance_id.clone());
        }
    }
    groups
        .into_iter()
        .map(|((conversion_function, kind), mut members)| {
            members.sort();
            members.dedup();
            UniqueBug {
                conversion_function,
                kind,
                representative: members[0].clone(),
                members,
            }
        })
        .collect()
}
