// SPDX-License-Identifier: Apache-2.0

//! Operator-instance data model and the JSON-lines trace format.
//!
//! Each trace line is one [`OperatorInstance`]: a recorded call of a DL
//! library operator together with the parameter values that were actually
//! passed. Lines from human-written tests and from tool-generated tests use
//! the same schema, so a corpus may freely mix sources.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;

use indexmap::IndexMap;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed JSON: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: duplicate instance_id {id:?} (first seen on line {first_line})")]
    DuplicateId { line: usize, id: String, first_line: usize },
    #[error("line {line}: invalid instance {id:?}: {message}")]
    Invalid { line: usize, id: String, message: String },
    #[error("reading trace: {0}")]
    Io(#[from] std::io::Error),
}

impl TraceError {
    pub fn line(&self) -> Option<usize> {
        match self {
            TraceError::Malformed { line, .. }
            | TraceError::Schema { line, .. }
            | TraceError::DuplicateId { line, .. }
            | TraceError::Invalid { line, .. } => Some(*line),
            TraceError::Io(_) => None,
        }
    }
}

/// Source library of a recorded operator call.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Library {
    PyTorch,
    Keras,
    Onnx,
    Other(String),
}

impl Library {
    pub fn as_str(&self) -> &str {
        match self {
            Library::PyTorch => "pytorch",
            Library::Keras => "keras",
            Library::Onnx => "onnx",
            Library::Other(s) => s,
        }
    }
}

impl From<&str> for Library {
    fn from(s: &str) -> Self {
        match s {
            "pytorch" => Library::PyTorch,
            "keras" => Library::Keras,
            "onnx" => Library::Onnx,
            other => Library::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Library {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Library {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Library {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Library::from(s.as_str()))
    }
}

/// Where an instance was migrated from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Human,
    DocTer,
    DeepRel,
    Other(String),
}

impl Source {
    pub fn as_str(&self) -> &str {
        match self {
            Source::Human => "human",
            Source::DocTer => "docter",
            Source::DeepRel => "deeprel",
            Source::Other(s) => s,
        }
    }
}

impl From<&str> for Source {
    fn from(s: &str) -> Self {
        match s {
            "human" => Source::Human,
            "docter" => Source::DocTer,
            "deeprel" => Source::DeepRel,
            other => Source::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Source {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Source::from(s.as_str()))
    }
}

/// Tensor attributes recorded for an operator parameter or model input.
///
/// A dimension of `-1` marks a dynamic size.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub dtype: String,
    pub shape: Vec<i64>,
}

impl TensorSpec {
    pub fn new(dtype: impl Into<String>, shape: Vec<i64>) -> Self {
        TensorSpec {
            dtype: dtype.into(),
            shape,
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn check(&self) -> Result<(), String> {
        if let Some(d) = self.shape.iter().find(|&&d| d < -1) {
            return Err(format!("tensor dimension {d} is below -1"));
        }
        Ok(())
    }
}

/// A single recorded parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Floating(f64),
    Text(String),
    IntList(Vec<i64>),
    Tensor(TensorSpec),
    None,
}

/// Wire shape of [`ParamValue`]: a one-key object naming the variant.
#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum WireParam {
    Bool(bool),
    Int(i64),
    Floating(f64),
    Text(String),
    IntList(Vec<i64>),
    Tensor(TensorSpec),
    None(()),
}

impl Serialize for ParamValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let wire = match self {
            ParamValue::Bool(b) => WireParam::Bool(*b),
            ParamValue::Int(i) => WireParam::Int(*i),
            ParamValue::Floating(x) => WireParam::Floating(*x),
            ParamValue::Text(s) => WireParam::Text(s.clone()),
            ParamValue::IntList(v) => WireParam::IntList(v.clone()),
            ParamValue::Tensor(t) => WireParam::Tensor(t.clone()),
            ParamValue::None => WireParam::None(()),
        };
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParamValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        Ok(match WireParam::deserialize(deserializer)? {
            WireParam::Bool(b) => ParamValue::Bool(b),
            WireParam::Int(i) => ParamValue::Int(i),
            WireParam::Floating(x) => {
                if !x.is_finite() {
                    return Err(D::Error::custom(format!("non-finite floating value {x}")));
                }
                ParamValue::Floating(x)
            }
            WireParam::Text(s) => ParamValue::Text(s),
            WireParam::IntList(v) => ParamValue::IntList(v),
            WireParam::Tensor(t) => {
                t.check().map_err(D::Error::custom)?;
                ParamValue::Tensor(t)
            }
            WireParam::None(()) => ParamValue::None,
        })
    }
}

/// Parameter map that keeps recording order and rejects repeated names.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Params(IndexMap<String, ParamValue>);

impl Params {
    pub fn new() -> Self {
        Params(IndexMap::new())
    }

    /// Inserts a parameter, returning `false` if the name was already present.
    pub fn insert(&mut self, name: impl Into<String>, value: ParamValue) -> bool {
        match self.0.entry(name.into()) {
            indexmap::map::Entry::Occupied(_) => false,
            indexmap::map::Entry::Vacant(v) => {
                v.insert(value);
                true
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamValue)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<K: Into<String>> FromIterator<(K, ParamValue)> for Params {
    fn from_iter<I: IntoIterator<Item = (K, ParamValue)>>(iter: I) -> Self {
        let mut p = Params::new();
        for (k, v) in iter {
            p.insert(k, v);
        }
        p
    }
}

impl<'de> Deserialize<'de> for Params {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ParamsVisitor;

        impl<'de> Visitor<'de> for ParamsVisitor {
            type Value = Params;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping parameter names to values")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Params, A::Error> {
                let mut params = Params::new();
                while let Some((name, value)) = map.next_entry::<String, ParamValue>()? {
                    if params.0.contains_key(&name) {
                        return Err(serde::de::Error::custom(format!("duplicate parameter name {name:?}")));
                    }
                    params.0.insert(name, value);
                }
                Ok(params)
            }
        }

        deserializer.deserialize_map(ParamsVisitor)
    }
}

/// One recorded usage of an operator: the migrated test unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorInstance {
    pub instance_id: String,
    pub library: Library,
    pub op_signature: String,
    pub params: Params,
    pub inputs: Vec<TensorSpec>,
    pub source: Source,
}

impl OperatorInstance {
    /// Checks the per-instance invariants that serde cannot express.
    pub fn validate(&self) -> Result<(), String> {
        if self.instance_id.is_empty() {
            return Err("empty instance_id".into());
        }
        if self.op_signature.is_empty() {
            return Err("empty op_signature".into());
        }
        if self.params.is_empty() && self.inputs.is_empty() {
            return Err("instance has neither params nor inputs".into());
        }
        for (name, value) in self.params.iter() {
            match value {
                ParamValue::Floating(x) if !x.is_finite() => {
                    return Err(format!("param {name:?} is not finite"));
                }
                ParamValue::Tensor(t) => t.check().map_err(|e| format!("param {name:?}: {e}"))?,
                _ => {}
            }
        }
        for (i, t) in self.inputs.iter().enumerate() {
            t.check().map_err(|e| format!("input[{i}]: {e}"))?;
        }
        Ok(())
    }

    /// Canonical single-line JSON form, as written to trace files.
    pub fn to_trace_line(&self) -> String {
        serde_json::to_string(self).expect("operator instances always serialize")
    }
}

/// Parses a JSON-lines trace, stopping at the first error.
///
/// Blank lines are skipped but still counted for line numbers.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<OperatorInstance>, TraceError> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let inst = parse_line(&line, lineno)?;
        if let Some(&first_line) = seen.get(&inst.instance_id) {
            return Err(TraceError::DuplicateId {
                line: lineno,
                id: inst.instance_id,
                first_line,
            });
        }
        seen.insert(inst.instance_id.clone(), lineno);
        out.push(inst);
    }
    Ok(out)
}

/// Parses a trace collecting every error instead of stopping at the first.
pub fn validate_trace<R: BufRead>(reader: R) -> (Vec<OperatorInstance>, Vec<TraceError>) {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                errors.push(TraceError::Io(e));
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, lineno) {
            Ok(inst) => {
                if let Some(&first_line) = seen.get(&inst.instance_id) {
                    errors.push(TraceError::DuplicateId {
                        line: lineno,
                        id: inst.instance_id,
                        first_line,
                    });
                } else {
                    seen.insert(inst.instance_id.clone(), lineno);
                    out.push(inst);
                }
            }
            Err(e) => errors.push(e),
        }
    }
    (out, errors)
}

fn parse_line(line: &str, lineno: usize) -> Result<OperatorInstance, TraceError> {
    let inst: OperatorInstance = serde_json::from_str(line).map_err(|e| {
        let message = e.to_string();
        match e.classify() {
            serde_json::error::Category::Data => TraceError::Schema { line: lineno, message },
            _ => TraceError::Malformed { line: lineno, message },
        }
    })?;
    inst.validate().map_err(|message| TraceError::Invalid {
        line: lineno,
        id: inst.instance_id.clone(),
        message,
    })?;
    Ok(inst)
}

/// Serializes a corpus to JSON-lines, one instance per line.
pub fn write_trace<W: std::io::Write>(mut w: W, corpus: &[OperatorInstance]) -> std::io::Result<()> {
    for inst in corpus {
        writeln!(w, "{}", inst.to_trace_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    /// Occurrences in the migrated corpus.
    pub num_dll: u64,
    /// Occurrences in the compiler's equipped test suite.
    pub num_dlc: u64,
}

/// Per-operator occurrence counts. Only operators present in the migrated
/// corpus are recorded; equipped-only operators are never scored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub ops: BTreeMap<String, OpCounts>,
}

impl CorpusStats {
    pub fn get(&self, op: &str) -> Option<OpCounts> {
        self.ops.get(op).copied()
    }

    pub fn total_dll(&self) -> u64 {
        self.ops.values().map(|c| c.num_dll).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

pub fn compute_stats(corpus: &[OperatorInstance], equipped: &[OperatorInstance]) -> CorpusStats {
    let mut ops: BTreeMap<String, OpCounts> = BTreeMap::new();
    for inst in corpus {
        ops.entry(inst.op_signature.clone()).or_default().num_dll += 1;
    }
    for inst in equipped {
        if let Some(c) = ops.get_mut(&inst.op_signature) {
            c.num_dlc += 1;
        }
    }
    CorpusStats { ops }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1B: &str = r#"{"instance_id":"k1","library":"keras","op_signature":"keras.layers.Conv2DTranspose","params":{"filters":{"int":2},"kernel_size":{"int_list":[3,3]},"output_padding":{"int_list":[1,1]}},"inputs":[{"dtype":"float32","shape":[1,8,8,2]}],"source":"human"}"#;

    fn parse(s: &str) -> Result<Vec<OperatorInstance>, TraceError> {
        parse_trace(s.as_bytes())
    }

    #[test]
    fn parses_conv2d_transpose_line() {
        let corpus = parse(FIG1B).unwrap();
        assert_eq!(corpus.len(), 1);
        let inst = &corpus[0];
        assert_eq!(inst.params.len(), 3);
        assert_eq!(inst.library, Library::Keras);
        assert_eq!(inst.source, Source::Human);
        assert_eq!(
            inst.params.get("output_padding"),
            Some(&ParamValue::IntList(vec![1, 1]))
        );
        assert_eq!(inst.inputs[0], TensorSpec::new("float32", vec![1, 8, 8, 2]));
        assert_eq!(inst.to_trace_line(), FIG1B);
    }

    #[test]
    fn empty_stream_is_empty_corpus() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n").unwrap().is_empty());
    }

    #[test]
    fn nan_floating_is_rejected() {
        let line = r#"{"instance_id":"a","library":"pytorch","op_signature":"torch.nn.ELU","params":{"alpha":{"floating":"NaN"}},"inputs":[],"source":"human"}"#;
        let err = parse(line).unwrap_err();
        assert_eq!(err.line(), Some(1));
        let big = line.replace(r#""NaN""#, "1e999");
        assert!(parse(&big).is_err());
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{FIG1B}\n{{not json");
        match parse(&text).unwrap_err() {
            TraceError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_variant_tag_is_schema_error() {
        let line = FIG1B.replace(r#"{"int":2}"#, r#"{"complex":2}"#);
        assert!(matches!(parse(&line).unwrap_err(), TraceError::Schema { line: 1, .. }));
    }

    #[test]
    fn unknown_extra_key_is_rejected() {
        let line = FIG1B.replace(r#""source":"human""#, r#""source":"human","extra":1"#);
        assert!(matches!(parse(&line).unwrap_err(), TraceError::Schema { .. }));
        let line = FIG1B.replace(r#""shape":[1,8,8,2]"#, r#""shape":[1,8,8,2],"layout":"nhwc""#);
        assert!(matches!(parse(&line).unwrap_err(), TraceError::Schema { .. }));
    }

    #[test]
    fn two_key_param_object_is_rejected() {
        let line = FIG1B.replace(r#"{"int":2}"#, r#"{"int":2,"bool":true}"#);
        assert!(parse(&line).is_err());
    }

    #[test]
    fn duplicate_instance_id_is_rejected() {
        let text = format!("{FIG1B}\n\n{FIG1B}");
        match parse(&text).unwrap_err() {
            TraceError::DuplicateId { line, first_line, .. } => {
                assert_eq!(line, 3);
                assert_eq!(first_line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_param_name_is_rejected() {
        let line = FIG1B.replace(r#""filters":{"int":2}"#, r#""filters":{"int":2},"filters":{"int":3}"#);
        assert!(parse(&line).is_err());
    }

    #[test]
    fn instance_must_constrain_something() {
        let line = r#"{"instance_id":"e","library":"onnx","op_signature":"onnx.Relu","params":{},"inputs":[],"source":"human"}"#;
        assert!(matches!(parse(line).unwrap_err(), TraceError::Invalid { .. }));
    }

    #[test]
    fn dims_below_minus_one_are_rejected() {
        let ok = FIG1B.replace("[1,8,8,2]", "[-1,8,8,2]");
        assert!(parse(&ok).is_ok());
        let bad = FIG1B.replace("[1,8,8,2]", "[-2,8,8,2]");
        assert!(matches!(parse(&bad).unwrap_err(), TraceError::Invalid { .. }));
    }

    #[test]
    fn none_param_round_trips() {
        let line = r#"{"instance_id":"n","library":"pytorch","op_signature":"torch.nn.Linear","params":{"bias":{"none":null}},"inputs":[],"source":"docter"}"#;
        let c = parse(line).unwrap();
        assert_eq!(c[0].params.get("bias"), Some(&ParamValue::None));
        assert_eq!(c[0].source, Source::DocTer);
        assert_eq!(c[0].to_trace_line(), line);
    }

    #[test]
    fn validate_collects_all_errors() {
        let text = format!("{FIG1B}\nnope\n{FIG1B}\n");
        let (ok, errs) = validate_trace(text.as_bytes());
        assert_eq!(ok.len(), 1);
        assert_eq!(errs.len(), 2);
        assert_eq!(errs[0].line(), Some(2));
        assert_eq!(errs[1].line(), Some(3));
    }

    fn inst(id: &str, op: &str) -> OperatorInstance {
        OperatorInstance {
            instance_id: id.into(),
            library: Library::Keras,
            op_signature: op.into(),
            params: [("x", ParamValue::Int(1))].into_iter().collect(),
            inputs: vec![],
            source: Source::Human,
        }
    }

    #[test]
    fn stats_match_motivating_counts() {
        let op = "keras.layers.Conv2DTranspose";
        let corpus: Vec<_> = (0..84).map(|i| inst(&format!("c{i}"), op)).collect();
        let equipped: Vec<_> = (0..2).map(|i| inst(&format!("e{i}"), op)).collect();
        let stats = compute_stats(&corpus, &equipped);
        assert_eq!(
            stats.get(op),
            Some(OpCounts {
                num_dll: 84,
                num_dlc: 2
            })
        );
    }

    #[test]
    fn stats_corpus_only_and_empty() {
        let stats = compute_stats(&[inst("a", "A"), inst("b", "A")], &[inst("e", "B")]);
        assert_eq!(stats.get("A"), Some(OpCounts { num_dll: 2, num_dlc: 0 }));
        assert_eq!(stats.get("B"), None);
        assert!(compute_stats(&[], &[inst("e", "B")]).is_empty());
    }
}
