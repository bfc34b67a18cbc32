// SPDX-License-Identifier: Apache-2.0

//! Synthetic corpora and a deterministic frontend with seeded bugs.
//!
//! A [`SimSpec`] describes operators, their parameter schemas, which
//! conversion function handles each operator, and bug rules whose triggers
//! are predicates over subspace labels. The same spec and seed always yield
//! the same corpus, coverage matrix and ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Library, OperatorInstance, ParamValue, Params, Source, TensorSpec};
use crate::harness::{ExecError, Executor, ModelArtifact};
use crate::metrics::{bug_key, BugMatrix, Scenario};
use crate::oracle::{
    ExecutionRecord, LibraryRun, NumericTensor, OracleConfig, OracleKind, PhaseOutcome, Phases, DEFAULT_TOLERANCE,
};
use crate::partitioning::{signature_of, CoverageSignature};
use crate::prioritization::CoverageMatrix;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulator spec: {0}")]
    Spec(String),
    #[error("simulator spec JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("instance {0:?} is not part of the simulated corpus")]
    UnknownInstance(String),
    #[error("instance {id:?}: {message}")]
    Instance { id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamSchema {
    Int {
        min: i64,
        max: i64,
        default: i64,
    },
    /// Draws are rounded to `step` so that zero is reachable.
    Float {
        min: f64,
        max: f64,
        default: f64,
        #[serde(default = "default_step")]
        step: f64,
    },
    Choice {
        values: Vec<String>,
        default: String,
    },
    Bool {
        default: bool,
    },
    IntList {
        len_min: usize,
        len_max: usize,
        min: i64,
        max: i64,
        default: Vec<i64>,
    },
}

fn default_step() -> f64 {
    0.1
}

impl ParamSchema {
    fn check(&self, name: &str) -> Result<(), String> {
        let bad = |m: &str| Err(format!("param {name:?}: {m}"));
        match self {
            ParamSchema::Int { min, max, default } => {
                if min > max || default < min || default > max {
                    return bad("needs min <= default <= max");
                }
            }
            ParamSchema::Float {
                min,
                max,
                default,
                step,
            } => {
                if ![*min, *max, *default, *step].iter().all(|x| x.is_finite()) {
                    return bad("bounds must be finite");
                }
                if min > max || default < min || default > max || *step <= 0.0 {
                    return bad("needs min <= default <= max and a positive step");
                }
            }
            ParamSchema::Choice { values, default } => {
                if !values.contains(default) {
                    return bad("default must be one of the values");
                }
            }
            ParamSchema::Bool { .. } => {}
            ParamSchema::IntList {
                len_min,
                len_max,
                min,
                max,
                default,
            } => {
                if len_min > len_max || min > max {
                    return bad("needs len_min <= len_max and min <= max");
                }
                if default.len() < *len_min || default.len() > *len_max || default.iter().any(|x| x < min || x > max) {
                    return bad("default lies outside the schema");
                }
            }
        }
        Ok(())
    }

    pub fn default_value(&self) -> ParamValue {
        match self {
            ParamSchema::Int { default, .. } => ParamValue::Int(*default),
            ParamSchema::Float { default, .. } => ParamValue::Floating(*default),
            ParamSchema::Choice { default, .. } => ParamValue::Text(default.clone()),
            ParamSchema::Bool { default } => ParamValue::Bool(*default),
            ParamSchema::IntList { default, .. } => ParamValue::IntList(default.clone()),
        }
    }

    /// A uniform draw over the whole schema, default included.
    pub fn draw(&self, rng: &mut impl Rng) -> ParamValue {
        match self {
            ParamSchema::Int { min, max, .. } => ParamValue::Int(rng.gen_range(*min..=*max)),
            ParamSchema::Float { min, max, step, .. } => {
                let lo = (min / step).ceil() as i64;
                let hi = (max / step).floor() as i64;
                let k = if lo <= hi { rng.gen_range(lo..=hi) } else { lo };
                let x = k as f64 * step;
                ParamValue::Floating(if x == 0.0 { 0.0 } else { x.clamp(*min, *max) })
            }
            ParamSchema::Choice { values, .. } => {
                ParamValue::Text(values.choose(rng).expect("checked non-empty").clone())
            }
            ParamSchema::Bool { .. } => ParamValue::Bool(rng.gen()),
            ParamSchema::IntList {
                len_min,
                len_max,
                min,
                max,
                ..
            } => {
                let len = rng.gen_range(*len_min..=*len_max);
                ParamValue::IntList((0..len).map(|_| rng.gen_range(*min..=*max)).collect())
            }
        }
    }
}

fn default_library() -> Library {
    Library::PyTorch
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub name: String,
    pub conversion_function: String,
    #[serde(default = "default_library")]
    pub library: Library,
    pub params: IndexMap<String, ParamSchema>,
    #[serde(default)]
    pub inputs: Vec<TensorSpec>,
    pub instances: usize,
    /// Overrides the simulator-wide probability of keeping a parameter's default.
    #[serde(default)]
    pub default_prob: Option<f64>,
}

/// Predicate over an instance's coverage signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Trigger {
    /// The parameter falls in the labelled subspace.
    Covers {
        param: String,
        label: String,
    },
    /// The parameter is present and in none of the labelled subspaces.
    NotIn {
        param: String,
        labels: Vec<String>,
    },
    All(Vec<Trigger>),
    Any(Vec<Trigger>),
    Always,
}

impl Trigger {
    pub fn fires(&self, sig: &CoverageSignature) -> bool {
        match self {
            Trigger::Covers { param, label } => sig.covers(param, label),
            Trigger::NotIn { param, labels } => sig.label_of(param).is_some_and(|l| !labels.contains(&l)),
            Trigger::All(ts) => ts.iter().all(|t| t.fires(sig)),
            Trigger::Any(ts) => ts.iter().any(|t| t.fires(sig)),
            Trigger::Always => true,
        }
    }

    fn params(&self, out: &mut BTreeSet<String>) {
        match self {
            Trigger::Covers { param, .. } | Trigger::NotIn { param, .. } => {
                out.insert(param.clone());
            }
            Trigger::All(ts) | Trigger::Any(ts) => ts.iter().for_each(|t| t.params(out)),
            Trigger::Always => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Manifestation {
    Crash,
    /// Compiled outputs differ from the reference by `magnitude`.
    Inconsistency {
        magnitude: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BugRule {
    pub conversion_function: String,
    pub trigger: Trigger,
    pub manifestation: Manifestation,
    #[serde(default)]
    pub message: Option<String>,
}

impl BugRule {
    fn crash_message(&self) -> String {
        self.message
            .clone()
            .unwrap_or_else(|| format!("InternalError: check failed in {}", self.conversion_function))
    }
}

/// Instances the library itself rejects; they end up invalid tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvalidRule {
    pub operator: String,
    pub trigger: Trigger,
}

fn default_prob() -> f64 {
    0.5
}

fn default_cost() -> [f64; 2] {
    [0.5, 3.0]
}

fn default_equipped() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub operators: Vec<OperatorSpec>,
    #[serde(default)]
    pub bugs: Vec<BugRule>,
    /// Probability that a drawn parameter keeps its default value.
    #[serde(default = "default_prob")]
    pub default_prob: f64,
    /// Per-test cost range in seconds, `[low, high]`.
    #[serde(default = "default_cost")]
    pub cost_s: [f64; 2],
    /// Equipped tests per operator. The first is all-default; the rest lean
    /// heavily on defaults.
    #[serde(default = "default_equipped")]
    pub equipped_per_operator: usize,
    #[serde(default)]
    pub unsupported_operators: Vec<String>,
    #[serde(default)]
    pub nondeterministic_operators: Vec<String>,
    #[serde(default)]
    pub invalid: Vec<InvalidRule>,
}

/// What the simulated frontend does with one instance.
#[derive(Debug, Clone, PartialEq)]
pub enum SimOutcome {
    Invalid,
    Nondeterministic,
    Unsupported,
    Crash {
        conversion_function: String,
        message: String,
    },
    Inconsistency {
        conversion_function: String,
        magnitude: f64,
    },
    Pass,
}

impl SimOutcome {
    /// The unique-bug key this outcome should be reported under.
    pub fn bug(&self, tolerance: f64) -> Option<(String, OracleKind)> {
        match self {
            SimOutcome::Crash {
                conversion_function, ..
            } => Some((conversion_function.clone(), OracleKind::Crash)),
            SimOutcome::Inconsistency {
                conversion_function,
                magnitude,
            } if *magnitude > tolerance => Some((conversion_function.clone(), OracleKind::Inconsistency)),
            _ => None,
        }
    }
}

/// Generated campaign inputs plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCorpus {
    pub corpus: Vec<OperatorInstance>,
    pub equipped: Vec<OperatorInstance>,
    pub coverage: CoverageMatrix,
    pub bugs: BugMatrix,
    pub conv_map: BTreeMap<String, String>,
    pub costs: BTreeMap<String, f64>,
}

impl SimCorpus {
    pub fn scenario(&self) -> Scenario {
        Scenario {
            corpus: self.corpus.clone(),
            equipped: self.equipped.clone(),
            coverage: Some(self.coverage.clone()),
            bugs: self.bugs.clone(),
            costs: self.costs.clone(),
        }
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig::default().with_conv_map(self.conv_map.clone())
    }

    /// Ground-truth unique bugs as (conversion function, kind).
    pub fn ground_truth(&self) -> BTreeSet<(String, OracleKind)> {
        self.bugs
            .detects
            .keys()
            .map(|k| {
                let (f, kind) = k.rsplit_once('#').expect("keys come from bug_key");
                let kind = if kind == OracleKind::Crash.as_str() {
                    OracleKind::Crash
                } else {
                    OracleKind::Inconsistency
                };
                (f.to_string(), kind)
            })
            .collect()
    }
}

impl SimSpec {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let spec: SimSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn conv_map(&self) -> BTreeMap<String, String> {
        self.operators
            .iter()
            .map(|o| (o.name.clone(), o.conversion_function.clone()))
            .collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Spec(m));
        if !(0.0..=1.0).contains(&self.default_prob) {
            return err(format!("default_prob {} is not a probability", self.default_prob));
        }
        let [lo, hi] = self.cost_s;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return err(format!("cost range [{lo}, {hi}] is invalid"));
        }
        let mut names = BTreeSet::new();
        let mut fn_params: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        for op in &self.operators {
            if !names.insert(op.name.as_str()) {
                return err(format!("operator {:?} is listed twice", op.name));
            }
            if let Some(p) = op.default_prob {
                if !(0.0..=1.0).contains(&p) {
                    return err(format!("operator {:?}: default_prob {p} is not a probability", op.name));
                }
            }
            if op.params.is_empty() && op.inputs.is_empty() {
                return err(format!("operator {:?} has neither params nor inputs", op.name));
            }
            for (name, schema) in &op.params {
                schema
                    .check(name)
                    .map_err(|m| SimError::Spec(format!("operator {:?}: {m}", op.name)))?;
            }
            for t in &op.inputs {
                t.check()
                    .map_err(|m| SimError::Spec(format!("operator {:?}: {m}", op.name)))?;
            }
            let known = fn_params.entry(op.conversion_function.as_str()).or_default();
            known.extend(op.params.keys().cloned());
            known.extend((0..op.inputs.len()).map(crate::partitioning::input_name));
        }
        let oracle = OracleConfig::default();
        for (i, bug) in self.bugs.iter().enumerate() {
            let Some(known) = fn_params.get(bug.conversion_function.as_str()) else {
                return err(format!(
                    "bug {i} names conversion function {:?}, which no operator uses",
                    bug.conversion_function
                ));
            };
            let mut used = BTreeSet::new();
            bug.trigger.params(&mut used);
            if let Some(p) = used.iter().find(|p| !known.contains(*p)) {
                return err(format!(
                    "bug {i} refers to parameter {p:?}, unknown to {:?}",
                    bug.conversion_function
                ));
            }
            match bug.manifestation {
                Manifestation::Crash if oracle.is_unsupported(&bug.crash_message()) => {
                    return err(format!("bug {i}: crash message would be filtered as unsupported"));
                }
                Manifestation::Inconsistency { magnitude } if !(magnitude > 0.0 && magnitude.is_finite()) => {
                    return err(format!("bug {i}: magnitude must be positive"));
                }
                _ => {}
            }
        }
        for name in self
            .unsupported_operators
            .iter()
            .chain(&self.nondeterministic_operators)
            .chain(self.invalid.iter().map(|r| &r.operator))
        {
            if !names.contains(name.as_str()) {
                return err(format!("unknown operator {name:?}"));
            }
        }
        Ok(())
    }

    /// Deterministic frontend behaviour for one instance, following the
    /// oracle's precedence: invalid, nondeterministic, unsupported, crash,
    /// inconsistency.
    pub fn outcome(&self, inst: &OperatorInstance) -> Result<SimOutcome, SimError> {
        let op = self
            .operators
            .iter()
            .find(|o| o.name == inst.op_signature)
            .ok_or_else(|| SimError::UnknownInstance(inst.instance_id.clone()))?;
        let sig = signature_of(inst).map_err(|e| SimError::Instance {
            id: inst.instance_id.clone(),
            message: e.to_string(),
        })?;
        if self
            .invalid
            .iter()
            .any(|r| r.operator == op.name && r.trigger.fires(&sig))
        {
            return Ok(SimOutcome::Invalid);
        }
        if self.nondeterministic_operators.contains(&op.name) {
            return Ok(SimOutcome::Nondeterministic);
        }
        if self.unsupported_operators.contains(&op.name) {
            return Ok(SimOutcome::Unsupported);
        }
        let fired: Vec<&BugRule> = self
            .bugs
            .iter()
            .filter(|b| b.conversion_function == op.conversion_function && b.trigger.fires(&sig))
            .collect();
        if let Some(crash) = fired.iter().find(|b| b.manifestation == Manifestation::Crash) {
            return Ok(SimOutcome::Crash {
                conversion_function: op.conversion_function.clone(),
                message: crash.crash_message(),
            });
        }
        let magnitude = fired
            .iter()
            .filter_map(|b| match b.manifestation {
                Manifestation::Inconsistency { magnitude } => Some(magnitude),
                Manifestation::Crash => None,
            })
            .fold(0.0, f64::max);
        if magnitude > 0.0 {
            return Ok(SimOutcome::Inconsistency {
                conversion_function: op.conversion_function.clone(),
                magnitude,
            });
        }
        Ok(SimOutcome::Pass)
    }

    fn make_instance(
        &self,
        id: String,
        op: &OperatorSpec,
        rng: &mut ChaCha8Rng,
        keep_default: f64,
    ) -> OperatorInstance {
        let params: Params = op
            .params
            .iter()
            .map(|(name, schema)| {
                let v = if rng.gen_bool(keep_default) {
                    schema.default_value()
                } else {
                    schema.draw(rng)
                };
                (name.clone(), v)
            })
            .collect();
        OperatorInstance {
            instance_id: id,
            library: op.library.clone(),
            op_signature: op.name.clone(),
            params,
            inputs: op.inputs.clone(),
            source: Source::Other("sim".into()),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<SimCorpus, SimError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut corpus = Vec::new();
        let mut equipped = Vec::new();
        for (o, op) in self.operators.iter().enumerate() {
            let p = op.default_prob.unwrap_or(self.default_prob);
            for j in 0..op.instances {
                corpus.push(self.make_instance(format!("sim-{o:02}-{j:03}"), op, &mut rng, p));
            }
            for k in 0..self.equipped_per_operator {
                let keep = if k == 0 { 1.0 } else { 0.9 };
                equipped.push(self.make_instance(format!("eq-{o:02}-{k}"), op, &mut rng, keep));
            }
        }

        let by_name: HashMap<&str, &OperatorSpec> = self.operators.iter().map(|o| (o.name.as_str(), o)).collect();
        let mut coverage = CoverageMatrix::new();
        let mut bugs = BugMatrix::new(corpus.len());
        let mut costs = BTreeMap::new();
        let [lo, hi] = self.cost_s;
        for inst in &corpus {
            let op = by_name[inst.op_signature.as_str()];
            coverage.insert(inst.instance_id.clone(), coverage_row(op, inst));
            costs.insert(
                inst.instance_id.clone(),
                if hi > lo { rng.gen_range(lo..hi) } else { lo },
            );
            if let Some((f, kind)) = self.outcome(inst)?.bug(DEFAULT_TOLERANCE) {
                bugs.add(bug_key(&f, kind), [inst.instance_id.clone()]);
            }
        }
        Ok(SimCorpus {
            corpus,
            equipped,
            coverage,
            bugs,
            conv_map: self.conv_map(),
            costs,
        })
    }
}

/// Coarse synthetic statement coverage: shared entry code per conversion
/// function, one statement per operator, and one per parameter that is set
/// away from its default.
fn coverage_row(op: &OperatorSpec, inst: &OperatorInstance) -> Vec<String> {
    let f = &op.conversion_function;
    let mut row = vec![format!("{f}:entry"), format!("{f}:{}", op.name)];
    for (name, schema) in &op.params {
        if inst.params.get(name) != Some(&schema.default_value()) {
            row.push(format!("{f}:{name}"));
        }
    }
    row
}

fn family_params(f: usize) -> IndexMap<String, ParamSchema> {
    let mut p = IndexMap::new();
    p.insert(
        "stride".to_string(),
        ParamSchema::Int {
            min: -3,
            max: 6,
            default: 1,
        },
    );
    p.insert(
        "mode".to_string(),
        ParamSchema::Choice {
            values: ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
            default: "a".into(),
        },
    );
    p.insert("flag".to_string(), ParamSchema::Bool { default: false });
    p.insert(
        "alpha".to_string(),
        ParamSchema::Float {
            min: -1.0,
            max: 1.0,
            default: 0.5,
            step: 0.1,
        },
    );
    p.insert(
        "size".to_string(),
        ParamSchema::IntList {
            len_min: 1,
            len_max: 3,
            min: 0,
            max: 3,
            default: vec![1, 1],
        },
    );
    // Families differ in which optional knobs they expose.
    if matches!(f, 1 | 4 | 8) {
        p.shift_remove("flag");
    }
    if matches!(f, 2 | 6) {
        p.shift_remove("size");
    }
    p
}

const FAMILIES: [&str; 10] = [
    "_convert_conv",
    "_convert_pooling",
    "_convert_activation",
    "_convert_dense",
    "_convert_batchnorm",
    "_convert_padding",
    "_convert_reshape",
    "_convert_reduce",
    "_convert_upsample",
    "_convert_cropping",
];

fn covers(param: &str, label: &str) -> Trigger {
    Trigger::Covers {
        param: param.into(),
        label: label.into(),
    }
}

fn rule(f: usize, trigger: Trigger, manifestation: Manifestation) -> BugRule {
    BugRule {
        conversion_function: FAMILIES[f].into(),
        trigger,
        manifestation,
        message: None,
    }
}

fn inconsistency(magnitude: f64) -> Manifestation {
    Manifestation::Inconsistency { magnitude }
}

impl Default for SimSpec {
    /// 40 operators of 50 instances each, spread over 10 conversion
    /// functions, with 12 bugs sitting in non-default subspaces and pairs.
    fn default() -> Self {
        let mut operators = Vec::new();
        for (f, family) in FAMILIES.iter().enumerate() {
            let params = family_params(f);
            for k in 0..4 {
                let stem = family.trim_start_matches("_convert_");
                let mut name: Vec<char> = stem.chars().collect();
                name[0] = name[0].to_ascii_uppercase();
                operators.push(OperatorSpec {
                    name: format!("sim.nn.{}{}d", name.into_iter().collect::<String>(), k + 1),
                    conversion_function: family.to_string(),
                    library: Library::PyTorch,
                    params: params.clone(),
                    inputs: vec![TensorSpec::new("float32", vec![1, 4])],
                    instances: 50,
                    default_prob: None,
                });
            }
        }
        let all = |ts: Vec<Trigger>| Trigger::All(ts);
        let bugs = vec![
            rule(0, covers("stride", "INT_LE_NEG2"), Manifestation::Crash),
            rule(
                0,
                all(vec![covers("mode", "CAT:d"), covers("flag", "CAT:true")]),
                inconsistency(0.01),
            ),
            rule(1, covers("alpha", "FLT_ZERO"), Manifestation::Crash),
            rule(
                1,
                all(vec![covers("stride", "INT_NEG1"), covers("mode", "CAT:c")]),
                inconsistency(0.5),
            ),
            rule(2, covers("stride", "INT_ZERO"), Manifestation::Crash),
            rule(
                3,
                all(vec![covers("flag", "CAT:true"), covers("alpha", "FLT_NEG")]),
                inconsistency(0.1),
            ),
            rule(4, covers("size", "LIST(INT_GE2|{INT_ZERO})"), Manifestation::Crash),
            rule(
                5,
                all(vec![covers("mode", "CAT:d"), covers("stride", "INT_GE2")]),
                Manifestation::Crash,
            ),
            rule(
                6,
                all(vec![covers("stride", "INT_LE_NEG2"), covers("alpha", "FLT_NEG")]),
                inconsistency(0.002),
            ),
            rule(
                7,
                all(vec![
                    Trigger::NotIn {
                        param: "stride".into(),
                        labels: vec!["INT_ONE".into(), "INT_GE2".into()],
                    },
                    covers("flag", "CAT:true"),
                ]),
                Manifestation::Crash,
            ),
            rule(
                8,
                all(vec![covers("mode", "CAT:b"), covers("alpha", "FLT_ZERO")]),
                inconsistency(0.05),
            ),
            rule(9, covers("size", "LIST(INT_ONE|{INT_GE2})"), Manifestation::Crash),
        ];
        SimSpec {
            operators,
            bugs,
            default_prob: default_prob(),
            cost_s: default_cost(),
            equipped_per_operator: 1,
            unsupported_operators: Vec::new(),
            nondeterministic_operators: Vec::new(),
            invalid: Vec::new(),
        }
    }
}

impl SimSpec {
    /// A small random spec, for end-to-end checks. Bugs are anchored on
    /// labels actually drawn from the schemas so most of them are reachable.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
        let n_fns = rng.gen_range(1..=4);
        let mut families: Vec<IndexMap<String, ParamSchema>> = Vec::new();
        for _ in 0..n_fns {
            let mut params = IndexMap::new();
            for p in 0..rng.gen_range(1..=3) {
                let schema = match rng.gen_range(0..5) {
                    0 => ParamSchema::Int {
                        min: -3,
                        max: 4,
                        default: 1,
                    },
                    1 => ParamSchema::Float {
                        min: -1.0,
                        max: 1.0,
                        default: 0.5,
                        step: 0.5,
                    },
                    2 => ParamSchema::Choice {
                        values: vec!["x".into(), "y".into(), "z".into()],
                        default: "x".into(),
                    },
                    3 => ParamSchema::Bool { default: false },
                    _ => ParamSchema::IntList {
                        len_min: 1,
                        len_max: 2,
                        min: 0,
                        max: 2,
                        default: vec![1],
                    },
                };
                params.insert(format!("p{p}"), schema);
            }
            families.push(params);
        }
        let mut operators = Vec::new();
        for o in 0..rng.gen_range(n_fns.max(2)..=7) {
            let f = if o < n_fns { o } else { rng.gen_range(0..n_fns) };
            operators.push(OperatorSpec {
                name: format!("sim.rand.Op{o}"),
                conversion_function: format!("_convert_f{f}"),
                library: Library::PyTorch,
                params: families[f].clone(),
                inputs: vec![TensorSpec::new("float32", vec![2, 3])],
                instances: rng.gen_range(3..=15),
                default_prob: None,
            });
        }
        let label_on = |rng: &mut ChaCha8Rng, f: usize| -> Trigger {
            let params = &families[f];
            let (name, schema) = params.get_index(rng.gen_range(0..params.len())).expect("non-empty");
            let v = schema.draw(rng);
            let label = crate::partitioning::partition_value(&v)
                .expect("finite draws")
                .to_string();
            covers(name, &label)
        };
        let mut bugs = Vec::new();
        for _ in 0..rng.gen_range(2..=6) {
            let f = rng.gen_range(0..n_fns);
            let trigger = if rng.gen_bool(0.5) {
                label_on(&mut rng, f)
            } else {
                Trigger::All(vec![label_on(&mut rng, f), label_on(&mut rng, f)])
            };
            let manifestation = match rng.gen_range(0..4) {
                0 | 1 => Manifestation::Crash,
                2 => inconsistency([0.01, 0.5][rng.gen_range(0..2)]),
                // Below tolerance: must not be reported.
                _ => inconsistency(1e-4),
            };
            bugs.push(BugRule {
                conversion_function: format!("_convert_f{f}"),
                trigger,
                manifestation,
                message: None,
            });
        }
        let names: Vec<String> = operators.iter().map(|o| o.name.clone()).collect();
        let pick = |rng: &mut ChaCha8Rng, p: f64| -> Vec<String> {
            if rng.gen_bool(p) {
                vec![names[rng.gen_range(0..names.len())].clone()]
            } else {
                Vec::new()
            }
        };
        let unsupported_operators = pick(&mut rng, 0.3);
        let nondeterministic_operators = pick(&mut rng, 0.3);
        let invalid = if rng.gen_bool(0.3) {
            let o = rng.gen_range(0..operators.len());
            let f: usize = operators[o]
                .conversion_function
                .trim_start_matches("_convert_f")
                .parse()
                .expect("own names");
            vec![InvalidRule {
                operator: operators[o].name.clone(),
                trigger: label_on(&mut rng, f),
            }]
        } else {
            Vec::new()
        };
        SimSpec {
            operators,
            bugs,
            default_prob: 0.4,
            cost_s: [0.1, 1.0],
            equipped_per_operator: 1,
            unsupported_operators,
            nondeterministic_operators,
            invalid,
        }
    }
}

/// In-process executor standing in for a real frontend.
#[derive(Debug, Clone)]
pub struct SimExecutor {
    spec: SimSpec,
    costs: HashMap<String, f64>,
}

impl SimExecutor {
    pub fn new(spec: SimSpec, corpus: &SimCorpus) -> Self {
        Self::with_costs(spec, &corpus.costs)
    }

    /// Builds the executor from a saved cost table.
    pub fn with_costs(spec: SimSpec, costs: &BTreeMap<String, f64>) -> Self {
        SimExecutor {
            spec,
            costs: costs.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        }
    }

    /// Judges an artifact by the instance in its header.
    pub fn record_for(&self, artifact: &ModelArtifact) -> Result<ExecutionRecord, SimError> {
        let inst = artifact
            .instance()
            .ok_or_else(|| SimError::UnknownInstance(artifact.instance_id.clone()))?;
        let cost = *self
            .costs
            .get(&inst.instance_id)
            .ok_or_else(|| SimError::UnknownInstance(inst.instance_id.clone()))?;
        let reference = vec![reference_output(&inst.instance_id)];
        let mut rec = ExecutionRecord::passing(&inst.instance_id, reference.clone());
        rec.wall_time_s = cost;
        match self.spec.outcome(&inst)? {
            SimOutcome::Pass => {}
            SimOutcome::Invalid => {
                rec.phases = Phases {
                    library_run: LibraryRun::Crash,
                    compile: PhaseOutcome::Skipped,
                    compiled_run: PhaseOutcome::Skipped,
                };
                rec.reference_output.clear();
                rec.compiled_output.clear();
                rec.stderr_excerpt = "ValueError: invalid argument combination".into();
            }
            SimOutcome::Nondeterministic => {
                rec.phases.library_run = LibraryRun::Nondeterministic;
                rec.phases.compile = PhaseOutcome::Skipped;
                rec.phases.compiled_run = PhaseOutcome::Skipped;
                rec.reference_output.clear();
                rec.compiled_output.clear();
            }
            SimOutcome::Unsupported => {
                rec = ExecutionRecord {
                    wall_time_s: cost,
                    ..ExecutionRecord::compile_crash(
                        &inst.instance_id,
                        format!("unsupported operator: {}", inst.op_signature),
                    )
                };
            }
            SimOutcome::Crash { message, .. } => {
                rec = ExecutionRecord {
                    wall_time_s: cost,
                    ..ExecutionRecord::compile_crash(&inst.instance_id, message)
                };
            }
            SimOutcome::Inconsistency { magnitude, .. } => {
                let mut out = reference[0].clone();
                out.data[0] += magnitude;
                rec.compiled_output = vec![out];
            }
        }
        Ok(rec)
    }
}

/// Fixed pseudo-random output derived from the instance id.
fn reference_output(id: &str) -> NumericTensor {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    NumericTensor::vector((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

impl Executor for SimExecutor {
    fn execute(&self, artifact: &ModelArtifact, _inst: &OperatorInstance) -> Result<ExecutionRecord, ExecError> {
        self.record_for(artifact)
            .map_err(|e| ExecError::Infrastructure(e.to_string()))
    }
}
