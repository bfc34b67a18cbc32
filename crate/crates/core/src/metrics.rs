// SPDX-License-Identifier: Apache-2.0

//! APFD, time-to-bug and strategy comparisons.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::OperatorInstance;
use crate::harness::RunLog;
use crate::oracle::UniqueBug;
use crate::prioritization::{
    prioritize, CoverageMatrix, PrioritizationInput, PrioritizeError, StrategyConfig, StrategyKind,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("bug matrix: {0}")]
    Matrix(String),
    #[error("APFD is undefined: {0}")]
    Undefined(String),
    #[error("plan is not a permutation of the {n} tests: {reason}")]
    BadPlan { n: usize, reason: String },
    #[error("comparison needs at least two strategies")]
    TooFewStrategies,
    #[error(transparent)]
    Prioritize(#[from] PrioritizeError),
    #[error("reading bug matrix: {0}")]
    Json(#[from] serde_json::Error),
    #[error("seed {seed}: {message}")]
    Scenario { seed: u64, message: String },
}

/// Which tests detect which bug. `n` is the size of the test universe.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BugMatrix {
    pub n: usize,
    pub detects: BTreeMap<String, BTreeSet<String>>,
}

/// Key used for bugs derived from de-duplicated failures.
pub fn bug_key(conversion_function: &str, kind: crate::oracle::OracleKind) -> String {
    format!("{conversion_function}#{}", kind.as_str())
}

impl BugMatrix {
    pub fn new(n: usize) -> Self {
        BugMatrix {
            n,
            detects: BTreeMap::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.detects.len()
    }

    pub fn add<I, S>(&mut self, bug: impl Into<String>, tests: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.detects
            .entry(bug.into())
            .or_default()
            .extend(tests.into_iter().map(Into::into));
    }

    pub fn from_unique_bugs(n: usize, bugs: &[UniqueBug]) -> Self {
        let mut m = BugMatrix::new(n);
        for b in bugs {
            m.add(bug_key(&b.conversion_function, b.kind), b.members.iter().cloned());
        }
        m
    }

    pub fn check(&self) -> Result<(), MetricsError> {
        for (bug, tests) in &self.detects {
            if tests.is_empty() {
                return Err(MetricsError::Matrix(format!("bug {bug:?} has no detecting test")));
            }
        }
        Ok(())
    }

    /// Only the bugs some test in `tests` detects.
    pub fn restrict_to<'a>(&self, tests: impl IntoIterator<Item = &'a str>) -> BugMatrix {
        let present: BTreeSet<&str> = tests.into_iter().collect();
        BugMatrix {
            n: self.n,
            detects: self
                .detects
                .iter()
                .filter(|(_, ts)| ts.iter().any(|t| present.contains(t.as_str())))
                .map(|(b, ts)| (b.clone(), ts.clone()))
                .collect(),
        }
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self, MetricsError> {
        let m: BugMatrix = serde_json::from_reader(reader)?;
        m.check()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApfdReport {
    pub strategy: String,
    pub apfd: f64,
    /// 1-based rank of each bug's first detecting test.
    pub first_detection_rank: BTreeMap<String, usize>,
    /// Completion offset of that test, when a run log was available.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub first_detection_s: BTreeMap<String, f64>,
}

fn first_ranks(plan: &[&str], matrix: &BugMatrix) -> Result<BTreeMap<String, usize>, MetricsError> {
    if plan.len() != matrix.n {
        return Err(MetricsError::BadPlan {
            n: matrix.n,
            reason: format!("plan has {} entries", plan.len()),
        });
    }
    let mut rank: HashMap<&str, usize> = HashMap::with_capacity(plan.len());
    for (i, id) in plan.iter().enumerate() {
        if rank.insert(id, i + 1).is_some() {
            return Err(MetricsError::BadPlan {
                n: matrix.n,
                reason: format!("{id:?} appears twice"),
            });
        }
    }
    matrix
        .detects
        .iter()
        .map(|(bug, tests)| {
            tests
                .iter()
                .filter_map(|t| rank.get(t.as_str()).copied())
                .min()
                .map(|p| (bug.clone(), p))
                .ok_or_else(|| MetricsError::Undefined(format!("bug {bug:?} is detected by no test in the plan")))
        })
        .collect()
}

/// `1 - sum(p_i) / (n m) + 1 / (2n)` over 1-based first-detection ranks.
pub fn apfd(plan: &[&str], matrix: &BugMatrix) -> Result<f64, MetricsError> {
    let ranks = first_ranks(plan, matrix)?;
    apfd_from_ranks(&ranks, matrix.n)
}

fn apfd_from_ranks(ranks: &BTreeMap<String, usize>, n: usize) -> Result<f64, MetricsError> {
    let m = ranks.len();
    if m == 0 {
        return Err(MetricsError::Undefined("the matrix has no bugs".into()));
    }
    let sum: usize = ranks.values().sum();
    let (n, m) = (n as f64, m as f64);
    Ok(1.0 - sum as f64 / (n * m) + 1.0 / (2.0 * n))
}

pub fn apfd_report(
    strategy: &str,
    plan: &[&str],
    matrix: &BugMatrix,
    log: Option<&RunLog>,
) -> Result<ApfdReport, MetricsError> {
    let first_detection_rank = first_ranks(plan, matrix)?;
    let apfd = apfd_from_ranks(&first_detection_rank, matrix.n)?;
    let mut first_detection_s = BTreeMap::new();
    if let Some(log) = log {
        let done: HashMap<&str, f64> = log
            .entries
            .iter()
            .map(|e| (e.instance_id.as_str(), e.end_s()))
            .collect();
        for (bug, tests) in &matrix.detects {
            if let Some(t) = tests
                .iter()
                .filter_map(|t| done.get(t.as_str()).copied())
                .reduce(f64::min)
            {
                first_detection_s.insert(bug.clone(), t);
            }
        }
    }
    Ok(ApfdReport {
        strategy: strategy.to_string(),
        apfd,
        first_detection_rank,
        first_detection_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeToBugs {
    /// Offset at which the last bug was first found, in seconds.
    Complete(f64),
    Partial {
        detected: usize,
        total: usize,
    },
}

impl TimeToBugs {
    pub fn seconds(self) -> Option<f64> {
        match self {
            TimeToBugs::Complete(s) => Some(s),
            TimeToBugs::Partial { .. } => None,
        }
    }
}

/// Over `(test id, completion offset)` events in any order.
fn time_to_all<'a>(events: impl IntoIterator<Item = (&'a str, f64)>, matrix: &BugMatrix, extra_s: f64) -> TimeToBugs {
    let done: HashMap<&str, f64> = events.into_iter().fold(HashMap::new(), |mut acc, (id, t)| {
        let slot = acc.entry(id).or_insert(t);
        *slot = slot.min(t);
        acc
    });
    let mut latest = 0.0f64;
    let mut detected = 0;
    for tests in matrix.detects.values() {
        if let Some(t) = tests
            .iter()
            .filter_map(|t| done.get(t.as_str()).copied())
            .reduce(f64::min)
        {
            detected += 1;
            latest = latest.max(t);
        }
    }
    if detected == matrix.m() {
        TimeToBugs::Complete(latest + extra_s)
    } else {
        TimeToBugs::Partial {
            detected,
            total: matrix.m(),
        }
    }
}

/// Completion offset of the last first-detection. The opera strategy's
/// prioritization time is added, since its ordering cost is part of the
/// testing time.
pub fn time_to_all_bugs(log: &RunLog, matrix: &BugMatrix) -> TimeToBugs {
    let extra = if log.header.strategy == StrategyKind::Opera.as_str() {
        log.header.prioritization_time_s
    } else {
        0.0
    };
    let judged = log.entries.iter().filter(|e| e.verdict.is_some());
    time_to_all(judged.map(|e| (e.instance_id.as_str(), e.end_s())), matrix, extra)
}

/// One seed's worth of inputs for a comparison.
#[derive(Debug, Clone, Default)]
pub struct Scenario {
    pub corpus: Vec<OperatorInstance>,
    pub equipped: Vec<OperatorInstance>,
    pub coverage: Option<CoverageMatrix>,
    pub bugs: BugMatrix,
    /// Per-test execution cost in seconds; missing tests cost one second.
    pub costs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub apfd: Option<f64>,
    pub time_to_all_bugs_s: Option<f64>,
    pub bugs_detected: usize,
    pub bugs_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySummary {
    pub strategy: StrategyKind,
    pub seeds: usize,
    #[serde(serialize_with = "three_places")]
    pub mean_apfd: Option<f64>,
    #[serde(serialize_with = "three_places")]
    pub mean_time_to_all_bugs_s: Option<f64>,
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn three_places<S: serde::Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(round3(*x)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Option<Vec<f64>> = xs.collect();
    let vals = vals?;
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

impl Comparison {
    pub fn rows_for(&self, strategy: StrategyKind) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(move |r| r.strategy == strategy)
    }

    /// Per-strategy means, in first-appearance order. A mean is absent when
    /// any seed lacks the value.
    pub fn summary(&self) -> Vec<StrategySummary> {
        let mut order: Vec<StrategyKind> = Vec::new();
        for r in &self.rows {
            if !order.contains(&r.strategy) {
                order.push(r.strategy);
            }
        }
        order
            .into_iter()
            .map(|s| {
                let rows: Vec<&ComparisonRow> = self.rows_for(s).collect();
                StrategySummary {
                    strategy: s,
                    seeds: rows.len(),
                    mean_apfd: mean(rows.iter().map(|r| r.apfd)),
                    mean_time_to_all_bugs_s: mean(rows.iter().map(|r| r.time_to_all_bugs_s)),
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "strategy,seed,apfd,time_to_all_bugs_s,bugs_detected")?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.strategy,
                r.seed,
                fmt(r.apfd),
                fmt(r.time_to_all_bugs_s),
                r.bugs_detected
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "strategies": self.summary() })
    }
}

/// Evaluates one strategy on one scenario without executing anything: the
/// plan is replayed against the bug matrix and the per-test costs.
pub fn evaluate(strategy: &StrategyConfig, scenario: &Scenario, seed: u64) -> Result<ComparisonRow, MetricsError> {
    let plan = prioritize(
        strategy,
        &PrioritizationInput {
            corpus: &scenario.corpus,
            equipped: &scenario.equipped,
            coverage: scenario.coverage.as_ref(),
            seed,
        },
    )?;
    let ids = plan.ids();
    let detected = scenario.bugs.restrict_to(ids.iter().copied());
    let restricted = BugMatrix {
        n: ids.len(),
        ..detected
    };
    let apfd = if restricted.m() == 0 {
        None
    } else {
        Some(apfd(&ids, &restricted)?)
    };
    let mut clock = 0.0;
    let events: Vec<(&str, f64)> = ids
        .iter()
        .map(|id| {
            clock += scenario.costs.get(*id).copied().unwrap_or(1.0);
            (*id, clock)
        })
        .collect();
    let extra = if strategy.kind == StrategyKind::Opera {
        plan.prioritization_time_s
    } else {
        0.0
    };
    let time = time_to_all(events, &scenario.bugs, extra);
    Ok(ComparisonRow {
        strategy: strategy.kind,
        seed,
        apfd,
        time_to_all_bugs_s: time.seconds(),
        bugs_detected: restricted.m(),
        bugs_total: scenario.bugs.m(),
    })
}

/// Runs every strategy on every seed; seeds are processed in parallel.
///
/// `scenario` builds the inputs for a seed, so a simulator can draw a fresh
/// corpus per seed while a fixed corpus just returns a clone.
pub fn compare_strategies<F>(
    strategies: &[StrategyConfig],
    seeds: &[u64],
    scenario: F,
) -> Result<Comparison, MetricsError>
where
    F: Fn(u64) -> Result<Scenario, String> + Sync,
{
    if strategies.len() < 2 {
        return Err(MetricsError::TooFewStrategies);
    }
    let per_seed: Vec<Vec<ComparisonRow>> = seeds
        .par_iter()
        .map(|&seed| {
            let sc = scenario(seed).map_err(|message| MetricsError::Scenario { seed, message })?;
            strategies.iter().map(|s| evaluate(s, &sc, seed)).collect()
        })
        .collect::<Result<_, MetricsError>>()?;
    let mut rows = Vec::with_capacity(strategies.len() * seeds.len());
    for (k, _) in strategies.iter().enumerate() {
        for seed_rows in &per_seed {
            rows.push(seed_rows[k].clone());
        }
    }
    Ok(Comparison { rows })
}
