// SPDX-License-Identifier: Apache-2.0

//! Test prioritization strategies.
//!
//! [`prioritize_opera`] orders instances by operator-instance diversity: the
//! product of an operator's signature score and the instance's
//! parameter-setting diversity. The remaining strategies are the usual
//! comparison baselines.

mod baselines;
mod coverage;
mod diversity;
mod fast;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::OperatorInstance;
use crate::partitioning::PartitionError;

pub use baselines::{prioritize_additional_coverage, prioritize_random, prioritize_total_coverage};
pub use coverage::{parse_coverage, write_coverage, CoverageError, CoverageMatrix};
pub use diversity::{operator_score, param_diversity, prioritize_opera, CoveredState, OperatorScore, DLC_EPSILON};
pub use fast::{exact_jaccard, prioritize_fast, shingles, FastParams, MinHasher};

#[derive(Debug, Error)]
pub enum PrioritizeError {
    #[error("operator {0:?} does not occur in the corpus")]
    UnknownOperator(String),
    #[error("instance {0:?} has no row in the coverage matrix")]
    MissingCoverage(String),
    #[error("strategy {0} needs a coverage matrix")]
    CoverageRequired(StrategyKind),
    #[error("instance {id:?}: {source}")]
    Partition {
        id: String,
        #[source]
        source: PartitionError,
    },
    #[error("invalid strategy parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Opera,
    Random,
    Total,
    Additional,
    Fast,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Opera,
        StrategyKind::Random,
        StrategyKind::Total,
        StrategyKind::Additional,
        StrategyKind::Fast,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Opera => "opera",
            StrategyKind::Random => "random",
            StrategyKind::Total => "total",
            StrategyKind::Additional => "additional",
            StrategyKind::Fast => "fast",
        }
    }

    pub fn needs_coverage(self) -> bool {
        matches!(self, StrategyKind::Total | StrategyKind::Additional)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?} (expected opera|random|total|additional|fast)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Placed by the strategy's scoring loop.
    Ranked,
    /// Zero-diversity leftovers appended in shuffled order.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub instance_id: String,
    pub selection_key: f64,
    pub round: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrioritizedPlan {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub entries: Vec<PlanEntry>,
    /// Wall time spent computing the order. Not part of plan identity.
    #[serde(default)]
    pub prioritization_time_s: f64,
}

impl PrioritizedPlan {
    pub(crate) fn new(strategy: StrategyKind, seed: u64) -> Self {
        PrioritizedPlan {
            strategy,
            seed,
            entries: Vec::new(),
            prioritization_time_s: 0.0,
        }
    }

    pub(crate) fn push(&mut self, id: &str, key: f64, phase: Phase) {
        let round = self.entries.len();
        self.entries.push(PlanEntry {
            instance_id: id.to_string(),
            selection_key: key,
            round,
            phase,
        });
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.instance_id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same order, keys and metadata; ignores the measured time.
    pub fn same_order(&self, other: &PrioritizedPlan) -> bool {
        self.strategy == other.strategy && self.seed == other.seed && self.entries == other.entries
    }
}

/// A strategy together with its tunables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub fast: FastParams,
}

impl From<StrategyKind> for StrategyConfig {
    fn from(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            fast: FastParams::default(),
        }
    }
}

/// Everything a strategy may look at.
#[derive(Debug, Clone, Copy)]
pub struct PrioritizationInput<'a> {
    pub corpus: &'a [OperatorInstance],
    pub equipped: &'a [OperatorInstance],
    pub coverage: Option<&'a CoverageMatrix>,
    pub seed: u64,
}

/// Runs the configured strategy and records how long it took.
pub fn prioritize(
    strategy: &StrategyConfig,
    input: &PrioritizationInput<'_>,
) -> Result<PrioritizedPlan, PrioritizeError> {
    let start = Instant::now();
    let mut plan = match strategy.kind {
        StrategyKind::Opera => prioritize_opera(input.corpus, input.equipped, input.seed)?,
        StrategyKind::Random => prioritize_random(input.corpus, input.seed),
        StrategyKind::Total => {
            let m = input
                .coverage
                .ok_or(PrioritizeError::CoverageRequired(StrategyKind::Total))?;
            prioritize_total_coverage(input.corpus, m)?
        }
        StrategyKind::Additional => {
            let m = input
                .coverage
                .ok_or(PrioritizeError::CoverageRequired(StrategyKind::Additional))?;
            prioritize_additional_coverage(input.corpus, m)?
        }
        StrategyKind::Fast => prioritize_fast(input.corpus, &strategy.fast, input.seed)?,
    };
    plan.prioritization_time_s = start.elapsed().as_secs_f64();
    Ok(plan)
}
