// SPDX-License-Identifier: Apache-2.0

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Phase, PrioritizeError, PrioritizedPlan, StrategyKind};
use crate::corpus::{compute_stats, CorpusStats, OperatorInstance};
use crate::partitioning::{signature_of, CoverageSignature, Pair, Single};

/// Denominator used when an operator never appears in the equipped suite.
pub const DLC_EPSILON: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorScore {
    pub op_signature: String,
    pub score: f64,
}

/// `num_dll / num_dlc`, with a zero equipped count replaced by [`DLC_EPSILON`].
pub fn operator_score(stats: &CorpusStats, op: &str) -> Result<OperatorScore, PrioritizeError> {
    let counts = stats
        .get(op)
        .filter(|c| c.num_dll > 0)
        .ok_or_else(|| PrioritizeError::UnknownOperator(op.to_string()))?;
    let denom = if counts.num_dlc == 0 {
        DLC_EPSILON
    } else {
        counts.num_dlc as f64
    };
    Ok(OperatorScore {
        op_signature: op.to_string(),
        score: counts.num_dll as f64 / denom,
    })
}

#[derive(Debug, Clone, Default)]
struct OpCoverage {
    singles: HashSet<Single>,
    pairs: HashSet<Pair>,
}

impl OpCoverage {
    fn fold(&mut self, sig: &CoverageSignature) {
        self.singles.extend(sig.singles.iter().cloned());
        self.pairs.extend(sig.pairs.iter().cloned());
    }

    fn diversity(&self, sig: &CoverageSignature) -> f64 {
        let total = sig.len();
        if total == 0 {
            return 0.0;
        }
        let new_singles = sig.singles.iter().filter(|s| !self.singles.contains(*s)).count();
        let new_pairs = sig.pairs.iter().filter(|p| !self.pairs.contains(*p)).count();
        (new_singles + new_pairs) as f64 / total as f64
    }
}

/// Singles and pairs already covered, tracked per operator signature.
#[derive(Debug, Clone, Default)]
pub struct CoveredState {
    per_op: HashMap<String, OpCoverage>,
}

impl CoveredState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeds the state with the equipped suite's signatures.
    pub fn from_equipped(equipped: &[OperatorInstance]) -> Result<Self, PrioritizeError> {
        let mut state = CoveredState::new();
        for inst in equipped {
            let sig = sig_of(inst)?;
            state.fold(&inst.op_signature, &sig);
        }
        Ok(state)
    }

    pub fn fold(&mut self, op: &str, sig: &CoverageSignature) {
        self.per_op.entry(op.to_string()).or_default().fold(sig);
    }

    pub fn diversity(&self, op: &str, sig: &CoverageSignature) -> f64 {
        match self.per_op.get(op) {
            Some(cov) => cov.diversity(sig),
            None => OpCoverage::default().diversity(sig),
        }
    }

    pub fn covered_len(&self, op: &str) -> usize {
        self.per_op.get(op).map_or(0, |c| c.singles.len() + c.pairs.len())
    }
}

/// Fraction of the instance's singles and pairs not yet covered for its operator.
pub fn param_diversity(inst: &OperatorInstance, state: &CoveredState) -> Result<f64, PrioritizeError> {
    let sig = sig_of(inst)?;
    Ok(state.diversity(&inst.op_signature, &sig))
}

fn sig_of(inst: &OperatorInstance) -> Result<CoverageSignature, PrioritizeError> {
    signature_of(inst).map_err(|source| PrioritizeError::Partition {
        id: inst.instance_id.clone(),
        source,
    })
}

struct HeapEntry<'a> {
    key: f64,
    score: f64,
    instance_id: &'a str,
    op: usize,
    inst: usize,
}

impl Ord for HeapEntry<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then(self.score.total_cmp(&other.score))
            .then_with(|| other.instance_id.cmp(self.instance_id))
    }
}

impl PartialOrd for HeapEntry<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for HeapEntry<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry<'_> {}

/// Picks the most diverse remaining instance; ties go to the smallest id.
fn select_best(
    pool: &[usize],
    corpus: &[OperatorInstance],
    sigs: &[CoverageSignature],
    op: &str,
    state: &CoveredState,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &i in pool {
        let d = state.diversity(op, &sigs[i]);
        best = match best {
            None => Some((i, d)),
            Some((bi, bd)) => {
                if d > bd || (d == bd && corpus[i].instance_id < corpus[bi].instance_id) {
                    Some((i, d))
                } else {
                    Some((bi, bd))
                }
            }
        };
    }
    best
}

struct Ctx<'a> {
    corpus: &'a [OperatorInstance],
    sigs: &'a [CoverageSignature],
    ops: &'a [&'a str],
    scores: &'a [f64],
}

impl<'a> Ctx<'a> {
    /// Pushes the operator's best remaining instance, or retires the whole
    /// pool to `residual` once nothing new can be covered.
    fn refill(
        &self,
        op: usize,
        pool: &mut Vec<usize>,
        state: &CoveredState,
        heap: &mut BinaryHeap<HeapEntry<'a>>,
        residual: &mut Vec<usize>,
    ) {
        match select_best(pool, self.corpus, self.sigs, self.ops[op], state) {
            Some((inst, d)) if d > 0.0 => heap.push(HeapEntry {
                key: self.scores[op] * d,
                score: self.scores[op],
                instance_id: &self.corpus[inst].instance_id,
                op,
                inst,
            }),
            Some(_) => residual.append(pool),
            None => {}
        }
    }
}

/// Two-level diversity prioritization.
///
/// A max-heap holds each operator's current best instance keyed by
/// `operator_score * param_diversity`. After a pop only the popped
/// operator's next-best instance is recomputed. Operators whose best
/// remaining diversity reaches zero move their instances to a residual pool,
/// which is appended in seeded-shuffle order once the heap drains.
pub fn prioritize_opera(
    corpus: &[OperatorInstance],
    equipped: &[OperatorInstance],
    seed: u64,
) -> Result<PrioritizedPlan, PrioritizeError> {
    let mut plan = PrioritizedPlan::new(StrategyKind::Opera, seed);
    let stats = compute_stats(corpus, equipped);
    let sigs = corpus.iter().map(sig_of).collect::<Result<Vec<_>, _>>()?;
    let mut state = CoveredState::from_equipped(equipped)?;

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in corpus.iter().enumerate() {
        groups.entry(inst.op_signature.as_str()).or_default().push(i);
    }
    let ops: Vec<&str> = groups.keys().copied().collect();
    let mut pools: Vec<Vec<usize>> = groups.into_values().collect();
    let scores = ops
        .iter()
        .map(|op| operator_score(&stats, op).map(|s| s.score))
        .collect::<Result<Vec<_>, _>>()?;

    let ctx = Ctx {
        corpus,
        sigs: &sigs,
        ops: &ops,
        scores: &scores,
    };
    let mut heap = BinaryHeap::new();
    let mut residual: Vec<usize> = Vec::new();
    for (op, pool) in pools.iter_mut().enumerate() {
        ctx.refill(op, pool, &state, &mut heap, &mut residual);
    }

    while let Some(top) = heap.pop() {
        plan.push(top.instance_id, top.key, Phase::Ranked);
        state.fold(ops[top.op], &sigs[top.inst]);
        pools[top.op].retain(|&i| i != top.inst);
        ctx.refill(top.op, &mut pools[top.op], &state, &mut heap, &mut residual);
    }

    residual.sort_by(|&a, &b| corpus[a].instance_id.cmp(&corpus[b].instance_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    residual.shuffle(&mut rng);
    for i in residual {
        plan.push(&corpus[i].instance_id, 0.0, Phase::Residual);
    }
    Ok(plan)
}
