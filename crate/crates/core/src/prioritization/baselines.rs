// SPDX-License-Identifier: Apache-2.0

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CoverageMatrix, Phase, PrioritizeError, PrioritizedPlan, StrategyKind};
use crate::corpus::OperatorInstance;

/// Seeded Fisher-Yates shuffle of the corpus.
pub fn prioritize_random(corpus: &[OperatorInstance], seed: u64) -> PrioritizedPlan {
    let mut plan = PrioritizedPlan::new(StrategyKind::Random, seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    for i in order {
        plan.push(&corpus[i].instance_id, 0.0, Phase::Ranked);
    }
    plan
}

fn rows<'a>(
    corpus: &[OperatorInstance],
    matrix: &'a CoverageMatrix,
) -> Result<Vec<&'a std::collections::BTreeSet<String>>, PrioritizeError> {
    corpus
        .iter()
        .map(|inst| {
            matrix
                .row(&inst.instance_id)
                .ok_or_else(|| PrioritizeError::MissingCoverage(inst.instance_id.clone()))
        })
        .collect()
}

/// Descending by covered-element count, ties by instance id.
pub fn prioritize_total_coverage(
    corpus: &[OperatorInstance],
    matrix: &CoverageMatrix,
) -> Result<PrioritizedPlan, PrioritizeError> {
    let rows = rows(corpus, matrix)?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| {
        rows[b]
            .len()
            .cmp(&rows[a].len())
            .then_with(|| corpus[a].instance_id.cmp(&corpus[b].instance_id))
    });
    let mut plan = PrioritizedPlan::new(StrategyKind::Total, 0);
    for i in order {
        plan.push(&corpus[i].instance_id, rows[i].len() as f64, Phase::Ranked);
    }
    Ok(plan)
}

/// Greedy maximum additional coverage.
///
/// When no remaining test adds anything, coverage is reset and gains fall
/// back to total counts. Uses lazy re-evaluation: gains only shrink between
/// resets, so a popped entry whose recomputed gain is unchanged is the true
/// maximum.
pub fn prioritize_additional_coverage(
    corpus: &[OperatorInstance],
    matrix: &CoverageMatrix,
) -> Result<PrioritizedPlan, PrioritizeError> {
    let raw = rows(corpus, matrix)?;
    let mut intern: HashMap<&str, u32> = HashMap::new();
    let rows: Vec<Vec<u32>> = raw
        .iter()
        .map(|r| {
            r.iter()
                .map(|e| {
                    let next = intern.len() as u32;
                    *intern.entry(e.as_str()).or_insert(next)
                })
                .collect()
        })
        .collect();
    let mut covered = vec![false; intern.len()];
    let mut any_covered = false;
    let mut selected = vec![false; corpus.len()];
    let id = |i: usize| corpus[i].instance_id.as_str();

    let full_heap = |selected: &[bool]| -> BinaryHeap<(usize, Reverse<&str>, usize)> {
        (0..corpus.len())
            .filter(|&i| !selected[i])
            .map(|i| (rows[i].len(), Reverse(id(i)), i))
            .collect()
    };
    let mut heap = full_heap(&selected);
    let mut plan = PrioritizedPlan::new(StrategyKind::Additional, 0);

    while let Some((stored, tie, i)) = heap.pop() {
        let gain = rows[i].iter().filter(|&&e| !covered[e as usize]).count();
        if gain < stored {
            heap.push((gain, tie, i));
            continue;
        }
        if gain == 0 {
            if any_covered {
                covered.iter_mut().for_each(|c| *c = false);
                any_covered = false;
                heap = full_heap(&selected);
                continue;
            }
            let mut rest: Vec<usize> = std::iter::once(i).chain(heap.drain().map(|(_, _, j)| j)).collect();
            rest.sort_by_key(|&j| id(j));
            for j in rest {
                plan.push(id(j), 0.0, Phase::Ranked);
            }
            break;
        }
        selected[i] = true;
        for &e in &rows[i] {
            covered[e as usize] = true;
        }
        any_covered = true;
        plan.push(id(i), gain as f64, Phase::Ranked);
    }
    Ok(plan)
}
