// SPDX-License-Identifier: Apache-2.0

//! Similarity-based black-box prioritization over k-shingles.
//!
//! Each instance is treated as a string (its trace line without the
//! instance id), shingled and summarized by a MinHash signature. Selection is
//! farthest-first: the next test maximizes its summed estimated Jaccard
//! distance to the tests selected in the current round. LSH banding prunes
//! candidates that share a bucket with an already-selected test; when every
//! remaining test is pruned a new round starts.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Phase, PrioritizeError, PrioritizedPlan, StrategyKind};
use crate::corpus::OperatorInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FastParams {
    /// Shingle length in characters.
    pub k: usize,
    /// Number of MinHash functions.
    pub hashes: usize,
    /// LSH bands; must divide `hashes`.
    pub bands: usize,
}

impl Default for FastParams {
    fn default() -> Self {
        FastParams {
            k: 5,
            hashes: 128,
            bands: 32,
        }
    }
}

impl FastParams {
    pub fn check(&self) -> Result<(), PrioritizeError> {
        if self.k == 0 || self.hashes == 0 || self.bands == 0 {
            return Err(PrioritizeError::InvalidParams(
                "k, hashes and bands must be at least 1".into(),
            ));
        }
        if !self.hashes.is_multiple_of(self.bands) {
            return Err(PrioritizeError::InvalidParams(format!(
                "bands ({}) must divide hashes ({})",
                self.bands, self.hashes
            )));
        }
        Ok(())
    }
}

/// Set of length-`k` character substrings. Strings shorter than `k` are a
/// single shingle; the empty string has none.
pub fn shingles(text: &str, k: usize) -> BTreeSet<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return BTreeSet::new();
    }
    if chars.len() <= k {
        return std::iter::once(text.to_string()).collect();
    }
    chars.windows(k).map(|w| w.iter().collect()).collect()
}

/// Exact Jaccard similarity; two empty sets are identical.
pub fn exact_jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A family of seeded hash functions for MinHash signatures.
#[derive(Debug, Clone)]
pub struct MinHasher {
    salts: Vec<u64>,
}

impl MinHasher {
    pub fn new(hashes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MinHasher {
            salts: (0..hashes).map(|_| rng.next_u64()).collect(),
        }
    }

    pub fn signature(&self, set: &BTreeSet<String>) -> Vec<u64> {
        let mut mins = vec![u64::MAX; self.salts.len()];
        for s in set {
            let base = fnv1a(s.as_bytes());
            for (m, &salt) in mins.iter_mut().zip(&self.salts) {
                let h = mix(base ^ salt);
                if h < *m {
                    *m = h;
                }
            }
        }
        mins
    }

    /// Fraction of agreeing signature positions.
    pub fn similarity(a: &[u64], b: &[u64]) -> f64 {
        if a.is_empty() {
            return 0.0;
        }
        let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
        same as f64 / a.len() as f64
    }
}

/// The string FAST sees for an instance: its canonical trace line with the
/// instance id removed, so duplicates compare equal.
pub fn fast_text(inst: &OperatorInstance) -> String {
    let mut v = serde_json::to_value(inst).expect("operator instances always serialize");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("instance_id");
    }
    v.to_string()
}

pub fn prioritize_fast(
    corpus: &[OperatorInstance],
    params: &FastParams,
    seed: u64,
) -> Result<PrioritizedPlan, PrioritizeError> {
    params.check()?;
    let mut plan = PrioritizedPlan::new(StrategyKind::Fast, seed);
    let n = corpus.len();
    if n == 0 {
        return Ok(plan);
    }

    let hasher = MinHasher::new(params.hashes, seed);
    let sigs: Vec<Vec<u64>> = corpus
        .iter()
        .map(|inst| hasher.signature(&shingles(&fast_text(inst), params.k)))
        .collect();

    let rows = params.hashes / params.bands;
    let mut buckets: HashMap<(usize, u64), Vec<usize>> = HashMap::new();
    let band_keys: Vec<Vec<u64>> = sigs
        .iter()
        .map(|s| s.chunks(rows).map(|band| fnv1a(&band_bytes(band))).collect())
        .collect();
    for (i, keys) in band_keys.iter().enumerate() {
        for (b, &key) in keys.iter().enumerate() {
            buckets.entry((b, key)).or_default().push(i);
        }
    }

    // Seeded tie-break order; also decides the first pick of each round.
    let mut rank: Vec<usize> = (0..n).collect();
    rank.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15));

    let mut remaining = vec![true; n];
    let mut left = n;
    let mut dist_sum = vec![0.0f64; n];
    let mut pruned: HashSet<usize> = HashSet::new();
    let mut round_size = 0usize;

    while left > 0 {
        let candidates: Vec<usize> = rank
            .iter()
            .copied()
            .filter(|&i| remaining[i] && !pruned.contains(&i))
            .collect();
        let candidates = if candidates.is_empty() {
            pruned.clear();
            dist_sum.iter_mut().for_each(|d| *d = 0.0);
            round_size = 0;
            rank.iter().copied().filter(|&i| remaining[i]).collect()
        } else {
            candidates
        };

        // Candidates are in rank order, so the first maximum wins ties.
        let mut pick = candidates[0];
        if round_size > 0 {
            for &c in &candidates[1..] {
                if dist_sum[c] > dist_sum[pick] {
                    pick = c;
                }
            }
        }

        plan.push(&corpus[pick].instance_id, dist_sum[pick], Phase::Ranked);
        remaining[pick] = false;
        left -= 1;
        round_size += 1;

        for (b, &key) in band_keys[pick].iter().enumerate() {
            if let Some(mates) = buckets.get(&(b, key)) {
                pruned.extend(mates.iter().copied().filter(|&j| remaining[j]));
            }
        }
        for j in 0..n {
            if remaining[j] {
                dist_sum[j] += 1.0 - MinHasher::similarity(&sigs[pick], &sigs[j]);
            }
        }
    }
    Ok(plan)
}

fn band_bytes(band: &[u64]) -> Vec<u8> {
    band.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Library, ParamValue, Source};

    #[test]
    fn shingling() {
        let s = shingles("abcab", 2);
        let v: Vec<_> = s.iter().map(String::as_str).collect();
        assert_eq!(v, vec!["ab", "bc", "ca"]);
        assert_eq!(shingles("ab", 5).len(), 1);
        assert!(shingles("", 3).is_empty());
    }

    #[test]
    fn identical_strings_estimate_one() {
        let h = MinHasher::new(64, 1);
        let a = h.signature(&shingles("conv2d(filters=2)", 3));
        let b = h.signature(&shingles("conv2d(filters=2)", 3));
        assert_eq!(MinHasher::similarity(&a, &b), 1.0);
    }

    #[test]
    fn disjoint_strings_estimate_zero() {
        let h = MinHasher::new(64, 1);
        let a = h.signature(&shingles("aaaaaa", 2));
        let b = h.signature(&shingles("zzzzzz", 2));
        assert_eq!(MinHasher::similarity(&a, &b), 0.0);
    }

    #[test]
    fn estimate_tracks_exact_jaccard() {
        let a = shingles("the quick brown fox jumps over", 3);
        let b = shingles("the quick brown cat jumps under", 3);
        let h = MinHasher::new(512, 11);
        let est = MinHasher::similarity(&h.signature(&a), &h.signature(&b));
        assert!((est - exact_jaccard(&a, &b)).abs() < 0.1, "{est}");
    }

    #[test]
    fn three_string_jaccard() {
        let a = shingles("abcd", 2);
        let b = shingles("abce", 2);
        let c = shingles("xyz", 2);
        // {ab,bc,cd} vs {ab,bc,ce}: 2 shared of 4.
        assert_eq!(exact_jaccard(&a, &b), 0.5);
        assert_eq!(exact_jaccard(&a, &c), 0.0);
        assert_eq!(exact_jaccard(&b, &b), 1.0);
        let h = MinHasher::new(16, 7);
        let (sa, sb, sc) = (h.signature(&a), h.signature(&b), h.signature(&c));
        let ab = MinHasher::similarity(&sa, &sb);
        assert_eq!((ab * 16.0).fract(), 0.0);
        assert!(ab > 0.0 && ab < 1.0, "{ab}");
        assert_eq!(MinHasher::similarity(&sa, &sc), 0.0);
        assert_eq!(MinHasher::similarity(&sb, &sb), 1.0);
    }

    #[test]
    fn params_are_checked() {
        let bad = FastParams {
            k: 2,
            hashes: 10,
            bands: 3,
        };
        assert!(bad.check().is_err());
        assert!(FastParams {
            k: 0,
            ..FastParams::default()
        }
        .check()
        .is_err());
        assert!(FastParams::default().check().is_ok());
    }

    fn inst(id: &str, value: i64) -> OperatorInstance {
        OperatorInstance {
            instance_id: id.into(),
            library: Library::PyTorch,
            op_signature: "torch.nn.Threshold".into(),
            params: [("threshold", ParamValue::Int(value))].into_iter().collect(),
            inputs: vec![],
            source: Source::Human,
        }
    }

    fn text_inst(id: &str, s: &str) -> OperatorInstance {
        OperatorInstance {
            instance_id: id.into(),
            library: Library::PyTorch,
            op_signature: "torch.nn.Op".into(),
            params: [("s", ParamValue::Text(s.into()))].into_iter().collect(),
            inputs: vec![],
            source: Source::Human,
        }
    }

    /// Farthest-first over exact Jaccard distance, starting from `first`.
    fn exact_farthest_first(corpus: &[OperatorInstance], k: usize, first: usize) -> Vec<String> {
        let sets: Vec<_> = corpus.iter().map(|i| shingles(&fast_text(i), k)).collect();
        let mut order = vec![first];
        while order.len() < corpus.len() {
            let next = (0..corpus.len())
                .filter(|i| !order.contains(i))
                .max_by(|&a, &b| {
                    let d = |c: usize| {
                        order
                            .iter()
                            .map(|&o| 1.0 - exact_jaccard(&sets[o], &sets[c]))
                            .sum::<f64>()
                    };
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            order.push(next);
        }
        order.into_iter().map(|i| corpus[i].instance_id.clone()).collect()
    }

    #[test]
    fn three_string_order_matches_exact_oracle() {
        let corpus = vec![
            text_inst("a", "abcdefghijklmnop"),
            text_inst("b", "abcdefghijkl0123"),
            text_inst("c", "QRSTUVWXYZ456789"),
        ];
        let params = FastParams {
            k: 2,
            hashes: 16,
            bands: 1,
        };
        let plan = prioritize_fast(&corpus, &params, 7).unwrap();
        let first = corpus
            .iter()
            .position(|i| i.instance_id == plan.entries[0].instance_id)
            .unwrap();
        let want = exact_farthest_first(&corpus, 2, first);
        assert_eq!(plan.ids(), want.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn duplicate_goes_last() {
        let mut corpus = vec![inst("a", 1), inst("b", 1)];
        corpus.push(OperatorInstance {
            op_signature: "torch.nn.functional.gelu".into(),
            params: [("approximate", ParamValue::Text("tanh".into()))].into_iter().collect(),
            ..inst("c", 0)
        });
        for seed in 0..10 {
            let plan = prioritize_fast(
                &corpus,
                &FastParams {
                    k: 3,
                    hashes: 32,
                    bands: 8,
                },
                seed,
            )
            .unwrap();
            let ids = plan.ids();
            assert_eq!(ids.len(), 3);
            // a and b are identical once ids are dropped, so the second of
            // them is never picked before c.
            assert_ne!(ids[2], "c", "seed {seed}: {ids:?}");
        }
    }
}
