// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::BTreeSet;

use opera_core::partitioning::signature_of;
use opera_core::prioritization::{
    prioritize, prioritize_opera, CoverageMatrix, CoveredState, PrioritizationInput, StrategyConfig, StrategyKind,
};
use proptest::prelude::*;

fn coverage_for(corpus: &[opera_core::corpus::OperatorInstance]) -> CoverageMatrix {
    let mut m = CoverageMatrix::new();
    for (i, inst) in corpus.iter().enumerate() {
        m.insert(
            inst.instance_id.clone(),
            [format!("unit{}", i % 3), inst.op_signature.clone()],
        );
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_strategy_permutes_and_repeats(
        corpus in common::corpus(20, "c"),
        equipped in common::corpus(4, "e"),
        seed in any::<u64>(),
    ) {
        let coverage = coverage_for(&corpus);
        let input = PrioritizationInput { corpus: &corpus, equipped: &equipped, coverage: Some(&coverage), seed };
        let want: BTreeSet<&str> = corpus.iter().map(|i| i.instance_id.as_str()).collect();
        for kind in StrategyKind::ALL {
            let cfg = StrategyConfig::from(kind);
            let a = prioritize(&cfg, &input).unwrap();
            let b = prioritize(&cfg, &input).unwrap();
            prop_assert!(a.same_order(&b), "{} not deterministic", kind);
            let ids = a.ids();
            prop_assert_eq!(ids.len(), corpus.len());
            prop_assert_eq!(ids.into_iter().collect::<BTreeSet<_>>(), want.clone());
        }
    }

    #[test]
    fn opera_keys_never_rise(
        corpus in common::corpus(25, "c"),
        equipped in common::corpus(5, "e"),
        seed in any::<u64>(),
    ) {
        let plan = prioritize_opera(&corpus, &equipped, seed).unwrap();
        for w in plan.entries.windows(2) {
            prop_assert!(w[0].selection_key >= w[1].selection_key);
        }
    }

    #[test]
    fn diversity_shrinks_as_coverage_grows(
        folded in common::corpus(10, "f"),
        probe in common::instance("probe".into(), 4),
    ) {
        let sig = signature_of(&probe).unwrap();
        let mut state = CoveredState::new();
        let mut last = state.diversity(&probe.op_signature, &sig);
        prop_assert!((0.0..=1.0).contains(&last));
        for inst in &folded {
            state.fold(&inst.op_signature, &signature_of(inst).unwrap());
            let d = state.diversity(&probe.op_signature, &sig);
            prop_assert!(d <= last);
            last = d;
        }
        state.fold(&probe.op_signature, &sig);
        prop_assert_eq!(state.diversity(&probe.op_signature, &sig), 0.0);
    }
}
