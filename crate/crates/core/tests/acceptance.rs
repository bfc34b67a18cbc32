// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use opera_core::corpus::TensorSpec;
use opera_core::harness::{run_campaign, Budget, CampaignConfig, Clock};
use opera_core::metrics::{apfd, compare_strategies, BugMatrix};
use opera_core::oracle::{classify, dedup, ExecutionRecord, Failure, NumericTensor, OracleConfig, OracleKind, Verdict};
use opera_core::partitioning::{partition_float, partition_int, partition_tensor, IntClass, Subspace};
use opera_core::prioritization::{
    prioritize, prioritize_opera, Phase, PrioritizationInput, StrategyConfig, StrategyKind,
};
use opera_core::simulator::{SimExecutor, SimSpec};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn partition_conformance() -> Outcome {
    let ints = [
        (-2, "INT_LE_NEG2"),
        (-1, "INT_NEG1"),
        (0, "INT_ZERO"),
        (1, "INT_ONE"),
        (2, "INT_GE2"),
    ];
    for (v, want) in ints {
        let got = partition_int(v).label();
        ensure(got == want, || format!("{v} -> {got}, expected {want}"))?;
    }
    for (v, want) in [
        (-1e-300, "FLT_NEG"),
        (-0.0, "FLT_ZERO"),
        (0.0, "FLT_ZERO"),
        (1e-300, "FLT_POS"),
    ] {
        let got = partition_float(v).map_err(|e| e.to_string())?.label();
        ensure(got == want, || format!("{v:?} -> {got}, expected {want}"))?;
    }
    for rank in 0..=6usize {
        let t = TensorSpec::new("float32", vec![1; rank]);
        let want = if rank == 6 {
            "DIM_GE6".to_string()
        } else {
            format!("DIM_{rank}")
        };
        let label = partition_tensor(&t).to_string();
        let expect = if rank == 0 {
            format!("TEN(float32|{want}|{{}})")
        } else {
            format!("TEN(float32|{want}|{{INT_ONE}})")
        };
        ensure(label == expect, || format!("rank {rank}: {label}, expected {expect}"))?;
    }
    ensure(Subspace::Int(IntClass::Ge2).to_string() == "INT_GE2", || {
        "display".into()
    })?;
    Ok("16 boundary values".into())
}

/// First-detection scan written independently of the library.
fn brute_apfd(plan: &[String], bugs: &[BTreeSet<String>]) -> f64 {
    let n = plan.len() as f64;
    let m = bugs.len() as f64;
    let mut sum = 0.0;
    for detecting in bugs {
        let p = plan.iter().position(|t| detecting.contains(t)).expect("detected") + 1;
        sum += p as f64;
    }
    1.0 - sum / (n * m) + 1.0 / (2.0 * n)
}

fn apfd_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = rng.gen_range(1..=50);
        let m = rng.gen_range(1..=10);
        let mut plan: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        plan.shuffle(&mut rng);
        let mut matrix = BugMatrix::new(n);
        let mut sets = Vec::new();
        for b in 0..m {
            let k = rng.gen_range(1..=n.min(5));
            let set: BTreeSet<String> = (0..k).map(|_| format!("t{}", rng.gen_range(0..n))).collect();
            matrix.add(format!("b{b}"), set.iter().cloned());
            sets.push(set);
        }
        let ids: Vec<&str> = plan.iter().map(String::as_str).collect();
        let got = apfd(&ids, &matrix).map_err(|e| format!("case {case}: {e}"))?;
        let want = brute_apfd(&plan, &sets);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-12, || format!("case {case}: {got} vs {want}"))?;
    }
    Ok(format!("200 cases, max |diff| = {worst:.1e}"))
}

fn strategy_inputs(seed: u64) -> opera_core::simulator::SimCorpus {
    SimSpec::random(seed).generate(seed).expect("random specs are valid")
}

fn determinism_and_permutation() -> Outcome {
    for seed in 0..100u64 {
        let sim = strategy_inputs(seed);
        let mut want: Vec<&str> = sim.corpus.iter().map(|i| i.instance_id.as_str()).collect();
        want.sort();
        let input = PrioritizationInput {
            corpus: &sim.corpus,
            equipped: &sim.equipped,
            coverage: Some(&sim.coverage),
            seed,
        };
        for kind in StrategyKind::ALL {
            let cfg = StrategyConfig::from(kind);
            let a = prioritize(&cfg, &input).map_err(|e| format!("corpus {seed} {kind}: {e}"))?;
            let b = prioritize(&cfg, &input).map_err(|e| format!("corpus {seed} {kind}: {e}"))?;
            ensure(a.same_order(&b), || {
                format!("corpus {seed}: {kind} differs between runs")
            })?;
            let mut got = a.ids();
            got.sort();
            ensure(got == want, || format!("corpus {seed}: {kind} is not a permutation"))?;
        }
    }
    Ok("100 corpora x 5 strategies".into())
}

fn key_monotonicity() -> Outcome {
    let mut entries = 0;
    for seed in 0..50u64 {
        let sim = strategy_inputs(1000 + seed);
        let plan = prioritize_opera(&sim.corpus, &sim.equipped, seed).map_err(|e| e.to_string())?;
        for w in plan.entries.windows(2) {
            ensure(w[0].selection_key >= w[1].selection_key, || {
                format!(
                    "corpus {seed}: key rises from {} to {} at round {}",
                    w[0].selection_key, w[1].selection_key, w[1].round
                )
            })?;
        }
        ensure(
            plan.entries
                .iter()
                .skip_while(|e| e.phase == Phase::Ranked)
                .all(|e| e.phase == Phase::Residual),
            || format!("corpus {seed}: ranked entry after residual ones"),
        )?;
        entries += plan.len();
    }
    Ok(format!("50 corpora, {entries} popped keys"))
}

fn dedup_pooling() -> Outcome {
    let mut conv = BTreeMap::new();
    conv.insert("keras.layers.MaxPooling2D".to_string(), "_convert_pooling".to_string());
    conv.insert(
        "keras.layers.AveragePooling2D".to_string(),
        "_convert_pooling".to_string(),
    );
    let cfg = OracleConfig::default().with_conv_map(conv);
    let crash = || Verdict::CrashBug {
        message: "InternalError".into(),
    };
    let incons = || Verdict::InconsistencyBug { distance: 0.2 };
    let f = |id: &str, op: &str, v: Verdict| Failure {
        instance_id: id.into(),
        op_signature: op.into(),
        verdict: v,
    };
    let failures = vec![
        f("k1", "keras.layers.MaxPooling2D", crash()),
        f("k2", "keras.layers.AveragePooling2D", crash()),
        f("k3", "keras.layers.MaxPooling2D", incons()),
        f("k4", "keras.layers.AveragePooling2D", incons()),
    ];
    let bugs = dedup(&failures, &cfg);
    ensure(bugs.len() == 2, || format!("{} unique bugs, expected 2", bugs.len()))?;
    for kind in [OracleKind::Crash, OracleKind::Inconsistency] {
        let n = bugs
            .iter()
            .filter(|b| b.kind == kind && b.conversion_function == "_convert_pooling")
            .count();
        ensure(n == 1, || format!("{n} {} bugs for _convert_pooling", kind.as_str()))?;
    }
    Ok("2 operators -> 1 bug per oracle kind".into())
}

fn efficiency() -> Outcome {
    let spec = SimSpec::default();
    let seeds: Vec<u64> = (0..20).collect();
    let kinds = [
        StrategyKind::Opera,
        StrategyKind::Random,
        StrategyKind::Total,
        StrategyKind::Additional,
    ];
    let strategies: Vec<StrategyConfig> = kinds.iter().map(|&k| k.into()).collect();
    let cmp = compare_strategies(&strategies, &seeds, |seed| {
        spec.generate(seed).map(|s| s.scenario()).map_err(|e| e.to_string())
    })
    .map_err(|e| e.to_string())?;
    let summary = cmp.summary();
    let mean = |k: StrategyKind| {
        summary
            .iter()
            .find(|s| s.strategy == k)
            .and_then(|s| s.mean_apfd)
            .ok_or_else(|| format!("no APFD mean for {k}"))
    };
    let (opera, random, total, additional) = (
        mean(StrategyKind::Opera)?,
        mean(StrategyKind::Random)?,
        mean(StrategyKind::Total)?,
        mean(StrategyKind::Additional)?,
    );
    let times = |k: StrategyKind| -> Vec<Option<f64>> { cmp.rows_for(k).map(|r| r.time_to_all_bugs_s).collect() };
    let (opera_t, random_t) = (times(StrategyKind::Opera), times(StrategyKind::Random));
    let faster = opera_t
        .iter()
        .zip(&random_t)
        .filter(|(o, r)| matches!((o, r), (Some(o), Some(r)) if o <= r))
        .count();
    let detail = format!(
        "APFD opera {opera:.3}, random {random:.3}, total {total:.3}, additional {additional:.3}; opera time <= random in {faster}/20 seeds"
    );
    ensure(opera >= random + 0.05, || format!("opera - random < 0.05: {detail}"))?;
    ensure(opera > total && opera > additional, || {
        format!("opera does not beat coverage baselines: {detail}")
    })?;
    ensure(faster * 10 >= 8 * seeds.len(), || format!("time criterion: {detail}"))?;
    Ok(detail)
}

fn oracle_thresholds() -> Outcome {
    let cfg = OracleConfig::default();
    let judge = |d: f64| {
        let mut rec = ExecutionRecord::passing("x", vec![NumericTensor::vector(vec![0.25, 1.0])]);
        rec.compiled_output = vec![NumericTensor::vector(vec![0.25, 1.0 + d])];
        classify(&rec, &cfg)
    };
    let low = judge(9.99e-4);
    ensure(low == Verdict::Pass, || format!("9.99e-4 -> {low:?}"))?;
    let high = judge(1.001e-3);
    ensure(matches!(high, Verdict::InconsistencyBug { .. }), || {
        format!("1.001e-3 -> {high:?}")
    })?;
    Ok("9.99e-4 passes, 1.001e-3 is an inconsistency".into())
}

fn end_to_end_recovery() -> Outcome {
    let mut total_bugs = 0;
    for seed in 0..10u64 {
        let spec = SimSpec::random(500 + seed);
        let sim = spec.generate(seed).map_err(|e| e.to_string())?;
        let plan = prioritize_opera(&sim.corpus, &sim.equipped, seed).map_err(|e| e.to_string())?;
        let exec = SimExecutor::new(spec, &sim);
        let oracle = sim.oracle_config();
        let cfg = CampaignConfig {
            budget: Budget::unlimited(),
            clock: Clock::Reported,
            ..CampaignConfig::default()
        };
        let out = run_campaign(&cfg, &sim.corpus, &plan, &exec, &oracle, None, None).map_err(|e| e.to_string())?;
        ensure(out.skipped == 0, || {
            format!("spec {seed}: {} skipped tests", out.skipped)
        })?;
        let found: BTreeSet<(String, OracleKind)> = out.log.unique_bugs(&oracle).iter().map(|b| b.key()).collect();
        let truth = sim.ground_truth();
        ensure(found == truth, || {
            format!("spec {seed}: found {found:?}, expected {truth:?}")
        })?;
        total_bugs += truth.len();
    }
    Ok(format!("10 specs, {total_bugs} ground-truth bugs recovered"))
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "partition conformance",
            limit: Duration::from_secs(1),
            run: partition_conformance,
        },
        Criterion {
            name: "APFD oracle equivalence",
            limit: Duration::from_secs(5),
            run: apfd_equivalence,
        },
        Criterion {
            name: "prioritization determinism and permutation",
            limit: Duration::from_secs(30),
            run: determinism_and_permutation,
        },
        Criterion {
            name: "selection key monotonicity",
            limit: Duration::from_secs(30),
            run: key_monotonicity,
        },
        Criterion {
            name: "dedup by conversion function",
            limit: Duration::from_secs(1),
            run: dedup_pooling,
        },
        Criterion {
            name: "efficiency on default simulator",
            limit: Duration::from_secs(120),
            run: efficiency,
        },
        Criterion {
            name: "oracle thresholds",
            limit: Duration::from_secs(1),
            run: oracle_thresholds,
        },
        Criterion {
            name: "end-to-end simulator recovery",
            limit: Duration::from_secs(120),
            run: end_to_end_recovery,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.run)();
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > c.limit => Err(format!("{detail}; took {took:.2?}, limit {:?}", c.limit)),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS  {:<44} {detail} ({took:.2?})", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<44} {why} ({took:.2?})", c.name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
