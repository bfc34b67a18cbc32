// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, LineWriter, Write};
use std::path::{Path, PathBuf};

use opera_core::corpus::{compute_stats, parse_trace, validate_trace, write_trace, OperatorInstance};
use opera_core::harness::{
    run_campaign, Budget, CampaignConfig, Clock, ExecutorSpec, HarnessError, ModelArtifact, ProcessExecutor, RunLog,
};
use opera_core::metrics::{apfd_report, compare_strategies, time_to_all_bugs, BugMatrix, TimeToBugs};
use opera_core::oracle::{load_conv_map, OracleConfig};
use opera_core::prioritization::{
    self as prio, parse_coverage, write_coverage, FastParams, PrioritizationInput, PrioritizedPlan, StrategyConfig,
    StrategyKind,
};
use opera_core::simulator::{SimExecutor, SimSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{
    CliError, ClockArg, CompareArgs, FastArgs, PrioritizeArgs, ReportArgs, RunArgs, SimExecArgs, SimulateArgs,
    ValidateArgs,
};

type CliResult = Result<(), CliError>;

const SIM_CORPUS: &str = "corpus.jsonl";
const SIM_EQUIPPED: &str = "equipped.jsonl";
const SIM_COVERAGE: &str = "coverage.jsonl";
const SIM_BUGS: &str = "bugs.json";
const SIM_CONV_MAP: &str = "conv_map.json";
const SIM_COSTS: &str = "costs.json";
const SIM_SPEC: &str = "spec.json";

fn config(e: impl ToString) -> CliError {
    CliError::Config(e.to_string())
}

fn at(path: &Path, e: impl ToString) -> CliError {
    CliError::Config(format!("{}: {}", path.display(), e.to_string()))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| at(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| at(path, e))
}

fn read_trace(path: &Path) -> Result<Vec<OperatorInstance>, CliError> {
    parse_trace(open(path)?).map_err(|e| at(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| at(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| at(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| at(path, e))
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(config)?;
    println!("{text}");
    Ok(())
}

fn oracle_config(conv_map: Option<&Path>, tolerance: Option<f64>) -> Result<OracleConfig, CliError> {
    let mut cfg = OracleConfig::default();
    if let Some(t) = tolerance {
        cfg = cfg.with_tolerance(t).map_err(config)?;
    }
    if let Some(path) = conv_map {
        cfg = cfg.with_conv_map(load_conv_map(open(path)?).map_err(|e| at(path, e))?);
    }
    Ok(cfg)
}

fn fast_params(a: FastArgs) -> FastParams {
    FastParams {
        k: a.fast_k,
        hashes: a.fast_hashes,
        bands: a.fast_bands,
    }
}

pub fn validate(a: ValidateArgs) -> CliResult {
    let (corpus, mut errors) = validate_trace(open(&a.corpus)?);
    let mut report: Vec<(String, String)> = errors
        .drain(..)
        .map(|e| (a.corpus.display().to_string(), e.to_string()))
        .collect();
    let equipped = match &a.equipped {
        Some(path) => {
            let (eq, errs) = validate_trace(open(path)?);
            report.extend(errs.into_iter().map(|e| (path.display().to_string(), e.to_string())));
            eq
        }
        None => Vec::new(),
    };
    for (file, msg) in &report {
        eprintln!("{file}: {msg}");
    }
    let stats = compute_stats(&corpus, &equipped);
    println!("operator,num_dll,num_dlc");
    for (op, c) in &stats.ops {
        println!("{op},{},{}", c.num_dll, c.num_dlc);
    }
    eprintln!(
        "{} instances, {} operators, {} equipped, {} errors",
        corpus.len(),
        stats.ops.len(),
        equipped.len(),
        report.len()
    );
    if report.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{} invalid lines", report.len())))
    }
}

pub fn prioritize(a: PrioritizeArgs) -> CliResult {
    let corpus = read_trace(&a.corpus)?;
    let equipped = match &a.equipped {
        Some(p) => read_trace(p)?,
        None => Vec::new(),
    };
    let coverage = match &a.coverage {
        Some(p) => Some(parse_coverage(open(p)?).map_err(|e| at(p, e))?),
        None => None,
    };
    let cfg = StrategyConfig {
        kind: a.strategy.into(),
        fast: fast_params(a.fast),
    };
    let input = PrioritizationInput {
        corpus: &corpus,
        equipped: &equipped,
        coverage: coverage.as_ref(),
        seed: a.seed,
    };
    let plan = prio::prioritize(&cfg, &input).map_err(config)?;
    eprintln!(
        "{} plan over {} instances in {:.3}s",
        plan.strategy,
        plan.len(),
        plan.prioritization_time_s
    );
    match &a.out {
        Some(path) => write_json(path, &plan),
        None => print_json(&plan),
    }
}

fn harness_error(e: HarnessError) -> CliError {
    match e {
        HarnessError::Io(_) => CliError::Infra(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

pub fn run(a: RunArgs) -> CliResult {
    let corpus = read_trace(&a.corpus)?;
    let plan: PrioritizedPlan = read_json(&a.plan)?;
    let oracle = oracle_config(a.conv_map.as_deref(), a.tolerance)?;
    let spec = ExecutorSpec {
        timeout_s: a.timeout,
        env_passthrough: a.env_passthrough.clone(),
        ..ExecutorSpec::new(a.executor.clone())
    };
    let models = a.work_dir.join("models");
    let results = a.work_dir.join("results");
    for dir in [&models, &results] {
        fs::create_dir_all(dir).map_err(|e| at(dir, e))?;
    }
    let executor = ProcessExecutor::new(spec, &results).map_err(config)?;
    let cfg = CampaignConfig {
        budget: Budget {
            max_tests: a.max_tests,
            wall_clock_s: a.budget,
        },
        clock: match a.clock {
            ClockArg::Wall => Clock::Wall,
            ClockArg::Reported => Clock::Reported,
        },
        workers: a.workers,
        artifact_dir: Some(models),
    };

    let resume = if a.resume && a.log.exists() {
        Some(RunLog::parse(open(&a.log)?).map_err(|e| at(&a.log, e))?)
    } else {
        None
    };
    // Rewriting drops a truncated trailing line left by an interrupted run.
    let mut sink = LineWriter::new(File::create(&a.log).map_err(|e| at(&a.log, e))?);
    if let Some(prior) = &resume {
        prior.write(&mut sink).map_err(|e| at(&a.log, e))?;
    }
    let outcome =
        run_campaign(&cfg, &corpus, &plan, &executor, &oracle, resume, Some(&mut sink)).map_err(harness_error)?;
    sink.flush()
        .map_err(|e| CliError::Infra(format!("{}: {e}", a.log.display())))?;

    let log = &outcome.log;
    let bugs = log.unique_bugs(&oracle);
    eprintln!(
        "{} tests in {:.3}s, {} unique bugs{}",
        log.entries.len(),
        log.elapsed_s(),
        bugs.len(),
        if outcome.budget_exhausted {
            ", budget exhausted"
        } else {
            ""
        }
    );
    if outcome.skipped > 0 {
        return Err(CliError::Infra(format!(
            "{} tests could not be executed; see `skipped` entries in {}",
            outcome.skipped,
            a.log.display()
        )));
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> CliResult {
    let log = RunLog::parse(open(&a.log)?).map_err(|e| at(&a.log, e))?;
    let oracle = oracle_config(a.conv_map.as_deref(), a.tolerance)?;
    let mut verdicts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &log.entries {
        let name = e.verdict.as_ref().map_or("skipped", |v| v.name());
        *verdicts.entry(name).or_default() += 1;
    }
    let mut out = serde_json::json!({
        "strategy": log.header.strategy,
        "seed": log.header.seed,
        "prioritization_time_s": log.header.prioritization_time_s,
        "tests": log.entries.len(),
        "elapsed_s": log.elapsed_s(),
        "verdicts": verdicts,
        "unique_bugs": log.unique_bugs(&oracle),
    });
    if let Some(path) = &a.bugs {
        let matrix = BugMatrix::from_json(open(path)?).map_err(|e| at(path, e))?;
        out["time_to_all_bugs"] = match time_to_all_bugs(&log, &matrix) {
            TimeToBugs::Complete(s) => serde_json::json!({ "seconds": s }),
            TimeToBugs::Partial { detected, total } => serde_json::json!({ "detected": detected, "total": total }),
        };
        if let Some(plan_path) = &a.plan {
            let plan: PrioritizedPlan = read_json(plan_path)?;
            let ids = plan.ids();
            let rep = apfd_report(plan.strategy.as_str(), &ids, &matrix, Some(&log)).map_err(config)?;
            out["apfd"] = serde_json::to_value(rep).map_err(config)?;
        }
    }
    if let Some(path) = &a.timeline {
        let mut w = create(path)?;
        log.write_timeline_csv(&oracle, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| at(path, e))?;
    }
    print_json(&out)
}

fn load_spec(path: Option<&Path>) -> Result<SimSpec, CliError> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| at(p, e))?;
            SimSpec::from_json(&text).map_err(|e| at(p, e))
        }
        None => Ok(SimSpec::default()),
    }
}

pub fn simulate(a: SimulateArgs) -> CliResult {
    let spec = if a.random_spec {
        SimSpec::random(a.seed)
    } else {
        load_spec(a.spec.as_deref())?
    };
    let sim = spec.generate(a.seed).map_err(config)?;
    fs::create_dir_all(&a.out).map_err(|e| at(&a.out, e))?;
    let file = |name: &str| -> PathBuf { a.out.join(name) };

    let trace = |name: &str, items: &[OperatorInstance]| -> CliResult {
        let path = file(name);
        let mut w = create(&path)?;
        write_trace(&mut w, items)
            .and_then(|_| w.flush())
            .map_err(|e| at(&path, e))
    };
    trace(SIM_CORPUS, &sim.corpus)?;
    trace(SIM_EQUIPPED, &sim.equipped)?;
    let cov = file(SIM_COVERAGE);
    let mut w = create(&cov)?;
    write_coverage(&mut w, &sim.coverage)
        .and_then(|_| w.flush())
        .map_err(|e| at(&cov, e))?;
    write_json(&file(SIM_BUGS), &sim.bugs)?;
    write_json(&file(SIM_CONV_MAP), &sim.conv_map)?;
    write_json(&file(SIM_COSTS), &sim.costs)?;
    write_json(&file(SIM_SPEC), &spec)?;
    eprintln!(
        "{} instances, {} equipped, {} seeded bugs in {}",
        sim.corpus.len(),
        sim.equipped.len(),
        sim.bugs.m(),
        a.out.display()
    );
    Ok(())
}

pub fn compare(a: CompareArgs) -> CliResult {
    let spec = load_spec(a.spec.as_deref())?;
    let kinds: Vec<StrategyKind> = if a.strategies.is_empty() {
        StrategyKind::ALL.to_vec()
    } else {
        a.strategies.iter().map(|&s| s.into()).collect()
    };
    let strategies: Vec<StrategyConfig> = kinds
        .into_iter()
        .map(|kind| StrategyConfig {
            kind,
            fast: fast_params(a.fast),
        })
        .collect();
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let cmp = compare_strategies(&strategies, &seeds, |seed| {
        spec.generate(seed).map(|s| s.scenario()).map_err(|e| e.to_string())
    })
    .map_err(config)?;
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| at(dir, e))?;
            let csv = dir.join("comparison.csv");
            let mut w = create(&csv)?;
            cmp.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| at(&csv, e))?;
            write_json(&dir.join("summary.json"), &cmp.summary_json())?;
            print_json(&cmp.summary_json())
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            cmp.write_csv(&mut lock).map_err(|e| CliError::Infra(e.to_string()))
        }
    }
}

pub fn sim_exec(a: SimExecArgs) -> CliResult {
    let spec = load_spec(Some(&a.sim_dir.join(SIM_SPEC)))?;
    let costs: BTreeMap<String, f64> = read_json(&a.sim_dir.join(SIM_COSTS))?;
    let source = fs::read_to_string(&a.model).map_err(|e| at(&a.model, e))?;
    let inst =
        opera_core::harness::instance_from_source(&source).ok_or_else(|| at(&a.model, "missing instance header"))?;
    let artifact = ModelArtifact {
        instance_id: inst.instance_id,
        source,
        path: Some(a.model.clone()),
    };
    let record = SimExecutor::with_costs(spec, &costs)
        .record_for(&artifact)
        .map_err(config)?;
    write_json(&a.result, &record)
}
