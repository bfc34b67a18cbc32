// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_opera");

fn opera(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn sim_exec() -> String {
    format!("{BIN} sim-exec --sim-dir sim {{model}} {{result}}")
}

fn simulate_small(dir: &Path, seed: &str) {
    let out = opera(dir, &["simulate", "--random-spec", "--seed", seed, "--out", "sim"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn plan(dir: &Path, strategy: &str) {
    let out = opera(
        dir,
        &[
            "prioritize",
            "--corpus",
            "sim/corpus.jsonl",
            "--equipped",
            "sim/equipped.jsonl",
            "--coverage",
            "sim/coverage.jsonl",
            "--strategy",
            strategy,
            "--seed",
            "1",
            "--out",
            "plan.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn run(dir: &Path, log: &str, extra: &[&str]) -> Output {
    let exec = sim_exec();
    let mut args = vec![
        "run",
        "--corpus",
        "sim/corpus.jsonl",
        "--plan",
        "plan.json",
        "--executor",
        &exec,
        "--conv-map",
        "sim/conv_map.json",
        "--clock",
        "reported",
        "--log",
        log,
    ];
    args.extend_from_slice(extra);
    opera(dir, &args)
}

fn test_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn simulated_corpus_validates() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path(), "4");
    let out = opera(
        dir.path(),
        &["validate", "sim/corpus.jsonl", "--equipped", "sim/equipped.jsonl"],
    );
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("0 errors"));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("operator,num_dll,num_dlc\n"));
}

#[test]
fn invalid_trace_line_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path(), "4");
    let mut text = fs::read_to_string(dir.path().join("sim/corpus.jsonl")).unwrap();
    text.push_str("{\"instance_id\": \"broken\"}\n");
    fs::write(dir.path().join("bad.jsonl"), text).unwrap();
    let out = opera(dir.path(), &["validate", "bad.jsonl"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn full_campaign_recovers_seeded_bugs() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path(), "7");
    plan(dir.path(), "opera");
    let out = run(dir.path(), "run.jsonl", &["--workers", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = opera(
        dir.path(),
        &[
            "report",
            "run.jsonl",
            "--conv-map",
            "sim/conv_map.json",
            "--bugs",
            "sim/bugs.json",
            "--plan",
            "plan.json",
            "--timeline",
            "timeline.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let found: BTreeSet<String> = report["unique_bugs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| {
            format!(
                "{}#{}",
                b["conversion_function"].as_str().unwrap(),
                b["kind"].as_str().unwrap()
            )
        })
        .collect();
    let bugs: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sim/bugs.json")).unwrap()).unwrap();
    let truth: BTreeSet<String> = bugs["detects"].as_object().unwrap().keys().cloned().collect();
    assert_eq!(found, truth);
    assert!(report["time_to_all_bugs"]["seconds"].as_f64().unwrap() > 0.0);
    let apfd = report["apfd"]["apfd"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&apfd));
    let timeline = fs::read_to_string(dir.path().join("timeline.csv")).unwrap();
    assert_eq!(timeline.lines().count(), truth.len() + 1);
}

#[test]
fn resumed_run_matches_fresh_run() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path(), "11");
    plan(dir.path(), "random");
    assert_eq!(code(&run(dir.path(), "part.jsonl", &["--max-tests", "3"])), 0);
    // Simulate an interrupted write.
    let part = dir.path().join("part.jsonl");
    let text = fs::read_to_string(&part).unwrap();
    fs::write(&part, &text[..text.len() - 7]).unwrap();
    assert_eq!(code(&run(dir.path(), "part.jsonl", &["--resume"])), 0);
    assert_eq!(code(&run(dir.path(), "fresh.jsonl", &[])), 0);
    assert_eq!(test_lines(&part), test_lines(&dir.path().join("fresh.jsonl")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path(), "2");
    plan(dir.path(), "opera");
    let base = [
        "run",
        "--corpus",
        "sim/corpus.jsonl",
        "--plan",
        "plan.json",
        "--max-tests",
        "2",
        "--executor",
    ];
    let with = |exec: &str| {
        let mut args = base.to_vec();
        args.push(exec);
        code(&opera(dir.path(), &args))
    };
    assert_eq!(with("true"), 1, "template without placeholders");
    assert_eq!(with("true {model} {result}"), 2, "no result file with exit 0");
    assert_eq!(with("false {model} {result}"), 0, "nonzero exit is a compile crash");
    assert_eq!(
        code(&opera(
            dir.path(),
            &["prioritize", "--corpus", "sim/corpus.jsonl", "--strategy", "bogus"]
        )),
        1
    );
    assert_eq!(
        code(&opera(
            dir.path(),
            &["prioritize", "--corpus", "sim/corpus.jsonl", "--strategy", "total"]
        )),
        1
    );
    assert_eq!(code(&opera(dir.path(), &["report", "missing.jsonl"])), 1);
    assert_eq!(code(&opera(dir.path(), &["--help"])), 0);
}

#[test]
fn compare_strategies_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = opera(
        dir.path(),
        &[
            "compare-strategies",
            "--seeds",
            "2",
            "--strategies",
            "opera,random",
            "--out",
            "cmp",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("cmp/comparison.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "strategy,seed,apfd,time_to_all_bugs_s,bugs_detected");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("opera,0,") && lines[3].starts_with("random,0,"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cmp/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["strategies"].as_array().unwrap().len(), 2);
}

#[test]
fn sim_exec_writes_a_record() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path(), "5");
    plan(dir.path(), "opera");
    assert_eq!(
        code(&run(
            dir.path(),
            "run.jsonl",
            &["--max-tests", "1", "--work-dir", "work"]
        )),
        0
    );
    let models: Vec<_> = fs::read_dir(dir.path().join("work/models")).unwrap().collect();
    assert_eq!(models.len(), 1);
    let model = models[0].as_ref().unwrap().path();
    let out = opera(
        dir.path(),
        &["sim-exec", "--sim-dir", "sim", model.to_str().unwrap(), "rec.json"],
    );
    assert_eq!(code(&out), 0);
    let rec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("rec.json")).unwrap()).unwrap();
    assert!(rec["instance_id"].is_string());
}
