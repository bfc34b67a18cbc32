// SPDX-License-Identifier: Apache-2.0

//! Campaign orchestration: render each planned instance, hand it to an
//! executor, judge the record and append the verdict to the run log.

mod executor;
mod render;
mod runlog;

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Library, OperatorInstance};
use crate::oracle::{classify, OracleConfig};
use crate::prioritization::PrioritizedPlan;

pub use executor::{ExecError, Executor, ExecutorSpec, ExecutorSpecError, ProcessExecutor, STDERR_EXCERPT_BYTES};
pub use render::{file_stem, instance_from_source, render_model, ModelArtifact, RenderError, HEADER_PREFIX};
pub use runlog::{RunEntry, RunHeader, RunLog, RunLogError, TimelinePoint};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("campaign configuration: {0}")]
    Config(String),
    #[error("plan names {0:?}, which is not in the corpus")]
    UnknownInstance(String),
    #[error("resumed log was written by strategy {found} seed {found_seed}, plan is {expected} seed {expected_seed}")]
    ResumeMismatch {
        found: String,
        found_seed: u64,
        expected: String,
        expected_seed: u64,
    },
    #[error("writing run log: {0}")]
    Io(#[from] std::io::Error),
}

/// Stop conditions; unset limits do not apply.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub max_tests: Option<usize>,
    pub wall_clock_s: Option<f64>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Budget::default()
    }

    pub fn tests(n: usize) -> Self {
        Budget {
            max_tests: Some(n),
            wall_clock_s: None,
        }
    }

    pub fn seconds(s: f64) -> Self {
        Budget {
            max_tests: None,
            wall_clock_s: Some(s),
        }
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        if self.max_tests == Some(0) {
            return Err(HarnessError::Config("test budget must be positive".into()));
        }
        if let Some(s) = self.wall_clock_s {
            if !(s > 0.0 && s.is_finite()) {
                return Err(HarnessError::Config(format!("time budget must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// How time offsets are measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Real elapsed time.
    #[default]
    Wall,
    /// Sum of the `wall_time_s` values executors report, per worker. Makes
    /// campaigns against simulated frontends reproducible.
    Reported,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub budget: Budget,
    pub clock: Clock,
    pub workers: usize,
    /// Where model files go; required by executors that read files.
    pub artifact_dir: Option<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            budget: Budget::unlimited(),
            clock: Clock::Wall,
            workers: 1,
            artifact_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutcome {
    pub log: RunLog,
    /// Planned tests were left unrun because a limit was reached.
    pub budget_exhausted: bool,
    pub skipped: usize,
}

struct Shared<'a> {
    queue: Vec<&'a OperatorInstance>,
    next: Mutex<(usize, usize)>,
    exhausted: AtomicBool,
}

#[allow(clippy::too_many_arguments)]
fn worker_loop(
    worker: usize,
    shared: &Shared<'_>,
    cfg: &CampaignConfig,
    executor: &dyn Executor,
    oracle: &OracleConfig,
    base_s: f64,
    started: Instant,
    tx: mpsc::Sender<RunEntry>,
) {
    let mut reported = base_s;
    loop {
        let now = match cfg.clock {
            Clock::Wall => base_s + started.elapsed().as_secs_f64(),
            Clock::Reported => reported,
        };
        let inst = {
            let mut guard = shared.next.lock().expect("scheduler lock");
            let (next, launched) = &mut *guard;
            if *next >= shared.queue.len() {
                return;
            }
            let over_count = cfg.budget.max_tests.is_some_and(|m| *launched >= m);
            let over_time = cfg.budget.wall_clock_s.is_some_and(|b| now >= b);
            if over_count || over_time {
                shared.exhausted.store(true, Ordering::Relaxed);
                return;
            }
            let inst = shared.queue[*next];
            *next += 1;
            *launched += 1;
            inst
        };

        let t0 = Instant::now();
        let outcome = run_one(inst, cfg, executor);
        let measured = t0.elapsed().as_secs_f64();
        let (verdict, skipped, reported_s) = match outcome {
            Ok(rec) => (Some(classify(&rec, oracle)), None, rec.wall_time_s),
            Err(reason) => (None, Some(reason), 0.0),
        };
        let duration_s = match cfg.clock {
            Clock::Wall => measured,
            Clock::Reported => reported_s,
        };
        reported += duration_s;
        let entry = RunEntry {
            instance_id: inst.instance_id.clone(),
            op_signature: inst.op_signature.clone(),
            worker,
            start_s: now,
            duration_s,
            verdict,
            skipped,
        };
        if tx.send(entry).is_err() {
            return;
        }
    }
}

fn run_one(
    inst: &OperatorInstance,
    cfg: &CampaignConfig,
    executor: &dyn Executor,
) -> Result<crate::oracle::ExecutionRecord, String> {
    let mut artifact = render_model(inst).map_err(|e| e.to_string())?;
    if executor.needs_files() {
        let dir = cfg.artifact_dir.as_deref().expect("checked before launch");
        artifact.write_to(dir).map_err(|e| e.to_string())?;
    }
    executor.execute(&artifact, inst).map_err(|e| e.to_string())
}

/// Executes `plan` in order until it is exhausted or a budget limit hits.
///
/// With `resume`, tests already in that log are not run again and new
/// offsets continue after its last completion. New log lines (including the
/// header, for a fresh campaign) are streamed to `sink` as they complete.
pub fn run_campaign(
    cfg: &CampaignConfig,
    corpus: &[OperatorInstance],
    plan: &PrioritizedPlan,
    executor: &dyn Executor,
    oracle: &OracleConfig,
    resume: Option<RunLog>,
    mut sink: Option<&mut dyn Write>,
) -> Result<CampaignOutcome, HarnessError> {
    cfg.budget.check()?;
    if cfg.workers == 0 {
        return Err(HarnessError::Config("at least one worker is needed".into()));
    }
    if executor.needs_files() {
        match &cfg.artifact_dir {
            Some(dir) => std::fs::create_dir_all(dir)?,
            None => return Err(HarnessError::Config("this executor needs an artifact directory".into())),
        }
    }
    let by_id: HashMap<&str, &OperatorInstance> = corpus.iter().map(|i| (i.instance_id.as_str(), i)).collect();

    let mut log = match resume {
        Some(prev) => {
            if prev.header.strategy != plan.strategy.as_str() || prev.header.seed != plan.seed {
                return Err(HarnessError::ResumeMismatch {
                    found: prev.header.strategy,
                    found_seed: prev.header.seed,
                    expected: plan.strategy.to_string(),
                    expected_seed: plan.seed,
                });
            }
            prev
        }
        None => {
            let log = RunLog::new(RunHeader {
                strategy: plan.strategy.to_string(),
                seed: plan.seed,
                prioritization_time_s: plan.prioritization_time_s,
            });
            if let Some(w) = sink.as_mut() {
                writeln!(w, "{}", log.header_line())?;
            }
            log
        }
    };

    let done = log.completed_ids();
    let mut queue = Vec::new();
    for id in plan.ids() {
        let inst = *by_id
            .get(id)
            .ok_or_else(|| HarnessError::UnknownInstance(id.to_string()))?;
        if let Library::Other(name) = &inst.library {
            return Err(HarnessError::Config(format!(
                "{id}: library {name:?} has no model template"
            )));
        }
        if !done.contains(id) {
            queue.push(inst);
        }
    }
    drop(done);

    let base_s = log.elapsed_s();
    let shared = Shared {
        queue,
        next: Mutex::new((0, log.entries.len())),
        exhausted: AtomicBool::new(false),
    };
    let started = Instant::now();
    let (tx, rx) = mpsc::channel();
    let mut io_error = None;
    std::thread::scope(|scope| {
        for worker in 0..cfg.workers {
            let tx = tx.clone();
            let shared = &shared;
            scope.spawn(move || worker_loop(worker, shared, cfg, executor, oracle, base_s, started, tx));
        }
        drop(tx);
        for entry in rx {
            if io_error.is_none() {
                if let Some(w) = sink.as_mut() {
                    if let Err(e) = writeln!(w, "{}", RunLog::entry_line(&entry)).and_then(|_| w.flush()) {
                        io_error = Some(e);
                    }
                }
            }
            log.entries.push(entry);
        }
    });
    if let Some(e) = io_error {
        return Err(e.into());
    }
    let skipped = log.entries.iter().filter(|e| e.skipped.is_some()).count();
    Ok(CampaignOutcome {
        log,
        budget_exhausted: shared.exhausted.load(Ordering::Relaxed),
        skipped,
    })
}
