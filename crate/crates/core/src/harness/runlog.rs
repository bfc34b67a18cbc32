// SPDX-License-Identifier: Apache-2.0

//! Campaign log: a header line followed by one line per executed test.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{dedup, Failure, OracleConfig, OracleKind, UniqueBug, Verdict};

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("run log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("run log has no header line")]
    MissingHeader,
    #[error("reading run log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunHeader {
    pub strategy: String,
    pub seed: u64,
    #[serde(default)]
    pub prioritization_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub instance_id: String,
    pub op_signature: String,
    #[serde(default)]
    pub worker: usize,
    /// Offset from campaign start, in seconds.
    pub start_s: f64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Infrastructure failure; the test was not judged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl RunEntry {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum LogLine {
    Header(RunHeader),
    Test(RunEntry),
}

/// A point where the unique-bug count steps up.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelinePoint {
    pub offset_s: f64,
    pub instance_id: String,
    pub conversion_function: String,
    pub kind: OracleKind,
    pub unique_bugs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub entries: Vec<RunEntry>,
}

impl RunLog {
    pub fn new(header: RunHeader) -> Self {
        RunLog {
            header,
            entries: Vec::new(),
        }
    }

    pub fn header_line(&self) -> String {
        serde_json::to_string(&LogLine::Header(self.header.clone())).expect("headers serialize")
    }

    pub fn entry_line(entry: &RunEntry) -> String {
        serde_json::to_string(&LogLine::Test(entry.clone())).expect("entries serialize")
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header_line())?;
        for e in &self.entries {
            writeln!(w, "{}", Self::entry_line(e))?;
        }
        Ok(())
    }

    /// Reads a log, tolerating a truncated final line from an interrupted run.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, RunLogError> {
        let mut header = None;
        let mut entries = Vec::new();
        let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
        let last = lines.iter().rposition(|l| !l.trim().is_empty());
        for (idx, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine = match serde_json::from_str(line) {
                Ok(p) => p,
                Err(_) if Some(idx) == last && header.is_some() => break,
                Err(e) => {
                    return Err(RunLogError::Parse {
                        line: idx + 1,
                        message: e.to_string(),
                    })
                }
            };
            let err = |message: &str| RunLogError::Parse {
                line: idx + 1,
                message: message.to_string(),
            };
            match parsed {
                LogLine::Header(h) if header.is_none() => header = Some(h),
                LogLine::Header(_) => return Err(err("second header line")),
                LogLine::Test(_) if header.is_none() => return Err(err("test line before header")),
                LogLine::Test(e) => {
                    if e.verdict.is_some() == e.skipped.is_some() {
                        return Err(err("a test line needs exactly one of verdict or skipped"));
                    }
                    entries.push(e);
                }
            }
        }
        Ok(RunLog {
            header: header.ok_or(RunLogError::MissingHeader)?,
            entries,
        })
    }

    pub fn completed_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.instance_id.as_str()).collect()
    }

    /// Latest completion offset.
    pub fn elapsed_s(&self) -> f64 {
        self.entries.iter().map(RunEntry::end_s).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<Failure> {
        self.entries
            .iter()
            .filter_map(|e| {
                let v = e.verdict.as_ref()?;
                v.is_bug().then(|| Failure {
                    instance_id: e.instance_id.clone(),
                    op_signature: e.op_signature.clone(),
                    verdict: v.clone(),
                })
            })
            .collect()
    }

    pub fn unique_bugs(&self, cfg: &OracleConfig) -> Vec<UniqueBug> {
        dedup(&self.failures(), cfg)
    }

    /// Unique-bug count over completion time.
    pub fn timeline(&self, cfg: &OracleConfig) -> Vec<TimelinePoint> {
        let mut order: Vec<&RunEntry> = self.entries.iter().collect();
        order.sort_by(|a, b| a.end_s().total_cmp(&b.end_s()));
        let mut seen = BTreeSet::new();
        let mut points = Vec::new();
        for e in order {
            let Some(kind) = e.verdict.as_ref().and_then(Verdict::oracle_kind) else {
                continue;
            };
            let func = cfg.conversion_function(&e.op_signature).to_string();
            if seen.insert((func.clone(), kind)) {
                points.push(TimelinePoint {
                    offset_s: e.end_s(),
                    instance_id: e.instance_id.clone(),
                    conversion_function: func,
                    kind,
                    unique_bugs: seen.len(),
                });
            }
        }
        points
    }

    pub fn write_timeline_csv<W: Write>(&self, cfg: &OracleConfig, mut w: W) -> std::io::Result<()> {
        writeln!(w, "offset_s,unique_bugs,instance_id,conversion_function,kind")?;
        for p in self.timeline(cfg) {
            writeln!(
                w,
                "{:.3},{},{},{},{}",
                p.offset_s,
                p.unique_bugs,
                csv_field(&p.instance_id),
                csv_field(&p.conversion_function),
                p.kind.as_str()
            )?;
        }
        Ok(())
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, op: &str, start: f64, dur: f64, verdict: Verdict) -> RunEntry {
        RunEntry {
            instance_id: id.into(),
            op_signature: op.into(),
            worker: 0,
            start_s: start,
            duration_s: dur,
            verdict: Some(verdict),
            skipped: None,
        }
    }

    fn sample() -> RunLog {
        let mut log = RunLog::new(RunHeader {
            strategy: "opera".into(),
            seed: 3,
            prioritization_time_s: 0.5,
        });
        let crash = Verdict::CrashBug { message: "x".into() };
        log.entries.push(entry("a", "OpA", 0.0, 1.0, Verdict::Pass));
        log.entries.push(entry("b", "OpA", 1.0, 2.0, crash.clone()));
        log.entries.push(entry("c", "OpA", 3.0, 1.0, crash));
        log.entries
            .push(entry("d", "OpB", 4.0, 1.5, Verdict::InconsistencyBug { distance: 0.5 }));
        log.entries.push(RunEntry {
            verdict: None,
            skipped: Some("no result".into()),
            ..entry("e", "OpB", 5.5, 0.1, Verdict::Pass)
        });
        log
    }

    #[test]
    fn round_trip() {
        let log = sample();
        let mut buf = Vec::new();
        log.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(r#"{"header":{"strategy":"opera","seed":3,"prioritization_time_s":0.5}}"#));
        assert!(text.contains(r#"{"test":{"instance_id":"a","op_signature":"OpA","worker":0,"start_s":0.0,"duration_s":1.0,"verdict":{"kind":"pass"}}}"#));
        assert_eq!(RunLog::parse(text.as_bytes()).unwrap(), log);
    }

    #[test]
    fn truncated_tail_tolerated() {
        let mut buf = Vec::new();
        sample().write(&mut buf).unwrap();
        buf.extend_from_slice(b"{\"test\":{\"instance_id\":\"f\",");
        assert_eq!(RunLog::parse(buf.as_slice()).unwrap().entries.len(), 5);
    }

    #[test]
    fn malformed_logs_rejected() {
        assert!(matches!(RunLog::parse("".as_bytes()), Err(RunLogError::MissingHeader)));
        let no_verdict = "{\"header\":{\"strategy\":\"random\",\"seed\":0}}\n{\"test\":{\"instance_id\":\"a\",\"op_signature\":\"x\",\"start_s\":0,\"duration_s\":0}}\n{\"header\":{\"strategy\":\"random\",\"seed\":0}}";
        assert!(matches!(
            RunLog::parse(no_verdict.as_bytes()),
            Err(RunLogError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn timeline_steps_on_new_keys() {
        let t = sample().timeline(&OracleConfig::default());
        assert_eq!(t.len(), 2);
        assert_eq!(
            (t[0].offset_s, t[0].unique_bugs, t[0].instance_id.as_str()),
            (3.0, 1, "b")
        );
        assert_eq!((t[1].offset_s, t[1].unique_bugs), (5.5, 2));
        let mut csv = Vec::new();
        sample().write_timeline_csv(&OracleConfig::default(), &mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "3.000,1,b,OpA,crash");
    }

    #[test]
    fn failures_and_dedup() {
        let log = sample();
        assert_eq!(log.failures().len(), 3);
        assert_eq!(log.unique_bugs(&OracleConfig::default()).len(), 2);
        assert_eq!(log.elapsed_s(), 5.6);
        assert_eq!(csv_field("a,b"), "\"a,b\"");
    }
}
