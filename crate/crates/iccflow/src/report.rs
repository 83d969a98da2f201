//! Report assembly and the command entry points the CLI wraps.
//!
//! A report carries one record per verdict plus a summary: counts per
//! threat type, accuracy against supplied ground truth (never
//! self-certified), and stage timings. The machine format is JSON and
//! round-trips exactly; the human format is a fixed-width table. In test
//! mode all timing fields are zeroed so reports are byte-stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analyzer::{analyze, AnalyzeOptions, AnalyzerError, StageTimings, ThreatVerdict};
use crate::catalog::Catalogs;
use crate::logfmt::{write_log, AppMetadata, MetaError};
use crate::model::{ComponentId, ThreatType};
use crate::monitor::{run_scenario, SimOptions};
use crate::scenario::{
    builtin_corpus, corpus_from_dir, parse_scenario, ExpectedVerdict, Scenario, ScenarioError,
    CORPUS_DIR_ENV,
};

pub const REPORT_MAGIC: &str = "ICCREPORT";
pub const REPORT_VERSION: u32 = 1;

/// One verdict, tagged with the scenario or log it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportVerdict {
    pub scenario: String,
    #[serde(flatten)]
    pub verdict: ThreatVerdict,
}

/// Accuracy against supplied ground truth, in the usual
/// precision = matched/(matched + false positives),
/// recall = matched/planted form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub planted: usize,
    pub matched: usize,
    pub false_positives: usize,
    pub missed: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub counts: BTreeMap<String, usize>,
    pub models_raw: usize,
    pub models_final: usize,
    pub accuracy: Option<AccuracySummary>,
    pub timings: StageTimings,
    pub per_model_mean_ms: f64,
}

/// The full machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub verdicts: Vec<ReportVerdict>,
    pub summary: ReportSummary,
}

/// Failures across the whole pipeline, labeled by stage.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("metadata: {0}")]
    Meta(#[from] MetaError),
    #[error("analyze: {0}")]
    Analyzer(#[from] AnalyzerError),
    #[error("report: {0}")]
    Report(String),
}

/// Options shared by the report-producing commands.
#[derive(Debug, Clone, Default)]
pub struct CmdOptions {
    /// Zero timestamps and timing fields for byte-stable output.
    pub test_mode: bool,
    /// Sink-blind comparison mode (see [`AnalyzeOptions::ignore_sinks`]).
    pub ignore_sinks: bool,
    /// Restrict analysis to these process ids (default: all apps in the
    /// metadata).
    pub focus: Option<std::collections::BTreeSet<u32>>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let report: Report =
            serde_json::from_str(text).map_err(|e| PipelineError::Report(e.to_string()))?;
        if report.format != REPORT_MAGIC {
            return Err(PipelineError::Report(format!(
                "bad report magic '{}'",
                report.format
            )));
        }
        if report.version != REPORT_VERSION {
            return Err(PipelineError::Report(format!(
                "unsupported report version {}",
                report.version
            )));
        }
        Ok(report)
    }

    pub fn threat_count(&self) -> usize {
        self.verdicts
            .iter()
            .filter(|v| v.verdict.threat != ThreatType::None)
            .count()
    }

    /// Render the fixed-width human-readable table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "report: {}", self.name);
        let _ = writeln!(
            out,
            "{:<28} {:<34} {:<34} {:<10} {:<4}",
            "SCENARIO", "SENDER", "RECEIVER", "THREAT", "CASE"
        );
        for record in &self.verdicts {
            let verdict = &record.verdict;
            let receiver = verdict
                .receiver_components
                .first()
                .map(ComponentId::to_string)
                .unwrap_or_else(|| "-".to_string());
            let case = verdict
                .matched_case
                .map(|c| c.to_string())
                .unwrap_or_else(|| "-".to_string());
            let _ = writeln!(
                out,
                "{:<28} {:<34} {:<34} {:<10} {:<4}",
                record.scenario,
                verdict.sender_component.to_string(),
                receiver,
                verdict.threat.to_string(),
                case
            );
            if verdict.threat != ThreatType::None {
                for (field, value) in &verdict.evidence {
                    let _ = writeln!(out, "    evidence {field} = {value}");
                }
                for line in &verdict.provenance {
                    let _ = writeln!(out, "    provenance {line}");
                }
            }
        }
        let counts = self
            .summary
            .counts
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(out, "summary: {counts}");
        let _ = writeln!(
            out,
            "models: raw={} final={}",
            self.summary.models_raw, self.summary.models_final
        );
        if let Some(acc) = &self.summary.accuracy {
            let _ = writeln!(
                out,
                "ground truth: planted={} detected={} false_positives={} missed={} precision={:.2} recall={:.2}",
                acc.planted, acc.matched, acc.false_positives, acc.missed, acc.precision, acc.recall
            );
        }
        let t = &self.summary.timings;
        let _ = writeln!(
            out,
            "timing: parse={:.3}ms build={:.3}ms deflate={:.3}ms trace={:.3}ms classify={:.3}ms total={:.3}ms per-model-mean={:.3}ms",
            t.parse_ms, t.build_ms, t.deflate_ms, t.trace_ms, t.classify_ms, t.total_ms,
            self.summary.per_model_mean_ms
        );
        out
    }
}

/// Match found verdicts against planted ground truth. A threat verdict
/// matches a planted path when sender component, receiver component and
/// threat type all agree; each planted path can be matched once.
pub fn score_verdicts(verdicts: &[ThreatVerdict], expected: &[ExpectedVerdict]) -> AccuracySummary {
    let mut matched_planted = vec![false; expected.len()];
    let mut matched = 0usize;
    let mut false_positives = 0usize;
    for verdict in verdicts {
        if verdict.threat == ThreatType::None {
            continue;
        }
        let hit = expected.iter().enumerate().find(|(i, exp)| {
            !matched_planted[*i]
                && exp.threat == verdict.threat
                && exp.sender == verdict.sender_component
                && verdict.receiver_components.contains(&exp.receiver)
        });
        match hit {
            Some((i, _)) => {
                matched_planted[i] = true;
                matched += 1;
            }
            None => false_positives += 1,
        }
    }
    let planted = expected.len();
    let precision = if matched + false_positives == 0 {
        1.0
    } else {
        matched as f64 / (matched + false_positives) as f64
    };
    let recall = if planted == 0 {
        1.0
    } else {
        matched as f64 / planted as f64
    };
    AccuracySummary {
        planted,
        matched,
        false_positives,
        missed: planted - matched,
        precision,
        recall,
    }
}

fn count_threats(verdicts: &[ReportVerdict]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in ["hijacking", "spoofing", "collusion", "none"] {
        counts.insert(t.to_string(), 0);
    }
    for record in verdicts {
        *counts
            .entry(record.verdict.threat.as_str().to_string())
            .or_insert(0) += 1;
    }
    counts
}

/// Text file of `expect <pkg>/<comp> -> <pkg>/<comp> <threat>` lines, the
/// same syntax scenario documents use.
pub fn parse_expected_file(text: &str) -> Result<Vec<ExpectedVerdict>, PipelineError> {
    let mut expected = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["expect", sender, "->", receiver, threat] => {
                expected.push(ExpectedVerdict {
                    sender: ComponentId::from_str(sender)
                        .map_err(|e| PipelineError::Report(format!("line {}: {e}", idx + 1)))?,
                    receiver: ComponentId::from_str(receiver)
                        .map_err(|e| PipelineError::Report(format!("line {}: {e}", idx + 1)))?,
                    threat: ThreatType::from_str(threat)
                        .map_err(|e| PipelineError::Report(format!("line {}: {e}", idx + 1)))?,
                });
            }
            _ => {
                return Err(PipelineError::Report(format!(
                    "line {}: expected 'expect <sender> -> <receiver> <threat>'",
                    idx + 1
                )))
            }
        }
    }
    Ok(expected)
}

/// Output paths of a simulator run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log_path: PathBuf,
    pub meta_path: PathBuf,
}

/// Simulate a scenario file and write the taint log and metadata sidecar.
pub fn cmd_run(
    scenario_path: &Path,
    log_path: Option<PathBuf>,
    meta_path: Option<PathBuf>,
    catalogs: &Catalogs,
    opts: &CmdOptions,
) -> Result<RunOutput, PipelineError> {
    let text = fs::read_to_string(scenario_path)?;
    let scenario = parse_scenario(&text, catalogs)?;
    let result = run_scenario(
        &scenario,
        catalogs,
        SimOptions {
            test_mode: opts.test_mode,
        },
    );
    let meta = AppMetadata::from_scenario(&scenario);
    let stem = scenario_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "scenario".to_string());
    let log_path =
        log_path.unwrap_or_else(|| scenario_path.with_file_name(format!("{stem}.icclog")));
    let meta_path =
        meta_path.unwrap_or_else(|| scenario_path.with_file_name(format!("{stem}.meta.toml")));
    fs::write(&log_path, write_log(&result.log))?;
    fs::write(&meta_path, meta.to_toml_string())?;
    Ok(RunOutput {
        log_path,
        meta_path,
    })
}

fn build_report(
    name: &str,
    scenario_name: &str,
    log_text: &str,
    meta: &AppMetadata,
    expected: Option<&[ExpectedVerdict]>,
    catalogs: &Catalogs,
    opts: &CmdOptions,
) -> Result<Report, PipelineError> {
    let focus = opts.focus.clone().unwrap_or_else(|| meta.pids());
    let outcome = analyze(
        log_text,
        meta,
        Some(&focus),
        catalogs,
        AnalyzeOptions {
            ignore_sinks: opts.ignore_sinks,
        },
    )?;
    let verdicts: Vec<ReportVerdict> = outcome
        .verdicts
        .iter()
        .map(|v| ReportVerdict {
            scenario: scenario_name.to_string(),
            verdict: v.clone(),
        })
        .collect();
    let accuracy = expected.map(|exp| score_verdicts(&outcome.verdicts, exp));
    let timings = if opts.test_mode {
        StageTimings::default()
    } else {
        outcome.timings
    };
    let per_model_mean_ms = if opts.test_mode || outcome.models.is_empty() {
        0.0
    } else {
        outcome.timings.total_ms / outcome.models.len() as f64
    };
    Ok(Report {
        format: REPORT_MAGIC.to_string(),
        version: REPORT_VERSION,
        name: name.to_string(),
        summary: ReportSummary {
            counts: count_threats(&verdicts),
            models_raw: outcome.raw_model_count,
            models_final: outcome.models.len(),
            accuracy,
            timings,
            per_model_mean_ms,
        },
        verdicts,
    })
}

/// Analyze a log file against its metadata sidecar.
pub fn cmd_analyze(
    log_path: &Path,
    meta_path: &Path,
    expected_path: Option<&Path>,
    catalogs: &Catalogs,
    opts: &CmdOptions,
) -> Result<Report, PipelineError> {
    let log_text = fs::read_to_string(log_path)?;
    let meta = AppMetadata::from_toml_str(&fs::read_to_string(meta_path)?)?;
    let expected = match expected_path {
        Some(path) => Some(parse_expected_file(&fs::read_to_string(path)?)?),
        None => None,
    };
    let name = log_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "log".to_string());
    build_report(
        &name,
        &name,
        &log_text,
        &meta,
        expected.as_deref(),
        catalogs,
        opts,
    )
}

/// Run one scenario end to end: simulate in memory, analyze, and score
/// against the scenario's own planted ground truth.
pub fn e2e_scenario(
    scenario: &Scenario,
    catalogs: &Catalogs,
    opts: &CmdOptions,
) -> Result<Report, PipelineError> {
    let result = run_scenario(
        scenario,
        catalogs,
        SimOptions {
            test_mode: opts.test_mode,
        },
    );
    let meta = AppMetadata::from_scenario(scenario);
    let log_text = write_log(&result.log);
    build_report(
        &scenario.name,
        &scenario.name,
        &log_text,
        &meta,
        Some(&scenario.expected_verdicts),
        catalogs,
        opts,
    )
}

/// `cmd_run` followed by `cmd_analyze`, in one step and without temp files.
pub fn cmd_e2e(
    scenario_path: &Path,
    catalogs: &Catalogs,
    opts: &CmdOptions,
) -> Result<Report, PipelineError> {
    let text = fs::read_to_string(scenario_path)?;
    let scenario = parse_scenario(&text, catalogs)?;
    e2e_scenario(&scenario, catalogs, opts)
}

/// The corpus used by the batch command: the builtin corpus, or the
/// contents of the directory named by the corpus override variable.
pub fn effective_corpus(catalogs: &Catalogs) -> Result<Vec<Scenario>, PipelineError> {
    match std::env::var_os(CORPUS_DIR_ENV) {
        Some(dir) => Ok(corpus_from_dir(Path::new(&dir), catalogs)?
            .into_iter()
            .map(|(_, s)| s)
            .collect()),
        None => Ok(builtin_corpus(catalogs)),
    }
}

/// Run every corpus scenario end to end and merge the per-scenario reports
/// into one aggregate with overall accuracy.
pub fn corpus_batch(catalogs: &Catalogs, opts: &CmdOptions) -> Result<Report, PipelineError> {
    let started = std::time::Instant::now();
    let corpus = effective_corpus(catalogs)?;
    let mut verdicts = Vec::new();
    let mut planted = Vec::new();
    let mut models_raw = 0;
    let mut models_final = 0;
    let mut all_verdicts_flat = Vec::new();
    for scenario in &corpus {
        let report = e2e_scenario(scenario, catalogs, opts)?;
        models_raw += report.summary.models_raw;
        models_final += report.summary.models_final;
        for record in &report.verdicts {
            all_verdicts_flat.push(record.verdict.clone());
        }
        verdicts.extend(report.verdicts);
        planted.extend(scenario.expected_verdicts.iter().cloned());
    }
    let accuracy = Some(score_verdicts(&all_verdicts_flat, &planted));
    let total_ms = started.elapsed().as_secs_f64() * 1e3;
    let timings = if opts.test_mode {
        StageTimings::default()
    } else {
        StageTimings {
            total_ms,
            ..Default::default()
        }
    };
    let per_model_mean_ms = if opts.test_mode || models_final == 0 {
        0.0
    } else {
        total_ms / models_final as f64
    };
    Ok(Report {
        format: REPORT_MAGIC.to_string(),
        version: REPORT_VERSION,
        name: "corpus".to_string(),
        summary: ReportSummary {
            counts: count_threats(&verdicts),
            models_raw,
            models_final,
            accuracy,
            timings,
            per_model_mean_ms,
        },
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::corpus_scenario;

    #[test]
    fn corpus_batch_reaches_full_accuracy() {
        let catalogs = Catalogs::default();
        let report = corpus_batch(
            &catalogs,
            &CmdOptions {
                test_mode: true,
                ..Default::default()
            },
        )
        .expect("batch runs");
        let acc = report.summary.accuracy.expect("accuracy present");
        assert_eq!(acc.precision, 1.0, "false positives: {:#?}", report
            .verdicts
            .iter()
            .filter(|v| v.verdict.threat != ThreatType::None)
            .collect::<Vec<_>>());
        assert_eq!(acc.recall, 1.0, "missed {} of {}", acc.missed, acc.planted);
    }

    #[test]
    fn report_json_round_trips() {
        let catalogs = Catalogs::default();
        let scenario = corpus_scenario("hijack_location", &catalogs).unwrap();
        let report = e2e_scenario(
            &scenario,
            &catalogs,
            &CmdOptions {
                test_mode: true,
                ..Default::default()
            },
        )
        .unwrap();
        let json = report.to_json();
        let back = Report::from_json(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn benign_scenarios_produce_no_threats() {
        let catalogs = Catalogs::default();
        for name in ["benign_url_internet", "benign_location_unused", "coincidental_format"] {
            let scenario = corpus_scenario(name, &catalogs).unwrap();
            let report = e2e_scenario(
                &scenario,
                &catalogs,
                &CmdOptions {
                    test_mode: true,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(report.threat_count(), 0, "{name}");
        }
    }

    #[test]
    fn scoring_counts_false_positives_and_misses() {
        let catalogs = Catalogs::default();
        let scenario = corpus_scenario("hijack_location", &catalogs).unwrap();
        let report = e2e_scenario(
            &scenario,
            &catalogs,
            &CmdOptions {
                test_mode: true,
                ..Default::default()
            },
        )
        .unwrap();
        let found: Vec<_> = report.verdicts.iter().map(|r| r.verdict.clone()).collect();

        // correct expectation matches
        let acc = score_verdicts(&found, &scenario.expected_verdicts);
        assert_eq!((acc.matched, acc.false_positives, acc.missed), (1, 0, 0));

        // wrong threat type: the find counts as a false positive and the
        // planted path stays missed
        let mut wrong = scenario.expected_verdicts.clone();
        wrong[0].threat = ThreatType::Collusion;
        let acc = score_verdicts(&found, &wrong);
        assert_eq!((acc.matched, acc.false_positives, acc.missed), (0, 1, 1));
        assert_eq!(acc.precision, 0.0);
        assert_eq!(acc.recall, 0.0);
    }

    #[test]
    fn expected_file_parser_accepts_expect_lines() {
        let text = "# ground truth\nexpect com.a/Main -> com.b/Recv hijacking\n";
        let expected = parse_expected_file(text).unwrap();
        assert_eq!(expected.len(), 1);
        assert_eq!(expected[0].threat, ThreatType::Hijacking);
        assert!(parse_expected_file("nonsense line\n").is_err());
    }
}
