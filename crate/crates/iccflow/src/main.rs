use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use iccflow::catalog::Catalogs;
use iccflow::report::{
    cmd_analyze, cmd_e2e, cmd_run, corpus_batch, CmdOptions, PipelineError, Report,
};
use iccflow::scenario::{corpus_names, corpus_source, CORPUS_DIR_ENV};

/// Simulate Android inter-component communication with taint tracking and
/// analyze the resulting logs for intent hijacking, spoofing and collusion.
#[derive(Parser)]
#[command(name = "iccflow", version, about)]
struct Cli {
    /// Catalog TOML overriding the builtin tag/method catalogs.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum OutputFormat {
    /// Fixed-width human-readable table.
    #[default]
    Table,
    /// Machine-readable JSON.
    Json,
}

#[derive(Args, Clone, Default)]
struct ReportArgs {
    /// Output format.
    #[arg(long, value_enum, default_value = "table")]
    format: OutputFormat,
    /// Exit nonzero when any threat is found (for CI gates).
    #[arg(long)]
    fail_on_threat: bool,
    /// Deterministic output: zero timestamps and timing fields.
    #[arg(long)]
    test_mode: bool,
    /// Comparison mode that ignores whether a sink consumed the data.
    #[arg(long)]
    ignore_sinks: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the taint log plus metadata sidecar.
    Run {
        scenario: PathBuf,
        /// Log output path (default: <scenario>.icclog).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Metadata output path (default: <scenario>.meta.toml).
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Deterministic output: zero the log header timestamp.
        #[arg(long)]
        test_mode: bool,
    },
    /// Analyze a taint log against its metadata sidecar.
    Analyze {
        log: PathBuf,
        /// Metadata sidecar path.
        #[arg(long)]
        meta: PathBuf,
        /// Optional ground-truth file of `expect` lines for accuracy
        /// scoring.
        #[arg(long)]
        expected: Option<PathBuf>,
        /// Restrict analysis to these process ids (comma-separated).
        #[arg(long, value_delimiter = ',')]
        focus: Vec<u32>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Simulate and analyze in one step, scoring against the scenario's
    /// own planted ground truth.
    E2e {
        scenario: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Inspect or run the builtin scenario corpus.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// List builtin scenario names.
    List,
    /// Print one scenario document, or write all of them to a directory.
    Emit {
        /// Scenario name (omit with --all).
        name: Option<String>,
        /// Emit every scenario into this directory.
        #[arg(long)]
        all: Option<PathBuf>,
    },
    /// Run the whole corpus end to end and print the aggregate report.
    Batch {
        #[command(flatten)]
        report: ReportArgs,
    },
}

fn load_catalogs(path: &Option<PathBuf>) -> Result<Catalogs, PipelineError> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            Catalogs::from_toml_str(&text)
                .map_err(|e| PipelineError::Report(format!("catalog: {e}")))
        }
        None => Ok(Catalogs::default()),
    }
}

fn emit_report(report: &Report, args: &ReportArgs) -> ExitCode {
    match args.format {
        OutputFormat::Table => print!("{}", report.render_table()),
        OutputFormat::Json => println!("{}", report.to_json()),
    }
    if args.fail_on_threat && report.threat_count() > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn options_of(args: &ReportArgs, focus: Option<BTreeSet<u32>>) -> CmdOptions {
    CmdOptions {
        test_mode: args.test_mode,
        ignore_sinks: args.ignore_sinks,
        focus,
    }
}

fn run() -> Result<ExitCode, PipelineError> {
    let cli = Cli::parse();
    let catalogs = load_catalogs(&cli.catalog)?;
    match cli.command {
        Command::Run {
            scenario,
            log,
            meta,
            test_mode,
        } => {
            let opts = CmdOptions {
                test_mode,
                ..Default::default()
            };
            let output = cmd_run(&scenario, log, meta, &catalogs, &opts)?;
            println!("log: {}", output.log_path.display());
            println!("meta: {}", output.meta_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze {
            log,
            meta,
            expected,
            focus,
            report: args,
        } => {
            let focus = if focus.is_empty() {
                None
            } else {
                Some(focus.into_iter().collect())
            };
            let report = cmd_analyze(
                &log,
                &meta,
                expected.as_deref(),
                &catalogs,
                &options_of(&args, focus),
            )?;
            Ok(emit_report(&report, &args))
        }
        Command::E2e {
            scenario,
            report: args,
        } => {
            let report = cmd_e2e(&scenario, &catalogs, &options_of(&args, None))?;
            Ok(emit_report(&report, &args))
        }
        Command::Corpus { command } => match command {
            CorpusCommand::List => {
                match std::env::var_os(CORPUS_DIR_ENV) {
                    Some(dir) => {
                        let scenarios = iccflow::scenario::corpus_from_dir(
                            std::path::Path::new(&dir),
                            &catalogs,
                        )?;
                        for (name, _) in scenarios {
                            println!("{name}");
                        }
                    }
                    None => {
                        for name in corpus_names() {
                            println!("{name}");
                        }
                    }
                }
                Ok(ExitCode::SUCCESS)
            }
            CorpusCommand::Emit { name, all } => match (name, all) {
                (Some(name), None) => match corpus_source(&name) {
                    Some(text) => {
                        print!("{text}");
                        Ok(ExitCode::SUCCESS)
                    }
                    None => Err(PipelineError::Report(format!(
                        "no builtin scenario named '{name}'"
                    ))),
                },
                (None, Some(dir)) => {
                    fs::create_dir_all(&dir)?;
                    for name in corpus_names() {
                        let text = corpus_source(name).expect("listed scenario exists");
                        fs::write(dir.join(format!("{name}.scn")), text)?;
                    }
                    println!("wrote {} scenarios to {}", corpus_names().len(), dir.display());
                    Ok(ExitCode::SUCCESS)
                }
                _ => Err(PipelineError::Report(
                    "pass a scenario name or --all <dir>".to_string(),
                )),
            },
            CorpusCommand::Batch { report: args } => {
                let report = corpus_batch(&catalogs, &options_of(&args, None))?;
                Ok(emit_report(&report, &args))
            }
        },
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
