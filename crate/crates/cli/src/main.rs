use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use vivaldi::config::Config;
use vivaldi::eval::{append_jsonl, evaluate, read_jsonl, read_reviews, render_markdown, render_usage_markdown, usage_report, EvalError, PredictionRecord};
use vivaldi::ingest::{build_benchmark, preprocess, read_index, write_index, write_rejection_report, CsvTables, DataPaths, IndexEntry, PatientCase};
use vivaldi::llm::{build_backend, model_profile, BackendMode, ChatBackend, LlmClient, RecordingBackend};
use vivaldi::orchestrator::{run_agentic_case, run_zero_shot_case, CaseRunReport, OrchestratorError, RunConfig, RunMode, UsageFile};
use vivaldi::sandbox::{Executor, StubExecutor, SubprocessExecutor};
use vivaldi::synthetic::{planted_corpus, team_backend, write_corpus, SyntheticExecutor, TeamScript};

#[derive(Parser)]
#[command(name = "vivaldi", version, about = "Explain emergency-department vital signs with a team of LLM agents")]
struct Cli {
    /// TOML file layered over the built-in defaults.
    #[arg(long, global = true, env = "VIVALDI_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess the CSV tables and write the benchmark index.
    BuildIndex {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for index.jsonl and rejections.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the agentic pipeline or the zero-shot baseline on indexed cases.
    Run(RunArgs),
    /// Score predictions (and optional reviews) into eval.json and eval.md.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        reviews: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate per-case usage.json files into a cost table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        usage: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a small synthetic CSV corpus, useful for trying the pipeline offline.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding visits.csv, numerics.csv, pmh.csv and meds.csv.
    #[arg(long, env = "VIVALDI_DATA")]
    data: Option<PathBuf>,
    #[arg(long)]
    visits: Option<PathBuf>,
    #[arg(long)]
    numerics: Option<PathBuf>,
    #[arg(long)]
    pmh: Option<PathBuf>,
    #[arg(long)]
    meds: Option<PathBuf>,
}

impl DataArgs {
    fn paths(&self) -> Result<DataPaths, Failure> {
        let mut paths = match &self.data {
            Some(dir) => DataPaths::in_dir(dir),
            None => match (&self.visits, &self.numerics, &self.pmh, &self.meds) {
                (Some(v), Some(n), Some(p), Some(m)) => DataPaths {
                    visits: v.clone(),
                    numerics: n.clone(),
                    pmh: p.clone(),
                    meds: m.clone(),
                },
                _ => return Err(Failure::input("give --data DIR or all of --visits --numerics --pmh --meds")),
            },
        };
        // Individual table flags win over the directory.
        for (slot, flag) in [
            (&mut paths.visits, &self.visits),
            (&mut paths.numerics, &self.numerics),
            (&mut paths.pmh, &self.pmh),
            (&mut paths.meds, &self.meds),
        ] {
            if let Some(p) = flag {
                *slot = p.clone();
            }
        }
        Ok(paths)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendChoice {
    Live,
    Record,
    Replay,
    /// Built-in scripted team; no network. Records when --transcript is given.
    Scripted,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecutorChoice {
    Stub,
    Synthetic,
    Subprocess,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Cases to run; repeatable. Runs every indexed case when omitted.
    #[arg(long = "case-id")]
    case_ids: Vec<String>,
    #[arg(long, value_parser = ["agentic", "zeroshot"], default_value = "agentic")]
    mode: String,
    #[arg(long, env = "VIVALDI_MODEL")]
    model: String,
    #[arg(long, value_enum, env = "VIVALDI_BACKEND")]
    backend: Option<BackendChoice>,
    /// Transcript file for record and replay.
    #[arg(long, env = "VIVALDI_TRANSCRIPT")]
    transcript: Option<PathBuf>,
    /// Artifact root; each case gets a subdirectory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "VIVALDI_MAX_ROUNDS")]
    max_rounds: Option<u32>,
    #[arg(long, env = "VIVALDI_SHORTLIST_K")]
    shortlist_k: Option<usize>,
    /// Cases run concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, value_enum, default_value = "synthetic")]
    executor: ExecutorChoice,
    /// Worker command for `--executor subprocess`.
    #[arg(long, env = "VIVALDI_SANDBOX_CMD")]
    sandbox_cmd: Option<String>,
}

/// Failure mapped to a process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<OrchestratorError> for Failure {
    fn from(e: OrchestratorError) -> Self {
        match (&e, e.replay_miss()) {
            (_, Some(digest)) => Failure {
                code: 4,
                message: format!("{e}\nreplay miss for request: {digest}"),
            },
            (OrchestratorError::Agent { .. }, None) => Failure { code: 3, message: e.to_string() },
            _ => Failure::input(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::input(e.to_string())
    }
}

fn io_fail(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::input(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_fail(parent))?;
    }
    fs::write(path, contents).map_err(io_fail(path))
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Config::load(p).map_err(|e| Failure::input(e.to_string())),
        None => Ok(Config::default()),
    }
}

fn build_index_cmd(config: &Config, data: &DataArgs, out: &Path) -> Result<(), Failure> {
    let paths = data.paths()?;
    let tables = CsvTables::load(&paths).map_err(|e| Failure::input(e.to_string()))?;
    let build = build_benchmark(&tables, &config.plausibility);
    fs::create_dir_all(out).map_err(io_fail(out))?;
    let index = out.join("index.jsonl");
    let file = fs::File::create(&index).map_err(io_fail(&index))?;
    write_index(file, &build.entries).map_err(io_fail(&index))?;
    let rejections = out.join("rejections.json");
    let file = fs::File::create(&rejections).map_err(io_fail(&rejections))?;
    write_rejection_report(file, &build.report).map_err(io_fail(&rejections))?;
    println!("included {}, excluded {}", build.entries.len(), build.report.excluded.len());
    for (reason, n) in &build.report.exclusion_counts {
        println!("  {}: {n}", reason.as_str());
    }
    Ok(())
}

fn make_executor(args: &RunArgs) -> Result<Box<dyn Executor>, Failure> {
    Ok(match args.executor {
        ExecutorChoice::Stub => Box::new(StubExecutor),
        ExecutorChoice::Synthetic => Box::new(SyntheticExecutor::default()),
        ExecutorChoice::Subprocess => {
            let cmd = args
                .sandbox_cmd
                .as_deref()
                .ok_or_else(|| Failure::input("--executor subprocess needs --sandbox-cmd"))?;
            Box::new(SubprocessExecutor::from_command_line(cmd).map_err(|e| Failure::input(e.to_string()))?)
        }
    })
}

fn run_cmd(config: &Config, args: &RunArgs) -> Result<(), Failure> {
    let mode: RunMode = args.mode.parse().map_err(Failure::input)?;
    let profile = model_profile(config, &args.model).map_err(|e| Failure::input(e.to_string()))?;
    let choice = args.backend.unwrap_or(match config.run.backend {
        BackendMode::Live => BackendChoice::Live,
        BackendMode::Record => BackendChoice::Record,
        BackendMode::Replay => BackendChoice::Replay,
    });
    let backend: Arc<dyn ChatBackend> = match choice {
        BackendChoice::Scripted => {
            let team = team_backend(TeamScript::default());
            match &args.transcript {
                Some(t) => Arc::new(RecordingBackend::create(Box::new(team), t).map_err(|e| Failure::input(e.to_string()))?),
                None => Arc::new(team),
            }
        }
        other => {
            let mode = match other {
                BackendChoice::Live => BackendMode::Live,
                BackendChoice::Record => BackendMode::Record,
                _ => BackendMode::Replay,
            };
            build_backend(mode, &profile, args.transcript.as_deref()).map_err(|e| Failure::input(e.to_string()))?
        }
    };
    let client = LlmClient::new(backend, profile);

    let mut cfg = RunConfig::from_config(config, mode, &args.model, &args.out);
    cfg.max_rounds = args.max_rounds.unwrap_or(cfg.max_rounds);
    cfg.shortlist_k = args.shortlist_k.unwrap_or(cfg.shortlist_k);
    cfg.validate().map_err(Failure::input)?;

    let entries = read_index(&args.index).map_err(|e| Failure::input(e.to_string()))?;
    let selected: Vec<&IndexEntry> = if args.case_ids.is_empty() {
        entries.iter().collect()
    } else {
        args.case_ids
            .iter()
            .map(|id| {
                entries
                    .iter()
                    .find(|e| &e.visit_id == id)
                    .ok_or_else(|| Failure::input(format!("case {id} is not in the index")))
            })
            .collect::<Result<_, _>>()?
    };
    let tables = CsvTables::load(&args.data.paths()?).map_err(|e| Failure::input(e.to_string()))?;
    let cases: Vec<PatientCase> = selected
        .into_iter()
        .map(|entry| {
            let raw = tables
                .case(&entry.visit_id)
                .map_err(|e| Failure::input(e.to_string()))?;
            let (raw, _) = preprocess(raw, &config.plausibility);
            Ok(PatientCase::from_entry(&raw, entry))
        })
        .collect::<Result<_, Failure>>()?;

    let run_one = |case: &PatientCase| -> Result<CaseRunReport, Failure> {
        log::info!("running {} ({})", case.visit_id, mode.as_str());
        let report = match mode {
            RunMode::Agentic => {
                let mut exec = make_executor(args)?;
                run_agentic_case(&client, case, &cfg, exec.as_mut())?
            }
            RunMode::Zeroshot => run_zero_shot_case(&client, case, &cfg)?,
        };
        Ok(report)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.parallel.max(1))
        .build()
        .map_err(|e| Failure::input(e.to_string()))?;
    let outcomes: Vec<_> = pool.install(|| cases.par_iter().map(|c| (c, run_one(c))).collect());

    let mut records = Vec::new();
    let mut worst: Option<Failure> = None;
    for (case, outcome) in outcomes {
        match outcome {
            Ok(report) => {
                let f = &report.final_assessment;
                println!(
                    "{}: ESI {} pain {} LOS {}h ({} rounds, {} warnings)",
                    case.visit_id,
                    f.esi_level,
                    f.pain_score,
                    f.ed_los_hours,
                    report.rounds_used,
                    report.warnings.len()
                );
                records.push(PredictionRecord::from_report(case, &report));
            }
            Err(e) => {
                eprintln!("{}: {}", case.visit_id, e.message);
                if worst.as_ref().is_none_or(|w| e.code > w.code) {
                    worst = Some(e);
                }
            }
        }
    }
    if !records.is_empty() {
        append_jsonl(&args.out.join("predictions.jsonl"), &records)?;
    }
    match worst {
        Some(f) => Err(Failure {
            code: f.code,
            message: format!("{} of {} cases failed", cases.len() - records.len(), cases.len()),
        }),
        None => Ok(()),
    }
}

fn eval_cmd(predictions: &Path, reviews: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let preds: Vec<PredictionRecord> = read_jsonl(predictions)?;
    let reviews = reviews.map(read_reviews).transpose()?;
    let report = evaluate(&preds, reviews.as_deref())?;
    write_file(&out.join("eval.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    let md = render_markdown(&report);
    write_file(&out.join("eval.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn report_cmd(usage: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let files = usage
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_fail(p))?;
            serde_json::from_str::<UsageFile>(&text).map_err(|e| Failure::input(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = usage_report(&files);
    write_file(&out.join("usage_report.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    let md = render_usage_markdown(&report);
    write_file(&out.join("usage_report.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn synth_cmd(out: &Path, seed: u64) -> Result<(), Failure> {
    let corpus = planted_corpus(seed);
    write_corpus(out, &corpus.visits).map_err(io_fail(out))?;
    println!("wrote {} visits to {}", corpus.visits.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = load_config(cli.config.as_deref()).and_then(|config| match &cli.command {
        Command::BuildIndex { data, out } => build_index_cmd(&config, data, out),
        Command::Run(args) => run_cmd(&config, args),
        Command::Eval { predictions, reviews, out } => eval_cmd(predictions, reviews.as_deref(), out),
        Command::Report { usage, out } => report_cmd(usage, out),
        Command::Synth { out, seed } => synth_cmd(out, *seed),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
