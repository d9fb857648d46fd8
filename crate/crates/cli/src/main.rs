//! Command-line front end: run single questions, evaluations, and analyses.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use vqa_debate::analysis::analyze_dirs;
use vqa_debate::evaluation::{load_dataset, run_eval, transcript_file_name, EvalError, RunDir};
use vqa_debate::{parallel, ConfigError, ImagePayload, PipelineError, RunConfig};

#[derive(Parser)]
#[command(name = "vqa-debate", version, about = "Disagreement-aware multi-agent debate for visual question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question about one image.
    Ask {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        image: String,
        #[arg(long, default_value = "q0")]
        question_id: String,
        /// Parent directory for new run directories.
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
    },
    /// Run the pipeline over a JSONL dataset and score it.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        /// Continue an existing run directory, skipping completed questions.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the config's worker limit.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Compute overlap, calibration, tool-usage and disagreement statistics.
    Analyze {
        /// Run directories or transcript directories.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Output directory; defaults to `<first dir>/analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without contacting any endpoint.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Failure classes with distinct exit codes.
enum Failure {
    Config(String),
    Aborted(String),
    Other(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Aborted(_) | Failure::Other(_) => 1,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let cfg = RunConfig::from_path(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Fresh `<runs_dir>/<timestamp>_seed<seed>` with the config snapshot inside.
fn new_run_dir(runs_dir: &Path, cfg: &RunConfig) -> anyhow::Result<RunDir> {
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
    let base = format!("{stamp}_seed{}", cfg.run_seed);
    let mut root = runs_dir.join(&base);
    let mut n = 1;
    while root.exists() {
        root = runs_dir.join(format!("{base}_{n}"));
        n += 1;
    }
    let run = RunDir::new(root);
    run.create().map_err(|e| anyhow::anyhow!(e))?;
    std::fs::write(run.root.join("config.json"), &cfg.source_text).context("writing config snapshot")?;
    Ok(run)
}

fn ask(config: &Path, question: &str, image: &str, question_id: &str, runs_dir: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let orch = cfg.build()?;
    let image = ImagePayload::load(image, Path::new(".")).with_context(|| format!("reading image {image}"))?;
    let run = new_run_dir(runs_dir, &cfg)?;
    let transcript_path = run.transcripts().join(transcript_file_name(question_id));
    match parallel::with_workers(cfg.workers, || orch.run_pipeline(question_id, question, &image)) {
        Ok(result) => {
            result.transcript.write(&transcript_path).context("writing transcript")?;
            let result_path = run.reports().join("result.json");
            let json = serde_json::to_string_pretty(&result).context("serializing result")?;
            std::fs::write(&result_path, json + "\n").context("writing result")?;
            let f = &result.final_answer;
            println!("Answer: {}", f.answer);
            println!("Reasoning: {}", f.reasoning);
            println!("Confidence: {:.2}", f.confidence);
            println!("Transcript: {}", transcript_path.display());
            Ok(())
        }
        Err(e) => {
            if let PipelineError::AbortedRun { transcript, .. } = &e {
                let _ = transcript.write(&transcript_path);
            }
            Err(Failure::Aborted(e.to_string()))
        }
    }
}

fn eval(
    config: &Path,
    dataset: &Path,
    runs_dir: &Path,
    resume: Option<&Path>,
    workers: Option<usize>,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let examples = load_dataset(dataset).map_err(|e| Failure::Config(e.to_string()))?;
    let orch = cfg.build()?;
    let run = match resume {
        Some(dir) => RunDir::new(dir),
        None => new_run_dir(runs_dir, &cfg)?,
    };
    let image_base = dataset.parent().unwrap_or(Path::new("."));
    match run_eval(&orch, &examples, image_base, &run, workers.unwrap_or(cfg.workers)) {
        Ok(report) => {
            println!("Run directory: {}", run.root.display());
            println!("Examples: {}", report.rows.len());
            match report.accuracy {
                Some(a) => println!("Accuracy: {a:.4}"),
                None => println!("Accuracy: n/a"),
            }
            for (cat, s) in &report.per_category {
                println!("  {cat}: {:.4} ({} examples)", s.accuracy, s.count);
            }
            println!("Tokens: {} prompt, {} completion", report.tokens.prompt_tokens, report.tokens.completion_tokens);
            Ok(())
        }
        Err(e @ EvalError::Aborted { .. }) => {
            eprintln!("Run directory: {} (resume with --resume)", run.root.display());
            Err(Failure::Aborted(e.to_string()))
        }
        Err(e) => Err(Failure::Other(e.into())),
    }
}

fn analyze(dirs: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| dirs[0].join("analysis"));
    let summary = analyze_dirs(dirs, &out).context("analysis failed")?;
    println!("{}", serde_json::to_string_pretty(&summary).context("serializing summary")?);
    println!("Written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Ask { config, question, image, question_id, runs_dir } => {
            ask(config, question, image, question_id, runs_dir)
        }
        Command::Eval { config, dataset, runs_dir, resume, workers } => {
            eval(config, dataset, runs_dir, resume.as_deref(), *workers)
        }
        Command::Analyze { dirs, out } => analyze(dirs, out.as_deref()),
        Command::ValidateConfig { config } => load_config(config).map(|_| println!("config OK")),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Aborted(m) => eprintln!("run aborted: {m}"),
                Failure::Other(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}
