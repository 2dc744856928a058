//! Command-line front end: one subcommand per pipeline stage, plus `run`
//! for several stages at once and `diff` for comparing two reports.
//!
//! Exit codes: 0 success, 1 cell failures present, 2 configuration or
//! ordering error.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use suitesmith::corpus::{CorpusFormat, Source};
use suitesmith::modelgw::BackendMode;
use suitesmith::pipeline::{diff_reports, Pipeline, PipelineError, RunConfig, RunManifest, Stage};
use suitesmith::promptkit::GenerationParams;
use suitesmith::retrieval::StrategyKind;

#[derive(Parser)]
#[command(
    name = "suitesmith",
    version,
    about = "Few-shot unit test generation, repair and suite optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and canonicalize the corpus.
    Ingest(RunArgs),
    /// Choose few-shot examples for every cell.
    Select(RunArgs),
    /// Render prompt bundles.
    Prompt(RunArgs),
    /// Query the model backend (live, record or replay).
    Generate(RunArgs),
    /// Syntax, compile and execution checks of the generated files.
    Validate(RunArgs),
    /// Apply the repair rules and re-validate.
    Repair(RunArgs),
    /// Coverage-guided admission of generated cases into the suites.
    Optimize(RunArgs),
    /// Write the initial, generated and optimized reports per cell.
    Report(RunArgs),
    /// Run several stages in pipeline order (all by default).
    Run {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
    },
    /// Per-metric delta between two report files.
    Diff {
        a: PathBuf,
        b: PathBuf,
        /// Print the delta as JSON.
        #[arg(long)]
        json: bool,
    },
}

/// Mirrors the run configuration.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "canonical-jsonl")]
    corpus_format: CorpusFormat,
    #[arg(long, value_delimiter = ',', default_value = "human,sbst,llm")]
    sources: Vec<Source>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "random_from_suite,random_from_cut,problem_sim,code_sim,code_comment_sim,problem_plus_code_sim"
    )]
    strategies: Vec<StrategyKind>,
    #[arg(long, default_value_t = 5)]
    n_examples: usize,
    #[arg(long, default_value = "replay")]
    backend: BackendMode,
    /// Replay cache file; defaults to `<output>/replay-cache.jsonl`.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Seconds each test case may run.
    #[arg(long, default_value_t = 120.0)]
    timeout_per_case: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    output: PathBuf,
    #[arg(long, default_value_t = suitesmith::repairer::DEFAULT_MAX_PASSES)]
    max_repair_passes: usize,
    #[arg(long, default_value = "gpt-4o")]
    model: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 4096)]
    max_output_tokens: u32,
    /// Leave example import preambles out of prompts.
    #[arg(long)]
    no_preambles: bool,
    /// Recompute stages even when their artifacts are complete.
    #[arg(long)]
    force: bool,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            corpus: self.corpus.clone(),
            corpus_format: self.corpus_format,
            sources: self.sources.clone(),
            strategies: self.strategies.clone(),
            n_examples: self.n_examples,
            backend: self.backend,
            cache: self.cache.clone(),
            timeout_per_case_secs: self.timeout_per_case,
            seed: self.seed,
            output: self.output.clone(),
            max_repair_passes: self.max_repair_passes,
            params: GenerationParams {
                model_id: self.model.clone(),
                temperature: self.temperature,
                max_output_tokens: self.max_output_tokens,
            },
            include_preambles: !self.no_preambles,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<PipelineError>().is_none_or(PipelineError::is_config);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    let (args, stages) = match cli.command {
        Command::Diff { a, b, json } => {
            let delta = diff_reports(&a, &b)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&delta)?);
            } else {
                print!("{delta}");
            }
            return Ok(ExitCode::SUCCESS);
        }
        Command::Run { args, stages } => {
            let stages = if stages.is_empty() { Stage::ALL.to_vec() } else { stages };
            (args, stages)
        }
        Command::Ingest(a) => (a, vec![Stage::Ingest]),
        Command::Select(a) => (a, vec![Stage::Select]),
        Command::Prompt(a) => (a, vec![Stage::Prompt]),
        Command::Generate(a) => (a, vec![Stage::Generate]),
        Command::Validate(a) => (a, vec![Stage::Validate]),
        Command::Repair(a) => (a, vec![Stage::Repair]),
        Command::Optimize(a) => (a, vec![Stage::Optimize]),
        Command::Report(a) => (a, vec![Stage::Report]),
    };
    let mut pipeline = Pipeline::new(args.config())?.force(args.force);
    let manifest = pipeline.run(&stages)?;
    summarize(&pipeline, &manifest);
    if stages.contains(&Stage::Report) {
        let ledger = pipeline.run_dir().join("ledger.tsv");
        print!(
            "{}",
            std::fs::read_to_string(&ledger).with_context(|| format!("reading {}", ledger.display()))?
        );
    }
    Ok(if manifest.has_failures() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn summarize(pipeline: &Pipeline, manifest: &RunManifest) {
    let names = |s: &[Stage]| s.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(",");
    println!("run directory: {}", pipeline.run_dir().display());
    println!("executed: {}", names(pipeline.executed()));
    if !pipeline.skipped().is_empty() {
        println!("skipped (complete): {}", names(pipeline.skipped()));
    }
    for (cell, q) in manifest.quarantined() {
        println!("quarantined {cell} at {}: {}", q.stage, q.reason);
    }
    for (cell, record) in &manifest.cells {
        for (stage, failures) in &record.failures {
            for f in failures {
                println!("failure {cell} {stage} {}: {}", f.problem_id, f.reason);
            }
        }
    }
}
