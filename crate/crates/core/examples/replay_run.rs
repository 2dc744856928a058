//! Full pipeline over the bundled mini corpus, fully offline.
//!
//! A scripted transport stands in for the model: the first pass records
//! its replies into a replay cache, the second pass runs in replay mode
//! from that cache alone, the way a published experiment is re-run.
//!
//! ```bash
//! cargo run --example replay_run
//! cargo run --example replay_run -- --output /tmp/suitesmith-demo
//! ```

use std::path::PathBuf;
use std::time::Instant;
use suitesmith::modelgw::{BackendMode, Gateway, ReplayCache, ScriptedTransport};
use suitesmith::pipeline::{report_path, Pipeline, ReportStage, RunConfig, Stage, StageReport};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let scratch = tempfile::tempdir()?;
    let output = std::env::args()
        .skip_while(|a| a != "--output")
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| scratch.path().to_path_buf());
    let cache = output.join("replay-cache.jsonl");

    let mut config = RunConfig::new(fixtures.join("mini_corpus.jsonl"), &output);
    config.cache = Some(cache.clone());
    config.timeout_per_case_secs = 10.0;

    // Record: the scripted transport answers, the cache keeps every reply.
    let mut record = config.clone();
    record.backend = BackendMode::Record;
    let transport = ScriptedTransport::from_jsonl(&fixtures.join("candidates.jsonl"))?;
    let gateway = Gateway::record(Box::new(transport), ReplayCache::open_for_append(&cache)?);
    let started = Instant::now();
    Pipeline::new(record)?.with_gateway(gateway).run(&[
        Stage::Ingest,
        Stage::Select,
        Stage::Prompt,
        Stage::Generate,
    ])?;
    println!(
        "recorded {} replies in {:.1?}",
        ReplayCache::open(&cache)?.len(),
        started.elapsed()
    );

    // Replay: every stage, no transport at all.
    let started = Instant::now();
    let mut pipeline = Pipeline::new(config.clone())?;
    let manifest = pipeline.run(&Stage::ALL)?;
    println!(
        "replayed {} stages for {} cells in {:.1?} -> {}",
        manifest.stages.len(),
        manifest.cells.len(),
        started.elapsed(),
        pipeline.run_dir().display()
    );

    println!(
        "{:<34} {:>9} {:>9} {:>9} {:>6}",
        "cell", "initial", "generated", "optimized", "kept"
    );
    for cell in config.cells() {
        if let Some(q) = &manifest.cells[&cell.name()].quarantine {
            println!("{:<34} quarantined at {}: {}", cell.name(), q.stage, q.reason);
            continue;
        }
        let load = |s| StageReport::load(&pipeline.run_dir().join(report_path(&cell, s)));
        let (i, g, o) = (
            load(ReportStage::Initial)?,
            load(ReportStage::Generated)?,
            load(ReportStage::Optimized)?,
        );
        println!(
            "{:<34} {:>8.1}% {:>8.1}% {:>8.1}% {:>6}",
            cell.name(),
            i.quality.line_pct,
            g.quality.line_pct,
            o.quality.line_pct,
            o.optimization.map_or(0, |s| s.kept)
        );
    }
    Ok(())
}
