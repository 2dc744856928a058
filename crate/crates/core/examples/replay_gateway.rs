//! Recording model replies into a replay cache and answering the same
//! prompt again without any backend.
//!
//! ```bash
//! cargo run --example replay_gateway
//! ```

use std::path::PathBuf;
use suitesmith::corpus::{load_corpus, CorpusFormat, Source};
use suitesmith::modelgw::{extract_test_code, Gateway, ReplayCache, ScriptedTransport};
use suitesmith::promptkit::{build_bundle, GenerationParams, PromptOptions};
use suitesmith::retrieval::{Retriever, SelectionStrategy, StrategyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let corpus = load_corpus(&fixtures.join("mini_corpus.jsonl"), CorpusFormat::CanonicalJsonl)?;
    let target = corpus.problem("mini_04").ok_or("mini_04 missing")?;
    let strategy = SelectionStrategy::new(StrategyKind::ProblemSim, None)?;
    let examples = Retriever::new(&corpus)?.select(&strategy, target, Source::Sbst, 3)?;
    let params = GenerationParams::default();
    let bundle = build_bundle(
        &corpus,
        target,
        &strategy,
        Source::Sbst,
        &examples,
        &params,
        PromptOptions::default(),
    )?;

    let dir = tempfile::tempdir()?;
    let cache_path = dir.path().join("cache.jsonl");
    let transport = ScriptedTransport::from_jsonl(&fixtures.join("candidates.jsonl"))?;
    let recorder = Gateway::record(Box::new(transport), ReplayCache::open_for_append(&cache_path)?);
    let recorded = recorder.generate(&bundle)?;
    println!(
        "recorded {} ({:?}, {} bytes)",
        &recorded.digest[..16],
        recorded.finish_reason,
        recorded.raw_text.len()
    );

    let replayer = Gateway::replay(ReplayCache::open(&cache_path)?);
    let replayed = replayer.generate(&bundle)?;
    assert_eq!(replayed.raw_text, recorded.raw_text);
    let extraction = extract_test_code(&replayed);
    println!(
        "replayed identically; {} code block(s), truncated={}",
        extraction.candidates.len(),
        extraction.truncated
    );
    if let Some(code) = extraction.candidates.first() {
        println!("\n{code}");
    }
    Ok(())
}
