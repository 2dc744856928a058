//! Rendering the system and user prompts for one generation request.
//!
//! ```bash
//! cargo run --example render_prompt
//! ```

use std::path::PathBuf;
use suitesmith::corpus::{load_corpus, CorpusFormat, Source};
use suitesmith::promptkit::{build_bundle, GenerationParams, PromptOptions};
use suitesmith::retrieval::{Retriever, SelectionStrategy, StrategyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini_corpus.jsonl");
    let corpus = load_corpus(&path, CorpusFormat::CanonicalJsonl)?;
    let target = corpus.problem("mini_00").ok_or("mini_00 missing")?;
    let strategy = SelectionStrategy::new(StrategyKind::CodeSim, None)?;
    let examples = Retriever::new(&corpus)?.select(&strategy, target, Source::Human, 2)?;

    let bundle = build_bundle(
        &corpus,
        target,
        &strategy,
        Source::Human,
        &examples,
        &GenerationParams::default(),
        PromptOptions::default(),
    )?;
    println!("digest {}\n", bundle.digest);
    println!("--- system ---\n{}\n", bundle.system_text);
    println!("--- user ---\n{}", bundle.user_text);
    Ok(())
}
