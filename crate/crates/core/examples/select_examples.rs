//! Ranking candidate problems and picking few-shot examples with each of
//! the six selection strategies.
//!
//! ```bash
//! cargo run --example select_examples
//! ```

use std::path::PathBuf;
use suitesmith::corpus::{load_corpus, CorpusFormat, Source};
use suitesmith::retrieval::{Retriever, SelectionStrategy, StrategyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini_corpus.jsonl");
    let corpus = load_corpus(&path, CorpusFormat::CanonicalJsonl)?;
    let retriever = Retriever::new(&corpus)?;
    let target = corpus.problem("mini_09").ok_or("mini_09 missing")?;
    println!("target {}: {}", target.id, target.description);

    for ranked in retriever
        .rank(StrategyKind::ProblemPlusCodeSim, target, Source::Human)
        .iter()
        .take(3)
    {
        println!("  {:<8} {:.4}", ranked.problem_id, ranked.score);
    }

    for kind in StrategyKind::ALL {
        let strategy = SelectionStrategy::with_run_seed(kind, 7);
        let picked = retriever.select(&strategy, target, Source::Llm, 3)?;
        let ids: Vec<&str> = picked.iter().map(|c| c.id.as_str()).collect();
        println!("{:<22} {}", kind.as_str(), ids.join(", "));
    }
    Ok(())
}
