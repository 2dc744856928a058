//! Complexity, smells and the technical-debt proxy for each test source.
//!
//! ```bash
//! cargo run --example quality_report
//! ```

use std::path::PathBuf;
use suitesmith::corpus::{load_corpus, CorpusFormat, Source, TestCase, TestFile};
use suitesmith::metrics::{build_report, cognitive, cyclomatic, detect_smells, CoverageSummary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini_corpus.jsonl");
    let corpus = load_corpus(&path, CorpusFormat::CanonicalJsonl)?;
    println!(
        "{:<6} {:>6} {:>6} {:>6} {:>7} {:>7}",
        "source", "tests", "cc", "cog", "smells", "debt"
    );
    for source in Source::ALL {
        let files: Vec<&TestFile> = corpus.test_files().filter(|f| f.source == source).collect();
        let report = build_report(source.as_str(), &files, CoverageSummary::default())?;
        println!(
            "{:<6} {:>6} {:>6} {:>6} {:>7.2} {:>7.2}",
            source.as_str(),
            report.total_tests,
            report.cyclomatic_total,
            report.cognitive_total,
            report.avg_smells,
            report.avg_debt_minutes
        );
    }

    let branchy = TestCase::new(
        "demo",
        Source::Llm,
        "def test_branchy():\n    for x in range(3):\n        if x % 2 and x > 0:\n            print(x)\n",
    )?;
    let copy = TestCase::new(
        "demo",
        Source::Llm,
        "def test_copy():\n    for x in range(3):\n        if x % 2 and x > 0:\n            print(x)\n",
    )?;
    println!(
        "\ncyclomatic {} cognitive {}",
        cyclomatic(&branchy)?,
        cognitive(&branchy)?
    );
    for smell in detect_smells(&TestFile::from_cases("demo", Source::Llm, "", vec![branchy, copy])) {
        println!(
            "  {} {} ({} min)",
            smell.case_id,
            smell.kind.as_str(),
            smell.kind.cost_minutes()
        );
    }
    Ok(())
}
