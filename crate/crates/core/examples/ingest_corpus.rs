//! Loading a corpus and normalizing raw test suites into standalone cases.
//!
//! ```bash
//! cargo run --example ingest_corpus
//! ```

use std::path::PathBuf;
use suitesmith::corpus::{load_corpus, load_str, normalize_tests, normalize_tests_for, CorpusFormat, Dialect, Source};

const UNITTEST_SUITE: &str = r#"import unittest
from Stack import Stack


class TestStack(unittest.TestCase):
    def setUp(self):
        self.stack = Stack()

    def test_push(self):
        self.stack.push(1)
        self.assertEqual(self.stack.size(), 1)

    def test_pop_empty(self):
        with self.assertRaises(IndexError):
            self.stack.pop()
"#;

const HUMANEVAL_CHECK: &str = r#"def check(candidate):
    assert candidate(2, 3) == 5
    assert candidate(-1, 1) == 0
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini_corpus.jsonl");
    let corpus = load_corpus(&path, CorpusFormat::CanonicalJsonl)?;
    println!("{} problems, digest {}", corpus.len(), &corpus.digest()[..16]);
    for problem in corpus.problems().take(3) {
        let counts: Vec<String> = Source::ALL
            .iter()
            .map(|s| format!("{}={}", s.as_str(), corpus.cases(&problem.id, *s).len()))
            .collect();
        println!("  {} ({}): {}", problem.id, problem.class_name, counts.join(" "));
    }

    // Class-method suites are flattened into functions; fixtures are inlined.
    let file = normalize_tests(UNITTEST_SUITE, Dialect::ClassMethodSuite)?;
    println!("\nclass suite -> {} cases:\n{}", file.cases.len(), file.render());

    // HumanEval-style `check(candidate)` blocks need the entry point the
    // candidate stands for.
    let file = normalize_tests_for(HUMANEVAL_CHECK, Dialect::AssertBlock, Some("add"))?;
    println!("assert block -> {} cases:\n{}", file.cases.len(), file.render());

    // Broken records are set aside instead of aborting the load.
    let bad = "{\"id\": \"x\", \"description\": \"\", \"solution\": \"def f(:\"}\n";
    let partial = load_str(bad, CorpusFormat::CanonicalJsonl)?;
    for r in partial.rejects() {
        println!("rejected record {}: {}", r.record, r.reason);
    }
    Ok(())
}
