//! Validating flawed candidate files in a sandbox and repairing them.
//!
//! ```bash
//! cargo run --example validate_and_repair
//! ```

use serde::Deserialize;
use std::path::PathBuf;
use std::time::Duration;
use suitesmith::corpus::{load_corpus, CorpusFormat};
use suitesmith::repairer::{apply_repairs, diagnose, rule, RepairContext, SandboxCheck, DEFAULT_MAX_PASSES};
use suitesmith::validator::{Phase, Sandbox, Validator};

#[derive(Deserialize)]
struct Fixture {
    id: String,
    problem_id: String,
    truncated: bool,
    text: String,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let corpus = load_corpus(&fixtures.join("mini_corpus.jsonl"), CorpusFormat::CanonicalJsonl)?;
    let validator = Validator::default();
    let text = std::fs::read_to_string(fixtures.join("candidates.jsonl"))?;
    for line in text.lines().skip(1).step_by(9).take(4) {
        let fixture: Fixture = serde_json::from_str(line)?;
        let problem = corpus.problem(&fixture.problem_id).ok_or("unknown problem")?;
        let sandbox = Sandbox::create(problem, Duration::from_secs(10))?;
        let ctx = RepairContext::for_problem(problem);

        let report = validator.validate(&sandbox, &fixture.text, Phase::Original, fixture.truncated)?;
        let triggered = diagnose(&fixture.text, &report, &ctx);
        let check = SandboxCheck {
            validator: &validator,
            sandbox: &sandbox,
        };
        let repaired = apply_repairs(&fixture.text, &report, &ctx, &check, DEFAULT_MAX_PASSES)?;

        println!(
            "{} ({}): syntax {} -> {}, passing {} -> {}, rules {:?}",
            fixture.id,
            problem.class_name,
            report.syntax_ok(),
            repaired.report.syntax_ok(),
            report.passed_cases().count(),
            repaired.report.passed_cases().count(),
            triggered
        );
        for applied in &repaired.log.applied {
            let name = rule(applied.rule).map_or("", |r| r.name);
            println!("    rule {} on {}: {name}", applied.rule, applied.scope);
        }
    }
    Ok(())
}
