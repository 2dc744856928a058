//! Coverage-guided admission of generated cases into an existing suite.
//!
//! ```bash
//! cargo run --example optimize_suite
//! ```

use std::time::Duration;
use suitesmith::corpus::{Problem, Source, TestCase, TestFile};
use suitesmith::optimizer::{optimize_suite, Candidate, SandboxProbe};
use suitesmith::validator::{Sandbox, Validator};

const SOLUTION: &str = r#"def grade(score):
    if score >= 90:
        return "A"
    if score >= 75:
        return "B"
    return "C" if score >= 50 else "F"
"#;

const PREAMBLE: &str = "from grade import grade\n";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = Problem::new("grades", "Letter grades from scores.", SOLUTION, Some("grade"))?;
    let sandbox = Sandbox::create(&problem, Duration::from_secs(10))?;
    let validator = Validator::default();

    let existing = TestCase::new(
        "grades",
        Source::Human,
        "def test_top():\n    assert grade(95) == 'A'\n",
    )?;
    let initial = TestFile::from_cases("grades", Source::Human, PREAMBLE, vec![existing]);

    let generated = [
        "def test_top_again():\n    assert grade(99) == 'A'\n",
        "def test_b():\n    assert grade(80) == 'B'\n",
        "def test_wrong():\n    assert grade(10) == 'C'\n",
        "def test_c():\n    assert grade(60) == 'C'\n",
        "def test_f():\n    assert grade(0) == 'F'\n",
        "def test_late():\n    assert grade(42) == 'F'\n",
    ];
    let candidates = generated
        .iter()
        .map(|body| {
            Ok(Candidate {
                preamble: PREAMBLE.into(),
                case: TestCase::new("grades", Source::Llm, body)?,
            })
        })
        .collect::<Result<Vec<_>, suitesmith::corpus::CorpusError>>()?;

    let mut probe = SandboxProbe {
        validator: &validator,
        sandbox: &sandbox,
    };
    let result = optimize_suite(&mut probe, &initial, &candidates)?;
    for d in &result.decisions {
        println!(
            "{:<30} {:<8} +{} lines +{} arms",
            d.case_id, d.verdict, d.delta_lines, d.delta_branch_arms
        );
    }
    println!(
        "line {:.1}% -> {:.1}%, branch {:.1}% -> {:.1}%",
        result.before.line_pct, result.after.line_pct, result.before.branch_pct, result.after.branch_pct
    );
    Ok(())
}
