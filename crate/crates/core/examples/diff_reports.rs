//! Per-metric deltas between two stage reports.
//!
//! ```bash
//! cargo run --example diff_reports
//! ```

use serde_json::json;
use suitesmith::pipeline::diff_reports;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let initial = json!({
        "schema_version": 1,
        "stage": "initial",
        "quality": {"line_pct": 81.5, "branch_pct": 76.2, "avg_smells": 0.4}
    });
    let optimized = json!({
        "schema_version": 1,
        "stage": "optimized",
        "quality": {"line_pct": 88.0, "branch_pct": 82.4, "avg_smells": 0.55},
        "optimization": {"kept": 12}
    });
    let (a, b) = (dir.path().join("initial.json"), dir.path().join("optimized.json"));
    std::fs::write(&a, serde_json::to_string_pretty(&initial)?)?;
    std::fs::write(&b, serde_json::to_string_pretty(&optimized)?)?;

    let delta = diff_reports(&a, &b)?;
    print!("{delta}");
    println!(
        "branch coverage moved by {:+}",
        delta.get("quality.branch_pct").unwrap_or_default()
    );
    Ok(())
}
