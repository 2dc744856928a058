//! Coverage-guided admission of generated tests into an existing suite.
//!
//! Candidates are evaluated greedily in order. Each one runs in the context of
//! the current suite file: the suite's preamble wins on name clashes, so a
//! candidate relying on a conflicting helper fails and is marked faulty.

use crate::corpus::{normalize_tests, Dialect, NormalizeError, Source, TestCase, TestFile};
use crate::syntax;
use crate::validator::{Coverage, Outcome, Sandbox, Validator, ValidatorError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("coverage measurement failed: {0}")]
    Measurement(#[from] ValidatorError),
    #[error("candidate {case_id} cannot be placed in the suite: {reason}")]
    Placement { case_id: String, reason: String },
}

/// Covered lines and branch arms against the executable universe.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageSnapshot {
    pub lines: BTreeMap<String, BTreeSet<u32>>,
    pub arms: BTreeMap<String, BTreeSet<(String, u8)>>,
    pub executable_lines: usize,
    pub total_arms: usize,
    pub line_pct: f64,
    pub branch_pct: f64,
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

impl CoverageSnapshot {
    /// Snapshot of `hits` restricted to `universe`.
    pub fn from_hits(hits: &Coverage, universe: &Coverage) -> Self {
        let within = hits.within(universe);
        let mut snap = CoverageSnapshot {
            executable_lines: universe.line_count(),
            total_arms: universe.arm_count(),
            ..CoverageSnapshot::default()
        };
        for name in universe.modules.keys() {
            let m = within.modules.get(name).cloned().unwrap_or_default();
            snap.lines.insert(name.clone(), m.lines);
            snap.arms.insert(name.clone(), m.arms);
        }
        snap.refresh();
        snap
    }

    pub fn empty(universe: &Coverage) -> Self {
        Self::from_hits(&Coverage::default(), universe)
    }

    pub fn covered_lines(&self) -> usize {
        self.lines.values().map(BTreeSet::len).sum()
    }

    pub fn covered_arms(&self) -> usize {
        self.arms.values().map(BTreeSet::len).sum()
    }

    fn refresh(&mut self) {
        self.line_pct = pct(self.covered_lines(), self.executable_lines);
        self.branch_pct = pct(self.covered_arms(), self.total_arms);
    }

    /// Percentages agree with the hit sets.
    pub fn is_consistent(&self) -> bool {
        self.line_pct == pct(self.covered_lines(), self.executable_lines)
            && self.branch_pct == pct(self.covered_arms(), self.total_arms)
    }

    /// Every executable line and every arm is covered.
    pub fn is_saturated(&self) -> bool {
        self.covered_lines() == self.executable_lines && self.covered_arms() == self.total_arms
    }

    /// New (lines, arms) that `hits` would add; `hits` must already be
    /// restricted to the universe.
    pub fn delta(&self, hits: &Coverage) -> (usize, usize) {
        let mut lines = 0;
        let mut arms = 0;
        for (name, m) in &hits.modules {
            let Some(have) = self.lines.get(name) else { continue };
            lines += m.lines.iter().filter(|l| !have.contains(l)).count();
            let have_arms = &self.arms[name];
            arms += m.arms.iter().filter(|a| !have_arms.contains(a)).count();
        }
        (lines, arms)
    }

    pub fn absorb(&mut self, hits: &Coverage) {
        for (name, m) in &hits.modules {
            if let Some(have) = self.lines.get_mut(name) {
                have.extend(m.lines.iter().copied());
                self.arms
                    .get_mut(name)
                    .expect("same keys")
                    .extend(m.arms.iter().cloned());
            }
        }
        self.refresh();
    }

    /// Per-module listing, one line per module.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        for (name, lines) in &self.lines {
            let lines: Vec<String> = lines.iter().map(u32::to_string).collect();
            let arms: Vec<String> = self.arms[name].iter().map(|(s, a)| format!("{s}/{a}")).collect();
            out.push_str(&format!("{name}\tlines={}\tarms={}\n", lines.join(","), arms.join(",")));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Kept,
    Removed,
    Skipped,
    Faulty,
}

impl Verdict {
    pub const ALL: [Verdict; 4] = [Verdict::Kept, Verdict::Removed, Verdict::Skipped, Verdict::Faulty];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Kept => "kept",
            Verdict::Removed => "removed",
            Verdict::Skipped => "skipped",
            Verdict::Faulty => "faulty",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationDecision {
    pub case_id: String,
    pub verdict: Verdict,
    pub delta_lines: usize,
    pub delta_branch_arms: usize,
    /// Name the case carries in the optimized suite, when kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admitted_as: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

/// A generated case together with the preamble it needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub preamble: String,
    pub case: TestCase,
}

/// Splits a validated candidate file into per-case candidates, flattening
/// test classes into functions first.
pub fn candidates_from(problem_id: &str, source: Source, text: &str) -> Result<Vec<Candidate>, NormalizeError> {
    let file = normalize_tests(text, Dialect::ClassMethodSuite)?.with_owner(problem_id, source);
    Ok(file
        .cases
        .iter()
        .map(|case| Candidate {
            preamble: file.preamble.clone(),
            case: case.clone(),
        })
        .collect())
}

fn normalized(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Adds the parts of `extra` that neither repeat nor rebind anything in `base`.
pub fn merge_preamble(base: &str, extra: &str) -> String {
    let base_segs = syntax::segment(base);
    let mut seen: BTreeSet<String> = base_segs.iter().map(|s| normalized(s.text(base))).collect();
    let mut bound = syntax::parse_module(base)
        .map(|s| syntax::module_bindings(&s))
        .unwrap_or_default();
    let mut out = base.trim_end().to_string();
    for seg in syntax::segment(extra) {
        let text = seg.text(extra).trim_end();
        let key = normalized(text);
        if seen.contains(&key) {
            continue;
        }
        let names = syntax::parse_module(text)
            .map(|s| syntax::module_bindings(&s))
            .unwrap_or_default();
        let is_import = text.starts_with("import ") || text.starts_with("from ");
        let clash = if is_import {
            !names.is_empty() && names.iter().all(|n| bound.contains(n))
        } else {
            names.iter().any(|n| bound.contains(n))
        };
        if clash {
            continue;
        }
        if !out.is_empty() {
            out.push_str(
                if seg.is_function() || matches!(seg.kind, syntax::SegmentKind::Class { .. }) {
                    "\n\n\n"
                } else {
                    "\n"
                },
            );
        }
        out.push_str(text);
        seen.insert(key);
        bound.extend(names);
    }
    out
}

fn rename_case(case: &TestCase, new_name: &str) -> Result<TestCase, OptimizerError> {
    let body = &case.body;
    let needle = format!("def {}", case.name);
    let at = body.find(&needle).ok_or_else(|| OptimizerError::Placement {
        case_id: case.id.clone(),
        reason: "definition header not found".into(),
    })?;
    let renamed = format!("{}def {}{}", &body[..at], new_name, &body[at + needle.len()..]);
    TestCase::new(&case.problem_id, case.source, &renamed).map_err(|e| OptimizerError::Placement {
        case_id: case.id.clone(),
        reason: e.to_string(),
    })
}

/// `suite` with `candidate` appended; returns the file and the case name
/// used, renamed if it clashes with a suite binding.
pub fn place(suite: &TestFile, candidate: &Candidate) -> Result<(TestFile, String), OptimizerError> {
    let preamble = merge_preamble(&suite.preamble, &candidate.preamble);
    let mut taken: BTreeSet<String> = suite.cases.iter().map(|c| c.name.clone()).collect();
    if let Ok(s) = syntax::parse_module(&preamble) {
        taken.extend(syntax::module_bindings(&s));
    }
    let mut case = candidate.case.clone();
    if taken.contains(&case.name) {
        let name = (2..)
            .map(|k| format!("{}_{k}", case.name))
            .find(|n| !taken.contains(n))
            .expect("unbounded");
        case = rename_case(&case, &name)?;
    }
    let name = case.name.clone();
    let mut cases = suite.cases.clone();
    cases.push(case);
    Ok((
        TestFile::from_cases(&suite.problem_id, suite.source, &preamble, cases),
        name,
    ))
}

/// Runs one case of a file and reports its outcome and coverage.
pub trait CaseProbe {
    fn universe(&mut self) -> Result<Coverage, OptimizerError>;
    fn probe(&mut self, file: &TestFile, case_name: &str) -> Result<(Outcome, Coverage), OptimizerError>;
}

/// Probe backed by the Python runner.
pub struct SandboxProbe<'a> {
    pub validator: &'a Validator,
    pub sandbox: &'a Sandbox,
}

impl CaseProbe for SandboxProbe<'_> {
    fn universe(&mut self) -> Result<Coverage, OptimizerError> {
        Ok(self.validator.coverage_universe(self.sandbox)?)
    }

    fn probe(&mut self, file: &TestFile, case_name: &str) -> Result<(Outcome, Coverage), OptimizerError> {
        let run = self.validator.run_case(self.sandbox, &file.render(), case_name)?;
        Ok((run.result.outcome, run.coverage))
    }
}

/// Union of the coverage of every passing case of `suite`.
pub fn measure_coverage(
    probe: &mut dyn CaseProbe,
    suite: &[&TestFile],
    universe: &Coverage,
) -> Result<CoverageSnapshot, OptimizerError> {
    let mut snap = CoverageSnapshot::empty(universe);
    for file in suite {
        for case in &file.cases {
            let (outcome, cov) = probe.probe(file, &case.name)?;
            if outcome == Outcome::Pass {
                snap.absorb(&cov.within(universe));
            }
        }
    }
    Ok(snap)
}

/// A run candidate: the file it was placed into, its name there and the
/// coverage it earned.
pub type Placed = (TestFile, String, Coverage);

/// Decision for one candidate against the frozen `current` snapshot.
/// Returns the placed file and the candidate's coverage when it was run.
pub fn evaluate_candidate(
    probe: &mut dyn CaseProbe,
    suite: &TestFile,
    candidate: &Candidate,
    current: &CoverageSnapshot,
    universe: &Coverage,
) -> Result<(OptimizationDecision, Option<Placed>), OptimizerError> {
    let mut decision = OptimizationDecision {
        case_id: candidate.case.id.clone(),
        verdict: Verdict::Skipped,
        delta_lines: 0,
        delta_branch_arms: 0,
        admitted_as: None,
        outcome: None,
    };
    if current.is_saturated() {
        return Ok((decision, None));
    }
    let (file, name) = match place(suite, candidate) {
        Ok(placed) => placed,
        Err(_) => {
            decision.verdict = Verdict::Faulty;
            return Ok((decision, None));
        }
    };
    let (outcome, cov) = probe.probe(&file, &name)?;
    decision.outcome = Some(outcome);
    if outcome != Outcome::Pass {
        decision.verdict = Verdict::Faulty;
        return Ok((decision, None));
    }
    let cov = cov.within(universe);
    let (dl, da) = current.delta(&cov);
    decision.delta_lines = dl;
    decision.delta_branch_arms = da;
    decision.verdict = if dl + da > 0 { Verdict::Kept } else { Verdict::Removed };
    Ok((decision, Some((file, name, cov))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimization {
    #[serde(skip)]
    pub suite: Option<TestFile>,
    pub decisions: Vec<OptimizationDecision>,
    pub before: CoverageSnapshot,
    /// Snapshot after each admission, in order.
    pub trajectory: Vec<CoverageSnapshot>,
    pub after: CoverageSnapshot,
}

impl Optimization {
    pub fn count(&self, verdict: Verdict) -> usize {
        self.decisions.iter().filter(|d| d.verdict == verdict).count()
    }

    pub fn share(&self, verdict: Verdict) -> f64 {
        pct(self.count(verdict), self.decisions.len())
    }
}

/// Greedy left-to-right admission of `candidates` into `initial`.
pub fn optimize_suite(
    probe: &mut dyn CaseProbe,
    initial: &TestFile,
    candidates: &[Candidate],
) -> Result<Optimization, OptimizerError> {
    let universe = probe.universe()?;
    let before = measure_coverage(probe, &[initial], &universe)?;
    optimize_from(probe, initial, before, &universe, candidates)
}

/// [`optimize_suite`] starting from an already measured `before` snapshot.
pub fn optimize_from(
    probe: &mut dyn CaseProbe,
    initial: &TestFile,
    before: CoverageSnapshot,
    universe: &Coverage,
    candidates: &[Candidate],
) -> Result<Optimization, OptimizerError> {
    let mut current = before.clone();
    let mut suite = initial.clone();
    let mut decisions = Vec::with_capacity(candidates.len());
    let mut trajectory = Vec::new();
    for candidate in candidates {
        let (mut decision, placed) = evaluate_candidate(probe, &suite, candidate, &current, universe)?;
        if decision.verdict == Verdict::Kept {
            let (file, name, cov) = placed.expect("kept candidates were run");
            suite = file;
            current.absorb(&cov);
            decision.admitted_as = Some(name);
            trajectory.push(current.clone());
        }
        decisions.push(decision);
    }
    Ok(Optimization {
        suite: Some(suite),
        decisions,
        before,
        trajectory,
        after: current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validator::ModuleCoverage;

    fn universe() -> Coverage {
        let mut u = Coverage::default();
        u.modules.insert(
            "m".into(),
            ModuleCoverage {
                lines: (1..=5).collect(),
                arms: [("3:4".to_string(), 0), ("3:4".to_string(), 1)].into(),
            },
        );
        u
    }

    fn hits(lines: &[u32], arms: &[u8]) -> Coverage {
        let mut c = Coverage::default();
        c.modules.insert(
            "m".into(),
            ModuleCoverage {
                lines: lines.iter().copied().collect(),
                arms: arms.iter().map(|a| ("3:4".to_string(), *a)).collect(),
            },
        );
        c
    }

    #[test]
    fn snapshot_percentages() {
        let u = universe();
        let empty = CoverageSnapshot::empty(&u);
        assert_eq!((empty.line_pct, empty.branch_pct), (0.0, 0.0));
        let full = CoverageSnapshot::from_hits(&hits(&[1, 2, 3, 4, 5, 99], &[0, 1]), &u);
        assert_eq!((full.line_pct, full.branch_pct), (100.0, 100.0));
        assert!(full.is_saturated() && full.is_consistent());
        let half = CoverageSnapshot::from_hits(&hits(&[1, 2], &[0]), &u);
        assert_eq!(half.branch_pct, 50.0);
        assert_eq!(half.delta(&hits(&[2, 3], &[0, 1])), (1, 1));
    }

    /// Probe replaying fixed per-case results keyed by case name.
    struct Table(BTreeMap<String, (Outcome, Coverage)>);

    impl CaseProbe for Table {
        fn universe(&mut self) -> Result<Coverage, OptimizerError> {
            Ok(universe())
        }

        fn probe(&mut self, _file: &TestFile, case_name: &str) -> Result<(Outcome, Coverage), OptimizerError> {
            let key = case_name.trim_end_matches("_2");
            Ok(self
                .0
                .get(key)
                .cloned()
                .unwrap_or((Outcome::Error, Coverage::default())))
        }
    }

    fn cand(name: &str) -> Candidate {
        Candidate {
            preamble: String::new(),
            case: TestCase::new("p", Source::Llm, &format!("def {name}():\n    assert True")).unwrap(),
        }
    }

    #[test]
    fn greedy_admission() {
        let initial = TestFile::from_cases(
            "p",
            Source::Human,
            "",
            vec![TestCase::new("p", Source::Human, "def test_base():\n    assert True").unwrap()],
        );
        let mut probe = Table(
            [
                ("test_base".to_string(), (Outcome::Pass, hits(&[1, 2], &[]))),
                ("test_new".to_string(), (Outcome::Pass, hits(&[3], &[0]))),
                ("test_dup".to_string(), (Outcome::Pass, hits(&[3], &[0]))),
                ("test_wrong".to_string(), (Outcome::Fail, hits(&[4], &[]))),
                ("test_rest".to_string(), (Outcome::Pass, hits(&[4, 5], &[1]))),
            ]
            .into_iter()
            .collect(),
        );
        let cands: Vec<_> = ["test_new", "test_dup", "test_wrong", "test_rest", "test_base"]
            .map(cand)
            .into();
        let opt = optimize_suite(&mut probe, &initial, &cands).unwrap();
        let verdicts: Vec<_> = opt.decisions.iter().map(|d| d.verdict).collect();
        assert_eq!(
            verdicts,
            [
                Verdict::Kept,
                Verdict::Removed,
                Verdict::Faulty,
                Verdict::Kept,
                Verdict::Skipped
            ]
        );
        assert_eq!(opt.decisions[0].delta_lines, 1);
        assert_eq!(opt.decisions[0].delta_branch_arms, 1);
        assert!(opt.after.is_saturated());
        let total: f64 = Verdict::ALL.iter().map(|v| opt.share(*v)).sum();
        assert!((total - 100.0).abs() < 1e-9);
        assert_eq!(opt.suite.unwrap().cases.len(), 3);
    }

    #[test]
    fn no_candidates_keeps_initial() {
        let initial = TestFile::from_cases("p", Source::Human, "import pytest", vec![]);
        let mut probe = Table(BTreeMap::new());
        let opt = optimize_suite(&mut probe, &initial, &[]).unwrap();
        assert!(opt.decisions.is_empty());
        assert_eq!(opt.suite.unwrap(), initial);
        assert_eq!(opt.before, opt.after);
    }

    #[test]
    fn placement_merges_preambles_and_renames() {
        let suite = TestFile::from_cases(
            "p",
            Source::Human,
            "import pytest\nfrom m import A",
            vec![TestCase::new("p", Source::Human, "def test_a():\n    assert A()").unwrap()],
        );
        let c = Candidate {
            preamble: "import pytest\nfrom m import A\nimport math\n\n\ndef helper():\n    return 1".into(),
            case: TestCase::new("p", Source::Llm, "def test_a():\n    assert helper() == 1").unwrap(),
        };
        let (file, name) = place(&suite, &c).unwrap();
        assert_eq!(name, "test_a_2");
        assert_eq!(
            file.preamble,
            "import pytest\nfrom m import A\nimport math\n\n\ndef helper():\n    return 1"
        );
        assert!(file.render().contains("def test_a_2():"));
        // a clashing helper keeps the suite's definition
        let merged = merge_preamble("def helper():\n    return 2", "def helper():\n    return 1");
        assert_eq!(merged, "def helper():\n    return 2");
    }
}
