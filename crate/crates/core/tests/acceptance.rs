//! Acceptance criteria, one pass/fail line each. Exits nonzero when any
//! criterion fails.

mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};
use suitesmith::corpus::{normalize_tests, Dialect, Problem, Source, TestCase};
use suitesmith::metrics::{cognitive, cyclomatic};
use suitesmith::modelgw::{BackendMode, Gateway, ReplayCache, ScriptedTransport};
use suitesmith::optimizer::{optimize_suite, CoverageSnapshot, SandboxProbe, Verdict};
use suitesmith::pipeline::{diff_reports, Pipeline, RunConfig, Stage};
use suitesmith::promptkit::{build_system_prompt, build_user_prompt, CUT_MARKER, EXAMPLES_MARKER};
use suitesmith::repairer::{apply_repairs, RepairContext, Repaired, SandboxCheck, DEFAULT_MAX_PASSES};
use suitesmith::retrieval::{Retriever, SelectionStrategy, StrategyKind};
use suitesmith::validator::{check_syntax, Outcome, Phase, Sandbox, ValidationReport, Validator};

type Check = Result<String, String>;

fn check(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// One fixture candidate before and after repair.
struct FixtureRepair {
    candidate: FixtureCandidate,
    original: ValidationReport,
    repaired: Repaired,
    second: Repaired,
}

fn repair_fixtures() -> Result<(Vec<FixtureRepair>, Duration), String> {
    let started = Instant::now();
    let corpus = mini_corpus();
    let validator = Validator::default();
    let mut sandboxes: BTreeMap<String, Sandbox> = BTreeMap::new();
    let mut out = Vec::new();
    for candidate in candidates() {
        let problem = corpus.problem(&candidate.problem_id).ok_or("unknown fixture problem")?;
        if !sandboxes.contains_key(&problem.id) {
            let sandbox = Sandbox::create(problem, Duration::from_secs(10)).map_err(|e| e.to_string())?;
            sandboxes.insert(problem.id.clone(), sandbox);
        }
        let sandbox = &sandboxes[&problem.id];
        let ctx = RepairContext::for_problem(problem);
        let check = SandboxCheck {
            validator: &validator,
            sandbox,
        };
        let original = validator
            .validate(sandbox, &candidate.text, Phase::Original, candidate.truncated)
            .map_err(|e| e.to_string())?;
        let repaired =
            apply_repairs(&candidate.text, &original, &ctx, &check, DEFAULT_MAX_PASSES).map_err(|e| e.to_string())?;
        let second = apply_repairs(&repaired.text, &repaired.report, &ctx, &check, DEFAULT_MAX_PASSES)
            .map_err(|e| e.to_string())?;
        out.push(FixtureRepair {
            candidate,
            original,
            repaired,
            second,
        });
    }
    Ok((out, started.elapsed()))
}

fn criterion_1(fixtures: &[FixtureRepair], elapsed: Duration) -> Check {
    let modes: BTreeSet<u8> = fixtures
        .iter()
        .flat_map(|f| f.candidate.modes.iter().copied())
        .collect();
    let mut retained = 0;
    let mut parsing = 0;
    for f in fixtures {
        let text = &f.repaired.text;
        if !check_syntax(text).passed {
            retained += text.lines().filter(|l| l.trim_start().starts_with("def test")).count();
            continue;
        }
        let cases = normalize_tests(text, Dialect::ClassMethodSuite)
            .map(|t| t.cases)
            .unwrap_or_default();
        retained += cases.len();
        parsing += cases.iter().filter(|c| check_syntax(&c.body).passed).count();
    }
    let pct = 100.0 * parsing as f64 / retained.max(1) as f64;
    check(
        fixtures.len() >= 30 && modes == (1..=9).collect() && parsing == retained && elapsed < Duration::from_secs(60),
        format!(
            "{} files, modes {:?}, {parsing}/{retained} retained cases parse ({pct:.2}%), {:.1}s",
            fixtures.len(),
            modes,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2(fixtures: &[FixtureRepair]) -> Check {
    let rate = |pick: fn(&FixtureRepair) -> (&str, &ValidationReport)| {
        let (passed, present) = fixtures.iter().fold((0, 0), |(p, n), f| {
            let (text, report) = pick(f);
            (p + report.passed_cases().count(), n + tests_present(text, report))
        });
        100.0 * passed as f64 / present.max(1) as f64
    };
    let before = rate(|f| (&f.candidate.text, &f.original));
    let after = rate(|f| (&f.repaired.text, &f.repaired.report));
    check(after > before, format!("pass rate {before:.2}% -> {after:.2}%"))
}

fn criterion_3(fixtures: &[FixtureRepair]) -> Check {
    let reapplied: usize = fixtures.iter().map(|f| f.second.log.applied.len()).sum();
    let mut regressions = Vec::new();
    for f in fixtures {
        for case in f.original.passed_cases() {
            let after = f.repaired.report.case(&case.case_id).map(|c| c.outcome);
            if after != Some(Outcome::Pass) {
                regressions.push(format!("{}:{}", f.candidate.id, case.case_id));
            }
        }
    }
    check(
        reapplied == 0 && regressions.is_empty(),
        format!(
            "second pass applied {reapplied} rules, {} regressions {:?} over {} files",
            regressions.len(),
            regressions,
            fixtures.len()
        ),
    )
}

fn criterion_4() -> Check {
    let started = Instant::now();
    let mut problems = Vec::new();
    let mut max_err = 0.0f64;
    let mut selections = 0;
    for round in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + round);
        let rc = random_corpus(&mut rng, 50);
        let retriever = Retriever::new(&rc.corpus).map_err(|e| e.to_string())?;
        let oracle = DenseRetriever::new(&rc.docs);
        let by_id: BTreeMap<&str, &Problem> = rc.corpus.problems().map(|p| (p.id.as_str(), p)).collect();
        for target in &rc.docs {
            let tp = by_id[target.id.as_str()];
            for other in &rc.docs {
                for kind in StrategyKind::ALL.into_iter().filter(|k| !k.is_random()) {
                    let err =
                        (retriever.score(kind, tp, by_id[other.id.as_str()]) - oracle.score(kind, target, other)).abs();
                    max_err = max_err.max(err);
                }
            }
            for source in Source::ALL {
                for kind in StrategyKind::ALL {
                    selections += 1;
                    let strategy = SelectionStrategy::with_run_seed(kind, round);
                    let got: Vec<String> = retriever
                        .select(&strategy, tp, source, 5)
                        .map(|cs| cs.into_iter().map(|c| c.id).collect())
                        .unwrap_or_default();
                    let ok = if kind.is_random() {
                        random_selection_ok(&rc, &retriever, &strategy, tp, source, &got)
                    } else {
                        got == oracle.select(&rc.corpus, kind, target, source, 5)
                    };
                    if !ok {
                        problems.push(format!(
                            "round {round} {} {} {}",
                            target.id,
                            source.as_str(),
                            kind.as_str()
                        ));
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    check(
        max_err <= 1e-9 && problems.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "max score error {max_err:.1e}, {} of {selections} selections disagree {:?}, {:.1}s",
            problems.len(),
            problems.iter().take(3).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Random strategies: the right pool, the right size, no repeats, and the
/// same draw for the same seed.
fn random_selection_ok(
    rc: &RandomCorpus,
    retriever: &Retriever,
    strategy: &SelectionStrategy,
    target: &Problem,
    source: Source,
    got: &[String],
) -> bool {
    let pool: BTreeSet<String> = if strategy.kind == StrategyKind::RandomFromCut {
        rc.corpus
            .cases(&target.id, source)
            .iter()
            .map(|c| c.id.clone())
            .collect()
    } else {
        rc.corpus
            .problems()
            .filter(|p| p.id != target.id)
            .flat_map(|p| rc.corpus.cases(&p.id, source).iter().map(|c| c.id.clone()))
            .collect()
    };
    let again: Vec<String> = retriever
        .select(strategy, target, source, 5)
        .map(|cs| cs.into_iter().map(|c| c.id).collect())
        .unwrap_or_default();
    let distinct: BTreeSet<&String> = got.iter().collect();
    got.len() == pool.len().min(5)
        && distinct.len() == got.len()
        && got.iter().all(|id| pool.contains(id))
        && again == got
}

fn covers(later: &CoverageSnapshot, earlier: &CoverageSnapshot) -> bool {
    snapshot_items(earlier).is_subset(&snapshot_items(later))
}

fn criterion_5() -> Check {
    let started = Instant::now();
    let problem = trio_problem();
    let sandbox = Sandbox::create(&problem, Duration::from_secs(10)).map_err(|e| e.to_string())?;
    let validator = Validator::default();
    let mut failures = Vec::new();
    let mut totals: BTreeMap<Verdict, usize> = BTreeMap::new();
    for stream in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + stream);
        let initial = trio_initial(&mut rng);
        let candidates = trio_candidates(&mut rng, 8);
        let mut probe = SandboxProbe {
            validator: &validator,
            sandbox: &sandbox,
        };
        let opt = optimize_suite(&mut probe, &initial, &candidates).map_err(|e| e.to_string())?;
        for d in &opt.decisions {
            *totals.entry(d.verdict).or_default() += 1;
        }
        let shares: f64 = Verdict::ALL.iter().map(|v| opt.share(*v)).sum();
        let accounted = opt.decisions.len() == candidates.len() && (shares - 100.0).abs() < 1e-9;
        let mut chain = vec![&opt.before];
        chain.extend(opt.trajectory.iter());
        chain.push(&opt.after);
        let monotone = chain.windows(2).all(|w| covers(w[1], w[0]));
        let no_loss = opt.after.line_pct >= opt.before.line_pct && opt.after.branch_pct >= opt.before.branch_pct;
        let kept = opt.count(Verdict::Kept);
        let witnesses = opt.trajectory.len() == kept
            && std::iter::once(&opt.before)
                .chain(opt.trajectory.iter())
                .collect::<Vec<_>>()
                .windows(2)
                .all(|w| snapshot_items(w[1]).len() > snapshot_items(w[0]).len())
            && opt
                .decisions
                .iter()
                .filter(|d| d.verdict == Verdict::Kept)
                .all(|d| d.delta_lines + d.delta_branch_arms > 0);
        if !(accounted && monotone && no_loss && witnesses) {
            failures.push(format!(
                "stream {stream}: accounted={accounted} monotone={monotone} no_loss={no_loss} witnesses={witnesses}"
            ));
        }
    }
    let elapsed = started.elapsed();
    let summary: Vec<String> = totals.iter().map(|(v, n)| format!("{v}={n}")).collect();
    check(
        failures.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "50 streams, verdicts {}, {} violations {:?}, {:.1}s",
            summary.join(" "),
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Check {
    let limit = Duration::from_secs(2);
    let problem = Problem::new("spin", "", "def f():\n    return 1\n", None).map_err(|e| e.to_string())?;
    let sandbox = Sandbox::create(&problem, limit).map_err(|e| e.to_string())?;
    let validator = Validator::default();
    let body = "from f import f\n\n\ndef test_spin():\n    while True:\n        f()\n";
    let mut worst = Duration::ZERO;
    let mut misses = 0;
    let mut last_miss = String::new();
    for _ in 0..10 {
        let started = Instant::now();
        let run = validator
            .run_case(&sandbox, body, "test_spin")
            .map_err(|e| e.to_string())?;
        let took = started.elapsed();
        worst = worst.max(took);
        if run.result.outcome != Outcome::Timeout || took > limit.mul_f64(1.25) {
            misses += 1;
            last_miss = format!(
                " (last: {} after {:.2}s)",
                run.result.outcome.as_str(),
                took.as_secs_f64()
            );
        }
    }
    check(
        misses == 0,
        format!(
            "10 runs, {misses} not timed out within 2.5s{last_miss}, slowest {:.2}s",
            worst.as_secs_f64()
        ),
    )
}

const REFERENCE_SYSTEM_PROMPT: &str = "You are an expert in Python test generation using pytest. Your goal is to generate new high-quality unit tests for a given Python class. You will be provided with the class definition and your output should be a list of new unit tests. The prompt will include EXAMPLES of similar test cases to help you generate well-structured test cases. Make sure to keep the tests maintainable and easy to understand, while aiming for high code coverage. The output should only include the test classes.";

fn criterion_7() -> Check {
    let corpus = mini_corpus();
    let target = corpus.problem("mini_00").ok_or("mini_00 missing")?;
    let pool: Vec<TestCase> = corpus
        .problems()
        .filter(|p| p.id != target.id)
        .flat_map(|p| corpus.cases(&p.id, Source::Human).to_vec())
        .collect();
    let system_ok = build_system_prompt() == REFERENCE_SYSTEM_PROMPT;
    let mut bad = Vec::new();
    for n in [1, 3, 5] {
        let examples = &pool[..n];
        let text = build_user_prompt(target, examples).map_err(|e| e.to_string())?;
        let once = |m: &str| text.matches(m).count() == 1;
        let mut last = text.find(EXAMPLES_MARKER).unwrap_or(usize::MAX);
        let mut ordered = last != usize::MAX;
        for e in examples {
            match text[last.min(text.len())..].find(&e.body) {
                Some(at) => last += at + e.body.len(),
                None => ordered = false,
            }
        }
        if !(once(CUT_MARKER) && once(EXAMPLES_MARKER) && ordered) {
            bad.push(n);
        }
    }
    check(
        system_ok && bad.is_empty(),
        format!("system prompt verbatim={system_ok}, user prompt failures for n in {bad:?}"),
    )
}

fn criterion_8() -> Check {
    let mut mismatches = Vec::new();
    for (i, (body, cc, cog)) in COMPLEXITY_CASES.iter().enumerate() {
        let case = TestCase::new("p", Source::Human, body).map_err(|e| e.to_string())?;
        let got = (
            cyclomatic(&case).map_err(|e| e.to_string())?,
            cognitive(&case).map_err(|e| e.to_string())?,
        );
        if got != (*cc, *cog) {
            mismatches.push(format!("case {} got {got:?} want {:?}", i + 1, (cc, cog)));
        }
    }
    let corpus = mini_corpus();
    let mut straight = 0;
    let mut nonzero = 0;
    for case in corpus.test_files().flat_map(|f| f.cases.iter()) {
        straight += 1;
        if cognitive(case).map_err(|e| e.to_string())? != 0 {
            nonzero += 1;
        }
    }
    check(
        mismatches.is_empty() && nonzero == 0,
        format!(
            "{} of 10 annotated cases match {:?}; {nonzero} of {straight} straight-line corpus tests score nonzero cognitive",
            10 - mismatches.len(),
            mismatches
        ),
    )
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .expect("under dir")
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&path).unwrap_or_default());
            }
        }
    }
    out
}

fn criterion_9() -> Check {
    let started = Instant::now();
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = fixtures().join("mini_corpus.jsonl");
    let cache = scratch.path().join("replay-cache.jsonl");

    let mut record = RunConfig::new(&corpus, scratch.path().join("record"));
    record.backend = BackendMode::Record;
    record.cache = Some(cache.clone());
    record.timeout_per_case_secs = 10.0;
    let transport = ScriptedTransport::from_jsonl(&fixtures().join("candidates.jsonl")).map_err(|e| e.to_string())?;
    let gateway = Gateway::record(
        Box::new(transport),
        ReplayCache::open_for_append(&cache).map_err(|e| e.to_string())?,
    );
    Pipeline::new(record)
        .map_err(|e| e.to_string())?
        .with_gateway(gateway)
        .run(&[Stage::Ingest, Stage::Select, Stage::Prompt, Stage::Generate])
        .map_err(|e| e.to_string())?;

    let mut trees = Vec::new();
    for name in ["replay-a", "replay-b"] {
        let output = scratch.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_suitesmith"))
            .arg("run")
            .arg("--corpus")
            .arg(&corpus)
            .arg("--cache")
            .arg(&cache)
            .arg("--output")
            .arg(&output)
            .args(["--timeout-per-case", "10"])
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("{name} exited with {status}"));
        }
        let runs: Vec<_> = std::fs::read_dir(&output)
            .map_err(|e| e.to_string())?
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        let [run] = runs.as_slice() else {
            return Err(format!("{name}: expected one run directory, found {}", runs.len()));
        };
        trees.push(tree(run));
    }
    let elapsed = started.elapsed();
    let (a, b) = (&trees[0], &trees[1]);
    let differing: Vec<&String> = a
        .keys()
        .chain(b.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .collect();
    let reports = a.keys().filter(|k| k.contains("reports")).count();
    let has = |f: &str| a.keys().any(|k| k.ends_with(f));
    check(
        differing.is_empty()
            && reports == 54
            && has("manifest.json")
            && has("ledger.tsv")
            && has("decisions.tsv")
            && elapsed < Duration::from_secs(600),
        format!(
            "{} files compared, {reports} reports, {} differ {:?}, {:.1}s",
            a.len(),
            differing.len(),
            differing.iter().take(3).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_10() -> Check {
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pairs = [
        (76.2, 82.4, 6.2),
        (54.1, 49.3, -4.8),
        (100.0, 100.0, 0.0),
        (0.57, 81.18, 80.61),
    ];
    let mut bad = Vec::new();
    for (i, (a, b, want)) in pairs.iter().enumerate() {
        let write = |name: &str, v: f64| {
            let path = scratch.path().join(format!("{i}-{name}.json"));
            let body = serde_json::json!({"schema_version": 1, "quality": {"coverage": {"branch_pct": v}}});
            std::fs::write(&path, body.to_string()).map(|_| path)
        };
        let (pa, pb) = (
            write("a", *a).map_err(|e| e.to_string())?,
            write("b", *b).map_err(|e| e.to_string())?,
        );
        let delta = diff_reports(&pa, &pb).map_err(|e| e.to_string())?;
        let got = delta.get("quality.coverage.branch_pct");
        if got != Some(*want) {
            bad.push(format!("{a} -> {b}: {got:?}"));
        }
    }
    check(
        bad.is_empty(),
        format!("{} pairs exact, mismatches {bad:?}", pairs.len() - bad.len()),
    )
}

fn main() -> ExitCode {
    let repairs = repair_fixtures();
    let from_repairs = |f: fn(&[FixtureRepair], Duration) -> Check| match &repairs {
        Ok((fx, elapsed)) => f(fx, *elapsed),
        Err(e) => Err(format!("fixture repair failed: {e}")),
    };
    let results: Vec<(u8, Check)> = vec![
        (1, from_repairs(criterion_1)),
        (2, from_repairs(|f, _| criterion_2(f))),
        (3, from_repairs(|f, _| criterion_3(f))),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
        (7, criterion_7()),
        (8, criterion_8()),
        (9, criterion_9()),
        (10, criterion_10()),
    ];
    let mut failed = 0;
    for (n, result) in &results {
        match result {
            Ok(detail) => println!("criterion {n} PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
