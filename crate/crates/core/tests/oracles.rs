//! Worked examples checked against independent oracles: hand arithmetic,
//! a dense brute-force TF-IDF, Python's own `ast` module, and a greedy
//! replay with full re-measurement.

mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::process::Command;
use std::time::{Duration, Instant};
use suitesmith::corpus::{normalize_tests, Dialect, Problem, Source, TestCase, TestFile};
use suitesmith::metrics::{cognitive, cyclomatic, detect_smells, technical_debt, Smell, SmellKind};
use suitesmith::optimizer::{measure_coverage, optimize_suite, CaseProbe, CoverageSnapshot, SandboxProbe, Verdict};
use suitesmith::pipeline::diff_values;
use suitesmith::promptkit::{build_system_prompt, build_user_prompt, CUT_MARKER, EXAMPLES_MARKER};
use suitesmith::repairer::{
    apply_repairs, diagnose, repair_stats, syntax_report, AppliedRepair, RepairContext, RepairLog, SyntaxOnly,
    FILE_SCOPE,
};
use suitesmith::retrieval::{cosine, fit, Retriever, SelectionStrategy, StrategyKind};
use suitesmith::validator::{Outcome, Phase, Sandbox, Validator};

const SYSTEM_PROMPT: &str = "You are an expert in Python test generation using pytest. Your goal is to generate new high-quality unit tests for a given Python class. You will be provided with the class definition and your output should be a list of new unit tests. The prompt will include EXAMPLES of similar test cases to help you generate well-structured test cases. Make sure to keep the tests maintainable and easy to understand, while aiming for high code coverage. The output should only include the test classes.";

/// Function names of every test method, in order, as Python sees them.
fn python_test_methods(source: &str) -> Vec<String> {
    let script = "import ast, sys\n\
        tree = ast.parse(sys.stdin.read())\n\
        for node in tree.body:\n\
        \x20   if isinstance(node, ast.ClassDef):\n\
        \x20       for item in node.body:\n\
        \x20           if isinstance(item, ast.FunctionDef) and item.name.startswith('test'):\n\
        \x20               print(item.name)\n";
    let mut child = Command::new("python3")
        .args(["-c", script])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .expect("python3 available");
    use std::io::Write;
    child.stdin.take().unwrap().write_all(source.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn three_method_suite_normalizes_to_three_cases() {
    let source = "import unittest\nfrom Stack import Stack\n\n\nclass TestStack(unittest.TestCase):\n    def test_push(self):\n        self.assertEqual(Stack().size(), 0)\n\n    def test_pop(self):\n        with self.assertRaises(IndexError):\n            Stack().pop()\n\n    def test_peek(self):\n        self.assertTrue(True)\n";
    let file = normalize_tests(source, Dialect::ClassMethodSuite).unwrap();
    let expected = python_test_methods(source);
    assert_eq!(expected.len(), 3);
    let got: Vec<&str> = file.cases.iter().map(|c| c.name.as_str()).collect();
    let strip = |s: &str| s.trim_start_matches("test_").to_string();
    assert_eq!(
        got.iter().map(|s| strip(s)).collect::<Vec<_>>(),
        expected.iter().map(|s| strip(s)).collect::<Vec<_>>()
    );
}

#[test]
fn idf_vector_and_cosine_arithmetic() {
    let space = fit(&["a b", "a c"]).unwrap();
    let idf = |t: &str| space.idf[space.vocabulary[t]];
    assert_eq!(space.vocabulary.len(), 3);
    assert_eq!(idf("a"), (3.0f64 / 3.0).ln() + 1.0);
    assert!((idf("b") - 1.405465).abs() < 1e-6);
    assert_eq!(idf("b"), idf("c"));

    let v = space.vectorize("a a b");
    assert_eq!(v.entries[&space.vocabulary["a"]], 2.0);
    let norm = (4.0 + idf("b") * idf("b")).sqrt();
    assert!((v.norm - norm).abs() < 1e-12);
    assert!((v.norm - 2.44438).abs() < 1e-4);

    let w = suitesmith::retrieval::SparseVector::new([(space.vocabulary["a"], 2.0)].into());
    let c = cosine(&v, &w);
    assert!((c - 4.0 / (norm * 2.0)).abs() < 1e-12);
    assert!((c - 0.81821).abs() < 1e-3);
}

#[test]
fn problem_plus_code_ranking_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let rc = random_corpus_sized(&mut rng, 10);
    let retriever = Retriever::new(&rc.corpus).unwrap();
    let oracle = DenseRetriever::new(&rc.docs);
    let kind = StrategyKind::ProblemPlusCodeSim;
    for doc in &rc.docs {
        let target = rc.corpus.problem(&doc.id).unwrap();
        let got: Vec<String> = retriever
            .rank(kind, target, Source::Human)
            .into_iter()
            .map(|r| r.problem_id)
            .collect();
        let want: Vec<String> = oracle
            .rank(&rc.corpus, kind, doc, Source::Human)
            .into_iter()
            .map(|r| r.0)
            .collect();
        assert_eq!(got, want, "ranking for {}", doc.id);
        let strategy = SelectionStrategy::new(kind, None).unwrap();
        let picked: Vec<String> = match retriever.select(&strategy, target, Source::Human, 5) {
            Ok(cases) => cases.into_iter().map(|c| c.id).collect(),
            Err(_) => Vec::new(),
        };
        assert_eq!(picked, oracle.select(&rc.corpus, kind, doc, Source::Human, 5));
    }
}

#[test]
fn system_prompt_is_verbatim() {
    let s = build_system_prompt();
    assert_eq!(s, SYSTEM_PROMPT);
    assert!(s.starts_with("You are an expert in"));
    assert!(s.contains("EXAMPLES"));
    assert!(s.contains("high code coverage"));
}

#[test]
fn user_prompt_structure() {
    let corpus = mini_corpus();
    let p1 = corpus.problem("mini_00").unwrap();
    let e1 = &corpus.cases("mini_01", Source::Human)[0];
    let text = build_user_prompt(p1, std::slice::from_ref(e1)).unwrap();
    let cut = text.find(&format!("{CUT_MARKER} {}", p1.class_name)).unwrap();
    let sol = text.find(&p1.solution_source).unwrap();
    let ex = text.find(EXAMPLES_MARKER).unwrap();
    let body = text.find(&e1.body).unwrap();
    assert!(cut < sol && sol < ex && ex < body);

    let five: Vec<TestCase> = ["mini_01", "mini_02", "mini_03"]
        .iter()
        .flat_map(|id| corpus.cases(id, Source::Human).to_vec())
        .take(5)
        .collect();
    assert_eq!(five.len(), 5);
    let text = build_user_prompt(p1, &five).unwrap();
    let positions: Vec<usize> = five.iter().map(|c| text.find(&c.body).expect("body present")).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn infinite_loop_times_out() {
    let problem = Problem::new("loop", "", "def f():\n    return 1\n", None).unwrap();
    let sandbox = Sandbox::create(&problem, Duration::from_secs(2)).unwrap();
    let validator = Validator::default();
    validator.check_compile(&sandbox, "").unwrap();
    let started = Instant::now();
    let run = validator
        .run_case(&sandbox, "def test_t():\n  while True: pass\n", "test_t")
        .unwrap();
    let elapsed = started.elapsed();
    assert_eq!(run.result.outcome, Outcome::Timeout);
    assert!(elapsed <= Duration::from_millis(2500), "took {elapsed:?}");
}

fn ctx() -> RepairContext {
    RepairContext {
        module: "Adder".into(),
        class_name: "Adder".into(),
        cut_definitions: ["Adder".to_string()].into(),
    }
}

#[test]
fn diagnosis_examples() {
    let truncated = "from Adder import Adder\n\n\ndef test_a():\n    assert Adder().add(1, 2) == 3\n\n\ndef test_b():\n    assert Adder().add(";
    let report = syntax_report("p", truncated, Phase::Original, true);
    assert_eq!(diagnose(truncated, &report, &ctx()), [1].into());

    let no_framework = "from Adder import Adder\n\n\n@pytest.mark.parametrize('x', [1, 2])\ndef test_a(x):\n    assert Adder().add(x, 0) == x\n";
    let report = syntax_report("p", no_framework, Phase::Original, false);
    assert_eq!(diagnose(no_framework, &report, &ctx()), [2].into());

    let no_cut = "def test_a():\n    assert Adder().add(1, 2) == 3\n";
    let report = syntax_report("p", no_cut, Phase::Original, false);
    assert_eq!(diagnose(no_cut, &report, &ctx()), [3].into());
}

fn repair_syntax_only(text: &str) -> suitesmith::repairer::Repaired {
    let report = syntax_report("p", text, Phase::Original, false);
    let check = SyntaxOnly { problem_id: "p".into() };
    apply_repairs(text, &report, &ctx(), &check, 2).unwrap()
}

fn applied(r: &suitesmith::repairer::Repaired) -> Vec<(u8, String)> {
    r.log.applied.iter().map(|a| (a.rule, a.scope.clone())).collect()
}

#[test]
fn repair_examples() {
    let text = "from Adder import Adder\n\n\ndef test_a():\n    with pytest.raises(TypeError):\n        Adder().add(None, 1)\n";
    let r = repair_syntax_only(text);
    let added: Vec<&str> = r.text.lines().filter(|l| !text.lines().any(|o| o == *l)).collect();
    assert_eq!(added, ["import pytest"]);
    assert_eq!(r.text.lines().count(), text.lines().count() + 1);
    assert_eq!(applied(&r), [(2, FILE_SCOPE.to_string())]);

    let text = "from Adder import Adder\nassert Adder().add(1,2)==3\n";
    let r = repair_syntax_only(text);
    assert_eq!(applied(&r), [(7, FILE_SCOPE.to_string())]);
    let wrapped = normalize_tests(&r.text, Dialect::ClassMethodSuite).unwrap();
    assert_eq!(wrapped.cases.len(), 1);
    assert!(wrapped.cases[0].body.contains("assert Adder().add(1,2)==3"));

    let text = "def test_a():\n    assert 1 == 1\n\n\ndef test_b():\n    assert (1 ==\n";
    let r = repair_syntax_only(text);
    assert_eq!(applied(&r), [(8, "test_b".to_string())]);
    assert!(r.text.contains("def test_a():\n    assert 1 == 1\n"));
    assert!(!r.text.contains("test_b"));
}

#[test]
fn repair_stats_counting() {
    let entry = |rule| AppliedRepair {
        rule,
        scope: FILE_SCOPE.into(),
        case_digest: None,
        before: String::new(),
        after: String::new(),
    };
    let logs = [
        RepairLog {
            applied: vec![entry(3)],
            ..RepairLog::default()
        },
        RepairLog {
            applied: vec![entry(3), entry(2)],
            ..RepairLog::default()
        },
    ];
    let stats = repair_stats(&logs);
    assert_eq!((stats.counts[&3], stats.counts[&2], stats.total), (2, 1, 3));
    assert!((stats.percentage(3) - 200.0 / 3.0).abs() < 1e-9);
    assert!((stats.percentage(2) - 100.0 / 3.0).abs() < 1e-9);
    assert_eq!(format!("{:.1}", stats.percentage(3)), "66.7");
}

#[test]
fn ternary_arms_count_as_branches() {
    let problem = Problem::new("f", "", "def f(x): return 1 if x>0 else 2\n", None).unwrap();
    let sandbox = Sandbox::create(&problem, Duration::from_secs(10)).unwrap();
    let validator = Validator::default();
    let mut probe = SandboxProbe {
        validator: &validator,
        sandbox: &sandbox,
    };
    let universe = probe.universe().unwrap();
    let case = TestCase::new("f", Source::Human, "def test_one():\n    assert f(1) == 1\n").unwrap();
    let file = TestFile::from_cases("f", Source::Human, "from f import f\n", vec![case]);
    let snap = measure_coverage(&mut probe, &[&file], &universe).unwrap();
    assert_eq!(snap.line_pct, 100.0);
    assert_eq!((snap.covered_arms(), snap.total_arms), (1, 2));
    assert_eq!(snap.branch_pct, 50.0);
}

/// Greedy admission replayed with the whole suite re-run at every step.
fn brute_force_verdicts(
    probe: &mut SandboxProbe,
    initial: &TestFile,
    candidates: &[suitesmith::optimizer::Candidate],
) -> Vec<Verdict> {
    let universe = probe.universe().unwrap();
    let mut suite = initial.clone();
    let mut verdicts = Vec::new();
    for c in candidates {
        let current = measure_coverage(probe, &[&suite], &universe).unwrap();
        if current.is_saturated() {
            verdicts.push(Verdict::Skipped);
            continue;
        }
        let Ok((placed, name)) = suitesmith::optimizer::place(&suite, c) else {
            verdicts.push(Verdict::Faulty);
            continue;
        };
        let (outcome, _) = probe.probe(&placed, &name).unwrap();
        if outcome != Outcome::Pass {
            verdicts.push(Verdict::Faulty);
            continue;
        }
        let after = measure_coverage(probe, &[&placed], &universe).unwrap();
        if snapshot_items(&after).len() > snapshot_items(&current).len() {
            verdicts.push(Verdict::Kept);
            suite = placed;
        } else {
            verdicts.push(Verdict::Removed);
        }
    }
    verdicts
}

#[test]
fn optimizer_matches_brute_force_replay() {
    let problem = trio_problem();
    let sandbox = Sandbox::create(&problem, Duration::from_secs(10)).unwrap();
    let validator = Validator::default();
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial = trio_initial(&mut rng);
        let candidates = trio_candidates(&mut rng, 10);
        let mut probe = SandboxProbe {
            validator: &validator,
            sandbox: &sandbox,
        };
        let opt = optimize_suite(&mut probe, &initial, &candidates).unwrap();
        let got: Vec<Verdict> = opt.decisions.iter().map(|d| d.verdict).collect();
        assert_eq!(
            got,
            brute_force_verdicts(&mut probe, &initial, &candidates),
            "seed {seed}"
        );
        let final_suite = opt.suite.as_ref().unwrap();
        let universe = probe.universe().unwrap();
        let remeasured: CoverageSnapshot = measure_coverage(&mut probe, &[final_suite], &universe).unwrap();
        assert_eq!(snapshot_items(&remeasured), snapshot_items(&opt.after));
    }
}

#[test]
fn complexity_matches_hand_annotation() {
    for (body, cc, cog) in COMPLEXITY_CASES {
        let case = TestCase::new("p", Source::Human, body).unwrap();
        assert_eq!(cyclomatic(&case).unwrap(), cc, "cyclomatic of\n{body}");
        assert_eq!(cognitive(&case).unwrap(), cog, "cognitive of\n{body}");
    }
}

#[test]
fn straight_line_tests_have_zero_cognitive_complexity() {
    let corpus = mini_corpus();
    let straight = TestCase::new(
        "p",
        Source::Human,
        "def test_s():\n    s = Stack()\n    s.push(1)\n    assert s.pop() == 1\n",
    )
    .unwrap();
    assert_eq!(cognitive(&straight).unwrap(), 0);
    for file in corpus.test_files() {
        for case in &file.cases {
            assert_eq!(cognitive(case).unwrap(), 0, "{}", case.id);
        }
    }
}

#[test]
fn duplicate_smell_debt_arithmetic() {
    let smells = [Smell {
        case_id: "p/human/test_a".into(),
        kind: SmellKind::Duplicated,
    }];
    assert_eq!(technical_debt(&smells, 2), (10.0 + 0.0) / 2.0);

    let a = TestCase::new("p", Source::Human, "def test_a():\n    assert f(1) == 1\n").unwrap();
    let b = TestCase::new("p", Source::Human, "def test_b():\n    assert f(2) == 2\n").unwrap();
    let found = detect_smells(&TestFile::from_cases("p", Source::Human, "", vec![a, b]));
    assert!(found.is_empty());
}

#[test]
fn report_delta_arithmetic() {
    let a = serde_json::json!({"schema_version": 1, "quality": {"branch_pct": 76.2}});
    let b = serde_json::json!({"schema_version": 1, "quality": {"branch_pct": 82.4}});
    let d = diff_values(&a, &b).unwrap();
    assert_eq!(d.get("quality.branch_pct"), Some(6.2));
    assert_eq!(format!("{:+}", d.get("quality.branch_pct").unwrap()), "+6.2");
    assert!(diff_values(&a, &a).unwrap().is_zero());
    let dv = serde_json::to_value(&d).unwrap();
    assert!(diff_values(&dv, &dv).unwrap().is_zero());
}
