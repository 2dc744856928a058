//! Invariants checked over generated inputs.

mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use suitesmith::corpus::{Corpus, Source, TestCase, TestFile};
use suitesmith::metrics::{cognitive, cyclomatic, detect_smells, technical_debt, SmellKind};
use suitesmith::modelgw::{extract_test_code, FinishReason, ModelResponse};
use suitesmith::optimizer::{optimize_suite, Candidate, CaseProbe, OptimizerError, Verdict};
use suitesmith::pipeline::diff_values;
use suitesmith::promptkit::{build_user_prompt, CUT_MARKER, EXAMPLES_MARKER};
use suitesmith::repairer::{apply_repairs, syntax_report, RepairContext, SyntaxOnly, DEFAULT_MAX_PASSES};
use suitesmith::retrieval::{cosine, fit, Retriever, SelectionStrategy, StrategyKind};
use suitesmith::validator::{check_syntax, Coverage, ModuleCoverage, Outcome, Phase};

const WORDS: [&str; 8] = ["alpha", "beta", "gamma", "delta", "omega", "sigma", "tau", "phi"];

fn doc() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 0..8).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_is_symmetric_and_bounded(docs in prop::collection::vec(doc(), 1..6), a in doc(), b in doc()) {
        let space = fit(&docs).unwrap();
        let (va, vb) = (space.vectorize(&a), space.vectorize(&b));
        let ab = cosine(&va, &vb);
        prop_assert_eq!(ab, cosine(&vb, &va));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        if va.norm > 0.0 {
            prop_assert!((cosine(&va, &va) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_respects_bounds_and_pools(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rc = random_corpus(&mut rng, 8);
        let retriever = Retriever::new(&rc.corpus).unwrap();
        for target in rc.corpus.problems() {
            for kind in StrategyKind::ALL {
                let strategy = SelectionStrategy::with_run_seed(kind, seed);
                let Ok(picked) = retriever.select(&strategy, target, Source::Human, n) else { continue };
                prop_assert!(!picked.is_empty() && picked.len() <= n);
                let own = picked.iter().filter(|c| c.problem_id == target.id).count();
                if kind == StrategyKind::RandomFromCut {
                    prop_assert_eq!(own, picked.len());
                } else {
                    prop_assert_eq!(own, 0);
                }
                prop_assert!(picked.iter().all(|c| c.source == Source::Human));
            }
        }
    }

    #[test]
    fn user_prompt_carries_each_marker_once(picks in prop::collection::btree_set(0usize..50, 1..=5)) {
        let corpus = mini_corpus();
        let target = corpus.problem("mini_03").unwrap();
        let pool: Vec<TestCase> = corpus
            .problems()
            .filter(|p| p.id != target.id)
            .flat_map(|p| Source::ALL.iter().flat_map(|s| corpus.cases(&p.id, *s).to_vec()).collect::<Vec<_>>())
            .collect();
        let examples: Vec<TestCase> = picks.iter().map(|i| pool[i % pool.len()].clone()).collect();
        let text = build_user_prompt(target, &examples).unwrap();
        prop_assert_eq!(text.matches(CUT_MARKER).count(), 1);
        prop_assert_eq!(text.matches(EXAMPLES_MARKER).count(), 1);
        let mut at = text.find(EXAMPLES_MARKER).unwrap();
        for e in &examples {
            let found = text[at..].find(&e.body);
            prop_assert!(found.is_some(), "example {} missing or out of order", e.id);
            at += found.unwrap() + e.body.len();
        }
    }
}

// ---- optimizer over a synthetic probe --------------------------------------

/// Lines 1..=12 and two branch sites. A case body lists what it hits as
/// `hit(3, 7, 101)`; numbers above 100 are arms. A body containing `fail`
/// fails.
struct TableProbe;

const ARMS: [(&str, u8); 4] = [("s1", 0), ("s1", 1), ("s2", 0), ("s2", 1)];

fn hits_of(body: &str) -> Coverage {
    let inner = body
        .split("hit(")
        .nth(1)
        .and_then(|r| r.split(')').next())
        .unwrap_or("");
    let mut mc = ModuleCoverage::default();
    for n in inner.split(',').filter_map(|t| t.trim().parse::<u32>().ok()) {
        if n > 100 {
            let (site, arm) = ARMS[(n - 101) as usize % ARMS.len()];
            mc.arms.insert((site.to_string(), arm));
        } else {
            mc.lines.insert(n);
        }
    }
    let mut c = Coverage::default();
    c.modules.insert("m".into(), mc);
    c
}

impl CaseProbe for TableProbe {
    fn universe(&mut self) -> Result<Coverage, OptimizerError> {
        let mut c = Coverage::default();
        c.modules.insert(
            "m".into(),
            ModuleCoverage {
                lines: (1..=12).collect(),
                arms: ARMS.iter().map(|(s, a)| (s.to_string(), *a)).collect(),
            },
        );
        Ok(c)
    }

    fn probe(&mut self, file: &TestFile, case_name: &str) -> Result<(Outcome, Coverage), OptimizerError> {
        let case = file
            .cases
            .iter()
            .find(|c| c.name == case_name)
            .expect("probed case exists");
        let outcome = if case.body.contains("fail") {
            Outcome::Fail
        } else {
            Outcome::Pass
        };
        Ok((outcome, hits_of(&case.body)))
    }
}

fn synthetic_case(name: &str, hits: &[u32], fails: bool) -> String {
    let list: Vec<String> = hits.iter().map(u32::to_string).collect();
    let tail = if fails { " or fail" } else { "" };
    format!("def {name}():\n    assert hit({}){tail}\n", list.join(", "))
}

fn hit_list() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(prop_oneof![1u32..=12, 101u32..=104], 0..5)
}

fn items(c: &Coverage) -> BTreeSet<String> {
    coverage_items(c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn optimizer_matches_set_union_greedy(
        initial in prop::collection::vec((hit_list(), any::<bool>()), 0..3),
        stream in prop::collection::vec((hit_list(), prop::bool::weighted(0.2)), 0..12),
    ) {
        let cases = initial
            .iter()
            .enumerate()
            .map(|(i, (h, f))| TestCase::new("p", Source::Human, &synthetic_case(&format!("test_i{i}"), h, *f)).unwrap())
            .collect();
        let suite = TestFile::from_cases("p", Source::Human, "", cases);
        let candidates: Vec<Candidate> = stream
            .iter()
            .enumerate()
            .map(|(k, (h, f))| Candidate {
                preamble: String::new(),
                case: TestCase::new("p", Source::Llm, &synthetic_case(&format!("test_c{k}"), h, *f)).unwrap(),
            })
            .collect();
        let opt = optimize_suite(&mut TableProbe, &suite, &candidates).unwrap();

        let universe = items(&TableProbe.universe().unwrap());
        let mut covered: BTreeSet<String> = initial
            .iter()
            .filter(|(_, f)| !f)
            .flat_map(|(h, _)| items(&hits_of(&synthetic_case("t", h, false))))
            .collect();
        prop_assert_eq!(&snapshot_items(&opt.before), &covered);
        let mut expected = Vec::new();
        for (h, fails) in &stream {
            let new = items(&hits_of(&synthetic_case("t", h, false)));
            let verdict = if covered == universe {
                Verdict::Skipped
            } else if *fails {
                Verdict::Faulty
            } else if new.is_subset(&covered) {
                Verdict::Removed
            } else {
                covered.extend(new);
                Verdict::Kept
            };
            expected.push(verdict);
        }
        let got: Vec<Verdict> = opt.decisions.iter().map(|d| d.verdict).collect();
        prop_assert_eq!(got, expected);
        prop_assert_eq!(&snapshot_items(&opt.after), &covered);

        let total: usize = Verdict::ALL.iter().map(|v| opt.count(*v)).sum();
        prop_assert_eq!(total, candidates.len());
        prop_assert!(opt.after.line_pct >= opt.before.line_pct && opt.after.branch_pct >= opt.before.branch_pct);
        let mut previous = snapshot_items(&opt.before);
        for snap in &opt.trajectory {
            let now = snapshot_items(snap);
            prop_assert!(previous.is_subset(&now) && now.len() > previous.len());
            previous = now;
        }
        let kept = opt.suite.as_ref().unwrap().cases.len() - suite.cases.len();
        prop_assert_eq!(kept, opt.count(Verdict::Kept));
    }
}

// ---- repairer ----------------------------------------------------------------

fn snippet(kind: u8, i: usize) -> String {
    match kind % 6 {
        0 => format!("def test_g{i}():\n    assert Adder().add({i}, 0) == {i}\n"),
        1 => format!("assert Adder().add({i}, 1) == {}\n", i + 1),
        2 => format!("def test_b{i}():\n    assert (Adder().add({i},\n"),
        3 => format!("def test_c{i}():\n    # nothing to check yet\n    pass\n"),
        4 => format!("def test_s{i}(self):\n    assert Adder().add({i}, {i}) == {}\n", 2 * i),
        _ => format!("def test_p{i}():\n    with pytest.raises(TypeError):\n        Adder().add(None, {i})\n"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn repair_reaches_a_parseable_fixpoint(kinds in prop::collection::vec(any::<u8>(), 1..7), import_cut in any::<bool>()) {
        let header = if import_cut { "from Adder import Adder\n\n\n" } else { "" };
        let body: Vec<String> = kinds.iter().enumerate().map(|(i, k)| snippet(*k, i)).collect();
        let text = format!("{header}{}", body.join("\n\n"));
        let ctx = RepairContext {
            module: "Adder".into(),
            class_name: "Adder".into(),
            cut_definitions: ["Adder".to_string()].into(),
        };
        let check = SyntaxOnly { problem_id: "p".into() };
        let report = syntax_report("p", &text, Phase::Original, false);
        let first = apply_repairs(&text, &report, &ctx, &check, DEFAULT_MAX_PASSES).unwrap();
        prop_assert!(check_syntax(&first.text).passed, "repaired text does not parse:\n{}", first.text);
        let second = apply_repairs(&first.text, &first.report, &ctx, &check, DEFAULT_MAX_PASSES).unwrap();
        prop_assert!(second.log.applied.is_empty(), "second run applied {:?}", second.log.applied);
        prop_assert_eq!(&second.text, &first.text);
        for (i, k) in kinds.iter().enumerate() {
            if k % 6 == 0 {
                let name = format!("def test_g{i}()");
                prop_assert!(first.text.contains(&name));
            }
        }
    }
}

// ---- metrics -------------------------------------------------------------------

proptest! {
    #[test]
    fn flat_and_nested_conditionals(flat in 0usize..6, depth in 0usize..6) {
        let mut body = String::from("def test_m():\n    x = 0\n");
        for i in 0..flat {
            body.push_str(&format!("    if x == {i}:\n        x += 1\n"));
        }
        let case = TestCase::new("p", Source::Human, &body).unwrap();
        prop_assert_eq!(cyclomatic(&case).unwrap() as usize, 1 + flat);
        prop_assert_eq!(cognitive(&case).unwrap() as usize, flat);

        let mut nested = String::from("def test_n():\n    x = 0\n");
        for d in 0..depth {
            nested.push_str(&format!("{}if x >= {d}:\n", "    ".repeat(d + 1)));
        }
        nested.push_str(&format!("{}x += 1\n", "    ".repeat(depth + 1)));
        let case = TestCase::new("p", Source::Human, &nested).unwrap();
        prop_assert_eq!(cyclomatic(&case).unwrap() as usize, 1 + depth);
        prop_assert_eq!(cognitive(&case).unwrap() as usize, depth * (depth + 1) / 2);
    }

    #[test]
    fn debt_is_bounded_by_the_costliest_smell(kinds in prop::collection::vec(0usize..3, 1..8)) {
        let bodies = ["    assert f(1) == 1\n", "    f(2)\n", "    assert f(1) == 1\n"];
        let cases: Vec<TestCase> = kinds
            .iter()
            .enumerate()
            .map(|(i, k)| TestCase::new("p", Source::Human, &format!("def test_{i}():\n{}", bodies[*k])).unwrap())
            .collect();
        let n = cases.len();
        let smells = detect_smells(&TestFile::from_cases("p", Source::Human, "", cases));
        let debt = technical_debt(&smells, n);
        let max_cost = smells.iter().map(|s| s.kind.cost_minutes()).fold(0.0, f64::max);
        prop_assert!(debt >= 0.0);
        prop_assert!(debt <= max_cost * smells.len() as f64 / n as f64 + 1e-12);
        // Bodies 0 and 2 are the same text; a body is duplicated when any
        // other case shares it.
        let asserting = kinds.iter().filter(|k| **k != 1).count();
        let bare = kinds.len() - asserting;
        let shared = |c: usize| if c >= 2 { c } else { 0 };
        let duplicated = smells.iter().filter(|s| s.kind == SmellKind::Duplicated).count();
        prop_assert_eq!(duplicated, shared(asserting) + shared(bare));
    }
}

// ---- diff, corpus and extraction round trips -------------------------------------

fn report_value() -> impl Strategy<Value = serde_json::Value> {
    prop::collection::btree_map(
        prop::sample::select(&WORDS[..]),
        (0u32..10_000).prop_map(|v| v as f64 / 100.0),
        0..6,
    )
    .prop_map(|m| serde_json::json!({"schema_version": 1, "quality": m}))
}

proptest! {
    #[test]
    fn diff_is_antisymmetric(a in report_value(), b in report_value()) {
        let ab = diff_values(&a, &b).unwrap();
        let ba = diff_values(&b, &a).unwrap();
        prop_assert_eq!(ab.metrics.len(), ba.metrics.len());
        for (k, m) in &ab.metrics {
            prop_assert_eq!(m.delta, -ba.metrics[k].delta);
        }
        prop_assert_eq!(&ab.only_in_a, &ba.only_in_b);
        prop_assert!(diff_values(&a, &a).unwrap().is_zero());
    }

    #[test]
    fn corpus_survives_emit_and_parse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rc = random_corpus(&mut rng, 6);
        let text = rc.corpus.emit();
        let back = Corpus::from_canonical_str(&text).unwrap();
        prop_assert_eq!(back.emit(), text);
        prop_assert_eq!(back, rc.corpus);
    }

    #[test]
    fn fenced_code_is_extracted_verbatim(lines in prop::collection::vec("[a-z_ ]{0,12}(= [0-9]{1,3})?", 1..6), closed in any::<bool>()) {
        let code = lines.join("\n");
        prop_assume!(!code.trim().is_empty());
        let raw = if closed {
            format!("Here are the tests.\n```python\n{code}\n```\nDone.\n")
        } else {
            format!("```python\n{code}")
        };
        let response = ModelResponse {
            digest: "d".into(),
            raw_text: raw,
            finish_reason: FinishReason::Complete,
            latency_ms: 0,
        };
        let got = extract_test_code(&response);
        prop_assert_eq!(got.candidates, vec![code]);
        prop_assert_eq!(got.truncated, !closed);
    }
}
