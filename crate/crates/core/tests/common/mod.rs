//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use serde::Deserialize;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use suitesmith::corpus::{load_corpus, Corpus, CorpusFormat, Problem, Source, TestCase, TestFile};
use suitesmith::optimizer::Candidate;
use suitesmith::retrieval::StrategyKind;
use suitesmith::validator::ValidationReport;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn mini_corpus() -> Corpus {
    load_corpus(&fixtures().join("mini_corpus.jsonl"), CorpusFormat::CanonicalJsonl).expect("fixture corpus loads")
}

/// A model-style candidate file seeded with failure modes (repair rule
/// numbers), as stored in `fixtures/candidates.jsonl`.
#[derive(Debug, Clone, Deserialize)]
pub struct FixtureCandidate {
    pub id: String,
    pub problem_id: String,
    pub modes: Vec<u8>,
    pub truncated: bool,
    pub text: String,
}

pub fn candidates() -> Vec<FixtureCandidate> {
    let text = std::fs::read_to_string(fixtures().join("candidates.jsonl")).expect("fixture candidates");
    text.lines()
        .map(|l| serde_json::from_str(l).expect("candidate record"))
        .collect()
}

/// Tests present in a file: the executed cases, or for files that never
/// reached execution, every `def test...` line.
pub fn tests_present(text: &str, report: &ValidationReport) -> usize {
    if report.execute.is_some() {
        report.cases().len()
    } else {
        text.lines().filter(|l| l.trim_start().starts_with("def test")).count()
    }
}

// ---- dense TF-IDF oracle -------------------------------------------------

/// Lowercase alphanumeric runs. Only valid for the all-lowercase,
/// underscore-free documents generated below.
pub fn simple_tokens(doc: &str) -> Vec<String> {
    doc.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Dense term weights over a sorted vocabulary.
pub struct DenseSpace {
    pub vocab: Vec<String>,
    pub idf: Vec<f64>,
}

pub fn dense_fit(docs: &[String]) -> DenseSpace {
    let vocab: Vec<String> = docs
        .iter()
        .flat_map(|d| simple_tokens(d))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = docs.len() as f64;
    let idf = vocab
        .iter()
        .map(|t| {
            let df = docs.iter().filter(|d| simple_tokens(d).contains(t)).count() as f64;
            ((1.0 + n) / (1.0 + df)).ln() + 1.0
        })
        .collect();
    DenseSpace { vocab, idf }
}

impl DenseSpace {
    pub fn vector(&self, doc: &str) -> Vec<f64> {
        let tokens = simple_tokens(doc);
        self.vocab
            .iter()
            .zip(&self.idf)
            .map(|(t, w)| tokens.iter().filter(|x| *x == t).count() as f64 * w)
            .collect()
    }
}

pub fn dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

const WORDS: [&str; 12] = [
    "alpha", "beta", "gamma", "delta", "omega", "sigma", "tau", "phi", "rho", "zeta", "kappa", "mu",
];

/// The three retrieval fields of a generated problem, as the oracle sees
/// them.
#[derive(Debug, Clone)]
pub struct OracleDoc {
    pub id: String,
    pub description: String,
    pub code: String,
    pub full: String,
}

pub struct RandomCorpus {
    pub corpus: Corpus,
    pub docs: Vec<OracleDoc>,
}

fn words(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Up to `max_docs` problems with random descriptions, code and test
/// files.
pub fn random_corpus(rng: &mut impl Rng, max_docs: usize) -> RandomCorpus {
    let count = rng.random_range(2..=max_docs);
    random_corpus_sized(rng, count)
}

/// `count` random problems. Ids are zero padded so string order equals
/// index order.
pub fn random_corpus_sized(rng: &mut impl Rng, count: usize) -> RandomCorpus {
    let mut corpus = Corpus::new();
    let mut docs = Vec::new();
    for i in 0..count {
        let id = format!("p{i:03}");
        let description = words(rng, 0, 8);
        let body: Vec<String> = (0..rng.random_range(1..4))
            .map(|_| format!("    {} = {}\n", words(rng, 1, 1), words(rng, 1, 3).replace(' ', " + ")))
            .collect();
        let code = format!("def f{i}():\n{}", body.concat());
        let full = if rng.random_bool(0.5) {
            format!("# {}\n{code}", words(rng, 1, 5))
        } else {
            code.clone()
        };
        let problem = Problem::new(id.clone(), description.clone(), full.clone(), None).expect("generated problem");
        corpus.add_problem(problem).expect("unique id");
        for source in Source::ALL {
            if rng.random_bool(0.7) {
                let cases = (0..rng.random_range(1..=3))
                    .map(|k| TestCase::new(&id, source, &format!("def test_{k}():\n    assert True\n")).expect("case"))
                    .collect();
                corpus
                    .set_tests(TestFile::from_cases(&id, source, "", cases))
                    .expect("known problem");
            }
        }
        docs.push(OracleDoc {
            id,
            description,
            code,
            full,
        });
    }
    RandomCorpus { corpus, docs }
}

/// Fitted oracle spaces for the three fields, with every document's
/// dense vectors precomputed.
pub struct DenseRetriever {
    pub docs: Vec<OracleDoc>,
    pub description: DenseSpace,
    pub code: DenseSpace,
    pub full: DenseSpace,
    vectors: BTreeMap<String, [Vec<f64>; 3]>,
}

impl DenseRetriever {
    pub fn new(docs: &[OracleDoc]) -> Self {
        let field = |f: fn(&OracleDoc) -> &String| docs.iter().map(|d| f(d).clone()).collect::<Vec<_>>();
        let description = dense_fit(&field(|d| &d.description));
        let code = dense_fit(&field(|d| &d.code));
        let full = dense_fit(&field(|d| &d.full));
        let vectors = docs
            .iter()
            .map(|d| {
                let v = [
                    description.vector(&d.description),
                    code.vector(&d.code),
                    full.vector(&d.full),
                ];
                (d.id.clone(), v)
            })
            .collect();
        DenseRetriever {
            docs: docs.to_vec(),
            description,
            code,
            full,
            vectors,
        }
    }

    pub fn score(&self, kind: StrategyKind, a: &OracleDoc, b: &OracleDoc) -> f64 {
        let (va, vb) = (&self.vectors[&a.id], &self.vectors[&b.id]);
        let cos = |i: usize| dense_cosine(&va[i], &vb[i]);
        match kind {
            StrategyKind::ProblemSim => cos(0),
            StrategyKind::CodeSim => cos(1),
            StrategyKind::CodeCommentSim => cos(2),
            StrategyKind::ProblemPlusCodeSim => cos(0) + cos(1),
            _ => 0.0,
        }
    }

    /// Candidates with `source` tests, best first; scores equal to nine
    /// decimals are ordered by id.
    pub fn rank(&self, corpus: &Corpus, kind: StrategyKind, target: &OracleDoc, source: Source) -> Vec<(String, f64)> {
        let mut ranked: Vec<(String, f64)> = self
            .docs
            .iter()
            .filter(|d| d.id != target.id && !corpus.cases(&d.id, source).is_empty())
            .map(|d| (d.id.clone(), self.score(kind, target, d)))
            .collect();
        ranked.sort_by_key(|(id, s)| (-(s * 1e9).round() as i64, id.clone()));
        ranked
    }

    /// Case ids the first `n` slots are filled with.
    pub fn select(
        &self,
        corpus: &Corpus,
        kind: StrategyKind,
        target: &OracleDoc,
        source: Source,
        n: usize,
    ) -> Vec<String> {
        self.rank(corpus, kind, target, source)
            .iter()
            .flat_map(|(id, _)| corpus.cases(id, source).iter().map(|c| c.id.clone()))
            .take(n)
            .collect()
    }
}

// ---- hand-annotated complexity ------------------------------------------

/// (body, cyclomatic, cognitive), annotated by hand.
pub const COMPLEXITY_CASES: [(&str, u32, u32); 10] = [
    ("def test_a():\n    x = make()\n    assert x.ok\n", 1, 0),
    ("def test_b():\n    if flag:\n        assert flag\n", 2, 1),
    (
        "def test_c():\n    if a:\n        x = 1\n    elif b:\n        x = 2\n    else:\n        x = 3\n    assert x\n",
        3,
        3,
    ),
    (
        "def test_d():\n    if a:\n        x = 1\n    else:\n        if b:\n            x = 2\n    assert x\n",
        3,
        4,
    ),
    ("def test_e():\n    for i in items:\n        if i > 0:\n            assert i\n", 3, 3),
    ("def test_f():\n    if a and b or c:\n        assert True\n", 4, 3),
    (
        "def test_g():\n    for v in values:\n        try:\n            parse(v)\n        except ValueError:\n            pass\n        except KeyError:\n            pass\n",
        4,
        5,
    ),
    (
        "def test_h():\n    n = 3\n    while n:\n        n = n - 1 if n > 0 else 0\n    assert n == 0\n",
        3,
        3,
    ),
    (
        "def test_i():\n    def check(v):\n        if v:\n            return 1\n        return 0\n    key = lambda y: y if y else 0\n    assert check(key(1))\n",
        3,
        4,
    ),
    (
        "def test_j():\n    match command:\n        case \"go\":\n            out = [s for s in steps if s]\n        case \"stop\":\n            out = []\n        case _:\n            out = None\n    assert out is not None or command == \"stop\"\n",
        7,
        2,
    ),
];

// ---- three-function source for optimizer checks --------------------------

pub const TRIO: &str = r#"def classify(x):
    if x < 0:
        return "neg"
    elif x == 0:
        return "zero"
    return "pos"


def clamp(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def parity(n):
    return "even" if n % 2 == 0 else "odd"
"#;

pub fn trio_problem() -> Problem {
    Problem::new("trio", "Classify, clamp and parity helpers.", TRIO, Some("classify")).expect("trio parses")
}

pub const TRIO_PREAMBLE: &str = "from classify import classify, clamp, parity\n";

fn classify(x: i64) -> &'static str {
    match x {
        x if x < 0 => "neg",
        0 => "zero",
        _ => "pos",
    }
}

fn clamp(x: i64, lo: i64, hi: i64) -> i64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

fn parity(n: i64) -> &'static str {
    if n % 2 == 0 {
        "even"
    } else {
        "odd"
    }
}

/// A random call of one of the three functions with a correct, wrong or
/// crashing assertion.
pub fn trio_case_body(rng: &mut impl Rng, name: &str) -> String {
    let x = rng.random_range(-3i64..=3);
    let (call, expected) = match rng.random_range(0..3) {
        0 => (format!("classify({x})"), format!("{:?}", classify(x))),
        1 => {
            let (lo, hi) = (-1, 1);
            (format!("clamp({x}, {lo}, {hi})"), clamp(x, lo, hi).to_string())
        }
        _ => (format!("parity({x})"), format!("{:?}", parity(x))),
    };
    let roll = rng.random_range(0..20);
    let line = if roll < 3 {
        format!("assert {call} == {expected} + {expected}")
    } else if roll == 3 {
        format!("assert undefined_helper({call})")
    } else {
        format!("assert {call} == {expected}")
    };
    format!("def {name}():\n    {line}\n")
}

pub fn trio_candidates(rng: &mut impl Rng, count: usize) -> Vec<Candidate> {
    (0..count)
        .map(|k| {
            let body = trio_case_body(rng, &format!("test_c{k}"));
            Candidate {
                preamble: TRIO_PREAMBLE.to_string(),
                case: TestCase::new("trio", Source::Llm, &body).expect("generated case"),
            }
        })
        .collect()
}

pub fn trio_initial(rng: &mut impl Rng) -> TestFile {
    let cases = (0..rng.random_range(0..=2))
        .map(|k| TestCase::new("trio", Source::Human, &trio_case_body(rng, &format!("test_i{k}"))).expect("case"))
        .collect();
    TestFile::from_cases("trio", Source::Human, TRIO_PREAMBLE, cases)
}

/// Flattened `module -> lines` and `module -> arms` as one comparable set.
pub fn coverage_items(c: &suitesmith::validator::Coverage) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (m, mc) in &c.modules {
        out.extend(mc.lines.iter().map(|l| format!("{m}:L{l}")));
        out.extend(mc.arms.iter().map(|(b, a)| format!("{m}:B{b}/{a}")));
    }
    out
}

pub fn snapshot_items(s: &suitesmith::optimizer::CoverageSnapshot) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (m, lines) in &s.lines {
        out.extend(lines.iter().map(|l| format!("{m}:L{l}")));
    }
    for (m, arms) in &s.arms {
        out.extend(arms.iter().map(|(b, a)| format!("{m}:B{b}/{a}")));
    }
    out
}

pub fn counts<T: Ord + Clone>(items: impl IntoIterator<Item = T>) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for i in items {
        *m.entry(i).or_default() += 1;
    }
    m
}
