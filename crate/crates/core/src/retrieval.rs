//! TF-IDF similarity between problems and few-shot example selection.
//!
//! Three vector spaces are fitted over the corpus, one per field:
//! descriptions, solution code without its header comment, and full
//! solution code. Ranking scores are rounded to 12 decimals before sorting
//! so that floating point noise cannot reorder ties, which are then broken
//! by ascending problem id.

use crate::corpus::{Corpus, Problem, Source, TestCase};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("cannot fit a vector space on zero documents")]
    NoDocuments,
    #[error("n must be at least 1")]
    ZeroExamples,
    #[error("no {test_source} tests available for strategy {strategy}")]
    EmptyPool {
        strategy: StrategyKind,
        test_source: Source,
    },
    #[error("strategy {0} needs a seed")]
    MissingSeed(StrategyKind),
    #[error("strategy {0} takes no seed")]
    UnexpectedSeed(StrategyKind),
}

/// Lowercased word pieces: runs of letters, digits and underscores, split
/// at underscores and at camelCase boundaries (`HTTPServer` gives `http`,
/// `server`). Digits stay attached to the preceding piece.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for run in text.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
        for part in run.split('_').filter(|p| !p.is_empty()) {
            split_camel(part, &mut tokens);
        }
    }
    tokens
}

fn split_camel(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let (prev, cur) = (chars[i - 1], chars[i]);
        let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
        let boundary = (cur.is_uppercase() && (prev.is_lowercase() || prev.is_numeric()))
            || (cur.is_uppercase() && prev.is_uppercase() && next_lower);
        if boundary {
            out.push(chars[start..i].iter().collect::<String>().to_lowercase());
            start = i;
        }
    }
    if start < chars.len() {
        out.push(chars[start..].iter().collect::<String>().to_lowercase());
    }
}

/// Vocabulary and smoothed inverse document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSpace {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub doc_count: usize,
}

/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`.
pub fn fit<S: AsRef<str>>(documents: &[S]) -> Result<VectorSpace, RetrievalError> {
    if documents.is_empty() {
        return Err(RetrievalError::NoDocuments);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in documents {
        let mut seen: Vec<String> = tokenize(doc.as_ref());
        seen.sort();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = documents.len() as f64;
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::with_capacity(df.len());
    for (i, (token, count)) in df.into_iter().enumerate() {
        vocabulary.insert(token, i);
        idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
    }
    Ok(VectorSpace {
        vocabulary,
        idf,
        doc_count: documents.len(),
    })
}

impl VectorSpace {
    /// Raw term counts times idf; unknown tokens are ignored.
    pub fn vectorize(&self, doc: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for token in tokenize(doc) {
            if let Some(&i) = self.vocabulary.get(&token) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let entries: BTreeMap<usize, f64> = counts
            .into_iter()
            .map(|(i, c)| (i, c * self.idf[i]))
            .filter(|(_, w)| *w != 0.0)
            .collect();
        SparseVector::new(entries)
    }

    /// Same space with every idf weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> VectorSpace {
        VectorSpace {
            idf: self.idf.iter().map(|w| w * factor).collect(),
            ..self.clone()
        }
    }
}

/// Free-function spelling of [`VectorSpace::vectorize`].
pub fn vectorize(doc: &str, space: &VectorSpace) -> SparseVector {
    space.vectorize(doc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub entries: BTreeMap<usize, f64>,
    pub norm: f64,
}

impl SparseVector {
    pub fn new(entries: BTreeMap<usize, f64>) -> Self {
        let entries: BTreeMap<usize, f64> = entries.into_iter().filter(|(_, w)| *w != 0.0).collect();
        let norm = entries.values().map(|w| w * w).sum::<f64>().sqrt();
        SparseVector { entries, norm }
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (small, large) = if self.entries.len() <= other.entries.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .entries
            .iter()
            .filter_map(|(i, w)| large.entries.get(i).map(|v| w * v))
            .sum()
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    if a.norm == 0.0 || b.norm == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (a.norm * b.norm)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    RandomFromSuite,
    RandomFromCut,
    ProblemSim,
    CodeSim,
    CodeCommentSim,
    ProblemPlusCodeSim,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::RandomFromSuite,
        StrategyKind::RandomFromCut,
        StrategyKind::ProblemSim,
        StrategyKind::CodeSim,
        StrategyKind::CodeCommentSim,
        StrategyKind::ProblemPlusCodeSim,
    ];

    pub fn is_random(self) -> bool {
        matches!(self, StrategyKind::RandomFromSuite | StrategyKind::RandomFromCut)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::RandomFromSuite => "random_from_suite",
            StrategyKind::RandomFromCut => "random_from_cut",
            StrategyKind::ProblemSim => "problem_sim",
            StrategyKind::CodeSim => "code_sim",
            StrategyKind::CodeCommentSim => "code_comment_sim",
            StrategyKind::ProblemPlusCodeSim => "problem_plus_code_sim",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// A strategy kind plus the seed random kinds need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SelectionStrategy {
    pub fn new(kind: StrategyKind, seed: Option<u64>) -> Result<Self, RetrievalError> {
        match (kind.is_random(), seed) {
            (true, None) => Err(RetrievalError::MissingSeed(kind)),
            (false, Some(_)) => Err(RetrievalError::UnexpectedSeed(kind)),
            _ => Ok(SelectionStrategy { kind, seed }),
        }
    }

    /// Builds the strategy, attaching `seed` only for random kinds.
    pub fn with_run_seed(kind: StrategyKind, seed: u64) -> Self {
        SelectionStrategy {
            kind,
            seed: kind.is_random().then_some(seed),
        }
    }
}

/// Fitted per-field spaces over a corpus, reusable across targets.
#[derive(Debug)]
pub struct Retriever<'c> {
    corpus: &'c Corpus,
    descriptions: VectorSpace,
    code: VectorSpace,
    commented_code: VectorSpace,
}

/// A candidate problem and its similarity to the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub problem_id: String,
    pub score: f64,
}

impl<'c> Retriever<'c> {
    pub fn new(corpus: &'c Corpus) -> Result<Self, RetrievalError> {
        let problems: Vec<&Problem> = corpus.problems().collect();
        let descriptions = fit(&problems.iter().map(|p| p.description.as_str()).collect::<Vec<_>>())?;
        let code = fit(&problems.iter().map(|p| p.code_without_header()).collect::<Vec<_>>())?;
        let commented_code = fit(&problems.iter().map(|p| p.solution_source.as_str()).collect::<Vec<_>>())?;
        Ok(Retriever {
            corpus,
            descriptions,
            code,
            commented_code,
        })
    }

    pub fn corpus(&self) -> &'c Corpus {
        self.corpus
    }

    /// Raw similarity of two problems under a similarity kind.
    pub fn score(&self, kind: StrategyKind, a: &Problem, b: &Problem) -> f64 {
        let sim = |space: &VectorSpace, f: fn(&Problem) -> &str| cosine(&space.vectorize(f(a)), &space.vectorize(f(b)));
        fn description(p: &Problem) -> &str {
            &p.description
        }
        fn code(p: &Problem) -> &str {
            p.code_without_header()
        }
        fn full(p: &Problem) -> &str {
            &p.solution_source
        }
        match kind {
            StrategyKind::ProblemSim => sim(&self.descriptions, description),
            StrategyKind::CodeSim => sim(&self.code, code),
            StrategyKind::CodeCommentSim => sim(&self.commented_code, full),
            StrategyKind::ProblemPlusCodeSim => sim(&self.descriptions, description) + sim(&self.code, code),
            StrategyKind::RandomFromSuite | StrategyKind::RandomFromCut => 0.0,
        }
    }

    /// Other problems that have `source` tests, best first.
    pub fn rank(&self, kind: StrategyKind, target: &Problem, source: Source) -> Vec<Ranked> {
        let mut ranked: Vec<Ranked> = self
            .corpus
            .problems()
            .filter(|p| p.id != target.id && !self.corpus.cases(&p.id, source).is_empty())
            .map(|p| Ranked {
                problem_id: p.id.clone(),
                score: round12(self.score(kind, target, p)),
            })
            .collect();
        ranked.sort_by(|a, b| match b.score.partial_cmp(&a.score) {
            Some(Ordering::Equal) | None => a.problem_id.cmp(&b.problem_id),
            Some(order) => order,
        });
        ranked
    }

    /// Up to `n` example cases for `target`.
    pub fn select(
        &self,
        strategy: &SelectionStrategy,
        target: &Problem,
        source: Source,
        n: usize,
    ) -> Result<Vec<TestCase>, RetrievalError> {
        if n == 0 {
            return Err(RetrievalError::ZeroExamples);
        }
        let empty = || RetrievalError::EmptyPool {
            strategy: strategy.kind,
            test_source: source,
        };
        let picked: Vec<TestCase> = match strategy.kind {
            StrategyKind::RandomFromSuite | StrategyKind::RandomFromCut => {
                let seed = strategy.seed.ok_or(RetrievalError::MissingSeed(strategy.kind))?;
                let mut pool: Vec<&TestCase> = if strategy.kind == StrategyKind::RandomFromCut {
                    self.corpus.cases(&target.id, source).iter().collect()
                } else {
                    self.corpus
                        .problems()
                        .filter(|p| p.id != target.id)
                        .flat_map(|p| self.corpus.cases(&p.id, source))
                        .collect()
                };
                if pool.is_empty() {
                    return Err(empty());
                }
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, strategy.kind, &target.id));
                pool.shuffle(&mut rng);
                pool.into_iter().take(n).cloned().collect()
            }
            kind => {
                let mut out = Vec::with_capacity(n);
                for r in self.rank(kind, target, source) {
                    for case in self.corpus.cases(&r.problem_id, source) {
                        if out.len() == n {
                            break;
                        }
                        out.push(case.clone());
                    }
                    if out.len() == n {
                        break;
                    }
                }
                if out.is_empty() {
                    return Err(empty());
                }
                out
            }
        };
        Ok(picked)
    }
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// Per-target RNG seed, so that targets do not share one random stream.
fn derive_seed(seed: u64, kind: StrategyKind, target: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(kind.as_str().as_bytes());
    h.update([0]);
    h.update(target.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// One-shot selection that fits the spaces on every call. Prefer
/// [`Retriever`] when selecting for many targets.
pub fn select_examples(
    strategy: &SelectionStrategy,
    target: &Problem,
    corpus: &Corpus,
    source: Source,
    n: usize,
) -> Result<Vec<TestCase>, RetrievalError> {
    Retriever::new(corpus)?.select(strategy, target, source, n)
}
