//! Benchmark problems and their test corpora.
//!
//! Three input layouts are understood: the crate's own canonical JSONL, a
//! HumanEval-like layout (`task_id`, `prompt`, `canonical_solution`, `test`,
//! `entry_point`) and a ClassEval-like layout (`task_id`, `class_name`,
//! `solution_code`, unittest-style `test`). Everything is normalized into
//! standalone pytest functions on the way in.

mod normalize;

pub use normalize::{normalize_tests, normalize_tests_for, Dialect, NormalizeError};

use crate::syntax::{self, parse_module, SyntaxDiagnostic};
use rustpython_parser::ast;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// Where a test suite came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Sbst,
    Llm,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Human, Source::Sbst, Source::Llm];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Human => "human",
            Source::Sbst => "sbst",
            Source::Llm => "llm",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "human" => Ok(Source::Human),
            "sbst" => Ok(Source::Sbst),
            "llm" => Ok(Source::Llm),
            other => Err(format!("unknown test source `{other}` (expected human, sbst or llm)")),
        }
    }
}

/// On-disk layout accepted by [`load_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    CanonicalJsonl,
    HumanevalStyle,
    ClassevalStyle,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical-jsonl" | "canonical" => Ok(CorpusFormat::CanonicalJsonl),
            "humaneval-style" | "humaneval" => Ok(CorpusFormat::HumanevalStyle),
            "classeval-style" | "classeval" => Ok(CorpusFormat::ClassevalStyle),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus container at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate problem id `{0}`")]
    DuplicateId(String),
    #[error("invalid problem `{id}`: {reason}")]
    InvalidProblem { id: String, reason: String },
    #[error("invalid test case: {0}")]
    InvalidTestCase(String),
    #[error("test file references unknown problem `{0}`")]
    UnknownProblem(String),
}

/// A class or function under test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub id: String,
    pub description: String,
    pub solution_source: String,
    pub class_name: String,
    /// Leading comment or docstring block of the solution, or empty.
    pub header_comment: String,
    /// Extra files (name to source) written next to the solution.
    pub aux_sources: BTreeMap<String, String>,
}

impl Problem {
    /// Validates and builds a problem. Without a `class_name` the first
    /// top-level class (or failing that, function) of the solution is used.
    pub fn new(
        id: impl Into<String>,
        description: impl Into<String>,
        solution_source: impl Into<String>,
        class_name: Option<&str>,
    ) -> Result<Problem, CorpusError> {
        let id = id.into();
        let solution_source = solution_source.into();
        let invalid = |reason: String| CorpusError::InvalidProblem { id: id.clone(), reason };
        if id.trim().is_empty() {
            return Err(invalid("empty id".into()));
        }
        let suite = parse_module(&solution_source).map_err(|d| invalid(format!("solution does not parse: {d}")))?;
        let class_name = match class_name {
            Some(name) => name.to_string(),
            None => infer_class_name(&suite).ok_or_else(|| invalid("solution defines no class or function".into()))?,
        };
        if !syntax::module_bindings(&suite).contains(&class_name) {
            return Err(invalid(format!("`{class_name}` is not defined by the solution")));
        }
        let header_comment = extract_header(&solution_source, &suite);
        Ok(Problem {
            id,
            description: description.into(),
            solution_source,
            class_name,
            header_comment,
            aux_sources: BTreeMap::new(),
        })
    }

    pub fn with_aux_sources(mut self, aux: BTreeMap<String, String>) -> Self {
        self.aux_sources = aux;
        self
    }

    /// Python module name the solution is importable as inside the sandbox.
    pub fn module_name(&self) -> String {
        module_name_for(&self.class_name)
    }

    /// The solution with its header comment removed.
    pub fn code_without_header(&self) -> &str {
        if self.header_comment.is_empty() {
            return &self.solution_source;
        }
        match self.solution_source.find(&self.header_comment) {
            Some(at) => self.solution_source[at + self.header_comment.len()..].trim_start_matches(['\n', '\r']),
            None => &self.solution_source,
        }
    }
}

fn infer_class_name(suite: &syntax::Suite) -> Option<String> {
    let class = suite.iter().find_map(|s| match s {
        ast::Stmt::ClassDef(c) => Some(c.name.to_string()),
        _ => None,
    });
    class.or_else(|| {
        suite.iter().find_map(|s| match s {
            ast::Stmt::FunctionDef(f) => Some(f.name.to_string()),
            ast::Stmt::AsyncFunctionDef(f) => Some(f.name.to_string()),
            _ => None,
        })
    })
}

/// Leading `#` comment lines plus an immediately following module docstring.
fn extract_header(source: &str, suite: &syntax::Suite) -> String {
    let mut start = None;
    let mut end = 0;
    let mut offset = 0;
    for line in source.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('#') {
            start.get_or_insert(offset);
            end = offset + line.trim_end().len();
        } else if !t.is_empty() {
            break;
        }
        offset += line.len();
    }
    if let Some(ast::Stmt::Expr(e)) = suite.first() {
        if let ast::Expr::Constant(c) = e.value.as_ref() {
            let span = syntax::stmt_span(&suite[0]);
            if matches!(c.value, ast::Constant::Str(_)) && source[end..span.start].trim().is_empty() {
                start.get_or_insert(span.start);
                end = span.end;
            }
        }
    }
    match start {
        Some(s) => source[s..end].to_string(),
        None => String::new(),
    }
}

/// Module names the solution file must never take, since they would shadow
/// something the runner or the tests import.
const SHADOWED_MODULES: &[&str] = &[
    "abc",
    "argparse",
    "array",
    "ast",
    "asyncio",
    "atexit",
    "base64",
    "bdb",
    "binascii",
    "bisect",
    "builtins",
    "bz2",
    "calendar",
    "cmath",
    "cmd",
    "code",
    "codecs",
    "codeop",
    "collections",
    "colorsys",
    "concurrent",
    "configparser",
    "conftest",
    "contextlib",
    "contextvars",
    "copy",
    "copyreg",
    "csv",
    "ctypes",
    "dataclasses",
    "datetime",
    "decimal",
    "difflib",
    "dis",
    "doctest",
    "email",
    "encodings",
    "enum",
    "errno",
    "faulthandler",
    "fcntl",
    "filecmp",
    "fileinput",
    "fnmatch",
    "fractions",
    "functools",
    "gc",
    "getopt",
    "gettext",
    "glob",
    "graphlib",
    "gzip",
    "hashlib",
    "heapq",
    "hmac",
    "html",
    "http",
    "importlib",
    "inspect",
    "io",
    "ipaddress",
    "itertools",
    "json",
    "keyword",
    "linecache",
    "locale",
    "logging",
    "lzma",
    "marshal",
    "math",
    "mimetypes",
    "mmap",
    "numbers",
    "opcode",
    "operator",
    "optparse",
    "os",
    "pathlib",
    "pdb",
    "pickle",
    "platform",
    "pluggy",
    "posix",
    "posixpath",
    "pprint",
    "profile",
    "pstats",
    "py",
    "pytest",
    "queue",
    "random",
    "re",
    "reprlib",
    "resource",
    "runpy",
    "sched",
    "secrets",
    "select",
    "selectors",
    "shelve",
    "shlex",
    "shutil",
    "signal",
    "site",
    "socket",
    "sqlite3",
    "ssl",
    "stat",
    "statistics",
    "string",
    "struct",
    "subprocess",
    "symtable",
    "sys",
    "sysconfig",
    "tarfile",
    "tempfile",
    "termios",
    "test_candidate",
    "textwrap",
    "threading",
    "time",
    "timeit",
    "token",
    "tokenize",
    "trace",
    "traceback",
    "tracemalloc",
    "types",
    "typing",
    "unicodedata",
    "unittest",
    "urllib",
    "uuid",
    "warnings",
    "weakref",
    "xml",
    "zipfile",
    "zlib",
    "zoneinfo",
];

pub(crate) fn module_name_for(class_name: &str) -> String {
    if syntax::is_identifier(class_name)
        && class_name.is_ascii()
        && !class_name.starts_with("_")
        && !SHADOWED_MODULES.contains(&class_name)
    {
        return class_name.to_string();
    }
    let cleaned: String = class_name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("cut_{cleaned}")
}

/// One standalone test function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    /// `<problem_id>/<source>/<name>`.
    pub id: String,
    pub problem_id: String,
    pub source: Source,
    pub name: String,
    pub body: String,
}

impl TestCase {
    /// Checks that `body` is exactly one function definition. Trailing
    /// whitespace is dropped, as it is when a case is split out of a file.
    pub fn new(problem_id: &str, source: Source, body: &str) -> Result<TestCase, CorpusError> {
        let body = body.trim_end();
        let suite =
            parse_module(body).map_err(|d| CorpusError::InvalidTestCase(format!("body does not parse: {d}")))?;
        let name = match suite.as_slice() {
            [ast::Stmt::FunctionDef(f)] => f.name.to_string(),
            [ast::Stmt::AsyncFunctionDef(f)] => f.name.to_string(),
            _ => {
                return Err(CorpusError::InvalidTestCase(
                    "body must be exactly one function definition".into(),
                ))
            }
        };
        Ok(TestCase {
            id: case_id(problem_id, source, &name),
            problem_id: problem_id.to_string(),
            source,
            name,
            body: body.to_string(),
        })
    }
}

fn case_id(problem_id: &str, source: Source, name: &str) -> String {
    format!("{problem_id}/{source}/{name}")
}

/// A preamble (imports, shared setup) followed by test functions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFile {
    pub problem_id: String,
    pub source: Source,
    pub preamble: String,
    pub cases: Vec<TestCase>,
}

impl TestFile {
    /// Splits canonical test text: top-level `test*` functions become cases,
    /// everything else (with comments and blank runs trimmed) the preamble.
    pub fn parse(problem_id: &str, source: Source, text: &str) -> Result<TestFile, SyntaxDiagnostic> {
        let suite = parse_module(text)?;
        let mut cases = Vec::new();
        let mut gaps = Vec::new();
        let mut cursor = 0;
        for stmt in &suite {
            let is_case = match stmt {
                ast::Stmt::FunctionDef(f) => f.name.starts_with("test"),
                ast::Stmt::AsyncFunctionDef(f) => f.name.starts_with("test"),
                _ => false,
            };
            if !is_case {
                continue;
            }
            let lines = syntax::stmt_line_span(text, stmt);
            let span = syntax::stmt_span(stmt);
            gaps.push(&text[cursor..lines.start]);
            cursor = lines.end;
            let name = syntax::discover_cases(std::slice::from_ref(stmt))[0].name.clone();
            cases.push(TestCase {
                id: case_id(problem_id, source, &name),
                problem_id: problem_id.to_string(),
                source,
                name,
                body: text[span].to_string(),
            });
        }
        gaps.push(&text[cursor..]);
        let preamble = gaps
            .into_iter()
            .map(|g| g.trim_start_matches(['\n', '\r']).trim_end())
            .filter(|g| !g.is_empty())
            .collect::<Vec<_>>()
            .join("\n\n");
        Ok(TestFile {
            problem_id: problem_id.to_string(),
            source,
            preamble,
            cases,
        })
    }

    /// Builds a file from already validated cases.
    pub fn from_cases(problem_id: &str, source: Source, preamble: &str, cases: Vec<TestCase>) -> Self {
        TestFile {
            problem_id: problem_id.to_string(),
            source,
            preamble: preamble.trim_end().to_string(),
            cases,
        }
    }

    /// Rebinds the file and all its cases to another owner.
    pub fn with_owner(mut self, problem_id: &str, source: Source) -> Self {
        self.problem_id = problem_id.to_string();
        self.source = source;
        for case in &mut self.cases {
            case.problem_id = problem_id.to_string();
            case.source = source;
            case.id = case_id(problem_id, source, &case.name);
        }
        self
    }

    /// Preamble and cases separated by two blank lines.
    pub fn render(&self) -> String {
        render_parts(&self.preamble, self.cases.iter().map(|c| c.body.as_str()))
    }

    /// Adds `from <module> import <class_name>` when the tests use the name
    /// without binding it.
    pub fn ensure_import(&mut self, module: &str, class_name: &str) {
        let Ok(suite) = parse_module(&self.render()) else {
            return;
        };
        if syntax::loaded_names(&suite).contains(class_name) && !syntax::module_bindings(&suite).contains(class_name) {
            let line = format!("from {module} import {class_name}");
            self.preamble = syntax::insert_import(&self.preamble, &line).trim_end().to_string();
        }
    }
}

pub(crate) fn render_parts<'a>(preamble: &'a str, bodies: impl IntoIterator<Item = &'a str>) -> String {
    let mut blocks: Vec<&str> = Vec::new();
    if !preamble.trim().is_empty() {
        blocks.push(preamble.trim_end());
    }
    blocks.extend(bodies.into_iter().map(str::trim_end));
    if blocks.is_empty() {
        return String::new();
    }
    let mut out = blocks.join("\n\n\n");
    out.push('\n');
    out
}

/// A record that could not be ingested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based record number in the input.
    pub record: usize,
    pub id: Option<String>,
    /// Set when only one test block of an otherwise valid problem was refused.
    pub source: Option<Source>,
    pub reason: String,
}

/// Problems plus at most one test file per (problem, source).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    problems: BTreeMap<String, Problem>,
    tests: BTreeMap<(String, Source), TestFile>,
    rejects: Vec<Reject>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_problem(&mut self, problem: Problem) -> Result<(), CorpusError> {
        if self.problems.contains_key(&problem.id) {
            return Err(CorpusError::DuplicateId(problem.id));
        }
        self.problems.insert(problem.id.clone(), problem);
        Ok(())
    }

    /// Stores a test file, replacing any previous one for the same pair.
    pub fn set_tests(&mut self, file: TestFile) -> Result<(), CorpusError> {
        if !self.problems.contains_key(&file.problem_id) {
            return Err(CorpusError::UnknownProblem(file.problem_id));
        }
        self.tests.insert((file.problem_id.clone(), file.source), file);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    /// Problems in ascending id order.
    pub fn problems(&self) -> impl Iterator<Item = &Problem> {
        self.problems.values()
    }

    pub fn problem(&self, id: &str) -> Option<&Problem> {
        self.problems.get(id)
    }

    pub fn tests(&self, problem_id: &str, source: Source) -> Option<&TestFile> {
        self.tests.get(&(problem_id.to_string(), source))
    }

    /// Cases of one (problem, source) pair, empty when there are none.
    pub fn cases(&self, problem_id: &str, source: Source) -> &[TestCase] {
        self.tests(problem_id, source).map_or(&[], |f| f.cases.as_slice())
    }

    pub fn test_files(&self) -> impl Iterator<Item = &TestFile> {
        self.tests.values()
    }

    pub fn has_source(&self, source: Source) -> bool {
        self.tests.values().any(|f| f.source == source && !f.cases.is_empty())
    }

    pub fn rejects(&self) -> &[Reject] {
        &self.rejects
    }

    /// Canonical JSONL, one problem per line in id order.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        for p in self.problems.values() {
            let tests = Source::ALL
                .iter()
                .filter_map(|&s| self.tests(&p.id, s).map(|f| (s, f.render())))
                .collect();
            let record = CanonicalRecord {
                id: p.id.clone(),
                description: p.description.clone(),
                class_name: Some(p.class_name.clone()),
                solution: p.solution_source.clone(),
                tests,
                aux_sources: p.aux_sources.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_canonical(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.emit()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// SHA-256 of the canonical form; identifies the corpus in run digests.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.emit().as_bytes()))
    }

    /// Parses canonical JSONL text.
    pub fn from_canonical_str(text: &str) -> Result<Corpus, CorpusError> {
        load_str(text, CorpusFormat::CanonicalJsonl)
    }
}

/// Free-function spelling of [`Corpus::emit`].
pub fn emit(corpus: &Corpus) -> String {
    corpus.emit()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalRecord {
    id: String,
    description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_name: Option<String>,
    solution: String,
    #[serde(default)]
    tests: BTreeMap<Source, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    aux_sources: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct HumanevalRecord {
    task_id: String,
    prompt: String,
    canonical_solution: String,
    test: String,
    entry_point: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    tests: BTreeMap<Source, String>,
    #[serde(default)]
    aux_sources: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct ClassevalRecord {
    task_id: String,
    class_name: String,
    #[serde(default)]
    class_description: Option<String>,
    #[serde(default)]
    skeleton: Option<String>,
    solution_code: String,
    #[serde(default)]
    import_statement: ImportStatements,
    test: String,
    #[serde(default)]
    tests: BTreeMap<Source, String>,
    #[serde(default)]
    aux_sources: BTreeMap<String, String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(untagged)]
enum ImportStatements {
    #[default]
    None,
    One(String),
    Many(Vec<String>),
}

/// Problem plus raw test blocks, before normalization.
struct Draft {
    problem: Problem,
    blocks: Vec<(Source, String, Dialect)>,
    entry_point: Option<String>,
}

/// Reads a corpus file. Unreadable containers and duplicate ids are fatal;
/// individually broken records end up in [`Corpus::rejects`].
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_str(&text, format)
}

/// [`load_corpus`] over in-memory text.
pub fn load_str(text: &str, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let values = split_records(text, format)?;
    let mut corpus = Corpus::new();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, value) in values.into_iter().enumerate() {
        let record_no = idx + 1;
        let id = value
            .get("id")
            .or_else(|| value.get("task_id"))
            .and_then(|v| v.as_str())
            .map(str::to_string);
        if let Some(id) = &id {
            if !seen.insert(id.clone()) {
                return Err(CorpusError::DuplicateId(id.clone()));
            }
        }
        let draft = match build_draft(value, format) {
            Ok(d) => d,
            Err(reason) => {
                corpus.rejects.push(Reject {
                    record: record_no,
                    id,
                    source: None,
                    reason,
                });
                continue;
            }
        };
        let problem = draft.problem;
        let module = problem.module_name();
        let class_name = problem.class_name.clone();
        let pid = problem.id.clone();
        corpus.add_problem(problem)?;
        for (source, raw, dialect) in draft.blocks {
            let normalized = normalize_tests_for(&raw, dialect, draft.entry_point.as_deref());
            match normalized {
                Ok(file) if !file.cases.is_empty() => {
                    let mut file = file.with_owner(&pid, source);
                    file.ensure_import(&module, &class_name);
                    corpus.set_tests(file)?;
                }
                Ok(_) => corpus.rejects.push(Reject {
                    record: record_no,
                    id: Some(pid.clone()),
                    source: Some(source),
                    reason: "test block contains no test functions".into(),
                }),
                Err(e) => corpus.rejects.push(Reject {
                    record: record_no,
                    id: Some(pid.clone()),
                    source: Some(source),
                    reason: e.to_string(),
                }),
            }
        }
    }
    Ok(corpus)
}

fn split_records(text: &str, format: CorpusFormat) -> Result<Vec<serde_json::Value>, CorpusError> {
    let trimmed = text.trim_start();
    if format == CorpusFormat::ClassevalStyle && trimmed.starts_with('[') {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
            line: e.line(),
            message: e.to_string(),
        })?;
        return match value {
            serde_json::Value::Array(items) => Ok(items),
            _ => unreachable!("starts with '['"),
        };
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !value.is_object() {
            return Err(CorpusError::Malformed {
                line: i + 1,
                message: "record is not a JSON object".into(),
            });
        }
        out.push(value);
    }
    Ok(out)
}

fn build_draft(value: serde_json::Value, format: CorpusFormat) -> Result<Draft, String> {
    let err = |e: &dyn fmt::Display| e.to_string();
    match format {
        CorpusFormat::CanonicalJsonl => {
            let r: CanonicalRecord = serde_json::from_value(value).map_err(|e| err(&e))?;
            let problem = Problem::new(r.id, r.description, r.solution, r.class_name.as_deref())
                .map_err(|e| err(&e))?
                .with_aux_sources(r.aux_sources);
            let blocks = r
                .tests
                .into_iter()
                .map(|(s, t)| (s, t, Dialect::ClassMethodSuite))
                .collect();
            Ok(Draft {
                problem,
                blocks,
                entry_point: None,
            })
        }
        CorpusFormat::HumanevalStyle => {
            let r: HumanevalRecord = serde_json::from_value(value).map_err(|e| err(&e))?;
            let solution = format!("{}{}", r.prompt, r.canonical_solution);
            let description = match r.description {
                Some(d) => d,
                None => docstring_of(&solution, &r.entry_point).unwrap_or_else(|| r.prompt.clone()),
            };
            let problem = Problem::new(r.task_id, description, solution, Some(&r.entry_point))
                .map_err(|e| err(&e))?
                .with_aux_sources(r.aux_sources);
            let mut blocks = vec![(Source::Human, r.test, Dialect::AssertBlock)];
            blocks.extend(r.tests.into_iter().map(|(s, t)| (s, t, Dialect::AssertBlock)));
            Ok(Draft {
                problem,
                blocks,
                entry_point: Some(r.entry_point),
            })
        }
        CorpusFormat::ClassevalStyle => {
            let r: ClassevalRecord = serde_json::from_value(value).map_err(|e| err(&e))?;
            let imports = match r.import_statement {
                ImportStatements::None => Vec::new(),
                ImportStatements::One(s) => s.lines().map(str::to_string).collect(),
                ImportStatements::Many(v) => v,
            };
            let mut solution = String::new();
            for line in imports.iter().map(|l| l.trim()).filter(|l| !l.is_empty()) {
                if !r.solution_code.lines().any(|l| l.trim() == line) {
                    solution.push_str(line);
                    solution.push('\n');
                }
            }
            if !solution.is_empty() {
                solution.push('\n');
            }
            solution.push_str(&r.solution_code);
            let description = r
                .class_description
                .or_else(|| r.skeleton.as_deref().and_then(|s| docstring_of(s, &r.class_name)))
                .unwrap_or_default();
            let problem = Problem::new(r.task_id, description.trim(), solution, Some(&r.class_name))
                .map_err(|e| err(&e))?
                .with_aux_sources(r.aux_sources);
            let mut blocks = vec![(Source::Human, r.test, Dialect::ClassMethodSuite)];
            blocks.extend(r.tests.into_iter().map(|(s, t)| (s, t, Dialect::ClassMethodSuite)));
            Ok(Draft {
                problem,
                blocks,
                entry_point: None,
            })
        }
    }
}

/// Docstring of the top-level function or class called `name`.
fn docstring_of(source: &str, name: &str) -> Option<String> {
    let suite = parse_module(source).ok()?;
    let body = suite.iter().find_map(|s| match s {
        ast::Stmt::FunctionDef(f) if f.name.as_str() == name => Some(&f.body),
        ast::Stmt::AsyncFunctionDef(f) if f.name.as_str() == name => Some(&f.body),
        ast::Stmt::ClassDef(c) if c.name.as_str() == name => Some(&c.body),
        _ => None,
    })?;
    match body.first()? {
        ast::Stmt::Expr(e) => match e.value.as_ref() {
            ast::Expr::Constant(c) => match &c.value {
                ast::Constant::Str(s) => Some(syntax::dedent(s).trim().to_string()),
                _ => None,
            },
            _ => None,
        },
        _ => None,
    }
}
