//! Syntax, load and per-case execution checks of candidate test files.
//!
//! Execution happens in a Python fork server: every request runs in a fresh
//! child process so a hanging or crashing case cannot affect its siblings.

mod runner;

pub use runner::PythonRunner;

use crate::corpus::Problem;
use crate::syntax::{self, SyntaxDiagnostic};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;
use tempfile::TempDir;
use thiserror::Error;

/// File name of the candidate inside a sandbox.
pub const CANDIDATE_FILE: &str = "test_candidate.py";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum ValidatorError {
    #[error("sandbox setup failed: {0}")]
    Sandbox(String),
    #[error("test runner failure: {message}\n{log}")]
    Infrastructure { message: String, log: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Original,
    Repaired,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Original => "original",
            Phase::Repaired => "repaired",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
    Error,
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Error => "error",
            Outcome::Timeout => "timeout",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pass" => Ok(Outcome::Pass),
            "fail" => Ok(Outcome::Fail),
            "error" => Ok(Outcome::Error),
            "timeout" => Ok(Outcome::Timeout),
            other => Err(format!("unknown outcome {other:?}")),
        }
    }
}

/// What went wrong, as far as it can be attributed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exc_type: Option<String>,
    /// Unbound name from a `NameError`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_name: Option<String>,
    /// Unresolvable module from an `ImportError`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_module: Option<String>,
}

impl From<SyntaxDiagnostic> for Diagnostic {
    fn from(d: SyntaxDiagnostic) -> Self {
        Diagnostic {
            message: d.message,
            line: Some(d.line),
            column: Some(d.column),
            exc_type: Some("SyntaxError".into()),
            ..Diagnostic::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<Diagnostic>,
}

impl StageResult {
    pub fn pass() -> Self {
        StageResult {
            passed: true,
            diagnostic: None,
        }
    }

    pub fn fail(diagnostic: Diagnostic) -> Self {
        StageResult {
            passed: false,
            diagnostic: Some(diagnostic),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    /// `name` or `Class::name`.
    pub case_id: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<Diagnostic>,
}

/// Result of validating one candidate. Later stages are present only when
/// the earlier ones passed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub problem_id: String,
    pub phase: Phase,
    /// The generator stopped at its token limit.
    #[serde(default)]
    pub truncated: bool,
    /// Parseable text containing no test case with executable code.
    #[serde(default)]
    pub no_executable_code: bool,
    pub syntax: StageResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compile: Option<StageResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execute: Option<Vec<CaseResult>>,
}

impl ValidationReport {
    pub fn syntax_ok(&self) -> bool {
        self.syntax.passed
    }

    pub fn compile_ok(&self) -> bool {
        self.compile.as_ref().is_some_and(|c| c.passed)
    }

    pub fn cases(&self) -> &[CaseResult] {
        self.execute.as_deref().unwrap_or(&[])
    }

    pub fn case(&self, id: &str) -> Option<&CaseResult> {
        self.cases().iter().find(|c| c.case_id == id)
    }

    pub fn passed_cases(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases().iter().filter(|c| c.outcome == Outcome::Pass)
    }

    /// Compiled, had at least one case, and every case passed.
    pub fn all_passed(&self) -> bool {
        self.compile_ok() && !self.cases().is_empty() && self.cases().iter().all(|c| c.outcome == Outcome::Pass)
    }

    /// Stage ordering holds: compile only after syntax, execute only after compile.
    pub fn is_monotone(&self) -> bool {
        (self.compile.is_none() || self.syntax.passed) && (self.execute.is_none() || self.compile_ok())
    }
}

/// Checks that `candidate` parses. Never fails: failure is a result.
pub fn check_syntax(candidate: &str) -> StageResult {
    match syntax::parse_module(candidate) {
        Ok(_) => StageResult::pass(),
        Err(d) => StageResult::fail(d.into()),
    }
}

/// Test case ids in file order; empty when the text does not parse.
pub fn case_ids(candidate: &str) -> Vec<String> {
    syntax::parse_module(candidate)
        .map(|suite| syntax::discover_cases(&suite).into_iter().map(|c| c.id).collect())
        .unwrap_or_default()
}

/// True when no discovered case contains a statement beyond a docstring or `pass`.
pub fn lacks_executable_code(candidate: &str) -> bool {
    let Ok(suite) = syntax::parse_module(candidate) else {
        return false;
    };
    let cases = syntax::discover_cases(&suite);
    cases.iter().all(|c| case_is_inert(&candidate[c.span.clone()]))
}

fn case_is_inert(text: &str) -> bool {
    let Ok(suite) = syntax::parse_module(&syntax::dedent(text)) else {
        return false;
    };
    let Some(rustpython_parser::ast::Stmt::FunctionDef(f)) = suite.first() else {
        return false;
    };
    f.body.iter().all(|s| match s {
        rustpython_parser::ast::Stmt::Pass(_) => true,
        rustpython_parser::ast::Stmt::Expr(e) => e.value.is_constant_expr(),
        _ => false,
    })
}

/// Lines and branch arms of one module.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleCoverage {
    pub lines: BTreeSet<u32>,
    /// (branch site, arm) where arm 0 is taken/entered and 1 is not.
    pub arms: BTreeSet<(String, u8)>,
}

/// Per-module coverage; used both for hits and for the executable universe.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub modules: BTreeMap<String, ModuleCoverage>,
}

impl Coverage {
    pub fn merge(&mut self, other: &Coverage) {
        for (name, m) in &other.modules {
            let entry = self.modules.entry(name.clone()).or_default();
            entry.lines.extend(m.lines.iter().copied());
            entry.arms.extend(m.arms.iter().cloned());
        }
    }

    pub fn line_count(&self) -> usize {
        self.modules.values().map(|m| m.lines.len()).sum()
    }

    pub fn arm_count(&self) -> usize {
        self.modules.values().map(|m| m.arms.len()).sum()
    }

    /// Restricts hits to what `universe` declares.
    pub fn within(&self, universe: &Coverage) -> Coverage {
        let mut out = Coverage::default();
        for (name, u) in &universe.modules {
            if let Some(m) = self.modules.get(name) {
                out.modules.insert(
                    name.clone(),
                    ModuleCoverage {
                        lines: m.lines.intersection(&u.lines).copied().collect(),
                        arms: m.arms.intersection(&u.arms).cloned().collect(),
                    },
                );
            }
        }
        out
    }

    fn from_json(v: Option<&Value>) -> Coverage {
        let mut out = Coverage::default();
        let Some(Value::Object(map)) = v else {
            return out;
        };
        for (name, m) in map {
            let lines = m["lines"]
                .as_array()
                .map(|a| a.iter().filter_map(|x| x.as_u64()).map(|x| x as u32).collect())
                .unwrap_or_default();
            let arms = m["arms"]
                .as_array()
                .map(|a| {
                    a.iter()
                        .filter_map(|p| Some((p.get(0)?.as_str()?.to_string(), p.get(1)?.as_u64()? as u8)))
                        .collect()
                })
                .unwrap_or_default();
            out.modules.insert(name.clone(), ModuleCoverage { lines, arms });
        }
        out
    }
}

/// A directory holding the solution module(s) and at most one candidate.
#[derive(Debug)]
pub struct Sandbox {
    dir: TempDir,
    problem_id: String,
    module: String,
    class_name: String,
    installed: Vec<PathBuf>,
    traced: Vec<String>,
    timeout_per_case: Duration,
}

impl Sandbox {
    /// Materializes `problem` under the system temp directory.
    pub fn create(problem: &Problem, timeout_per_case: Duration) -> Result<Sandbox, ValidatorError> {
        let dir = tempfile::Builder::new()
            .prefix("suitesmith-")
            .tempdir()
            .map_err(|e| ValidatorError::Sandbox(e.to_string()))?;
        Self::populate(dir, problem, timeout_per_case)
    }

    /// Materializes `problem` in a fresh directory below `root`.
    pub fn create_in(root: &Path, problem: &Problem, timeout_per_case: Duration) -> Result<Sandbox, ValidatorError> {
        let dir = tempfile::Builder::new()
            .prefix("sandbox-")
            .tempdir_in(root)
            .map_err(|e| ValidatorError::Sandbox(format!("{}: {e}", root.display())))?;
        Self::populate(dir, problem, timeout_per_case)
    }

    fn populate(dir: TempDir, problem: &Problem, timeout_per_case: Duration) -> Result<Sandbox, ValidatorError> {
        let module = problem.module_name();
        let mut files = vec![(module.clone(), problem.solution_source.as_str())];
        for (name, src) in &problem.aux_sources {
            if name == &module || !syntax::is_identifier(name) {
                return Err(ValidatorError::Sandbox(format!(
                    "invalid auxiliary module name {name:?}"
                )));
            }
            files.push((name.clone(), src.as_str()));
        }
        let mut installed = Vec::new();
        let mut traced = Vec::new();
        for (name, src) in files {
            let path = dir.path().join(format!("{name}.py"));
            std::fs::write(&path, src).map_err(|e| ValidatorError::Sandbox(format!("{}: {e}", path.display())))?;
            installed.push(path);
            traced.push(name);
        }
        Ok(Sandbox {
            dir,
            problem_id: problem.id.clone(),
            module,
            class_name: problem.class_name.clone(),
            installed,
            traced,
            timeout_per_case,
        })
    }

    pub fn working_dir(&self) -> &Path {
        self.dir.path()
    }

    pub fn installed_sources(&self) -> &[PathBuf] {
        &self.installed
    }

    pub fn problem_id(&self) -> &str {
        &self.problem_id
    }

    /// Import name of the class under test's module.
    pub fn module(&self) -> &str {
        &self.module
    }

    pub fn class_name(&self) -> &str {
        &self.class_name
    }

    pub fn timeout_per_case(&self) -> Duration {
        self.timeout_per_case
    }

    pub fn set_timeout_per_case(&mut self, timeout: Duration) {
        self.timeout_per_case = timeout;
    }

    fn write_candidate(&self, text: &str) -> Result<(), ValidatorError> {
        let path = self.dir.path().join(CANDIDATE_FILE);
        std::fs::write(&path, text).map_err(|e| ValidatorError::Sandbox(format!("{}: {e}", path.display())))
    }

    fn scrub(&self, text: &str) -> String {
        let dir = self.dir.path().to_string_lossy();
        let text = text.replace(dir.as_ref(), "<sandbox>");
        scrub_addresses(&text)
    }
}

/// Replaces `0x...` object addresses, which differ between runs.
fn scrub_addresses(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'0' && bytes.get(i + 1) == Some(&b'x') && (i == 0 || !bytes[i - 1].is_ascii_alphanumeric()) {
            let mut j = i + 2;
            while j < bytes.len() && bytes[j].is_ascii_hexdigit() {
                j += 1;
            }
            if j - i >= 8 {
                out.push_str("0x?");
                i = j;
                continue;
            }
        }
        let ch = text[i..].chars().next().expect("in bounds");
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

/// One executed case with the coverage it produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseRun {
    pub result: CaseResult,
    pub coverage: Coverage,
}

/// Drives a small pool of runner processes.
#[derive(Debug)]
pub struct Validator {
    runners: Vec<Mutex<PythonRunner>>,
}

impl Default for Validator {
    fn default() -> Self {
        Validator::new(1)
    }
}

impl Validator {
    /// `workers` runner processes using the interpreter from
    /// `SUITESMITH_PYTHON` or `python3`.
    pub fn new(workers: usize) -> Self {
        Self::with_python(&runner::default_python(), workers)
    }

    pub fn with_python(python: &str, workers: usize) -> Self {
        Validator {
            runners: (0..workers.max(1))
                .map(|_| Mutex::new(PythonRunner::new(python)))
                .collect(),
        }
    }

    fn request(&self, req: Value, timeout: Duration) -> Result<Value, ValidatorError> {
        for slot in &self.runners {
            if let Ok(mut runner) = slot.try_lock() {
                return runner.request(req, timeout);
            }
        }
        let mut runner = self.runners[0].lock().unwrap_or_else(|p| p.into_inner());
        runner.request(req, timeout)
    }

    fn base_request(&self, sandbox: &Sandbox, op: &str) -> Value {
        json!({
            "op": op,
            "dir": sandbox.working_dir().to_string_lossy(),
            "test": CANDIDATE_FILE,
            "trace": sandbox.traced,
            "timeout": sandbox.timeout_per_case.as_secs_f64(),
        })
    }

    /// Loads the candidate as a module with the solution importable.
    pub fn check_compile(&self, sandbox: &Sandbox, candidate: &str) -> Result<StageResult, ValidatorError> {
        sandbox.write_candidate(candidate)?;
        let v = self.request(self.base_request(sandbox, "load"), sandbox.timeout_per_case)?;
        if v["ok"].as_bool() == Some(true) {
            Ok(StageResult::pass())
        } else {
            Ok(StageResult::fail(diagnostic(sandbox, &v)))
        }
    }

    /// Runs every discovered case in its own process.
    pub fn execute_tests(&self, sandbox: &Sandbox, candidate: &str) -> Result<Vec<CaseResult>, ValidatorError> {
        sandbox.write_candidate(candidate)?;
        case_ids(candidate)
            .iter()
            .map(|id| self.run_written(sandbox, id, false).map(|r| r.result))
            .collect()
    }

    /// Runs one case of `candidate` and records solution coverage.
    pub fn run_case(&self, sandbox: &Sandbox, candidate: &str, case_id: &str) -> Result<CaseRun, ValidatorError> {
        sandbox.write_candidate(candidate)?;
        self.run_written(sandbox, case_id, true)
    }

    /// Runs each listed case of `candidate`, reusing one written file.
    pub fn run_cases(
        &self,
        sandbox: &Sandbox,
        candidate: &str,
        case_ids: &[String],
    ) -> Result<Vec<CaseRun>, ValidatorError> {
        sandbox.write_candidate(candidate)?;
        case_ids.iter().map(|id| self.run_written(sandbox, id, true)).collect()
    }

    fn run_written(&self, sandbox: &Sandbox, case_id: &str, trace: bool) -> Result<CaseRun, ValidatorError> {
        let mut req = self.base_request(sandbox, "run");
        req["case"] = json!(case_id);
        if !trace {
            req["trace"] = json!([]);
        }
        let v = self.request(req, sandbox.timeout_per_case)?;
        let outcome: Outcome = v["outcome"]
            .as_str()
            .unwrap_or("error")
            .parse()
            .unwrap_or(Outcome::Error);
        let diag = (outcome != Outcome::Pass).then(|| diagnostic(sandbox, &v));
        Ok(CaseRun {
            result: CaseResult {
                case_id: case_id.to_string(),
                outcome,
                diagnostic: diag,
            },
            coverage: Coverage::from_json(v.get("coverage")),
        })
    }

    /// Executable lines and branch arms of the installed solution modules.
    pub fn coverage_universe(&self, sandbox: &Sandbox) -> Result<Coverage, ValidatorError> {
        let v = self.request(self.base_request(sandbox, "static"), sandbox.timeout_per_case)?;
        Ok(Coverage::from_json(v.get("modules")))
    }

    /// All three stages, each run only when its predecessor passed.
    pub fn validate(
        &self,
        sandbox: &Sandbox,
        candidate: &str,
        phase: Phase,
        truncated: bool,
    ) -> Result<ValidationReport, ValidatorError> {
        let syntax = check_syntax(candidate);
        let mut report = ValidationReport {
            problem_id: sandbox.problem_id.clone(),
            phase,
            truncated,
            no_executable_code: syntax.passed && lacks_executable_code(candidate),
            syntax,
            compile: None,
            execute: None,
        };
        if !report.syntax.passed {
            return Ok(report);
        }
        let compile = self.check_compile(sandbox, candidate)?;
        let compiled = compile.passed;
        report.compile = Some(compile);
        if compiled {
            report.execute = Some(self.execute_tests(sandbox, candidate)?);
        }
        Ok(report)
    }
}

fn diagnostic(sandbox: &Sandbox, v: &Value) -> Diagnostic {
    let text = |k: &str| v[k].as_str().filter(|s| !s.is_empty()).map(|s| sandbox.scrub(s));
    Diagnostic {
        message: text("message").unwrap_or_default(),
        line: v["lineno"].as_u64().map(|n| n as usize),
        column: None,
        exc_type: text("exc_type"),
        missing_name: text("missing_name"),
        missing_module: text("missing_module"),
    }
}
