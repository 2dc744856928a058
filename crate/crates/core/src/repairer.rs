//! Rule-based repair of failing candidate test files.
//!
//! Every rule is a text transform that yields no edit when its trigger does
//! not hold, so a rule is logged only when it actually changed the text.
//! Transforms work on line segments rather than on the AST wherever the input
//! may be unparseable.

use crate::corpus::{Problem, Source};
use crate::syntax::{self, Segment, SegmentKind};
use crate::validator::{Diagnostic, Phase, Sandbox, StageResult, ValidationReport, Validator, ValidatorError};
use rustpython_parser::ast;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

pub const DEFAULT_MAX_PASSES: usize = 2;

/// Scope label of edits that are not tied to one test case.
pub const FILE_SCOPE: &str = "file";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepairRule {
    pub number: u8,
    pub name: &'static str,
}

pub const RULES: [RepairRule; 9] = [
    RepairRule {
        number: 1,
        name: "remove incomplete trailing case",
    },
    RepairRule {
        number: 2,
        name: "add missing pytest import",
    },
    RepairRule {
        number: 3,
        name: "add missing import of the class under test",
    },
    RepairRule {
        number: 4,
        name: "remove unresolvable import",
    },
    RepairRule {
        number: 5,
        name: "remove self from standalone function",
    },
    RepairRule {
        number: 6,
        name: "remove redefinition of the class under test",
    },
    RepairRule {
        number: 7,
        name: "wrap bare assertions in a test function",
    },
    RepairRule {
        number: 8,
        name: "remove case with syntax error",
    },
    RepairRule {
        number: 9,
        name: "remove case without executable code",
    },
];

pub fn rule(number: u8) -> Option<RepairRule> {
    RULES.iter().copied().find(|r| r.number == number)
}

/// What the repairer knows about the class under test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairContext {
    pub module: String,
    pub class_name: String,
    /// Top-level functions and classes of the solution.
    pub cut_definitions: BTreeSet<String>,
}

impl RepairContext {
    pub fn for_problem(problem: &Problem) -> Self {
        let cut_definitions = syntax::parse_module(&problem.solution_source)
            .map(|suite| {
                suite
                    .iter()
                    .filter_map(|s| match s {
                        ast::Stmt::FunctionDef(f) => Some(f.name.to_string()),
                        ast::Stmt::AsyncFunctionDef(f) => Some(f.name.to_string()),
                        ast::Stmt::ClassDef(c) => Some(c.name.to_string()),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default();
        RepairContext {
            module: problem.module_name(),
            class_name: problem.class_name.clone(),
            cut_definitions,
        }
    }
}

/// One logged rule application.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedRepair {
    pub rule: u8,
    /// Case id, or [`FILE_SCOPE`].
    pub scope: String,
    /// Digest of the affected case's text, for case-scoped edits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_digest: Option<String>,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairLog {
    pub problem_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    pub applied: Vec<AppliedRepair>,
    pub passes: usize,
    /// Why the result is empty, when it is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// One atomic edit produced by a rule.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Step {
    scope: String,
    case_text: Option<String>,
    text: String,
}

fn file_step(text: String) -> Step {
    Step {
        scope: FILE_SCOPE.into(),
        case_text: None,
        text,
    }
}

/// Rules whose triggers hold for `candidate`, each judged on its own.
/// A syntax error inside a truncated tail belongs to rule 1, so rule 8 is
/// judged on the text with that tail already cut.
pub fn diagnose(candidate: &str, report: &ValidationReport, ctx: &RepairContext) -> BTreeSet<u8> {
    let untruncated = rule_truncated(candidate, report).pop().map(|s| s.text);
    RULES
        .iter()
        .filter(|r| {
            let text = match (&untruncated, r.number) {
                (Some(t), 8) => t.as_str(),
                _ => candidate,
            };
            !transform(r.number, text, report, ctx).is_empty()
        })
        .map(|r| r.number)
        .collect()
}

/// One pass: every rule in ascending order, each on the output of the last.
pub fn repair_pass(candidate: &str, report: &ValidationReport, ctx: &RepairContext) -> (String, Vec<AppliedRepair>) {
    let mut text = candidate.to_string();
    let mut applied = Vec::new();
    for r in RULES {
        for step in transform(r.number, &text, report, ctx) {
            if step.text == text {
                continue;
            }
            applied.push(AppliedRepair {
                rule: r.number,
                scope: step.scope,
                case_digest: step.case_text.as_deref().map(text_digest),
                before: text_digest(&text),
                after: text_digest(&step.text),
            });
            text = step.text;
        }
    }
    (text, applied)
}

/// Re-validation used between passes.
pub trait Revalidate {
    fn revalidate(&self, candidate: &str) -> Result<ValidationReport, ValidatorError>;
}

/// Full three-stage re-validation in a sandbox.
pub struct SandboxCheck<'a> {
    pub validator: &'a Validator,
    pub sandbox: &'a Sandbox,
}

impl Revalidate for SandboxCheck<'_> {
    fn revalidate(&self, candidate: &str) -> Result<ValidationReport, ValidatorError> {
        self.validator.validate(self.sandbox, candidate, Phase::Repaired, false)
    }
}

/// Syntax-only re-validation, for callers without an interpreter.
pub struct SyntaxOnly {
    pub problem_id: String,
}

impl Revalidate for SyntaxOnly {
    fn revalidate(&self, candidate: &str) -> Result<ValidationReport, ValidatorError> {
        Ok(syntax_report(&self.problem_id, candidate, Phase::Repaired, false))
    }
}

/// A report carrying only the syntax stage.
pub fn syntax_report(problem_id: &str, candidate: &str, phase: Phase, truncated: bool) -> ValidationReport {
    let syntax = crate::validator::check_syntax(candidate);
    ValidationReport {
        problem_id: problem_id.to_string(),
        phase,
        truncated,
        no_executable_code: syntax.passed && crate::validator::lacks_executable_code(candidate),
        syntax,
        compile: None,
        execute: None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repaired {
    pub text: String,
    pub log: RepairLog,
    /// Report of the returned text; the input report when nothing changed.
    pub report: ValidationReport,
}

/// Applies passes until one changes nothing or `max_passes` is reached,
/// re-validating after every changing pass.
pub fn apply_repairs(
    candidate: &str,
    report: &ValidationReport,
    ctx: &RepairContext,
    check: &dyn Revalidate,
    max_passes: usize,
) -> Result<Repaired, ValidatorError> {
    let mut text = candidate.to_string();
    let mut current = report.clone();
    let mut log = RepairLog {
        problem_id: report.problem_id.clone(),
        ..RepairLog::default()
    };
    while log.passes < max_passes {
        let (next, applied) = repair_pass(&text, &current, ctx);
        if applied.is_empty() {
            break;
        }
        log.passes += 1;
        log.applied.extend(applied);
        text = next;
        current = check.revalidate(&text)?;
    }
    if !log.applied.is_empty() && text.trim().is_empty() {
        log.note = Some(match log.applied.last() {
            Some(last) => format!(
                "no test case survived repair; last applied rule {} ({})",
                last.rule,
                rule(last.rule).map_or("", |r| r.name)
            ),
            None => "no test case survived repair".into(),
        });
        text.clear();
    }
    Ok(Repaired {
        text,
        log,
        report: current,
    })
}

/// Per-rule application counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairStats {
    pub counts: BTreeMap<u8, usize>,
    pub by_source: BTreeMap<Source, BTreeMap<u8, usize>>,
    pub total: usize,
}

impl RepairStats {
    /// Share of all applications, in percent; zero when nothing was applied.
    pub fn percentage(&self, rule: u8) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        *self.counts.get(&rule).unwrap_or(&0) as f64 * 100.0 / self.total as f64
    }
}

pub fn repair_stats(logs: &[RepairLog]) -> RepairStats {
    let mut stats = RepairStats::default();
    for r in RULES {
        stats.counts.insert(r.number, 0);
    }
    for log in logs {
        for a in &log.applied {
            *stats.counts.entry(a.rule).or_default() += 1;
            stats.total += 1;
            if let Some(src) = log.source {
                let per = stats
                    .by_source
                    .entry(src)
                    .or_insert_with(|| RULES.iter().map(|r| (r.number, 0)).collect());
                *per.entry(a.rule).or_default() += 1;
            }
        }
    }
    stats
}

fn transform(rule: u8, text: &str, report: &ValidationReport, ctx: &RepairContext) -> Vec<Step> {
    match rule {
        1 => rule_truncated(text, report),
        2 => rule_pytest_import(text, report),
        3 => rule_cut_import(text, report, ctx),
        4 => rule_faulty_import(text, report),
        5 => rule_stray_self(text),
        6 => rule_cut_redefinition(text, ctx),
        7 => rule_bare_asserts(text),
        8 => rule_syntax_errors(text),
        9 => rule_no_code(text),
        _ => Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// helpers

fn parses(text: &str) -> bool {
    syntax::parse_module(text).is_ok()
}

fn diagnostics(report: &ValidationReport) -> impl Iterator<Item = &Diagnostic> {
    report
        .compile
        .iter()
        .filter_map(|c: &StageResult| c.diagnostic.as_ref())
        .chain(report.cases().iter().filter_map(|c| c.diagnostic.as_ref()))
}

/// Removes `range` (whole lines) and any blank lines left doubled behind it.
fn remove_span(text: &str, range: Range<usize>) -> String {
    let mut out = String::with_capacity(text.len());
    let head = &text[..range.start];
    let mut tail = &text[range.end..];
    out.push_str(head);
    if head.is_empty() || head.ends_with("\n\n") {
        while let Some(rest) = tail.strip_prefix('\n') {
            tail = rest;
        }
    }
    out.push_str(tail);
    out
}

fn is_case_name(name: &str) -> bool {
    name.starts_with("test")
}

/// Methods of a class segment; empty when the body cannot be located.
fn class_members(text: &str, class: &Segment) -> Vec<Segment> {
    let Some(nl) = text[class.header..class.span.end].find('\n') else {
        return Vec::new();
    };
    let body_start = class.header + nl + 1;
    let body = &text[body_start..class.span.end];
    let Some(base) = body
        .lines()
        .find(|l| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(syntax::indent_of)
    else {
        return Vec::new();
    };
    if base <= class.indent {
        return Vec::new();
    }
    syntax::segment_block(text, body_start..class.span.end, base)
}

/// Leaf cases as (id, segment): top-level functions and methods of classes.
fn case_segments(text: &str) -> Vec<(String, Segment)> {
    let mut out = Vec::new();
    for seg in syntax::segment(text) {
        match &seg.kind {
            SegmentKind::Function { name } => out.push((name.clone(), seg.clone())),
            SegmentKind::Class { name } => {
                for m in class_members(text, &seg) {
                    if let SegmentKind::Function { name: mname } = &m.kind {
                        out.push((format!("{name}::{mname}"), m.clone()));
                    }
                }
            }
            SegmentKind::Statement => {}
        }
    }
    out
}

fn code_part(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn has_word(text: &str, word: &str) -> bool {
    text.lines().any(|l| {
        let code = code_part(l);
        let mut from = 0;
        while let Some(i) = code[from..].find(word) {
            let s = from + i;
            let e = s + word.len();
            let before = code[..s].chars().next_back();
            let after = code[e..].chars().next();
            let ident = |c: Option<char>| c.is_some_and(|c| c == '_' || c.is_alphanumeric());
            if !ident(before) && !ident(after) {
                return true;
            }
            from = e;
        }
        false
    })
}

/// Names bound anywhere in the file: top-level bindings, imports and
/// assignments in any scope, and parameters.
fn bound_anywhere(suite: &[ast::Stmt]) -> BTreeSet<String> {
    use crate::syntax::{walk_expr, walk_stmt, Visitor};
    struct Binds(BTreeSet<String>);
    impl<'a> Visitor<'a> for Binds {
        fn visit_stmt(&mut self, stmt: &'a ast::Stmt) {
            match stmt {
                ast::Stmt::Import(_) | ast::Stmt::ImportFrom(_) => {
                    self.0.extend(syntax::module_bindings(std::slice::from_ref(stmt)));
                }
                ast::Stmt::FunctionDef(f) => {
                    self.0.insert(f.name.to_string());
                    bind_args(&f.args, &mut self.0);
                }
                ast::Stmt::AsyncFunctionDef(f) => {
                    self.0.insert(f.name.to_string());
                    bind_args(&f.args, &mut self.0);
                }
                ast::Stmt::ClassDef(c) => {
                    self.0.insert(c.name.to_string());
                }
                _ => {}
            }
            walk_stmt(self, stmt);
        }

        fn visit_expr(&mut self, expr: &'a ast::Expr) {
            if let ast::Expr::Name(n) = expr {
                if matches!(n.ctx, ast::ExprContext::Store) {
                    self.0.insert(n.id.to_string());
                }
            }
            walk_expr(self, expr);
        }
    }
    fn bind_args(args: &ast::Arguments, out: &mut BTreeSet<String>) {
        for a in args.posonlyargs.iter().chain(&args.args).chain(&args.kwonlyargs) {
            out.insert(a.def.arg.to_string());
        }
        for a in args.vararg.iter().chain(&args.kwarg) {
            out.insert(a.arg.to_string());
        }
    }
    let mut b = Binds(syntax::module_bindings(suite));
    for stmt in suite {
        b.visit_stmt(stmt);
    }
    b.0
}

/// Whether `name` is read but never bound. Falls back to a textual check
/// when the file does not parse.
fn unbound_use(text: &str, name: &str) -> bool {
    match syntax::parse_module(text) {
        Ok(suite) => syntax::loaded_names(&suite).contains(name) && !bound_anywhere(&suite).contains(name),
        Err(_) => {
            let imported = text.lines().any(|l| {
                let t = code_part(l).trim_start();
                (t.starts_with("import ") || t.starts_with("from ")) && has_word(t, name)
            });
            !imported
                && text.lines().any(|l| {
                    let t = code_part(l).trim_start();
                    !t.starts_with("import ") && !t.starts_with("from ") && has_word(t, name)
                })
        }
    }
}

// ---------------------------------------------------------------------------
// rules

fn rule_truncated(text: &str, report: &ValidationReport) -> Vec<Step> {
    if !report.truncated {
        return Vec::new();
    }
    let segs = syntax::segment(text);
    let Some(last) = segs.last() else {
        return Vec::new();
    };
    let (scope, target) = match &last.kind {
        SegmentKind::Function { name } => (name.clone(), last.clone()),
        SegmentKind::Class { name } => match class_members(text, last).last() {
            Some(m) if class_members(text, last).len() > 1 => {
                (format!("{name}::{}", m.name().unwrap_or("?")), m.clone())
            }
            _ => (name.clone(), last.clone()),
        },
        SegmentKind::Statement => (FILE_SCOPE.to_string(), last.clone()),
    };
    if report
        .case(&scope)
        .is_some_and(|c| c.outcome == crate::validator::Outcome::Pass)
    {
        return Vec::new();
    }
    let case_text = (scope != FILE_SCOPE).then(|| target.text(text).to_string());
    vec![Step {
        scope,
        case_text,
        text: remove_span(text, target.span.clone()),
    }]
}

fn rule_pytest_import(text: &str, report: &ValidationReport) -> Vec<Step> {
    let diag = diagnostics(report).any(|d| d.missing_name.as_deref() == Some("pytest"));
    let needed = unbound_use(text, "pytest");
    let bound = match syntax::parse_module(text) {
        Ok(suite) => syntax::module_bindings(&suite).contains("pytest"),
        Err(_) => false,
    };
    if needed || (diag && !bound && has_word(text, "pytest")) {
        vec![file_step(syntax::insert_import(text, "import pytest"))]
    } else {
        Vec::new()
    }
}

fn rule_cut_import(text: &str, report: &ValidationReport, ctx: &RepairContext) -> Vec<Step> {
    let name = ctx.class_name.as_str();
    let diag = diagnostics(report).any(|d| d.missing_name.as_deref() == Some(name));
    let bound = match syntax::parse_module(text) {
        Ok(suite) => syntax::module_bindings(&suite).contains(name),
        Err(_) => false,
    };
    if unbound_use(text, name) || (diag && !bound && has_word(text, name)) {
        let line = format!("from {} import {}", ctx.module, name);
        vec![file_step(syntax::insert_import(text, &line))]
    } else {
        Vec::new()
    }
}

fn rule_faulty_import(text: &str, report: &ValidationReport) -> Vec<Step> {
    let missing: BTreeSet<&str> = diagnostics(report)
        .filter_map(|d| d.missing_module.as_deref())
        .collect();
    if missing.is_empty() {
        return Vec::new();
    }
    let Ok(suite) = syntax::parse_module(text) else {
        return Vec::new();
    };
    let mut spans: Vec<Range<usize>> = suite
        .iter()
        .filter(|s| {
            syntax::imported_modules(s)
                .iter()
                .any(|m| missing.iter().any(|miss| syntax::module_matches(m, miss)))
        })
        .map(|s| syntax::stmt_line_span(text, s))
        .collect();
    spans.reverse();
    let mut out = text.to_string();
    let mut steps = Vec::new();
    // removing from the end keeps earlier offsets valid; log in file order
    for span in spans {
        out = remove_span(&out, span);
        steps.push(out.clone());
    }
    steps.into_iter().map(file_step).collect()
}

fn rule_stray_self(text: &str) -> Vec<Step> {
    let mut steps = Vec::new();
    let mut current = text.to_string();
    loop {
        let found = syntax::segment(&current).into_iter().find_map(|seg| {
            let SegmentKind::Function { name } = &seg.kind else {
                return None;
            };
            let header = &current[seg.header..seg.span.end];
            let open = header.find('(')?;
            let after = &header[open + 1..];
            let lead = after.len() - after.trim_start().len();
            let rest = &after[lead..];
            let tail = rest.strip_prefix("self")?;
            let next = tail.trim_start();
            let cut_end = if let Some(more) = next.strip_prefix(',') {
                rest.len() - more.trim_start().len()
            } else if next.starts_with(')') {
                rest.len() - next.len()
            } else {
                return None;
            };
            let start = seg.header + open + 1 + lead;
            Some((name.clone(), seg.text(&current).to_string(), start..start + cut_end))
        });
        let Some((name, case_text, range)) = found else { break };
        current = format!("{}{}", &current[..range.start], &current[range.end..]);
        steps.push(Step {
            scope: name,
            case_text: Some(case_text),
            text: current.clone(),
        });
    }
    steps
}

fn rule_cut_redefinition(text: &str, ctx: &RepairContext) -> Vec<Step> {
    let mut steps = Vec::new();
    let mut current = text.to_string();
    loop {
        let found = syntax::segment(&current).into_iter().find(|seg| match &seg.kind {
            SegmentKind::Function { name } => ctx.cut_definitions.contains(name) && !is_case_name(name),
            SegmentKind::Class { name } => ctx.cut_definitions.contains(name),
            SegmentKind::Statement => false,
        });
        let Some(seg) = found else { break };
        current = remove_span(&current, seg.span.clone());
        steps.push(Step {
            scope: FILE_SCOPE.into(),
            case_text: None,
            text: current.clone(),
        });
    }
    steps
}

fn is_bare_assert(seg: &Segment, text: &str) -> bool {
    if seg.kind != SegmentKind::Statement {
        return false;
    }
    let t = seg.text(text).trim_start();
    t.strip_prefix("assert")
        .is_some_and(|r| r.starts_with([' ', '(', '\t']))
}

fn rule_bare_asserts(text: &str) -> Vec<Step> {
    let mut steps = Vec::new();
    let mut current = text.to_string();
    let mut k = 0;
    loop {
        let segs = syntax::segment(&current);
        let Some(first) = segs.iter().position(|s| is_bare_assert(s, &current)) else {
            break;
        };
        let mut last = first;
        while last + 1 < segs.len() && is_bare_assert(&segs[last + 1], &current) {
            last += 1;
        }
        let names: BTreeSet<&str> = segs.iter().filter_map(|s| s.name()).collect();
        let name = loop {
            k += 1;
            let candidate = format!("test_repaired_{k}");
            if !names.contains(candidate.as_str()) {
                break candidate;
            }
        };
        let range = segs[first].span.start..segs[last].span.end;
        let body = syntax::indent(current[range.clone()].trim_end_matches('\n'), "    ");
        let wrapped = format!("def {name}():\n{body}\n");
        current = format!("{}{}{}", &current[..range.start], wrapped, &current[range.end..]);
        steps.push(file_step(current.clone()));
    }
    steps
}

fn parses_alone(text: &str) -> bool {
    parses(&syntax::dedent(text))
}

/// The innermost removable unit covering `line`: a method of a class, or a
/// top-level segment.
fn unit_at(text: &str, line: usize) -> Option<(String, Segment)> {
    let segs = syntax::segment(text);
    let seg = segs
        .iter()
        .find(|s| s.first_line <= line && line <= s.last_line)
        .or_else(|| segs.iter().rev().find(|s| s.first_line <= line))?;
    if let SegmentKind::Class { name } = &seg.kind {
        let members = class_members(text, seg);
        if let Some(m) = members.iter().find(|m| m.first_line <= line && line <= m.last_line) {
            let id = format!("{name}::{}", m.name().unwrap_or("?"));
            return Some((id, m.clone()));
        }
    }
    let id = seg.name().map_or(FILE_SCOPE.to_string(), str::to_string);
    Some((id, seg.clone()))
}

fn removal(text: &str, scope: String, seg: &Segment) -> Step {
    let case_text = (scope != FILE_SCOPE).then(|| seg.text(text).to_string());
    Step {
        scope,
        case_text,
        text: remove_span(text, seg.span.clone()),
    }
}

fn rule_syntax_errors(text: &str) -> Vec<Step> {
    if parses(text) {
        return Vec::new();
    }
    let mut steps = Vec::new();
    let mut current = text.to_string();
    // units that fail in isolation; comment-only bodies are left to rule 9
    loop {
        let mut found = None;
        for seg in syntax::segment(&current) {
            if parses_alone(seg.text(&current)) || seg.body_is_code_free(&current) {
                continue;
            }
            if let SegmentKind::Class { name } = &seg.kind {
                let members = class_members(&current, &seg);
                let bad = members
                    .iter()
                    .find(|m| !parses_alone(m.text(&current)) && !m.body_is_code_free(&current));
                if let Some(m) = bad {
                    found = Some((format!("{name}::{}", m.name().unwrap_or("?")), m.clone()));
                    break;
                }
                if members.iter().any(|m| m.body_is_code_free(&current)) {
                    continue;
                }
            }
            found = Some((seg.name().map_or(FILE_SCOPE.to_string(), str::to_string), seg));
            break;
        }
        let Some((scope, seg)) = found else { break };
        let step = removal(&current, scope, &seg);
        current = step.text.clone();
        steps.push(step);
    }
    // errors that only show in context: drop the unit the parser points at
    for _ in 0..64 {
        let Err(d) = syntax::parse_module(&current) else { break };
        let Some((scope, seg)) = unit_at(&current, d.line) else {
            break;
        };
        if seg.body_is_code_free(&current) {
            break;
        }
        let step = removal(&current, scope, &seg);
        if step.text == current {
            break;
        }
        current = step.text.clone();
        steps.push(step);
    }
    steps
}

fn rule_no_code(text: &str) -> Vec<Step> {
    let mut steps = Vec::new();
    let mut current = text.to_string();
    loop {
        let found = case_segments(&current)
            .into_iter()
            .find(|(_, seg)| seg.body_is_code_free(&current));
        let Some((scope, seg)) = found else { break };
        let step = removal(&current, scope, &seg);
        current = step.text.clone();
        steps.push(step);
    }
    if !current.trim().is_empty() && parses(&current) && crate::validator::case_ids(&current).is_empty() {
        steps.push(file_step(String::new()));
    }
    steps
}
