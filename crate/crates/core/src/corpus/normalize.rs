//! Conversion of assert blocks and unittest-style classes into standalone
//! pytest functions.
//!
//! Rewriting is edit based: untouched statements keep their exact source
//! text, which is what makes normalization idempotent on canonical input.

use super::{Source, TestFile};
use crate::syntax::{self, parse_module, walk_stmt, LineIndex, SyntaxDiagnostic, Visitor};
use rustpython_parser::ast::{self, Ranged};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ops::Range;
use thiserror::Error;

/// Input dialect of a raw test block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dialect {
    /// Bare `assert`s or a `check(candidate)` function (HumanEval layout).
    AssertBlock,
    /// `unittest.TestCase` or pytest-style classes with test methods.
    ClassMethodSuite,
}

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("test source does not parse: {0}")]
    Parse(SyntaxDiagnostic),
    #[error("unsupported construct at line {line}: {what}")]
    Unsupported { line: usize, what: String },
    #[error("cannot tell which function `check` receives; no entry point given")]
    MissingEntryPoint,
    #[error("normalized text does not parse: {0}")]
    Output(SyntaxDiagnostic),
}

/// Normalizes `raw` into canonical test functions. The returned file has an
/// empty problem id; rebind it with [`TestFile::with_owner`].
pub fn normalize_tests(raw: &str, dialect: Dialect) -> Result<TestFile, NormalizeError> {
    normalize_tests_for(raw, dialect, None)
}

/// Like [`normalize_tests`]; `entry_point` names the function a HumanEval
/// `check(candidate)` block is meant to receive.
pub fn normalize_tests_for(raw: &str, dialect: Dialect, entry_point: Option<&str>) -> Result<TestFile, NormalizeError> {
    let suite = parse_module(raw).map_err(NormalizeError::Parse)?;
    let text = Normalizer::new(raw, &suite).run(dialect, entry_point)?;
    TestFile::parse("", Source::Human, &text).map_err(NormalizeError::Output)
}

const RECEIVERS: [&str; 2] = ["self", "cls"];

type Edit = (Range<usize>, String);

struct Normalizer<'a> {
    raw: &'a str,
    suite: &'a [ast::Stmt],
    index: LineIndex,
    edits: Vec<Edit>,
    imports: BTreeSet<&'static str>,
    taken: BTreeSet<String>,
}

impl<'a> Normalizer<'a> {
    fn new(raw: &'a str, suite: &'a [ast::Stmt]) -> Self {
        let taken = suite
            .iter()
            .filter_map(|s| match s {
                ast::Stmt::FunctionDef(f) => Some(f.name.to_string()),
                ast::Stmt::AsyncFunctionDef(f) => Some(f.name.to_string()),
                _ => None,
            })
            .collect();
        Normalizer {
            raw,
            suite,
            index: LineIndex::new(raw),
            edits: Vec::new(),
            imports: BTreeSet::new(),
            taken,
        }
    }

    fn run(mut self, dialect: Dialect, entry_point: Option<&str>) -> Result<String, NormalizeError> {
        let called_with = self.check_call_argument();
        let suite = self.suite;
        let mut i = 0;
        while i < suite.len() {
            let stmt = &suite[i];
            match stmt {
                ast::Stmt::Assert(_) => {
                    let mut j = i;
                    while j + 1 < suite.len() && matches!(suite[j + 1], ast::Stmt::Assert(_)) {
                        j += 1;
                    }
                    self.wrap_asserts(&suite[i..=j]);
                    i = j + 1;
                    continue;
                }
                ast::Stmt::If(branch) if is_main_guard(&branch.test) => {
                    self.remove(stmt);
                }
                ast::Stmt::Expr(e) if dialect == Dialect::AssertBlock && is_check_call(&e.value) => {
                    self.remove(stmt);
                }
                ast::Stmt::FunctionDef(f)
                    if dialect == Dialect::AssertBlock
                        && f.name.as_str() == "check"
                        && single_param(&f.args).is_some() =>
                {
                    let entry = entry_point
                        .map(str::to_string)
                        .or_else(|| called_with.clone())
                        .ok_or(NormalizeError::MissingEntryPoint)?;
                    self.convert_check(stmt, f, &entry)?;
                }
                ast::Stmt::ClassDef(c) if syntax::is_test_class(c) => {
                    self.convert_class(stmt, c)?;
                }
                _ => {}
            }
            i += 1;
        }
        let bound = syntax::module_bindings(self.suite);
        let mut text = apply_edits(self.raw, 0..self.raw.len(), &mut self.edits, |s| s.to_string());
        for line in self.imports.iter().rev() {
            let name = line.rsplit(' ').next().unwrap_or_default();
            if !bound.contains(name) {
                text = syntax::insert_import(&text, line);
            }
        }
        Ok(text)
    }

    fn line_of(&self, offset: usize) -> usize {
        self.index.line_of(offset)
    }

    fn fresh(&mut self, base: &str) -> String {
        let mut k = 1;
        loop {
            let name = format!("{base}_{k}");
            if self.taken.insert(name.clone()) {
                return name;
            }
            k += 1;
        }
    }

    fn claim(&mut self, name: &str) -> String {
        if self.taken.insert(name.to_string()) {
            return name.to_string();
        }
        let mut k = 2;
        loop {
            let candidate = format!("{name}_{k}");
            if self.taken.insert(candidate.clone()) {
                return candidate;
            }
            k += 1;
        }
    }

    fn remove(&mut self, stmt: &ast::Stmt) {
        self.edits.push((syntax::stmt_line_span(self.raw, stmt), String::new()));
    }

    /// `check(X)` at module level names the entry point when none is given.
    fn check_call_argument(&self) -> Option<String> {
        self.suite.iter().find_map(|s| match s {
            ast::Stmt::Expr(e) if is_check_call(&e.value) => match e.value.as_ref() {
                ast::Expr::Call(c) => match c.args.first() {
                    Some(ast::Expr::Name(n)) => Some(n.id.to_string()),
                    _ => None,
                },
                _ => None,
            },
            _ => None,
        })
    }

    fn wrap_asserts(&mut self, run: &[ast::Stmt]) {
        let start = syntax::stmt_line_span(self.raw, &run[0]).start;
        let end = syntax::stmt_line_span(self.raw, &run[run.len() - 1]).end;
        let body = syntax::dedent(self.raw[start..end].trim_end());
        let name = self.fresh("test_block");
        let text = format!("def {name}():\n{}\n", syntax::indent(&body, "    "));
        self.edits.push((start..end, text));
    }

    fn convert_check(&mut self, stmt: &ast::Stmt, f: &ast::StmtFunctionDef, entry: &str) -> Result<(), NormalizeError> {
        let param = single_param(&f.args).expect("checked by caller");
        self.taken.remove("check");
        let name = self.claim("test_check");
        let body = self.convert_body(&f.body, f.range().end().to_usize(), &[])?;
        let text = format!(
            "def {name}():\n    {param} = {entry}\n{}\n",
            syntax::indent(&body, "    ")
        );
        self.edits.push((syntax::stmt_line_span(self.raw, stmt), text));
        Ok(())
    }

    fn convert_class(&mut self, stmt: &ast::Stmt, class: &ast::StmtClassDef) -> Result<(), NormalizeError> {
        let mut setup = Vec::new();
        let mut teardown = Vec::new();
        for item in &class.body {
            if let ast::Stmt::FunctionDef(f) = item {
                match f.name.as_str() {
                    "setUp" | "setup_method" | "setUpClass" | "setup_class" => {
                        setup.push(self.convert_body(&f.body, f.range().end().to_usize(), &[])?)
                    }
                    "tearDown" | "teardown_method" => {
                        teardown.push(self.convert_body(&f.body, f.range().end().to_usize(), &[])?)
                    }
                    _ => {}
                }
            }
        }
        let mut helpers = Vec::new();
        let mut tests = Vec::new();
        for item in &class.body {
            match item {
                ast::Stmt::FunctionDef(f) => match f.name.as_str() {
                    "setUp" | "setup_method" | "setUpClass" | "setup_class" | "tearDown" | "teardown_method"
                    | "tearDownClass" | "teardown_class" => {}
                    name if name.starts_with("test") => {
                        let renamed = match name.strip_prefix("test") {
                            Some(rest) if rest.starts_with('_') => name.to_string(),
                            Some(rest) => format!("test_{rest}"),
                            None => unreachable!(),
                        };
                        let renamed = self.claim(&renamed);
                        tests.push(self.convert_function(item, f, &renamed, &setup, &teardown)?);
                    }
                    name => {
                        let name = name.to_string();
                        self.taken.insert(name.clone());
                        helpers.push(self.convert_function(item, f, &name, &[], &[])?);
                    }
                },
                ast::Stmt::AsyncFunctionDef(f) => {
                    return Err(NormalizeError::Unsupported {
                        line: self.line_of(f.range().start().to_usize()),
                        what: "async test method".into(),
                    })
                }
                ast::Stmt::Pass(_) => {}
                ast::Stmt::Expr(e) if matches!(e.value.as_ref(), ast::Expr::Constant(_)) => {}
                other => {
                    let span = syntax::stmt_line_span(self.raw, other);
                    let text = rewrite_refs(&self.raw[span], &[]);
                    helpers.push(syntax::dedent(text.trim_end()));
                }
            }
        }
        let mut blocks = helpers;
        blocks.extend(tests);
        let text = if blocks.is_empty() {
            String::new()
        } else {
            format!("{}\n", blocks.join("\n\n\n"))
        };
        self.edits.push((syntax::stmt_line_span(self.raw, stmt), text));
        Ok(())
    }

    /// Turns a method into a module-level function called `name`, dropping
    /// its receiver parameter and inlining `setup` and `teardown`.
    fn convert_function(
        &mut self,
        stmt: &ast::Stmt,
        f: &ast::StmtFunctionDef,
        name: &str,
        setup: &[String],
        teardown: &[String],
    ) -> Result<String, NormalizeError> {
        let raw = self.raw;
        let head_start = syntax::stmt_line_span(raw, stmt).start;
        let body_start = self.body_start(&f.body);
        let mut edits: Vec<Edit> = Vec::new();

        for dec in &f.decorator_list {
            let is_binding =
                matches!(dec, ast::Expr::Name(n) if n.id.as_str() == "staticmethod" || n.id.as_str() == "classmethod");
            if is_binding {
                let at = dec.range().start().to_usize().saturating_sub(1);
                let line_start = raw[..at].rfind('\n').map_or(0, |i| i + 1);
                let end = raw[at..].find('\n').map_or(raw.len(), |i| at + i + 1);
                edits.push((line_start.max(head_start)..end, String::new()));
            }
        }

        let def_at = f.range().start().to_usize();
        let after_def = def_at + raw[def_at..].find("def").unwrap_or(0) + 3;
        let name_at = after_def + (raw[after_def..].len() - raw[after_def..].trim_start().len());
        edits.push((name_at..name_at + f.name.len(), name.to_string()));

        if let Some(span) = receiver_param_span(raw, &f.args) {
            edits.push((span, String::new()));
        }

        let header = apply_edits(raw, head_start..body_start, &mut edits, |s| rewrite_refs(s, &[]));
        let header = syntax::dedent(&header);
        let body = self.convert_body(&f.body, f.range().end().to_usize(), &[])?;
        let parts: Vec<&str> = setup
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(body.as_str()))
            .chain(teardown.iter().map(String::as_str))
            .filter(|p| !p.trim().is_empty())
            .collect();
        let joined = if parts.is_empty() {
            "pass".to_string()
        } else {
            parts.join("\n")
        };
        Ok(format!("{}\n{}", header.trim_end(), syntax::indent(&joined, "    ")))
    }

    /// Start of a body: its first line, or the statement itself when it
    /// shares a line with the header.
    fn body_start(&self, body: &[ast::Stmt]) -> usize {
        let first = syntax::stmt_span(&body[0]).start;
        let line_start = self.raw[..first].rfind('\n').map_or(0, |i| i + 1);
        if self.raw[line_start..first].trim().is_empty() {
            line_start
        } else {
            first
        }
    }

    /// Converted, dedented text of a function body ending at `end`.
    fn convert_body(
        &mut self,
        body: &[ast::Stmt],
        end: usize,
        extra_aliases: &[String],
    ) -> Result<String, NormalizeError> {
        let start = self.body_start(body);
        let mut aliases = Aliases(extra_aliases.to_vec());
        for stmt in body {
            aliases.visit_stmt(stmt);
        }
        let mut conv = AssertConverter {
            raw: self.raw,
            index: &self.index,
            aliases: &aliases.0,
            edits: Vec::new(),
            imports: RefCell::new(BTreeSet::new()),
            error: None,
        };
        for stmt in body {
            conv.visit_stmt(stmt);
        }
        if let Some(err) = conv.error {
            return Err(err);
        }
        self.imports.extend(conv.imports.into_inner());
        let mut edits = conv.edits;
        let alias_list = aliases.0;
        let text = apply_edits(self.raw, start..end, &mut edits, |s| rewrite_refs(s, &alias_list));
        Ok(syntax::dedent(text.trim_end()))
    }
}

fn is_main_guard(test: &ast::Expr) -> bool {
    match test {
        ast::Expr::Compare(c) if c.comparators.len() == 1 => {
            let is_name = |e: &ast::Expr| matches!(e, ast::Expr::Name(n) if n.id.as_str() == "__name__");
            let is_main = |e: &ast::Expr| matches!(e, ast::Expr::Constant(k) if matches!(&k.value, ast::Constant::Str(s) if s == "__main__"));
            (is_name(&c.left) && is_main(&c.comparators[0])) || (is_main(&c.left) && is_name(&c.comparators[0]))
        }
        _ => false,
    }
}

fn is_check_call(expr: &ast::Expr) -> bool {
    matches!(expr, ast::Expr::Call(c) if matches!(c.func.as_ref(), ast::Expr::Name(n) if n.id.as_str() == "check"))
}

fn single_param(args: &ast::Arguments) -> Option<String> {
    let positional: Vec<_> = args.posonlyargs.iter().chain(&args.args).collect();
    if positional.len() == 1 && args.kwonlyargs.is_empty() && args.vararg.is_none() && args.kwarg.is_none() {
        Some(positional[0].def.arg.to_string())
    } else {
        None
    }
}

/// Span to delete for a leading `self`/`cls` parameter, including the
/// separator that follows it.
fn receiver_param_span(raw: &str, args: &ast::Arguments) -> Option<Range<usize>> {
    let first = args.posonlyargs.first().or(args.args.first())?;
    if !RECEIVERS.contains(&first.def.arg.as_str()) {
        return None;
    }
    let start = first.def.range().start().to_usize();
    let first_end = first
        .default
        .as_ref()
        .map_or(first.def.range(), |d| d.range())
        .end()
        .to_usize();
    let mut starts: Vec<usize> = args
        .posonlyargs
        .iter()
        .chain(&args.args)
        .chain(&args.kwonlyargs)
        .map(|a| a.def.range().start().to_usize())
        .chain(args.vararg.iter().map(|a| a.range().start().to_usize()))
        .chain(args.kwarg.iter().map(|a| a.range().start().to_usize()))
        .filter(|&s| s > start)
        .collect();
    starts.sort_unstable();
    if let Some(&next) = starts.first() {
        // `*` and `**` markers precede their argument's range
        let between = &raw[first_end..next];
        let marker = between.rfind(['*']).map(|i| {
            let stars = between[..=i].len() - between[..=i].trim_end_matches('*').len();
            first_end + i + 1 - stars
        });
        return Some(start..marker.unwrap_or(next));
    }
    let rest = &raw[first_end..];
    let ws = rest.len() - rest.trim_start().len();
    let mut end = first_end + ws;
    if raw[end..].starts_with(',') {
        end += 1;
        let rest = &raw[end..];
        end += rest.len() - rest.trim_start().len();
    }
    Some(start..end)
}

/// Applies non-overlapping `edits` inside `region`, passing untouched text
/// through `gap`.
fn apply_edits(raw: &str, region: Range<usize>, edits: &mut [Edit], gap: impl Fn(&str) -> String) -> String {
    edits.sort_by_key(|(r, _)| (r.start, r.end));
    let mut out = String::new();
    let mut cursor = region.start;
    for (range, text) in edits.iter() {
        if range.start < cursor || range.end > region.end {
            continue;
        }
        out.push_str(&gap(&raw[cursor..range.start]));
        out.push_str(text);
        cursor = range.end;
    }
    out.push_str(&gap(&raw[cursor..region.end]));
    out
}

/// Names bound by `with self.assertRaises(...) as name`.
struct Aliases(Vec<String>);

impl<'a> Visitor<'a> for Aliases {
    fn visit_stmt(&mut self, stmt: &'a ast::Stmt) {
        if let ast::Stmt::With(w) = stmt {
            for item in &w.items {
                if let (Some((attr, _)), Some(ast::Expr::Name(n))) =
                    (receiver_call(&item.context_expr), item.optional_vars.as_deref())
                {
                    if attr.starts_with("assertRaises") {
                        self.0.push(n.id.to_string());
                    }
                }
            }
        }
        walk_stmt(self, stmt);
    }
}

fn receiver_call(expr: &ast::Expr) -> Option<(&str, &ast::ExprCall)> {
    let ast::Expr::Call(call) = expr else {
        return None;
    };
    let ast::Expr::Attribute(attr) = call.func.as_ref() else {
        return None;
    };
    match attr.value.as_ref() {
        ast::Expr::Name(n) if n.id.as_str() == "self" => Some((attr.attr.as_str(), call)),
        _ => None,
    }
}

struct AssertConverter<'a> {
    raw: &'a str,
    index: &'a LineIndex,
    aliases: &'a [String],
    edits: Vec<Edit>,
    imports: RefCell<BTreeSet<&'static str>>,
    error: Option<NormalizeError>,
}

impl<'a> Visitor<'a> for AssertConverter<'a> {
    fn visit_stmt(&mut self, stmt: &'a ast::Stmt) {
        if self.error.is_some() {
            return;
        }
        match stmt {
            ast::Stmt::Expr(e) => {
                if let Some((attr, call)) = receiver_call(&e.value) {
                    match self.convert_call(attr, call, stmt) {
                        Ok(Some(text)) => {
                            let r = stmt.range();
                            self.edits.push((r.start().to_usize()..r.end().to_usize(), text));
                            return;
                        }
                        Ok(None) => {}
                        Err(err) => {
                            self.error = Some(err);
                            return;
                        }
                    }
                }
            }
            ast::Stmt::With(w) => {
                for item in &w.items {
                    if let Some((attr, call)) = receiver_call(&item.context_expr) {
                        if let Some(text) = self.context_manager(attr, call) {
                            let r = item.context_expr.range();
                            self.edits.push((r.start().to_usize()..r.end().to_usize(), text));
                        }
                    }
                }
            }
            _ => {}
        }
        walk_stmt(self, stmt);
    }
}

impl AssertConverter<'_> {
    fn src(&self, e: &ast::Expr) -> String {
        rewrite_refs(syntax::slice(self.raw, e), self.aliases)
    }

    fn starts_parenthesized(&self, e: &ast::Expr) -> bool {
        syntax::slice(self.raw, e).starts_with('(')
    }

    /// Operand of a comparison or `is`/`in` test.
    fn operand(&self, e: &ast::Expr) -> String {
        use ast::Expr::*;
        let wrap = match e {
            BoolOp(_) | Compare(_) | IfExp(_) | Lambda(_) | NamedExpr(_) | Yield(_) | YieldFrom(_) => true,
            UnaryOp(u) => matches!(u.op, ast::UnaryOp::Not),
            Tuple(_) | GeneratorExp(_) => !self.starts_parenthesized(e),
            _ => false,
        };
        self.wrapped(e, wrap)
    }

    /// Expression following `assert` or `assert not`.
    fn condition(&self, e: &ast::Expr, negated: bool) -> String {
        use ast::Expr::*;
        let wrap = match e {
            NamedExpr(_) | Yield(_) | YieldFrom(_) => true,
            BoolOp(_) | IfExp(_) | Lambda(_) => negated,
            Tuple(_) | GeneratorExp(_) => !self.starts_parenthesized(e),
            _ => false,
        };
        self.wrapped(e, wrap)
    }

    /// Operand of arithmetic.
    fn atom(&self, e: &ast::Expr) -> String {
        use ast::Expr::*;
        let wrap = match e {
            Name(_) | Attribute(_) | Call(_) | Subscript(_) | Constant(_) | List(_) | Dict(_) | Set(_)
            | ListComp(_) | SetComp(_) | DictComp(_) | JoinedStr(_) => false,
            Tuple(_) | GeneratorExp(_) => !self.starts_parenthesized(e),
            _ => true,
        };
        self.wrapped(e, wrap)
    }

    fn wrapped(&self, e: &ast::Expr, wrap: bool) -> String {
        let s = self.src(e);
        if wrap {
            format!("({s})")
        } else {
            s
        }
    }

    fn arg<'c>(call: &'c ast::ExprCall, pos: usize, kw: &str) -> Option<&'c ast::Expr> {
        call.args.get(pos).or_else(|| {
            call.keywords
                .iter()
                .find(|k| k.arg.as_ref().is_some_and(|a| a.as_str() == kw))
                .map(|k| &k.value)
        })
    }

    fn unsupported(&self, at: &ast::Stmt, what: String) -> NormalizeError {
        NormalizeError::Unsupported {
            line: self.index.line_of(at.range().start().to_usize()),
            what,
        }
    }

    fn convert_call(
        &self,
        attr: &str,
        call: &ast::ExprCall,
        stmt: &ast::Stmt,
    ) -> Result<Option<String>, NormalizeError> {
        let missing = || self.unsupported(stmt, format!("`self.{attr}` with missing arguments"));
        let binary = |op: &str| -> Result<String, NormalizeError> {
            let a = Self::arg(call, 0, "first").ok_or_else(missing)?;
            let b = Self::arg(call, 1, "second").ok_or_else(missing)?;
            let msg = Self::arg(call, 2, "msg");
            Ok(self.with_msg(format!("assert {} {op} {}", self.operand(a), self.operand(b)), msg))
        };
        let unary = |fmt: &dyn Fn(&Self, &ast::Expr) -> String| -> Result<String, NormalizeError> {
            let x = Self::arg(call, 0, "expr")
                .or_else(|| Self::arg(call, 0, "obj"))
                .ok_or_else(missing)?;
            Ok(self.with_msg(fmt(self, x), Self::arg(call, 1, "msg")))
        };
        let text = match attr {
            "assertEqual"
            | "assertEquals"
            | "failUnlessEqual"
            | "assertDictEqual"
            | "assertListEqual"
            | "assertTupleEqual"
            | "assertSetEqual"
            | "assertSequenceEqual"
            | "assertMultiLineEqual" => binary("==")?,
            "assertNotEqual" | "assertNotEquals" | "failIfEqual" => binary("!=")?,
            "assertIs" => binary("is")?,
            "assertIsNot" => binary("is not")?,
            "assertIn" => binary("in")?,
            "assertNotIn" => binary("not in")?,
            "assertGreater" => binary(">")?,
            "assertGreaterEqual" => binary(">=")?,
            "assertLess" => binary("<")?,
            "assertLessEqual" => binary("<=")?,
            "assertTrue" | "assert_" | "failUnless" => unary(&|s, x| format!("assert {}", s.condition(x, false)))?,
            "assertFalse" | "failIf" => unary(&|s, x| format!("assert not {}", s.condition(x, true)))?,
            "assertIsNone" => unary(&|s, x| format!("assert {} is None", s.operand(x)))?,
            "assertIsNotNone" => unary(&|s, x| format!("assert {} is not None", s.operand(x)))?,
            "assertIsInstance" | "assertNotIsInstance" => {
                let a = Self::arg(call, 0, "obj").ok_or_else(missing)?;
                let b = Self::arg(call, 1, "cls").ok_or_else(missing)?;
                let not = if attr == "assertIsInstance" { "" } else { "not " };
                self.with_msg(
                    format!("assert {not}isinstance({}, {})", self.src(a), self.src(b)),
                    Self::arg(call, 2, "msg"),
                )
            }
            "assertAlmostEqual" | "assertAlmostEquals" | "assertNotAlmostEqual" | "assertNotAlmostEquals" => {
                let a = Self::arg(call, 0, "first").ok_or_else(missing)?;
                let b = Self::arg(call, 1, "second").ok_or_else(missing)?;
                let negated = attr.starts_with("assertNot");
                let delta = Self::arg(call, usize::MAX, "delta");
                let places = Self::arg(call, 2, "places").map_or("7".to_string(), |p| self.src(p));
                let msg = Self::arg(call, 3, "msg");
                let diff = format!("{} - {}", self.atom(a), self.atom(b));
                let test = match (delta, negated) {
                    (Some(d), false) => format!("abs({diff}) <= {}", self.src(d)),
                    (Some(d), true) => format!("abs({diff}) > {}", self.src(d)),
                    (None, false) => format!("round({diff}, {places}) == 0"),
                    (None, true) => format!("round({diff}, {places}) != 0"),
                };
                self.with_msg(format!("assert {test}"), msg)
            }
            "assertCountEqual" | "assertItemsEqual" => {
                let a = Self::arg(call, 0, "first").ok_or_else(missing)?;
                let b = Self::arg(call, 1, "second").ok_or_else(missing)?;
                self.with_msg(
                    format!("assert sorted({}) == sorted({})", self.src(a), self.src(b)),
                    Self::arg(call, 2, "msg"),
                )
            }
            "assertRegex" | "assertRegexpMatches" | "assertNotRegex" | "assertNotRegexpMatches" => {
                let text = Self::arg(call, 0, "text").ok_or_else(missing)?;
                let pattern = Self::arg(call, 1, "expected_regex").ok_or_else(missing)?;
                self.imports.borrow_mut().insert("import re");
                let not = if attr.contains("Not") { "not " } else { "" };
                self.with_msg(
                    format!("assert {not}re.search({}, {})", self.src(pattern), self.src(text)),
                    Self::arg(call, 2, "msg"),
                )
            }
            "assertRaises" | "assertRaisesRegex" | "assertRaisesRegexp" | "assertWarns" | "assertWarnsRegex" => {
                let with_regex = attr.contains("Regex");
                let callable_at = if with_regex { 2 } else { 1 };
                let Some(func) = call.args.get(callable_at) else {
                    return Err(self.unsupported(stmt, format!("`self.{attr}` without a callable")));
                };
                let manager = self.context_manager(attr, call).expect("known manager");
                let mut args: Vec<String> = call.args[callable_at + 1..].iter().map(|a| self.src(a)).collect();
                for kw in &call.keywords {
                    match &kw.arg {
                        Some(name) if name.as_str() == "msg" => {}
                        Some(name) => args.push(format!("{name}={}", self.src(&kw.value))),
                        None => args.push(format!("**{}", self.src(&kw.value))),
                    }
                }
                let col = self.index.line_col(stmt.range().start().to_usize()).1;
                let pad = " ".repeat(col + 4);
                format!("with {manager}:\n{pad}{}({})", self.src(func), args.join(", "))
            }
            "fail" => {
                self.imports.borrow_mut().insert("import pytest");
                let msg = Self::arg(call, 0, "msg").map(|m| self.src(m)).unwrap_or_default();
                format!("pytest.fail({msg})")
            }
            "skipTest" => {
                self.imports.borrow_mut().insert("import pytest");
                let msg = Self::arg(call, 0, "reason").map(|m| self.src(m)).unwrap_or_default();
                format!("pytest.skip({msg})")
            }
            other if other.starts_with("assert") => {
                return Err(self.unsupported(stmt, format!("`self.{other}`")));
            }
            _ => return Ok(None),
        };
        Ok(Some(text))
    }

    fn with_msg(&self, assertion: String, msg: Option<&ast::Expr>) -> String {
        match msg {
            Some(m) => format!("{assertion}, {}", self.src(m)),
            None => assertion,
        }
    }

    /// pytest replacement for a unittest context manager, if there is one.
    fn context_manager(&self, attr: &str, call: &ast::ExprCall) -> Option<String> {
        let func = match attr {
            "assertRaises" | "assertRaisesRegex" | "assertRaisesRegexp" => "pytest.raises",
            "assertWarns" | "assertWarnsRegex" => "pytest.warns",
            "subTest" => {
                self.imports.borrow_mut().insert("import contextlib");
                return Some("contextlib.nullcontext()".into());
            }
            _ => return None,
        };
        self.imports.borrow_mut().insert("import pytest");
        let expected = call.args.first().map(|e| self.src(e)).unwrap_or_default();
        let pattern = if attr.contains("Regex") {
            call.args.get(1).map(|p| format!(", match={}", self.src(p)))
        } else {
            None
        };
        Some(format!("{func}({expected}{})", pattern.unwrap_or_default()))
    }
}

fn is_ident_byte(b: u8) -> bool {
    b == b'_' || b.is_ascii_alphanumeric() || b >= 0x80
}

/// Drops `self.`/`cls.` receivers and turns `<alias>.exception` into
/// `<alias>.value` (unittest versus pytest exception info). Strings and
/// comments are left alone, except for code inside f-string braces.
pub(crate) fn rewrite_refs(src: &str, aliases: &[String]) -> String {
    let b = src.as_bytes();
    let mut out = String::with_capacity(src.len());
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if c == b'#' {
            let end = src[i..].find('\n').map_or(b.len(), |n| i + n);
            out.push_str(&src[i..end]);
            i = end;
            continue;
        }
        if c == b'"' || c == b'\'' {
            let prefix_is_f = out
                .bytes()
                .rev()
                .take_while(|b| b.is_ascii_alphabetic())
                .any(|b| b == b'f' || b == b'F');
            let triple = b.get(i + 1) == Some(&c) && b.get(i + 2) == Some(&c);
            let q = if triple { 3 } else { 1 };
            let mut j = i + q;
            let mut close = None;
            while j < b.len() {
                if b[j] == b'\\' {
                    j += 2;
                    continue;
                }
                if b[j] == c && (!triple || (b.get(j + 1) == Some(&c) && b.get(j + 2) == Some(&c))) {
                    close = Some(j);
                    break;
                }
                if !triple && b[j] == b'\n' {
                    break;
                }
                j += 1;
            }
            let Some(close) = close else {
                out.push_str(&src[i..]);
                break;
            };
            out.push_str(&src[i..i + q]);
            if prefix_is_f {
                out.push_str(&rewrite_refs(&src[i + q..close], aliases));
            } else {
                out.push_str(&src[i + q..close]);
            }
            out.push_str(&src[close..close + q]);
            i = close + q;
            continue;
        }
        let at_word_start =
            is_ident_byte(c) && !c.is_ascii_digit() && (i == 0 || (!is_ident_byte(b[i - 1]) && b[i - 1] != b'.'));
        if at_word_start {
            let mut j = i;
            while j < b.len() && is_ident_byte(b[j]) {
                j += 1;
            }
            let word = &src[i..j];
            if RECEIVERS.contains(&word) && b.get(j) == Some(&b'.') {
                i = j + 1;
                continue;
            }
            if aliases.iter().any(|a| a == word) && src[j..].starts_with(".exception") {
                let k = j + ".exception".len();
                if b.get(k).is_none_or(|&n| !is_ident_byte(n)) {
                    out.push_str(word);
                    out.push_str(".value");
                    i = k;
                    continue;
                }
            }
            out.push_str(word);
            i = j;
            continue;
        }
        let ch_len = src[i..].chars().next().map_or(1, char::len_utf8);
        out.push_str(&src[i..i + ch_len]);
        i += ch_len;
    }
    out
}
