//! Python source handling shared by every stage.
//!
//! Parsing goes through `rustpython-parser`. Everything that has to work on
//! text that does *not* parse (repair of truncated or partially broken model
//! output) goes through [`segment`], a line scanner that splits a file into
//! top-level blocks without needing a valid AST.

mod segment;
mod visit;

pub use segment::{segment, segment_block, Segment, SegmentKind};
pub use visit::{walk_expr, walk_stmt, Visitor};

use rustpython_parser::ast::{self, Ranged};
use rustpython_parser::Parse;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

pub type Suite = ast::Suite;

/// Where and why a parse failed. Lines are 1-based, columns 0-based bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxDiagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for SyntaxDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

pub fn parse_module(text: &str) -> Result<Suite, SyntaxDiagnostic> {
    ast::Suite::parse(text, "<candidate>").map_err(|err| {
        let (line, column) = LineIndex::new(text).line_col(err.offset.to_usize());
        SyntaxDiagnostic {
            line,
            column,
            message: err.error.to_string(),
        }
    })
}

/// Byte offset to line/column translation.
#[derive(Debug, Clone)]
pub struct LineIndex {
    starts: Vec<usize>,
}

impl LineIndex {
    pub fn new(text: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
        Self { starts }
    }

    /// 1-based line and 0-based byte column of `offset`.
    pub fn line_col(&self, offset: usize) -> (usize, usize) {
        let idx = match self.starts.binary_search(&offset) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (idx + 1, offset - self.starts[idx])
    }

    pub fn line_of(&self, offset: usize) -> usize {
        self.line_col(offset).0
    }

    /// Byte offset of the start of 1-based `line`.
    pub fn line_start(&self, line: usize) -> usize {
        self.starts[line.saturating_sub(1).min(self.starts.len() - 1)]
    }
}

/// Byte range of a statement, widened to cover its decorators.
pub fn stmt_span(stmt: &ast::Stmt) -> Range<usize> {
    let range = stmt.range();
    let mut start = range.start().to_usize();
    let decorators: &[ast::Expr] = match stmt {
        ast::Stmt::FunctionDef(f) => &f.decorator_list,
        ast::Stmt::AsyncFunctionDef(f) => &f.decorator_list,
        ast::Stmt::ClassDef(c) => &c.decorator_list,
        _ => &[],
    };
    for dec in decorators {
        // the range of a decorator starts after the '@'
        start = start.min(dec.range().start().to_usize().saturating_sub(1));
    }
    start..range.end().to_usize()
}

/// [`stmt_span`] extended to whole lines: from the start of the first line to
/// just past the newline ending the last one.
pub fn stmt_line_span(text: &str, stmt: &ast::Stmt) -> Range<usize> {
    let span = stmt_span(stmt);
    let start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
    let end = text[span.end..].find('\n').map_or(text.len(), |i| span.end + i + 1);
    start..end
}

/// Source text of `range`.
pub fn slice<'t>(text: &'t str, node: &impl Ranged) -> &'t str {
    let r = node.range();
    &text[r.start().to_usize()..r.end().to_usize()]
}

/// Number of leading spaces (tabs count as one column each).
pub fn indent_of(line: &str) -> usize {
    line.len() - line.trim_start_matches([' ', '\t']).len()
}

/// Removes the common leading indentation of all non-blank lines.
pub fn dedent(text: &str) -> String {
    let common = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(indent_of)
        .min()
        .unwrap_or(0);
    let mut out = String::with_capacity(text.len());
    for (i, line) in text.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        if line.trim().is_empty() {
            out.push_str(line.trim_start_matches([' ', '\t']));
        } else {
            out.push_str(&line[common.min(indent_of(line))..]);
        }
    }
    out
}

/// Prefixes every non-blank line with `prefix`.
pub fn indent(text: &str, prefix: &str) -> String {
    text.split('\n')
        .map(|l| {
            if l.trim().is_empty() {
                String::new()
            } else {
                format!("{prefix}{l}")
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// True when `text` contains no Python tokens at all (only blanks and comments).
pub fn has_no_code(text: &str) -> bool {
    text.lines().all(|l| {
        let t = l.trim();
        t.is_empty() || t.starts_with('#')
    })
}

/// Inserts `line` as the first statement of the file, after any leading
/// `from __future__` imports (which must stay first). Works on unparseable
/// text.
pub fn insert_import(text: &str, line: &str) -> String {
    let mut at = 0;
    let mut offset = 0;
    for l in text.split_inclusive('\n') {
        let t = l.trim();
        offset += l.len();
        if t.starts_with("from __future__ import") {
            at = offset;
        } else if !(t.is_empty() || t.starts_with('#')) {
            break;
        }
    }
    let mut out = String::with_capacity(text.len() + line.len() + 1);
    out.push_str(&text[..at]);
    if at > 0 && !out.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(line);
    out.push('\n');
    out.push_str(&text[at..]);
    out
}

/// A test case located in a parsed file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseSpan {
    /// `name` for functions, `Class::name` for methods.
    pub id: String,
    pub name: String,
    pub class: Option<String>,
    /// Byte range including decorators.
    pub span: Range<usize>,
}

/// pytest collection rule for classes: `Test*` names or `TestCase` subclasses.
pub fn is_test_class(class: &ast::StmtClassDef) -> bool {
    if class.name.starts_with("Test") {
        return true;
    }
    class.bases.iter().any(|b| match b {
        ast::Expr::Name(n) => n.id.as_str() == "TestCase",
        ast::Expr::Attribute(a) => a.attr.as_str() == "TestCase",
        _ => false,
    })
}

fn function_name(stmt: &ast::Stmt) -> Option<&str> {
    match stmt {
        ast::Stmt::FunctionDef(f) => Some(f.name.as_str()),
        ast::Stmt::AsyncFunctionDef(f) => Some(f.name.as_str()),
        _ => None,
    }
}

/// Test functions at module level and test methods of test classes, in
/// source order. Collection follows pytest conventions: `test*` functions,
/// `Test*` classes (or `TestCase` subclasses) with `test*` methods.
pub fn discover_cases(suite: &[ast::Stmt]) -> Vec<CaseSpan> {
    let mut cases = Vec::new();
    for stmt in suite {
        if let Some(name) = function_name(stmt) {
            if name.starts_with("test") {
                cases.push(CaseSpan {
                    id: name.to_string(),
                    name: name.to_string(),
                    class: None,
                    span: stmt_span(stmt),
                });
            }
        } else if let ast::Stmt::ClassDef(class) = stmt {
            if !is_test_class(class) {
                continue;
            }
            for inner in &class.body {
                if let Some(name) = function_name(inner) {
                    if name.starts_with("test") {
                        cases.push(CaseSpan {
                            id: format!("{}::{}", class.name, name),
                            name: name.to_string(),
                            class: Some(class.name.to_string()),
                            span: stmt_span(inner),
                        });
                    }
                }
            }
        }
    }
    cases
}

/// Names bound at module level by imports, definitions and assignments.
pub fn module_bindings(suite: &[ast::Stmt]) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for stmt in suite {
        bind_stmt(stmt, &mut names);
    }
    names
}

fn bind_target(expr: &ast::Expr, names: &mut BTreeSet<String>) {
    match expr {
        ast::Expr::Name(n) => {
            names.insert(n.id.to_string());
        }
        ast::Expr::Tuple(t) => t.elts.iter().for_each(|e| bind_target(e, names)),
        ast::Expr::List(l) => l.elts.iter().for_each(|e| bind_target(e, names)),
        ast::Expr::Starred(s) => bind_target(&s.value, names),
        _ => {}
    }
}

fn bind_stmt(stmt: &ast::Stmt, names: &mut BTreeSet<String>) {
    match stmt {
        ast::Stmt::FunctionDef(f) => {
            names.insert(f.name.to_string());
        }
        ast::Stmt::AsyncFunctionDef(f) => {
            names.insert(f.name.to_string());
        }
        ast::Stmt::ClassDef(c) => {
            names.insert(c.name.to_string());
        }
        ast::Stmt::Import(i) => {
            for alias in &i.names {
                let bound = alias
                    .asname
                    .as_ref()
                    .map(|a| a.to_string())
                    .unwrap_or_else(|| alias.name.split('.').next().unwrap_or("").to_string());
                names.insert(bound);
            }
        }
        ast::Stmt::ImportFrom(i) => {
            for alias in &i.names {
                let bound = alias.asname.as_ref().unwrap_or(&alias.name);
                names.insert(bound.to_string());
            }
        }
        ast::Stmt::Assign(a) => a.targets.iter().for_each(|t| bind_target(t, names)),
        ast::Stmt::AnnAssign(a) => bind_target(&a.target, names),
        ast::Stmt::AugAssign(a) => bind_target(&a.target, names),
        ast::Stmt::For(f) => bind_target(&f.target, names),
        ast::Stmt::If(i) => {
            i.body.iter().chain(&i.orelse).for_each(|s| bind_stmt(s, names));
        }
        ast::Stmt::Try(t) => {
            t.body
                .iter()
                .chain(&t.orelse)
                .chain(&t.finalbody)
                .for_each(|s| bind_stmt(s, names));
            for h in &t.handlers {
                let ast::ExceptHandler::ExceptHandler(h) = h;
                h.body.iter().for_each(|s| bind_stmt(s, names));
            }
        }
        ast::Stmt::With(w) => {
            for item in &w.items {
                if let Some(v) = &item.optional_vars {
                    bind_target(v, names);
                }
            }
            w.body.iter().for_each(|s| bind_stmt(s, names));
        }
        _ => {}
    }
}

/// Every identifier read anywhere in `stmts` (including nested scopes).
pub fn loaded_names(stmts: &[ast::Stmt]) -> BTreeSet<String> {
    struct Loads(BTreeSet<String>);
    impl<'a> Visitor<'a> for Loads {
        fn visit_expr(&mut self, expr: &'a ast::Expr) {
            if let ast::Expr::Name(n) = expr {
                if matches!(n.ctx, ast::ExprContext::Load) {
                    self.0.insert(n.id.to_string());
                }
            }
            walk_expr(self, expr);
        }
    }
    let mut loads = Loads(BTreeSet::new());
    for stmt in stmts {
        loads.visit_stmt(stmt);
    }
    loads.0
}

/// Module names referenced by an import statement (`import a.b` → `a.b`,
/// `from a import b` → `a`). Relative imports are reported with their dots.
pub fn imported_modules(stmt: &ast::Stmt) -> Vec<String> {
    match stmt {
        ast::Stmt::Import(i) => i.names.iter().map(|a| a.name.to_string()).collect(),
        ast::Stmt::ImportFrom(i) => {
            let dots = ".".repeat(i.level.map_or(0, |l| l.to_u32() as usize));
            let module = i.module.as_ref().map_or("", |m| m.as_str());
            vec![format!("{dots}{module}")]
        }
        _ => Vec::new(),
    }
}

/// Whether an import of `module` is affected by a failure to import `missing`
/// (equal, or one is a dotted prefix of the other).
pub fn module_matches(module: &str, missing: &str) -> bool {
    module == missing || module.starts_with(&format!("{missing}.")) || missing.starts_with(&format!("{module}."))
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_alphanumeric()) && !is_keyword(s)
}

pub fn is_keyword(s: &str) -> bool {
    const KEYWORDS: &[&str] = &[
        "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
        "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
        "not", "or", "pass", "raise", "return", "try", "while", "with", "yield",
    ];
    KEYWORDS.contains(&s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_index_maps_offsets() {
        let idx = LineIndex::new("ab\ncd\n\nx");
        assert_eq!(idx.line_col(0), (1, 0));
        assert_eq!(idx.line_col(4), (2, 1));
        assert_eq!(idx.line_col(7), (4, 0));
        assert_eq!(idx.line_start(2), 3);
    }

    #[test]
    fn parse_error_reports_line_one() {
        let err = parse_module("def test_a(: assert True").unwrap_err();
        assert_eq!(err.line, 1);
        assert_eq!(err.column, 11);
    }

    #[test]
    fn decorated_span_includes_decorator() {
        let src = "import pytest\n\n@pytest.mark.slow\ndef test_a():\n    assert 1\n";
        let suite = parse_module(src).unwrap();
        let cases = discover_cases(&suite);
        assert_eq!(cases.len(), 1);
        assert!(src[cases[0].span.clone()].starts_with("@pytest.mark.slow"));
        assert!(src[cases[0].span.clone()].ends_with("assert 1"));
    }

    #[test]
    fn discovers_methods_of_test_classes_only() {
        let src = "class Helper:\n    def test_no(self): pass\n\nclass TestX:\n    def helper(self): pass\n    def test_yes(self): pass\n\ndef test_top(): pass\n";
        let suite = parse_module(src).unwrap();
        let ids: Vec<_> = discover_cases(&suite).into_iter().map(|c| c.id).collect();
        assert_eq!(ids, vec!["TestX::test_yes", "test_top"]);
    }

    #[test]
    fn dedent_strips_common_prefix() {
        assert_eq!(dedent("    a\n      b\n\n    c"), "a\n  b\n\nc");
    }

    #[test]
    fn bindings_and_loads() {
        let suite =
            parse_module("import os.path\nfrom m import A as B\nx, y = 1, 2\ndef f():\n    return C(x)\n").unwrap();
        let bound = module_bindings(&suite);
        assert!(bound.contains("os") && bound.contains("B") && bound.contains("y") && bound.contains("f"));
        let loads = loaded_names(&suite);
        assert!(loads.contains("C") && loads.contains("x"));
    }

    #[test]
    fn imports_go_after_future_imports() {
        assert_eq!(insert_import("x = 1\n", "import pytest"), "import pytest\nx = 1\n");
        assert_eq!(
            insert_import("# c\nfrom __future__ import annotations\nimport os\n", "import pytest"),
            "# c\nfrom __future__ import annotations\nimport pytest\nimport os\n"
        );
        assert_eq!(insert_import("", "import pytest"), "import pytest\n");
    }

    #[test]
    fn module_matching_is_prefix_aware() {
        assert!(module_matches("a.b", "a"));
        assert!(module_matches("a", "a.b"));
        assert!(!module_matches("ab", "a"));
    }
}
