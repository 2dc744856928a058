//! Static quality metrics of test suites: cyclomatic and cognitive
//! complexity, a closed test-smell catalogue and a remediation-cost proxy.

use crate::corpus::{TestCase, TestFile};
use crate::optimizer::CoverageSnapshot;
use crate::syntax::{self, walk_expr, walk_stmt, SyntaxDiagnostic, Visitor};
use rustpython_parser::ast::{self, Ranged};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// Bumped whenever the smell catalogue or its costs change.
pub const SMELL_CATALOGUE_VERSION: &str = "1";

pub const OVERSIZED_STATEMENTS: usize = 30;
pub const MAGIC_NUMBER_LIMIT: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("case {case_id} does not parse: {diagnostic}")]
    Unparseable {
        case_id: String,
        diagnostic: SyntaxDiagnostic,
    },
}

/// Parsed body of a case: its single function definition plus the source it
/// was parsed from (needed to tell `elif` from `else: if`).
struct ParsedCase {
    text: String,
    func: ast::StmtFunctionDef,
}

fn parse_case(case: &TestCase) -> Result<ParsedCase, MetricsError> {
    let text = syntax::dedent(&case.body);
    let err = |diagnostic| MetricsError::Unparseable {
        case_id: case.id.clone(),
        diagnostic,
    };
    let suite = syntax::parse_module(&text).map_err(err)?;
    let func = suite.into_iter().find_map(|s| match s {
        ast::Stmt::FunctionDef(f) => Some(f),
        _ => None,
    });
    match func {
        Some(func) => Ok(ParsedCase { text, func }),
        None => Err(err(SyntaxDiagnostic {
            line: 1,
            column: 1,
            message: "case is not a function definition".into(),
        })),
    }
}

/// McCabe number: 1 + decision points.
pub fn cyclomatic(case: &TestCase) -> Result<u32, MetricsError> {
    let parsed = parse_case(case)?;
    struct Count(u32);
    impl<'a> Visitor<'a> for Count {
        fn visit_stmt(&mut self, stmt: &'a ast::Stmt) {
            match stmt {
                ast::Stmt::If(_) | ast::Stmt::For(_) | ast::Stmt::AsyncFor(_) | ast::Stmt::While(_) => self.0 += 1,
                ast::Stmt::Try(t) => self.0 += t.handlers.len() as u32,
                ast::Stmt::TryStar(t) => self.0 += t.handlers.len() as u32,
                ast::Stmt::Match(m) => self.0 += m.cases.len() as u32,
                _ => {}
            }
            walk_stmt(self, stmt);
        }

        fn visit_expr(&mut self, expr: &'a ast::Expr) {
            match expr {
                ast::Expr::IfExp(_) => self.0 += 1,
                ast::Expr::BoolOp(b) => self.0 += b.values.len().saturating_sub(1) as u32,
                ast::Expr::ListComp(ast::ExprListComp { generators, .. })
                | ast::Expr::SetComp(ast::ExprSetComp { generators, .. })
                | ast::Expr::DictComp(ast::ExprDictComp { generators, .. })
                | ast::Expr::GeneratorExp(ast::ExprGeneratorExp { generators, .. }) => {
                    for g in generators {
                        self.0 += 1 + g.ifs.len() as u32;
                    }
                }
                _ => {}
            }
            walk_expr(self, expr);
        }
    }
    let mut count = Count(1);
    for stmt in &parsed.func.body {
        count.visit_stmt(stmt);
    }
    Ok(count.0)
}

/// Cognitive complexity: structural increments weighted by nesting, flat
/// increments for `elif`/`else`, and one per boolean operator sequence.
pub fn cognitive(case: &TestCase) -> Result<u32, MetricsError> {
    let parsed = parse_case(case)?;
    let mut cog = Cognitive {
        text: &parsed.text,
        total: 0,
    };
    cog.body(&parsed.func.body, 0);
    Ok(cog.total)
}

struct Cognitive<'t> {
    text: &'t str,
    total: u32,
}

impl Cognitive<'_> {
    fn body(&mut self, stmts: &[ast::Stmt], nesting: u32) {
        for stmt in stmts {
            self.stmt(stmt, nesting);
        }
    }

    fn is_elif(&self, stmt: &ast::Stmt) -> bool {
        let at = stmt.range().start().to_usize();
        self.text[at..].starts_with("elif")
    }

    fn if_chain(&mut self, node: &ast::StmtIf, nesting: u32) {
        self.expr(&node.test, nesting);
        self.body(&node.body, nesting + 1);
        match node.orelse.as_slice() {
            [] => {}
            [only @ ast::Stmt::If(inner)] if self.is_elif(only) => {
                self.total += 1;
                self.if_chain(inner, nesting);
            }
            other => {
                self.total += 1;
                self.body(other, nesting + 1);
            }
        }
    }

    fn stmt(&mut self, stmt: &ast::Stmt, nesting: u32) {
        match stmt {
            ast::Stmt::If(node) => {
                self.total += 1 + nesting;
                self.if_chain(node, nesting);
            }
            ast::Stmt::For(ast::StmtFor { iter, body, orelse, .. })
            | ast::Stmt::AsyncFor(ast::StmtAsyncFor { iter, body, orelse, .. }) => {
                self.total += 1 + nesting;
                self.expr(iter, nesting);
                self.body(body, nesting + 1);
                self.body(orelse, nesting + 1);
            }
            ast::Stmt::While(w) => {
                self.total += 1 + nesting;
                self.expr(&w.test, nesting);
                self.body(&w.body, nesting + 1);
                self.body(&w.orelse, nesting + 1);
            }
            ast::Stmt::Try(ast::StmtTry {
                body,
                handlers,
                orelse,
                finalbody,
                ..
            })
            | ast::Stmt::TryStar(ast::StmtTryStar {
                body,
                handlers,
                orelse,
                finalbody,
                ..
            }) => {
                self.body(body, nesting);
                for h in handlers {
                    let ast::ExceptHandler::ExceptHandler(h) = h;
                    self.total += 1 + nesting;
                    self.body(&h.body, nesting + 1);
                }
                self.body(orelse, nesting);
                self.body(finalbody, nesting);
            }
            ast::Stmt::With(ast::StmtWith { items, body, .. })
            | ast::Stmt::AsyncWith(ast::StmtAsyncWith { items, body, .. }) => {
                for item in items {
                    self.expr(&item.context_expr, nesting);
                }
                self.body(body, nesting);
            }
            ast::Stmt::Match(m) => {
                self.total += 1 + nesting;
                self.expr(&m.subject, nesting);
                for case in &m.cases {
                    if let Some(guard) = &case.guard {
                        self.expr(guard, nesting + 1);
                    }
                    self.body(&case.body, nesting + 1);
                }
            }
            ast::Stmt::FunctionDef(f) => self.body(&f.body, nesting + 1),
            ast::Stmt::AsyncFunctionDef(f) => self.body(&f.body, nesting + 1),
            ast::Stmt::ClassDef(c) => self.body(&c.body, nesting + 1),
            simple => {
                let mut v = ExprCollector(Vec::new());
                walk_stmt(&mut v, simple);
                for e in v.0 {
                    self.expr(e, nesting);
                }
            }
        }
    }

    fn expr(&mut self, expr: &ast::Expr, nesting: u32) {
        match expr {
            ast::Expr::IfExp(e) => {
                self.total += 1 + nesting;
                self.expr(&e.test, nesting);
                self.expr(&e.body, nesting + 1);
                self.expr(&e.orelse, nesting + 1);
            }
            ast::Expr::BoolOp(b) => {
                self.total += 1;
                self.bool_values(b.op, &b.values, nesting);
            }
            ast::Expr::Lambda(l) => self.expr(&l.body, nesting + 1),
            other => {
                let mut v = ChildExprs(Vec::new());
                walk_expr(&mut v, other);
                for e in v.0 {
                    self.expr(e, nesting);
                }
            }
        }
    }

    fn bool_values(&mut self, op: ast::BoolOp, values: &[ast::Expr], nesting: u32) {
        for v in values {
            match v {
                ast::Expr::BoolOp(inner) if inner.op == op => self.bool_values(op, &inner.values, nesting),
                other => self.expr(other, nesting),
            }
        }
    }
}

/// Top-level expressions of a simple statement.
struct ExprCollector<'a>(Vec<&'a ast::Expr>);

impl<'a> Visitor<'a> for ExprCollector<'a> {
    fn visit_expr(&mut self, expr: &'a ast::Expr) {
        self.0.push(expr);
    }
}

/// Direct child expressions of an expression.
struct ChildExprs<'a>(Vec<&'a ast::Expr>);

impl<'a> Visitor<'a> for ChildExprs<'a> {
    fn visit_expr(&mut self, expr: &'a ast::Expr) {
        self.0.push(expr);
    }

    fn visit_stmt(&mut self, _stmt: &'a ast::Stmt) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmellKind {
    AssertionFree,
    Duplicated,
    Oversized,
    ConditionalLogic,
    MagicNumbers,
}

impl SmellKind {
    pub const ALL: [SmellKind; 5] = [
        SmellKind::AssertionFree,
        SmellKind::Duplicated,
        SmellKind::Oversized,
        SmellKind::ConditionalLogic,
        SmellKind::MagicNumbers,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SmellKind::AssertionFree => "assertion-free",
            SmellKind::Duplicated => "duplicated",
            SmellKind::Oversized => "oversized",
            SmellKind::ConditionalLogic => "conditional-logic",
            SmellKind::MagicNumbers => "magic-numbers",
        }
    }

    /// Remediation cost in minutes.
    pub fn cost_minutes(self) -> f64 {
        match self {
            SmellKind::AssertionFree => 5.0,
            SmellKind::Duplicated => 10.0,
            SmellKind::Oversized => 10.0,
            SmellKind::ConditionalLogic => 5.0,
            SmellKind::MagicNumbers => 2.0,
        }
    }
}

impl fmt::Display for SmellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Smell {
    pub case_id: String,
    pub kind: SmellKind,
}

#[derive(Default)]
struct CaseFacts {
    asserts: usize,
    statements: usize,
    branches: usize,
    numbers: BTreeSet<String>,
}

impl<'a> Visitor<'a> for CaseFacts {
    fn visit_stmt(&mut self, stmt: &'a ast::Stmt) {
        self.statements += 1;
        match stmt {
            ast::Stmt::Assert(_) => self.asserts += 1,
            ast::Stmt::If(_)
            | ast::Stmt::For(_)
            | ast::Stmt::AsyncFor(_)
            | ast::Stmt::While(_)
            | ast::Stmt::Match(_) => self.branches += 1,
            _ => {}
        }
        walk_stmt(self, stmt);
    }

    fn visit_expr(&mut self, expr: &'a ast::Expr) {
        match expr {
            ast::Expr::IfExp(_) => self.branches += 1,
            ast::Expr::Call(call) => {
                let name = match call.func.as_ref() {
                    ast::Expr::Attribute(a) => Some(a.attr.as_str()),
                    ast::Expr::Name(n) => Some(n.id.as_str()),
                    _ => None,
                };
                if name.is_some_and(|n| n.starts_with("assert") || n == "raises" || n == "warns" || n == "approx") {
                    self.asserts += 1;
                }
            }
            ast::Expr::Constant(c) => match &c.value {
                ast::Constant::Int(i) => {
                    self.numbers.insert(format!("i{i}"));
                }
                ast::Constant::Float(f) => {
                    self.numbers.insert(format!("f{f:?}"));
                }
                ast::Constant::Complex { real, imag } => {
                    self.numbers.insert(format!("c{real:?}{imag:?}"));
                }
                _ => {}
            },
            _ => {}
        }
        walk_expr(self, expr);
    }
}

fn facts(parsed: &ParsedCase) -> CaseFacts {
    let mut f = CaseFacts::default();
    for stmt in &parsed.func.body {
        f.visit_stmt(stmt);
    }
    f
}

/// Body text with the case name blanked and whitespace collapsed.
fn duplicate_key(case: &TestCase) -> String {
    let renamed = case.body.replacen(&format!("def {}", case.name), "def _", 1);
    renamed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Smells of every case in `file`, ordered by case then kind. Unparseable
/// cases are skipped.
pub fn detect_smells(file: &TestFile) -> Vec<Smell> {
    let mut keys: BTreeMap<String, usize> = BTreeMap::new();
    for case in &file.cases {
        *keys.entry(duplicate_key(case)).or_default() += 1;
    }
    let mut out = Vec::new();
    for case in &file.cases {
        let Ok(parsed) = parse_case(case) else { continue };
        for kind in case_smells(&parsed, keys[&duplicate_key(case)] > 1) {
            out.push(Smell {
                case_id: case.id.clone(),
                kind,
            });
        }
    }
    out
}

fn case_smells(parsed: &ParsedCase, duplicated: bool) -> Vec<SmellKind> {
    let f = facts(parsed);
    let mut kinds = Vec::new();
    if f.asserts == 0 {
        kinds.push(SmellKind::AssertionFree);
    }
    if duplicated {
        kinds.push(SmellKind::Duplicated);
    }
    if f.statements > OVERSIZED_STATEMENTS {
        kinds.push(SmellKind::Oversized);
    }
    if f.branches > 0 {
        kinds.push(SmellKind::ConditionalLogic);
    }
    if f.numbers.len() > MAGIC_NUMBER_LIMIT {
        kinds.push(SmellKind::MagicNumbers);
    }
    kinds
}

/// Average remediation minutes per case; zero for an empty suite.
pub fn technical_debt(smells: &[Smell], total_cases: usize) -> f64 {
    if total_cases == 0 {
        return 0.0;
    }
    smells.iter().map(|s| s.kind.cost_minutes()).fold(0.0, |a, b| a + b) / total_cases as f64
}

/// Coverage aggregated over several problems (micro-averaged).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub covered_lines: usize,
    pub executable_lines: usize,
    pub covered_arms: usize,
    pub total_arms: usize,
    pub line_pct: f64,
    pub branch_pct: f64,
}

impl CoverageSummary {
    pub fn from_snapshots<'a>(snaps: impl IntoIterator<Item = &'a CoverageSnapshot>) -> Self {
        let mut s = CoverageSummary::default();
        for snap in snaps {
            s.covered_lines += snap.covered_lines();
            s.executable_lines += snap.executable_lines;
            s.covered_arms += snap.covered_arms();
            s.total_arms += snap.total_arms;
        }
        let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        s.line_pct = pct(s.covered_lines, s.executable_lines);
        s.branch_pct = pct(s.covered_arms, s.total_arms);
        s
    }
}

/// Per-case ledger row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub cyclomatic: u32,
    pub cognitive: u32,
    pub smells: Vec<SmellKind>,
    pub debt_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub suite_id: String,
    pub smell_catalogue: String,
    pub total_tests: usize,
    pub cyclomatic_total: u64,
    pub cognitive_total: u64,
    pub smells: Vec<Smell>,
    pub avg_smells: f64,
    pub avg_debt_minutes: f64,
    pub line_pct: f64,
    pub branch_pct: f64,
    pub coverage: CoverageSummary,
    pub cases: Vec<CaseMetrics>,
}

impl QualityReport {
    /// Totals and averages agree with the per-case ledger.
    pub fn is_consistent(&self) -> bool {
        let n = self.cases.len();
        let smells: usize = self.cases.iter().map(|c| c.smells.len()).sum();
        let debt: f64 = self.cases.iter().map(|c| c.debt_minutes).fold(0.0, |a, b| a + b);
        let avg = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
        n == self.total_tests
            && self.cyclomatic_total == self.cases.iter().map(|c| c.cyclomatic as u64).sum::<u64>()
            && self.cognitive_total == self.cases.iter().map(|c| c.cognitive as u64).sum::<u64>()
            && smells == self.smells.len()
            && (self.avg_smells - avg(smells as f64)).abs() < 1e-9
            && (self.avg_debt_minutes - avg(debt)).abs() < 1e-9
    }
}

/// Aggregates every metric over the cases of `files`.
pub fn build_report(
    suite_id: &str,
    files: &[&TestFile],
    coverage: CoverageSummary,
) -> Result<QualityReport, MetricsError> {
    let mut cases = Vec::new();
    let mut smells = Vec::new();
    for file in files {
        let file_smells = detect_smells(file);
        for case in &file.cases {
            let kinds: Vec<SmellKind> = file_smells
                .iter()
                .filter(|s| s.case_id == case.id)
                .map(|s| s.kind)
                .collect();
            cases.push(CaseMetrics {
                case_id: case.id.clone(),
                cyclomatic: cyclomatic(case)?,
                cognitive: cognitive(case)?,
                debt_minutes: kinds.iter().map(|k| k.cost_minutes()).fold(0.0, |a, b| a + b),
                smells: kinds,
            });
        }
        smells.extend(file_smells);
    }
    let n = cases.len();
    let avg = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(QualityReport {
        suite_id: suite_id.to_string(),
        smell_catalogue: SMELL_CATALOGUE_VERSION.to_string(),
        total_tests: n,
        cyclomatic_total: cases.iter().map(|c| c.cyclomatic as u64).sum(),
        cognitive_total: cases.iter().map(|c| c.cognitive as u64).sum(),
        avg_smells: avg(smells.len() as f64),
        avg_debt_minutes: technical_debt(&smells, n),
        smells,
        line_pct: coverage.line_pct,
        branch_pct: coverage.branch_pct,
        coverage,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;

    fn case(body: &str) -> TestCase {
        TestCase::new("p", Source::Human, body).unwrap()
    }

    #[test]
    fn cyclomatic_examples() {
        assert_eq!(
            cyclomatic(&case("def test_a():\n    assert 1\n    assert 2\n    assert 3")).unwrap(),
            1
        );
        assert_eq!(
            cyclomatic(&case(
                "def test_a():\n    for x in y:\n        if x:\n            assert x"
            ))
            .unwrap(),
            3
        );
        assert_eq!(cyclomatic(&case("def test_a():\n    assert a and b or c")).unwrap(), 3);
    }

    #[test]
    fn cognitive_examples() {
        assert_eq!(
            cognitive(&case("def test_a():\n    x = 1\n    assert x == 1")).unwrap(),
            0
        );
        assert_eq!(
            cognitive(&case("def test_a():\n    if x:\n        assert x")).unwrap(),
            1
        );
        assert_eq!(
            cognitive(&case(
                "def test_a():\n    for i in y:\n        if i:\n            assert i"
            ))
            .unwrap(),
            3
        );
        assert_eq!(
            cognitive(&case(
                "def test_a():\n    if a:\n        pass\n    elif b:\n        pass\n    else:\n        pass"
            ))
            .unwrap(),
            3
        );
        assert_eq!(
            cognitive(&case(
                "def test_a():\n    if a:\n        pass\n    else:\n        if b:\n            pass"
            ))
            .unwrap(),
            4
        );
        assert_eq!(
            cognitive(&case("def test_a():\n    assert a and b and c or d")).unwrap(),
            2
        );
    }

    #[test]
    fn smell_catalogue() {
        let file = TestFile::from_cases(
            "p",
            Source::Human,
            "",
            vec![
                case("def test_a():\n    x = 1"),
                case("def test_b():\n    assert f(1) == 2"),
                case("def test_c():\n    assert f(1) == 2"),
                case("def test_d():\n    assert f(1) == 2\n    assert f(2) == 3\n    assert f(3) == 4"),
                case("def test_e():\n    with pytest.raises(ValueError):\n        f(-1)"),
            ],
        );
        let smells: Vec<(String, SmellKind)> = detect_smells(&file).into_iter().map(|s| (s.case_id, s.kind)).collect();
        assert_eq!(
            smells,
            [
                ("p/human/test_a".to_string(), SmellKind::AssertionFree),
                ("p/human/test_b".to_string(), SmellKind::Duplicated),
                ("p/human/test_c".to_string(), SmellKind::Duplicated),
            ]
        );
        let many = (0..12)
            .map(|i| format!("    assert f({i}) == {}", i + 100))
            .collect::<Vec<_>>()
            .join("\n");
        let big = TestFile::from_cases("p", Source::Human, "", vec![case(&format!("def test_m():\n{many}"))]);
        let kinds: Vec<_> = detect_smells(&big).into_iter().map(|s| s.kind).collect();
        assert_eq!(kinds, [SmellKind::MagicNumbers]);
    }

    #[test]
    fn debt_examples() {
        assert_eq!(technical_debt(&[], 3), 0.0);
        let one = [Smell {
            case_id: "a".into(),
            kind: SmellKind::Duplicated,
        }];
        assert_eq!(technical_debt(&one, 2), 5.0);
    }

    #[test]
    fn empty_report() {
        let r = build_report("s", &[], CoverageSummary::default()).unwrap();
        assert_eq!((r.total_tests, r.cyclomatic_total, r.cognitive_total), (0, 0, 0));
        assert_eq!((r.line_pct, r.branch_pct, r.avg_smells), (0.0, 0.0, 0.0));
        assert!(r.is_consistent());
    }
}
