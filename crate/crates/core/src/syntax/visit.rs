use rustpython_parser::ast::{self, Expr, Stmt};

/// Borrowing AST visitor. Override a method and call the matching `walk_*`
/// function to keep descending.
pub trait Visitor<'a> {
    fn visit_stmt(&mut self, stmt: &'a Stmt) {
        walk_stmt(self, stmt);
    }

    fn visit_expr(&mut self, expr: &'a Expr) {
        walk_expr(self, expr);
    }
}

fn walk_body<'a, V: Visitor<'a> + ?Sized>(v: &mut V, body: &'a [Stmt]) {
    for stmt in body {
        v.visit_stmt(stmt);
    }
}

fn walk_arguments<'a, V: Visitor<'a> + ?Sized>(v: &mut V, args: &'a ast::Arguments) {
    for arg in args.posonlyargs.iter().chain(&args.args).chain(&args.kwonlyargs) {
        if let Some(ann) = &arg.def.annotation {
            v.visit_expr(ann);
        }
        if let Some(default) = &arg.default {
            v.visit_expr(default);
        }
    }
    for arg in args.vararg.iter().chain(&args.kwarg) {
        if let Some(ann) = &arg.annotation {
            v.visit_expr(ann);
        }
    }
}

fn walk_handlers<'a, V: Visitor<'a> + ?Sized>(v: &mut V, handlers: &'a [ast::ExceptHandler]) {
    for handler in handlers {
        let ast::ExceptHandler::ExceptHandler(h) = handler;
        if let Some(t) = &h.type_ {
            v.visit_expr(t);
        }
        walk_body(v, &h.body);
    }
}

fn walk_pattern<'a, V: Visitor<'a> + ?Sized>(v: &mut V, pattern: &'a ast::Pattern) {
    match pattern {
        ast::Pattern::MatchValue(p) => v.visit_expr(&p.value),
        ast::Pattern::MatchSingleton(_) | ast::Pattern::MatchStar(_) => {}
        ast::Pattern::MatchSequence(p) => p.patterns.iter().for_each(|p| walk_pattern(v, p)),
        ast::Pattern::MatchMapping(p) => {
            p.keys.iter().for_each(|k| v.visit_expr(k));
            p.patterns.iter().for_each(|p| walk_pattern(v, p));
        }
        ast::Pattern::MatchClass(p) => {
            v.visit_expr(&p.cls);
            p.patterns
                .iter()
                .chain(&p.kwd_patterns)
                .for_each(|p| walk_pattern(v, p));
        }
        ast::Pattern::MatchAs(p) => {
            if let Some(inner) = &p.pattern {
                walk_pattern(v, inner);
            }
        }
        ast::Pattern::MatchOr(p) => p.patterns.iter().for_each(|p| walk_pattern(v, p)),
    }
}

pub fn walk_stmt<'a, V: Visitor<'a> + ?Sized>(v: &mut V, stmt: &'a Stmt) {
    match stmt {
        Stmt::FunctionDef(f) => {
            f.decorator_list.iter().for_each(|d| v.visit_expr(d));
            walk_arguments(v, &f.args);
            if let Some(r) = &f.returns {
                v.visit_expr(r);
            }
            walk_body(v, &f.body);
        }
        Stmt::AsyncFunctionDef(f) => {
            f.decorator_list.iter().for_each(|d| v.visit_expr(d));
            walk_arguments(v, &f.args);
            if let Some(r) = &f.returns {
                v.visit_expr(r);
            }
            walk_body(v, &f.body);
        }
        Stmt::ClassDef(c) => {
            c.decorator_list.iter().for_each(|d| v.visit_expr(d));
            c.bases.iter().for_each(|b| v.visit_expr(b));
            c.keywords.iter().for_each(|k| v.visit_expr(&k.value));
            walk_body(v, &c.body);
        }
        Stmt::Return(r) => {
            if let Some(value) = &r.value {
                v.visit_expr(value);
            }
        }
        Stmt::Delete(d) => d.targets.iter().for_each(|t| v.visit_expr(t)),
        Stmt::Assign(a) => {
            a.targets.iter().for_each(|t| v.visit_expr(t));
            v.visit_expr(&a.value);
        }
        Stmt::TypeAlias(t) => {
            v.visit_expr(&t.name);
            v.visit_expr(&t.value);
        }
        Stmt::AugAssign(a) => {
            v.visit_expr(&a.target);
            v.visit_expr(&a.value);
        }
        Stmt::AnnAssign(a) => {
            v.visit_expr(&a.target);
            v.visit_expr(&a.annotation);
            if let Some(value) = &a.value {
                v.visit_expr(value);
            }
        }
        Stmt::For(f) => {
            v.visit_expr(&f.target);
            v.visit_expr(&f.iter);
            walk_body(v, &f.body);
            walk_body(v, &f.orelse);
        }
        Stmt::AsyncFor(f) => {
            v.visit_expr(&f.target);
            v.visit_expr(&f.iter);
            walk_body(v, &f.body);
            walk_body(v, &f.orelse);
        }
        Stmt::While(w) => {
            v.visit_expr(&w.test);
            walk_body(v, &w.body);
            walk_body(v, &w.orelse);
        }
        Stmt::If(i) => {
            v.visit_expr(&i.test);
            walk_body(v, &i.body);
            walk_body(v, &i.orelse);
        }
        Stmt::With(w) => {
            for item in &w.items {
                v.visit_expr(&item.context_expr);
                if let Some(vars) = &item.optional_vars {
                    v.visit_expr(vars);
                }
            }
            walk_body(v, &w.body);
        }
        Stmt::AsyncWith(w) => {
            for item in &w.items {
                v.visit_expr(&item.context_expr);
                if let Some(vars) = &item.optional_vars {
                    v.visit_expr(vars);
                }
            }
            walk_body(v, &w.body);
        }
        Stmt::Match(m) => {
            v.visit_expr(&m.subject);
            for case in &m.cases {
                walk_pattern(v, &case.pattern);
                if let Some(guard) = &case.guard {
                    v.visit_expr(guard);
                }
                walk_body(v, &case.body);
            }
        }
        Stmt::Raise(r) => {
            if let Some(exc) = &r.exc {
                v.visit_expr(exc);
            }
            if let Some(cause) = &r.cause {
                v.visit_expr(cause);
            }
        }
        Stmt::Try(t) => {
            walk_body(v, &t.body);
            walk_handlers(v, &t.handlers);
            walk_body(v, &t.orelse);
            walk_body(v, &t.finalbody);
        }
        Stmt::TryStar(t) => {
            walk_body(v, &t.body);
            walk_handlers(v, &t.handlers);
            walk_body(v, &t.orelse);
            walk_body(v, &t.finalbody);
        }
        Stmt::Assert(a) => {
            v.visit_expr(&a.test);
            if let Some(msg) = &a.msg {
                v.visit_expr(msg);
            }
        }
        Stmt::Expr(e) => v.visit_expr(&e.value),
        Stmt::Import(_)
        | Stmt::ImportFrom(_)
        | Stmt::Global(_)
        | Stmt::Nonlocal(_)
        | Stmt::Pass(_)
        | Stmt::Break(_)
        | Stmt::Continue(_) => {}
    }
}

fn walk_generators<'a, V: Visitor<'a> + ?Sized>(v: &mut V, generators: &'a [ast::Comprehension]) {
    for generator in generators {
        v.visit_expr(&generator.target);
        v.visit_expr(&generator.iter);
        generator.ifs.iter().for_each(|e| v.visit_expr(e));
    }
}

pub fn walk_expr<'a, V: Visitor<'a> + ?Sized>(v: &mut V, expr: &'a Expr) {
    match expr {
        Expr::BoolOp(b) => b.values.iter().for_each(|e| v.visit_expr(e)),
        Expr::NamedExpr(n) => {
            v.visit_expr(&n.target);
            v.visit_expr(&n.value);
        }
        Expr::BinOp(b) => {
            v.visit_expr(&b.left);
            v.visit_expr(&b.right);
        }
        Expr::UnaryOp(u) => v.visit_expr(&u.operand),
        Expr::Lambda(l) => {
            walk_arguments(v, &l.args);
            v.visit_expr(&l.body);
        }
        Expr::IfExp(i) => {
            v.visit_expr(&i.test);
            v.visit_expr(&i.body);
            v.visit_expr(&i.orelse);
        }
        Expr::Dict(d) => {
            d.keys.iter().flatten().for_each(|k| v.visit_expr(k));
            d.values.iter().for_each(|e| v.visit_expr(e));
        }
        Expr::Set(s) => s.elts.iter().for_each(|e| v.visit_expr(e)),
        Expr::ListComp(c) => {
            walk_generators(v, &c.generators);
            v.visit_expr(&c.elt);
        }
        Expr::SetComp(c) => {
            walk_generators(v, &c.generators);
            v.visit_expr(&c.elt);
        }
        Expr::DictComp(c) => {
            walk_generators(v, &c.generators);
            v.visit_expr(&c.key);
            v.visit_expr(&c.value);
        }
        Expr::GeneratorExp(c) => {
            walk_generators(v, &c.generators);
            v.visit_expr(&c.elt);
        }
        Expr::Await(a) => v.visit_expr(&a.value),
        Expr::Yield(y) => {
            if let Some(value) = &y.value {
                v.visit_expr(value);
            }
        }
        Expr::YieldFrom(y) => v.visit_expr(&y.value),
        Expr::Compare(c) => {
            v.visit_expr(&c.left);
            c.comparators.iter().for_each(|e| v.visit_expr(e));
        }
        Expr::Call(c) => {
            v.visit_expr(&c.func);
            c.args.iter().for_each(|e| v.visit_expr(e));
            c.keywords.iter().for_each(|k| v.visit_expr(&k.value));
        }
        Expr::FormattedValue(f) => {
            v.visit_expr(&f.value);
            if let Some(spec) = &f.format_spec {
                v.visit_expr(spec);
            }
        }
        Expr::JoinedStr(j) => j.values.iter().for_each(|e| v.visit_expr(e)),
        Expr::Constant(_) | Expr::Name(_) => {}
        Expr::Attribute(a) => v.visit_expr(&a.value),
        Expr::Subscript(s) => {
            v.visit_expr(&s.value);
            v.visit_expr(&s.slice);
        }
        Expr::Starred(s) => v.visit_expr(&s.value),
        Expr::List(l) => l.elts.iter().for_each(|e| v.visit_expr(e)),
        Expr::Tuple(t) => t.elts.iter().for_each(|e| v.visit_expr(e)),
        Expr::Slice(s) => {
            for part in [&s.lower, &s.upper, &s.step].into_iter().flatten() {
                v.visit_expr(part);
            }
        }
    }
}
