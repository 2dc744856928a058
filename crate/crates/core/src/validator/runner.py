"""Fork-server test runner driven by the suitesmith validator.

Reads one JSON request per line on stdin and answers with one JSON line on
the original stdout. Every request is served by a freshly forked child so
that no user code ever runs in the server process itself.
"""

import ast
import contextlib
import importlib.abc
import importlib.util
import inspect
import itertools
import json
import os
import pathlib
import re
import select
import signal
import sys
import tempfile
import time
import traceback

sys.dont_write_bytecode = True

TEST_MODULE = "test_candidate"
LOG_TAIL = 2000

try:  # preloaded once so forked children import it for free
    import pytest  # noqa: F401
    from _pytest.outcomes import Failed as _PytestFailed
    from _pytest.outcomes import Skipped as _PytestSkipped
except Exception:  # pragma: no cover - pytest is optional
    _PytestFailed = None
    _PytestSkipped = None
import unittest


# ---------------------------------------------------------------------------
# static analysis + instrumentation of solution sources


def _is_docstring(body, idx):
    if idx != 0:
        return False
    node = body[0]
    return (
        isinstance(node, ast.Expr)
        and isinstance(node.value, ast.Constant)
        and isinstance(node.value.value, str)
    )


def _line_map(tree):
    """Map every source line to the start line of its innermost statement."""
    mapping = {}
    docstrings = set()

    def visit_body(body):
        for idx, stmt in enumerate(body):
            if _is_docstring(body, idx):
                docstrings.add(stmt.lineno)
            visit(stmt)

    def visit(stmt):
        start = stmt.lineno
        for dec in getattr(stmt, "decorator_list", []) or []:
            start = min(start, dec.lineno)
        for line in range(start, (stmt.end_lineno or stmt.lineno) + 1):
            mapping[line] = stmt.lineno
        for field in ("body", "orelse", "finalbody"):
            sub = getattr(stmt, field, None)
            if isinstance(sub, list):
                visit_body(sub)
        for handler in getattr(stmt, "handlers", []) or []:
            visit_body(handler.body)
        for case in getattr(stmt, "cases", []) or []:
            visit_body(case.body)

    visit_body(tree.body)
    return mapping, docstrings


def _code_lines(code):
    out = set()
    for _start, _end, line in code.co_lines():
        if line is not None:
            out.add(line)
    for const in code.co_consts:
        if hasattr(const, "co_lines"):
            out |= _code_lines(const)
    return out


class _BranchInstrumenter(ast.NodeTransformer):
    def __init__(self):
        self.sites = []
        self._seen = set()

    def _site(self, node):
        base = "%d:%d" % (node.lineno, node.col_offset)
        site = base
        k = 1
        while site in self._seen:
            site = "%s.%d" % (base, k)
            k += 1
        self._seen.add(site)
        self.sites.append(site)
        return site

    def _wrap(self, func, site, expr):
        call = ast.Call(
            func=ast.Name(id=func, ctx=ast.Load()),
            args=[ast.Constant(value=site), expr],
            keywords=[],
        )
        return ast.copy_location(call, expr)

    def visit_If(self, node):
        site = self._site(node)
        self.generic_visit(node)
        node.test = self._wrap("__ss_branch__", site, node.test)
        return node

    def visit_While(self, node):
        site = self._site(node)
        self.generic_visit(node)
        node.test = self._wrap("__ss_branch__", site, node.test)
        return node

    def visit_IfExp(self, node):
        site = self._site(node)
        self.generic_visit(node)
        node.test = self._wrap("__ss_branch__", site, node.test)
        return node

    def visit_For(self, node):
        site = self._site(node)
        self.generic_visit(node)
        node.iter = self._wrap("__ss_loop__", site, node.iter)
        return node


def analyze(source, filename):
    tree = ast.parse(source, filename)
    mapping, docstrings = _line_map(tree)
    raw = _code_lines(compile(source, filename, "exec"))
    starts = set(mapping.values())
    executable = {mapping[l] for l in raw if l in mapping} & starts
    executable -= docstrings
    inst = _BranchInstrumenter()
    tree = inst.visit(tree)
    ast.fix_missing_locations(tree)
    return {
        "lines": sorted(executable),
        "sites": inst.sites,
        "map": mapping,
        "tree": tree,
    }


class _Recorder:
    def __init__(self):
        self.lines = {}
        self.arms = {}
        self.maps = {}
        self.files = {}

    def register(self, module, filename, mapping):
        self.lines[module] = set()
        self.arms[module] = set()
        self.maps[filename] = (module, mapping)

    def export(self):
        out = {}
        for module in sorted(self.lines):
            out[module] = {
                "lines": sorted(self.lines[module]),
                "arms": sorted([s, a] for s, a in self.arms[module]),
            }
        return out


REC = _Recorder()


def _helpers(module):
    arms = REC.arms[module]

    def branch(site, value):
        taken = bool(value)
        arms.add((site, 0 if taken else 1))
        return taken

    def loop(site, iterable):
        entered = False
        for item in iterable:
            if not entered:
                arms.add((site, 0))
                entered = True
            yield item
        arms.add((site, 1))

    return {"__ss_branch__": branch, "__ss_loop__": loop}


class _InstrumentingLoader(importlib.abc.Loader):
    def __init__(self, name, path):
        self.name = name
        self.path = path

    def create_module(self, spec):
        return None

    def exec_module(self, module):
        with open(self.path, encoding="utf-8") as fh:
            source = fh.read()
        info = analyze(source, self.path)
        REC.register(self.name, self.path, info["map"])
        module.__dict__.update(_helpers(self.name))
        code = compile(info["tree"], self.path, "exec")
        exec(code, module.__dict__)


class _InstrumentingFinder(importlib.abc.MetaPathFinder):
    def __init__(self, root, names):
        self.root = root
        self.names = set(names)

    def find_spec(self, fullname, path, target=None):
        if fullname not in self.names:
            return None
        file = os.path.join(self.root, fullname + ".py")
        return importlib.util.spec_from_file_location(
            fullname, file, loader=_InstrumentingLoader(fullname, file)
        )


def _tracer(frame, event, arg):
    entry = REC.maps.get(frame.f_code.co_filename)
    if entry is None:
        return None
    module, mapping = entry
    hits = REC.lines[module]

    def local(fr, ev, a):
        if ev == "line":
            line = mapping.get(fr.f_lineno)
            if line is not None:
                hits.add(line)
        return local

    return local


# ---------------------------------------------------------------------------
# case execution


_NAME_RE = re.compile(r"name '([^']+)' is not defined")


def _describe(exc, test_path):
    info = {
        "exc_type": type(exc).__name__,
        "message": str(exc)[:500],
        "lineno": None,
        "missing_name": None,
        "missing_module": None,
    }
    for frame, lineno in traceback.walk_tb(exc.__traceback__):
        if os.path.abspath(frame.f_code.co_filename) == test_path:
            info["lineno"] = lineno
    if isinstance(exc, SyntaxError) and exc.filename and os.path.abspath(exc.filename) == test_path:
        info["lineno"] = exc.lineno
    if isinstance(exc, NameError):
        m = _NAME_RE.search(str(exc))
        if m:
            info["missing_name"] = m.group(1)
    if isinstance(exc, ImportError) and getattr(exc, "name", None):
        info["missing_module"] = exc.name
    return info


def _classify(exc):
    if isinstance(exc, AssertionError):
        return "fail"
    if _PytestFailed is not None and isinstance(exc, _PytestFailed):
        return "fail"
    return "error"


def _load_test_module(test_path):
    spec = importlib.util.spec_from_file_location(TEST_MODULE, test_path)
    module = importlib.util.module_from_spec(spec)
    sys.modules[TEST_MODULE] = module
    spec.loader.exec_module(module)
    return module


def _param_sets(fn):
    marks = [m for m in getattr(fn, "pytestmark", []) if getattr(m, "name", "") == "parametrize"]
    if not marks:
        return [{}]
    axes = []
    for mark in marks:
        names, values = mark.args[0], mark.args[1]
        if isinstance(names, str):
            names = [n.strip() for n in names.split(",") if n.strip()]
        rows = []
        for value in values:
            if hasattr(value, "values") and hasattr(value, "marks"):
                rows.append(dict(zip(names, tuple(value.values))))
            elif len(names) == 1:
                rows.append({names[0]: value})
            else:
                rows.append(dict(zip(names, value)))
        axes.append(rows)
    combos = []
    for parts in itertools.product(*axes):
        merged = {}
        for part in parts:
            merged.update(part)
        combos.append(merged)
    return combos


class _CaptureFixture:
    def __init__(self, stack):
        import io

        self._io = io
        self._out, self._err = io.StringIO(), io.StringIO()
        stack.enter_context(contextlib.redirect_stdout(self._out))
        stack.enter_context(contextlib.redirect_stderr(self._err))

    def readouterr(self):
        out, err = self._out.getvalue(), self._err.getvalue()
        for buf in (self._out, self._err):
            buf.seek(0)
            buf.truncate()
        return _CaptureResult(out, err)


class _CaptureResult(tuple):
    def __new__(cls, out, err):
        return tuple.__new__(cls, (out, err))

    out = property(lambda self: self[0])
    err = property(lambda self: self[1])


class _Request:
    def __init__(self, fixtures, name, param):
        self._fixtures = fixtures
        self.fixturename = name
        if param is not _NO_PARAM:
            self.param = param

    def getfixturevalue(self, name):
        return self._fixtures.get(name)

    def addfinalizer(self, fn):
        self._fixtures.stack.callback(fn)


_NO_PARAM = object()


def _fixture_marker(obj):
    return getattr(obj, "_fixture_function_marker", None) or getattr(obj, "_pytestfixturefunction", None)


def _fixture_function(obj):
    if hasattr(obj, "_get_wrapped_function"):
        return obj._get_wrapped_function()
    return getattr(obj, "__wrapped__", obj)


class _Fixtures:
    """Function-scoped fixture resolution for one case."""

    def __init__(self, module, owner=None):
        self.stack = contextlib.ExitStack()
        self.defs = {}
        self.cache = {}
        self.params = {}
        scopes = [(vars(module), None)]
        if owner is not None:
            scopes.append((_class_attrs(type(owner)), owner))
        for namespace, bound in scopes:
            for attr, obj in namespace.items():
                marker = _fixture_marker(obj)
                if marker is None:
                    continue
                name = getattr(marker, "name", None) or attr
                self.defs[name] = (_fixture_function(obj), marker, bound)

    def autouse(self):
        for name, (_fn, marker, _bound) in sorted(self.defs.items()):
            if getattr(marker, "autouse", False):
                self.get(name)

    def get(self, name):
        if name in self.params:
            return self.params[name]
        if name in self.cache:
            return self.cache[name]
        if name in self.defs:
            value = self._make(name, *self.defs[name])
        else:
            value = self._builtin(name)
        self.cache[name] = value
        return value

    def _make(self, name, fn, marker, bound):
        params = getattr(marker, "params", None)
        param = params[0] if params else _NO_PARAM
        kwargs = {}
        for arg in _arg_names(fn, skip_first=bound is not None):
            if arg == "request":
                kwargs[arg] = _Request(self, name, param)
            else:
                kwargs[arg] = self.get(arg)
        value = fn(bound, **kwargs) if bound is not None else fn(**kwargs)
        if inspect.isgenerator(value):
            gen = value
            value = next(gen)

            def finish(gen=gen):
                try:
                    next(gen)
                except StopIteration:
                    pass

            self.stack.callback(finish)
        return value

    def _builtin(self, name):
        if name in ("tmp_path", "tmpdir"):
            path = pathlib.Path(tempfile.mkdtemp(prefix="case-"))
            return path if name == "tmp_path" else str(path)
        if name == "monkeypatch":
            mp = pytest.MonkeyPatch()
            self.stack.callback(mp.undo)
            return mp
        if name in ("capsys", "capfd"):
            return _CaptureFixture(self.stack)
        if name == "request":
            return _Request(self, name, _NO_PARAM)
        raise LookupError("fixture '%s' not found" % name)


def _class_attrs(cls):
    out = {}
    for klass in reversed(cls.__mro__):
        out.update(vars(klass))
    return out


def _arg_names(fn, skip_first=False):
    try:
        params = list(inspect.signature(fn).parameters.values())
    except (TypeError, ValueError):
        return []
    if skip_first and params:
        params = params[1:]
    return [
        p.name
        for p in params
        if p.default is inspect.Parameter.empty
        and p.kind in (inspect.Parameter.POSITIONAL_OR_KEYWORD, inspect.Parameter.KEYWORD_ONLY)
    ]


def _skip_reason(fn):
    for mark in getattr(fn, "pytestmark", []):
        name = getattr(mark, "name", "")
        if name == "skip":
            return "test skipped"
        if name == "skipif" and mark.args and all(bool(c) for c in mark.args if not isinstance(c, str)):
            return "test skipped"
    return None


def _call(module, fn, owner=None):
    reason = _skip_reason(fn)
    if reason:
        raise _Skip(reason)
    for params in _param_sets(fn):
        fixtures = _Fixtures(module, owner)
        fixtures.params = params
        with fixtures.stack:
            fixtures.autouse()
            kwargs = {arg: fixtures.get(arg) for arg in _arg_names(fn, skip_first=owner is not None)}
            if owner is not None:
                fn(owner, **kwargs)
            else:
                fn(**kwargs)


class _Skip(Exception):
    pass


class _CapturingResult(unittest.TestResult):
    def __init__(self):
        super().__init__()
        self.exc = None
        self.kind = None

    def addFailure(self, test, err):
        super().addFailure(test, err)
        self.exc, self.kind = err[1], "fail"

    def addError(self, test, err):
        super().addError(test, err)
        self.exc, self.kind = err[1], "error"


def _run_case(module, case_id):
    if "::" in case_id:
        cls_name, meth_name = case_id.split("::", 1)
        cls = getattr(module, cls_name)
        if isinstance(cls, type) and issubclass(cls, unittest.TestCase):
            result = _CapturingResult()
            cls(meth_name).run(result)
            if result.exc is not None:
                return result.kind, result.exc
            if result.skipped:
                return "error", RuntimeError("test skipped")
            return "pass", None
        inst = cls()
        meth = getattr(cls, meth_name)
        try:
            if hasattr(inst, "setup_method"):
                inst.setup_method(getattr(inst, meth_name))
            _call(module, meth, inst)
        finally:
            if hasattr(inst, "teardown_method"):
                inst.teardown_method(getattr(inst, meth_name))
        return "pass", None
    _call(module, getattr(module, case_id))
    return "pass", None


def child_work(req):
    root = req["dir"]
    os.chdir(root)
    sys.path.insert(0, root)
    op = req["op"]
    traced = req.get("trace", [])
    if op == "static":
        out = {}
        for name in traced:
            path = os.path.join(root, name + ".py")
            with open(path, encoding="utf-8") as fh:
                info = analyze(fh.read(), path)
            out[name] = {
                "lines": info["lines"],
                "arms": [[s, a] for s in info["sites"] for a in (0, 1)],
            }
        return {"modules": out}

    test_path = os.path.abspath(os.path.join(root, req["test"]))
    sys.meta_path.insert(0, _InstrumentingFinder(root, traced))
    sys.settrace(_tracer)
    try:
        module = _load_test_module(test_path)
    except BaseException as exc:  # noqa: BLE001 - any load failure is a verdict
        sys.settrace(None)
        info = _describe(exc, test_path)
        if op == "load":
            info["ok"] = False
            return info
        info["outcome"] = "error"
        info["coverage"] = REC.export()
        return info
    if op == "load":
        sys.settrace(None)
        return {"ok": True}

    try:
        outcome, exc = _run_case(module, req["case"])
    except BaseException as caught:  # noqa: BLE001
        outcome, exc = _classify(caught), caught
    sys.settrace(None)
    if exc is None:
        info = {"exc_type": None, "message": "", "lineno": None, "missing_name": None, "missing_module": None}
    else:
        info = _describe(exc, test_path)
    info["outcome"] = outcome
    info["coverage"] = REC.export()
    return info


def _timeout_result(op, timeout):
    msg = "case exceeded %.3fs and was terminated" % timeout
    if op == "load":
        return {"ok": False, "exc_type": "Timeout", "message": msg, "lineno": None,
                "missing_name": None, "missing_module": None}
    return {"outcome": "timeout", "exc_type": "Timeout", "message": msg, "lineno": None,
            "missing_name": None, "missing_module": None, "coverage": {}}


def _tail(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
        return data[-LOG_TAIL:].decode("utf-8", "replace")
    except OSError:
        return ""


def serve_one(req):
    timeout = float(req.get("timeout", 120.0))
    log_path = os.path.join(req["dir"], ".runner.log")
    rfd, wfd = os.pipe()
    pid = os.fork()
    if pid == 0:  # child
        try:
            os.setpgid(0, 0)
            os.close(rfd)
            fd = os.open(log_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
            os.dup2(fd, 1)
            os.dup2(fd, 2)
            null = os.open(os.devnull, os.O_RDONLY)
            os.dup2(null, 0)
            try:
                result = child_work(req)
            except BaseException as exc:  # noqa: BLE001
                result = {"infra": "%s: %s" % (type(exc).__name__, exc)}
            payload = json.dumps(result).encode("utf-8")
            view = memoryview(payload)
            while view:
                n = os.write(wfd, view)
                view = view[n:]
        finally:
            os._exit(0)

    os.close(wfd)
    deadline = time.monotonic() + timeout
    chunks = []
    timed_out = False
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            timed_out = True
            break
        ready, _, _ = select.select([rfd], [], [], remaining)
        if not ready:
            continue
        data = os.read(rfd, 65536)
        if not data:
            break
        chunks.append(data)
    if timed_out:
        try:
            os.killpg(pid, signal.SIGKILL)
        except OSError:
            pass
    os.close(rfd)
    _, status = os.waitpid(pid, 0)
    if timed_out:
        result = _timeout_result(req["op"], timeout)
    elif not chunks:
        result = {"infra": "runner child exited without a result (status %d)" % status}
    else:
        try:
            result = json.loads(b"".join(chunks).decode("utf-8"))
        except ValueError as exc:
            result = {"infra": "unreadable child result: %s" % exc}
    result["log"] = _tail(log_path)
    return result


def main():
    proto = os.fdopen(os.dup(1), "w", encoding="utf-8")
    null = os.open(os.devnull, os.O_WRONLY)
    os.dup2(null, 1)
    proto.write(json.dumps({"ready": True, "python": sys.version.split()[0]}) + "\n")
    proto.flush()
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            result = serve_one(req)
            result["id"] = req.get("id")
        except Exception as exc:  # noqa: BLE001
            result = {"infra": "%s: %s" % (type(exc).__name__, exc)}
        proto.write(json.dumps(result) + "\n")
        proto.flush()


if __name__ == "__main__":
    main()
