"""Canonical textual format for build-execution programs.

The format is UTF-8, newline-delimited and line-oriented: one `task` header
per task, indented body lines, one operation per line.  `_|_` denotes the
no-files (or no-deps) marker and `^T^` the any-file marker.  Paths and
fragments are always double-quoted with C-style escapes; task and process
names are quoted only when they contain characters the bare-token syntax
cannot carry.

    task "cp" ("/source"): "/target" after _|_ =
      newproc p
      sysop in p =
        let fd3 = "/source"
        consume fd3
        let fd4 = "/target"
        produce fd4
        del fd4
        del fd3

Formatting then reparsing yields a structurally equal program.
"""

from __future__ import annotations

import re

from . import cstr
from .model import (
    ANY,
    EMPTY,
    At,
    Const,
    Consume,
    DelFd,
    DuplicateTaskName,
    Expr,
    FdRef,
    FileSpec,
    LetFd,
    NewProc,
    Operation,
    Produce,
    Program,
    Fork,
    Statement,
    SysOp,
    Task,
)

BOTTOM_MARK = "_|_"
TOP_MARK = "^T^"

_KEYWORDS = {
    "task", "after", "at", "from", "in", "let", "del",
    "consume", "produce", "newproc", "sysop",
}
_SAFE_TOKEN = re.compile(r"[A-Za-z0-9_./@+-]+\Z")
_FD_TOKEN = re.compile(r"fd(\d+)\Z")
_PUNCT = "(),:="


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# Lexing

# token kinds: "str" (decoded string), "sym" (punctuation), "mark" (_|_ / ^T^),
# "tok" (bare word)


def _lex(text: str, lineno: int) -> list[tuple[str, str, int]]:
    tokens: list[tuple[str, str, int]] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in " \t":
            i += 1
            continue
        col = i + 1
        if c == '"':
            try:
                value, i = cstr.scan_quoted(text, i)
            except ValueError as exc:
                raise ParseError(str(exc), lineno, col) from None
            tokens.append(("str", value, col))
        elif c in _PUNCT:
            tokens.append(("sym", c, col))
            i += 1
        else:
            j = i
            while j < n and text[j] not in ' \t"' and text[j] not in _PUNCT:
                j += 1
            word = text[i:j]
            if word in (BOTTOM_MARK, TOP_MARK):
                tokens.append(("mark", word, col))
            else:
                tokens.append(("tok", word, col))
            i = j
    return tokens


class _Cursor:
    """Token cursor over one line."""

    def __init__(self, tokens: list[tuple[str, str, int]], lineno: int):
        self.tokens = tokens
        self.lineno = lineno
        self.pos = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, expect: str | None = None) -> tuple[str, str, int]:
        tok = self.peek()
        if tok is None:
            raise ParseError(
                f"unexpected end of line (wanted {expect or 'more input'})",
                self.lineno,
                0,
            )
        self.pos += 1
        return tok

    def expect_sym(self, sym: str) -> None:
        kind, value, col = self.next(repr(sym))
        if kind != "sym" or value != sym:
            raise ParseError(f"expected {sym!r}, got {value!r}", self.lineno, col)

    def expect_word(self, word: str) -> None:
        kind, value, col = self.next(repr(word))
        if kind != "tok" or value != word:
            raise ParseError(f"expected {word!r}, got {value!r}", self.lineno, col)

    def done(self) -> None:
        tok = self.peek()
        if tok is not None:
            raise ParseError(f"trailing input: {tok[1]!r}", self.lineno, tok[2])


def _parse_name(cur: _Cursor, what: str) -> str:
    kind, value, col = cur.next(what)
    if kind in ("str", "tok"):
        return value
    raise ParseError(f"expected {what}, got {value!r}", cur.lineno, col)


def _parse_spec_items(cur: _Cursor, closing: bool) -> FileSpec:
    """Parse filespec items up to `)` (closing=True) or end of group."""
    tok = cur.peek()
    if tok is not None and tok[0] == "mark":
        cur.next()
        spec = EMPTY if tok[1] == BOTTOM_MARK else ANY
        if closing:
            cur.expect_sym(")")
        return spec
    paths: list[str] = []
    while True:
        kind, value, col = cur.next("path")
        if kind != "str":
            raise ParseError(f"expected quoted path, got {value!r}", cur.lineno, col)
        paths.append(value)
        tok = cur.peek()
        if tok is not None and tok[:2] == ("sym", ","):
            cur.next()
            continue
        break
    if closing:
        cur.expect_sym(")")
    return FileSpec.of(paths)


def _parse_filespec(cur: _Cursor) -> FileSpec:
    tok = cur.peek()
    if tok is None:
        raise ParseError("expected file spec", cur.lineno, 0)
    if tok[0] == "mark":
        cur.next()
        return EMPTY if tok[1] == BOTTOM_MARK else ANY
    if tok[:2] == ("sym", "("):
        cur.next()
        return _parse_spec_items(cur, closing=True)
    if tok[0] == "str":
        cur.next()
        return FileSpec.of([tok[1]])
    raise ParseError(f"expected file spec, got {tok[1]!r}", cur.lineno, tok[2])


def _parse_deps(cur: _Cursor) -> tuple[str, ...]:
    tok = cur.peek()
    if tok is None:
        raise ParseError("expected dependency spec", cur.lineno, 0)
    if tok[0] == "mark" and tok[1] == BOTTOM_MARK:
        cur.next()
        return ()
    names: list[str] = []
    if tok[:2] == ("sym", "("):
        cur.next()
        while True:
            names.append(_parse_name(cur, "task name"))
            kind, value, col = cur.next("',' or ')'")
            if (kind, value) == ("sym", ","):
                continue
            if (kind, value) == ("sym", ")"):
                break
            raise ParseError(f"expected ',' or ')', got {value!r}", cur.lineno, col)
    else:
        names.append(_parse_name(cur, "task name"))
    return tuple(dict.fromkeys(names))


def _parse_expr(cur: _Cursor) -> Expr:
    kind, value, col = cur.next("expression")
    base: Expr
    if kind == "str":
        nxt = cur.peek()
        if nxt is not None and nxt[:2] == ("tok", "at"):
            cur.next()
            return At(value, _parse_expr(cur))
        return Const(value)
    if kind == "tok":
        m = _FD_TOKEN.match(value)
        if m:
            return FdRef(int(m.group(1)))
    raise ParseError(f"expected expression, got {value!r}", cur.lineno, col)


def _parse_fd(cur: _Cursor) -> int:
    kind, value, col = cur.next("descriptor")
    if kind == "tok":
        m = _FD_TOKEN.match(value)
        if m:
            return int(m.group(1))
    raise ParseError(f"expected fdN, got {value!r}", cur.lineno, col)


def _parse_header(cur: _Cursor) -> Task:
    name = _parse_name(cur, "task name")
    cur.expect_sym("(")
    inputs = _parse_spec_items(cur, closing=True)
    cur.expect_sym(":")
    outputs = _parse_filespec(cur)
    cur.expect_word("after")
    deps = _parse_deps(cur)
    cur.expect_sym("=")
    cur.done()
    return Task(name, inputs, outputs, deps)


def parse_text(source: str) -> Program:
    """Parse canonical text into a program.

    Raises ParseError with line/column context, or DuplicateTaskName when two
    tasks share a name.
    """
    tasks: list[Task] = []
    names: set[str] = set()
    header: Task | None = None
    body: list[Statement] = []
    sysop: list[Operation] | None = None
    sysop_proc = ""

    def close_sysop() -> None:
        nonlocal sysop
        if sysop is not None:
            body.append(SysOp(sysop_proc, tuple(sysop)))
            sysop = None

    def close_task() -> None:
        nonlocal header, body
        if header is not None:
            close_sysop()
            tasks.append(Task(header.name, header.inputs, header.outputs,
                              header.deps, tuple(body)))
            header = None
            body = []

    for lineno, raw in enumerate(source.splitlines(), start=1):
        tokens = _lex(raw, lineno)
        if not tokens:
            continue
        cur = _Cursor(tokens, lineno)
        kind, word, col = tokens[0]
        if kind != "tok":
            raise ParseError(f"unexpected {word!r}", lineno, col)
        if word == "task":
            close_task()
            cur.next()
            header = _parse_header(cur)
            if header.name in names:
                raise DuplicateTaskName(f"{header.name!r} (line {lineno})")
            names.add(header.name)
            continue
        if header is None:
            raise ParseError(f"{word!r} outside any task", lineno, col)
        if word == "newproc":
            close_sysop()
            cur.next()
            proc = _parse_name(cur, "process id")
            nxt = cur.peek()
            if nxt is not None and nxt[:2] == ("tok", "from"):
                cur.next()
                parent = _parse_name(cur, "process id")
                body.append(Fork(proc, parent))
            else:
                body.append(NewProc(proc))
            cur.done()
        elif word == "sysop":
            close_sysop()
            cur.next()
            cur.expect_word("in")
            sysop_proc = _parse_name(cur, "process id")
            cur.expect_sym("=")
            cur.done()
            sysop = []
        elif word in ("let", "del", "consume", "produce"):
            if sysop is None:
                raise ParseError(f"{word!r} outside a sysop block", lineno, col)
            cur.next()
            if word == "let":
                fd = _parse_fd(cur)
                cur.expect_sym("=")
                sysop.append(LetFd(fd, _parse_expr(cur)))
            elif word == "del":
                parens = cur.peek() is not None and cur.peek()[:2] == ("sym", "(")
                if parens:
                    cur.next()
                sysop.append(DelFd(_parse_fd(cur)))
                if parens:
                    cur.expect_sym(")")
            elif word == "consume":
                sysop.append(Consume(_parse_expr(cur)))
            else:
                sysop.append(Produce(_parse_expr(cur)))
            cur.done()
        else:
            raise ParseError(f"unknown directive {word!r}", lineno, col)
    close_task()
    return Program(tuple(tasks))


# ---------------------------------------------------------------------------
# Formatting


def _name(text: str) -> str:
    if _SAFE_TOKEN.match(text) and text not in _KEYWORDS and not _FD_TOKEN.match(text):
        return text
    return cstr.encode(text)


def _spec_items(spec: FileSpec) -> str:
    if spec.is_empty:
        return BOTTOM_MARK
    if spec.is_any:
        return TOP_MARK
    return ", ".join(cstr.encode(p) for p in spec.paths)


def _filespec(spec: FileSpec) -> str:
    if spec.kind == "paths" and len(spec.paths) > 1:
        return "(" + _spec_items(spec) + ")"
    return _spec_items(spec)


def _deps(deps: tuple[str, ...]) -> str:
    if not deps:
        return BOTTOM_MARK
    if len(deps) == 1:
        return _name(deps[0])
    return "(" + ", ".join(_name(d) for d in deps) + ")"


def _expr(expr: Expr) -> str:
    if type(expr) is Const:
        return cstr.encode(expr.path)
    if type(expr) is FdRef:
        return f"fd{expr.fd}"
    return f"{cstr.encode(expr.fragment)} at {_expr(expr.base)}"


def _op(op: Operation) -> str:
    kind = type(op)
    if kind is LetFd:
        return f"let fd{op.fd} = {_expr(op.value)}"
    if kind is DelFd:
        return f"del fd{op.fd}"
    if kind is Consume:
        return f"consume {_expr(op.target)}"
    return f"produce {_expr(op.target)}"


def format_task(task: Task) -> str:
    lines = [
        f"task {_name(task.name)} ({_spec_items(task.inputs)}):"
        f" {_filespec(task.outputs)} after {_deps(task.deps)} ="
    ]
    for stmt in task.body:
        kind = type(stmt)
        if kind is NewProc:
            lines.append(f"  newproc {_name(stmt.proc)}")
        elif kind is Fork:
            lines.append(f"  newproc {_name(stmt.child)} from {_name(stmt.parent)}")
        else:
            lines.append(f"  sysop in {_name(stmt.proc)} =")
            for op in stmt.ops:
                lines.append(f"    {_op(op)}")
    return "\n".join(lines)


def format_program(program: Program) -> str:
    """Render a program in canonical text; reparsing restores the program."""
    if not program.tasks:
        return ""
    return "\n".join(format_task(t) for t in program) + "\n"
