"""Core model of a build execution.

A build execution is a sequence of *tasks*.  Each task pairs a declared
specification (input files, output files, task dependencies) with a body of
low-level file-system operations observed while the task ran.  Operations are
grouped per OS process; every process owns a table of file-descriptor
variables that point to paths, with descriptor 0 reserved for the process
working directory.

Evaluating a task threads a state (process -> descriptor -> path) through the
body and collects the set of paths the task consumed and produced.  The
evaluator is purely lexical: paths are normalized without consulting the real
file system, so analysis is deterministic and never touches disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Union

# ---------------------------------------------------------------------------
# Paths


def normalize_path(path: str) -> str:
    """Collapse `.`/`..`/`//` segments lexically; symlinks are not resolved."""
    if not path:
        return "."
    absolute = path.startswith("/")
    parts: list[str] = []
    for seg in path.split("/"):
        if seg == "" or seg == ".":
            continue
        if seg == "..":
            if parts and parts[-1] != "..":
                parts.pop()
            elif not absolute:
                parts.append("..")
            # ".." above the root stays at the root
            continue
        parts.append(seg)
    if absolute:
        return "/" + "/".join(parts)
    return "/".join(parts) or "."


def join_path(base: str, fragment: str) -> str:
    """Concatenate *fragment* onto *base* and normalize the result."""
    if not fragment:
        return normalize_path(base)
    return normalize_path(base + "/" + fragment)


def parent_dir(path: str) -> str:
    """Immediate parent directory of a normalized absolute path."""
    idx = path.rfind("/")
    if idx <= 0:
        return "/"
    return path[:idx]


# ---------------------------------------------------------------------------
# Abstract syntax

WORKING_DIR_FD = 0  # descriptor 0 of every process names its working directory


@dataclass(frozen=True, slots=True)
class Const:
    """A literal path; relative values resolve against the working directory."""

    path: str


@dataclass(frozen=True, slots=True)
class FdRef:
    """The path currently bound to a file descriptor."""

    fd: int


@dataclass(frozen=True, slots=True)
class At:
    """`fragment` interpreted relative to the path that `base` evaluates to."""

    fragment: str
    base: "Expr"


Expr = Union[Const, FdRef, At]


@dataclass(frozen=True, slots=True)
class LetFd:
    """Bind (or rebind) a descriptor to the path `value` evaluates to."""

    fd: int
    value: Expr


@dataclass(frozen=True, slots=True)
class DelFd:
    """Unbind a descriptor."""

    fd: int


@dataclass(frozen=True, slots=True)
class Consume:
    """Record a read access of the path `target` evaluates to."""

    target: Expr


@dataclass(frozen=True, slots=True)
class Produce:
    """Record a write/creation access of the path `target` evaluates to."""

    target: Expr


Operation = Union[LetFd, DelFd, Consume, Produce]


@dataclass(frozen=True, slots=True)
class SysOp:
    """A run of operations executed inside one process scope."""

    proc: str
    ops: tuple[Operation, ...]


@dataclass(frozen=True, slots=True)
class NewProc:
    """Introduce a process with an empty descriptor scope."""

    proc: str


@dataclass(frozen=True, slots=True)
class Fork:
    """Introduce `child` with a copy of `parent`'s descriptor scope."""

    child: str
    parent: str


Statement = Union[SysOp, NewProc, Fork]


@dataclass(frozen=True, slots=True)
class FileSpec:
    """Declared file set of a task: no files, any file, or a finite path set."""

    kind: str  # "empty" | "any" | "paths"
    paths: tuple[str, ...] = ()

    @staticmethod
    def of(paths: Iterable[str]) -> "FileSpec":
        # an empty declared set collapses to the no-files spec
        uniq = tuple(dict.fromkeys(paths))
        return FileSpec("paths", uniq) if uniq else EMPTY

    @property
    def is_any(self) -> bool:
        return self.kind == "any"

    @property
    def is_empty(self) -> bool:
        return self.kind == "empty"


EMPTY = FileSpec("empty")
ANY = FileSpec("any")


@dataclass(frozen=True, slots=True)
class Task:
    name: str
    inputs: FileSpec = EMPTY
    outputs: FileSpec = EMPTY
    deps: tuple[str, ...] = ()
    body: tuple[Statement, ...] = ()


class DuplicateTaskName(ValueError):
    def __init__(self, name: str):
        super().__init__(f"duplicate task name: {name!r}")
        self.name = name


@dataclass(frozen=True, slots=True)
class Program:
    """An ordered sequence of tasks; names are unique within a program."""

    tasks: tuple[Task, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for t in self.tasks:
            if t.name in seen:
                raise DuplicateTaskName(t.name)
            seen.add(t.name)

    def __iter__(self) -> Iterator[Task]:
        return iter(self.tasks)

    def __len__(self) -> int:
        return len(self.tasks)


# ---------------------------------------------------------------------------
# Evaluation


class UnboundDescriptor(Exception):
    """An expression referenced a descriptor with no binding in its process."""

    def __init__(self, proc: str, fd: int):
        super().__init__(f"process {proc}: descriptor {fd} is unbound")
        self.proc = proc
        self.fd = fd


@dataclass(frozen=True, slots=True)
class EvalIssue:
    """A recoverable problem noticed while evaluating a task body."""

    code: str  # "unbound-descriptor" | "close-unbound"
    task: str
    proc: str
    detail: str


@dataclass(slots=True)
class AccessSet:
    """Paths a task consumed and produced (sets: multiplicity is irrelevant)."""

    consumed: set[str] = field(default_factory=set)
    produced: set[str] = field(default_factory=set)


class EvalState:
    """Descriptor scopes of every process seen so far.

    Scopes persist for the whole build: process exit does not remove an
    entry, and looking up an unknown process yields an empty scope.
    """

    __slots__ = ("scopes",)

    def __init__(self) -> None:
        self.scopes: dict[str, dict[int, str]] = {}

    def scope(self, proc: str) -> dict[int, str]:
        return self.scopes.get(proc, {})


def eval_expr(expr: Expr, scope: dict[int, str], proc: str = "?") -> str:
    """Evaluate an expression to a normalized absolute path.

    A relative constant resolves against descriptor 0 (the working
    directory); raises UnboundDescriptor when a referenced binding is absent.
    """
    if type(expr) is Const:
        p = expr.path
        if p.startswith("/"):
            return normalize_path(p)
        cwd = scope.get(WORKING_DIR_FD)
        if cwd is None:
            raise UnboundDescriptor(proc, WORKING_DIR_FD)
        return join_path(cwd, p)
    if type(expr) is FdRef:
        try:
            return scope[expr.fd]
        except KeyError:
            raise UnboundDescriptor(proc, expr.fd) from None
    if type(expr) is At:
        return join_path(eval_expr(expr.base, scope, proc), expr.fragment)
    raise TypeError(f"not an expression: {expr!r}")


def eval_op(
    op: Operation,
    scope: dict[int, str],
    acc: AccessSet,
    issues: Optional[list[EvalIssue]] = None,
    task: str = "?",
    proc: str = "?",
) -> tuple[dict[int, str], AccessSet]:
    """Apply one operation to a process scope and the running access set.

    Raises UnboundDescriptor for expressions over missing bindings; deleting
    an unbound descriptor only records a warning (traces routinely close
    inherited descriptors the tracer never saw opened).
    """
    kind = type(op)
    if kind is LetFd:
        scope[op.fd] = eval_expr(op.value, scope, proc)
    elif kind is DelFd:
        if op.fd in scope:
            del scope[op.fd]
        elif issues is not None:
            issues.append(
                EvalIssue("close-unbound", task, proc, f"descriptor {op.fd}")
            )
    elif kind is Consume:
        acc.consumed.add(eval_expr(op.target, scope, proc))
    elif kind is Produce:
        acc.produced.add(eval_expr(op.target, scope, proc))
    else:
        raise TypeError(f"not an operation: {op!r}")
    return scope, acc


def eval_statement(
    stmt: Statement,
    state: EvalState,
    acc: AccessSet,
    issues: Optional[list[EvalIssue]] = None,
    task: str = "?",
) -> None:
    """Apply one statement to the build state, skipping unevaluable accesses."""
    kind = type(stmt)
    scopes = state.scopes
    if kind is SysOp:
        scope = scopes.get(stmt.proc)
        if scope is None:
            scope = scopes[stmt.proc] = {}
        for op in stmt.ops:
            try:
                eval_op(op, scope, acc, issues, task, stmt.proc)
            except UnboundDescriptor as exc:
                if issues is not None:
                    issues.append(
                        EvalIssue(
                            "unbound-descriptor",
                            task,
                            stmt.proc,
                            f"descriptor {exc.fd} in {type(op).__name__.lower()}",
                        )
                    )
    elif kind is NewProc:
        scopes[stmt.proc] = {}
    elif kind is Fork:
        scopes[stmt.child] = dict(scopes.get(stmt.parent, ()))
    else:
        raise TypeError(f"not a statement: {stmt!r}")


def eval_task(
    task: Task,
    state: Optional[EvalState] = None,
    issues: Optional[list[EvalIssue]] = None,
) -> tuple[EvalState, AccessSet]:
    """Evaluate a task body, returning the updated state and its access set."""
    if state is None:
        state = EvalState()
    acc = AccessSet()
    for stmt in task.body:
        eval_statement(stmt, state, acc, issues, task.name)
    return state, acc


def eval_build(
    program: Program,
    issues: Optional[list[EvalIssue]] = None,
) -> list[tuple[Task, AccessSet]]:
    """Evaluate tasks in program order from an empty state."""
    state = EvalState()
    results = []
    for task in program:
        _, acc = eval_task(task, state, issues)
        results.append((task, acc))
    return results
