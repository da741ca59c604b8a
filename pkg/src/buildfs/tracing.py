"""System-call trace frontend.

Consumes strace-style text (`PID  syscall(args) = retval`, `-f` child
following, `<unfinished ...>`/`resumed` continuation pairs) plus the
instrumentation marker protocol, and assembles a build-execution program:
every syscall becomes file operations attributed to the task whose span
(Begin/End markers) covers the emitting process or its nearest ancestor.

Markers are single writes to stdout with a fixed prefix:

    #BuildFS#: Begin <task>
    #BuildFS#: End <task>
    #BuildFS#: <task> input <path>
    #BuildFS#: <task> output <path>
    #BuildFS#: <task> after <task>

The assembler can retain full task bodies (for pretty-printing and goldens)
or fold statements straight into the evaluator as they arrive, which keeps
memory bounded by live state rather than trace length.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from . import cstr
from .model import (
    AccessSet,
    ANY,
    At,
    Const,
    Consume,
    DelFd,
    EMPTY,
    EvalState,
    Expr,
    FdRef,
    FileSpec,
    Fork,
    LetFd,
    NewProc,
    Operation,
    Produce,
    Program,
    Statement,
    SysOp,
    Task,
    eval_statement,
    join_path,
    normalize_path,
)

MARKER_PREFIX = "#BuildFS#: "
PREAMBLE_TASK = "<preamble>"

# documented tracer invocation (reproducible captures need these exact flags)
TRACER_FLAGS = ("-f", "-qq", "-s", "300", "-e", "trace=%file,%desc,%process")
TRACER_ENV_VAR = "BUILDFS_TRACER"
DEFAULT_TRACER = "strace"


class MarkerProtocolError(ValueError):
    pass


@dataclass(slots=True)
class TraceEvent:
    pid: str
    name: str
    argstr: str
    ret: Optional[int]
    err: Optional[str]


@dataclass(slots=True)
class Marker:
    kind: str  # "begin" | "end" | "input" | "output" | "after"
    task: str
    value: Optional[str]
    pid: str


@dataclass(slots=True)
class TraceOptions:
    mode: str = "generic"  # "make" | "gradle" | "generic"
    initial_cwd: Optional[str] = None
    include_metadata: bool = False
    include_mmap: bool = False


# ---------------------------------------------------------------------------
# Line parsing

_UNFINISHED = "<unfinished ...>"
_DETACHED = "<detached ...>"


class TraceParser:
    """Turns physical trace lines into events and markers.

    Unfinished call halves are held keyed by (pid, syscall) until their
    resumed counterpart arrives; undecodable lines are counted and skipped.
    """

    def __init__(self) -> None:
        self.pending: dict[tuple[str, str], str] = {}
        self.counts: Counter[str] = Counter()

    def parse_line(self, line: str) -> list[Union[TraceEvent, Marker]]:
        line = line.rstrip("\r\n")
        if not line:
            return []
        pid = "0"
        i = 0
        if line[0].isdigit():
            j = 1
            n = len(line)
            while j < n and line[j].isdigit():
                j += 1
            if j < n and line[j] in " \t":
                pid = line[:j]
                i = j + 1
                while i < n and line[i] in " \t":
                    i += 1
        rest = line[i:]
        if not rest:
            return []
        c = rest[0]
        if c == "+" or c == "-":  # "+++ exited ..." / "--- SIGCHLD ..."
            self.counts["signal-or-exit"] += 1
            return []
        if c == "<":
            return self._resumed(pid, rest)
        if rest.endswith(_UNFINISHED):
            head = rest[: -len(_UNFINISHED)].rstrip()
            name = head.split("(", 1)[0]
            self.pending[(pid, name)] = head
            return []
        if rest.endswith(_DETACHED):
            self.counts["detached"] += 1
            return []
        return self._event(pid, rest)

    def _resumed(self, pid: str, rest: str) -> list[Union[TraceEvent, Marker]]:
        # "<... name resumed>TAIL"
        marker = " resumed>"
        idx = rest.find(marker)
        if not rest.startswith("<... ") or idx < 0:
            self.counts["malformed"] += 1
            return []
        name = rest[5:idx].strip()
        head = self.pending.pop((pid, name), None)
        if head is None:
            self.counts["orphan-resume"] += 1
            return []
        return self._event(pid, head + rest[idx + len(marker):])

    def _event(self, pid: str, rest: str) -> list[Union[TraceEvent, Marker]]:
        paren = rest.find("(")
        if paren <= 0:
            self.counts["malformed"] += 1
            return []
        name = rest[:paren]
        body = rest[paren + 1:]
        ridx = body.rfind(") = ")
        if ridx < 0:
            self.counts["malformed"] += 1
            return []
        argstr = body[:ridx]
        retstr = body[ridx + 4:].lstrip()
        ret: Optional[int] = None
        err: Optional[str] = None
        if retstr:
            tok = retstr.split(None, 1)
            try:
                ret = int(tok[0], 0)
            except ValueError:
                err = tok[0]  # "?" and friends
            if ret is not None and ret < 0 and len(tok) > 1:
                word = tok[1].split(None, 1)[0]
                if word[:1] == "E":
                    err = word
        if (
            err is None
            and (name == "write" or name == "pwrite64" or name == "pwrite")
            and argstr.startswith('1, "' + MARKER_PREFIX)
        ):
            return self._markers(pid, argstr)
        return [TraceEvent(pid, name, argstr, ret, err)]

    def _markers(self, pid: str, argstr: str) -> list[Union[TraceEvent, Marker]]:
        start = argstr.find('"')
        try:
            payload, end = cstr.scan_quoted(argstr, start)
        except ValueError:
            self.counts["malformed-marker"] += 1
            return []
        if argstr[end:end + 3] == "...":
            self.counts["truncated-marker"] += 1
        out: list[Union[TraceEvent, Marker]] = []
        for text in payload.split("\n"):
            if not text:
                continue
            marker = parse_marker(text, pid)
            if marker is None:
                self.counts["malformed-marker"] += 1
            else:
                out.append(marker)
        return out

    def finish(self) -> None:
        if self.pending:
            self.counts["pending-dropped"] += len(self.pending)
            self.pending.clear()


def parse_marker(text: str, pid: str) -> Optional[Marker]:
    """Decode one marker line (without trailing newline); None if malformed."""
    if not text.startswith(MARKER_PREFIX):
        return None
    rest = text[len(MARKER_PREFIX):]
    if rest.startswith("Begin "):
        return Marker("begin", rest[6:], None, pid)
    if rest.startswith("End "):
        return Marker("end", rest[4:], None, pid)
    best = -1
    kind = ""
    for word in (" input ", " output ", " after "):
        idx = rest.find(word)
        if idx >= 0 and (best < 0 or idx < best):
            best = idx
            kind = word.strip()
    if best <= 0:
        return None
    value = rest[best + len(kind) + 2:]
    if not value:
        return None
    return Marker(kind, rest[:best], value, pid)


class LineFeeder:
    """Incremental splitter for byte chunks; one-pass equals chunked parsing."""

    def __init__(self) -> None:
        self._tail = b""

    def feed(self, data: bytes) -> list[str]:
        data = self._tail + data
        lines = data.split(b"\n")
        self._tail = lines.pop()
        return [ln.decode("latin-1") for ln in lines]

    def flush(self) -> list[str]:
        tail, self._tail = self._tail, b""
        return [tail.decode("latin-1")] if tail else []


# ---------------------------------------------------------------------------
# Syscall translation

_CREATION_FLAGS = ("O_CREAT", "O_TRUNC")


def split_args(argstr: str) -> list[str]:
    """Split decoded-argument text on top-level commas."""
    parts: list[str] = []
    depth = 0
    start = 0
    i = 0
    n = len(argstr)
    while i < n:
        c = argstr[i]
        if c == '"':
            i += 1
            while i < n:
                if argstr[i] == "\\":
                    i += 2
                    continue
                if argstr[i] == '"':
                    break
                i += 1
        elif c in "([{":
            depth += 1
        elif c in ")]}":
            depth -= 1
        elif c == "," and depth == 0:
            parts.append(argstr[start:i].strip())
            start = i + 1
        i += 1
    tail = argstr[start:].strip()
    if tail or parts:
        parts.append(tail)
    return parts


def _string(token: str) -> Optional[str]:
    if not token.startswith('"'):
        return None
    try:
        return cstr.scan_quoted(token, 0)[0]
    except ValueError:
        return None


def _int(token: str) -> Optional[int]:
    try:
        return int(token, 0)
    except ValueError:
        return None


def _path_expr(path: str, dirfd: Optional[str] = None) -> Expr:
    """Absolute paths stand alone; relative ones anchor to a directory fd."""
    if path.startswith("/"):
        return Const(path)
    if dirfd is None or dirfd == "AT_FDCWD":
        return At(path, FdRef(0))
    fd = _int(dirfd)
    return At(path, FdRef(fd if fd is not None else 0))


def _first_int(argstr: str) -> Optional[int]:
    return _int(argstr.split(",", 1)[0].strip())


def _h_open(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    args = split_args(ev.argstr)
    at = ev.name.startswith("openat")
    path = _string(args[1] if at else args[0]) if len(args) > (1 if at else 0) else None
    if path is None or ev.ret is None:
        return []
    expr = _path_expr(path, args[0] if at else None)
    flags = args[2] if at and len(args) > 2 else (args[1] if not at and len(args) > 1 else "")
    ops: list[Operation] = [LetFd(ev.ret, expr)]
    if any(f in flags for f in _CREATION_FLAGS):
        ops.append(Produce(expr))
    return [SysOp(ev.pid, tuple(ops))]


def _h_creat(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    args = split_args(ev.argstr)
    path = _string(args[0]) if args else None
    if path is None or ev.ret is None:
        return []
    expr = _path_expr(path)
    return [SysOp(ev.pid, (LetFd(ev.ret, expr), Produce(expr)))]


def _h_read(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    fd = _first_int(ev.argstr)
    if fd is None:
        return []
    return [SysOp(ev.pid, (Consume(FdRef(fd)),))]


def _h_write(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    fd = _first_int(ev.argstr)
    if fd is None:
        return []
    return [SysOp(ev.pid, (Produce(FdRef(fd)),))]


def _h_close(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    fd = _first_int(ev.argstr)
    if fd is None:
        return []
    return [SysOp(ev.pid, (DelFd(fd),))]


def _h_dup(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    old = _first_int(ev.argstr)
    if old is None or ev.ret is None:
        return []
    return [SysOp(ev.pid, (LetFd(ev.ret, FdRef(old)),))]


def _h_fcntl(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    args = split_args(ev.argstr)
    if len(args) < 2 or "F_DUPFD" not in args[1] or ev.ret is None:
        return []
    fd = _int(args[0])
    if fd is None:
        return []
    return [SysOp(ev.pid, (LetFd(ev.ret, FdRef(fd)),))]


def _h_chdir(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    path = _string(ev.argstr.strip())
    if path is None:
        return []
    return [SysOp(ev.pid, (LetFd(0, _path_expr(path)),))]


def _h_fchdir(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    fd = _first_int(ev.argstr)
    if fd is None:
        return []
    return [SysOp(ev.pid, (LetFd(0, FdRef(fd)),))]


def _produce_path(ev: TraceEvent, at: bool) -> list[Statement]:
    args = split_args(ev.argstr)
    path = _string(args[1] if at else args[0]) if len(args) > (1 if at else 0) else None
    if path is None:
        return []
    return [SysOp(ev.pid, (Produce(_path_expr(path, args[0] if at else None)),))]


def _h_mkdir(ev, opts): return _produce_path(ev, at=False)
def _h_mkdirat(ev, opts): return _produce_path(ev, at=True)
def _h_unlink(ev, opts): return _produce_path(ev, at=False)
def _h_unlinkat(ev, opts): return _produce_path(ev, at=True)


def _h_link(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    args = split_args(ev.argstr)
    if len(args) < 2:
        return []
    src, dst = _string(args[0]), _string(args[1])
    if src is None or dst is None:
        return []
    return [SysOp(ev.pid, (Consume(_path_expr(src)), Produce(_path_expr(dst))))]


def _h_linkat(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    args = split_args(ev.argstr)
    if len(args) < 4:
        return []
    src, dst = _string(args[1]), _string(args[3])
    if src is None or dst is None:
        return []
    return [
        SysOp(
            ev.pid,
            (Consume(_path_expr(src, args[0])), Produce(_path_expr(dst, args[2]))),
        )
    ]


def _h_symlinkat(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    args = split_args(ev.argstr)
    if len(args) < 3:
        return []
    src, dst = _string(args[0]), _string(args[2])
    if src is None or dst is None:
        return []
    return [SysOp(ev.pid, (Consume(_path_expr(src)), Produce(_path_expr(dst, args[1]))))]


def _h_renameat(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    args = split_args(ev.argstr)
    if len(args) < 4:
        return []
    src, dst = _string(args[1]), _string(args[3])
    if src is None or dst is None:
        return []
    return [
        SysOp(
            ev.pid,
            (Consume(_path_expr(src, args[0])), Produce(_path_expr(dst, args[2]))),
        )
    ]


def _h_execve(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    args = split_args(ev.argstr)
    path = _string(args[0]) if args else None
    if path is None:
        return []
    return [SysOp(ev.pid, (Consume(_path_expr(path)),))]


def _h_execveat(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    args = split_args(ev.argstr)
    path = _string(args[1]) if len(args) > 1 else None
    if path is None:
        return []
    return [SysOp(ev.pid, (Consume(_path_expr(path, args[0])),))]


def _h_truncate(ev, opts): return _produce_path(ev, at=False)


def _h_ftruncate(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    fd = _first_int(ev.argstr)
    if fd is None:
        return []
    return [SysOp(ev.pid, (Produce(FdRef(fd)),))]


def _h_sendfile(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    args = split_args(ev.argstr)
    if len(args) < 2:
        return []
    out_fd, in_fd = _int(args[0]), _int(args[1])
    if out_fd is None or in_fd is None:
        return []
    return [SysOp(ev.pid, (Consume(FdRef(in_fd)), Produce(FdRef(out_fd))))]


def _h_copy_file_range(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    args = split_args(ev.argstr)
    if len(args) < 3:
        return []
    in_fd, out_fd = _int(args[0]), _int(args[2])
    if in_fd is None or out_fd is None:
        return []
    return [SysOp(ev.pid, (Consume(FdRef(in_fd)), Produce(FdRef(out_fd))))]


def _h_fork(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    if ev.ret is None or ev.ret <= 0:
        return []
    return [Fork(str(ev.ret), ev.pid)]


def _meta_path(at: bool):
    def handler(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
        if not opts.include_metadata:
            return []
        args = split_args(ev.argstr)
        path = _string(args[1] if at else args[0]) if len(args) > (1 if at else 0) else None
        if path is None:
            return []
        return [SysOp(ev.pid, (Consume(_path_expr(path, args[0] if at else None)),))]

    return handler


def _h_fstat(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    if not opts.include_metadata:
        return []
    fd = _first_int(ev.argstr)
    if fd is None:
        return []
    return [SysOp(ev.pid, (Consume(FdRef(fd)),))]


def _h_mmap(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    if not opts.include_mmap:
        return []
    args = split_args(ev.argstr)
    if len(args) < 5:
        return []
    fd = _int(args[4])
    if fd is None or fd < 0:
        return []
    return [SysOp(ev.pid, (Consume(FdRef(fd)),))]


def _ignore(ev: TraceEvent, opts: TraceOptions) -> list[Statement]:
    return []


_META_DIRECT = _meta_path(at=False)
_META_AT = _meta_path(at=True)

SYSCALLS: dict[str, object] = {
    "open": _h_open, "open64": _h_open, "openat": _h_open, "openat64": _h_open,
    "openat2": _h_open,
    "creat": _h_creat, "creat64": _h_creat,
    "read": _h_read, "pread": _h_read, "pread64": _h_read,
    "readv": _h_read, "preadv": _h_read, "preadv2": _h_read,
    "write": _h_write, "pwrite": _h_write, "pwrite64": _h_write,
    "writev": _h_write, "pwritev": _h_write, "pwritev2": _h_write,
    "close": _h_close,
    "dup": _h_dup, "dup2": _h_dup, "dup3": _h_dup,
    "fcntl": _h_fcntl, "fcntl64": _h_fcntl,
    "chdir": _h_chdir, "fchdir": _h_fchdir,
    "mkdir": _h_mkdir, "mkdirat": _h_mkdirat,
    "rmdir": _h_unlink, "unlink": _h_unlink, "unlinkat": _h_unlinkat,
    "link": _h_link, "linkat": _h_linkat,
    "symlink": _h_link, "symlinkat": _h_symlinkat,
    "rename": _h_link, "renameat": _h_renameat, "renameat2": _h_renameat,
    "execve": _h_execve, "execveat": _h_execveat,
    "truncate": _h_truncate, "ftruncate": _h_ftruncate, "fallocate": _h_ftruncate,
    "sendfile": _h_sendfile, "sendfile64": _h_sendfile,
    "copy_file_range": _h_copy_file_range,
    "clone": _h_fork, "clone3": _h_fork, "fork": _h_fork, "vfork": _h_fork,
    "stat": _META_DIRECT, "stat64": _META_DIRECT, "lstat": _META_DIRECT,
    "lstat64": _META_DIRECT, "access": _META_DIRECT, "readlink": _META_DIRECT,
    "statfs": _META_DIRECT, "getxattr": _META_DIRECT, "lgetxattr": _META_DIRECT,
    "listxattr": _META_DIRECT, "llistxattr": _META_DIRECT,
    "newfstatat": _META_AT, "fstatat64": _META_AT, "statx": _META_AT,
    "faccessat": _META_AT, "faccessat2": _META_AT, "readlinkat": _META_AT,
    "fstat": _h_fstat, "fstat64": _h_fstat, "fgetxattr": _h_fstat,
    "mmap": _h_mmap, "mmap2": _h_mmap,
}

_IGNORED = (
    "lseek _llseek llseek getcwd getdents getdents64 chmod fchmod fchmodat "
    "chown fchown lchown fchownat utime utimes utimensat futimesat umask "
    "flock fsync fdatasync syncfs sync ioctl pipe pipe2 socket socketpair "
    "connect accept accept4 bind listen poll ppoll select pselect6 "
    "epoll_create epoll_create1 epoll_ctl epoll_wait epoll_pwait eventfd "
    "eventfd2 signalfd signalfd4 timerfd_create inotify_init inotify_init1 "
    "inotify_add_watch memfd_create close_range wait4 waitpid waitid exit "
    "exit_group kill tgkill brk mprotect munmap mremap madvise mlock "
    "munlock msync shutdown recvmsg sendmsg recvfrom sendto getpeername "
    "getsockname setsockopt getsockopt uname chroot mount umount2 swapon "
    "mknod mknodat statvfs fstatfs dup_unused"
).split()
for _name in _IGNORED:
    SYSCALLS[_name] = _ignore


def translate_event(ev: TraceEvent, opts: TraceOptions) -> Optional[list[Statement]]:
    """Map one decoded syscall to statements.

    Returns None for a syscall outside the supported set (counted by the
    assembler), and the empty list for failed calls: a syscall that returned
    an error touched nothing.
    """
    handler = SYSCALLS.get(ev.name)
    if handler is None:
        return None
    if ev.err is not None:
        return []
    return handler(ev, opts)  # type: ignore[operator]


# ---------------------------------------------------------------------------
# Assembly

_NO_BEGIN = 1 << 60  # sort key for tasks that never saw a Begin marker


class _Build:
    __slots__ = (
        "name", "seen_seq", "begin_seq", "inputs", "outputs", "deps",
        "body", "tail_ops", "tail_proc", "acc", "open_pid", "ended",
    )

    def __init__(self, name: str, seen_seq: int):
        self.name = name
        self.seen_seq = seen_seq
        self.begin_seq: Optional[int] = None
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.deps: list[str] = []
        self.body: list[Statement] = []
        self.tail_ops: Optional[list[Operation]] = None  # open SysOp run
        self.tail_proc = ""
        self.acc = AccessSet()
        self.open_pid: Optional[str] = None
        self.ended = False


@dataclass
class AssemblyResult:
    program: Optional[Program]
    results: list[tuple[Task, AccessSet]]
    warnings: list[str]
    counts: Counter
    unknown: Counter
    issues: list


class Assembler:
    """Attributes events to tasks and builds the program and/or access sets.

    With keep_bodies=True statements are retained per task; with
    evaluate=True they are folded into the evaluator immediately and only
    specifications plus access sets stay in memory.
    """

    def __init__(
        self,
        opts: Optional[TraceOptions] = None,
        keep_bodies: bool = True,
        evaluate: bool = False,
        issues: Optional[list] = None,
    ):
        self.opts = opts or TraceOptions()
        self.keep_bodies = keep_bodies
        self.evaluate = evaluate
        self.issues = issues if issues is not None else []
        self.state = EvalState()
        self.builds: dict[str, _Build] = {}
        self.open_by_pid: dict[str, str] = {}
        self.lineage: dict[str, str] = {}
        self.seen_pids: set[str] = set()
        self.warnings: list[str] = []
        self.unknown: Counter[str] = Counter()
        self._seq = 0
        self._begins = 0

    # -- task bookkeeping --

    def _build(self, name: str) -> _Build:
        tb = self.builds.get(name)
        if tb is None:
            tb = _Build(name, self._seq)
            self._seq += 1
            self.builds[name] = tb
        return tb

    def _preamble(self) -> _Build:
        tb = self.builds.get(PREAMBLE_TASK)
        if tb is None:
            tb = self._build(PREAMBLE_TASK)
            tb.begin_seq = -1
        return tb

    def _target(self, pid: str) -> _Build:
        p: Optional[str] = pid
        hops = 0
        while p is not None and hops < 10_000:
            name = self.open_by_pid.get(p)
            if name is not None:
                return self.builds[name]
            p = self.lineage.get(p)
            hops += 1
        return self._preamble()

    # -- statement emission --

    def _emit(self, tb: _Build, stmt: Statement) -> None:
        if self.keep_bodies:
            if type(stmt) is SysOp:
                if tb.tail_ops is not None and tb.tail_proc == stmt.proc:
                    tb.tail_ops.extend(stmt.ops)
                else:
                    self._flush_tail(tb)
                    tb.tail_ops = list(stmt.ops)
                    tb.tail_proc = stmt.proc
            else:
                self._flush_tail(tb)
                tb.body.append(stmt)
        if self.evaluate:
            eval_statement(stmt, self.state, tb.acc, self.issues, tb.name)

    def _flush_tail(self, tb: _Build) -> None:
        if tb.tail_ops is not None:
            tb.body.append(SysOp(tb.tail_proc, tuple(tb.tail_ops)))
            tb.tail_ops = None

    # -- feeding --

    def feed(self, item: Union[TraceEvent, Marker]) -> None:
        if type(item) is Marker:
            self.feed_marker(item)
        else:
            self.feed_event(item)

    def feed_event(self, ev: TraceEvent) -> None:
        stmts = translate_event(ev, self.opts)
        if stmts is None:
            self.unknown[ev.name] += 1
            return
        if not stmts:
            return
        tb = self._target(ev.pid)
        if ev.pid not in self.seen_pids:
            self.seen_pids.add(ev.pid)
            self._emit(tb, NewProc(ev.pid))
            if self.opts.initial_cwd:
                self._emit(
                    tb, SysOp(ev.pid, (LetFd(0, Const(self.opts.initial_cwd)),))
                )
        for stmt in stmts:
            if type(stmt) is Fork:
                self.lineage[stmt.child] = stmt.parent
                self.seen_pids.add(stmt.child)
            self._emit(tb, stmt)

    def feed_marker(self, m: Marker) -> None:
        if m.kind == "begin":
            open_task = self.open_by_pid.get(m.pid)
            if open_task is not None:
                raise MarkerProtocolError(
                    f"Begin {m.task!r} on pid {m.pid} while {open_task!r} is open"
                )
            tb = self._build(m.task)
            if tb.open_pid is not None:
                raise MarkerProtocolError(
                    f"Begin {m.task!r}: task already open on pid {tb.open_pid}"
                )
            if tb.begin_seq is None:
                tb.begin_seq = self._begins
                self._begins += 1
            elif tb.ended:
                self.warnings.append(f"task {m.task!r} re-opened; spans merged")
            tb.ended = False
            tb.open_pid = m.pid
            self.open_by_pid[m.pid] = m.task
        elif m.kind == "end":
            tb = self.builds.get(m.task)
            if tb is None or tb.open_pid is None:
                raise MarkerProtocolError(f"End {m.task!r} without a matching Begin")
            self.open_by_pid.pop(tb.open_pid, None)
            tb.open_pid = None
            tb.ended = True
        elif m.kind == "input":
            self._build(m.task).inputs.append(self._marker_path(m.task, m.value or ""))
        elif m.kind == "output":
            self._build(m.task).outputs.append(self._marker_path(m.task, m.value or ""))
        elif m.kind == "after":
            tb = self._build(m.task)
            if m.value and m.value not in tb.deps:
                tb.deps.append(m.value)

    def _marker_path(self, task: str, raw: str) -> str:
        if raw.startswith("/"):
            return normalize_path(raw)
        if self.opts.mode == "make":
            directory = task.rpartition(":")[0]
            if directory.startswith("/"):
                return join_path(directory, raw)
        if self.opts.initial_cwd:
            return join_path(self.opts.initial_cwd, raw)
        self.warnings.append(f"task {task!r}: relative marker path {raw!r} kept as-is")
        return normalize_path(raw)

    # -- finalization --

    def finish(self) -> AssemblyResult:
        for name, tb in self.builds.items():
            if tb.open_pid is not None:
                self.warnings.append(f"task {name!r} not closed; End assumed at EOF")
                self.open_by_pid.pop(tb.open_pid, None)
                tb.open_pid = None
            if tb.begin_seq is None:
                self.warnings.append(f"task {name!r} declared by markers but never began")
            self._flush_tail(tb)
        ordered = sorted(
            self.builds.values(),
            key=lambda tb: (
                tb.begin_seq if tb.begin_seq is not None else _NO_BEGIN,
                tb.seen_seq,
            ),
        )
        tasks: list[Task] = []
        results: list[tuple[Task, AccessSet]] = []
        for tb in ordered:
            if tb.name == PREAMBLE_TASK:
                inputs: FileSpec = EMPTY
                outputs: FileSpec = ANY
            else:
                inputs = FileSpec.of(tb.inputs)
                outputs = ANY if self.opts.mode == "make" else FileSpec.of(tb.outputs)
            task = Task(
                tb.name,
                inputs,
                outputs,
                tuple(tb.deps),
                tuple(tb.body) if self.keep_bodies else (),
            )
            tasks.append(task)
            results.append((task, tb.acc))
        program = Program(tuple(tasks)) if self.keep_bodies else None
        return AssemblyResult(
            program=program,
            results=results,
            warnings=self.warnings,
            counts=Counter(),
            unknown=self.unknown,
            issues=self.issues,
        )


def assemble_program(
    lines: Iterable[str], opts: Optional[TraceOptions] = None
) -> Program:
    """Parse trace lines and assemble the full program (bodies retained)."""
    parser = TraceParser()
    asm = Assembler(opts, keep_bodies=True)
    for line in lines:
        for item in parser.parse_line(line):
            asm.feed(item)
    parser.finish()
    result = asm.finish()
    assert result.program is not None
    return result.program
