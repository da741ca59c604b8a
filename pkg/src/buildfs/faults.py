"""Fault detection: missing inputs, missing outputs, ordering violations.

A consumed path that the declared inputs do not cover is a missing input
(incremental rebuilds will not re-run the task when the file changes); the
dual for produced paths is a missing output.  Two distinct tasks touching the
same path with at least one produce and no happens-before order either way is
an ordering violation (a parallel scheduler may run them in either order).

Detectors are pure functions over evaluation results and a task graph;
reports come back in a stable order (program order of the primary task, then
kind, then path) so output is directly diffable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .graph import TaskGraph, build_graph
from .model import AccessSet, EvalIssue, Program, Task, eval_build

MISSING_INPUT = "missing-input"
MISSING_OUTPUT = "missing-output"
ORDERING_VIOLATION = "ordering-violation"

_KIND_RANK = {MISSING_INPUT: 0, MISSING_OUTPUT: 1, ORDERING_VIOLATION: 2}

# why each kind of report is a fault, quoted in structured output
RULE_NOTES = {
    MISSING_INPUT: "consumed path is not covered by the task's declared inputs",
    MISSING_OUTPUT: "produced path is not covered by the task's declared outputs",
    ORDERING_VIOLATION: "conflicting access with no happens-before order either way",
}


@dataclass(frozen=True, slots=True)
class Fault:
    kind: str
    task: str
    path: str
    conflicting_task: Optional[str] = None
    access: str = ""  # consumed/produced evidence; "a/b" for the two sides


class PathFilter:
    """Prefix deny list with allow carve-outs; longest matching prefix wins."""

    def __init__(self, deny: Sequence[str] = (), allow: Sequence[str] = ()):
        from .model import normalize_path

        self.rules = [(normalize_path(p), True) for p in deny if p]
        self.rules += [(normalize_path(p), False) for p in allow if p]

    def denied(self, path: str) -> bool:
        best = -1
        denied = False
        for prefix, is_deny in self.rules:
            if path == prefix or path.startswith(prefix if prefix == "/" else prefix + "/"):
                n = len(prefix)
                if n > best or (n == best and not is_deny):
                    best = n
                    denied = is_deny
        return denied


DEFAULT_DENY = ("/usr", "/lib", "/proc", "/dev", "/tmp", "/etc")


def _denied(path: str, flt: Optional[PathFilter]) -> bool:
    return flt is not None and flt.denied(path)


def detect_missing_inputs(
    task: Task,
    acc: AccessSet,
    graph: TaskGraph,
    path_filter: Optional[PathFilter] = None,
) -> list[Fault]:
    """One report per consumed path not covered by the declared inputs."""
    name = task.name
    return [
        Fault(MISSING_INPUT, name, p, access="consumed")
        for p in sorted(acc.consumed)
        if not graph.covers_input(name, p) and not _denied(p, path_filter)
    ]


def detect_missing_outputs(
    task: Task,
    acc: AccessSet,
    graph: TaskGraph,
    path_filter: Optional[PathFilter] = None,
) -> list[Fault]:
    """One report per produced path not covered by the declared outputs."""
    name = task.name
    return [
        Fault(MISSING_OUTPUT, name, p, access="produced")
        for p in sorted(acc.produced)
        if not graph.covers_output(name, p) and not _denied(p, path_filter)
    ]


def _access_kinds(acc: AccessSet, path: str) -> str:
    kinds = []
    if path in acc.consumed:
        kinds.append("consumed")
    if path in acc.produced:
        kinds.append("produced")
    return "+".join(kinds)


def detect_ordering_violations(
    results: Sequence[tuple[Task, AccessSet]],
    graph: TaskGraph,
    path_filter: Optional[PathFilter] = None,
) -> list[Fault]:
    """One report per (unordered task pair, conflicting path).

    A conflict needs at least one produce; the earlier task in program order
    is reported as primary.  Paths are inverted-indexed so the cost tracks
    the number of conflicts, not the square of the task count.
    """
    producers: dict[str, list[int]] = {}
    touchers: dict[str, list[int]] = {}
    for idx, (_, acc) in enumerate(results):
        for p in acc.produced:
            producers.setdefault(p, []).append(idx)
            touchers.setdefault(p, []).append(idx)
        for p in acc.consumed - acc.produced:
            touchers.setdefault(p, []).append(idx)
    reports: list[Fault] = []
    seen: set[tuple[int, int, str]] = set()
    for path, prods in producers.items():
        touch = touchers[path]
        if len(touch) < 2 or _denied(path, path_filter):
            continue
        for a in prods:
            for b in touch:
                if a == b:
                    continue
                lo, hi = (a, b) if a < b else (b, a)
                key = (lo, hi, path)
                if key in seen:
                    continue
                seen.add(key)
                first, second = results[lo][0].name, results[hi][0].name
                if not graph.unordered(first, second):
                    continue
                reports.append(
                    Fault(
                        ORDERING_VIOLATION,
                        first,
                        path,
                        conflicting_task=second,
                        access=(
                            f"{_access_kinds(results[lo][1], path)}"
                            f"/{_access_kinds(results[hi][1], path)}"
                        ),
                    )
                )
    return reports


def sort_reports(reports: Iterable[Fault], graph: TaskGraph) -> list[Fault]:
    order = graph.order
    return sorted(
        reports,
        key=lambda f: (
            order.get(f.task, len(order)),
            _KIND_RANK[f.kind],
            f.path,
            order.get(f.conflicting_task, -1) if f.conflicting_task else -1,
        ),
    )


def verify_results(
    results: Sequence[tuple[Task, AccessSet]],
    graph: TaskGraph,
    path_filter: Optional[PathFilter] = None,
) -> list[Fault]:
    """Run all three detectors over per-task evaluation results."""
    reports: list[Fault] = []
    for task, acc in results:
        reports.extend(detect_missing_inputs(task, acc, graph, path_filter))
        reports.extend(detect_missing_outputs(task, acc, graph, path_filter))
    reports.extend(detect_ordering_violations(results, graph, path_filter))
    return sort_reports(reports, graph)


def verify_build(
    program: Program,
    graph: Optional[TaskGraph] = None,
    path_filter: Optional[PathFilter] = None,
    issues: Optional[list[EvalIssue]] = None,
) -> list[Fault]:
    """Evaluate a program and report every fault; empty means correct."""
    if graph is None:
        graph = build_graph(program)
    return verify_results(eval_build(program, issues), graph, path_filter)
