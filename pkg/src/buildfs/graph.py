"""Task graph: declared inputs/outputs/dependencies and the relations on them.

The graph is bipartite over tasks and files with three edge labels: `in`
(file -> task), `out` (task -> file) and `before` (task -> task).  It is
built from task headers only; bodies never contribute edges.  An any-file
output is kept as a per-task flag rather than edges, so indirect-production
chains never pass through a task that may produce anything.

Two relations drive fault detection:

* subsumption: an accessed path is covered by a declared path when it is the
  same path, the declared path is an ancestor directory, or some task turns a
  covering path into the declared one (input of a task whose output is the
  declared path), closed transitively.
* happens-before: reachability over `before` edges; tasks unrelated both ways
  may be scheduled in either order.

Graphs are immutable after construction/refinement; queries are read-only
and cache their closures, so they are safe to share across threads.
"""

from __future__ import annotations

from typing import Union

from .model import FileSpec, Program, normalize_path, parent_dir


class UnknownTask(KeyError):
    pass


class BeforeCycleError(ValueError):
    def __init__(self, cycle: list[str]):
        super().__init__("dependency cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class TaskGraph:
    """Immutable view of declared task specifications."""

    __slots__ = (
        "order", "input_paths", "output_paths", "inputs_any", "outputs_any",
        "in_tasks_by_path", "before_out", "warnings", "_reach", "_hb",
    )

    def __init__(self) -> None:
        self.order: dict[str, int] = {}
        self.input_paths: dict[str, set[str]] = {}
        self.output_paths: dict[str, set[str]] = {}
        self.inputs_any: set[str] = set()
        self.outputs_any: set[str] = set()
        self.in_tasks_by_path: dict[str, set[str]] = {}
        self.before_out: dict[str, set[str]] = {}
        self.warnings: list[str] = []
        self._reach: dict[str, frozenset[str]] = {}
        self._hb: dict[str, frozenset[str]] = {}

    def _add_input(self, name: str, path: str) -> None:
        self.input_paths[name].add(path)
        self.in_tasks_by_path.setdefault(path, set()).add(name)

    # -- queries ------------------------------------------------------------

    def tasks(self) -> list[str]:
        return sorted(self.order, key=self.order.__getitem__)

    def _reachable(self, path: str) -> frozenset[str]:
        """All paths that subsume *path* (ancestors and production chains)."""
        cached = self._reach.get(path)
        if cached is not None:
            return cached
        seen = {path}
        stack = [path]
        while stack:
            x = stack.pop()
            if x != "/":
                par = parent_dir(x)
                if par not in seen:
                    seen.add(par)
                    stack.append(par)
            for t in self.in_tasks_by_path.get(x, ()):
                for out in self.output_paths.get(t, ()):
                    if out not in seen:
                        seen.add(out)
                        stack.append(out)
        result = frozenset(seen)
        self._reach[path] = result
        return result

    def subsumes(self, path: str, spec: Union[FileSpec, str]) -> bool:
        """Is *path* covered by a declared path or file spec?"""
        if isinstance(spec, str):
            targets: frozenset[str] = frozenset((normalize_path(spec),))
        elif spec.is_any:
            return True
        elif spec.is_empty:
            return False
        else:
            targets = frozenset(normalize_path(p) for p in spec.paths)
        return not targets.isdisjoint(self._reachable(normalize_path(path)))

    def covers_input(self, name: str, path: str) -> bool:
        """Is a consumed *path* covered by the declared inputs of task *name*?

        Consults the graph's input edges, so refinement (e.g. from a make
        database) widens coverage beyond the task header.
        """
        if name in self.inputs_any:
            return True
        declared = self.input_paths[name]
        if not declared:
            return False
        return not declared.isdisjoint(self._reachable(path))

    def covers_output(self, name: str, path: str) -> bool:
        if name in self.outputs_any:
            return True
        declared = self.output_paths[name]
        if not declared:
            return False
        return not declared.isdisjoint(self._reachable(path))

    def _hb_reachable(self, name: str) -> frozenset[str]:
        cached = self._hb.get(name)
        if cached is not None:
            return cached
        seen: set[str] = set()
        stack = list(self.before_out.get(name, ()))
        while stack:
            t = stack.pop()
            if t in seen:
                continue
            seen.add(t)
            stack.extend(self.before_out.get(t, ()))
        result = frozenset(seen)
        self._hb[name] = result
        return result

    def happens_before(self, first: str, second: str) -> bool:
        """True when *first* is ordered strictly before *second*."""
        if first not in self.order:
            raise UnknownTask(first)
        if second not in self.order:
            raise UnknownTask(second)
        if first == second:
            return False
        return second in self._hb_reachable(first)

    def unordered(self, a: str, b: str) -> bool:
        return not self.happens_before(a, b) and not self.happens_before(b, a)


def _check_acyclic(g: TaskGraph) -> None:
    state: dict[str, int] = {}  # 1 = on current path, 2 = done
    for root in g.order:
        if state.get(root):
            continue
        path: list[str] = []
        stack: list[tuple[str, list[str]]] = [(root, sorted(g.before_out[root]))]
        state[root] = 1
        path.append(root)
        while stack:
            node, succs = stack[-1]
            while succs:
                nxt = succs.pop()
                mark = state.get(nxt)
                if mark == 1:
                    raise BeforeCycleError(path[path.index(nxt):] + [nxt])
                if mark is None:
                    state[nxt] = 1
                    path.append(nxt)
                    stack.append((nxt, sorted(g.before_out[nxt])))
                    break
            else:
                state[node] = 2
                path.pop()
                stack.pop()


def build_graph(program: Program) -> TaskGraph:
    """Build the task graph from task headers.

    Unknown dependency names are recorded as warnings and contribute no edge;
    a cycle among `before` edges raises BeforeCycleError.
    """
    g = TaskGraph()
    deps: list[tuple[str, str]] = []
    for task in program:
        name = task.name
        g.order[name] = len(g.order)
        g.input_paths[name] = set()
        g.output_paths[name] = set()
        g.before_out[name] = set()
        if task.inputs.is_any:
            g.inputs_any.add(name)
        else:
            for p in task.inputs.paths:
                g._add_input(name, normalize_path(p))
        if task.outputs.is_any:
            g.outputs_any.add(name)
        else:
            for p in task.outputs.paths:
                g.output_paths[name].add(normalize_path(p))
        for dep in task.deps:
            if dep == name:
                g.warnings.append(f"task {name!r} depends on itself; ignored")
            else:
                deps.append((dep, name))
    for dep, name in deps:
        if dep not in g.order:
            g.warnings.append(f"task {name!r} depends on unknown task {dep!r}")
            continue
        g.before_out[dep].add(name)
    _check_acyclic(g)
    return g


def refine_from_make_db(g: TaskGraph, db_text: str) -> TaskGraph:
    """Add input edges discovered in a `make -pn` database dump.

    A task named `<dir>:<target>` (or plain `<target>`) gains an input edge
    for every prerequisite of the matching file rule; relative prerequisites
    resolve against `<dir>`.  Existing edges are never removed.
    """
    rules = parse_make_db(db_text)
    if not rules:
        return g
    refined = TaskGraph()
    refined.order = dict(g.order)
    refined.input_paths = {k: set(v) for k, v in g.input_paths.items()}
    refined.output_paths = {k: set(v) for k, v in g.output_paths.items()}
    refined.inputs_any = set(g.inputs_any)
    refined.outputs_any = set(g.outputs_any)
    refined.in_tasks_by_path = {k: set(v) for k, v in g.in_tasks_by_path.items()}
    refined.before_out = {k: set(v) for k, v in g.before_out.items()}
    refined.warnings = list(g.warnings)
    for name in refined.order:
        directory, _, target = name.rpartition(":")
        prereqs = rules.get(target)
        if prereqs is None:
            continue
        for pre in prereqs:
            if pre.startswith("/"):
                path = normalize_path(pre)
            elif directory.startswith("/"):
                path = normalize_path(directory + "/" + pre)
            else:
                continue  # cannot anchor a relative prerequisite
            refined._add_input(name, path)
    return refined


_SPECIAL_TARGETS = {
    ".PHONY", ".SUFFIXES", ".DEFAULT", ".PRECIOUS", ".INTERMEDIATE",
    ".SECONDARY", ".SECONDEXPANSION", ".DELETE_ON_ERROR", ".IGNORE",
    ".LOW_RESOLUTION_TIME", ".SILENT", ".EXPORT_ALL_VARIABLES",
    ".NOTPARALLEL", ".ONESHELL", ".POSIX", ".MAKE", ".EXTRA_PREREQS",
}


def parse_make_db(text: str) -> dict[str, list[str]]:
    """Extract `target: prerequisites` file rules from a database dump.

    Comment, recipe, variable-assignment, pattern-rule and special-target
    lines are skipped, as are entries flagged "Not a target".
    """
    rules: dict[str, list[str]] = {}
    not_a_target = False
    for raw in text.splitlines():
        if raw.startswith("#"):
            if "Not a target" in raw:
                not_a_target = True
            continue
        if not raw or raw[0] in "\t ":
            continue
        skip, not_a_target = not_a_target, False
        idx = raw.find(":")
        if idx <= 0:
            continue
        target = raw[:idx]
        if (" " in target or "\t" in target or "=" in target or "%" in target
                or target in _SPECIAL_TARGETS):
            continue
        rest = raw[idx + 1:]
        if rest.startswith(":"):  # double-colon rule
            rest = rest[1:]
        if "=" in rest:  # target-specific variable, not a prerequisite list
            continue
        if skip:
            continue
        prereqs = [p for p in rest.replace("|", " ").split() if p]
        if not prereqs:
            continue
        bucket = rules.setdefault(target, [])
        for p in prereqs:
            if p not in bucket:
                bucket.append(p)
    return rules


def to_dot(g: TaskGraph) -> str:
    """Render the graph in DOT for visualization."""
    out = ["digraph tasks {"]
    files = sorted(
        set(g.in_tasks_by_path) | {p for ps in g.output_paths.values() for p in ps}
    )
    for name in g.tasks():
        label = name.replace('"', '\\"')
        out.append(f'  "task:{label}" [label="{label}" shape=box];')
    for path in files:
        label = path.replace('"', '\\"')
        out.append(f'  "file:{label}" [label="{label}" shape=ellipse];')
    for path, tasks in sorted(g.in_tasks_by_path.items()):
        for t in sorted(tasks):
            out.append(f'  "file:{path}" -> "task:{t}" [label=in];')
    for t, outs in sorted(g.output_paths.items()):
        for path in sorted(outs):
            out.append(f'  "task:{t}" -> "file:{path}" [label=out];')
    for t, succs in sorted(g.before_out.items()):
        for s in sorted(succs):
            out.append(f'  "task:{t}" -> "task:{s}" [label=before];')
    out.append("}")
    return "\n".join(out) + "\n"
