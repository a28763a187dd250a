"""Fair-order extraction from per-party delivery logs.

Within a cut, every undelivered transaction becomes a vertex. Pairwise
before-counts form the precedence matrix; an edge ``a -> b`` is added when

    max(M[a][b], n - f - M[b][a]) > M[b][a] - f + kappa

Cycles (Condorcet cycles) are collapsed by taking the condensation over
strongly connected components, and source vertices are delivered as sets
while all their members are stable, i.e. appear in at least
``(n + f - kappa) / 2`` cut prefixes.

All functions are pure: they never mutate their inputs, and equal inputs give
equal outputs on every party.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from qof.core import Config, digest, encode


class GraphError(ValueError):
    pass


class CutError(ValueError):
    """A cut entry exceeds the corresponding log length."""


@dataclass
class Vertex:
    key: str
    members: frozenset
    out: set = field(default_factory=set)


class DependencyGraph:
    """Directed graph stored as ``key -> Vertex`` with outbound adjacency."""

    def __init__(self):
        self.vertices: dict[str, Vertex] = {}

    def add_vertex(self, key: str, members: Iterable[str] | None = None) -> Vertex:
        if key in self.vertices:
            raise GraphError(f"duplicate vertex {key}")
        v = Vertex(key, frozenset(members if members is not None else (key,)))
        self.vertices[key] = v
        return v

    def remove_vertex(self, key: str) -> None:
        del self.vertices[key]
        for v in self.vertices.values():
            v.out.discard(key)

    def add_edge(self, src: str, dst: str) -> None:
        if src not in self.vertices or dst not in self.vertices:
            raise GraphError(f"edge {src}->{dst} references unknown vertex")
        self.vertices[src].out.add(dst)

    def has_edge(self, src: str, dst: str) -> bool:
        return dst in self.vertices[src].out

    def edges(self) -> list[tuple[str, str]]:
        return sorted((k, d) for k, v in self.vertices.items() for d in v.out)

    def keys(self) -> list[str]:
        return sorted(self.vertices)

    def transpose(self) -> "DependencyGraph":
        t = DependencyGraph()
        for k, v in self.vertices.items():
            t.add_vertex(k, v.members)
        for k, v in self.vertices.items():
            for d in v.out:
                t.vertices[d].out.add(k)
        return t

    def indegree(self, key: str) -> int:
        return sum(1 for v in self.vertices.values() if key in v.out)

    def indegrees(self) -> dict[str, int]:
        deg = dict.fromkeys(self.vertices, 0)
        for v in self.vertices.values():
            for d in v.out:
                deg[d] += 1
        return deg

    def members(self) -> set:
        out: set = set()
        for v in self.vertices.values():
            out |= v.members
        return out

    def copy(self) -> "DependencyGraph":
        g = DependencyGraph()
        for k, v in self.vertices.items():
            g.vertices[k] = Vertex(k, v.members, set(v.out))
        return g

    def __len__(self):
        return len(self.vertices)

    def __contains__(self, key):
        return key in self.vertices

    def __repr__(self):
        return f"DependencyGraph({len(self.vertices)} vertices, {len(self.edges())} edges)"


# --------------------------------------------------------------------------
# vertices, precedence, occurrence


def _prefixes(msgs: Sequence[Sequence[str]], cut: Sequence[int]):
    if len(cut) != len(msgs):
        raise CutError(f"cut has {len(cut)} entries for {len(msgs)} logs")
    for j, (log, c) in enumerate(zip(msgs, cut)):
        if c < 0 or c > len(log):
            raise CutError(f"cut[{j}]={c} exceeds log length {len(log)}")
        yield log[:c]


def build_vertices(
    msgs: Sequence[Sequence[str]], cut: Sequence[int], delivered: Iterable[str] = ()
) -> frozenset:
    """Unique transactions inside the cut that are not yet delivered."""
    seen: set = set()
    for prefix in _prefixes(msgs, cut):
        seen.update(prefix)
    return frozenset(seen.difference(delivered))


def occurrence(msgs: Sequence[Sequence[str]], cut: Sequence[int]) -> dict[str, int]:
    """Number of parties whose cut prefix contains each transaction."""
    counts: dict[str, int] = {}
    for prefix in _prefixes(msgs, cut):
        for tx in set(prefix):
            counts[tx] = counts.get(tx, 0) + 1
    return counts


@dataclass(frozen=True)
class PrecedenceMatrix:
    ids: tuple[str, ...]
    counts: np.ndarray
    cut: tuple[int, ...]

    def index(self, tx: str) -> int:
        return self._index[tx]

    def __post_init__(self):
        object.__setattr__(self, "_index", {tx: i for i, tx in enumerate(self.ids)})

    def __getitem__(self, pair: tuple[str, str]) -> int:
        a, b = pair
        return int(self.counts[self._index[a], self._index[b]])

    def as_dict(self) -> dict[str, dict[str, int]]:
        return {
            a: {b: int(self.counts[i, k]) for k, b in enumerate(self.ids) if k != i}
            for i, a in enumerate(self.ids)
        }


def build_precedence(
    msgs: Sequence[Sequence[str]],
    cut: Sequence[int],
    vertices: Iterable[str] | None = None,
) -> PrecedenceMatrix:
    """``counts[a][b]`` = parties whose cut prefix holds both, ``a`` first.

    Without ``vertices`` every transaction in the cut is indexed.
    """
    prefixes = list(_prefixes(msgs, cut))
    if vertices is None:
        vertices = build_vertices(msgs, cut)
    ids = tuple(sorted(vertices))
    index = {tx: i for i, tx in enumerate(ids)}
    size = len(ids)
    counts = np.zeros((size, size), dtype=np.int64)
    absent = np.iinfo(np.int64).max
    for prefix in prefixes:
        if not prefix:
            continue
        pos = np.full(size, absent, dtype=np.int64)
        for p, tx in enumerate(prefix):
            i = index.get(tx)
            if i is not None and pos[i] == absent:
                pos[i] = p
        present = pos != absent
        both = present[:, None] & present[None, :]
        counts += (both & (pos[:, None] < pos[None, :])).astype(np.int64)
    return PrecedenceMatrix(ids, counts, tuple(cut))


def edge_matrix(counts: np.ndarray, n: int, f: int, kappa: int) -> np.ndarray:
    """Boolean adjacency from the edge rule; ``adj[a, b]`` means ``a -> b``."""
    rev = counts.T
    adj = np.maximum(counts, n - f - rev) > rev - f + kappa
    np.fill_diagonal(adj, False)
    return adj


def add_edges(M: PrecedenceMatrix, n: int, f: int, kappa: int) -> DependencyGraph:
    adj = edge_matrix(M.counts, n, f, kappa)
    g = DependencyGraph()
    for tx in M.ids:
        g.add_vertex(tx)
    src, dst = np.nonzero(adj)
    for a, b in zip(src.tolist(), dst.tolist()):
        g.vertices[M.ids[a]].out.add(M.ids[b])
    return g


# --------------------------------------------------------------------------
# strongly connected components


def dfs(graph: DependencyGraph, start: str, visited: set, stack: list) -> None:
    """Iterative depth-first search appending vertices to ``stack`` in finish order."""
    if start in visited:
        return
    visited.add(start)
    frames = [(start, iter(sorted(graph.vertices[start].out)))]
    while frames:
        node, it = frames[-1]
        for nxt in it:
            if nxt not in visited:
                visited.add(nxt)
                frames.append((nxt, iter(sorted(graph.vertices[nxt].out))))
                break
        else:
            frames.pop()
            stack.append(node)


def transpose(graph: DependencyGraph) -> DependencyGraph:
    return graph.transpose()


def indegree(graph: DependencyGraph, key: str) -> int:
    return graph.indegree(key)


def visit(graph: DependencyGraph, start: str, visited: set, component: list) -> None:
    """Collect everything reachable from ``start`` not yet visited."""
    visited.add(start)
    todo = [start]
    while todo:
        node = todo.pop()
        component.append(node)
        for nxt in sorted(graph.vertices[node].out):
            if nxt not in visited:
                visited.add(nxt)
                todo.append(nxt)


def scc(graph: DependencyGraph) -> list[list[str]]:
    """Strongly connected components (Kosaraju).

    Components come out in topological order of the condensation: a
    component never has an edge from a component listed after it.
    """
    visited: set = set()
    stack: list = []
    for key in graph.keys():
        if key not in visited:
            dfs(graph, key, visited, stack)
    transposed = graph.transpose()
    visited = set()
    components = []
    while stack:
        v = stack.pop()
        if v not in visited:
            comp: list = []
            visit(transposed, v, visited, comp)
            components.append(sorted(comp))
    return components


def component_key(members: Iterable[str]) -> str:
    return digest(encode(tuple(sorted(members)))).hex()


def collapse(graph: DependencyGraph) -> DependencyGraph:
    """Condensation of ``graph``: one vertex per strongly connected component."""
    if len(graph) <= 1:
        return graph
    comps = scc(graph)
    owner: dict[str, str] = {}
    h = DependencyGraph()
    for comp in comps:
        members: set = set()
        for key in comp:
            members |= graph.vertices[key].members
        ck = component_key(members)
        h.add_vertex(ck, members)
        for key in comp:
            owner[key] = ck
    for key, v in graph.vertices.items():
        for d in v.out:
            if owner[key] != owner[d]:
                h.vertices[owner[key]].out.add(owner[d])
    return h


def is_acyclic(graph: DependencyGraph) -> bool:
    deg = graph.indegrees()
    ready = [k for k, d in deg.items() if d == 0]
    seen = 0
    while ready:
        k = ready.pop()
        seen += 1
        for d in graph.vertices[k].out:
            deg[d] -= 1
            if deg[d] == 0:
                ready.append(d)
    return seen == len(graph)


# --------------------------------------------------------------------------
# delivery


def is_stable(count: int, n: int, f: int, kappa: int) -> bool:
    return 2 * count >= n + f - kappa


def extract_deliverable(
    graph: DependencyGraph, occurrences: Mapping[str, int], cfg: Config
) -> list[frozenset]:
    """Peel stable source vertices off an acyclic graph, in delivery order.

    Among several sources the one holding the smallest transaction id goes
    first. Extraction stops at the first source with an unstable member.
    """
    if not is_acyclic(graph):
        raise GraphError("extract_deliverable needs an acyclic graph")
    deg = graph.indegrees()
    sources = {k for k, d in deg.items() if d == 0}
    out: list[frozenset] = []
    while sources:
        key = min(sources, key=lambda k: min(graph.vertices[k].members))
        members = graph.vertices[key].members
        if not all(is_stable(occurrences.get(tx, 0), cfg.n, cfg.f, cfg.kappa) for tx in members):
            break
        out.append(members)
        sources.discard(key)
        for d in graph.vertices[key].out:
            deg[d] -= 1
            if deg[d] == 0:
                sources.add(d)
    return out


@dataclass
class RoundGraph:
    """Intermediate products of one fair-ordering pass, kept for tracing."""

    vertices: frozenset
    matrix: PrecedenceMatrix
    graph: DependencyGraph
    collapsed: DependencyGraph
    occurrences: dict
    batches: list


def fair_order(
    msgs: Sequence[Sequence[str]], cut: Sequence[int], delivered: Iterable[str], cfg: Config
) -> RoundGraph:
    delivered = set(delivered)
    verts = build_vertices(msgs, cut, delivered)
    M = build_precedence(msgs, cut, verts)
    g = add_edges(M, cfg.n, cfg.f, cfg.kappa)
    h = collapse(g)
    occ = occurrence(msgs, cut)
    batches = extract_deliverable(h, occ, cfg)
    return RoundGraph(verts, M, g, h, occ, batches)


def to_text(graph: DependencyGraph, labels: Mapping[str, str] | None = None) -> str:
    """Line-oriented digraph dump: member comments, then one edge per line."""
    name = (lambda tx: labels.get(tx, tx)) if labels else (lambda tx: tx)
    lines = []
    for key in graph.keys():
        members = ",".join(sorted(name(m) for m in graph.vertices[key].members))
        lines.append(f"# {key} {{{members}}}")
    for src, dst in graph.edges():
        lines.append(f"{src} -> {dst}")
    return "\n".join(lines) + "\n"
