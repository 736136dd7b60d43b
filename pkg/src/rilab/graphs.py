"""Weighted graphs, exhaustions, free restrictions and wired quotients.

An infinite transient graph is represented by a finite realized *window*
together with an exhaustion: nested connected vertex sets indexed by an
integer radius.  Every level strictly inside the window has all of its
neighbours realized, so the wired quotient at that level is exact.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

ZNAME = "@inf"
FAMILIES = ("zd_box", "regular_tree", "product", "ladder", "two_sheet")


class GraphError(ValueError):
    pass


class WeightedGraph:
    """Finite, connected graph with symmetric positive conductances.

    Vertex ids are strings; internally vertices are dense integers and the
    conductances live in a symmetric CSR matrix.
    """

    def __init__(self, names: Sequence[str], conductance: sp.spmatrix, check: bool = True):
        self.names = list(names)
        C = sp.csr_matrix(conductance, dtype=float)
        C.sum_duplicates()
        C.eliminate_zeros()
        C.sort_indices()
        self.C = C
        if len(self.names) != C.shape[0] or C.shape[0] != C.shape[1]:
            raise GraphError("name list and conductance matrix disagree in size")
        if check:
            self.validate()

    @classmethod
    def from_edges(cls, names, u, v, c, check=True):
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        c = np.asarray(c, dtype=float)
        n = len(names)
        C = sp.coo_matrix((np.r_[c, c], (np.r_[u, v], np.r_[v, u])), shape=(n, n))
        return cls(names, C, check=check)

    def validate(self):
        C = self.C
        if C.nnz and C.data.min() <= 0:
            raise GraphError("conductances must be positive")
        if C.diagonal().any():
            raise GraphError("self-loops are not allowed")
        if C.nnz and abs(C - C.T).max() > 0:
            raise GraphError("conductance matrix is not symmetric")
        if len(set(self.names)) != len(self.names):
            raise GraphError("duplicate vertex ids")
        if self.n == 0:
            raise GraphError("empty graph")
        if not self.is_connected():
            raise GraphError("graph is disconnected")

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @cached_property
    def index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}

    @cached_property
    def pi(self) -> np.ndarray:
        return np.asarray(self.C.sum(axis=1)).ravel()

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.C.indptr)

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Undirected edges as (u, v, c) with u < v."""
        U = sp.triu(self.C, k=1).tocoo()
        order = np.lexsort((U.col, U.row))
        return U.row[order].astype(np.int64), U.col[order].astype(np.int64), U.data[order]

    @property
    def num_edges(self) -> int:
        return len(self.edge_arrays[0])

    @cached_property
    def cumulative_kernel(self) -> np.ndarray:
        """Row-wise cumulative transition probabilities aligned with C.indices."""
        C = self.C
        cum = np.empty_like(C.data)
        for i in range(self.n):
            lo, hi = C.indptr[i], C.indptr[i + 1]
            row = np.cumsum(C.data[lo:hi])
            cum[lo:hi] = row / row[-1]
            cum[hi - 1] = 1.0
        return cum

    def transition_matrix(self) -> sp.csr_matrix:
        return sp.diags(1.0 / self.pi) @ self.C

    def neighbors(self, i: int) -> np.ndarray:
        return self.C.indices[self.C.indptr[i]:self.C.indptr[i + 1]]

    def conductance(self, i: int, j: int) -> float:
        return float(self.C[i, j])

    def ids(self, vertices) -> np.ndarray:
        """Map vertex ids (names or integer indices) to integer indices."""
        if isinstance(vertices, (str, int, np.integer)):
            vertices = [vertices]
        out = []
        for v in vertices:
            if isinstance(v, str):
                if v not in self.index:
                    raise GraphError(f"unknown vertex {v!r}")
                out.append(self.index[v])
            else:
                v = int(v)
                if not 0 <= v < self.n:
                    raise GraphError(f"vertex index {v} out of range")
                out.append(v)
        return np.asarray(out, dtype=np.int64)

    def is_connected(self, subset=None) -> bool:
        C = self.C if subset is None else self.C[subset][:, subset]
        if C.shape[0] == 0:
            return False
        ncomp, _ = connected_components(C, directed=False)
        return ncomp == 1

    def subgraph(self, vertices) -> "WeightedGraph":
        idx = np.asarray(vertices, dtype=np.int64)
        return WeightedGraph([self.names[i] for i in idx], self.C[idx][:, idx])

    def __repr__(self):
        return f"WeightedGraph(n={self.n}, edges={self.num_edges})"


@dataclass
class Exhaustion:
    """Nested levels VG_r = {x : shell[x] <= r} for r = radii[0] .. radii[-1]."""

    shell: np.ndarray
    radii: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.shell = np.asarray(self.shell, dtype=np.int64)
        if not self.radii:
            self.radii = sorted(set(self.shell.tolist()))

    @property
    def window(self) -> int:
        return self.radii[-1]

    def level(self, r: int) -> np.ndarray:
        if r not in self.radii:
            raise GraphError(f"level {r} not in exhaustion {self.radii[0]}..{self.window}")
        return np.flatnonzero(self.shell <= r)

    def rim(self, r: int) -> np.ndarray:
        """Outer shell of level r."""
        self.level(r)
        return np.flatnonzero(self.shell == r)

    def validate(self, graph: WeightedGraph):
        if len(self.shell) != graph.n:
            raise GraphError("exhaustion does not cover the graph")
        sizes = [len(self.level(r)) for r in self.radii]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise GraphError("exhaustion levels are not strictly increasing")
        if sizes[-1] != graph.n:
            raise GraphError("union of levels is not the window")
        for r in self.radii:
            if not graph.is_connected(self.level(r)):
                raise GraphError(f"level {r} does not induce a connected subgraph")


@dataclass
class LevelGraph:
    """A finite graph derived from a window at level n.

    ``kind == "free"``: the subgraph induced by VG_n.
    ``kind == "wired"``: VG_n plus one vertex z_n (named ``@inf``) carrying all
    conductance leaving VG_n.
    """

    base: WeightedGraph
    level: int
    kind: str
    graph: WeightedGraph
    base_index: np.ndarray
    z: int | None = None

    @cached_property
    def _lookup(self) -> dict[int, int]:
        return {int(b): i for i, b in enumerate(self.base_index) if b >= 0}

    def local(self, v) -> int:
        if isinstance(v, str):
            if v == ZNAME:
                if self.z is None:
                    raise GraphError("free restriction has no vertex at infinity")
                return self.z
            v = self.base.ids(v)[0]
        v = int(v)
        if v not in self._lookup:
            raise GraphError(f"vertex {self.base.names[v]!r} is outside level {self.level}")
        return self._lookup[v]

    def locals(self, vertices) -> np.ndarray:
        if isinstance(vertices, (str, int, np.integer)):
            vertices = [vertices]
        return np.asarray([self.local(v) for v in vertices], dtype=np.int64)

    @property
    def interior(self) -> np.ndarray:
        """Local indices of the realized level vertices (everything but z)."""
        n = self.graph.n
        return np.arange(n - 1) if self.z is not None else np.arange(n)


WiredQuotient = LevelGraph


def restrict(graph: WeightedGraph, exhaustion: Exhaustion, n: int) -> LevelGraph:
    """Free restriction: the subgraph induced by VG_n."""
    idx = exhaustion.level(n)
    return LevelGraph(graph, n, "free", graph.subgraph(idx), idx, None)


def wire(graph: WeightedGraph, exhaustion: Exhaustion, n: int) -> LevelGraph:
    """Collapse everything outside VG_n to a single vertex z_n."""
    if n >= exhaustion.window:
        raise GraphError("no exterior to wire: level equals the window")
    idx = exhaustion.level(n)
    inside = np.zeros(graph.n, dtype=bool)
    inside[idx] = True
    C = graph.C
    inner = C[idx][:, idx]
    cut = np.asarray(C[idx][:, np.flatnonzero(~inside)].sum(axis=1)).ravel()
    m = len(idx)
    if not cut.any():
        raise GraphError("no exterior to wire: level has no realized boundary")
    Q = sp.bmat([[inner, sp.csr_matrix(cut[:, None])], [sp.csr_matrix(cut[None, :]), None]])
    names = [graph.names[i] for i in idx] + [ZNAME]
    q = WeightedGraph(names, Q)
    return LevelGraph(graph, n, "wired", q, np.r_[idx, -1], m)


# ---------------------------------------------------------------------------
# text I/O


def read_graph(text: str) -> WeightedGraph:
    """Parse an edge list ``u v c`` (one edge per line, ``#`` comments)."""
    names: list[str] = []
    index: dict[str, int] = {}
    weights: dict[tuple[int, int], float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise GraphError(f"line {lineno}: expected '<u> <v> <c>'")
        a, b = parts[0], parts[1]
        try:
            c = float(parts[2])
        except ValueError:
            raise GraphError(f"line {lineno}: conductance {parts[2]!r} is not a number") from None
        if a == b:
            raise GraphError(f"line {lineno}: self-loop at {a!r}")
        if not c > 0 or not math.isfinite(c):
            raise GraphError(f"line {lineno}: nonpositive conductance {c}")
        for name in (a, b):
            if name not in index:
                index[name] = len(names)
                names.append(name)
        i, j = index[a], index[b]
        key = (min(i, j), max(i, j))
        if key in weights and weights[key] != c:
            raise GraphError(f"line {lineno}: conflicting (asymmetric) conductance for {a}-{b}")
        weights[key] = c
    if not names:
        raise GraphError("no edges")
    keys = np.array(list(weights), dtype=np.int64).reshape(-1, 2)
    return WeightedGraph.from_edges(names, keys[:, 0], keys[:, 1], list(weights.values()))


def write_graph(graph: WeightedGraph) -> str:
    u, v, c = graph.edge_arrays
    lines = [f"# {graph.n} vertices, {graph.num_edges} edges"]
    names = graph.names
    lines += [f"{names[a]} {names[b]} {float(w)!r}" for a, b, w in zip(u, v, c)]
    return "\n".join(lines) + "\n"


def read_exhaustion(text: str, graph: WeightedGraph) -> Exhaustion:
    """One line per level, listing the vertex ids of that level (nested)."""
    shell = np.full(graph.n, -1, dtype=np.int64)
    levels = [ln.split("#", 1)[0].split() for ln in text.splitlines()]
    levels = [ln for ln in levels if ln]
    prev: set[str] = set()
    for r, ids in enumerate(levels):
        cur = set(ids)
        if not prev <= cur:
            raise GraphError(f"level {r} does not contain level {r - 1}")
        for name in cur - prev:
            shell[graph.ids(name)[0]] = r
        prev = cur
    if (shell < 0).any():
        raise GraphError("exhaustion does not cover the graph")
    ex = Exhaustion(shell, list(range(len(levels))))
    ex.validate(graph)
    return ex


def write_exhaustion(exhaustion: Exhaustion, graph: WeightedGraph) -> str:
    lines = []
    for r in exhaustion.radii:
        lines.append(" ".join(graph.names[i] for i in exhaustion.level(r)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# example families


@dataclass
class Family:
    graph: WeightedGraph
    exhaustion: Exhaustion
    name: str
    params: dict
    origin: int = 0


def _lattice_points(d: int, radius: int) -> np.ndarray:
    axis = np.arange(-radius, radius + 1)
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)


def _lattice_edges(pts: np.ndarray, radius: int):
    """Nearest-neighbour edges inside the box, as index pairs (u, v)."""
    d = pts.shape[1]
    side = 2 * radius + 1
    code = np.zeros(len(pts), dtype=np.int64)
    for k in range(d):
        code = code * side + (pts[:, k] + radius)
    us, vs = [], []
    stride = 1
    for k in reversed(range(d)):
        ok = pts[:, k] < radius
        us.append(np.flatnonzero(ok))
        vs.append(np.flatnonzero(ok) + stride)
        stride *= side
    return np.concatenate(us), np.concatenate(vs)


def _pname(p) -> str:
    return ",".join(str(int(t)) for t in p)


def _require_dim(d):
    if d < 3:
        raise GraphError(f"d={d} < 3: the lattice is not transient")


def zd_box(d: int = 3, radius: int = 4) -> Family:
    """Box [-radius, radius]^d of Z^d with unit conductances, sup-norm levels."""
    _require_dim(d)
    if radius < 1:
        raise GraphError("radius must be at least 1")
    pts = _lattice_points(d, radius)
    u, v = _lattice_edges(pts, radius)
    g = WeightedGraph.from_edges([_pname(p) for p in pts], u, v, np.ones(len(u)))
    shell = np.abs(pts).max(axis=1)
    origin = g.index[_pname([0] * d)]
    return Family(g, Exhaustion(shell), "zd_box", {"d": d, "radius": radius}, origin)


def two_sheet(d: int = 3, radius: int = 4) -> Family:
    """Two copies of Z^d joined by rungs of conductance (|x|_1 + 1)^-(d+1)."""
    _require_dim(d)
    if radius < 1:
        raise GraphError("radius must be at least 1")
    pts = _lattice_points(d, radius)
    m = len(pts)
    u, v = _lattice_edges(pts, radius)
    rung = (np.abs(pts).sum(axis=1) + 1.0) ** (-(d + 1))
    names = [f"{_pname(p)}|{s}" for s in (0, 1) for p in pts]
    uu = np.r_[u, u + m, np.arange(m)]
    vv = np.r_[v, v + m, np.arange(m) + m]
    cc = np.r_[np.ones(2 * len(u)), rung]
    g = WeightedGraph.from_edges(names, uu, vv, cc)
    shell = np.tile(np.abs(pts).max(axis=1), 2)
    origin = g.index[f"{_pname([0] * d)}|0"]
    return Family(g, Exhaustion(shell), "two_sheet", {"d": d, "radius": radius}, origin)


def rung_cut_conductance(family: Family) -> float:
    """Total conductance of edges joining the two sheets."""
    g = family.graph
    u, v, c = g.edge_arrays
    s = np.array([nm.rsplit("|", 1)[1] for nm in g.names])
    return float(c[s[u] != s[v]].sum())


def _factor_graph(kind: str, size: int, conductance: float):
    if size < 2:
        raise GraphError("factor graph needs at least 2 vertices")
    if kind == "path":
        pairs = [(i, i + 1) for i in range(size - 1)]
    elif kind == "cycle":
        pairs = [(i, (i + 1) % size) for i in range(size)] if size > 2 else [(0, 1)]
    elif kind == "complete":
        pairs = list(itertools.combinations(range(size), 2))
    else:
        raise GraphError(f"unknown factor graph {kind!r}")
    return pairs, conductance


def product(d: int = 3, radius: int = 4, factor: str = "path", size: int = 2,
            factor_conductance: float = 1.0) -> Family:
    """Cartesian product of a Z^d box with a finite graph A."""
    _require_dim(d)
    pts = _lattice_points(d, radius)
    m = len(pts)
    u, v = _lattice_edges(pts, radius)
    pairs, cf = _factor_graph(factor, size, factor_conductance)
    names = [f"{_pname(p)}|{a}" for a in range(size) for p in pts]
    us = [u + a * m for a in range(size)] + [np.arange(m) + a * m for a, _ in pairs]
    vs = [v + a * m for a in range(size)] + [np.arange(m) + b * m for _, b in pairs]
    cs = [np.ones(len(u))] * size + [np.full(m, cf)] * len(pairs)
    g = WeightedGraph.from_edges(names, np.concatenate(us), np.concatenate(vs), np.concatenate(cs))
    shell = np.tile(np.abs(pts).max(axis=1), size)
    params = {"d": d, "radius": radius, "factor": factor, "size": size,
              "factor_conductance": factor_conductance}
    return Family(g, Exhaustion(shell), "product", params, g.index[f"{_pname([0] * d)}|0"])


def _bfs_family(root, neighbors: Callable, radius: int):
    """Realize the graph ball of given radius around root of an implicit graph."""
    dist = {root: 0}
    order = [root]
    queue = deque([root])
    while queue:
        x = queue.popleft()
        if dist[x] == radius:
            continue
        for y, _ in neighbors(x):
            if y not in dist:
                dist[y] = dist[x] + 1
                order.append(y)
                queue.append(y)
    index = {x: i for i, x in enumerate(order)}
    us, vs, cs = [], [], []
    for x in order:
        for y, c in neighbors(x):
            if y in index and index[x] < index[y]:
                us.append(index[x])
                vs.append(index[y])
                cs.append(c)
    return order, np.array([dist[x] for x in order]), us, vs, cs


def regular_tree(branching: int = 2, depth: int = 6) -> Family:
    """Rooted tree where the root has `branching` children and every other
    internal vertex has one parent and `branching` children."""
    if branching < 2:
        raise GraphError("branching must be at least 2 (a path is recurrent)")
    if depth < 1:
        raise GraphError("depth must be at least 1")
    sep = "" if branching <= 10 else "."
    names = ["t"]
    parents, shell = [], [0]
    frontier = [0]
    for k in range(1, depth + 1):
        nxt = []
        for p in frontier:
            for b in range(branching):
                names.append(names[p] + sep + str(b))
                parents.append(p)
                shell.append(k)
                nxt.append(len(names) - 1)
        frontier = nxt
    child = np.arange(1, len(names))
    g = WeightedGraph.from_edges(names, parents, child, np.ones(len(child)))
    return Family(g, Exhaustion(np.array(shell)), "regular_tree",
                  {"branching": branching, "depth": depth}, 0)


def ladder_conductances(rule: str = "geometric:0.5") -> Callable[[int], float]:
    """Parse a summable rung rule: ``geometric:q`` (c_k = q^k) or ``power:s`` (c_k = k^-s)."""
    kind, _, arg = rule.partition(":")
    a = float(arg) if arg else None
    if kind == "geometric":
        q = 0.5 if a is None else a
        if not 0 < q < 1:
            raise GraphError("geometric rung rule needs 0 < q < 1 to be summable")
        return lambda k: q ** k
    if kind == "power":
        s = 2.0 if a is None else a
        if s <= 1:
            raise GraphError("power rung rule needs exponent > 1 to be summable")
        return lambda k: float(k) ** (-s)
    raise GraphError(f"unknown rung rule {rule!r}")


def ladder(d: int = 3, radius: int = 6, rule: str = "geometric:0.5", rungs: bool = True) -> Family:
    """Z^d glued to N_0 at the origin, optionally with rungs k <-> (k,0,..,0).

    Levels are graph-distance balls around the glue point.
    """
    _require_dim(d)
    ck = ladder_conductances(rule)
    origin = (0,) * d

    def neighbors(x):
        out = []
        if x[0] == "ray":
            k = x[1]
            out.append((origin if k == 1 else ("ray", k - 1), 1.0))
            out.append((("ray", k + 1), 1.0))
            if rungs:
                out.append(((k,) + (0,) * (d - 1), ck(k)))
            return out
        for i in range(d):
            for s in (-1, 1):
                y = list(x)
                y[i] += s
                out.append((tuple(y), 1.0))
        if x == origin:
            out.append((("ray", 1), 1.0))
        elif rungs and x[0] > 0 and not any(x[1:]):
            out.append((("ray", x[0]), ck(x[0])))
        return out

    order, dist, us, vs, cs = _bfs_family(origin, neighbors, radius)
    names = [f"n{x[1]}" if x[0] == "ray" else _pname(x) for x in order]
    g = WeightedGraph.from_edges(names, us, vs, cs)
    params = {"d": d, "radius": radius, "rule": rule, "rungs": rungs}
    return Family(g, Exhaustion(dist), "ladder", params, 0)


def build_family(name: str, **params) -> Family:
    builders = {"zd_box": zd_box, "regular_tree": regular_tree, "product": product,
                "ladder": ladder, "two_sheet": two_sheet}
    if name not in builders:
        raise GraphError(f"unknown family {name!r}; choose from {', '.join(FAMILIES)}")
    K = params.pop("K", None)
    fam = builders[name](**params)
    fam.exhaustion.validate(fam.graph)
    if K is not None:
        missing = [k for k in K if k not in fam.graph.index]
        if missing:
            raise GraphError(f"radius too small to hold K: {missing} not realized")
    return fam


def default_K(family: Family) -> list[str]:
    """Small asymmetric target sets used by the experiments."""
    if family.name in ("zd_box", "ladder"):
        return ["0,0,0", "1,0,0", "2,0,0", "0,1,0"]
    if family.name == "regular_tree":
        return ["t0", "t1"]
    if family.name == "two_sheet":
        return ["0,0,0|0", "0,0,0|1"]
    if family.name == "product":
        return ["0,0,0|0", "1,0,0|0", "0,0,0|1"]
    raise GraphError(f"no default K for {family.name}")


def central_edges(graph: WeightedGraph, center: int, count: int, within: Iterable[int] | None = None):
    """The `count` edges closest to `center` in BFS order, as (u, v) index pairs."""
    allowed = None if within is None else set(int(i) for i in within)
    seen = {center}
    order = [center]
    queue = deque([center])
    while queue:
        x = queue.popleft()
        for y in graph.neighbors(x):
            y = int(y)
            if y not in seen and (allowed is None or y in allowed):
                seen.add(y)
                order.append(y)
                queue.append(y)
    rank = {x: i for i, x in enumerate(order)}
    u, v, _ = graph.edge_arrays
    keep = [(a, b) for a, b in zip(u.tolist(), v.tolist()) if a in rank and b in rank]
    keep.sort(key=lambda e: (max(rank[e[0]], rank[e[1]]), min(rank[e[0]], rank[e[1]])))
    if len(keep) < count:
        raise GraphError(f"only {len(keep)} edges available for a panel of {count}")
    return keep[:count]
