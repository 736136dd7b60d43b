"""Spanning trees and forests: Wilson's algorithm, Aldous-Broder extraction from
walk traces, exact edge marginals and brute-force enumeration."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .graphs import GraphError, LevelGraph, WeightedGraph
from .potential import _unpack, edge_resistances, laplacian
from .samplers import Trajectory, _kernel_seed, _tables, streams

ENUMERATION_LIMIT = 12


@dataclass
class Forest:
    """Parent pointers: parent[x] >= 0 is the parent, -1 marks a root and -2 a
    vertex the forest does not reach."""

    parent: np.ndarray
    names: tuple = ()
    flags: dict = field(default_factory=dict)

    @property
    def roots(self) -> np.ndarray:
        return np.flatnonzero(self.parent == -1)

    @property
    def edges(self) -> set[tuple[int, int]]:
        x = np.flatnonzero(self.parent >= 0)
        p = self.parent[x]
        return set(zip(np.minimum(x, p).tolist(), np.maximum(x, p).tolist()))

    def contains(self, a: int, b: int) -> bool:
        return self.parent[a] == b or self.parent[b] == a

    @property
    def coverage(self) -> float:
        return float(self.flags.get("coverage", np.mean(self.parent != -2)))

    def check(self, graph: WeightedGraph) -> None:
        """Raise unless parent edges exist and following parents never cycles."""
        x = np.flatnonzero(self.parent >= 0)
        if len(x) and np.any(np.asarray(graph.C[x, self.parent[x]]).ravel() <= 0):
            raise GraphError("forest uses a non-edge")
        for v in x:
            seen, y = 0, v
            while self.parent[y] >= 0:
                y = self.parent[y]
                seen += 1
                if seen > len(self.parent):
                    raise GraphError("forest contains a cycle")

    def is_spanning_tree(self, graph: WeightedGraph) -> bool:
        try:
            self.check(graph)
        except GraphError:
            return False
        return len(self.roots) == 1 and not np.any(self.parent == -2)


@dataclass
class EdgeMarginals:
    edges: list              # (u, v) name pairs
    prob: np.ndarray
    kind: str
    level: int | None = None

    @property
    def total(self) -> float:
        return float(self.prob.sum())

    def as_dict(self) -> dict:
        return {e: float(p) for e, p in zip(self.edges, self.prob)}


# ---------------------------------------------------------------------------
# samplers


def wilson(net, root=None, rng=None) -> Forest:
    """Exact sample of the c-weighted spanning tree via loop-erased walks.

    On a wired quotient the default root is z, so the result is the wired
    forest of VG_n joined at infinity.
    """
    g, to_local, _, z = _unpack(net)
    if root is None:
        root = z if z is not None else 0
    else:
        root = int(to_local([root])[0])
    topo, _ = streams(rng)
    indptr, indices, cum = _tables(g)
    order = np.arange(g.n, dtype=np.int64)
    parent = kern.wilson_tree(indptr, indices, cum, g.n, root, order, _kernel_seed(topo))
    return Forest(parent, tuple(g.names), {"root": int(root), "coverage": 1.0})


def aldous_broder_extract(trace: Trajectory, mode: str = "from_start", target=None,
                          n: int | None = None) -> Forest:
    """First-entry forest of a trace (base indices).

    ``from_start`` uses the whole trace; ``after_first_INF`` ignores visits up
    to the first INF marker (a trace that starts at infinity keeps everything).
    First visits right after a marker become roots, i.e. children of infinity.
    """
    if mode not in ("from_start", "after_first_INF"):
        raise ValueError(f"unknown mode {mode!r}")
    if n is None:
        n = len(trace.names) if trace.names else int(trace.steps.max(initial=-1)) + 1
    skip = mode == "after_first_INF" and trace.meta.get("start") != "inf"
    parent = kern.first_entry_parents(trace.steps, n, skip)
    tgt = np.arange(n) if target is None else np.asarray(target, dtype=np.int64)
    covered = float(np.mean(parent[tgt] != -2)) if len(tgt) else 1.0
    if covered < 1.0:
        warnings.warn(f"trace covers only {covered:.3f} of the target vertices", RuntimeWarning,
                      stacklevel=2)
    return Forest(parent, trace.names or (), {"coverage": covered, "mode": mode,
                                               "partial": covered < 1.0})


def edge_frequencies(forests, pairs) -> np.ndarray:
    """Fraction of forests containing each (a, b) pair of indices."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    hits = np.zeros(len(pairs))
    for f in forests:
        p = f.parent
        hits += (p[pairs[:, 0]] == pairs[:, 1]) | (p[pairs[:, 1]] == pairs[:, 0])
    return hits / max(len(forests), 1)


# ---------------------------------------------------------------------------
# exact laws


def exact_marginals(net, kind: str | None = None, edges=None) -> EdgeMarginals:
    """P[e in tree] = c(e) R_eff(e) on a free restriction, a wired quotient or a
    plain finite graph.  ``edges`` defaults to every edge of the input."""
    g, to_local, net_kind, _ = _unpack(net)
    if kind is not None and kind != net_kind:
        raise ValueError(f"kind {kind!r} does not match a {net_kind} input")
    if edges is None:
        u, v, c = g.edge_arrays
        pairs = np.stack([u, v], axis=1)
    else:
        pairs = np.array([to_local([a, b]) for a, b in edges], dtype=np.int64).reshape(-1, 2)
        c = np.asarray(g.C[pairs[:, 0], pairs[:, 1]]).ravel()
        if np.any(c <= 0):
            raise GraphError("panel contains a non-edge")
    R = edge_resistances(g, pairs)
    p = np.clip(c * R, 0.0, 1.0)
    names = [(g.names[a], g.names[b]) for a, b in pairs]
    level = net.level if isinstance(net, LevelGraph) else None
    return EdgeMarginals(names, p, net_kind, level)


@dataclass
class TreeLaw:
    trees: list          # tuples of edge indices into graph.edge_arrays
    weights: np.ndarray  # normalized
    Z: float


def enumerate_trees(graph: WeightedGraph, limit: int = ENUMERATION_LIMIT) -> TreeLaw:
    """All spanning trees with weights prod c(e) / Z, by backtracking."""
    if graph.n > limit:
        raise GraphError(f"{graph.n} vertices exceed the enumeration limit {limit}")
    u, v, c = graph.edge_arrays
    m, need = len(u), graph.n - 1
    trees, weights = [], []

    def find(comp, x):
        while comp[x] != x:
            x = comp[x]
        return x

    def rec(k, chosen, comp, w):
        if len(chosen) == need:
            trees.append(tuple(chosen))
            weights.append(w)
            return
        if m - k < need - len(chosen):
            return
        a, b = find(comp, u[k]), find(comp, v[k])
        if a != b:
            comp2 = comp.copy()
            comp2[a] = b
            rec(k + 1, chosen + [k], comp2, w * c[k])
        rec(k + 1, chosen, comp, w)

    if graph.n == 1:
        return TreeLaw([()], np.ones(1), 1.0)
    rec(0, [], np.arange(graph.n), 1.0)
    w = np.array(weights)
    Z = float(w.sum())
    return TreeLaw(trees, w / Z, Z)


def matrix_tree(graph: WeightedGraph) -> float:
    """Weighted spanning-tree count: any cofactor of the Laplacian."""
    L = laplacian(graph).toarray()
    return float(np.linalg.det(L[1:, 1:]))


def enumeration_marginals(graph: WeightedGraph) -> np.ndarray:
    """Edge inclusion probabilities from the enumerated tree law (edge_arrays order)."""
    law = enumerate_trees(graph)
    p = np.zeros(graph.num_edges)
    for t, w in zip(law.trees, law.weights):
        p[list(t)] += w
    return p
