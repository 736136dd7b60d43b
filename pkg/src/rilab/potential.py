"""Discrete potential theory on finite free restrictions and wired quotients.

Everything here reduces to Laplacian systems ``L_UU f_U = -L_UA phi`` on the
unconstrained vertices U.  Free boundary conditions mean natural (Neumann)
conditions at the rim of the restriction; wired means the exterior has been
collapsed to a single vertex z which behaves like any other vertex unless it
is listed among the constrained vertices.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graphs import Exhaustion, GraphError, LevelGraph, WeightedGraph, restrict, wire

DIRECT_LIMIT = 60_000


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg if residual is None else f"{msg} (residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# data types


@dataclass
class Measure:
    """Nonnegative masses on a finite support of vertex ids."""

    support: tuple
    mass: np.ndarray
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.support = tuple(self.support)
        self.mass = np.asarray(self.mass, dtype=float)
        if len(self.support) != len(self.mass):
            raise ValueError("support and mass differ in length")
        if (self.mass < -1e-12).any():
            raise ValueError("negative mass")

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def normalized(self) -> "Measure":
        if self.total <= 0:
            raise ValueError("cannot normalize a zero measure")
        return Measure(self.support, self.mass / self.total, dict(self.flags))

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.mass.tolist()))

    def __getitem__(self, key) -> float:
        return self.as_dict().get(key, 0.0)


@dataclass
class PotentialField:
    graph: WeightedGraph
    values: np.ndarray
    boundary: np.ndarray
    boundary_values: np.ndarray
    kind: str = "free"
    residual: float = 0.0

    @property
    def energy(self) -> float:
        return dirichlet_energy(self)

    def at(self, v) -> float:
        return float(self.values[self.graph.ids(v)[0]])


@dataclass
class Flow:
    """Antisymmetric edge function, stored once per undirected edge u < v as
    the amount flowing from u to v."""

    graph: WeightedGraph
    theta: np.ndarray

    def value(self, x, y) -> float:
        x, y = (int(t) for t in self.graph.ids([x, y]))
        u, v, _ = self.graph.edge_arrays
        a, b, s = (x, y, 1.0) if x < y else (y, x, -1.0)
        k = np.flatnonzero((u == a) & (v == b))
        if not len(k):
            raise GraphError("not an edge")
        return s * float(self.theta[k[0]])

    @property
    def energy(self) -> float:
        return float(np.sum(self.theta ** 2 / self.graph.edge_arrays[2]))

    def divergence(self) -> np.ndarray:
        """Net flow out of every vertex."""
        u, v, _ = self.graph.edge_arrays
        out = np.zeros(self.graph.n)
        np.add.at(out, u, self.theta)
        np.add.at(out, v, -self.theta)
        return out

    def cycle_residual(self) -> float:
        """Largest violation of the cycle law over fundamental cycles of a BFS tree."""
        g = self.graph
        u, v, c = g.edge_arrays
        drop = self.theta / c
        adj = sp.csr_matrix((np.r_[drop, -drop], (np.r_[u, v], np.r_[v, u])), shape=(g.n, g.n))
        pot = np.full(g.n, np.nan)
        pot[0] = 0.0
        order, preds = sp.csgraph.breadth_first_order(g.C, 0, directed=False)
        for x in order[1:]:
            p = preds[x]
            pot[x] = pot[p] - adj[p, x]
        return float(np.max(np.abs(drop - (pot[u] - pot[v])), initial=0.0))


# ---------------------------------------------------------------------------
# linear algebra


def laplacian(g: WeightedGraph) -> sp.csr_matrix:
    return (sp.diags(g.pi) - g.C).tocsr()


class _Factor:
    """Solve L_UU x = b for many right-hand sides.

    Rows far denser than the rest (the wired vertex z touches the whole rim)
    wreck the fill-reducing ordering, so they are split off and handled
    through a small dense Schur complement.
    """

    def __init__(self, A: sp.csr_matrix, method: str = "auto", tol: float = 1e-10):
        if method == "auto":
            method = "direct" if A.shape[0] <= DIRECT_LIMIT else "cg"
        self.A, self.method, self.tol = A.tocsr(), method, tol
        if method == "direct":
            self._setup_direct()
        elif method == "cg":
            self._M = sp.diags(1.0 / self.A.diagonal())
        else:
            raise ValueError(f"unknown method {method!r}")

    def _setup_direct(self):
        A = self.A
        nnz = np.diff(A.indptr)
        dense = np.flatnonzero(nnz > max(64, 16 * np.median(nnz))) if A.shape[0] > 256 else []
        self._dense = np.asarray(dense, dtype=np.int64)[:8]
        keep = np.ones(A.shape[0], dtype=bool)
        keep[self._dense] = False
        self._keep = np.flatnonzero(keep)
        self._lu = self._splu(A[self._keep][:, self._keep] if len(self._dense) else A)
        if len(self._dense):
            A_SD = A[self._keep][:, self._dense].toarray()
            self._W = self._lu.solve(A_SD)
            schur = A[self._dense][:, self._dense].toarray() - A[self._dense][:, self._keep] @ self._W
            if abs(np.linalg.det(schur)) < 1e-300:
                raise SolverError("singular system (some component misses the boundary)")
            self._schur = np.linalg.inv(schur)
            self._A_DS = A[self._dense][:, self._keep]

    @staticmethod
    def _splu(A):
        try:
            lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"singular system: {exc}") from None
        diag = lu.U.diagonal()
        if not np.all(np.isfinite(diag)) or np.min(np.abs(diag)) < 1e-13 * np.max(np.abs(diag)):
            raise SolverError("singular system (some component misses the boundary)")
        return lu

    def solve(self, B: np.ndarray) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        if self.method == "direct":
            if not len(self._dense):
                return self._lu.solve(B)
            cols = B.reshape(B.shape[0], -1)
            y = self._lu.solve(np.ascontiguousarray(cols[self._keep]))
            xi = self._schur @ (cols[self._dense] - self._A_DS @ y)
            out = np.empty_like(cols)
            out[self._keep] = y - self._W @ xi
            out[self._dense] = xi
            return out.reshape(B.shape)
        cols = B.reshape(B.shape[0], -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            b = cols[:, j]
            x, info = spla.cg(self.A, b, rtol=self.tol, atol=0.0, maxiter=20 * self.A.shape[0],
                              M=self._M)
            res = np.linalg.norm(self.A @ x - b) / max(np.linalg.norm(b), 1e-300)
            if info != 0 or res > 10 * self.tol:
                raise SolverError("conjugate gradient did not reach tolerance", res)
            out[:, j] = x
        return out.reshape(B.shape)


def harmonic_extension(g: WeightedGraph, A, Phi, method="auto", tol=1e-10, factor=None):
    """Extend boundary data Phi (|A| x k) harmonically off A.

    Returns (F, residual) where F is n x k and residual is the largest
    |Delta F| over unconstrained vertices.
    """
    A = np.asarray(A, dtype=np.int64)
    if len(A) == 0:
        raise SolverError("boundary set is empty")
    if len(np.unique(A)) != len(A):
        raise ValueError("repeated boundary vertices")
    Phi = np.asarray(Phi, dtype=float)
    squeeze = Phi.ndim == 1
    Phi = Phi.reshape(len(A), -1)
    L = laplacian(g)
    free = np.ones(g.n, dtype=bool)
    free[A] = False
    U = np.flatnonzero(free)
    F = np.zeros((g.n, Phi.shape[1]))
    F[A] = Phi
    if len(U):
        fac = factor or _Factor(L[U][:, U], method, tol)
        F[U] = fac.solve(-(L[U][:, A] @ Phi))
        R = L[U] @ F
        scale = max(1.0, np.abs(Phi).max())
        residual = float(np.abs(R).max()) / scale
    else:
        residual = 0.0
    return (F[:, 0] if squeeze else F), residual


def _unpack(net):
    if isinstance(net, LevelGraph):
        return net.graph, net.locals, net.kind, net.z
    if isinstance(net, WeightedGraph):
        return net, net.ids, "free", None
    raise TypeError("expected a WeightedGraph or LevelGraph")


def solve_harmonic(net, A, phi, kind: str | None = None, tol: float = 1e-10,
                   method: str = "auto") -> PotentialField:
    """Energy minimizer with f = phi on A.

    On a wired quotient z is an ordinary vertex unless it is listed in A
    (use ``"@inf"`` to ground it).
    """
    g, to_local, net_kind, _ = _unpack(net)
    if kind is not None and kind != net_kind:
        raise ValueError(f"kind {kind!r} does not match a {net_kind} input")
    Ai = to_local(A)
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (len(Ai),)).copy()
    f, residual = harmonic_extension(g, Ai, phi, method, tol)
    if residual > max(tol, 1e-9) * 1e3:
        raise SolverError("harmonic residual above tolerance", residual)
    return PotentialField(g, f, Ai, phi, net_kind, residual)


def dirichlet_energy(obj, values=None) -> float:
    """Sum of c (f(x) - f(y))^2 over edges, or sum of theta^2 / c for a flow."""
    if isinstance(obj, Flow):
        return obj.energy
    if isinstance(obj, PotentialField):
        g, f = obj.graph, obj.values
    else:
        g, f = obj, np.asarray(values, dtype=float)
    u, v, c = g.edge_arrays
    return float(np.sum(c * (f[u] - f[v]) ** 2))


def net_current(g: WeightedGraph, f: np.ndarray) -> np.ndarray:
    """Delta f(x) = sum_y c(x,y) (f(x) - f(y))."""
    return laplacian(g) @ f


# ---------------------------------------------------------------------------
# Green's function, equilibrium measure


@dataclass
class GreenFunction:
    K: np.ndarray          # local indices in the quotient
    columns: np.ndarray    # n_local x |K|, row z = 0
    names: tuple

    @property
    def matrix(self) -> np.ndarray:
        return self.columns[self.K]

    def apply(self, f: np.ndarray) -> np.ndarray:
        """(G_K f)(x) = sum_{y in K} G(x, y) f(y)."""
        return self.columns @ np.asarray(f, dtype=float)


def _require_wired(q):
    if not isinstance(q, LevelGraph) or q.kind != "wired":
        raise TypeError("expected a wired quotient")


def green_matrix(q: LevelGraph, K, method="auto") -> GreenFunction:
    """Green's function of the walk killed at z_n, columns indexed by K."""
    _require_wired(q)
    Ki = q.locals(K)
    if q.z in Ki:
        raise GraphError("K must not contain the vertex at infinity")
    g = q.graph
    inner = q.interior
    L = laplacian(g)[inner][:, inner]
    rhs = np.zeros((len(inner), len(Ki)))
    rhs[Ki, np.arange(len(Ki))] = 1.0
    cols = np.zeros((g.n, len(Ki)))
    cols[inner] = _Factor(L, method).solve(rhs)
    return GreenFunction(Ki, cols, tuple(g.names[k] for k in Ki))


@dataclass
class Equilibrium:
    measure: Measure          # e_K
    capacity: float
    normalized: Measure       # e_K / cap(K)
    potential: PotentialField  # P_x[hit K before z]


def equilibrium_measure(q: LevelGraph, K, method="auto") -> Equilibrium:
    """e_K(y) = Delta phi(y) with phi = 1 on K and 0 at z_n."""
    _require_wired(q)
    Ki = q.locals(K)
    if q.z in Ki:
        raise GraphError("K must not contain the vertex at infinity")
    g = q.graph
    A = np.r_[Ki, q.z]
    phi, residual = harmonic_extension(g, A, np.r_[np.ones(len(Ki)), 0.0], method)
    e = net_current(g, phi)[Ki]
    e = np.clip(e, 0.0, None)
    names = tuple(g.names[k] for k in Ki)
    cap = float(e.sum())
    field_ = PotentialField(g, phi, A, np.r_[np.ones(len(Ki)), 0.0], "wired", residual)
    return Equilibrium(Measure(names, e), cap, Measure(names, e / cap), field_)


def richardson(levels, values) -> float:
    """Extrapolate v(n) = a + b/n + c/n^2 through the last three points."""
    n = np.asarray(levels[-3:], dtype=float)
    v = np.asarray(values[-3:], dtype=float)
    if len(n) < 3:
        return float(v[-1])
    V = np.stack([np.ones(3), 1 / n, 1 / n ** 2], axis=1)
    return float(np.linalg.solve(V, v)[0])


def capacity_sequence(graph: WeightedGraph, exhaustion: Exhaustion, K, levels) -> dict:
    caps, masses = [], []
    for n in levels:
        eq = equilibrium_measure(wire(graph, exhaustion, n), K)
        caps.append(eq.capacity)
        masses.append(eq.normalized.mass.tolist())
    diffs = np.diff(caps)
    return {"levels": list(levels), "capacity": caps, "normalized": masses,
            "monotone_decreasing": bool(np.all(diffs <= 1e-12)),
            "extrapolated": richardson(levels, caps)}


# ---------------------------------------------------------------------------
# energy-minimizing hitting functions h^y_K


def entry_fields(net, K, method="auto") -> np.ndarray:
    """Columns h^y_K for y in K (n_local x |K|).  z is unconstrained."""
    g, to_local, _, _ = _unpack(net)
    Ki = to_local(K)
    H, _ = harmonic_extension(g, Ki, np.eye(len(Ki)), method)
    return H


def entry_measure_free(graph: WeightedGraph, exhaustion: Exhaustion, K, probe,
                       level: int | None = None) -> Measure:
    """y -> h^y_K(probe) with free boundary on VG_level (default: the window)."""
    level = exhaustion.window if level is None else level
    fr = restrict(graph, exhaustion, level)
    Ki = fr.locals(K)
    p = fr.local(probe)
    names = tuple(fr.graph.names[k] for k in Ki)
    if p in Ki:
        mass = (Ki == p).astype(float)
        return Measure(names, mass, {"degenerate": True})
    H = entry_fields(fr, K)
    return Measure(names, np.clip(H[p], 0.0, 1.0), {"degenerate": False, "level": level})


def rim_entry_measures(graph: WeightedGraph, exhaustion: Exhaustion, K, level: int):
    """h^y_K at every rim vertex of VG_level, free boundary on VG_level.

    Returns (rim base indices, |rim| x |K| matrix).
    """
    fr = restrict(graph, exhaustion, level)
    H = entry_fields(fr, K)
    rim = exhaustion.rim(level)
    return rim, H[fr.locals(rim)]


def value_at_infinity(field_: PotentialField, probes) -> dict:
    """Rim-probe estimate of lim f(X_n): the values at the probes and their spread."""
    vals = field_.values[field_.graph.ids(probes)]
    return {"mean": float(vals.mean()), "min": float(vals.min()), "max": float(vals.max()),
            "spread": float(vals.max() - vals.min())}


# ---------------------------------------------------------------------------
# currents and resistances


@dataclass
class Current:
    flow: Flow
    voltage: PotentialField
    resistance: float


def unit_current(net, A, B, kind: str | None = None, method="auto") -> Current:
    """Unit current from the set A to the set B (``"@inf"`` for infinity).

    The voltage is 1 on A and 0 on B before rescaling; the returned voltage is
    that of the unit flow (so it equals the effective resistance on A).
    """
    g, to_local, net_kind, z = _unpack(net)
    if kind is not None and kind != net_kind:
        raise ValueError(f"kind {kind!r} does not match a {net_kind} input")
    if isinstance(B, str) and B in ("inf", "@inf"):
        if z is None:
            raise GraphError("a current to infinity needs a wired quotient")
        B = ["@inf"]
    Ai, Bi = to_local(A), to_local(B)
    if np.intersect1d(Ai, Bi).size:
        raise GraphError("A and B must be disjoint")
    bnd = np.r_[Ai, Bi]
    vals = np.r_[np.ones(len(Ai)), np.zeros(len(Bi))]
    v, residual = harmonic_extension(g, bnd, vals, method)
    i = net_current(g, v)
    conductance = float(i[Ai].sum())
    R = 1.0 / conductance
    v = v * R
    u, w, c = g.edge_arrays
    flow = Flow(g, c * (v[u] - v[w]))
    field_ = PotentialField(g, v, bnd, vals * R, net_kind, residual * R)
    return Current(flow, field_, R)


def effective_resistance(net, a, b, method="auto") -> float:
    return unit_current(net, [a], [b], method=method).resistance


def edge_resistances(net, edges, method="auto") -> np.ndarray:
    """Effective resistance across each (u, v) pair, one factorization total."""
    g, to_local, _, _ = _unpack(net)
    pairs = np.array([to_local([a, b]) for a, b in edges]).reshape(-1, 2)
    ground = g.n - 1
    keep = np.arange(g.n - 1)
    L = laplacian(g)[keep][:, keep]
    rhs = np.zeros((g.n, len(pairs)))
    rhs[pairs[:, 0], np.arange(len(pairs))] += 1.0
    rhs[pairs[:, 1], np.arange(len(pairs))] -= 1.0
    X = np.zeros((g.n, len(pairs)))
    X[keep] = _Factor(L, method).solve(rhs[keep])
    X[ground] = 0.0
    return X[pairs[:, 0], np.arange(len(pairs))] - X[pairs[:, 1], np.arange(len(pairs))]


def is_harmonic_off(field_: PotentialField, tol: float = 1e-8) -> bool:
    mask = np.ones(field_.graph.n, dtype=bool)
    mask[field_.boundary] = False
    d = net_current(field_.graph, field_.values)[mask]
    return bool(np.all(np.abs(d) <= tol))


def satisfies_maximum_principle(field_: PotentialField, tol: float = 1e-10) -> bool:
    b = field_.values[field_.boundary]
    return bool(field_.values.min() >= b.min() - tol and field_.values.max() <= b.max() + tol)
