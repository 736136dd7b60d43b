"""Monte Carlo engines: plain and conditioned walks, the windowed interlacement
point process, its interlacement ordering, and the truncated reflected walk.

Vertex sequences are stored as base-window indices with ``INF`` (-1) marking
a visit to infinity (a kill at the wired vertex).  Every sampler splits its
generator into a topology stream and a holding-time stream, so that the
discrete skeleton of a sample does not depend on the rate schedule.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .graphs import Exhaustion, GraphError, LevelGraph, WeightedGraph, ZNAME, restrict, wire
from .potential import entry_fields, equilibrium_measure

INF = kern.INF
MAX_STEPS = 10_000_000


class WalkBudgetError(RuntimeError):
    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


# ---------------------------------------------------------------------------
# random streams


def streams(rng):
    """Split a seed or Generator into (topology, holds) generators."""
    if not isinstance(rng, np.random.Generator):
        if rng is None:
            raise ValueError("a seed or Generator is required")
        rng = np.random.default_rng(rng)
    topo, hold = rng.spawn(2)
    return topo, hold


def _kernel_seed(topo: np.random.Generator) -> int:
    return int(topo.integers(0, 2 ** 62))


def _tables(g: WeightedGraph):
    t = g.__dict__.get("_walk_tables")
    if t is None:
        t = (g.C.indptr.astype(np.int64), g.C.indices.astype(np.int64), g.cumulative_kernel)
        g.__dict__["_walk_tables"] = t
    return t


# ---------------------------------------------------------------------------
# data types


@dataclass
class Trajectory:
    """A vertex path with optional holding times.

    ``steps`` holds base-window indices; INF entries separate excursions and
    carry a zero hold (they mark an instantaneous visit to infinity).
    """

    steps: np.ndarray
    holds: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    names: tuple | None = None

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        if self.holds is not None:
            self.holds = np.asarray(self.holds, dtype=float)
            if len(self.holds) != len(self.steps):
                raise ValueError("holds and steps differ in length")

    def __len__(self):
        return len(self.steps)

    @property
    def times(self) -> np.ndarray:
        """Jump-in time of every step."""
        if self.holds is None:
            raise ValueError("trajectory carries no holding times")
        return np.r_[0.0, np.cumsum(self.holds)[:-1]] if len(self.holds) else np.zeros(0)

    @property
    def duration(self) -> float:
        return float(np.cumsum(self.holds)[-1]) if self.holds is not None and len(self.holds) else 0.0

    def excursions(self) -> list[np.ndarray]:
        """Maximal INF-free segments."""
        cut = np.flatnonzero(self.steps == INF)
        parts = np.split(self.steps, cut)
        out = [parts[0]] + [p[1:] for p in parts[1:]]
        return [p for p in out if len(p)]

    def entries(self) -> np.ndarray:
        """First vertex of every excursion that follows infinity."""
        s = self.steps
        after = np.flatnonzero(s[:-1] == INF) + 1
        if self.meta.get("start") == "inf" and len(s) and s[0] != INF:
            after = np.r_[0, after]
        return s[after[s[after] != INF]] if len(after) else np.zeros(0, dtype=np.int64)

    def exits(self) -> np.ndarray:
        """Last vertex before every INF marker."""
        s = self.steps
        k = np.flatnonzero(s == INF)
        k = k[k > 0]
        return s[k - 1][s[k - 1] != INF]

    def check(self, graph: WeightedGraph) -> None:
        """Raise unless consecutive non-INF steps are adjacent and holds are positive."""
        s = self.steps
        a, b = s[:-1], s[1:]
        ok = (a != INF) & (b != INF)
        if ok.any() and np.any(np.asarray(graph.C[a[ok], b[ok]]).ravel() <= 0):
            raise GraphError("trajectory jumps along a non-edge")
        if self.holds is not None and np.any(self.holds[s != INF] <= 0):
            raise ValueError("nonpositive holding time")

    def vertex_names(self) -> list[str]:
        if self.names is None:
            raise ValueError("trajectory has no vertex names attached")
        return [ZNAME if x == INF else self.names[x] for x in self.steps]


@dataclass
class RateSchedule:
    """Per-vertex jump rates m(x); holds are Exp(1)/m(x)."""

    rate: np.ndarray
    floor: float

    def __post_init__(self):
        self.rate = np.asarray(self.rate, dtype=float)
        if self.floor <= 0 or np.any(self.rate < self.floor):
            raise ValueError("rates must stay above a positive floor")

    def holds(self, steps: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        steps = np.asarray(steps)
        e = rng.standard_exponential(len(steps))
        m = self.rate[np.where(steps == INF, 0, steps)]
        return np.where(steps == INF, 0.0, e / m)

    def mean_hold(self, v) -> float:
        return 1.0 / float(self.rate[v])


def default_rate(exhaustion: Exhaustion, base: float = 1.0, growth: float = 1.0) -> RateSchedule:
    """m(x) = base * growth**shell(x)."""
    if base <= 0:
        raise ValueError("base rate must be positive")
    if growth < 1:
        raise ValueError("growth must be at least 1")
    return RateSchedule(base * float(growth) ** exhaustion.shell.astype(float), base)


# ---------------------------------------------------------------------------
# plain walks


def _graph_of(net):
    if isinstance(net, LevelGraph):
        return net.graph, net.locals, net.base_index, net.base.names
    if isinstance(net, WeightedGraph):
        return net, net.ids, np.arange(net.n), net.names
    raise TypeError("expected a WeightedGraph or LevelGraph")


def stop_mask(net, stop) -> np.ndarray:
    """Boolean mask over the (local) vertices of ``net`` from a stop rule.

    ``stop`` is a callable on local index arrays, ``"@inf"`` (the wired vertex)
    or a collection of vertices.
    """
    g, to_local, _, _ = _graph_of(net)
    if callable(stop):
        mask = np.asarray(stop(np.arange(g.n)), dtype=bool)
    else:
        if isinstance(stop, str):
            stop = [stop]
        mask = np.zeros(g.n, dtype=bool)
        mask[to_local(list(stop))] = True
    return mask.astype(np.uint8)


def walks(net, starts, stop, rng, min_steps: int = 0, max_steps: int = MAX_STEPS):
    """Independent walks on ``net`` (local indices) from each start until the
    stop rule holds after at least ``min_steps`` steps.

    Returns (flat local path, offsets).
    """
    g = _graph_of(net)[0]
    indptr, indices, cum = _tables(g)
    mask = stop if isinstance(stop, np.ndarray) and stop.dtype == np.uint8 else stop_mask(net, stop)
    starts = np.asarray(starts, dtype=np.int64)
    seed = rng if isinstance(rng, (int, np.integer)) else _kernel_seed(rng)
    path, off, status = kern.walk_batch(indptr, indices, cum, starts, mask, min_steps, max_steps, seed)
    if status != kern.OK:
        raise WalkBudgetError(f"step budget {max_steps} exceeded", path[off[-2]:])
    return path, off


def walk(net, start, stop, rng, rate: RateSchedule | None = None,
         max_steps: int = MAX_STEPS) -> Trajectory:
    """Random walk with kernel p(x,y) = c(x,y)/pi(x) from ``start`` until ``stop``."""
    g, to_local, base_index, names = _graph_of(net)
    topo, hold = streams(rng)
    s = to_local([start])
    try:
        path, _ = walks(net, s, stop, topo, 0, max_steps)
    except WalkBudgetError as exc:
        exc.partial = Trajectory(base_index[exc.partial], None, {"start": str(start)}, tuple(names))
        raise
    steps = base_index[path]
    holds = rate.holds(steps, hold) if rate is not None else None
    return Trajectory(steps, holds, {"start": str(start)}, tuple(names))


def martingale_limit(net, values, start, rng, walks_: int = 1000) -> dict:
    """Average of ``values`` at the last vertex before infinity along walks from
    ``start`` on a wired quotient: a sampled estimate of lim f(X_n)."""
    if not isinstance(net, LevelGraph) or net.z is None:
        raise TypeError("expected a wired quotient")
    s = np.full(walks_, net.local(start), dtype=np.int64)
    path, off = walks(net, s, [ZNAME], rng)
    last = path[off[1:] - 2]
    vals = np.asarray(values, dtype=float)[last]
    return {"mean": float(vals.mean()), "std": float(vals.std(ddof=1) / np.sqrt(walks_)),
            "spread": float(vals.max() - vals.min())}


# ---------------------------------------------------------------------------
# walks conditioned never to return


class NoReturnSampler:
    """Walks from K conditioned never to return to K on a wired quotient.

    The conditioning is a Doob transform by h(x) = P_x[walk reaches z before K];
    the rejection sampler (run the plain walk, discard returns) is the reference.
    """

    def __init__(self, q: LevelGraph, K):
        if not isinstance(q, LevelGraph) or q.kind != "wired":
            raise TypeError("expected a wired quotient")
        self.q = q
        self.K = q.locals(K)
        eq = equilibrium_measure(q, K)
        g = q.graph
        h = 1.0 - eq.potential.values
        h[self.K] = 0.0
        h[q.z] = 1.0
        self.h = h
        self.escape = eq.measure.mass / g.pi[self.K]
        if np.max(self.escape) <= 1e-14:
            raise GraphError("escape probability vanishes: window too small")
        C = g.C
        self._h_cum = kern.cumulative_rows(C.indptr, C.indices, C.data * h[C.indices])
        self._zmask = stop_mask(q, [ZNAME])
        self._kzmask = self._zmask.copy()
        self._kzmask[self.K] = 1
        self.equilibrium = eq

    def h_transform(self, starts, seed: int, max_steps=MAX_STEPS):
        indptr, indices, _ = _tables(self.q.graph)
        starts = np.asarray(starts, dtype=np.int64)
        path, off, status = kern.walk_batch(indptr, indices, self._h_cum, starts, self._zmask,
                                            0, max_steps, seed)
        if status != kern.OK:
            raise WalkBudgetError("step budget exceeded in conditioned walk", path[off[-2]:])
        return path, off

    def rejection(self, starts, topo: np.random.Generator, max_rounds: int = 100_000):
        """Returns (flat path, offsets, attempts per start)."""
        starts = np.asarray(starts, dtype=np.int64)
        indptr, indices, cum = _tables(self.q.graph)
        done = [None] * len(starts)
        attempts = np.zeros(len(starts), dtype=np.int64)
        pending = np.arange(len(starts))
        for _ in range(max_rounds):
            if not len(pending):
                break
            path, off, status = kern.walk_batch(indptr, indices, cum, starts[pending], self._kzmask,
                                                1, MAX_STEPS, _kernel_seed(topo))
            if status != kern.OK:
                raise WalkBudgetError("step budget exceeded in rejection sampler")
            attempts[pending] += 1
            ends = path[off[1:] - 1]
            ok = ends == self.q.z
            for j in np.flatnonzero(ok):
                done[pending[j]] = path[off[j]:off[j + 1]]
            pending = pending[~ok]
        else:
            raise WalkBudgetError("rejection sampler did not finish")
        lengths = np.array([len(p) for p in done], dtype=np.int64)
        flat = np.concatenate(done) if done else np.zeros(0, dtype=np.int64)
        return flat, np.r_[0, np.cumsum(lengths)], attempts


def walk_conditioned_no_return(q: LevelGraph, start, K, rng, method: str = "h-transform",
                               rate: RateSchedule | None = None) -> Trajectory:
    """Walk from start in K conditioned never to return to K, killed at z."""
    sampler = NoReturnSampler(q, K)
    s = q.locals([start])
    if s[0] not in sampler.K:
        raise GraphError("start must lie in K")
    topo, hold = streams(rng)
    if method == "h-transform":
        path, _ = sampler.h_transform(s, _kernel_seed(topo))
        meta = {"start": str(start), "method": method}
    elif method == "rejection":
        path, _, attempts = sampler.rejection(s, topo)
        meta = {"start": str(start), "method": method, "attempts": int(attempts[0])}
    else:
        raise ValueError(f"unknown method {method!r}")
    steps = q.base_index[path]
    holds = rate.holds(steps, hold) if rate is not None else None
    return Trajectory(steps, holds, meta, tuple(q.base.names))


# ---------------------------------------------------------------------------
# random interlacements in a window


@dataclass
class PointSample:
    """Excursions of the interlacement process that hit K, with labels u.

    Each excursion is stored as (reversed backward leg, root, forward leg) in
    base indices with the kills at infinity dropped; ``roots[i]`` is the
    position of the first K visit inside excursion i.
    """

    steps: np.ndarray
    offsets: np.ndarray
    roots: np.ndarray
    labels: np.ndarray
    holds: np.ndarray | None
    K: np.ndarray
    window_level: int
    u_max: float
    capacity: float
    names: tuple = ()

    @property
    def count(self) -> int:
        return len(self.labels)

    def excursion(self, i: int) -> Trajectory:
        a, b = self.offsets[i], self.offsets[i + 1]
        h = None if self.holds is None else self.holds[a:b]
        return Trajectory(self.steps[a:b], h, {"start": "inf", "root": int(self.roots[i]),
                                               "label": float(self.labels[i])}, self.names)

    @property
    def excursions(self) -> list[tuple[Trajectory, float]]:
        return [(self.excursion(i), float(self.labels[i])) for i in range(self.count)]

    def root_vertices(self) -> np.ndarray:
        return self.steps[self.offsets[:-1] + self.roots]

    def order(self) -> np.ndarray:
        """Excursion indices sorted by label, ties broken by index."""
        return np.lexsort((np.arange(self.count), self.labels))


class InterlacementSampler:
    """Prepared sampler for the interlacement excursions hitting K, realized
    on the wired quotient at the working level (z plays infinity)."""

    def __init__(self, q: LevelGraph, K):
        self.q = q
        self.noreturn = NoReturnSampler(q, K)
        eq = self.noreturn.equilibrium
        self.K_local = self.noreturn.K
        self.K = q.base_index[self.K_local]
        self.capacity = eq.capacity
        self.law = eq.normalized.mass
        self._zmask = self.noreturn._zmask

    def sample(self, u_max: float, rng, rate: RateSchedule | None = None,
               backward: str = "h-transform") -> PointSample:
        if u_max < 0:
            raise ValueError("u_max must be nonnegative")
        topo, hold = streams(rng)
        count = int(topo.poisson(u_max * self.capacity)) if u_max > 0 else 0
        roots = self.K_local[topo.choice(len(self.K_local), size=count, p=self.law)]
        labels = topo.uniform(0.0, u_max, size=count)
        q = self.q
        fwd, foff = walks(q, roots, self._zmask, _kernel_seed(topo))
        if backward == "h-transform":
            bwd, boff = self.noreturn.h_transform(roots, _kernel_seed(topo))
        elif backward == "rejection":
            bwd, boff, _ = self.noreturn.rejection(roots, topo)
        else:
            raise ValueError(f"unknown backward method {backward!r}")
        pieces, root_pos, lengths = [], np.zeros(count, dtype=np.int64), np.zeros(count, dtype=np.int64)
        for i in range(count):
            back = bwd[boff[i] + 1:boff[i + 1] - 1][::-1]
            front = fwd[foff[i]:foff[i + 1] - 1]
            pieces.append(back)
            pieces.append(front)
            root_pos[i] = len(back)
            lengths[i] = len(back) + len(front)
        local = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
        steps = q.base_index[local]
        holds = rate.holds(steps, hold) if rate is not None else None
        return PointSample(steps, np.r_[0, np.cumsum(lengths)], root_pos, labels, holds,
                           self.K, q.level, float(u_max), self.capacity, tuple(q.base.names))


def sample_interlacement(q: LevelGraph, K, u_max: float, rate: RateSchedule | None = None,
                         rng=None, backward: str = "h-transform") -> PointSample:
    return InterlacementSampler(q, K).sample(u_max, rng, rate, backward)


@dataclass
class VisitOrder:
    """Visits in interlacement order with jump-in times T(m, n)."""

    excursion: np.ndarray
    step: np.ndarray      # index relative to the root (backward leg negative)
    vertex: np.ndarray
    hold: np.ndarray
    T: np.ndarray

    @property
    def total_time(self) -> float:
        return float(self.T[-1] + self.hold[-1]) if len(self.T) else 0.0


def interlacement_order(sample: PointSample) -> VisitOrder:
    """Order all visits by (label, step) and accumulate holding times."""
    if sample.holds is None:
        raise ValueError("interlacement ordering needs holding times")
    order = sample.order()
    off = sample.offsets
    idx = [np.arange(off[m], off[m + 1]) for m in order]
    flat = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
    exc = np.repeat(order, [off[m + 1] - off[m] for m in order]).astype(np.int64)
    step = flat - off[exc] - sample.roots[exc]
    hold = sample.holds[flat]
    T = np.r_[0.0, np.cumsum(hold)[:-1]] if len(hold) else np.zeros(0)
    return VisitOrder(exc, step, sample.steps[flat], hold, T)


def process_trace(sample: PointSample, within=None) -> Trajectory:
    """The concatenated process built from a point sample.

    Every excursion that meets ``within`` (default: its own K) is observed from
    its first visit to that set until it reaches infinity; the observed pieces
    are joined in label order, each followed by an INF marker.
    """
    if sample.holds is None:
        raise ValueError("process trace needs holding times")
    n = len(sample.names) if sample.names else int(sample.steps.max(initial=0)) + 1
    mask = np.zeros(n, dtype=bool)
    mask[sample.K if within is None else np.asarray(within, dtype=np.int64)] = True
    steps, holds = [], []
    for m in sample.order():
        a, b = sample.offsets[m], sample.offsets[m + 1]
        hit = np.flatnonzero(mask[sample.steps[a:b]])
        if not len(hit):
            continue
        steps += [sample.steps[a + hit[0]:b], [INF]]
        holds += [sample.holds[a + hit[0]:b], [0.0]]
    if not steps:
        return Trajectory(np.zeros(0, dtype=np.int64), np.zeros(0), {"start": "inf"}, sample.names)
    return Trajectory(np.concatenate(steps), np.concatenate(holds), {"start": "inf"}, sample.names)


# ---------------------------------------------------------------------------
# truncated reflected walk


class ReflectedSampler:
    """Walk reflected at infinity, observed on the target set VG_n.

    The walk lives on the wired quotient at level ``rim``; stepping into z is
    a visit to infinity.  Re-entry into the target follows either the
    normalized equilibrium measure (``wired``) or the free hitting law
    y -> h^y(x_exit) evaluated at the vertex the walk left from
    (``free-trace``).
    """

    def __init__(self, graph: WeightedGraph, exhaustion: Exhaustion, n: int, rim: int | None = None,
                 mode: str = "wired", target=None):
        if rim is None:
            rim = min(2 * n, exhaustion.window - 1)
        if not n < rim < exhaustion.window:
            raise GraphError(f"need level {n} < rim {rim} < window {exhaustion.window}")
        if mode not in ("wired", "free-trace"):
            raise ValueError(f"unknown entry mode {mode!r}")
        self.graph, self.exhaustion, self.n, self.rim, self.mode = graph, exhaustion, n, rim, mode
        self.target = exhaustion.level(n) if target is None else graph.ids(target)
        q = wire(graph, exhaustion, rim)
        self.q = q
        tloc = q.locals(self.target)
        eq = equilibrium_measure(q, self.target)
        rows = [eq.normalized.mass]
        exit_row = np.zeros(q.graph.n, dtype=np.int64)
        if mode == "free-trace":
            fr = restrict(graph, exhaustion, rim)
            H = entry_fields(fr, self.target)
            exits = q.graph.neighbors(q.z)
            Hx = np.clip(H[fr.locals(q.base_index[exits])], 0.0, None)
            rows += list(Hx / Hx.sum(axis=1, keepdims=True))
            exit_row[exits] = np.arange(1, len(exits) + 1)
        self.entry_law = np.array(rows)
        self._entry_cum = np.cumsum(self.entry_law, axis=1)
        self._entry_cum[:, -1] = 1.0
        self._entry_vertices = tloc
        self._exit_row = exit_row
        self.equilibrium = eq

    def sample(self, rng, excursions: int | None = None, duration: float = np.inf,
               cover: bool = False, start=None, rate: RateSchedule | None = None,
               chunk: int = 64, max_excursions: int = 1_000_000) -> Trajectory:
        if excursions is None and not cover and not np.isfinite(duration):
            raise ValueError("give a number of excursions, a finite duration or cover=True")
        if np.isfinite(duration) and rate is None:
            raise ValueError("a duration needs a rate schedule")
        topo, hold = streams(rng)
        q = self.q
        indptr, indices, cum = _tables(q.graph)
        parts, hparts = [], []
        last_exit = -1
        if start is not None:
            s = q.locals([start])
            path, _ = walks(q, s, self._zmask(), _kernel_seed(topo))
            prefix = path.copy()
            prefix[-1] = INF
            last_exit = int(path[-2]) if len(path) > 1 else -1
            parts.append(prefix)
            if rate is not None:
                hparts.append(rate.holds(q.base_index[prefix], hold))
        done = 0
        visited = np.zeros(q.graph.n, dtype=bool)
        tmask = np.zeros(q.graph.n, dtype=bool)
        tmask[self._entry_vertices] = True
        elapsed = sum(float(h.sum()) for h in hparts)
        stop_at = None
        while True:
            m = chunk if excursions is None else min(chunk, excursions - done)
            if m <= 0:
                break
            steps, last_exit, status = kern.reflected_chunk(
                indptr, indices, cum, q.z, self._entry_cum, self._entry_vertices, self._exit_row,
                last_exit, m, MAX_STEPS, _kernel_seed(topo))
            if status != kern.OK:
                raise WalkBudgetError("step budget exceeded in reflected walk")
            parts.append(steps)
            if rate is not None:
                h = rate.holds(q.base_index[steps], hold)
                hparts.append(h)
                elapsed += float(h.sum())
            done += m
            if cover:
                visited[steps[steps != INF]] = True
                if np.all(visited[tmask]):
                    stop_at = "cover"
                    break
            if elapsed >= duration:
                stop_at = "duration"
                break
            if done >= max_excursions:
                break
        local = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        holds = np.concatenate(hparts) if hparts else None
        if stop_at == "cover":
            first = np.zeros(q.graph.n, dtype=np.int64)
            pos = np.flatnonzero(local != INF)
            order = local[pos]
            uniq, where = np.unique(order, return_index=True)
            first[uniq] = pos[where]
            p = int(first[self._entry_vertices].max())
            cut = p + int(np.argmax(local[p:] == INF)) + 1
            local = local[:cut]
            holds = None if holds is None else holds[:cut]
        if np.isfinite(duration) and holds.sum() >= duration:
            starts = np.r_[0.0, np.cumsum(holds)[:-1]]
            k = max(int(np.searchsorted(starts, duration, side="left")), 1)
            local, holds = local[:k], holds[:k].copy()
            holds[-1] = duration - starts[k - 1]
        steps = q.base_index[local]
        meta = {"start": "inf" if start is None else str(start), "mode": self.mode, "level": self.n,
                "rim": self.rim, "excursions": int(np.sum(local == INF)),
                "covered": bool(np.all(np.isin(self.target, steps)))}
        return Trajectory(steps, holds, meta, tuple(self.graph.names))

    def _zmask(self):
        return stop_mask(self.q, [ZNAME])


def sample_reflected_truncated(graph: WeightedGraph, exhaustion: Exhaustion, n: int, rim: int | None = None,
                               duration: float = np.inf, rate: RateSchedule | None = None,
                               entry_mode: str = "wired", rng=None, excursions: int | None = None,
                               cover: bool = False, start=None, target=None) -> Trajectory:
    """Truncated reflected walk X^n: excursions from VG_n (or ``target``) to
    infinity, joined by INF markers.  See ``ReflectedSampler``."""
    s = ReflectedSampler(graph, exhaustion, n, rim, entry_mode, target)
    return s.sample(rng, excursions=excursions, duration=duration, cover=cover, start=start, rate=rate)
