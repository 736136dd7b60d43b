"""Distances, tests and the equivalence report.

The report bundles four gaps between the free and the wired picture of a
window sequence: entry law vs normalized equilibrium measure, free vs wired
effective resistance, free vs wired spanning-tree edge marginals, and the
joint law of consecutive entries of the two walks beyond infinity.
"""
from __future__ import annotations

import io
import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .forests import exact_marginals
from .graphs import Exhaustion, GraphError, WeightedGraph, central_edges, restrict, wire
from .potential import Measure, entry_fields, equilibrium_measure, laplacian
from .samplers import (InterlacementSampler, PointSample, ReflectedSampler, Trajectory,
                       process_trace, streams)

RESAMPLES = 200
DEFAULT_THRESHOLDS = {"tv": 0.05, "resistance": 1e-3, "marginal": 0.02, "entry_tv": 0.05,
                      "shrink": 0.5, "plateau": 0.2}


# ---------------------------------------------------------------------------
# distributions


def _as_dict(m) -> dict:
    if isinstance(m, Measure):
        return m.as_dict()
    return {k: float(v) for k, v in dict(m).items()}


def tv_distance(a, b, tol: float = 1e-9) -> float:
    """Half the l1 distance between two probability measures (dicts or Measures)."""
    da, db = _as_dict(a), _as_dict(b)
    for d in (da, db):
        if abs(sum(d.values()) - 1.0) > tol:
            raise ValueError("tv_distance needs normalized measures")
        if any(v < 0 for v in d.values()):
            raise ValueError("negative mass")
    keys = set(da) | set(db)
    return 0.5 * sum(abs(da.get(k, 0.0) - db.get(k, 0.0)) for k in keys)


def empirical_measure(samples, support=None) -> Measure:
    samples = np.asarray(samples)
    if support is None:
        support, counts = np.unique(samples, return_counts=True)
    else:
        support = np.asarray(support)
        pos = {s: i for i, s in enumerate(support.tolist())}
        counts = np.bincount([pos[s] for s in samples.tolist()], minlength=len(support))
    return Measure(tuple(support.tolist()), counts / max(len(samples), 1))


@dataclass
class TVReport:
    level: int | None
    measure_a: Measure
    measure_b: Measure
    tv: float
    sample_sizes: tuple
    band: tuple

    def as_dict(self) -> dict:
        return {"level": self.level, "tv": self.tv, "band": list(self.band),
                "sample_sizes": list(self.sample_sizes)}


def tv_report(samples_a, b, rng, level=None, resamples: int = RESAMPLES) -> TVReport:
    """TV between the empirical law of ``samples_a`` and either an exact Measure
    or a second sample, with a bootstrap band (always containing the estimate)."""
    rng = np.random.default_rng(rng)
    samples_a = np.asarray(samples_a)
    exact = isinstance(b, Measure)
    other = list(b.support) if exact else np.asarray(b).tolist()
    support = sorted(set(samples_a.tolist()) | set(other))
    pos = {x: i for i, x in enumerate(support)}
    ia = np.array([pos[x] for x in samples_a.tolist()], dtype=np.int64)
    k = len(support)
    if exact:
        pb = np.zeros(k)
        pb[[pos[x] for x in b.support]] = b.mass
        ib = None
    else:
        ib = np.array([pos[x] for x in other], dtype=np.int64)
        pb = np.bincount(ib, minlength=k) / len(ib)
    pa = np.bincount(ia, minlength=k) / len(ia)
    tv = 0.5 * float(np.abs(pa - pb).sum())
    boot = np.empty(resamples)
    for r in range(resamples):
        ra = np.bincount(ia[rng.integers(0, len(ia), len(ia))], minlength=k) / len(ia)
        rb = pb if exact else np.bincount(ib[rng.integers(0, len(ib), len(ib))], minlength=k) / len(ib)
        boot[r] = 0.5 * np.abs(ra - rb).sum()
    lo, hi = np.quantile(boot, [0.025, 0.975])
    sizes = (len(ia),) if exact else (len(ia), len(ib))
    return TVReport(level, Measure(tuple(support), pa), Measure(tuple(support), pb), tv, sizes,
                    (float(min(lo, tv)), float(max(hi, tv))))


def chi_square_gof(counts, probs, min_expected: float = 5.0):
    """Goodness of fit with cells of small expectation pooled into one."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    exp = probs * counts.sum()
    small = exp < min_expected
    if small.any():
        counts = np.r_[counts[~small], counts[small].sum()]
        exp = np.r_[exp[~small], exp[small].sum()]
        if exp[-1] == 0:
            counts, exp = counts[:-1], exp[:-1]
    return stats.chisquare(counts, exp)


def independence_test(a, b):
    """Chi-square test of independence for two paired categorical samples."""
    a, b = np.asarray(a), np.asarray(b)
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((len(ua), len(ub)))
    np.add.at(table, (ia, ib), 1)
    table = table[table.sum(1) > 0][:, table.sum(0) > 0]
    if min(table.shape) < 2:
        return np.nan, 1.0, table
    res = stats.chi2_contingency(table, correction=False)
    return float(res.statistic), float(res.pvalue), table


# ---------------------------------------------------------------------------
# path metric


@dataclass
class PathMetricValue:
    d: float
    horizon: float
    error: float = 0.0


_END = -2


def _segments(f: Trajectory):
    if f.holds is None:
        raise ValueError("path metric needs holding times")
    if np.any(f.holds < 0) or not np.all(np.isfinite(f.holds[:-1])) or np.any(np.isnan(f.holds)):
        raise ValueError("breakpoints are not sorted: negative or infinite inner holds")
    keep = f.holds > 0
    ends = np.cumsum(f.holds[keep])
    return ends, f.steps[keep]


def path_metric(f: Trajectory, g: Trajectory, horizon: float = np.inf) -> PathMetricValue:
    """d(f, g) = int_0^inf e^{-t} 1{f(t) != g(t)} dt for piecewise-constant paths.

    A path sits in a terminal state after its last hold.  The integral is cut
    at ``horizon``; the neglected tail is at most e^{-horizon}.
    """
    ef, sf = _segments(f)
    eg, sg = _segments(g)
    cuts = np.unique(np.r_[0.0, ef, eg])
    if np.isfinite(horizon):
        cuts = np.unique(np.r_[cuts[cuts < horizon], horizon])
    a, b = cuts[:-1], cuts[1:]
    if not len(a):
        return PathMetricValue(0.0, float(horizon))
    kf = np.searchsorted(ef, a, side="right")
    kg = np.searchsorted(eg, a, side="right")
    vf = np.where(kf < len(sf), sf[np.minimum(kf, len(sf) - 1)] if len(sf) else _END, _END)
    vg = np.where(kg < len(sg), sg[np.minimum(kg, len(sg) - 1)] if len(sg) else _END, _END)
    diff = vf != vg
    with np.errstate(invalid="ignore"):
        d = float(np.sum(np.exp(-a[diff]) * -np.expm1(-(b[diff] - a[diff]))))
    tail = 0.0
    if np.isfinite(horizon):
        last = max(ef[-1] if len(ef) else 0.0, eg[-1] if len(eg) else 0.0)
        tail = float(np.exp(-horizon)) if last > horizon else 0.0
    return PathMetricValue(min(d, 1.0), float(horizon), tail)


# ---------------------------------------------------------------------------
# truncation curve


def truncation_curve(samples, exhaustion: Exhaustion, levels, reference: int | None = None,
                     rng=0, resamples: int = RESAMPLES) -> dict:
    """Mean d(Z^N, Z^n) over coupled replicas.

    Every sample must be an interlacement sample whose K is the reference level
    set VG_N; Z^n is read off the same sample by observing excursions only from
    their first visit to VG_n.
    """
    levels = list(levels)
    if reference is None:
        reference = max(levels)
    if max(levels) > reference:
        raise ValueError("levels must not exceed the reference level")
    ref_set = exhaustion.level(reference)
    D = np.zeros((len(samples), len(levels)))
    for i, s in enumerate(samples):
        if not isinstance(s, PointSample):
            raise TypeError("truncation_curve needs interlacement point samples")
        if len(s.K) != len(ref_set) or not np.array_equal(np.sort(s.K), ref_set):
            raise ValueError("sample is not coupled to the reference level (K != VG_N)")
        top = process_trace(s)
        for j, n in enumerate(levels):
            D[i, j] = path_metric(top, process_trace(s, exhaustion.level(n))).d
    mean = D.mean(axis=0)
    rng = np.random.default_rng(rng)
    boot = np.array([D[rng.integers(0, len(D), len(D))].mean(axis=0) for _ in range(resamples)])
    lo, hi = np.quantile(boot, [0.025, 0.975], axis=0) if len(D) else (mean, mean)
    x = np.repeat(np.asarray(levels)[None, :], len(D), axis=0).ravel()
    rho, p = stats.spearmanr(x, D.ravel()) if len(D) > 1 else (np.nan, np.nan)
    return {"levels": levels, "reference": reference, "mean": mean.tolist(),
            "band": [np.minimum(lo, mean).tolist(), np.maximum(hi, mean).tolist()],
            "spearman_rho": float(rho), "spearman_p": float(p), "raw": D}


# ---------------------------------------------------------------------------
# equivalence report


def level_diagnostics(graph: WeightedGraph, exhaustion: Exhaustion, K, n: int, panel) -> dict:
    """Exact gaps at level n: rim entry-law TV, resistance gap, marginal gap."""
    fr = restrict(graph, exhaustion, n)
    q = wire(graph, exhaustion, n)
    eq = equilibrium_measure(q, K)
    Hf = entry_fields(fr, K)
    rim = fr.locals(exhaustion.rim(n))
    tv = 0.5 * np.abs(Hf[rim] - eq.normalized.mass).sum(axis=1)
    k1 = fr.locals(K[:1])[0]
    RF = 1.0 / float((laplacian(fr.graph) @ Hf[:, 0])[k1])
    Hw = entry_fields(q, K)
    RW = 1.0 / float((laplacian(q.graph) @ Hw[:, 0])[q.local(K[0])])
    mf = exact_marginals(fr, edges=panel).prob
    mw = exact_marginals(q, edges=panel).prob
    return {"level": n, "entry_tv": float(tv.max()), "entry_tv_mean": float(tv.mean()),
            "R_free": RF, "R_wired": RW, "resistance_gap": abs(RF - RW) / RF,
            "marginal_gap": float(np.max(np.abs(mf - mw))), "capacity": eq.capacity,
            "wired_marginal_max": float(mw.max()), "free_marginal_min": float(mf.min())}


def classify(values, eps: float, shrink: float = 0.5, plateau: float = 0.2) -> str:
    """'decreasing', 'bounded_away' or 'undetermined' for a sequence of gaps."""
    v = np.asarray(values, dtype=float)
    if len(v) >= 2 and v[-1] < shrink * v[0] and v[-1] < eps:
        return "decreasing"
    if len(v) >= 3:
        last = v[-3:]
        if last.min() > eps and (last.max() - last.min()) <= plateau * last.max():
            return "bounded_away"
    return "undetermined"


def pair_codes(entries, support) -> np.ndarray:
    """Encode consecutive entries (e_k, e_{k+1}) as integers."""
    pos = {int(s): i for i, s in enumerate(support)}
    idx = np.array([pos[int(x)] for x in entries], dtype=np.int64)
    return idx[:-1] * len(support) + idx[1:]


def entry_pair_diagnostic(graph, exhaustion, K, level: int, excursions: int, rng) -> dict:
    """TV between the laws of consecutive entries into K: interlacement roots
    (in label order) vs free-trace reflected walk killed at ``level``."""
    topo, _ = streams(rng)
    Kb = graph.ids(K)
    q = wire(graph, exhaustion, level)
    ri = InterlacementSampler(q, K)
    s = ri.sample(excursions / ri.capacity, topo)
    roots = s.root_vertices()[s.order()]
    first = int(min(exhaustion.shell[Kb].max(), level - 1))
    first = min(r for r in exhaustion.radii if r >= first)
    refl = ReflectedSampler(graph, exhaustion, first, level, "free-trace", target=K)
    tr = refl.sample(topo, excursions=excursions)
    ent = tr.entries()
    a, b = pair_codes(roots, Kb), pair_codes(ent, Kb)
    rep = tv_report(b, a, topo, level=level)
    return {"level": level, "tv": rep.tv, "band": list(rep.band), "interlacement_pairs": len(a),
            "reflected_pairs": len(b)}


@dataclass
class Verdict:
    document: dict
    csv: str = ""
    runtime: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return self.document["verdict"]

    def to_json(self) -> str:
        return json.dumps(self.document, indent=2, sort_keys=True)


def equivalence_report(graph: WeightedGraph, exhaustion: Exhaustion, K, levels, budgets=None,
                       thresholds=None, seed: int = 0, center=None, panel_size: int = 20,
                       label: str = "") -> Verdict:
    """Four free-vs-wired diagnostics over a level sequence and a verdict.

    consistent: diagnostics 1-3 all decreasing and the entry-pair TV below its
    threshold; inconsistent: any of 1-3 bounded away from zero; otherwise
    inconclusive.
    """
    th = dict(DEFAULT_THRESHOLDS, **(thresholds or {}))
    budgets = dict({"excursions": 20_000, "seconds": None}, **(budgets or {}))
    levels = sorted(levels)
    if len(levels) < 3:
        raise ValueError("need at least three levels")
    Kb = graph.ids(K)
    if np.any(exhaustion.shell[Kb] > levels[0]):
        raise GraphError("K must lie inside the first level")
    center = Kb[0] if center is None else graph.ids(center)[0]
    panel = central_edges(graph, int(center), panel_size, within=exhaustion.level(levels[0]))
    t0 = time.perf_counter()
    rows, partial = [], False
    for n in levels:
        if budgets["seconds"] is not None and time.perf_counter() - t0 > budgets["seconds"]:
            partial = True
            break
        rows.append(level_diagnostics(graph, exhaustion, K, n, panel))
    done = [r["level"] for r in rows]
    diag = {}
    for key, eps_key in (("entry_tv", "tv"), ("resistance_gap", "resistance"),
                         ("marginal_gap", "marginal")):
        vals = [r[key] for r in rows]
        diag[key] = {"values": vals, "threshold": th[eps_key],
                     "status": classify(vals, th[eps_key], th["shrink"], th["plateau"])}
    entry = None
    if not partial and budgets["excursions"]:
        entry = entry_pair_diagnostic(graph, exhaustion, K, levels[-1], int(budgets["excursions"]),
                                      seed)
        entry["threshold"] = th["entry_tv"]
        entry["status"] = "pass" if entry["tv"] < th["entry_tv"] else "fail"
    status = [diag[k]["status"] for k in ("entry_tv", "resistance_gap", "marginal_gap")]
    if partial:
        verdict = "inconclusive"
    elif "bounded_away" in status:
        verdict = "inconsistent"
    elif all(s == "decreasing" for s in status) and entry is not None and entry["status"] == "pass":
        verdict = "consistent"
    else:
        verdict = "inconclusive"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["level", "entry_tv", "entry_tv_mean", "R_free", "R_wired", "resistance_gap",
            "marginal_gap", "capacity"]
    w.writerow(cols)
    for r in rows:
        w.writerow([r["level"]] + [repr(float(r[c])) for c in cols[1:]])
    doc = {"label": label, "verdict": verdict, "levels": done, "K": [graph.names[k] for k in Kb],
           "graph": {"vertices": graph.n, "edges": graph.num_edges},
           "panel": [[graph.names[a], graph.names[b]] for a, b in panel],
           "thresholds": th, "budgets": budgets, "seed": seed, "partial": partial,
           "diagnostics": diag, "entry_pairs": entry, "appendix_csv": buf.getvalue()}
    return Verdict(doc, buf.getvalue(), {"seconds": time.perf_counter() - t0})
