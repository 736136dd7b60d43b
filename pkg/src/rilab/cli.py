"""Command-line entry point.

Every command resolves a flat configuration (INI file, then flags, then
defaults), writes its artifacts into an output directory together with a
manifest, and stamps each artifact with the configuration hash.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .compare import equivalence_report
from .forests import edge_frequencies, exact_marginals, wilson
from .graphs import (FAMILIES, Exhaustion, GraphError, build_family, central_edges, default_K,
                     read_exhaustion, read_graph, restrict, wire, write_exhaustion, write_graph)
from .potential import capacity_sequence, entry_measure_free, equilibrium_measure, green_matrix
from .samplers import (InterlacementSampler, ReflectedSampler, default_rate, interlacement_order,
                       streams)

OUT_ENV = "RILAB_OUT"

DEFAULTS = {
    "graph": {"family": "zd_box", "dim": "3", "radius": "6", "branching": "2", "depth": "8",
              "factor": "path", "size": "2", "rule": "geometric:0.5", "file": "", "exhaustion": ""},
    "potential": {"K": "", "levels": "", "probe": "auto-rim"},
    "sample": {"umax": "1.0", "level": "", "rim": "", "mode": "wired", "excursions": "1000",
               "rate_base": "1.0", "rate_growth": "1.0"},
    "forest": {"kind": "wired", "level": "", "samples": "1000", "panel": "", "panel_size": "20"},
    "compare": {"levels": "", "excursions": "20000", "max_seconds": ""},
    "run": {"cmd": "", "seed": "", "out": "", "jobs": "1"},
}

SUITE = [
    {"label": "zd3", "family": "zd_box", "params": {"d": 3, "radius": 13}, "levels": "4:12",
     "seed": 20240101, "expected": "consistent"},
    {"label": "binary_tree", "family": "regular_tree", "params": {"branching": 2, "depth": 13},
     "levels": "4:12", "seed": 20240102, "expected": "inconsistent"},
    {"label": "two_sheet", "family": "two_sheet", "params": {"d": 3, "radius": 10}, "levels": "3:9",
     "seed": 20240103, "expected": "inconsistent"},
]


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def parse_levels(text: str, ex: Exhaustion, floor: int = 1) -> list[int]:
    """``a:b``, ``a,b,c`` or empty (up to nine levels below the window, from ``floor``)."""
    if not text:
        hi = ex.window - 1
        return [r for r in ex.radii if max(floor, hi - 8) <= r <= hi]
    if ":" in text:
        a, b = (int(t) for t in text.split(":"))
        return list(range(a, b + 1))
    return [int(t) for t in text.split(",") if t]


def config_hash(cfg: dict) -> str:
    """Hash of everything that can change results (not the output path or job count)."""
    cfg = {k: dict(v) for k, v in cfg.items()} if "run" in cfg else cfg
    if "run" in cfg:
        cfg["run"].pop("out", None)
        cfg["run"].pop("jobs", None)
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def resolve_config(args) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if getattr(args, "config", None):
        if not Path(args.config).exists():
            raise UsageError(f"config file {args.config} not found")
        cp.read(args.config)
    cfg = {s: dict(cp[s]) for s in DEFAULTS}
    for section, keys in DEFAULTS.items():
        for key in keys:
            val = getattr(args, key, None)
            if val is not None:
                cfg[section][key] = str(val)
    if getattr(args, "cmd_name", None):
        cfg["run"]["cmd"] = args.cmd_name
    if not cfg["run"]["out"]:
        cfg["run"]["out"] = os.environ.get(OUT_ENV, "rilab_out")
    if cfg["run"]["seed"] == "":
        raise UsageError("a seed is required (--seed or [run] seed=)")
    try:
        int(cfg["run"]["seed"])
    except ValueError:
        raise UsageError("seed must be an integer") from None
    return cfg


def load_graph(cfg: dict):
    g = cfg["graph"]
    if g["file"]:
        graph = read_graph(Path(g["file"]).read_text())
        if not g["exhaustion"]:
            raise UsageError("--graph needs an --exhaustion file")
        ex = read_exhaustion(Path(g["exhaustion"]).read_text(), graph)
        return graph, ex, None
    fam = g["family"]
    if fam not in FAMILIES:
        raise UsageError(f"unknown family {fam!r}")
    if fam == "regular_tree":
        params = {"branching": int(g["branching"]), "depth": int(g["depth"])}
    elif fam == "ladder":
        params = {"d": int(g["dim"]), "radius": int(g["radius"]), "rule": g["rule"]}
    elif fam == "product":
        params = {"d": int(g["dim"]), "radius": int(g["radius"]), "factor": g["factor"],
                  "size": int(g["size"])}
    else:
        params = {"d": int(g["dim"]), "radius": int(g["radius"])}
    family = build_family(fam, **params)
    return family.graph, family.exhaustion, family


def parse_K(text: str, family, graph):
    if text:
        return text.replace(";", " ").split()
    if family is None:
        raise UsageError("--K is required for graphs read from file")
    return default_K(family)


# ---------------------------------------------------------------------------
# output helpers


class Outputs:
    def __init__(self, root: Path, chash: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hash = chash
        self.files = []

    def csv(self, name: str, header, rows):
        buf = io.StringIO()
        buf.write(f"# config {self.hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
        self._write(name, buf.getvalue())

    def json(self, name: str, doc: dict):
        doc = dict(doc, config_hash=self.hash)
        self._write(name, json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def text(self, name: str, text: str):
        self._write(name, text)

    def _write(self, name, text):
        path = self.root / name
        path.write_text(text)
        self.files.append({"file": name, "sha256": hashlib.sha256(text.encode()).hexdigest()})


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def versions() -> dict:
    import numba
    import scipy
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "rilab": __version__}


# ---------------------------------------------------------------------------
# commands


def cmd_graph(cfg, out: Outputs):
    graph, ex, family = load_graph(cfg)
    out.text("graph.txt", write_graph(graph))
    out.text("exhaustion.txt", write_exhaustion(ex, graph))
    out.csv("vertices.csv", ["index", "vertex", "shell", "pi"],
            [(i, graph.names[i], int(ex.shell[i]), float(graph.pi[i])) for i in range(graph.n)])
    out.json("summary.json", {"vertices": graph.n, "edges": graph.num_edges, "window": ex.window,
                              "levels": ex.radii, "family": family.name if family else None,
                              "params": family.params if family else None})


def cmd_potential(cfg, out: Outputs, action: str):
    graph, ex, family = load_graph(cfg)
    K = parse_K(cfg["potential"]["K"], family, graph)
    levels = parse_levels(cfg["potential"]["levels"], ex, int(ex.shell[graph.ids(K)].max()))
    if action == "equilibrium":
        seq = capacity_sequence(graph, ex, K, levels)
        rows = [(n, y, float(m)) for n, masses in zip(levels, seq["normalized"])
                for y, m in zip(K, masses)]
        out.csv("equilibrium.csv", ["level", "y", "mass"], rows)
        out.csv("capacity.csv", ["level", "capacity"], list(zip(levels, seq["capacity"])))
        out.json("summary.json", {k: v for k, v in seq.items() if k != "normalized"})
    elif action == "entry-free":
        rows, summary = [], []
        for n in levels:
            eq = equilibrium_measure(wire(graph, ex, n), K)
            probe = cfg["potential"]["probe"]
            probes = ex.rim(n)[:1] if probe == "auto-rim" else graph.ids([probe])
            for p in probes:
                m = entry_measure_free(graph, ex, K, int(p), level=n)
                rows += [(n, graph.names[p], y, float(v)) for y, v in zip(m.support, m.mass)]
                tv = 0.5 * float(np.abs(m.mass - eq.normalized.mass).sum())
                summary.append({"level": n, "probe": graph.names[p], "tv_to_equilibrium": tv})
        out.csv("entry_free.csv", ["level", "probe", "y", "mass"], rows)
        out.json("summary.json", {"levels": levels, "diagnostics": summary})
    elif action == "green":
        rows = []
        for n in levels:
            G = green_matrix(wire(graph, ex, n), K).matrix
            rows += [(n, a, b, float(G[i, j])) for i, a in enumerate(K) for j, b in enumerate(K)]
        out.csv("green.csv", ["level", "x", "y", "G"], rows)
    else:
        raise UsageError(f"unknown potential action {action!r}")


def _rate(cfg, ex):
    s = cfg["sample"]
    return default_rate(ex, float(s["rate_base"]), float(s["rate_growth"]))


def _level(text, fallback):
    return int(text) if text else fallback


def cmd_sample(cfg, out: Outputs, action: str):
    graph, ex, family = load_graph(cfg)
    s = cfg["sample"]
    seed = int(cfg["run"]["seed"])
    rate = _rate(cfg, ex)
    if action == "ri":
        K = parse_K(cfg["potential"]["K"], family, graph)
        n = _level(s["level"], ex.window - 1)
        sampler = InterlacementSampler(wire(graph, ex, n), K)
        ps = sampler.sample(float(s["umax"]), seed, rate)
        vo = interlacement_order(ps)
        out.csv("trajectory.csv", ["excursion", "step", "vertex", "hold", "T"],
                zip(vo.excursion.tolist(), vo.step.tolist(), [graph.names[v] for v in vo.vertex],
                    vo.hold, vo.T))
        out.csv("excursions.csv", ["excursion", "label", "root", "length"],
                [(i, float(ps.labels[i]), graph.names[ps.root_vertices()[i]],
                  int(ps.offsets[i + 1] - ps.offsets[i])) for i in range(ps.count)])
        out.json("summary.json", {"count": ps.count, "capacity": ps.capacity, "u_max": ps.u_max,
                                  "level": n, "expected_count": ps.u_max * ps.capacity,
                                  "total_time": vo.total_time})
    elif action == "reflected":
        n = _level(s["level"], 2)
        rim = int(s["rim"]) if s["rim"] else None
        sampler = ReflectedSampler(graph, ex, n, rim, s["mode"])
        tr = sampler.sample(seed, excursions=int(s["excursions"]), rate=rate)
        exc = np.cumsum(np.r_[0, tr.steps[:-1] == -1])
        T = tr.times
        out.csv("trajectory.csv", ["excursion", "step", "vertex", "hold", "T"],
                [(int(e), i, "@inf" if v < 0 else graph.names[v], float(h), float(t))
                 for i, (e, v, h, t) in enumerate(zip(exc, tr.steps, tr.holds, T))])
        out.json("summary.json", dict(tr.meta, duration=tr.duration,
                                      margin_ratio=sampler.rim / max(n, 1)))
    else:
        raise UsageError(f"unknown sample action {action!r}")


def _panel(cfg, graph, ex, family, n):
    f = cfg["forest"]
    if f["panel"]:
        rows = [ln.split(",") for ln in Path(f["panel"]).read_text().splitlines()
                if ln.strip() and not ln.startswith("#")]
        rows = [r for r in rows if r[0] not in ("u", "edge_u")]
        return [(int(graph.ids(a.strip())[0]), int(graph.ids(b.strip())[0])) for a, b, *_ in rows]
    center = family.origin if family is not None else 0
    return central_edges(graph, center, int(f["panel_size"]), within=ex.level(n))


def cmd_forest(cfg, out: Outputs, action: str):
    graph, ex, family = load_graph(cfg)
    f = cfg["forest"]
    n = _level(f["level"], ex.window - 1)
    net = wire(graph, ex, n) if f["kind"] == "wired" else restrict(graph, ex, n)
    panel = _panel(cfg, graph, ex, family, n)
    names = [(graph.names[a], graph.names[b]) for a, b in panel]
    if action == "marginals":
        m = exact_marginals(net, edges=panel)
        out.csv("marginals.csv", ["edge_u", "edge_v", "probability", "kind", "level"],
                [(a, b, float(p), m.kind, n) for (a, b), p in zip(names, m.prob)])
    elif action == "wilson":
        topo, _ = streams(int(cfg["run"]["seed"]))
        k = int(f["samples"])
        loc = np.array([net.locals([a, b]) for a, b in panel])
        forests = [wilson(net, rng=topo) for _ in range(k)]
        freq = edge_frequencies(forests, loc)
        exact = exact_marginals(net, edges=panel).prob
        out.csv("wilson.csv", ["edge_u", "edge_v", "frequency", "exact", "samples", "kind", "level"],
                [(a, b, float(p), float(e), k, f["kind"], n) for (a, b), p, e in zip(names, freq, exact)])
    else:
        raise UsageError(f"unknown forest action {action!r}")


def cmd_compare(cfg, out: Outputs, action: str = "equivalence"):
    if action != "equivalence":
        raise UsageError(f"unknown compare action {action!r}")
    graph, ex, family = load_graph(cfg)
    K = parse_K(cfg["potential"]["K"], family, graph)
    c = cfg["compare"]
    levels = parse_levels(c["levels"], ex, int(ex.shell[graph.ids(K)].max()))
    budgets = {"excursions": int(c["excursions"]),
               "seconds": float(c["max_seconds"]) if c["max_seconds"] else None}
    center = family.origin if family is not None else None
    v = equivalence_report(graph, ex, K, levels, budgets, seed=int(cfg["run"]["seed"]), center=center)
    out.json("verdict.json", v.document)
    out.text("gaps.csv", f"# config {out.hash}\n" + v.csv)
    return v


COMMANDS = {
    "graph": cmd_graph,
    "potential-equilibrium": lambda cfg, out: cmd_potential(cfg, out, "equilibrium"),
    "potential-entry-free": lambda cfg, out: cmd_potential(cfg, out, "entry-free"),
    "potential-green": lambda cfg, out: cmd_potential(cfg, out, "green"),
    "sample-ri": lambda cfg, out: cmd_sample(cfg, out, "ri"),
    "sample-reflected": lambda cfg, out: cmd_sample(cfg, out, "reflected"),
    "forest-marginals": lambda cfg, out: cmd_forest(cfg, out, "marginals"),
    "forest-wilson": lambda cfg, out: cmd_forest(cfg, out, "wilson"),
    "compare-equivalence": lambda cfg, out: cmd_compare(cfg, out),
}


def run(cfg: dict) -> dict:
    """Execute the configured command and write the manifest."""
    cmd = cfg["run"]["cmd"]
    if cmd not in COMMANDS:
        raise UsageError(f"unknown command {cmd!r}; choose from {', '.join(COMMANDS)}")
    chash = config_hash(cfg)
    out = Outputs(Path(cfg["run"]["out"]), chash)
    t0 = time.perf_counter()
    COMMANDS[cmd](cfg, out)
    manifest = {"config": cfg, "config_hash": chash, "seed": int(cfg["run"]["seed"]),
                "versions": versions(), "wall_seconds": time.perf_counter() - t0,
                "artifacts": list(out.files)}
    (out.root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# headline suite


def _suite_case(case: dict) -> dict:
    fam = build_family(case["family"], **case["params"])
    lo, hi = (int(t) for t in case["levels"].split(":"))
    t0 = time.perf_counter()
    v = equivalence_report(fam.graph, fam.exhaustion, default_K(fam), list(range(lo, hi + 1)),
                           seed=case["seed"], center=fam.origin, label=case["label"])
    return {"case": case, "document": v.document, "csv": v.csv,
            "seconds": time.perf_counter() - t0}


def suite_paper(out_dir, jobs: int = 1, cases=None) -> tuple[list[dict], bool]:
    """Run the three built-in cases; returns (results, all verdicts as expected)."""
    cases = SUITE if cases is None else cases
    out_dir = Path(out_dir)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cases))) as pool:
            results = list(pool.map(_suite_case, cases))
    else:
        results = [_suite_case(c) for c in cases]
    suite_cfg = {"suite": cases}
    out = Outputs(out_dir, config_hash(suite_cfg))
    ok = True
    summary = []
    for r in results:
        lab = r["case"]["label"]
        out.json(f"{lab}.verdict.json", r["document"])
        out.text(f"{lab}.gaps.csv", f"# config {out.hash}\n" + r["csv"])
        got, want = r["document"]["verdict"], r["case"]["expected"]
        ok &= got == want
        summary.append({"label": lab, "verdict": got, "expected": want, "ok": got == want})
    out.json("suite.json", {"cases": summary, "all_expected": ok})
    manifest = {"config": suite_cfg, "config_hash": out.hash, "versions": versions(),
                "wall_seconds": {r["case"]["label"]: r["seconds"] for r in results},
                "artifacts": list(out.files), "jobs": jobs}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return results, ok


# ---------------------------------------------------------------------------
# argument parsing


def _common(p):
    p.add_argument("--config", help="INI file with [graph] [potential] ... [run] sections")
    p.add_argument("--seed", type=int, help="integer seed (required)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./rilab_out)")
    p.add_argument("--jobs", type=int)
    g = p.add_argument_group("graph")
    g.add_argument("--family", choices=FAMILIES)
    g.add_argument("--dim", type=int)
    g.add_argument("--radius", type=int)
    g.add_argument("--branching", type=int)
    g.add_argument("--depth", type=int)
    g.add_argument("--factor")
    g.add_argument("--size", type=int)
    g.add_argument("--rule")
    g.add_argument("--graph", dest="file", help="edge-list file")
    g.add_argument("--exhaustion", help="exhaustion file (one level per line)")
    p.add_argument("--K", help="vertex ids separated by ';' or spaces")
    p.add_argument("--levels", help="a:b or comma list")


def _potential_opts(p):
    p.add_argument("--probe")


def _sample_opts(p):
    p.add_argument("--umax", type=float)
    p.add_argument("--level", type=int)
    p.add_argument("--rim", type=int)
    p.add_argument("--mode", choices=["wired", "free-trace"])
    p.add_argument("--excursions", type=int)
    p.add_argument("--rate-base", dest="rate_base", type=float)
    p.add_argument("--rate-growth", dest="rate_growth", type=float)


def _forest_opts(p, level=True):
    p.add_argument("--kind", choices=["free", "wired"])
    if level:
        p.add_argument("--level", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--panel", help="CSV of edges (u,v)")
    p.add_argument("--panel-size", dest="panel_size", type=int)


def _compare_opts(p, excursions=True):
    if excursions:
        p.add_argument("--excursions", type=int)
    p.add_argument("--max-seconds", dest="max_seconds", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rilab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graph", help="build a window and write it out")
    _common(p)

    p = sub.add_parser("potential", help="equilibrium measures, entry laws, Green's function")
    p.add_argument("action", choices=["equilibrium", "entry-free", "green"])
    _common(p)
    _potential_opts(p)

    p = sub.add_parser("sample", help="interlacement or reflected-walk samples")
    p.add_argument("action", choices=["ri", "reflected"])
    _common(p)
    _sample_opts(p)

    p = sub.add_parser("forest", help="spanning-forest marginals and Wilson samples")
    p.add_argument("action", choices=["marginals", "wilson"])
    _common(p)
    _forest_opts(p)

    p = sub.add_parser("compare", help="equivalence report")
    p.add_argument("action", choices=["equivalence"])
    _common(p)
    _compare_opts(p)

    p = sub.add_parser("run", help="run any command from a config file or flags")
    _common(p)
    p.add_argument("--cmd", dest="cmd_name", choices=sorted(COMMANDS))
    _potential_opts(p)
    _sample_opts(p)
    _forest_opts(p, level=False)
    _compare_opts(p, excursions=False)

    p = sub.add_parser("suite-paper", help="the three headline cases with pinned seeds")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    return ap


def _args_to_cfg(args) -> dict:
    if args.command != "run":
        args.cmd_name = args.command if args.command == "graph" else f"{args.command}-{args.action}"
    return resolve_config(args)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "suite-paper":
            out = args.out or os.path.join(os.environ.get(OUT_ENV, "rilab_out"), "suite")
            results, ok = suite_paper(out, args.jobs)
            for r in results:
                d = r["document"]
                print(f"{d['label']:12s} {d['verdict']:13s} expected {r['case']['expected']}")
            return 0 if ok else 1
        cfg = _args_to_cfg(args)
        manifest = run(cfg)
        print(json.dumps({"out": cfg["run"]["out"], "config_hash": manifest["config_hash"],
                          "artifacts": [a["file"] for a in manifest["artifacts"]]}))
        return 0
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except (GraphError, ValueError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
