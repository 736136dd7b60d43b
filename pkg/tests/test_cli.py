import json
import subprocess
import sys

import pytest

from rilab.cli import SUITE, config_hash, main, parse_levels
from rilab.graphs import zd_box


def files(d):
    return {p.name: p.read_bytes() for p in d.iterdir()}


def test_compare_equivalence_smoke(tmp_path):
    out = tmp_path / "run"
    code = main(["run", "--family", "zd_box", "--dim", "3", "--radius", "8", "--cmd",
                 "compare-equivalence", "--seed", "3", "--excursions", "2000", "--out", str(out)])
    assert code == 0
    doc = json.loads((out / "verdict.json").read_text())
    assert doc["verdict"] in ("consistent", "inconsistent", "inconclusive")
    assert doc["config_hash"] == json.loads((out / "manifest.json").read_text())["config_hash"]
    assert (out / "gaps.csv").read_text().startswith("# config ")


def test_same_config_and_seed_is_byte_identical(tmp_path):
    args = ["sample", "ri", "--family", "zd_box", "--radius", "5", "--umax", "2", "--seed", "9"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a.keys() == b.keys()
    for name in a:
        if name != "manifest.json":
            assert a[name] == b[name], name
    assert main(["sample", "ri", "--family", "zd_box", "--radius", "5", "--umax", "2", "--seed", "10",
                 "--out", str(tmp_path / "c")]) == 0
    c = files(tmp_path / "c")
    assert any(a[n] != c[n] for n in a if n != "manifest.json")


def test_missing_seed_is_usage_error(tmp_path, capsys):
    code = main(["potential", "equilibrium", "--family", "zd_box", "--radius", "4",
                 "--out", str(tmp_path)])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "usage"
    assert "seed" in err["message"]


def test_module_error_exit_code(tmp_path, capsys):
    code = main(["potential", "equilibrium", "--family", "zd_box", "--dim", "2", "--radius", "4",
                 "--seed", "1", "--out", str(tmp_path)])
    assert code == 3
    assert "transient" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["graph"],
    ["potential", "equilibrium"],
    ["potential", "entry-free"],
    ["potential", "green"],
    ["sample", "reflected", "--mode", "free-trace", "--excursions", "50"],
    ["forest", "marginals", "--kind", "free"],
    ["forest", "wilson", "--samples", "50"],
])
def test_subcommands_run(tmp_path, argv):
    code = main(argv + ["--family", "zd_box", "--radius", "5", "--seed", "2", "--out", str(tmp_path)])
    assert code == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 2
    for art in man["artifacts"]:
        text = (tmp_path / art["file"]).read_text()
        if art["file"].endswith(".csv"):
            assert text.startswith(f"# config {man['config_hash']}")


def test_config_file_and_graph_file(tmp_path):
    fam = zd_box(3, 3)
    from rilab.graphs import write_exhaustion, write_graph
    (tmp_path / "g.txt").write_text(write_graph(fam.graph))
    (tmp_path / "ex.txt").write_text(write_exhaustion(fam.exhaustion, fam.graph))
    ini = tmp_path / "cfg.ini"
    ini.write_text(f"[graph]\nfile = {tmp_path / 'g.txt'}\nexhaustion = {tmp_path / 'ex.txt'}\n"
                   f"[potential]\nK = 0,0,0;1,0,0\n[run]\ncmd = potential-equilibrium\nseed = 5\n"
                   f"out = {tmp_path / 'out'}\n")
    assert main(["run", "--config", str(ini)]) == 0
    text = (tmp_path / "out" / "equilibrium.csv").read_text()
    assert "0,0,0" in text and "1,0,0" in text


def test_config_hash_ignores_output_location():
    a = {"run": {"seed": "1", "out": "x", "jobs": "1"}, "graph": {"radius": "4"}}
    b = {"run": {"seed": "1", "out": "y", "jobs": "4"}, "graph": {"radius": "4"}}
    c = {"run": {"seed": "2", "out": "x", "jobs": "1"}, "graph": {"radius": "4"}}
    assert config_hash(a) == config_hash(b) != config_hash(c)


def test_parse_levels():
    ex = zd_box(3, 6).exhaustion
    assert parse_levels("2:4", ex) == [2, 3, 4]
    assert parse_levels("1,3", ex) == [1, 3]
    assert parse_levels("", ex, floor=2) == [2, 3, 4, 5]


def test_suite_cases_pinned():
    assert [c["expected"] for c in SUITE] == ["consistent", "inconsistent", "inconsistent"]
    assert len({c["seed"] for c in SUITE}) == 3


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "rilab", "graph", "--family", "regular_tree",
                          "--depth", "3", "--seed", "1", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "graph.txt" in json.loads(res.stdout)["artifacts"]
