import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from oracles import (dense_green, graph_edges, kkt_minimizer, lattice_escape, tree_harmonic,
                     wired_tree_resistance)
from rilab.graphs import Exhaustion, GraphError, WeightedGraph, read_graph, regular_tree, restrict, wire, zd_box
from rilab.potential import (SolverError, capacity_sequence, dirichlet_energy, effective_resistance,
                             entry_fields, entry_measure_free, equilibrium_measure, green_matrix,
                             harmonic_extension, is_harmonic_off, net_current, richardson,
                             rim_entry_measures, satisfies_maximum_principle, solve_harmonic,
                             unit_current, value_at_infinity)
from test_graphs import connected_graphs

K4 = ["0,0,0", "1,0,0", "2,0,0", "0,1,0"]


@pytest.fixture(scope="module")
def box():
    return zd_box(3, 6)


def test_constant_boundary_gives_constant(box):
    fr = restrict(box.graph, box.exhaustion, 3)
    f = solve_harmonic(fr, ["0,0,0", "3,3,3"], 1.0)
    assert np.allclose(f.values, 1.0)
    assert f.energy == pytest.approx(0.0, abs=1e-20)


def test_path_midpoint():
    g = read_graph("a b 1\nb c 1\n")
    f = solve_harmonic(g, ["a", "c"], [1.0, 0.0])
    assert f.at("b") == pytest.approx(0.5, abs=1e-14)


def test_entry_field_matches_kkt_oracle(box):
    fr = restrict(box.graph, box.exhaustion, 5)
    K = ["0,0,0", "1,0,0"]
    H = entry_fields(fr, K)
    Ki = fr.locals(K)
    ref = kkt_minimizer(fr.graph.n, graph_edges(fr.graph), Ki, [1.0, 0.0])
    assert np.max(np.abs(H[:, 0] - ref)) < 1e-8
    # energy of the minimizer is the effective conductance between the two points
    E = dirichlet_energy(fr.graph, H[:, 0])
    assert E == pytest.approx(1.0 / effective_resistance(fr, K[0], K[1]), rel=1e-9)


def test_green_two_vertex():
    g = read_graph("o x 2.5\n")
    ex = Exhaustion(np.array([0, 1]))
    G = green_matrix(wire(g, ex, 0), ["o"])
    assert G.matrix[0, 0] == pytest.approx(1 / 2.5, abs=1e-14)


def test_green_matches_dense_inverse():
    fam = zd_box(3, 4)
    q = wire(fam.graph, fam.exhaustion, 3)
    G = green_matrix(q, K4)
    ref = dense_green(q.graph.n, graph_edges(q.graph), [q.z])
    assert np.max(np.abs(G.columns - ref[:, G.K])) < 1e-10
    assert np.max(np.abs(G.matrix - G.matrix.T)) < 1e-12


def test_green_increases_with_level(box):
    mats = [green_matrix(wire(box.graph, box.exhaustion, n), K4).matrix for n in (2, 3, 4, 5)]
    for a, b in zip(mats, mats[1:]):
        assert np.all(b >= a - 1e-12)


def test_green_rejects_infinity(box):
    q = wire(box.graph, box.exhaustion, 2)
    with pytest.raises(GraphError):
        green_matrix(q, ["0,0,0", "@inf"])
    with pytest.raises(GraphError):
        equilibrium_measure(q, ["@inf"])


def test_singleton_equilibrium(box):
    q = wire(box.graph, box.exhaustion, 4)
    eq = equilibrium_measure(q, ["0,0,0"])
    assert eq.normalized.mass.tolist() == [1.0]
    G = green_matrix(q, ["0,0,0"]).matrix[0, 0]
    # one point: e = 1 / G(o, o)
    assert eq.capacity == pytest.approx(1.0 / G, rel=1e-10)


def test_capacity_identity_and_bounds(box):
    q = wire(box.graph, box.exhaustion, 5)
    eq = equilibrium_measure(q, K4)
    G = green_matrix(q, K4).matrix
    assert np.allclose(G @ eq.measure.mass, 1.0, atol=1e-10)
    pi = q.graph.pi[q.locals(K4)]
    assert np.all(eq.measure.mass <= pi + 1e-12)
    assert np.all(eq.measure.mass > 0)
    assert eq.normalized.total == pytest.approx(1.0)


def test_capacity_decreasing(box):
    seq = capacity_sequence(box.graph, box.exhaustion, K4, [2, 3, 4, 5])
    assert seq["monotone_decreasing"]
    assert np.all(np.diff(seq["capacity"]) < 0)


def test_richardson_exact_on_model():
    n = np.array([4, 5, 6, 7])
    v = 2.0 + 3.0 / n - 1.5 / n ** 2
    assert richardson(n, v) == pytest.approx(2.0, abs=1e-12)


@pytest.fixture(scope="module")
def escape_sequence():
    fam = zd_box(3, 13)
    levels = list(range(4, 13))
    seq = capacity_sequence(fam.graph, fam.exhaustion, ["0,0,0"], levels)
    return levels, np.array(seq["capacity"]) / 6.0


def test_escape_matches_lattice_walks_same_radius(escape_sequence):
    # level n wires everything at sup-norm n + 1
    levels, q = escape_sequence
    walks = 10 ** 6
    est = lattice_escape(walks, 12, 20240611) / walks
    sd = np.sqrt(est * (1 - est) / walks)
    assert abs(q[levels.index(11)] - est) < 3 * sd


@pytest.mark.slow
def test_escape_extrapolation_matches_far_walks(escape_sequence):
    levels, q = escape_sequence
    n = np.array(levels[-3:], dtype=float) + 1
    V = np.stack([np.ones(3), 1 / n, 1 / n ** 2], axis=1)
    coef = np.linalg.solve(V, q[-3:])
    predicted = coef @ [1.0, 1 / 50, 1 / 50 ** 2]
    walks = 10 ** 6
    est = lattice_escape(walks, 50, 20240612) / walks
    sd = np.sqrt(est * (1 - est) / walks)
    assert abs(predicted - est) < 3 * sd
    # Polya: the return probability of the simple walk on Z^3 is 0.3405...
    assert coef[0] == pytest.approx(1 - 0.340537, abs=1e-3)


def test_entry_measure_degenerate_probe(box):
    m = entry_measure_free(box.graph, box.exhaustion, K4, "1,0,0", level=4)
    assert m.flags["degenerate"]
    assert m.as_dict() == {"0,0,0": 0.0, "1,0,0": 1.0, "2,0,0": 0.0, "0,1,0": 0.0}


@pytest.mark.parametrize("kind", ["free", "wired"])
def test_entry_fields_sum_to_one(box, kind):
    net = (restrict if kind == "free" else wire)(box.graph, box.exhaustion, 4)
    H = entry_fields(net, K4)
    assert np.max(np.abs(H.sum(axis=1) - 1.0)) < 1e-10
    assert H.min() > -1e-12


def test_tree_entry_measure_is_two_thirds():
    # K = {t00, t1}; from inside t01's subtree the walk must pass t0, which has
    # h(t0) = 2/3 at every depth
    for depth in (4, 6, 8):
        fam = regular_tree(2, depth)
        m = entry_measure_free(fam.graph, fam.exhaustion, ["t00", "t1"], "t01" + "0" * (depth - 2))
        assert m["t00"] == pytest.approx(2 / 3, abs=1e-12)
        assert m["t1"] == pytest.approx(1 / 3, abs=1e-12)


def test_tree_fields_match_elimination_oracle():
    fam = regular_tree(2, 7)
    g = fam.graph
    parent = np.full(g.n, -1)
    u, v, _ = g.edge_arrays
    parent[v] = u            # names are generated parent-first, so u < v is the parent
    K = ["t00", "t1", "t0110"]
    Ki = g.ids(K)
    H = entry_fields(g, K)
    for j, k in enumerate(Ki):
        ref = tree_harmonic(parent, {int(x): float(x == k) for x in Ki})
        assert np.max(np.abs(H[:, j] - ref)) < 1e-12


def test_wired_tree_grounded_matches_oracle():
    fam = regular_tree(2, 7)
    q = wire(fam.graph, fam.exhaustion, 5)
    g = q.graph
    f = solve_harmonic(q, ["t0", "@inf"], [1.0, 0.0])
    parent = np.full(g.n - 1, -1)
    u, v, _ = fam.graph.edge_arrays
    for a, b in zip(u, v):
        if fam.exhaustion.shell[b] <= 5:
            parent[q.local(int(b))] = q.local(int(a))
    ground = {int(q.local(x)): 2.0 for x in fam.exhaustion.rim(5)}
    ref = tree_harmonic(parent, {int(q.local("t0")): 1.0}, ground)
    assert np.max(np.abs(f.values[:-1] - ref)) < 1e-12


@pytest.mark.parametrize("level", [3, 5, 8])
def test_tree_resistance_gap(level):
    fam = regular_tree(2, level + 1)
    RF = effective_resistance(restrict(fam.graph, fam.exhaustion, level), "t0", "t1")
    RW = effective_resistance(wire(fam.graph, fam.exhaustion, level), "t0", "t1")
    assert RF == pytest.approx(2.0, abs=1e-12)
    assert RW == pytest.approx(wired_tree_resistance(level), abs=1e-12)
    assert RW < 0.98 * RF


def test_tree_wired_resistance_frozen():
    # 1 / (1/2 + 1/(2 r)) with r = 15/16 at level 4
    assert wired_tree_resistance(4) == pytest.approx(0.967741935483871, abs=1e-14)


def test_z3_resistance_gap_shrinks(box):
    gaps = []
    for n in (2, 3, 4, 5):
        RF = effective_resistance(restrict(box.graph, box.exhaustion, n), "0,0,0", "1,0,0")
        RW = effective_resistance(wire(box.graph, box.exhaustion, n), "0,0,0", "1,0,0")
        assert RW <= RF
        gaps.append((RF - RW) / RF)
    assert np.all(np.diff(gaps) < 0)


def test_single_edge_current():
    g = read_graph("a b 4\n")
    cur = unit_current(g, ["a"], ["b"])
    assert cur.resistance == pytest.approx(0.25)
    assert cur.flow.energy == pytest.approx(0.25)
    assert cur.flow.value("a", "b") == pytest.approx(1.0)
    assert cur.flow.value("b", "a") == pytest.approx(-1.0)


def test_current_laws(box):
    for net in (restrict(box.graph, box.exhaustion, 4), wire(box.graph, box.exhaustion, 4)):
        cur = unit_current(net, ["0,0,0"], ["2,1,0"])
        div = cur.flow.divergence()
        a, b = net.local("0,0,0"), net.local("2,1,0")
        assert div[a] == pytest.approx(1.0, abs=1e-10)
        assert div[b] == pytest.approx(-1.0, abs=1e-10)
        rest = np.delete(div, [a, b])
        assert np.max(np.abs(rest)) < 1e-10
        assert cur.flow.cycle_residual() < 1e-10
        assert cur.flow.energy == pytest.approx(cur.resistance, rel=1e-10)


def test_wired_energy_below_free(box):
    for n in (2, 4):
        ef = unit_current(restrict(box.graph, box.exhaustion, n), ["0,0,0"], ["1,1,0"]).flow.energy
        ew = unit_current(wire(box.graph, box.exhaustion, n), ["0,0,0"], ["1,1,0"]).flow.energy
        assert ew <= ef


def test_thomson_principle_to_infinity(box):
    # any unit flow from a to z has energy at least R(a, z): route the free
    # current from a to the rim on into z along the rim edges
    n = 4
    q = wire(box.graph, box.exhaustion, n)
    fr = restrict(box.graph, box.exhaustion, n)
    R = unit_current(q, ["0,0,0"], "inf").resistance
    rim = box.exhaustion.rim(n)
    cur = unit_current(fr, ["0,0,0"], list(rim))
    inflow = -cur.flow.divergence()[fr.locals(rim)]
    cz = q.graph.C[q.z].toarray().ravel()[q.locals(rim)]
    energy = cur.flow.energy + float(np.sum(inflow ** 2 / cz))
    assert energy >= R - 1e-12
    assert unit_current(q, ["0,0,0"], "inf").flow.energy == pytest.approx(R, rel=1e-10)


def test_wired_voltage_is_hitting_probability(box):
    from rilab.samplers import walks
    q = wire(box.graph, box.exhaustion, 3)
    cur = unit_current(q, ["0,0,0"], "inf")
    v = cur.voltage.values / cur.voltage.values[q.local("0,0,0")]
    rng = np.random.default_rng(5)
    N = 20000
    for x in ("1,0,0", "2,1,0", "3,3,3"):
        path, off = walks(q, np.full(N, q.local(x)), ["0,0,0", "@inf"], rng)
        hit = np.mean(path[off[1:] - 1] == q.local("0,0,0"))
        p = v[q.local(x)]
        assert abs(hit - p) < 3 * np.sqrt(p * (1 - p) / N) + 1e-12


def test_current_to_infinity_needs_wiring(box):
    with pytest.raises(GraphError):
        unit_current(restrict(box.graph, box.exhaustion, 3), ["0,0,0"], "inf")
    with pytest.raises(GraphError):
        unit_current(box.graph, ["0,0,0"], ["0,0,0"])


def test_dirichlet_energy_examples():
    g = read_graph("a b 2\n")
    assert dirichlet_energy(g, [1.0, 0.0]) == 2.0
    assert dirichlet_energy(g, [3.0, 3.0]) == 0.0


def test_maximum_principle_and_harmonicity(box):
    q = wire(box.graph, box.exhaustion, 4)
    f = solve_harmonic(q, ["0,0,0", "1,0,0", "@inf"], [2.0, -1.0, 0.5])
    assert satisfies_maximum_principle(f)
    assert is_harmonic_off(f)


def test_green_delta_identity(box):
    q = wire(box.graph, box.exhaustion, 4)
    G = green_matrix(q, K4)
    rng = np.random.default_rng(1)
    from rilab.potential import laplacian
    L = laplacian(q.graph)
    for _ in range(5):
        f = rng.normal(size=len(K4))
        Gf = G.apply(f)
        Gf[q.z] = 0.0
        back = (L @ Gf)[G.K]
        assert np.max(np.abs(G.matrix @ back - G.matrix @ f)) < 1e-10


def test_value_at_infinity_probes(box):
    fr = restrict(box.graph, box.exhaustion, 5)
    f = solve_harmonic(fr, ["0,0,0"], 1.0)
    out = value_at_infinity(f, list(box.exhaustion.rim(5)[:10]))
    assert out["spread"] == pytest.approx(0.0, abs=1e-12)


def test_rim_entry_measures_shape(box):
    rim, H = rim_entry_measures(box.graph, box.exhaustion, K4, 3)
    assert H.shape == (len(rim), 4)
    assert np.allclose(H.sum(axis=1), 1.0, atol=1e-10)


def test_solver_errors():
    g = read_graph("a b 1\nb c 1\n")
    with pytest.raises(SolverError, match="empty"):
        harmonic_extension(g, [], [])
    C = sp.csr_matrix(np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], float))
    split = WeightedGraph(["a", "b", "c", "d"], C, check=False)
    with pytest.raises(SolverError, match="singular"):
        harmonic_extension(split, [0], [1.0])
    fam = zd_box(3, 3)
    fr = restrict(fam.graph, fam.exhaustion, 3)
    with pytest.raises(SolverError) as exc:
        solve_harmonic(fr, ["0,0,0"], 1.0, method="cg", tol=1e-30)
    assert exc.value.residual is not None


def test_cg_agrees_with_direct(box):
    fr = restrict(box.graph, box.exhaustion, 4)
    a = solve_harmonic(fr, ["0,0,0", "4,4,4"], [1.0, 0.0], method="direct").values
    b = solve_harmonic(fr, ["0,0,0", "4,4,4"], [1.0, 0.0], method="cg", tol=1e-12).values
    assert np.max(np.abs(a - b)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(connected_graphs(), st.data())
def test_random_graph_invariants(g, data):
    k = data.draw(st.integers(1, g.n))
    K = data.draw(st.permutations(range(g.n)))[:k]
    H = entry_fields(g, K)
    assert np.allclose(H.sum(axis=1), 1.0, atol=1e-10)
    assert H.min() > -1e-10 and H.max() < 1 + 1e-10
    if k < g.n:
        ref = kkt_minimizer(g.n, graph_edges(g), np.array(K), np.eye(k)[0])
        assert np.allclose(H[:, 0], ref, atol=1e-8)
    phi = data.draw(st.lists(st.floats(-5, 5), min_size=k, max_size=k))
    f = solve_harmonic(g, K, phi)
    assert satisfies_maximum_principle(f, tol=1e-9)
    d = net_current(g, f.values)
    mask = np.ones(g.n, bool)
    mask[K] = False
    assert np.all(np.abs(d[mask]) < 1e-9)
