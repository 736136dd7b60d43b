"""Reference computations that share no code with the package solvers."""
import itertools

import numpy as np
from numba import njit


def dense_laplacian(n, edges):
    L = np.zeros((n, n))
    for a, b, c in edges:
        L[a, a] += c
        L[b, b] += c
        L[a, b] -= c
        L[b, a] -= c
    return L


def graph_edges(g):
    u, v, c = g.edge_arrays
    return list(zip(u.tolist(), v.tolist(), c.tolist()))


def kkt_minimizer(n, edges, A, phi):
    """argmin f^T L f subject to f[A] = phi, via the dense KKT system."""
    L = dense_laplacian(n, edges)
    m = len(A)
    E = np.zeros((m, n))
    E[np.arange(m), A] = 1.0
    M = np.block([[2 * L, E.T], [E, np.zeros((m, m))]])
    rhs = np.r_[np.zeros(n), phi]
    sol = np.linalg.solve(M, rhs)
    return sol[:n]


def dense_green(n, edges, killed):
    """Inverse of the Laplacian with rows/columns of ``killed`` removed."""
    L = dense_laplacian(n, edges)
    keep = np.setdiff1d(np.arange(n), killed)
    G = np.zeros((n, n))
    G[np.ix_(keep, keep)] = np.linalg.inv(L[np.ix_(keep, keep)])
    return G


def wired_tree_resistance(level):
    """R between t0 and t1 on the binary tree wired at depth ``level``.

    r(k): resistance from a depth-k vertex through its own subtree to z, with
    r(level) = 1/2 (two unit edges to z).  The two routes t0 - t - t1 and
    t0 - z - t1 are in parallel.
    """
    r = 0.5
    for _ in range(level - 1):
        r = (1.0 + r) / 2.0
    return 1.0 / (1.0 / 2.0 + 1.0 / (2.0 * r))


def tree_harmonic(parent, fixed, ground=None):
    """Harmonic extension on a tree with unit edges by leaf-to-root elimination.

    ``parent[v]`` is the parent of v (-1 at the root), ``fixed`` maps vertices
    to boundary values and ``ground`` optionally gives extra conductance from a
    vertex to a grounded (value 0) point.  Every free vertex is written as
    f(v) = a(v) f(parent) + b(v) from its children upward.
    """
    n = len(parent)
    ground = ground or {}
    children = [[] for _ in range(n)]
    for v, p in enumerate(parent):
        if p >= 0:
            children[p].append(v)
    order = []
    stack = [v for v in range(n) if parent[v] < 0]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(children[v])
    a = np.zeros(n)
    b = np.zeros(n)
    for v in reversed(order):
        if v in fixed:
            a[v], b[v] = 0.0, fixed[v]
            continue
        deg = len(children[v]) + (parent[v] >= 0) + ground.get(v, 0.0)
        sa = sum(a[c] for c in children[v])
        sb = sum(b[c] for c in children[v])
        denom = deg - sa
        a[v] = (1.0 if parent[v] >= 0 else 0.0) / denom
        b[v] = sb / denom
    f = np.zeros(n)
    for v in order:
        f[v] = b[v] + (a[v] * f[parent[v]] if parent[v] >= 0 else 0.0)
    return f


def spanning_trees_bruteforce(n, edges):
    """All (n-1)-edge subsets that are spanning trees, with product weights."""
    out = []
    for sub in itertools.combinations(range(len(edges)), n - 1):
        comp = list(range(n))

        def find(x):
            while comp[x] != x:
                x = comp[x]
            return x

        ok = True
        for k in sub:
            a, b = find(edges[k][0]), find(edges[k][1])
            if a == b:
                ok = False
                break
            comp[a] = b
        if ok:
            out.append((sub, float(np.prod([edges[k][2] for k in sub]))))
    return out


@njit(cache=True)
def lattice_escape(n_walks, radius, seed):
    """Walks on Z^3 from the origin; counts those reaching sup-norm ``radius``
    before returning to the origin."""
    np.random.seed(seed)
    esc = 0
    for _ in range(n_walks):
        x = 0
        y = 0
        z = 0
        while True:
            k = np.random.randint(6)
            if k == 0:
                x += 1
            elif k == 1:
                x -= 1
            elif k == 2:
                y += 1
            elif k == 3:
                y -= 1
            elif k == 4:
                z += 1
            else:
                z -= 1
            if x == 0 and y == 0 and z == 0:
                break
            if abs(x) >= radius or abs(y) >= radius or abs(z) >= radius:
                esc += 1
                break
    return esc


def riemann_path_metric(f_steps, f_holds, g_steps, g_holds, dt=1e-4):
    """Midpoint Riemann sum of e^{-t} 1{f != g} up to the longer duration."""
    def state(steps, holds, t):
        ends = np.cumsum(holds)
        k = np.searchsorted(ends, t, side="right")
        return np.where(k < len(steps), np.asarray(steps)[np.minimum(k, len(steps) - 1)], -2)

    T = max(np.sum(f_holds), np.sum(g_holds))
    t = np.arange(0.0, T, dt) + dt / 2
    diff = state(f_steps, f_holds, t) != state(g_steps, g_holds, t)
    return float(np.sum(np.exp(-t[diff])) * dt)
