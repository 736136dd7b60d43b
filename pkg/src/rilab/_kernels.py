"""Compiled random-walk loops.

All kernels draw from numba's internal generator, which is reseeded at the
start of every call from an integer supplied by a numpy Generator.  Kernels
take a CSR adjacency together with row-normalized cumulative weights ``cum``
aligned with ``indices``.
"""
import numpy as np
from numba import njit

INF = -1
BUDGET = 1
OK = 0


def cumulative_rows(indptr, indices, weights):
    """Row-normalized cumulative sums of CSR weights (rows with zero mass stay 0)."""
    cum = np.zeros(len(weights))
    for i in range(len(indptr) - 1):
        a, b = indptr[i], indptr[i + 1]
        if b > a:
            s = np.cumsum(weights[a:b])
            if s[-1] > 0:
                cum[a:b] = s / s[-1]
                cum[b - 1] = 1.0
    return cum


@njit(cache=True)
def _seed(s):
    np.random.seed(s)


@njit(cache=True)
def _step(indptr, indices, cum, x):
    u = np.random.random()
    a = indptr[x]
    b = indptr[x + 1]
    for k in range(a, b):
        if u < cum[k]:
            return indices[k]
    return indices[b - 1]


@njit(cache=True)
def _draw(cumrow):
    u = np.random.random()
    for k in range(len(cumrow)):
        if u < cumrow[k]:
            return k
    return len(cumrow) - 1


@njit(cache=True)
def _grow(buf, need):
    if need <= len(buf):
        return buf
    out = np.empty(max(need, 2 * len(buf)), dtype=buf.dtype)
    out[:len(buf)] = buf
    return out


@njit(cache=True)
def walk_batch(indptr, indices, cum, starts, stop, min_steps, max_steps, seed):
    """Independent walks from each start until a vertex with stop[x] is hit
    after at least ``min_steps`` steps.

    Returns (flat path, offsets, status); on a blown budget the partial path of
    the offending walk is the last segment and status is BUDGET.
    """
    _seed(seed)
    buf = np.empty(max(16, 8 * len(starts)), dtype=np.int64)
    offsets = np.zeros(len(starts) + 1, dtype=np.int64)
    pos = 0
    for w in range(len(starts)):
        x = starts[w]
        buf = _grow(buf, pos + 1)
        buf[pos] = x
        pos += 1
        t = 0
        while not (t >= min_steps and stop[x]):
            if t >= max_steps:
                offsets[w + 1] = pos
                return buf[:pos], offsets[:w + 2], BUDGET
            x = _step(indptr, indices, cum, x)
            buf = _grow(buf, pos + 1)
            buf[pos] = x
            pos += 1
            t += 1
        offsets[w + 1] = pos
    return buf[:pos], offsets, OK


@njit(cache=True)
def reflected_chunk(indptr, indices, cum, z, entry_cum, entry_vertices, exit_row,
                    last_exit, n_exc, max_steps, seed):
    """``n_exc`` excursions of the reflected walk on a wired quotient.

    Each excursion enters at ``entry_vertices[k]`` with k drawn from row
    ``exit_row[last_exit]`` of ``entry_cum`` and walks until z.  Vertices are
    written without z; each excursion is followed by an INF marker.  Returns
    (flat steps, last exit vertex, status).
    """
    _seed(seed)
    buf = np.empty(64 * n_exc + 16, dtype=np.int64)
    pos = 0
    for _ in range(n_exc):
        row = exit_row[last_exit] if last_exit >= 0 else 0
        x = entry_vertices[_draw(entry_cum[row])]
        t = 0
        while x != z:
            buf = _grow(buf, pos + 2)
            buf[pos] = x
            pos += 1
            last_exit = x
            if t >= max_steps:
                return buf[:pos], last_exit, BUDGET
            x = _step(indptr, indices, cum, x)
            t += 1
        buf[pos] = INF
        pos += 1
    return buf[:pos], last_exit, OK


@njit(cache=True)
def wilson_tree(indptr, indices, cum, n, root, order, seed):
    """Wilson's algorithm; returns parent pointers with parent[root] = -1."""
    _seed(seed)
    in_tree = np.zeros(n, dtype=np.bool_)
    nxt = np.full(n, -1, dtype=np.int64)
    in_tree[root] = True
    for i in order:
        x = i
        while not in_tree[x]:
            nxt[x] = _step(indptr, indices, cum, x)
            x = nxt[x]
        x = i
        while not in_tree[x]:
            in_tree[x] = True
            x = nxt[x]
    nxt[root] = -1
    return nxt


@njit(cache=True)
def first_entry_parents(steps, n, skip_until_inf):
    """First-entry parents from a trace with INF markers.

    parent[x] = vertex visited just before the first visit to x, or -1 if that
    first visit came right after an INF marker (or opens the trace).  Vertices
    never visited get -2.  With ``skip_until_inf`` visits before the first
    marker are ignored.
    """
    parent = np.full(n, -2, dtype=np.int64)
    prev = INF
    active = not skip_until_inf
    for k in range(len(steps)):
        x = steps[k]
        if x == INF:
            active = True
            prev = INF
            continue
        if active and parent[x] == -2:
            parent[x] = prev if prev != INF else -1
        prev = x
    return parent
