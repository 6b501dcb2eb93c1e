"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``VNE_LAB_NUMBA`` (``0`` disables
numba) and can be switched at runtime with :func:`set_backend`, which is what
the benchmark does to compare both paths on identical inputs.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

_EMPTY = np.empty(0, dtype=np.int64)


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def bfs_path_numpy(indptr, nbr, nbr_link, link_avail, demand, src, dst):
    """Level-synchronous BFS restricted to links with ``avail >= demand``.

    Returns ``(nodes, links)``; both empty when ``dst`` is unreachable.
    Neighbour lists are sorted, and the first discoverer wins, so the result
    is the lexicographically smallest min-hop node sequence.
    """
    n = indptr.shape[0] - 1
    if src == dst:
        return np.array([src], dtype=np.int64), _EMPTY.copy()
    parent = np.full(n, -1, dtype=np.int64)
    parent_link = np.full(n, -1, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    visited[src] = True
    frontier = np.array([src], dtype=np.int64)
    while frontier.size:
        starts = indptr[frontier]
        counts = indptr[frontier + 1] - starts
        total = int(counts.sum())
        if total == 0:
            break
        owner = np.repeat(frontier, counts)
        offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        slots = np.repeat(starts, counts) + offs
        cand = nbr[slots]
        clink = nbr_link[slots]
        ok = (link_avail[clink] >= demand) & ~visited[cand]
        cand, clink, owner = cand[ok], clink[ok], owner[ok]
        if cand.size == 0:
            break
        _, first = np.unique(cand, return_index=True)
        first.sort()
        new = cand[first]
        parent[new] = owner[first]
        parent_link[new] = clink[first]
        visited[new] = True
        if visited[dst]:
            break
        frontier = new
    if not visited[dst]:
        return _EMPTY.copy(), _EMPTY.copy()
    nodes = [dst]
    links = []
    cur = dst
    while cur != src:
        links.append(parent_link[cur])
        cur = parent[cur]
        nodes.append(cur)
    return np.array(nodes[::-1], dtype=np.int64), np.array(links[::-1], dtype=np.int64)


def grc_iterate_numpy(indptr, nbr, nbr_link, link_avail, c, damping, tol, max_iters):
    """Power iteration for ``r = (1-d) c + d M r``; returns ``(r, residuals)``.

    ``M[i, j] = b(i, j) / sum_k b(k, j)`` over available bandwidth.
    """
    n = c.shape[0]
    rows = np.repeat(np.arange(n), np.diff(indptr))
    w = link_avail[nbr_link]
    colsum = np.bincount(rows, weights=w, minlength=n)
    m = np.zeros((n, n))
    # entry (nbr, row) holds b(row, nbr) / colsum[row]
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(colsum[rows] > 0, w / colsum[rows], 0.0)
    np.add.at(m, (nbr, rows), vals)
    r = c.copy()
    residuals = np.empty(max_iters)
    for it in range(max_iters):
        nxt = (1.0 - damping) * c + damping * (m @ r)
        res = np.abs(nxt - r).sum()
        residuals[it] = res
        r = nxt
        if res < tol:
            return r, residuals[: it + 1]
    return r, residuals


def nrm_scores_numpy(indptr, nbr_link, node_avail, link_avail):
    n = node_avail.shape[0]
    rows = np.repeat(np.arange(n), np.diff(indptr))
    incident = np.bincount(rows, weights=link_avail[nbr_link], minlength=n)
    return node_avail * incident


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _bfs_path_nb(indptr, nbr, nbr_link, link_avail, demand, src, dst):
        n = indptr.shape[0] - 1
        parent = np.full(n, -1, dtype=np.int64)
        parent_link = np.full(n, -1, dtype=np.int64)
        visited = np.zeros(n, dtype=np.bool_)
        queue = np.empty(n, dtype=np.int64)
        head = 0
        tail = 0
        queue[tail] = src
        tail += 1
        visited[src] = True
        while head < tail and not visited[dst]:
            u = queue[head]
            head += 1
            for s in range(indptr[u], indptr[u + 1]):
                v = nbr[s]
                if visited[v] or link_avail[nbr_link[s]] < demand:
                    continue
                visited[v] = True
                parent[v] = u
                parent_link[v] = nbr_link[s]
                queue[tail] = v
                tail += 1
        if not visited[dst]:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        hops = 0
        cur = dst
        while cur != src:
            cur = parent[cur]
            hops += 1
        nodes = np.empty(hops + 1, dtype=np.int64)
        links = np.empty(hops, dtype=np.int64)
        cur = dst
        for k in range(hops, 0, -1):
            nodes[k] = cur
            links[k - 1] = parent_link[cur]
            cur = parent[cur]
        nodes[0] = src
        return nodes, links

    @njit(cache=True)
    def _grc_iterate_nb(indptr, nbr, nbr_link, link_avail, c, damping, tol, max_iters):
        n = c.shape[0]
        colsum = np.zeros(n)
        for u in range(n):
            for s in range(indptr[u], indptr[u + 1]):
                colsum[u] += link_avail[nbr_link[s]]
        r = c.copy()
        nxt = np.empty(n)
        residuals = np.empty(max_iters)
        for it in range(max_iters):
            for i in range(n):
                nxt[i] = (1.0 - damping) * c[i]
            # M r: column u spreads r[u] to its neighbours
            for u in range(n):
                if colsum[u] <= 0.0:
                    continue
                ru = damping * r[u] / colsum[u]
                for s in range(indptr[u], indptr[u + 1]):
                    nxt[nbr[s]] += link_avail[nbr_link[s]] * ru
            res = 0.0
            for i in range(n):
                res += abs(nxt[i] - r[i])
                r[i] = nxt[i]
            residuals[it] = res
            if res < tol:
                return r, residuals[: it + 1]
        return r, residuals

    @njit(cache=True)
    def _nrm_scores_nb(indptr, nbr_link, node_avail, link_avail):
        n = node_avail.shape[0]
        out = np.empty(n)
        for u in range(n):
            acc = 0.0
            for s in range(indptr[u], indptr[u + 1]):
                acc += link_avail[nbr_link[s]]
            out[u] = node_avail[u] * acc
        return out


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

_BACKEND = "numpy"


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not importable")
    _BACKEND = name


def get_backend() -> str:
    return _BACKEND


set_backend("numba" if HAS_NUMBA and os.environ.get("VNE_LAB_NUMBA", "1") != "0" else "numpy")


def bfs_path(indptr, nbr, nbr_link, link_avail, demand, src, dst):
    if _BACKEND == "numba":
        if src == dst:
            return np.array([src], dtype=np.int64), _EMPTY.copy()
        return _bfs_path_nb(indptr, nbr, nbr_link, link_avail, float(demand), int(src), int(dst))
    return bfs_path_numpy(indptr, nbr, nbr_link, link_avail, demand, src, dst)


def grc_iterate(indptr, nbr, nbr_link, link_avail, c, damping, tol, max_iters):
    if _BACKEND == "numba":
        return _grc_iterate_nb(indptr, nbr, nbr_link, link_avail, c, float(damping), float(tol), int(max_iters))
    return grc_iterate_numpy(indptr, nbr, nbr_link, link_avail, c, damping, tol, max_iters)


def nrm_scores(indptr, nbr_link, node_avail, link_avail):
    if _BACKEND == "numba":
        return _nrm_scores_nb(indptr, nbr_link, node_avail, link_avail)
    return nrm_scores_numpy(indptr, nbr_link, node_avail, link_avail)
