"""Classical node-ranking baselines: GRC, NRM and uniform random placement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Status, embed_in_order
from .sim import Solver
from .topology import PhysicalNetwork, _csr


class ConvergenceError(RuntimeError):
    pass


@dataclass
class GrcParams:
    damping: float = 0.85
    tol: float = 1e-6
    max_iters: int = 1000

    def __post_init__(self):
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def grc_rank_arrays(indptr, nbr, nbr_link, node_res, link_res, damping=0.85, tol=1e-6,
                    max_iters=1000, return_residuals=False):
    node_res = np.asarray(node_res, dtype=np.float64)
    n = len(node_res)
    if n == 0:
        raise ValueError("graph has no nodes")
    total = node_res.sum()
    c = node_res / total if total > 0 else np.full(n, 1.0 / n)
    r, residuals = _kernels.grc_iterate(indptr, nbr, nbr_link, np.asarray(link_res, dtype=np.float64),
                                        c, damping, tol, max_iters)
    if residuals[-1] >= tol:
        raise ConvergenceError(f"GRC did not converge in {max_iters} iterations")
    return (r, residuals) if return_residuals else r


def grc_rank(graph, damping=0.85, tol=1e-6, max_iters=1000) -> np.ndarray:
    """GRC ranking of a substrate (available resources) or a VNR (demands)."""
    if isinstance(graph, PhysicalNetwork):
        return grc_rank_arrays(graph.indptr, graph.nbr, graph.nbr_link, graph.node_available,
                               graph.link_available, damping, tol, max_iters)
    indptr, nbr, nbr_link = _csr(graph.num_nodes, graph.links)
    return grc_rank_arrays(indptr, nbr, nbr_link, graph.node_demand, graph.link_demand,
                           damping, tol, max_iters)


def _descending(score: np.ndarray) -> np.ndarray:
    # stable sort keeps ties in node-id order
    return np.argsort(-score, kind="stable")


class GrcSolver(Solver):
    name = "grc"

    def __init__(self, params: GrcParams | None = None, admission_threshold: float | None = None):
        self.params = params or GrcParams()
        self.admission_threshold = admission_threshold

    def allocate(self, net, vnr):
        p = self.params
        v_rank = grc_rank(vnr, p.damping, p.tol, p.max_iters)
        p_order = _descending(grc_rank(net, p.damping, p.tol, p.max_iters))

        def choose(net, sol, v):
            demand = vnr.node_demand[v]
            used = set(sol.node_map.values())
            for cand in p_order.tolist():
                if cand not in used and net.node_available[cand] >= demand:
                    return cand
            return None

        return embed_in_order(net, vnr, choose, order=_descending(v_rank))

    def admit(self, net, vnr):
        if self.admission_threshold is None:
            return True
        trial = self.allocate(net.copy(), vnr)
        return trial.status == Status.EMBEDDED and trial.rc_ratio >= self.admission_threshold


def nrm_score(net: PhysicalNetwork, node: int | None = None):
    """Available compute times summed available bandwidth of incident links."""
    scores = _kernels.nrm_scores(net.indptr, net.nbr_link, net.node_available, net.link_available)
    return scores if node is None else float(scores[node])


class NrmSolver(Solver):
    name = "nrm"

    def allocate(self, net, vnr):
        def choose(net, sol, v):
            demand = vnr.node_demand[v]
            score = nrm_score(net).copy()
            feasible = net.node_available >= demand
            feasible[list(sol.node_map.values())] = False
            if not feasible.any():
                return None
            score[~feasible] = -np.inf
            return int(np.argmax(score))

        return embed_in_order(net, vnr, choose, order=_descending(vnr.node_demand))


class RandomSolver(Solver):
    """Uniformly random feasible placement in the VNR's node order."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self, net):
        self.rng = np.random.default_rng(self.seed)

    def allocate(self, net, vnr):
        def choose(net, sol, v):
            feasible = net.node_available >= vnr.node_demand[v]
            feasible[list(sol.node_map.values())] = False
            idx = np.flatnonzero(feasible)
            if idx.size == 0:
                return None
            return int(self.rng.choice(idx))

        return embed_in_order(net, vnr, choose)


class AlwaysAdmitGreedy(Solver):
    """First-fit placement in node order; used as a trivially simple reference."""

    name = "first-fit"

    def allocate(self, net, vnr):
        def choose(net, sol, v):
            feasible = net.node_available >= vnr.node_demand[v]
            feasible[list(sol.node_map.values())] = False
            idx = np.flatnonzero(feasible)
            return int(idx[0]) if idx.size else None

        return embed_in_order(net, vnr, choose)
