"""Embedding solutions, constraint checks, allocation primitives and accounting."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .topology import PhysicalNetwork, VirtualNetworkRequest


class Status(str, enum.Enum):
    IN_PROGRESS = "in-progress"
    EMBEDDED = "embedded"
    FAILED = "failed"


class ReleaseError(RuntimeError):
    pass


@dataclass
class EmbeddingSolution:
    vnr_id: int
    node_map: dict[int, int] = field(default_factory=dict)
    link_map: dict[int, list[int]] = field(default_factory=dict)
    link_paths: dict[int, list[int]] = field(default_factory=dict)
    status: Status = Status.IN_PROGRESS
    revenue: float = 0.0
    cost: float = 0.0
    released: bool = False

    @property
    def rc_ratio(self) -> float:
        return self.revenue / self.cost if self.cost > 0 else 1.0

    def copy(self) -> "EmbeddingSolution":
        return EmbeddingSolution(self.vnr_id, dict(self.node_map),
                                 {k: list(v) for k, v in self.link_map.items()},
                                 {k: list(v) for k, v in self.link_paths.items()},
                                 self.status, self.revenue, self.cost, self.released)

    def to_dict(self) -> dict:
        return {
            "vnr_id": self.vnr_id,
            "status": self.status.value,
            "node_map": {str(k): int(v) for k, v in sorted(self.node_map.items())},
            "link_paths": {str(k): [int(x) for x in v] for k, v in sorted(self.link_paths.items())},
            "revenue": self.revenue,
            "cost": self.cost,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class AllocationLedger:
    """Ordered record of deductions.

    Each entry keeps the pre-deduction value so that rollback restores it by
    assignment rather than by re-adding, which is bit-exact in floating point.
    """

    NODE, LINK = 0, 1

    def __init__(self):
        self.entries: list[tuple[int, int, float, float]] = []

    def record(self, kind: int, idx: int, amount: float, previous: float) -> None:
        self.entries.append((kind, idx, amount, previous))

    def __len__(self) -> int:
        return len(self.entries)


def check_node_feasible(net: PhysicalNetwork, demand: float, node: int, used) -> bool:
    if not 0 <= node < net.num_nodes:
        raise IndexError(f"physical node {node} does not exist")
    return bool(net.node_available[node] >= demand) and node not in used


def place_node(net: PhysicalNetwork, sol: EmbeddingSolution, vnr: VirtualNetworkRequest,
               v_node: int, p_node: int, ledger: AllocationLedger) -> bool:
    demand = vnr.node_demand[v_node]
    if v_node in sol.node_map or not check_node_feasible(net, demand, p_node, sol.node_map.values()):
        return False
    prev = net.node_available[p_node]
    net.node_available[p_node] = prev - demand
    ledger.record(AllocationLedger.NODE, p_node, demand, prev)
    sol.node_map[v_node] = p_node
    return True


def find_path(net: PhysicalNetwork, src: int, dst: int, demand: float):
    """Min-hop path over links with available >= demand; ``(nodes, links)`` or ``None``."""
    nodes, links = _kernels.bfs_path(net.indptr, net.nbr, net.nbr_link, net.link_available,
                                     float(demand), int(src), int(dst))
    if len(nodes) == 0:
        return None
    return nodes, links


def route_link(net: PhysicalNetwork, sol: EmbeddingSolution, vnr: VirtualNetworkRequest,
               v_link: int, ledger: AllocationLedger) -> bool:
    u, v = vnr.links[v_link]
    demand = vnr.link_demand[v_link]
    if u not in sol.node_map or v not in sol.node_map:
        raise ValueError("both endpoints must be placed before routing")
    src, dst = sol.node_map[u], sol.node_map[v]
    assert src != dst, "injective node mapping violated"
    found = find_path(net, src, dst, demand)
    if found is None:
        return False
    nodes, links = found
    for lid in links.tolist():
        prev = net.link_available[lid]
        net.link_available[lid] = prev - demand
        ledger.record(AllocationLedger.LINK, lid, demand, prev)
    sol.link_map[v_link] = links.tolist()
    sol.link_paths[v_link] = nodes.tolist()
    return True


def route_new_links(net: PhysicalNetwork, sol: EmbeddingSolution, vnr: VirtualNetworkRequest,
                    v_node: int, ledger: AllocationLedger) -> list[int] | None:
    """Route every unrouted virtual link of ``v_node`` whose other end is placed.

    Links are taken in order of the other endpoint's index. Returns the routed
    link indices, or ``None`` on the first failure (earlier routes stay in the
    ledger for the caller to roll back).
    """
    pending = []
    for k, (a, b) in enumerate(vnr.links.tolist()):
        if k in sol.link_map:
            continue
        if a == v_node and b in sol.node_map:
            pending.append((b, k))
        elif b == v_node and a in sol.node_map:
            pending.append((a, k))
    pending.sort()
    done = []
    for _, k in pending:
        if not route_link(net, sol, vnr, k, ledger):
            return None
        done.append(k)
    return done


def rollback(net: PhysicalNetwork, ledger: AllocationLedger) -> None:
    for kind, idx, _amount, prev in reversed(ledger.entries):
        if kind == AllocationLedger.NODE:
            net.node_available[idx] = prev
        else:
            net.link_available[idx] = prev
    ledger.entries.clear()


def revenue(vnr: VirtualNetworkRequest) -> float:
    return float(vnr.node_demand.sum() + vnr.link_demand.sum())


def cost(sol: EmbeddingSolution, vnr: VirtualNetworkRequest) -> float:
    total = float(sum(vnr.node_demand[v] for v in sol.node_map))
    for k, path in sol.link_map.items():
        total += len(path) * float(vnr.link_demand[k])
    return total


def finalize(sol: EmbeddingSolution, vnr: VirtualNetworkRequest) -> EmbeddingSolution:
    sol.status = Status.EMBEDDED
    sol.revenue = revenue(vnr)
    sol.cost = cost(sol, vnr)
    return sol


def embed_in_order(net: PhysicalNetwork, vnr: VirtualNetworkRequest, choose, order=None) -> EmbeddingSolution:
    """Place virtual nodes in ``order`` (default ``vnr.node_order``), routing links right after each placement.

    ``choose(net, sol, v_node)`` returns a physical node id or ``None``. Any
    failure rolls back everything and returns a failed solution.
    """
    sol = EmbeddingSolution(vnr.id)
    ledger = AllocationLedger()
    for v in (vnr.node_order if order is None else order).tolist():
        p = choose(net, sol, v)
        if p is None or not place_node(net, sol, vnr, v, p, ledger) \
                or route_new_links(net, sol, vnr, v, ledger) is None:
            rollback(net, ledger)
            return EmbeddingSolution(vnr.id, status=Status.FAILED)
    return finalize(sol, vnr)


def release(net: PhysicalNetwork, sol: EmbeddingSolution, vnr: VirtualNetworkRequest) -> None:
    """Return an embedded VNR's resources. Clamped at capacity to absorb rounding drift."""
    if sol.status != Status.EMBEDDED:
        raise ReleaseError(f"VNR {sol.vnr_id} is not embedded ({sol.status.value})")
    if sol.released:
        raise ReleaseError(f"VNR {sol.vnr_id} released twice")
    for v, p in sol.node_map.items():
        net.node_available[p] = min(net.node_capacity[p], net.node_available[p] + vnr.node_demand[v])
    for k, links in sol.link_map.items():
        d = vnr.link_demand[k]
        for lid in links:
            net.link_available[lid] = min(net.link_capacity[lid], net.link_available[lid] + d)
    sol.released = True


# --------------------------------------------------------------------------
# invariant checks
# --------------------------------------------------------------------------

class ConstraintViolation(AssertionError):
    pass


def validate_solution(net: PhysicalNetwork, vnr: VirtualNetworkRequest, sol: EmbeddingSolution) -> None:
    """Direct scan of node/link mapping constraints for an embedded solution."""
    if sol.status != Status.EMBEDDED:
        raise ConstraintViolation("solution is not embedded")
    if sorted(sol.node_map) != list(range(vnr.num_nodes)):
        raise ConstraintViolation("not every virtual node is mapped")
    hosts = list(sol.node_map.values())
    if len(set(hosts)) != len(hosts):
        raise ConstraintViolation("two virtual nodes share a physical node")
    if sorted(sol.link_map) != list(range(vnr.num_links)):
        raise ConstraintViolation("not every virtual link is mapped")
    for k, (a, b) in enumerate(vnr.links.tolist()):
        nodes = sol.link_paths[k]
        links = sol.link_map[k]
        if nodes[0] != sol.node_map[a] or nodes[-1] != sol.node_map[b]:
            raise ConstraintViolation(f"path of virtual link {k} does not join its hosts")
        if len(set(nodes)) != len(nodes):
            raise ConstraintViolation(f"path of virtual link {k} has a loop")
        if len(links) != len(nodes) - 1 or len(links) < 1:
            raise ConstraintViolation(f"path of virtual link {k} is malformed")
        for (x, y), lid in zip(zip(nodes[:-1], nodes[1:]), links):
            if net.link_id(x, y) != lid:
                raise ConstraintViolation(f"path of virtual link {k} uses a non-existent hop")
    if not np.isclose(sol.revenue, revenue(vnr)) or not np.isclose(sol.cost, cost(sol, vnr)):
        raise ConstraintViolation("stored revenue/cost disagree with recomputation")
    if sol.cost < sol.revenue - 1e-9:
        raise ConstraintViolation("cost below revenue")


def check_conservation(net: PhysicalNetwork, active, atol: float = 1e-6) -> None:
    """``capacity - available`` must equal the demands of active embeddings on each element.

    ``active`` is an iterable of ``(vnr, solution)`` pairs.
    """
    node_used = np.zeros(net.num_nodes)
    link_used = np.zeros(net.num_links)
    for vnr, sol in active:
        for v, p in sol.node_map.items():
            node_used[p] += vnr.node_demand[v]
        for k, links in sol.link_map.items():
            for lid in links:
                link_used[lid] += vnr.link_demand[k]
    if not np.allclose(net.node_capacity - net.node_available, node_used, atol=atol, rtol=0):
        bad = np.flatnonzero(~np.isclose(net.node_capacity - net.node_available, node_used, atol=atol, rtol=0))
        raise ConstraintViolation(f"node conservation broken at {bad[:5]}")
    if not np.allclose(net.link_capacity - net.link_available, link_used, atol=atol, rtol=0):
        bad = np.flatnonzero(~np.isclose(net.link_capacity - net.link_available, link_used, atol=atol, rtol=0))
        raise ConstraintViolation(f"link conservation broken at {bad[:5]}")
    net.check_invariants()
