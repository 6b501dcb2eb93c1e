"""Substrate and virtual-network data model, random generators and file I/O."""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MAX_REGENERATIONS = 100


class GenerationError(RuntimeError):
    pass


class TopologyParseError(ValueError):
    pass


@dataclass(frozen=True)
class PhysicalNode:
    id: int
    capacity: float
    available: float


@dataclass(frozen=True)
class PhysicalLink:
    id: int
    endpoints: tuple[int, int]
    capacity: float
    available: float


def _csr(n: int, links: np.ndarray):
    """Symmetric CSR adjacency with neighbours sorted by node id."""
    if links.size == 0:
        return np.zeros(n + 1, dtype=np.int64), np.empty(0, np.int64), np.empty(0, np.int64)
    src = np.concatenate([links[:, 0], links[:, 1]])
    dst = np.concatenate([links[:, 1], links[:, 0]])
    lid = np.concatenate([np.arange(len(links)), np.arange(len(links))])
    order = np.lexsort((dst, src))
    src, dst, lid = src[order], dst[order], lid[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return np.cumsum(indptr), dst.astype(np.int64), lid.astype(np.int64)


def _components(n: int, links: np.ndarray) -> list[list[int]]:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in links:
        ru, rv = find(int(u)), find(int(v))
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


class PhysicalNetwork:
    """Undirected substrate with one compute resource per node and bandwidth per link.

    Structure arrays are shared between copies; only the two availability
    vectors are owned per instance.
    """

    def __init__(self, node_capacity, links, link_capacity, node_available=None,
                 link_available=None, rng_seed: int = 0):
        self.node_capacity = np.asarray(node_capacity, dtype=np.float64)
        links = np.asarray(links, dtype=np.int64).reshape(-1, 2)
        self.link_capacity = np.asarray(link_capacity, dtype=np.float64)
        n = len(self.node_capacity)
        if len(links) != len(self.link_capacity):
            raise ValueError("links and link_capacity differ in length")
        if np.any(self.node_capacity <= 0):
            raise ValueError("node capacities must be positive")
        if len(links):
            if np.any(links[:, 0] == links[:, 1]):
                raise ValueError("self-loops are not allowed")
            if links.min() < 0 or links.max() >= n:
                raise ValueError("link endpoint out of range")
            canon = np.sort(links, axis=1)
            if len(np.unique(canon, axis=0)) != len(canon):
                raise ValueError("multi-edges are not allowed")
            links = canon
        self.links = links
        self.node_available = (self.node_capacity.copy() if node_available is None
                               else np.asarray(node_available, dtype=np.float64).copy())
        self.link_available = (self.link_capacity.copy() if link_available is None
                               else np.asarray(link_available, dtype=np.float64).copy())
        self.rng_seed = int(rng_seed)
        self.indptr, self.nbr, self.nbr_link = _csr(n, links)
        self._link_index = {(int(u), int(v)): k for k, (u, v) in enumerate(links)}

    # -- structure ---------------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return len(self.node_capacity)

    @property
    def num_links(self) -> int:
        return len(self.links)

    @property
    def nodes(self) -> list[PhysicalNode]:
        return [PhysicalNode(i, float(c), float(a))
                for i, (c, a) in enumerate(zip(self.node_capacity, self.node_available))]

    @property
    def link_list(self) -> list[PhysicalLink]:
        return [PhysicalLink(k, (int(u), int(v)), float(self.link_capacity[k]), float(self.link_available[k]))
                for k, (u, v) in enumerate(self.links)]

    def neighbors(self, node: int) -> np.ndarray:
        return self.nbr[self.indptr[node]:self.indptr[node + 1]]

    def link_id(self, u: int, v: int) -> int:
        return self._link_index[(min(u, v), max(u, v))]

    def is_connected(self) -> bool:
        return len(_components(self.num_nodes, self.links)) == 1

    @property
    def max_capacity(self) -> float:
        vals = [self.node_capacity.max()]
        if self.num_links:
            vals.append(self.link_capacity.max())
        return float(max(vals))

    # -- availability state -------------------------------------------------
    def copy(self) -> "PhysicalNetwork":
        clone = object.__new__(PhysicalNetwork)
        clone.__dict__.update(self.__dict__)
        clone.node_available = self.node_available.copy()
        clone.link_available = self.link_available.copy()
        return clone

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        return self.node_available.copy(), self.link_available.copy()

    def restore(self, snap) -> None:
        self.node_available[:] = snap[0]
        self.link_available[:] = snap[1]

    def state_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.node_available.tobytes())
        h.update(self.link_available.tobytes())
        return h.hexdigest()

    def reset(self) -> None:
        self.node_available[:] = self.node_capacity
        self.link_available[:] = self.link_capacity

    def check_invariants(self, atol: float = 0.0) -> None:
        for name, avail, cap in (("node", self.node_available, self.node_capacity),
                                 ("link", self.link_available, self.link_capacity)):
            if np.any(avail < -atol) or np.any(avail > cap + atol):
                bad = np.flatnonzero((avail < -atol) | (avail > cap + atol))
                raise AssertionError(f"{name} availability out of [0, capacity] at {bad[:5]}")

    def to_networkx(self, available_only_above: float | None = None):
        import networkx as nx

        g = nx.Graph()
        for i in range(self.num_nodes):
            g.add_node(i, capacity=float(self.node_capacity[i]), available=float(self.node_available[i]))
        for k, (u, v) in enumerate(self.links):
            if available_only_above is not None and self.link_available[k] < available_only_above:
                continue
            g.add_edge(int(u), int(v), id=k, capacity=float(self.link_capacity[k]),
                       available=float(self.link_available[k]))
        return g

    def to_dict(self) -> dict:
        return {
            "rng_seed": self.rng_seed,
            "nodes": [{"id": n.id, "capacity": n.capacity, "available": n.available} for n in self.nodes],
            "links": [{"endpoints": list(l.endpoints), "capacity": l.capacity, "available": l.available}
                      for l in self.link_list],
        }

    def __repr__(self) -> str:
        return f"PhysicalNetwork(nodes={self.num_nodes}, links={self.num_links}, seed={self.rng_seed})"


@dataclass
class VirtualNetworkRequest:
    id: int
    node_demand: np.ndarray
    links: np.ndarray
    link_demand: np.ndarray
    arrival_time: float = 0.0
    lifetime: float = 1.0
    node_order: np.ndarray | None = None

    def __post_init__(self):
        self.node_demand = np.asarray(self.node_demand, dtype=np.float64)
        self.links = np.asarray(self.links, dtype=np.int64).reshape(-1, 2)
        self.link_demand = np.asarray(self.link_demand, dtype=np.float64)
        n = len(self.node_demand)
        if len(self.links) != len(self.link_demand):
            raise ValueError("links and link_demand differ in length")
        if np.any(self.node_demand < 0) or np.any(self.link_demand < 0):
            raise ValueError("demands must be non-negative")
        if not self.lifetime > 0:
            raise ValueError("lifetime must be positive")
        if len(self.links):
            if np.any(self.links[:, 0] == self.links[:, 1]):
                raise ValueError("virtual self-loop")
            if self.links.min() < 0 or self.links.max() >= n:
                raise ValueError("virtual link endpoint out of range")
        if self.node_order is None:
            self.node_order = bfs_order(n, self.links)
        self.node_order = np.asarray(self.node_order, dtype=np.int64)
        if sorted(self.node_order.tolist()) != list(range(n)):
            raise ValueError("node_order must be a permutation of the node indices")

    @property
    def num_nodes(self) -> int:
        return len(self.node_demand)

    @property
    def num_links(self) -> int:
        return len(self.links)

    @property
    def nodes(self) -> list[float]:
        return self.node_demand.tolist()

    def incident_links(self, node: int) -> list[int]:
        return [k for k, (u, v) in enumerate(self.links) if u == node or v == node]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "nodes": self.node_demand.tolist(),
            "links": [[int(u), int(v), float(d)] for (u, v), d in zip(self.links, self.link_demand)],
            "arrival_time": self.arrival_time,
            "lifetime": self.lifetime,
            "node_order": self.node_order.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VirtualNetworkRequest":
        links = np.array([[u, v] for u, v, _ in d["links"]], dtype=np.int64).reshape(-1, 2)
        dem = np.array([x for _, _, x in d["links"]], dtype=np.float64)
        return cls(d["id"], d["nodes"], links, dem, d["arrival_time"], d["lifetime"], d.get("node_order"))


def bfs_order(n: int, links) -> np.ndarray:
    """Breadth-first visiting order from node 0; unreachable nodes follow in id order."""
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in np.asarray(links, dtype=np.int64).reshape(-1, 2):
        adj[u].append(int(v))
        adj[v].append(int(u))
    seen = [False] * n
    order = []
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        queue = [root]
        while queue:
            u = queue.pop(0)
            order.append(u)
            for v in sorted(adj[u]):
                if not seen[v]:
                    seen[v] = True
                    queue.append(v)
    return np.array(order, dtype=np.int64)


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------

@dataclass
class WaxmanParams:
    n_nodes: int = 100
    alpha: float = 0.5
    beta: float = 0.2
    node_resource: tuple[float, float] = (50.0, 100.0)
    link_resource: tuple[float, float] = (50.0, 100.0)

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be >= 2")
        if not (0 < self.alpha <= 1 and 0 < self.beta <= 1):
            raise ValueError("alpha and beta must lie in (0, 1]")
        for lo, hi in (self.node_resource, self.link_resource):
            if lo > hi or lo <= 0:
                raise ValueError("resource range must satisfy 0 < low <= high")


def waxman_probabilities(pos: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Pairwise link probabilities ``beta * exp(-d / (alpha * L))``, L = max distance."""
    d = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    scale = d.max()
    if scale == 0:
        scale = 1.0
    return beta * np.exp(-d / (alpha * scale))


def generate_waxman(params: WaxmanParams, seed: int) -> PhysicalNetwork:
    rng = np.random.default_rng(seed)
    n = params.n_nodes
    iu = np.triu_indices(n, k=1)
    links = np.empty((0, 2), dtype=np.int64)
    for attempt in range(MAX_REGENERATIONS):
        pos = rng.uniform(0.0, 1.0, size=(n, 2))
        prob = waxman_probabilities(pos, params.alpha, params.beta)[iu]
        keep = rng.uniform(size=prob.shape) < prob
        links = np.stack([iu[0][keep], iu[1][keep]], axis=1).astype(np.int64)
        if len(_components(n, links)) == 1:
            break
    comps = _components(n, links)
    bridge_cap = 0.5 * (params.link_resource[0] + params.link_resource[1])
    bridges = []
    if len(comps) > 1:
        logger.info("waxman graph still disconnected after %d draws; bridging %d components",
                    MAX_REGENERATIONS, len(comps))
        for a, b in zip(comps[:-1], comps[1:]):
            bridges.append((int(rng.choice(a)), int(rng.choice(b))))
    node_cap = rng.uniform(*params.node_resource, size=n)
    link_cap = rng.uniform(*params.link_resource, size=len(links))
    if bridges:
        links = np.concatenate([links, np.array(bridges, dtype=np.int64)])
        link_cap = np.concatenate([link_cap, np.full(len(bridges), bridge_cap)])
    net = PhysicalNetwork(node_cap, links, link_cap, rng_seed=seed)
    if not net.is_connected():  # pragma: no cover - bridging guarantees connectivity
        raise GenerationError("could not produce a connected substrate")
    return net


def generate_vnr_stream(count: int, arrival_rate: float, mean_lifetime: float,
                        node_range: tuple[int, int] = (2, 10), edge_prob: float = 0.5,
                        demand_range: tuple[float, float] = (0.0, 50.0), seed: int = 0,
                        ) -> list[VirtualNetworkRequest]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if arrival_rate <= 0 or mean_lifetime <= 0:
        raise ValueError("arrival_rate and mean_lifetime must be positive")
    lo_n, hi_n = node_range
    if lo_n < 1 or lo_n > hi_n:
        raise ValueError("invalid node_range")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    lo_d, hi_d = demand_range
    if lo_d < 0 or lo_d > hi_d:
        raise ValueError("invalid demand_range")
    rng = np.random.default_rng(seed)
    median = 0.5 * (lo_d + hi_d)
    t = 0.0
    out = []
    for i in range(count):
        gap = rng.exponential(1.0 / arrival_rate)
        while gap <= 0.0:
            gap = rng.exponential(1.0 / arrival_rate)
        t += gap
        life = rng.exponential(mean_lifetime)
        while life <= 0.0:
            life = rng.exponential(mean_lifetime)
        n = int(rng.integers(lo_n, hi_n + 1))
        iu = np.triu_indices(n, k=1)
        keep = rng.uniform(size=len(iu[0])) < edge_prob
        links = np.stack([iu[0][keep], iu[1][keep]], axis=1).astype(np.int64)
        node_dem = rng.uniform(lo_d, hi_d, size=n)
        link_dem = rng.uniform(lo_d, hi_d, size=len(links))
        comps = _components(n, links)
        if len(comps) > 1:
            extra = np.array([[a[0], b[0]] for a, b in zip(comps[:-1], comps[1:])], dtype=np.int64)
            links = np.concatenate([links, np.sort(extra, axis=1)])
            link_dem = np.concatenate([link_dem, np.full(len(extra), median)])
        out.append(VirtualNetworkRequest(i, node_dem, links, link_dem, float(t), float(life)))
    return out


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

def _fill(rng, count, resource):
    return rng.uniform(resource[0], resource[1], size=count)


def load_topology(path, fmt: str | None = None, seed: int = 0,
                  node_resource=(50.0, 100.0), link_resource=(50.0, 100.0)) -> PhysicalNetwork:
    """Read an edge-list or JSON topology.

    Edge-list lines are ``node <id> [capacity]`` and ``<u> <v> [capacity]``;
    ``#`` starts a comment. Missing capacities are drawn uniformly from the
    given ranges with ``seed``. Node ids are relabelled to ``0..n-1`` in
    sorted order.
    """
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix.lower() == ".json" else "edge-list"
    text = path.read_text()
    if not text.strip():
        raise TopologyParseError(f"{path}: empty topology file")
    rng = np.random.default_rng(seed)
    if fmt == "json":
        try:
            data = json.loads(text)
            node_ids = [int(n["id"]) for n in data["nodes"]]
            node_caps = [n.get("capacity") for n in data["nodes"]]
            node_av = [n.get("available") for n in data["nodes"]]
            raw_links = [(int(l["endpoints"][0]), int(l["endpoints"][1]), l.get("capacity"), l.get("available"))
                         for l in data["links"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise TopologyParseError(f"{path}: {exc}") from exc
    elif fmt == "edge-list":
        node_ids, node_caps, node_av, raw_links = [], [], [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "node":
                    node_ids.append(int(parts[1]))
                    node_caps.append(float(parts[2]) if len(parts) > 2 else None)
                    node_av.append(None)
                elif len(parts) in (2, 3):
                    raw_links.append((int(parts[0]), int(parts[1]),
                                      float(parts[2]) if len(parts) == 3 else None, None))
                else:
                    raise ValueError(line)
            except (ValueError, IndexError) as exc:
                raise TopologyParseError(f"{path}:{lineno}: cannot parse {line!r}") from exc
    else:
        raise ValueError(f"unknown topology format {fmt!r}")

    ids = sorted(set(node_ids) | {u for u, _, _, _ in raw_links} | {v for _, v, _, _ in raw_links})
    if not ids:
        raise TopologyParseError(f"{path}: no nodes")
    relabel = {nid: i for i, nid in enumerate(ids)}
    n = len(ids)
    fill_nodes = _fill(rng, n, node_resource)
    caps = fill_nodes.copy()
    avail = np.full(n, np.nan)
    for nid, cap, av in zip(node_ids, node_caps, node_av):
        if cap is not None:
            caps[relabel[nid]] = cap
        if av is not None:
            avail[relabel[nid]] = av
    avail = np.where(np.isnan(avail), caps, avail)
    seen = {}
    for u, v, cap, av in raw_links:
        if u == v:
            raise TopologyParseError(f"{path}: self-loop on node {u}")
        key = (min(relabel[u], relabel[v]), max(relabel[u], relabel[v]))
        if key in seen:
            raise TopologyParseError(f"{path}: duplicate link {u}-{v}")
        seen[key] = (cap, av)
    fill_links = _fill(rng, len(seen), link_resource)
    links = np.array(list(seen.keys()), dtype=np.int64).reshape(-1, 2)
    lcap = np.array([c if c is not None else f for (c, _), f in zip(seen.values(), fill_links)])
    lav = np.array([a if a is not None else c for (_, a), c in zip(seen.values(), lcap)])
    net = PhysicalNetwork(caps, links, lcap, avail, lav, rng_seed=seed)
    if not net.is_connected():
        warnings.warn(f"{path}: topology is disconnected; link mapping will fail across components")
    return net


def save_topology(net: PhysicalNetwork, path, fmt: str | None = None) -> None:
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix.lower() == ".json" else "edge-list"
    if fmt == "json":
        path.write_text(json.dumps(net.to_dict(), indent=1))
        return
    lines = [f"node {i} {c!r}" for i, c in enumerate(net.node_capacity.tolist())]
    lines += [f"{u} {v} {c!r}" for (u, v), c in zip(net.links.tolist(), net.link_capacity.tolist())]
    path.write_text("\n".join(lines) + "\n")


def save_vnrs(vnrs, path) -> None:
    Path(path).write_text("".join(json.dumps(v.to_dict()) + "\n" for v in vnrs))


def load_vnrs(path) -> list[VirtualNetworkRequest]:
    return [VirtualNetworkRequest.from_dict(json.loads(line))
            for line in Path(path).read_text().splitlines() if line.strip()]
