"""Environment settings shared by training, evaluation and the CLI."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .topology import (
    PhysicalNetwork,
    WaxmanParams,
    generate_vnr_stream,
    generate_waxman,
    load_topology,
)

# workload streams are seeded apart from substrates so the two never share draws
WORKLOAD_SEED_OFFSET = 104_729


@dataclass
class EnvConfig:
    topology: str = "waxman"            # "waxman" or a path to an edge-list / JSON file
    n_nodes: int = 100
    alpha: float = 0.5
    beta: float = 0.2
    node_resource: tuple[float, float] = (50.0, 100.0)
    link_resource: tuple[float, float] = (50.0, 100.0)
    topology_seed: int | None = None    # fixed substrate across seeds when set
    n_vnrs: int = 1000
    arrival_rate: float = 0.04
    mean_lifetime: float = 1000.0
    node_range: tuple[int, int] = (2, 10)
    edge_prob: float = 0.5
    demand_range: tuple[float, float] = (0.0, 50.0)

    def __post_init__(self):
        self.node_resource = tuple(float(x) for x in self.node_resource)
        self.link_resource = tuple(float(x) for x in self.link_resource)
        self.node_range = tuple(int(x) for x in self.node_range)
        self.demand_range = tuple(float(x) for x in self.demand_range)
        if self.n_vnrs < 1:
            raise ValueError("n_vnrs must be >= 1")
        if self.arrival_rate <= 0 or self.mean_lifetime <= 0:
            raise ValueError("arrival rate and mean lifetime must be positive")
        for lo, hi in (self.node_resource, self.link_resource, self.node_range, self.demand_range):
            if lo > hi:
                raise ValueError(f"range ({lo}, {hi}) is inverted")

    def substrate(self, seed: int) -> PhysicalNetwork:
        s = seed if self.topology_seed is None else self.topology_seed
        if self.topology == "waxman":
            return generate_waxman(WaxmanParams(self.n_nodes, self.alpha, self.beta,
                                                self.node_resource, self.link_resource), s)
        return load_topology(self.topology, seed=s, node_resource=self.node_resource,
                             link_resource=self.link_resource)

    def workload(self, seed: int):
        return generate_vnr_stream(self.n_vnrs, self.arrival_rate, self.mean_lifetime, self.node_range,
                                   self.edge_prob, self.demand_range, seed=seed + WORKLOAD_SEED_OFFSET)

    def replace(self, **changes) -> "EnvConfig":
        d = asdict(self)
        d.update(changes)
        return EnvConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown environment keys: {sorted(unknown)}")
        return cls(**d)


def desk_env(**changes) -> EnvConfig:
    """Reduced setting used for learning runs on a laptop-class CPU."""
    # beta is raised so 30 nodes keep a link density comparable to the 100-node default
    base = EnvConfig(n_nodes=30, beta=0.5, node_range=(2, 6), n_vnrs=200, mean_lifetime=400.0,
                     topology_seed=0)
    return base.replace(**changes) if changes else base


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())
