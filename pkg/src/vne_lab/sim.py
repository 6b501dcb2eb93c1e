"""Discrete-event online VNE simulation around a pluggable solver."""
from __future__ import annotations

import heapq
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core import EmbeddingSolution, Status, check_conservation, release, revenue, validate_solution
from .topology import PhysicalNetwork, VirtualNetworkRequest

logger = logging.getLogger(__name__)

# departures sort before arrivals at equal timestamps
DEPARTURE, ARRIVAL = 0, 1


@dataclass(order=True)
class SimulationEvent:
    time: float
    kind: int
    vnr_id: int


class SimulationError(RuntimeError):
    """A solver raised mid-run; ``metrics`` holds the partial, invalid result."""

    def __init__(self, msg, metrics):
        super().__init__(msg)
        self.metrics = metrics


class Solver:
    """Admission + allocation strategy driven by :func:`run_simulation`.

    ``allocate`` must commit resources on success and leave the network
    untouched on failure.
    """

    name = "solver"

    def reset(self, net: PhysicalNetwork) -> None:
        pass

    def admit(self, net: PhysicalNetwork, vnr: VirtualNetworkRequest) -> bool:
        return True

    def allocate(self, net: PhysicalNetwork, vnr: VirtualNetworkRequest) -> EmbeddingSolution:
        raise NotImplementedError

    def observe(self, vnr: VirtualNetworkRequest, admitted: bool, sol: EmbeddingSolution | None) -> None:
        """Hook called after every decision (used by learning agents)."""


class RejectAllSolver(Solver):
    name = "reject"

    def admit(self, net, vnr):
        return False


@dataclass
class DecisionRecord:
    id: int
    admitted: bool
    embedded: bool
    revenue: float
    cost: float
    lifetime: float
    elapsed: float | None = None

    def to_json(self) -> str:
        d = {"id": self.id, "admitted": self.admitted, "embedded": self.embedded,
             "revenue": self.revenue, "cost": self.cost, "lifetime": self.lifetime}
        if self.elapsed is not None:
            d["elapsed"] = self.elapsed
        return json.dumps(d)


@dataclass
class MetricsAccumulator:
    w_a: float = 1.0
    w_b: float = 0.0
    accepted: int = 0
    total: int = 0
    revenue_sum: float = 0.0
    rc_ratios: list[float] = field(default_factory=list)
    wall_clock: float = 0.0
    valid: bool = True
    log: list[DecisionRecord] = field(default_factory=list)

    def add(self, rec: DecisionRecord) -> None:
        self.log.append(rec)
        self.total += 1
        if rec.embedded:
            self.accepted += 1
            self.revenue_sum += (self.w_a + self.w_b * rec.lifetime) * rec.revenue
            self.rc_ratios.append(rec.revenue / rec.cost if rec.cost > 0 else 1.0)

    @property
    def mean_rc(self) -> float:
        return float(np.mean(self.rc_ratios)) if self.rc_ratios else 0.0

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(rec.to_json() + "\n")


def acceptance_ratio(m: MetricsAccumulator) -> float:
    return m.accepted / m.total if m.total else 0.0


def long_term_avg_revenue(m: MetricsAccumulator) -> float:
    return m.revenue_sum / m.total if m.total else 0.0


def metrics_from_log(log, w_a: float = 1.0, w_b: float = 0.0) -> MetricsAccumulator:
    m = MetricsAccumulator(w_a, w_b)
    for rec in log:
        m.add(rec)
    return m


def run_simulation(net: PhysicalNetwork, vnrs, solver: Solver, pricing=(1.0, 0.0), *,
                   check_invariants: bool = False, timing: bool = False) -> MetricsAccumulator:
    """Process arrivals and departures in time order.

    With ``check_invariants`` the conservation invariant and every embedded
    solution are verified after each event, and failed allocations are checked
    to leave availability bit-identical. ``timing`` stores per-decision
    elapsed seconds in the log (off by default so logs are reproducible).
    """
    w_a, w_b = pricing
    metrics = MetricsAccumulator(w_a, w_b)
    by_id = {}
    events: list[SimulationEvent] = []
    last_arrival = -np.inf
    for v in vnrs:
        if v.arrival_time < last_arrival:
            raise ValueError("VNR stream must be sorted by arrival time")
        last_arrival = v.arrival_time
        by_id[v.id] = v
        events.append(SimulationEvent(v.arrival_time, ARRIVAL, v.id))
    heapq.heapify(events)
    active: dict[int, EmbeddingSolution] = {}
    solver.reset(net)
    start = time.perf_counter()
    now = -np.inf
    try:
        while events:
            ev = heapq.heappop(events)
            assert ev.time >= now, "event queue went backwards"
            now = ev.time
            vnr = by_id[ev.vnr_id]
            if ev.kind == DEPARTURE:
                release(net, active.pop(vnr.id), vnr)
            else:
                t0 = time.perf_counter()
                sol = None
                admitted = bool(solver.admit(net, vnr))
                if admitted:
                    before = net.state_hash() if check_invariants else None
                    sol = solver.allocate(net, vnr)
                    if sol.status == Status.EMBEDDED:
                        active[vnr.id] = sol
                        heapq.heappush(events, SimulationEvent(now + vnr.lifetime, DEPARTURE, vnr.id))
                        if check_invariants:
                            validate_solution(net, vnr, sol)
                    elif check_invariants and net.state_hash() != before:
                        raise AssertionError(f"failed allocation of VNR {vnr.id} mutated the network")
                solver.observe(vnr, admitted, sol)
                embedded = sol is not None and sol.status == Status.EMBEDDED
                metrics.add(DecisionRecord(
                    vnr.id, admitted, embedded,
                    revenue(vnr) if embedded else 0.0,
                    sol.cost if embedded else 0.0,
                    vnr.lifetime,
                    time.perf_counter() - t0 if timing else None,
                ))
            if check_invariants:
                check_conservation(net, ((by_id[i], s) for i, s in active.items()))
    except Exception as exc:
        metrics.valid = False
        metrics.wall_clock = time.perf_counter() - start
        raise SimulationError(f"simulation aborted after {metrics.total} decisions: {exc}", metrics) from exc
    metrics.wall_clock = time.perf_counter() - start
    return metrics
