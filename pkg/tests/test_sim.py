import numpy as np
import pytest

from conftest import path_vnr, ring
from vne_lab.core import EmbeddingSolution, Status, embed_in_order
from vne_lab.heuristics import GrcSolver
from vne_lab.sim import (
    DecisionRecord,
    RejectAllSolver,
    SimulationError,
    Solver,
    acceptance_ratio,
    long_term_avg_revenue,
    metrics_from_log,
    run_simulation,
)
from vne_lab.topology import VirtualNetworkRequest, WaxmanParams, generate_vnr_stream, generate_waxman


class FirstFit(Solver):
    def allocate(self, net, vnr):
        def choose(net, sol, v):
            ok = [p for p in range(net.num_nodes)
                  if p not in sol.node_map.values() and net.node_available[p] >= vnr.node_demand[v]]
            return ok[0] if ok else None
        return embed_in_order(net, vnr, choose)


def _full(vid, t, life):
    # one node using a whole 100-capacity host of a 2-node substrate
    return VirtualNetworkRequest(vid, [100.0, 100.0], [(0, 1)], [100.0], t, life)


def test_departure_processed_before_arrival_at_same_time():
    net = ring(2 + 1)
    vnrs = [_full(0, 0.0, 10.0), _full(1, 10.0, 5.0), _full(2, 12.0, 5.0)]
    m = run_simulation(net, vnrs, FirstFit(), check_invariants=True)
    assert [r.embedded for r in m.log] == [True, True, False]


def test_reject_all_gives_zero_metrics():
    vnrs = generate_vnr_stream(30, 0.04, 100, seed=0)
    m = run_simulation(ring(6), vnrs, RejectAllSolver())
    assert acceptance_ratio(m) == 0.0 and long_term_avg_revenue(m) == 0.0
    assert m.total == 30 and not any(r.admitted for r in m.log)


def test_metric_formulas_with_lifetime_pricing():
    log = [DecisionRecord(0, True, True, 10.0, 12.0, 5.0), DecisionRecord(1, True, False, 0.0, 0.0, 7.0),
           DecisionRecord(2, False, False, 0.0, 0.0, 1.0), DecisionRecord(3, True, True, 20.0, 20.0, 2.0)]
    m = metrics_from_log(log, w_a=1.0, w_b=0.5)
    assert acceptance_ratio(m) == 0.5
    # ((1 + 0.5*5)*10 + (1 + 0.5*2)*20) / 4
    assert long_term_avg_revenue(m) == pytest.approx((35.0 + 40.0) / 4, rel=1e-15)
    assert m.mean_rc == pytest.approx((10 / 12 + 1.0) / 2)


def test_live_metrics_match_log_recomputation():
    net = generate_waxman(WaxmanParams(n_nodes=30), 0)
    vnrs = generate_vnr_stream(150, 0.08, 500, seed=1)
    m = run_simulation(net, vnrs, GrcSolver(), pricing=(1.0, 0.01), check_invariants=True)
    r = metrics_from_log(m.log, 1.0, 0.01)
    assert (r.accepted, r.total) == (m.accepted, m.total)
    assert r.revenue_sum == m.revenue_sum
    assert 0 < m.accepted < m.total


def test_unsorted_stream_rejected():
    vnrs = [path_vnr(2, vid=0), path_vnr(2, vid=1)]
    vnrs[0].arrival_time = 5.0
    with pytest.raises(ValueError):
        run_simulation(ring(4), vnrs, FirstFit())


class Exploding(Solver):
    def allocate(self, net, vnr):
        if vnr.id == 3:
            raise RuntimeError("boom")
        return FirstFit().allocate(net, vnr)


def test_solver_error_is_wrapped_with_partial_metrics():
    vnrs = generate_vnr_stream(10, 0.04, 10, (2, 3), seed=0)
    with pytest.raises(SimulationError) as info:
        run_simulation(ring(8), vnrs, Exploding())
    assert info.value.metrics.valid is False
    assert info.value.metrics.total == 3


class Leaky(Solver):
    """Deducts resources and then reports failure: the invariant checker must notice."""

    def allocate(self, net, vnr):
        net.node_available[0] -= 1.0
        return EmbeddingSolution(vnr.id, status=Status.FAILED)


def test_failed_allocation_mutation_detected():
    with pytest.raises(SimulationError, match="mutated"):
        run_simulation(ring(4), [path_vnr(2)], Leaky(), check_invariants=True)


def test_decision_log_is_byte_deterministic(tmp_path):
    net = generate_waxman(WaxmanParams(n_nodes=30), 2)
    vnrs = generate_vnr_stream(100, 0.04, 500, seed=3)
    a = run_simulation(net.copy(), vnrs, GrcSolver())
    b = run_simulation(net.copy(), vnrs, GrcSolver())
    a.write_log(tmp_path / "a.jsonl")
    b.write_log(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert "elapsed" not in (tmp_path / "a.jsonl").read_text()


def test_timing_adds_elapsed():
    m = run_simulation(ring(6), [path_vnr(2)], FirstFit(), timing=True)
    assert m.log[0].elapsed is not None and m.log[0].elapsed >= 0
    assert '"elapsed"' in m.log[0].to_json()


def test_all_resources_return_after_stream_drains():
    net = generate_waxman(WaxmanParams(n_nodes=20), 5)
    start = net.copy()
    vnrs = generate_vnr_stream(80, 0.1, 50, seed=5)
    run_simulation(net, vnrs, GrcSolver(), check_invariants=True)
    assert np.allclose(net.node_available, start.node_available, atol=1e-9)
    assert np.allclose(net.link_available, start.link_available, atol=1e-9)
