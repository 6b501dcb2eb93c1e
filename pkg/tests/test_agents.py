import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import path_vnr, ring
from vne_lab.agents import (
    EmptyMaskError,
    HrlSolver,
    LowerPolicy,
    PolicyConfig,
    UpperPolicy,
    beam_search,
    build_mask,
    load_policy,
    lower_decode_step,
    lower_encode,
    lower_state,
    rollout,
    save_policy,
    upper_forward,
    upper_state,
)
from vne_lab.config import desk_env
from vne_lab.core import EmbeddingSolution, Status, embed_in_order
from vne_lab.sim import run_simulation
from vne_lab.topology import PhysicalNetwork, VirtualNetworkRequest

SMALL = dict(embed_dim=8, hidden_dim=8, gnn_layers=2, pe_dim=4)


@pytest.fixture(scope="module")
def lower():
    return LowerPolicy(PolicyConfig(**SMALL, seed=1))


@pytest.fixture(scope="module")
def upper():
    return UpperPolicy(PolicyConfig(**SMALL, seed=2))


def uneven_ring(n=6):
    r = np.random.default_rng(n)
    links = [(i, (i + 1) % n) for i in range(n)] + [(0, n // 2)]
    return PhysicalNetwork(r.uniform(50, 100, n), links, r.uniform(50, 100, len(links)))


def test_upper_probabilities(upper):
    net, vnr = uneven_ring(), path_vnr(3)
    p, value, h = upper_forward(upper, upper_state(net, vnr, 1000.0), upper.initial_hidden())
    assert p.shape == (2,) and abs(p.sum() - 1.0) < 1e-12 and np.all(p > 0)
    assert np.isfinite(value) and h.shape == (8,)


def test_lower_mask_matches_loop_oracle():
    net = uneven_ring(8)
    net.node_available[[1, 4]] = 5.0
    for demand in (0.0, 5.0, 6.0, 60.0, 101.0):
        for used in ([], [0], [2, 3, 7]):
            oracle = np.array([net.node_available[i] >= demand and i not in used for i in range(8)])
            assert np.array_equal(build_mask(net, demand, used), oracle)


def test_masked_nodes_get_zero_probability(lower):
    net, vnr = uneven_ring(), path_vnr(3)
    sol = EmbeddingSolution(vnr.id, node_map={0: 2})
    state = lower_state(net, vnr, sol, 1)
    enc = lower_encode(lower, vnr, net.max_capacity)
    mask = build_mask(net, vnr.node_demand[1], [2])
    p, _, _ = lower_decode_step(lower, state, enc[1], lower.initial_hidden(), mask)
    assert p[2] == 0.0 and abs(p.sum() - 1.0) < 1e-12
    only = np.zeros(6, dtype=bool)
    only[4] = True
    p1, _, _ = lower_decode_step(lower, state, enc[1], lower.initial_hidden(), only)
    assert p1[4] == 1.0 and p1.sum() == 1.0
    with pytest.raises(EmptyMaskError):
        lower_decode_step(lower, state, enc[1], lower.initial_hidden(), np.zeros(6, dtype=bool))


def test_encoder_ignores_substrate_and_padding(lower):
    vnr = VirtualNetworkRequest(0, [10, 20, 30], [(0, 1), (1, 2)], [5, 6])
    a = lower_encode(lower, vnr, 100.0)
    assert a.shape == (3, 8 + 4)
    big = VirtualNetworkRequest(1, [1, 2, 3, 4, 5], [(0, 1), (1, 2), (2, 3), (3, 4)], [1, 1, 1, 1])
    from vne_lab.agents import vnr_features
    fa, fb = vnr_features(vnr, 100.0), vnr_features(big, 100.0)
    batched = lower.encode([fa[0], fb[0]], [fa[1], fb[1]], [fa[2], fb[2]], [vnr.node_order, big.node_order])
    assert np.allclose(batched.data[0, :3], a, atol=1e-12)


def test_greedy_equals_beam_width_one(lower):
    env = desk_env(n_vnrs=30)
    net = env.substrate(0)
    for vnr in env.workload(3):
        g_net, b_net = net.copy(), net.copy()
        g, _ = rollout(lower, vnr, g_net, "greedy")
        b = beam_search(lower, vnr, b_net, width=1)
        assert g.status == b.status
        assert g.node_map == b.node_map and g.link_map == b.link_map
        assert np.array_equal(g_net.node_available, b_net.node_available)
        assert np.array_equal(g_net.link_available, b_net.link_available)
        net = g_net


def test_single_node_beam_picks_most_probable(lower):
    net = uneven_ring(6)
    vnr = VirtualNetworkRequest(0, [30.0], np.zeros((0, 2)), [])
    sol = beam_search(lower, vnr, net.copy(), width=6)
    greedy, _ = rollout(lower, vnr, net.copy())
    assert sol.node_map == greedy.node_map and sol.cost == 30.0


def test_wide_beam_equals_min_cost_enumeration(lower):
    net = uneven_ring(7)
    vnr = VirtualNetworkRequest(0, [20.0, 30.0], [(0, 1)], [15.0])
    costs = {}
    for a, b in itertools.permutations(range(7), 2):
        s = embed_in_order(net.copy(), vnr, lambda _n, _s, v, pick=(a, b): pick[v])
        if s.status == Status.EMBEDDED:
            costs[(a, b)] = s.cost
    best = min(costs.values())
    sol = beam_search(lower, vnr, net.copy(), width=7 * 6)
    assert sol.cost == best
    assert costs[(sol.node_map[0], sol.node_map[1])] == best


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_beam_results_are_valid_and_atomic(seed):
    from vne_lab.core import validate_solution
    pol = LowerPolicy(PolicyConfig(**SMALL, seed=seed % 3))
    r = np.random.default_rng(seed)
    net = uneven_ring(6)
    net.node_available[:] = r.uniform(0, 60, 6)
    n = int(r.integers(1, 5))
    vnr = VirtualNetworkRequest(0, r.uniform(0, 40, n), [(i, i + 1) for i in range(n - 1)], r.uniform(0, 40, n - 1))
    before = (net.node_available.copy(), net.link_available.copy())
    work = net.copy()
    sol = beam_search(pol, vnr, work, width=int(r.integers(1, 5)))
    if sol.status == Status.EMBEDDED:
        validate_solution(net, vnr, sol)
    else:
        assert np.array_equal(work.node_available, before[0])
        assert np.array_equal(work.link_available, before[1])


def test_infeasible_request_fails_cleanly(lower):
    net = ring(5, 50.0)
    vnr = path_vnr(2, node=80.0)
    before = net.node_available.copy()
    assert beam_search(lower, vnr, net, width=3).status == Status.FAILED
    assert rollout(lower, vnr, net)[0].status == Status.FAILED
    assert np.array_equal(net.node_available, before)
    # more virtual nodes than physical ones cannot be injective
    assert beam_search(lower, path_vnr(6, node=1.0), net).status == Status.FAILED


def test_beam_rejects_bad_width(lower):
    with pytest.raises(ValueError):
        beam_search(lower, path_vnr(2), ring(4), width=0)


def _log(solver, env, seed=0):
    return [r.to_json() for r in run_simulation(env.substrate(seed), env.workload(seed), solver).log]


def test_hrl_hidden_state_resets_between_runs(lower, upper):
    env = desk_env(n_vnrs=25)
    solver = HrlSolver(lower, upper, beam_width=2, mean_lifetime=env.mean_lifetime)
    first = _log(solver, env)
    h_first = [h.copy() for h in solver.hidden_log]
    second = _log(solver, env)
    assert first == second
    assert np.array_equal(solver.hidden_log[0], np.zeros(8))
    assert all(np.array_equal(a, b) for a, b in zip(h_first, solver.hidden_log))
    assert not np.array_equal(solver.hidden_log[1], solver.hidden_log[0])


def test_always_admit_ablation(lower):
    env = desk_env(n_vnrs=20)
    solver = HrlSolver(lower, None, admission="always")
    log = run_simulation(env.substrate(0), env.workload(0), solver).log
    assert all(r.admitted for r in log)
    with pytest.raises(ValueError):
        HrlSolver(lower, None, admission="policy")


def test_global_head_needs_size():
    with pytest.raises(ValueError):
        PolicyConfig(head="global")
    pol = LowerPolicy(PolicyConfig(**SMALL, head="global", n_physical=6))
    sol, _ = rollout(pol, path_vnr(3), uneven_ring(6))
    assert sol.status == Status.EMBEDDED


def test_checkpoint_reload_gives_identical_decisions(tmp_path, lower, upper):
    save_policy(lower, tmp_path / "lower")
    save_policy(upper, tmp_path / "upper")
    lower2, meta = load_policy(tmp_path / "lower")
    upper2, _ = load_policy(tmp_path / "upper")
    assert meta["kind"] == "LowerPolicy"
    assert lower2.param_hash() == lower.param_hash()
    env = desk_env(n_vnrs=25)
    a = _log(HrlSolver(lower, upper, 3, env.mean_lifetime), env, 4)
    b = _log(HrlSolver(lower2, upper2, 3, env.mean_lifetime), env, 4)
    assert a == b
