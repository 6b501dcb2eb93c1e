import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vne_lab.topology import (
    PhysicalNetwork,
    TopologyParseError,
    VirtualNetworkRequest,
    WaxmanParams,
    bfs_order,
    generate_vnr_stream,
    generate_waxman,
    load_topology,
    load_vnrs,
    save_topology,
    save_vnrs,
    waxman_probabilities,
)


def test_waxman_link_count_band_over_20_seeds():
    counts = [generate_waxman(WaxmanParams(), s).num_links for s in range(20)]
    assert all(350 <= c <= 650 for c in counts), counts


def test_waxman_connected_and_capacities_in_range():
    for s in range(5):
        net = generate_waxman(WaxmanParams(n_nodes=40), s)
        assert net.is_connected()
        assert np.all((net.node_capacity >= 50) & (net.node_capacity <= 100))
        assert np.all((net.link_capacity >= 50) & (net.link_capacity <= 100))
        assert np.array_equal(net.node_available, net.node_capacity)
        assert np.array_equal(net.link_available, net.link_capacity)


def test_waxman_two_nodes_single_edge():
    net = generate_waxman(WaxmanParams(n_nodes=2, alpha=1.0, beta=1.0), 3)
    assert net.num_links == 1
    assert net.links.tolist() == [[0, 1]]


def test_waxman_same_seed_byte_identical():
    a = generate_waxman(WaxmanParams(), 7)
    b = generate_waxman(WaxmanParams(), 7)
    assert a.links.tobytes() == b.links.tobytes()
    assert a.node_capacity.tobytes() == b.node_capacity.tobytes()
    assert a.link_capacity.tobytes() == b.link_capacity.tobytes()
    assert generate_waxman(WaxmanParams(), 8).state_hash() != a.state_hash()


def test_waxman_probability_decreases_with_distance():
    pos = np.array([[0.0, 0.0], [0.1, 0.0], [0.4, 0.0], [1.0, 0.0]])
    p = waxman_probabilities(pos, 0.5, 0.2)
    assert p[0, 1] > p[0, 2] > p[0, 3]
    # L is the largest pairwise distance (1.0): p = beta * exp(-d / (alpha * L))
    assert p[0, 3] == pytest.approx(0.2 * np.exp(-1.0 / 0.5), rel=1e-12)


@pytest.mark.parametrize("bad", [dict(n_nodes=1), dict(alpha=0.0), dict(beta=1.5),
                                 dict(node_resource=(100, 50))])
def test_waxman_params_validation(bad):
    with pytest.raises(ValueError):
        WaxmanParams(**bad)


def test_vnr_stream_default_workload_shape():
    vnrs = generate_vnr_stream(1000, 0.04, 1000, (2, 10), 0.5, (0, 50), seed=0)
    assert len(vnrs) == 1000
    times = np.array([v.arrival_time for v in vnrs])
    assert np.all(np.diff(times) > 0)
    assert all(v.lifetime > 0 for v in vnrs)
    sizes = np.array([v.num_nodes for v in vnrs])
    assert sizes.min() == 2 and sizes.max() == 10
    for v in vnrs:
        assert np.all((v.node_demand >= 0) & (v.node_demand <= 50))
        assert np.all((v.link_demand >= 0) & (v.link_demand <= 50))
        assert sorted(v.node_order.tolist()) == list(range(v.num_nodes))


def test_vnr_stream_mean_interarrival_within_5_percent():
    vnrs = generate_vnr_stream(10000, 0.04, 1000, seed=1)
    gaps = np.diff([0.0] + [v.arrival_time for v in vnrs])
    assert abs(gaps.mean() - 25.0) / 25.0 < 0.05


def test_vnr_stream_two_node_full_edges():
    vnrs = generate_vnr_stream(50, 0.04, 100, (2, 2), 1.0, seed=2)
    assert all(v.num_nodes == 2 and v.num_links == 1 for v in vnrs)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), hi=st.integers(2, 8), p=st.floats(0.0, 1.0))
def test_vnr_stream_connected_and_deterministic(seed, hi, p):
    a = generate_vnr_stream(5, 0.1, 50, (1, hi), p, seed=seed)
    b = generate_vnr_stream(5, 0.1, 50, (1, hi), p, seed=seed)
    for x, y in zip(a, b):
        assert x.to_dict() == y.to_dict()
        order = bfs_order(x.num_nodes, x.links)
        assert order.tolist() == x.node_order.tolist()
        # a single BFS from node 0 must reach everything once components are chained
        seen = {0}
        frontier = [0]
        while frontier:
            u = frontier.pop()
            for a_, b_ in x.links.tolist():
                for s, t in ((a_, b_), (b_, a_)):
                    if s == u and t not in seen:
                        seen.add(t)
                        frontier.append(t)
        assert len(seen) == x.num_nodes


def test_bfs_order_known_graph():
    # 0-2, 0-1, 1-3, 2-3, 3-4
    assert bfs_order(5, [(0, 2), (0, 1), (1, 3), (2, 3), (3, 4)]).tolist() == [0, 1, 2, 3, 4]
    assert bfs_order(4, [(0, 3), (3, 1), (1, 2)]).tolist() == [0, 3, 1, 2]


def test_vnr_validation():
    with pytest.raises(ValueError):
        VirtualNetworkRequest(0, [1.0, -1.0], [(0, 1)], [1.0])
    with pytest.raises(ValueError):
        VirtualNetworkRequest(0, [1.0, 1.0], [(0, 0)], [1.0])
    with pytest.raises(ValueError):
        VirtualNetworkRequest(0, [1.0, 1.0], [(0, 2)], [1.0])
    with pytest.raises(ValueError):
        VirtualNetworkRequest(0, [1.0, 1.0], [(0, 1)], [1.0], lifetime=0.0)
    with pytest.raises(ValueError):
        VirtualNetworkRequest(0, [1.0, 1.0], [(0, 1)], [1.0], node_order=[0, 0])


def test_physical_network_validation():
    with pytest.raises(ValueError):
        PhysicalNetwork([10, 10], [(0, 0)], [5])
    with pytest.raises(ValueError):
        PhysicalNetwork([10, 10], [(0, 1), (1, 0)], [5, 5])
    with pytest.raises(ValueError):
        PhysicalNetwork([10, 0], [(0, 1)], [5])


def test_copy_shares_structure_not_state(ring6):
    c = ring6.copy()
    c.node_available[0] -= 1
    assert ring6.node_available[0] == 100.0
    assert c.links is ring6.links
    snap = ring6.snapshot()
    ring6.link_available[2] = 3.0
    ring6.restore(snap)
    assert ring6.link_available[2] == 100.0


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def _synthetic_edge_list(n, m, seed):
    # spanning tree plus extra chords, ids offset to exercise relabelling
    rng = np.random.default_rng(seed)
    edges = {(int(rng.integers(0, i)), i) for i in range(1, n)}
    while len(edges) < m:
        u, v = sorted(rng.choice(n, 2, replace=False).tolist())
        edges.add((u, v))
    lines = ["# synthetic"] + [f"node {100 + i}" for i in range(n)]
    lines += [f"{100 + u} {100 + v} {rng.uniform(50, 100):.3f}" for u, v in sorted(edges)]
    return "\n".join(lines) + "\n"


@pytest.mark.parametrize("n,m", [(40, 64), (161, 166)])
def test_load_edge_list_counts(tmp_path, n, m):
    # same node/edge counts as the two public research topologies
    p = _write(tmp_path, f"t{n}.txt", _synthetic_edge_list(n, m, n))
    net = load_topology(p, seed=1)
    assert (net.num_nodes, net.num_links) == (n, m)
    assert np.all((net.node_capacity >= 50) & (net.node_capacity <= 100))


def test_load_edge_list_capacities_from_file(tmp_path):
    p = _write(tmp_path, "t.txt", "node 5 70\nnode 9 80.5\n5 9 33  # link\n")
    net = load_topology(p)
    assert net.node_capacity.tolist() == [70.0, 80.5]
    assert net.link_capacity.tolist() == [33.0]


def test_load_empty_file_is_parse_error(tmp_path):
    with pytest.raises(TopologyParseError):
        load_topology(_write(tmp_path, "e.txt", "  \n"))
    with pytest.raises(TopologyParseError):
        load_topology(_write(tmp_path, "e.txt", "# only a comment\n"))


def test_load_garbage_is_parse_error(tmp_path):
    with pytest.raises(TopologyParseError):
        load_topology(_write(tmp_path, "g.txt", "1 2 3 4 5\n"))
    with pytest.raises(TopologyParseError):
        load_topology(_write(tmp_path, "g.json", json.dumps({"nodes": [{"x": 1}]})))


def test_load_disconnected_warns(tmp_path):
    with pytest.warns(UserWarning, match="disconnected"):
        net = load_topology(_write(tmp_path, "d.txt", "0 1\n2 3\n"))
    assert net.num_nodes == 4


def test_topology_round_trip(tmp_path):
    net = generate_waxman(WaxmanParams(n_nodes=20), 4)
    for name in ("t.json", "t.txt"):
        save_topology(net, tmp_path / name)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            back = load_topology(tmp_path / name)
        assert back.links.tolist() == net.links.tolist()
        assert np.array_equal(back.node_capacity, net.node_capacity)
        assert np.array_equal(back.link_capacity, net.link_capacity)


def test_vnr_round_trip(tmp_path):
    vnrs = generate_vnr_stream(20, 0.04, 100, seed=3)
    save_vnrs(vnrs, tmp_path / "v.jsonl")
    back = load_vnrs(tmp_path / "v.jsonl")
    assert [v.to_dict() for v in back] == [v.to_dict() for v in vnrs]
