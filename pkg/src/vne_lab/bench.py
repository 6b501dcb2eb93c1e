"""Wall-clock benchmarks: compiled vs numpy kernels, and per-decision solver time."""
from __future__ import annotations

import time

import numpy as np

from . import _kernels
from .config import EnvConfig
from .topology import WaxmanParams, generate_waxman


def _time(fn, repeats: int) -> float:
    fn()  # warm-up (triggers compilation on the compiled path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(n_nodes: int = 100, repeats: int = 200, seed: int = 0) -> list[dict]:
    """Seconds per call of each kernel on each available backend; outputs are cross-checked."""
    net = generate_waxman(WaxmanParams(n_nodes=n_nodes), seed)
    rng = np.random.default_rng(seed)
    pairs = rng.choice(n_nodes, size=(32, 2), replace=True)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    c = net.node_available / net.node_available.sum()
    cases = {
        "bfs_path": lambda: [_kernels.bfs_path(net.indptr, net.nbr, net.nbr_link, net.link_available,
                                               60.0, int(a), int(b)) for a, b in pairs],
        "grc_iterate": lambda: _kernels.grc_iterate(net.indptr, net.nbr, net.nbr_link, net.link_available,
                                                    c, 0.85, 1e-6, 1000),
        "nrm_scores": lambda: _kernels.nrm_scores(net.indptr, net.nbr_link, net.node_available,
                                                  net.link_available),
    }
    backends = ["numpy"] + (["numba"] if _kernels.HAS_NUMBA else [])
    previous = _kernels.get_backend()
    rows, outputs = [], {}
    try:
        for backend in backends:
            _kernels.set_backend(backend)
            for name, fn in cases.items():
                outputs[(backend, name)] = fn()
                rows.append({"kernel": name, "backend": backend, "seconds_per_call": _time(fn, repeats)})
    finally:
        _kernels.set_backend(previous)
    if len(backends) == 2:
        for name in cases:
            a, b = outputs[("numpy", name)], outputs[("numba", name)]
            if name == "bfs_path":
                same = all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1]) for x, y in zip(a, b))
            elif name == "grc_iterate":
                same = np.allclose(a[0], b[0], rtol=0, atol=1e-12)
            else:
                same = np.allclose(a, b, rtol=1e-12)
            if not same:
                raise AssertionError(f"backends disagree on {name}")
    return rows


def bench_solvers(solvers, env: EnvConfig, seed: int = 0) -> list[dict]:
    """Mean per-decision wall-clock of each solver spec over one seeded run."""
    from .experiment import ExperimentConfig, run_seed

    rows = []
    for spec in solvers:
        cfg = ExperimentConfig(env, spec, seeds=[seed], timing=True)
        r = run_seed(cfg, seed)
        rows.append({"solver": spec.label, "decisions": r["total"],
                     "seconds_per_decision": r["wall_clock"] / r["total"], "ac_ratio": r["ac_ratio"]})
    return rows
