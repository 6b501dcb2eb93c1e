"""Seeded experiment runs, scenario sweeps and CSV emission."""
from __future__ import annotations

import csv
import functools
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import EnvConfig
from .heuristics import GrcSolver, NrmSolver, RandomSolver
from .sim import RejectAllSolver, Solver, run_simulation

SOLVERS = ("grc", "nrm", "random", "hrl-acra", "lower-only", "reject")
SWEEP_AXES = ("arrival_rate", "demand_upper", "node_size_upper", "pricing_w_b")


@dataclass
class SolverSpec:
    name: str
    lower: str | None = None        # checkpoint paths for the learned solvers
    upper: str | None = None
    beam_width: int = 3
    admission: str = "policy"
    decode: str = "greedy"
    grc_admission: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.name not in SOLVERS:
            raise ValueError(f"unknown solver {self.name!r}; choose from {SOLVERS}")
        if self.name == "lower-only":
            self.admission = "always"
        if self.name in ("hrl-acra", "lower-only") and not self.lower:
            raise ValueError(f"{self.name} needs a lower-level checkpoint")
        if self.name == "hrl-acra" and self.admission == "policy" and not self.upper:
            raise ValueError("hrl-acra with policy admission needs an upper-level checkpoint")

    @property
    def label(self) -> str:
        return self.name

    def build(self, env: EnvConfig) -> Solver:
        if self.name == "grc":
            return GrcSolver(admission_threshold=self.grc_admission)
        if self.name == "nrm":
            return NrmSolver()
        if self.name == "random":
            return RandomSolver(self.seed)
        if self.name == "reject":
            return RejectAllSolver()
        from .agents import HrlSolver

        lower = _load(self.lower)
        upper = _load(self.upper) if self.admission == "policy" else None
        return HrlSolver(lower, upper, self.beam_width, env.mean_lifetime, self.admission, self.decode, self.seed)


@functools.lru_cache(maxsize=8)
def _load(path):
    from .agents import load_policy

    return load_policy(path)[0]


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    solver: SolverSpec = field(default_factory=lambda: SolverSpec("grc"))
    pricing: tuple[float, float] = (1.0, 0.0)
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    out_dir: str | None = None
    timing: bool = False
    check_invariants: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        self.pricing = tuple(float(x) for x in self.pricing)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        env = EnvConfig.from_dict(d.pop("env", {}))
        solver = SolverSpec(**d.pop("solver", {"name": "grc"}))
        return cls(env=env, solver=solver, **d)


def thread_cap(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("VNE_LAB_THREADS", "1"))
    return max(1, threads)


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """One simulation; returns the per-seed row (decision log under ``log``)."""
    net = cfg.env.substrate(seed)
    vnrs = cfg.env.workload(seed)
    solver = cfg.solver.build(cfg.env)
    m = run_simulation(net, vnrs, solver, cfg.pricing, check_invariants=cfg.check_invariants, timing=cfg.timing)
    return {
        "solver": cfg.solver.label,
        "seed": seed,
        "accepted": m.accepted,
        "total": m.total,
        "ac_ratio": 100.0 * m.accepted / m.total,
        "la_rev": m.revenue_sum / m.total,
        "mean_rc": m.mean_rc,
        "wall_clock": m.wall_clock,
        "log": [r.to_json() for r in m.log],
    }


def aggregate(rows: list[dict]) -> dict:
    """Mean and population std (0 for a single seed) of each metric."""
    out = {"solver": rows[0]["solver"], "n_seeds": len(rows)}
    for key in ("ac_ratio", "la_rev", "mean_rc", "wall_clock"):
        vals = np.array([r[key] for r in rows], dtype=np.float64)
        out[f"{key}_mean"] = float(vals.mean())
        out[f"{key}_std"] = float(vals.std())
    return out


SEED_FIELDS = ["solver", "seed", "accepted", "total", "ac_ratio", "la_rev", "mean_rc"]
AGG_FIELDS = ["solver", "n_seeds", "ac_ratio_mean", "ac_ratio_std", "la_rev_mean", "la_rev_std",
              "mean_rc_mean", "mean_rc_std"]


def _fmt(key: str, value):
    if isinstance(value, float):
        return f"{value:.2f}" if key.startswith("ac_ratio") else f"{value:.6f}"
    return value


def format_csv(rows: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([_fmt(k, row[k]) for k in fields])
    return buf.getvalue()


def format_table_cell(agg: dict) -> str:
    """``81.96 ± 2.64`` style cell for the acceptance ratio."""
    return f"{agg['ac_ratio_mean']:.2f} ± {agg['ac_ratio_std']:.2f}"


def _run_one(args):
    cfg, seed = args
    return run_seed(cfg, seed)


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def run_experiment(cfg: ExperimentConfig, threads: int | None = None):
    """Run every seed; returns ``(per_seed_rows, aggregate_row)`` and writes CSV/JSONL if ``out_dir``."""
    rows = _map(_run_one, [(cfg, s) for s in cfg.seeds], thread_cap(threads))
    agg = aggregate(rows)
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fields = SEED_FIELDS + (["wall_clock"] if cfg.timing else [])
        afields = AGG_FIELDS + (["wall_clock_mean", "wall_clock_std"] if cfg.timing else [])
        (out / "per_seed.csv").write_text(format_csv(rows, fields))
        (out / "aggregate.csv").write_text(format_csv([agg], afields))
        for r in rows:
            (out / f"decisions_seed{r['seed']}.jsonl").write_text("".join(line + "\n" for line in r["log"]))
    return rows, agg


@dataclass
class SweepSpec:
    axis: str
    values: list

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; choose from {SWEEP_AXES}")
        if not self.values:
            raise ValueError("sweep values must be nonempty")

    def apply(self, cfg: ExperimentConfig, value) -> ExperimentConfig:
        env, pricing = cfg.env, cfg.pricing
        if self.axis == "arrival_rate":
            env = env.replace(arrival_rate=float(value))
        elif self.axis == "demand_upper":
            env = env.replace(demand_range=(env.demand_range[0], float(value)))
        elif self.axis == "node_size_upper":
            env = env.replace(node_range=(env.node_range[0], int(value)))
        else:
            pricing = (pricing[0], float(value))
        return ExperimentConfig(env, cfg.solver, pricing, list(cfg.seeds), None, cfg.timing, cfg.check_invariants)


def run_sweep(base: ExperimentConfig, sweep: SweepSpec, solvers: list[SolverSpec] | None = None,
              threads: int | None = None) -> list[dict]:
    """One aggregate row per (solver, axis value); every seed of every cell runs in the shared pool."""
    solvers = solvers or [base.solver]
    cells = [(s, v) for s in solvers for v in sweep.values]
    jobs = []
    for s, v in cells:
        cfg = sweep.apply(ExperimentConfig(base.env, s, base.pricing, list(base.seeds), None, base.timing,
                                           base.check_invariants), v)
        jobs.extend((cfg, seed) for seed in cfg.seeds)
    flat = _map(_run_one, jobs, thread_cap(threads))
    n = len(base.seeds)
    results = []
    for i, (s, v) in enumerate(cells):
        agg = aggregate(flat[i * n:(i + 1) * n])
        agg.update(axis=sweep.axis, value=v)
        results.append(agg)
    if base.out_dir:
        out = Path(base.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"sweep_{sweep.axis}.csv").write_text(format_csv(results, ["axis", "value"] + AGG_FIELDS))
        emit_plot_data(results, out / f"plot_{sweep.axis}.csv")
    return results


def emit_plot_data(results: list[dict], path=None) -> str:
    """Long-format CSV (solver, axis, value, metric, mean, std) for external plotting."""
    rows = []
    for r in results:
        for metric in ("ac_ratio", "la_rev", "mean_rc"):
            rows.append({"solver": r["solver"], "axis": r.get("axis", ""), "value": r.get("value", ""),
                         "metric": metric, "mean": r[f"{metric}_mean"], "std": r[f"{metric}_std"]})
    text = format_csv(rows, ["solver", "axis", "value", "metric", "mean", "std"])
    if path is not None:
        Path(path).write_text(text)
    return text
