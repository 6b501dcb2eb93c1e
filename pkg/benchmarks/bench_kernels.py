"""Compare the compiled and pure-numpy kernel paths.

    python benchmarks/bench_kernels.py [--n-nodes 100] [--repeats 200]
"""
import argparse

from vne_lab.bench import bench_kernels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-nodes", type=int, default=100)
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    rows = bench_kernels(args.n_nodes, args.repeats)
    base = {r["kernel"]: r["seconds_per_call"] for r in rows if r["backend"] == "numpy"}
    print(f"{'kernel':<12} {'backend':<7} {'us/call':>10} {'speedup':>8}")
    for r in rows:
        us = r["seconds_per_call"] * 1e6
        print(f"{r['kernel']:<12} {r['backend']:<7} {us:>10.1f} {base[r['kernel']] / r['seconds_per_call']:>7.1f}x")


if __name__ == "__main__":
    main()
