"""Compare the compiled and pure-Python quadrature backends.

Usage: ``python3 benchmarks/bench_core.py [--points 64] [--repeats 5]``.
"""

import argparse

from naolab.bench import core_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    times = core_benchmark(args.points, args.repeats)
    for name, sec in sorted(times.items()):
        print(f"{name:8s} {sec * 1e3:9.3f} ms")
    if "cython" in times:
        print(f"speedup  {times['python'] / times['cython']:9.1f}x")


if __name__ == "__main__":
    main()
