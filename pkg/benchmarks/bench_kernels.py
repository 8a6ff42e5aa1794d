"""Compare the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json]

Each kernel runs on the same seeded inputs under both backends; results
are checked for equality before timings are reported.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import timeit

from twinsim import _kernels_py

try:
    from twinsim import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _inputs(seed: int = 0):
    rng = random.Random(seed)
    words = ["real", "virtual", "store", "command", "pole", "weather", "aq", "device"]
    keys = [".".join(["ktwin", *rng.choices(words, k=rng.randint(2, 4))]) for _ in range(2000)]
    patterns = [".".join(["ktwin", *rng.choices(words + ["*", "#"], k=rng.randint(1, 4))]) for _ in range(20)]
    prefixes = [k.rsplit(".", 1)[0] for k in keys[:20]]
    times = sorted(rng.uniform(0, 1440) for _ in range(50_000))
    values = [rng.randint(0, 160) for _ in times]
    lat = sorted(rng.lognormvariate(-5, 0.5) for _ in range(50_000))
    return keys, patterns, prefixes, times, values, lat


def _cases(mod, data):
    keys, patterns, prefixes, times, values, lat = data
    return {
        "topic_match": lambda: [mod.topic_match(p, k) for p in patterns for k in keys],
        "prefix_match": lambda: [mod.prefix_match(p, k) for p in prefixes for k in keys],
        "bin_counts": lambda: mod.bin_counts(times, 1.0, 1440),
        "nearest_rank": lambda: [mod.nearest_rank(lat, q) for q in range(1, 100)],
        "step_integral": lambda: mod.step_integral(times, values, 1440.0),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    data = _inputs()
    py, cy = _cases(_kernels_py, data), _cases(_ckernels, data)
    rows = []
    for name in py:
        if py[name]() != cy[name]():
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        t_py = min(timeit.repeat(py[name], number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(cy[name], number=1, repeat=args.repeat))
        rows.append({"kernel": name, "python_s": t_py, "cython_s": t_cy, "speedup": t_py / t_cy})

    if args.json:
        print(json.dumps(rows, indent=1))
    else:
        print(f"{'kernel':<14} {'python':>10} {'cython':>10} {'speedup':>8}")
        for r in rows:
            print(f"{r['kernel']:<14} {r['python_s'] * 1e3:>8.2f}ms {r['cython_s'] * 1e3:>8.2f}ms {r['speedup']:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
