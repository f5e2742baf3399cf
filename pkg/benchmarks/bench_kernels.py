"""Compare the compiled kernels with the pure-numpy fallback.

Each backend runs in its own interpreter (the fallback is forced with
``NETCHOICE_PURE=1``), so both see identical inputs built from the same seed.

    python3 benchmarks/bench_kernels.py [--events 20000] [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys
import time


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def worker(events, repeat):
    import numpy as np

    import netchoice
    from netchoice import _kernels
    from netchoice.generators import GrowthConfig, generate

    rng = np.random.default_rng(0)
    sizes = rng.integers(5, 40, size=events)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    X = rng.normal(size=(int(offsets[-1]), 3))
    chosen = np.array([rng.integers(s) for s in sizes], dtype=np.int64)
    theta = np.array([0.4, -0.2, 0.1])
    w = np.ones(events)

    codes = rng.integers(0, 50, size=int(offsets[-1])).astype(np.int64)
    logc = np.zeros(len(codes))
    theta_c = rng.normal(size=50)

    def fenwick():
        t = _kernels.Fenwick(50_000)
        for i in range(50_000):
            t.add(i, 1.0 + (i % 7))
        for u in rng.random(50_000) * t.total():
            t.find(u)

    out = {
        "backend": netchoice.BACKEND,
        "rows": int(offsets[-1]),
        "clogit_eval_order2": _best(
            lambda: _kernels.clogit_eval(X, offsets, chosen, theta, w, None, 2), repeat),
        "categorical_eval_order2": _best(
            lambda: _kernels.categorical_eval(codes, logc, offsets, chosen, theta_c, w, 2), repeat),
        "fenwick_50k": _best(fenwick, repeat),
        "generate_pa_n5000_m4": _best(
            lambda: generate(GrowthConfig(n=5000, m=4, model="pa", seed=1)), repeat),
    }
    print(json.dumps(out))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        return worker(args.events, args.repeat)

    results = []
    for pure in ("0", "1"):
        env = {**os.environ, "NETCHOICE_PURE": pure}
        proc = subprocess.run([sys.executable, __file__, "--worker", "--events", str(args.events),
                               "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        results.append(json.loads(proc.stdout.strip().splitlines()[-1]))
    fast, slow = results
    print(f"{'kernel':<26}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for key in fast:
        if key in ("backend", "rows"):
            continue
        print(f"{key:<26}{fast[key]:>11.4f}s{slow[key]:>11.4f}s{slow[key] / fast[key]:>9.1f}x")
    print(f"({fast['rows']} alternative rows, best of {args.repeat})")


if __name__ == "__main__":
    main()
