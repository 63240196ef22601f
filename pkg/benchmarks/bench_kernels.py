"""
Compare the compiled and numpy training kernels.

    python benchmarks/bench_kernels.py [--sizes 2,11,51,251] [--batch 256] [--repeat 20]

Prints seconds per call for a critic step, a generator step and a forward
pass on each backend, plus the speedup of the compiled one.
"""

import argparse
import timeit

import numpy as np

from migan import kernels, nn


def _inputs(p, batch, rng):
    G = nn.generator_net(p, rng)
    D = nn.critic_net(p, rng)
    X = rng.standard_normal((batch, p))
    Z = rng.standard_normal((batch, p))
    m = (rng.random(p) < 0.6).astype(float)
    m[0] = 1.0
    eps = rng.random(batch)
    return G, D, X, Z, m, eps


def bench(p, batch, repeat):
    G, D, X, Z, m, eps = _inputs(p, batch, np.random.default_rng(p))
    _, fake = kernels.gen_forward(G, X, Z, m, backend="python")
    cases = {
        "gen_forward": lambda b: kernels.gen_forward(G, X, Z, m, backend=b),
        "critic_step": lambda b: kernels.critic_step(D, X, fake, eps, 10.0, backend=b),
        "generator_step": lambda b: kernels.generator_step(G, D, X, Z, m, 0.1, backend=b),
    }
    rows = []
    for name, fn in cases.items():
        t = {}
        for b in kernels.available_backends():
            fn(b)
            t[b] = min(timeit.repeat(lambda: fn(b), number=1, repeat=repeat))
        rows.append((name, t))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    ap.add_argument("--sizes", default="2,11,51,251")
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; timing numpy only")
    print(f"{'p':>5} {'kernel':<15}" + "".join(f"{b + ' (ms)':>14}" for b in backends)
          + ("   speedup" if len(backends) > 1 else ""))
    for p in (int(v) for v in args.sizes.split(",")):
        for name, t in bench(p, args.batch, args.repeat):
            line = f"{p:>5} {name:<15}" + "".join(f"{1e3 * t[b]:>14.3f}" for b in backends)
            if len(backends) > 1:
                line += f"   {t['python'] / t['cython']:>6.2f}x"
            print(line)


if __name__ == "__main__":
    main()
