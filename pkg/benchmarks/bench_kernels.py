"""Time the compiled E-step kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 7] [--sizes 1000x50,5000x100]

Prints one line per (kernel, size) with the median time of each backend,
the speedup, and the largest absolute difference between their outputs.
"""

import argparse
import timeit

import numpy as np

from rfnet.kernels import get_backend


def make_problem(n, l, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((l, l))
    prec = A @ A.T / l + np.eye(l)
    mu_p = rng.standard_normal((n, l))
    mu_old = np.maximum(rng.standard_normal((n, l)), 0.0)
    return mu_old, mu_p, prec


def cases(mu_old, mu_p, prec):
    return {
        "rectify_normalize": lambda k: k.rectify_normalize(mu_p),
        "estep_objective": lambda k: k.estep_objective(mu_old, mu_p, prec),
        "reduced_direction": lambda k: k.reduced_direction(mu_old, mu_p, prec, 0.1),
    }


def median_time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 4
    return float(np.median(timeit.repeat(fn, number=number, repeat=repeat))) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--sizes", default="1000x50,5000x100")
    args = ap.parse_args(argv)

    py = get_backend("python")
    try:
        cy = get_backend("cython")
    except ImportError as exc:
        raise SystemExit(f"compiled kernels unavailable: {exc}")

    print(f"{'kernel':<20}{'n x l':>12}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}{'max diff':>12}")
    for size in args.sizes.split(","):
        n, l = (int(x) for x in size.split("x"))
        for name, call in cases(*make_problem(n, l)).items():
            diff = float(np.max(np.abs(np.asarray(call(py)) - np.asarray(call(cy)))))
            t_py = median_time(lambda: call(py), args.repeat)
            t_cy = median_time(lambda: call(cy), args.repeat)
            print(f"{name:<20}{size:>12}{1e3 * t_py:>14.3f}{1e3 * t_cy:>14.3f}{t_py / t_cy:>10.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
