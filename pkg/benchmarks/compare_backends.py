"""Time the compiled kernels against the pure-numpy fallback.

Runs each hot kernel on representative shapes with identical inputs on
every available backend, reports per-call times and speedups, and
cross-checks that the backends produce the same numbers. Invoke from the
repository root:

    python3 benchmarks/compare_backends.py
    python3 benchmarks/compare_backends.py --repeats 9
"""

import argparse
import time

import numpy as np

from facet import _kernels


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_search_kernels(impl, d, k, batch, dim, repeats, seed=11):
    """synthesize_clipped + score_candidates on one recovery-loop shape."""
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d, k)))
    coeffs = rng.standard_normal(k)
    z = rng.standard_normal((batch, k))
    proj = rng.standard_normal((dim, d)) / np.sqrt(d)
    template = rng.standard_normal(dim)
    template /= np.linalg.norm(template)

    def run():
        flats = impl.synthesize_clipped(basis, coeffs, z)
        return impl.score_candidates(proj, template, flats, _kernels.NONLIN_TANH)

    run()  # warm-up
    return best_of(run, repeats), run()


def bench_sgd(impl, n, d, k, repeats, seed=12):
    """One sgd_epoch on fixed data; weights are copied fresh per call."""
    rng = np.random.default_rng(seed)
    data = rng.uniform(0.0, 1.0, size=(n, d))
    targets = rng.uniform(0.0, 1.0, size=(n, d))
    w1_init = rng.standard_normal((d, k)) * 0.1
    w2_init = rng.standard_normal((d, k)) * 0.1
    order = rng.permutation(n).astype(np.intp)
    z = rng.standard_normal((n, k))
    pair_idx = rng.integers(0, n, size=n).astype(np.intp)

    state = {}

    def run():
        w1 = w1_init.copy()
        w2 = w2_init.copy()
        loss = impl.sgd_epoch(w1, w2, data, targets, order, z, pair_idx,
                              0.1, 32, True)
        state["result"] = (loss, w1, w2)

    run()  # warm-up
    return best_of(run, repeats), state["result"]


def fmt_row(label, timings, agreement):
    cells = [f"{label:<34}"]
    for name in sorted(timings):
        cells.append(f"{name}: {timings[name] * 1e3:8.3f} ms")
    if len(timings) == 2:
        py, comp = timings["python"], timings["compiled"]
        cells.append(f"speedup: {py / comp:5.2f}x")
    cells.append(f"max|diff|: {agreement:.2e}")
    return "  ".join(cells)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timed repetitions per case; the best is kept")
    args = parser.parse_args()

    impls = _kernels.backends()
    print(f"active backend: {_kernels.BACKEND}")
    print(f"backends found: {', '.join(sorted(impls))}")
    if "compiled" not in impls:
        print("compiled extension not built; timing the fallback only")
    print()

    search_shapes = [
        ("search d=64 k=8 batch=4 dim=32", 64, 8, 4, 32),
        ("search d=256 k=16 batch=8 dim=32", 256, 16, 8, 32),
        ("search d=1024 k=32 batch=16 dim=64", 1024, 32, 16, 64),
        ("search d=4096 k=64 batch=32 dim=128", 4096, 64, 32, 128),
    ]
    print("candidate synthesis + scoring (one optimizer iteration):")
    for label, d, k, batch, dim in search_shapes:
        timings, outputs = {}, {}
        for name, impl in impls.items():
            timings[name], outputs[name] = bench_search_kernels(
                impl, d, k, batch, dim, args.repeats)
        agreement = 0.0
        if len(outputs) == 2:
            agreement = float(np.max(np.abs(outputs["python"] - outputs["compiled"])))
        print("  " + fmt_row(label, timings, agreement))

    sgd_shapes = [
        ("sgd n=500 d=64 k=4", 500, 64, 4),
        ("sgd n=200 d=1024 k=32", 200, 1024, 32),
    ]
    print("\ntraining epoch (two-term loss, in-place updates):")
    for label, n, d, k in sgd_shapes:
        timings, outputs = {}, {}
        for name, impl in impls.items():
            timings[name], outputs[name] = bench_sgd(impl, n, d, k, args.repeats)
        agreement = 0.0
        if len(outputs) == 2:
            loss_a, w1_a, w2_a = outputs["python"]
            loss_b, w1_b, w2_b = outputs["compiled"]
            agreement = max(abs(loss_a - loss_b),
                            float(np.max(np.abs(w1_a - w1_b))),
                            float(np.max(np.abs(w2_a - w2_b))))
        print("  " + fmt_row(label, timings, agreement))


if __name__ == "__main__":
    main()
