"""Time the compiled and numpy MLP kernels on training-sized workloads.

Usage::

    python benchmarks/bench_kernels.py [--rows 256] [--mc 20] [--repeat 7]

Both backends get identical inputs and masks; the script also reports the
largest absolute difference between their outputs.
"""
import argparse
import timeit

import numpy as np

from bundl_lab import _core_py, kernels, model


def _workloads(rows, n_mc, seed):
    rng = np.random.default_rng(seed)
    params = model.init_params(seed)
    x = rng.normal(size=(rows, params.n_features))
    masks = [kernels._as_mask(m) for m in model.draw_masks(rng, rows, params)]
    mc_masks = [kernels._as_mask(m) for m in model.draw_masks(rng, rows, params, n_mc)]
    up = rng.normal(size=rows)
    scale = model.mask_scale(params)
    w, b = params.weights, params.biases

    def cases(impl):
        _, cache = impl.forward(w, b, x, masks, scale)
        return {
            "forward (masked)": lambda: impl.forward(w, b, x, masks, scale),
            "forward + backward": lambda: impl.backward(w, impl.forward(w, b, x, masks, scale)[1], up),
            "backward only": lambda: impl.backward(w, cache, up),
            f"mc samples (N={n_mc})": lambda: impl.mc_samples(w, b, x, mc_masks, n_mc, scale),
        }
    return cases


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=256, help="batch size")
    ap.add_argument("--mc", type=int, default=20, help="MC dropout samples")
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    try:
        from bundl_lab import _core
    except ImportError:
        print("compiled extension not built; run `python setup.py build_ext --inplace` first")
        return 1
    cases = _workloads(args.rows, args.mc, args.seed)
    py_cases, cy_cases = cases(_core_py), cases(_core)

    print(f"rows={args.rows} layers={model.DEFAULT_LAYERS} best of {args.repeat}")
    print(f"{'kernel':<22}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}{'max |diff|':>12}")
    for name in py_cases:
        times = []
        for fn in (py_cases[name], cy_cases[name]):
            n = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
            times.append(min(timeit.repeat(fn, number=n, repeat=args.repeat)) / n * 1e3)
        a, b = py_cases[name](), cy_cases[name]()
        if isinstance(a, tuple) and isinstance(a[0], list):  # backward: (grad_w, grad_b)
            diff = max(np.abs(p - q).max() for p, q in zip(a[0] + a[1], b[0] + b[1]))
        else:
            a, b = (a[0], b[0]) if isinstance(a, tuple) else (a, b)
            diff = np.abs(a - b).max()
        print(f"{name:<22}{times[0]:>10.3f}{times[1]:>11.3f}{times[0] / times[1]:>8.2f}x{diff:>12.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
