"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--batch B]

Shapes follow the acceptance backbone (16x16 inputs, widths 8/16/16).
"""
import argparse
import timeit

import numpy as np

from kinjoint.engine import kernels


def cases(batch):
    rng = np.random.default_rng(0)
    out = []
    for c, hw in ((3, 16), (8, 8), (16, 4)):
        x = rng.normal(size=(batch, c, hw, hw))
        cols = kernels.get_backend("numpy").im2col(x, 3, 3, 1, 1)
        pooled, arg = kernels.get_backend("numpy").maxpool_forward(x, 2, 2)
        g = rng.normal(size=pooled.shape)
        out += [
            (f"im2col      {x.shape}", lambda b, x=x: b.im2col(x, 3, 3, 1, 1)),
            (f"col2im      {x.shape}", lambda b, cols=cols, s=x.shape: b.col2im(cols, s, 3, 3, 1, 1)),
            (f"maxpool fwd {x.shape}", lambda b, x=x: b.maxpool_forward(x, 2, 2)),
            (f"maxpool bwd {x.shape}", lambda b, g=g, a=arg, s=x.shape: b.maxpool_backward(g, a, s, 2, 2)),
        ]
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=64)
    args = ap.parse_args()

    names = kernels.available_backends()
    if "cython" not in names:
        print("compiled kernels not built; timing the numpy backend only")
    print(f"{'kernel':<34}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(args.batch):
        times = {}
        for n in names:
            backend = kernels.get_backend(n)
            fn(backend)  # warm up
            times[n] = min(timeit.repeat(lambda: fn(backend), number=1, repeat=args.repeat)) * 1e3
        row = f"{label:<34}" + "".join(f"{times[n]:>10.3f}ms" for n in names)
        if len(names) > 1:
            row += f"{times['numpy'] / times['cython']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
