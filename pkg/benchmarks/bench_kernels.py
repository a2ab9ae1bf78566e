"""Compare the compiled patch kernels with the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times im2col, col2im and a full conv2d forward + backward at shapes the
desk-scale networks actually use, and checks both backends agree.
"""

import argparse
import json
import timeit

import numpy as np

from rldarts.diffcore import kernels, ops
from rldarts.diffcore.tensor import Parameter, Tensor, backward

# (batch, height, width, channels, kernel, stride, dilation)
SHAPES = [
    (64, 24, 24, 16, 3, 1, 1),
    (64, 12, 12, 16, 3, 1, 1),
    (16, 12, 12, 16, 5, 1, 2),
    (256, 12, 12, 8, 3, 2, 1),
]


def _geometry(h, w, k, stride, dilation):
    span = dilation * (k - 1) + 1
    oh, ow = -(-h // stride), -(-w // stride)
    ph = max((oh - 1) * stride + span - h, 0)
    pw = max((ow - 1) * stride + span - w, 0)
    return oh, ow, h + ph, w + pw


def bench_shape(shape, repeat, rng):
    n, h, w, c, k, stride, dilation = shape
    oh, ow, hp, wp = _geometry(h, w, k, stride, dilation)
    xp = rng.normal(size=(n, hp, wp, c)).astype(np.float32)
    x = Tensor(rng.normal(size=(n, h, w, c)).astype(np.float32))
    kern = Parameter(rng.normal(size=(k, k, c, c)).astype(np.float32) * 0.1)
    row = {"shape": shape}
    outputs = {}
    for backend in ("numpy", "cython"):
        try:
            kernels.use_backend(backend)
        except ImportError:
            row[backend] = None
            continue
        cols = kernels.im2col(xp, k, k, stride, dilation, oh, ow)
        t_im = min(timeit.repeat(lambda: kernels.im2col(xp, k, k, stride, dilation, oh, ow),
                                 number=1, repeat=repeat))
        t_col = min(timeit.repeat(lambda: kernels.col2im(cols, hp, wp, stride, dilation),
                                  number=1, repeat=repeat))

        def conv_step():
            kern.grad = None
            y = ops.conv2d(x, kern, stride, dilation)
            return y, backward(ops.sum(ops.square(y)), [kern])[0]

        t_conv = min(timeit.repeat(conv_step, number=1, repeat=repeat))
        outputs[backend] = conv_step()
        row[backend] = {"im2col_ms": 1e3 * t_im, "col2im_ms": 1e3 * t_col, "conv_fwd_bwd_ms": 1e3 * t_conv}
    if len(outputs) == 2:
        (ya, ga), (yb, gb) = outputs["numpy"], outputs["cython"]
        row["max_abs_diff"] = float(max(np.max(np.abs(ya.data - yb.data)), np.max(np.abs(ga - gb))))
    return row


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write the results here")
    args = p.parse_args(argv)
    default = kernels.BACKEND
    rng = np.random.default_rng(0)
    rows = [bench_shape(s, args.repeat, rng) for s in SHAPES]
    kernels.use_backend(default)

    print(f"{'shape (n,h,w,c,k,s,d)':<28} {'op':<16} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for row in rows:
        for op in ("im2col_ms", "col2im_ms", "conv_fwd_bwd_ms"):
            a = row["numpy"][op]
            b = row["cython"][op] if row.get("cython") else float("nan")
            print(f"{str(row['shape']):<28} {op[:-3]:<16} {a:>10.2f} {b:>10.2f} {a / b:>7.2f}x")
        if "max_abs_diff" in row:
            print(f"{'':<28} {'max |diff|':<16} {row['max_abs_diff']:>10.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
