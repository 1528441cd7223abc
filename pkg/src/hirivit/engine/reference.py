"""Scalar loop kernels: independent references for conv/matmul/linear.

These run the arithmetic one multiply-accumulate at a time and bump a
counter per MAC. They double as correctness oracles for the vectorized
kernels and as the instrumented executor behind the FLOP-count oracle.
Only use them on small shapes.
"""

from __future__ import annotations

import numpy as np


class MacCounter:
    def __init__(self):
        self.macs = 0


def loop_matmul(a: np.ndarray, b: np.ndarray, counter: MacCounter | None = None) -> np.ndarray:
    """Batched matrix product via explicit triple loops."""
    bshape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    m, k = a.shape[-2:]
    k2, p = b.shape[-2:]
    assert k == k2
    a_b = np.broadcast_to(a, bshape + (m, k))
    b_b = np.broadcast_to(b, bshape + (k, p))
    out = np.zeros(bshape + (m, p), dtype=np.result_type(a, b))
    for idx in np.ndindex(*bshape):
        am = a_b[idx]
        bm = b_b[idx]
        om = out[idx]
        for i in range(m):
            for j in range(p):
                acc = 0.0
                for t in range(k):
                    acc += am[i, t] * bm[t, j]
                    if counter is not None:
                        counter.macs += 1
                om[i, j] = acc
    return out


def loop_linear(x2: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                counter: MacCounter | None = None) -> np.ndarray:
    rows, din = x2.shape
    dout = w.shape[0]
    out = np.zeros((rows, dout), dtype=x2.dtype)
    for r in range(rows):
        for o in range(dout):
            acc = 0.0
            for i in range(din):
                acc += x2[r, i] * w[o, i]
                if counter is not None:
                    counter.macs += 1
            out[r, o] = acc + (b[o] if b is not None else 0.0)
    return out


def loop_conv2d(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None,
                stride, padding, groups: int,
                counter: MacCounter | None = None) -> np.ndarray:
    """Direct cross-correlation with explicit nested loops.

    Padding is materialized, so every kernel tap performs (and counts) a
    real multiply, matching the dense-window cost convention.
    """
    n, cin, h, wd = x.shape
    cout, cing, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    coutg = cout // groups
    out = np.zeros((n, cout, oh, ow), dtype=x.dtype)
    for b in range(n):
        for co in range(cout):
            g = co // coutg
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cing):
                        xc = g * cing + ci
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += xp[b, xc, oy * sh + ky, ox * sw + kx] \
                                    * w[co, ci, ky, kx]
                                if counter is not None:
                                    counter.macs += 1
                    if bias is not None:
                        acc += bias[co]
                    out[b, co, oy, ox] = acc
    return out


class CountingBackend:
    """Executes conv/linear/matmul through the loop kernels, counting MACs."""

    counting = True

    def __init__(self):
        self.counter = MacCounter()

    @property
    def macs(self):
        return self.counter.macs

    def matmul(self, a, b):
        return loop_matmul(a, b, self.counter)

    def linear(self, x2, w, b):
        return loop_linear(x2, w, b, self.counter)

    def conv2d(self, x, w, bias, stride, padding, groups):
        return loop_conv2d(x, w, bias, stride, padding, groups, self.counter)
