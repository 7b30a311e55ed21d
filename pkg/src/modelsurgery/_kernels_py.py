"""Pure numpy Conv2D / MatMul kernels.

Both kernels accumulate in float32 with a fixed order: for every output
element the sum runs kh (outer), kw, then Cin (resp. k for MatMul), each
step being one rounded multiply followed by one rounded add.  The compiled
kernels in ``_ckernels`` follow the exact same order, so the two
implementations agree bit for bit.
"""

import numpy as np


def conv2d_nhwc(x, w, bias, sh, sw):
    """Cross-correlate an already padded NHWC input with a [kh,kw,Cin,Cout] filter."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ho = (h - kh) // sh + 1
    wo = (wd - kw) // sw + 1
    acc = np.zeros((n, ho, wo, cout), dtype=np.float32)
    for i in range(kh):
        rows = x[:, i : i + (ho - 1) * sh + 1 : sh]
        for j in range(kw):
            win = rows[:, :, j : j + (wo - 1) * sw + 1 : sw]
            for c in range(cin):
                acc += win[..., c : c + 1] * w[i, j, c]
    if bias is not None:
        acc += bias
    return acc


def matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    acc = np.zeros((m, n), dtype=np.float32)
    for kk in range(k):
        acc += a[:, kk : kk + 1] * b[kk]
    return acc
