"""Kernel backend selection.

The compiled extension is used when it was built; otherwise (or when
``MODELSURGERY_PURE_PYTHON=1`` is set) the numpy fallback is used.  Both
produce bit-identical results.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("MODELSURGERY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def _f32(a):
    return np.ascontiguousarray(a, dtype=np.float32)


def conv2d_nhwc(x, w, bias=None, strides=(1, 1), pads=((0, 0), (0, 0)), impl=None):
    """Conv2D over NHWC data; ``pads`` are explicit (top, bottom), (left, right) zero pads."""
    impl = impl or _impl
    (pt, pb), (pl, pr) = pads
    x = _f32(x)
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    return impl.conv2d_nhwc(x, _f32(w), None if bias is None else _f32(bias), int(strides[0]), int(strides[1]))


def matmul(a, b, impl=None):
    impl = impl or _impl
    return impl.matmul(_f32(a), _f32(b))
