"""Integer-order Bessel and Hankel functions on the positive real axis.

The far-field series and the boundary-integral kernels need J_p, Y_p and
H_p = J_p + i Y_p for integer p >= 0 at real positive argument, nothing else.
Evaluation is delegated to scipy.special behind the domain checks and the
order cap the rest of the codebase relies on; accuracy against an
extended-precision oracle is pinned in the test suite.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp

# Far beyond any series truncation needed for kR <= 2*pi*1.5*4.
ORDER_CAP = 200


def _check_order(order: int) -> int:
    if not float(order).is_integer():
        raise ValueError(f"order must be an integer, got {order!r}")
    order = int(order)
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    if order > ORDER_CAP:
        raise ValueError(f"order {order} exceeds cap {ORDER_CAP}")
    return order


def bessel_j(order: int, x):
    """Bessel function of the first kind J_order(x) for x >= 0.

    Accepts a scalar or ndarray argument; returns the same shape.
    """
    order = _check_order(order)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    if np.any(x < 0):
        raise ValueError("x must be >= 0")
    out = _sp.jv(order, x)
    return float(out) if out.ndim == 0 else out


def bessel_y(order: int, x):
    """Bessel function of the second kind Y_order(x) for x > 0.

    Rejects x <= 0 (logarithmic singularity at the origin).
    """
    order = _check_order(order)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    if np.any(x <= 0):
        raise ValueError("x must be > 0")
    out = _sp.yv(order, x)
    return float(out) if out.ndim == 0 else out


def hankel1(order: int, x):
    """Hankel function of the first kind, H_order(x) = J_order(x) + i Y_order(x)."""
    j = bessel_j(order, x)
    y = bessel_y(order, x)
    return j + 1j * y
