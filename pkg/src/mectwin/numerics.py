"""Small scalar search routines shared by the optimizer modules."""

from __future__ import annotations

import math
from typing import Callable

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_min(f: Callable[[float], float], a: float, b: float, tol: float,
                       max_iter: int = 200) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on ``[a, b]`` until the bracket is narrower than ``tol``.

    Returns ``(x, f(x))`` for the best point seen.
    """
    if b < a:
        a, b = b, a
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while b - a > tol and it < max_iter:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        it += 1
    return (c, fc) if fc <= fd else (d, fd)


def bisect_increasing(h: Callable[[float], float], lo: float, hi: float, xtol: float,
                      max_iter: int = 400) -> float:
    """Root of an increasing ``h`` on ``[lo, hi]`` with ``h(lo) < 0 < h(hi)``."""
    it = 0
    while hi - lo > xtol and it < max_iter:
        mid = 0.5 * (lo + hi)
        if h(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        it += 1
    return 0.5 * (lo + hi)
