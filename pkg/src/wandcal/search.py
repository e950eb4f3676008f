"""Golden-section minimization of a scalar function on an interval."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import NoBracket

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-6,
                   max_iter: int = 500) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on [lo, hi] until the bracket is narrower than ``tol``."""
    a, b = float(lo), float(hi)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    fx = f(x)
    # the midpoint of the final bracket can be slightly worse than an interior probe
    for xc, fxc in ((c, fc), (d, fd)):
        if fxc < fx:
            x, fx = xc, fxc
    return x, fx


def bracketed_golden_section(f: Callable[[float], float], grid, tol: float = 1e-6) -> tuple[float, float]:
    """Scan ``grid`` for the best sample, then refine between its neighbours.

    Raises NoBracket when the best grid sample is an endpoint, i.e. the
    minimum is not enclosed by the search range.
    """
    grid = np.asarray(grid, dtype=float)
    vals = np.array([f(x) for x in grid])
    i = int(np.argmin(vals))
    if i == 0 or i == len(grid) - 1:
        raise NoBracket(f"minimum at the search boundary ({grid[i]:.6g})")
    return golden_section(f, grid[i - 1], grid[i + 1], tol)
