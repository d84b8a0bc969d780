"""Composite tensor-product Gauss-Legendre quadrature with panel doubling.

Used as the ground-truth integrator for reference moments. The integrand is
called with an ``(N, d)`` array and must return an ``(N,)`` array.
"""

from __future__ import annotations

from collections.abc import Callable
from functools import lru_cache

import numpy as np

from .errors import QuadratureError

Integrand = Callable[[np.ndarray], np.ndarray]

GAUSS_ORDER = 10
MIN_LEVEL = 2
# total node budget per refinement level, keeps d=2,3 tractable
MAX_NODES = 2**23


@lru_cache(maxsize=None)
def _unit_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _composite_1d(lo: float, hi: float, panels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _unit_rule(order)
    h = (hi - lo) / panels
    starts = lo + h * np.arange(panels)
    nodes = (starts[:, None] + h * x[None, :]).ravel()
    weights = np.tile(h * w, panels)
    return nodes, weights


def fixed_box(fn: Integrand, lo, hi, panels: int, order: int = GAUSS_ORDER) -> float:
    """Tensor Gauss-Legendre rule with ``panels`` equal panels per axis."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    d = lo.size
    axes = [_composite_1d(lo[i], hi[i], panels, order) for i in range(d)]
    if d == 1:
        nodes, weights = axes[0]
        return float(np.dot(fn(nodes[:, None]), weights))
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrid = np.ones_like(grids[0])
    for i, (_, w) in enumerate(axes):
        shape = [1] * d
        shape[i] = w.size
        wgrid = wgrid * w.reshape(shape)
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return float(np.dot(fn(pts), wgrid.ravel()))


def integrate_box(
    fn: Integrand,
    lo,
    hi,
    tol: float = 1e-10,
    order: int = GAUSS_ORDER,
    min_level: int = MIN_LEVEL,
) -> float:
    """Integrate ``fn`` over the box ``[lo, hi]`` to absolute tolerance ``tol``.

    Panels per axis double until two successive estimates differ by at most
    ``tol``. Raises :class:`QuadratureError` carrying both estimates when the
    node budget runs out first.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    d = lo.size
    if np.any(np.atleast_1d(hi) <= lo):
        return 0.0
    level = min_level
    prev = fixed_box(fn, lo, hi, 2**level, order)
    before = np.nan
    while (2 ** (level + 1) * order) ** d <= MAX_NODES:
        level += 1
        cur = fixed_box(fn, lo, hi, 2**level, order)
        if abs(cur - prev) <= tol:
            return cur
        before, prev = prev, cur
    raise QuadratureError("refinement budget exhausted", last=prev, previous=before)
