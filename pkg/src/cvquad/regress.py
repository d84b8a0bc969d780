"""Nonparametric regressors used as control variates.

Two concrete regressors share one small interface (``predict`` and
``integrate_power``): k-nearest-neighbour averaging and a piecewise-constant
cell-mean grid. ``knn_cell_volumes`` computes the volume of the region whose
k nearest training points include a given training point, exactly in d=1
and by probe Monte Carlo otherwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParameterError
from .sampling import SampleSet, as_generator
from .testfn import TestFunction, reference_moment

logger = logging.getLogger(__name__)


def _check_queries(Z, dim: int) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 0 or (Z.ndim == 1 and dim == 1):
        Z = Z.reshape(-1, 1)
    elif Z.ndim == 1:
        Z = Z.reshape(1, -1)
    if Z.shape[1] != dim:
        raise ParameterError(f"query points have dimension {Z.shape[1]}, regressor has {dim}")
    if Z.size and (Z.min() < 0.0 or Z.max() > 1.0):
        raise ParameterError("query point outside [0, 1]^d")
    return Z


def ordered_neighbors(tree: cKDTree, Z: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the ``k`` nearest training points of each query.

    Rows are sorted by distance, equal distances by training index.
    """
    n = tree.n
    nq = Z.shape[0]
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_dist = np.empty((nq, k))
    rows = np.arange(nq)
    kk = min(n, k + 4)
    while rows.size:
        dist, idx = tree.query(Z[rows], k=kk)
        dist = np.asarray(dist).reshape(rows.size, kk)
        idx = np.asarray(idx).reshape(rows.size, kk)
        if kk < n:
            # a tie that reaches the last returned neighbour may hide a lower index
            open_tie = dist[:, k - 1] == dist[:, kk - 1]
        else:
            open_tie = np.zeros(rows.size, dtype=bool)
        done = ~open_tie
        order = np.lexsort((idx[done], dist[done]), axis=-1)[:, :k]
        out_idx[rows[done]] = np.take_along_axis(idx[done], order, axis=1)
        out_dist[rows[done]] = np.take_along_axis(dist[done], order, axis=1)
        rows = rows[open_tie]
        kk = min(n, 2 * kk)
    return out_idx, out_dist


class Regressor:
    """Fitted estimate of ``f`` on ``[0, 1]^d``."""

    kind = "base"
    dim: int

    def predict(self, Z) -> np.ndarray:
        raise NotImplementedError

    def integrate_power(self, q: int, resolution: int | None = None) -> float:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind}


def midpoint_grid(resolution: int, d: int) -> np.ndarray:
    ticks = (np.arange(resolution) + 0.5) / resolution
    mesh = np.meshgrid(*([ticks] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def default_quad_resolution(d: int, k: int) -> int:
    """Points per axis for midpoint integration of a k-NN fit."""
    return max(math.ceil(1024 ** (1.0 / d) - 1e-9), 4 * k)


class KnnRegressor(Regressor):
    """``f_hat(z)`` = mean of the values at the ``k`` nearest training points."""

    kind = "knn"

    def __init__(self, points: np.ndarray, values: np.ndarray, k: int):
        self.points = np.asarray(points, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.n, self.dim = self.points.shape
        self.k = int(k)
        self.tree = cKDTree(self.points)
        if self.dim == 1:
            self._build_windows()

    def _build_windows(self):
        # in d=1 the k-NN set of z is a run of k consecutive sorted points,
        # and run a wins on [lower[a], upper[a]]
        n, k = self.n, self.k
        order = np.argsort(self.points[:, 0], kind="stable")
        xs = self.points[order, 0]
        ys = self.values[order]
        a = np.arange(n - k + 1)
        lower = np.empty(a.size)
        upper = np.empty(a.size)
        lower[0] = 0.0
        lower[1:] = 0.5 * (xs[a[1:] - 1] + xs[a[1:] + k - 1])
        upper[-1] = 1.0
        upper[:-1] = 0.5 * (xs[a[:-1]] + xs[a[:-1] + k])
        self._order = order
        self._lower = lower
        self._upper = upper
        self._window_mean = np.lib.stride_tricks.sliding_window_view(ys, k).sum(axis=1) / k
        # repeated coordinates make neighbour sets depend on the index tie-break
        self._has_ties = bool(np.any(np.diff(xs) == 0))

    def neighbors(self, Z) -> np.ndarray:
        Z = _check_queries(Z, self.dim)
        idx, _ = ordered_neighbors(self.tree, Z, self.k)
        return idx

    def predict(self, Z) -> np.ndarray:
        if self.dim == 1 and not self._has_ties:
            return self._predict_windows(_check_queries(Z, 1)[:, 0])
        idx = self.neighbors(Z)
        return self.values[idx].sum(axis=1) / self.k

    def _predict_windows(self, z: np.ndarray) -> np.ndarray:
        a = np.searchsorted(self._upper, z, side="left")
        out = self._window_mean[a]
        # a query exactly on a window boundary is equidistant from two points
        edge = self._upper[a] == z
        if np.any(edge):
            idx, _ = ordered_neighbors(self.tree, z[edge, None], self.k)
            out[edge] = self.values[idx].sum(axis=1) / self.k
        return out

    def integrate_power(self, q: int, resolution: int | None = None) -> float:
        if self.dim == 1:
            widths = self._upper - self._lower
            return float(np.dot(widths, self._window_mean**q))
        r = resolution or default_quad_resolution(self.dim, self.k)
        return float(np.mean(self.predict(midpoint_grid(r, self.dim)) ** q))

    def describe(self) -> dict:
        return {"kind": self.kind, "k": self.k}


class GridRegressor(Regressor):
    """Piecewise-constant cell means on a ``cells``-per-axis grid.

    Empty cells predict 0 (``empty="zero"``) or borrow the mean of the
    nearest non-empty cell, lowest cell index on ties (``empty="nearest"``).
    """

    kind = "grid"

    def __init__(self, points: np.ndarray, values: np.ndarray, cells_per_axis: int, empty: str = "zero"):
        if cells_per_axis < 1:
            raise ParameterError(f"cells_per_axis must be >= 1, got {cells_per_axis}")
        if empty not in ("zero", "nearest"):
            raise ParameterError(f"empty policy must be 'zero' or 'nearest', got {empty!r}")
        self.points = np.asarray(points, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.dim = self.points.shape[1]
        self.cells = int(cells_per_axis)
        self.empty = empty
        total = self.cells**self.dim
        flat = self._flat_index(self.points)
        sums = np.bincount(flat, weights=self.values, minlength=total)
        counts = np.bincount(flat, minlength=total)
        means = np.zeros(total)
        filled = counts > 0
        means[filled] = sums[filled] / counts[filled]
        if empty == "nearest" and filled.any() and not filled.all():
            means = self._fill_nearest(means, filled)
        self.means = means
        self.counts = counts

    def _flat_index(self, Z: np.ndarray) -> np.ndarray:
        idx = np.clip(np.floor(Z * self.cells).astype(np.int64), 0, self.cells - 1)
        if self.dim == 1:
            return idx[:, 0]
        return np.ravel_multi_index(tuple(idx.T), (self.cells,) * self.dim)

    def _fill_nearest(self, means: np.ndarray, filled: np.ndarray) -> np.ndarray:
        src = np.flatnonzero(filled)
        holes = np.flatnonzero(~filled)
        if self.dim == 1:
            pos = np.searchsorted(src, holes)
            left = src[np.clip(pos - 1, 0, src.size - 1)]
            right = src[np.clip(pos, 0, src.size - 1)]
            pick = np.where(np.abs(holes - left) <= np.abs(right - holes), left, right)
        else:
            centers = (np.stack(np.unravel_index(np.arange(means.size), (self.cells,) * self.dim), axis=1) + 0.5)
            tree = cKDTree(centers[src])
            nearest, _ = ordered_neighbors(tree, centers[holes], 1)
            pick = src[nearest[:, 0]]
        out = means.copy()
        out[holes] = means[pick]
        return out

    def predict(self, Z) -> np.ndarray:
        Z = _check_queries(Z, self.dim)
        return self.means[self._flat_index(Z)]

    def integrate_power(self, q: int, resolution: int | None = None) -> float:
        return float(np.sum(self.means**q)) / self.means.size

    def describe(self) -> dict:
        return {"kind": self.kind, "cells": self.cells, "empty": self.empty}


class FunctionControl(Regressor):
    """Uses a known test function as its own control variate (test hook)."""

    kind = "exact"

    def __init__(self, f: TestFunction, tol: float = 1e-12):
        self.f = f
        self.dim = f.dim
        self.tol = tol

    def predict(self, Z) -> np.ndarray:
        return np.asarray(self.f(_check_queries(Z, self.dim)), dtype=float)

    def integrate_power(self, q: int, resolution: int | None = None) -> float:
        return reference_moment(self.f, q, self.tol)


def fit_knn(S1: SampleSet, k: int) -> KnnRegressor:
    if S1.n == 0:
        raise ParameterError("cannot fit k-NN on an empty sample")
    if not 1 <= k <= S1.n:
        raise ParameterError(f"k must lie in 1..{S1.n}, got {k}")
    return KnnRegressor(S1.points, S1.values, k)


def fit_grid(S1: SampleSet, cells_per_axis: int, empty: str = "zero") -> GridRegressor:
    return GridRegressor(S1.points, S1.values, cells_per_axis, empty)


def predict(R: Regressor, z) -> np.ndarray | float:
    out = R.predict(z)
    z = np.asarray(z)
    single = z.ndim == 0 or (z.ndim == 1 and (R.dim != 1 or z.size == 1))
    return float(out[0]) if single else out


@dataclass(frozen=True)
class CellVolumes:
    """Volumes ``V(D_i)`` of the k-NN cells of the training points (training order)."""

    volumes: np.ndarray
    method: str
    k: int
    probe_n: int | None = None
    stderr: np.ndarray | None = None
    lower: np.ndarray | None = field(default=None, repr=False)
    upper: np.ndarray | None = field(default=None, repr=False)

    @property
    def total(self) -> float:
        return float(np.sum(self.volumes))


def knn_cell_volumes(R: KnnRegressor, probe_n: int = 0, rng=None) -> CellVolumes:
    """Volume of ``D_i = {z : x_i is among the k nearest training points of z}``.

    In d=1 each ``D_i`` is an interval between k-shifted midpoints of the
    sorted points and is computed exactly. In higher dimension the volume is
    the hit frequency of ``probe_n`` uniform probes.
    """
    if not isinstance(R, KnnRegressor):
        raise ParameterError("cell volumes are defined for k-NN regressors only")
    n, k = R.n, R.k
    if R.dim == 1:
        ranks = np.arange(n)
        first = np.maximum(0, ranks - k + 1)
        last = np.minimum(ranks, n - k)
        lo_sorted = R._lower[first]
        hi_sorted = R._upper[last]
        lower = np.empty(n)
        upper = np.empty(n)
        lower[R._order] = lo_sorted
        upper[R._order] = hi_sorted
        return CellVolumes(upper - lower, "ExactOrderStatistics", k, lower=lower, upper=upper)
    if probe_n <= 0:
        raise ParameterError("probe_n must be positive for d >= 2")
    Z = as_generator(rng).random((probe_n, R.dim))
    idx = R.neighbors(Z)
    hits = np.bincount(idx.ravel(), minlength=n)
    vol = hits / probe_n
    se = np.sqrt(vol * (1.0 - vol) / probe_n)
    return CellVolumes(vol, "ProbeMonteCarlo", k, probe_n=probe_n, stderr=se)


def empirical_Lr_error(R: Regressor, f: TestFunction, r: float, probe_n: int, rng) -> float:
    """Monte Carlo estimate of ``||f_hat - f||_{L^r}`` from uniform probes.

    ``r`` must satisfy ``1/r`` in ``(1/p - s/d, 1]`` for the smoothness
    metadata ``(s, p)`` of ``f``.
    """
    if r < 1:
        raise ParameterError(f"need 1/r <= 1, got r={r}")
    s, p, d = f.smoothness, f.integrability, f.dim
    lower = (0.0 if math.isinf(p) else 1.0 / p) - (math.inf if math.isinf(s) else s / d)
    if not 1.0 / r > lower:
        raise ParameterError(f"need 1/r > 1/p - s/d = {lower:.6g}, got 1/r = {1.0 / r:.6g}")
    Z = as_generator(rng).random((probe_n, f.dim))
    err = np.abs(R.predict(Z) - f(Z))
    return float(np.mean(err**r) ** (1.0 / r))
