"""Moment and integral estimators.

* ``plain_mc_moment``: the sample mean of ``y_i^q``.
* ``truncated_mc_moment``: the sample mean of ``clamp(y_i, -M, M)^q``.
* ``cv_moment``: fit ``f_hat`` on the first half, integrate ``f_hat^q``
  exactly or by quadrature, and correct with the second half:
  ``int f_hat^q + mean_{S2}(y^q - f_hat^q)``.
* ``integral_knn_quadrature`` / ``integral_weights_form``: the same
  split-sample scheme for ``q = 1`` with a k-NN fit, evaluated either
  directly or through the k-NN cell volumes ``V(D_i)``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ParameterError
from .regress import (
    CellVolumes,
    FunctionControl,
    GridRegressor,
    KnnRegressor,
    Regressor,
    default_quad_resolution,
    fit_grid,
    fit_knn,
    knn_cell_volumes,
)
from .sampling import SampleSet, as_generator, split_halves

logger = logging.getLogger(__name__)


class Method(str, enum.Enum):
    PLAIN_MC = "PlainMC"
    TRUNCATED_MC = "TruncatedMC"
    CV_MOMENT = "CVMoment"
    KNN_DIRECT = "KnnQuadratureDirect"
    KNN_WEIGHTS = "KnnQuadratureWeights"


@dataclass(frozen=True)
class Estimate:
    value: float
    method: Method
    n: int
    q: int = 1
    params: dict[str, Any] = field(default_factory=dict)
    seed: int | None = None
    stream_index: int | None = None

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method.value,
            "n": self.n,
            "q": self.q,
            "params": self.params,
            "seed": self.seed,
            "stream_index": self.stream_index,
        }


def _estimate(S: SampleSet, value: float, method: Method, q: int, **params) -> Estimate:
    return Estimate(float(value), method, S.n, q, params, S.seed, S.stream_index)


def plain_mc_moment(S: SampleSet, q: int) -> Estimate:
    if q < 1:
        raise ParameterError(f"q must be >= 1, got {q}")
    return _estimate(S, np.mean(S.values**q), Method.PLAIN_MC, q)


def default_truncation(n: int, s: float, p: float, d: int, c: float = 1.0) -> float:
    """Truncation level ``M = c * n^(1/p - s/d)``.

    Defined only in the rare-event regime where the exponent is positive;
    otherwise the control-variate estimator is the right tool.
    """
    expo = 1.0 / p - s / d
    if expo <= 0:
        raise ParameterError(
            f"truncation exponent 1/p - s/d = {expo:.6g} <= 0: f is bounded here, "
            "use the control-variate estimator (truncation only pays off for "
            "s < d(2q-p)/(2pq))"
        )
    return c * float(n) ** expo


def peak_truncation(n: int, beta: float, c: float = 1.0) -> float:
    """Sharp level ``M = c * n^beta`` for the peak ``||x - x0||^-beta`` (``1/p* = beta``)."""
    return c * float(n) ** beta


def truncated_mc_moment(S: SampleSet, q: int, M: float) -> Estimate:
    if M <= 0:
        raise ParameterError(f"M must be > 0, got {M}")
    clamped = np.clip(S.values, -M, M)
    return _estimate(S, np.mean(clamped**q), Method.TRUNCATED_MC, q, M=float(M))


@dataclass(frozen=True)
class RegressorSpec:
    """How ``cv_moment`` builds its control variate from the first half.

    ``kind`` is ``"knn"`` (uses ``k``) or ``"grid"`` (uses ``cells`` and
    ``empty``). A pre-built :class:`Regressor` can be passed to ``cv_moment``
    instead.
    """

    kind: str = "grid"
    k: int = 1
    cells: int = 1
    empty: str = "zero"

    def fit(self, S1: SampleSet) -> Regressor:
        if self.kind == "knn":
            return fit_knn(S1, self.k)
        if self.kind == "grid":
            return fit_grid(S1, self.cells, self.empty)
        raise ParameterError(f"unknown regressor kind {self.kind!r}")


def cv_moment(S: SampleSet, q: int, regressor_spec: RegressorSpec | Regressor,
              quad_resolution: int | None = None, rng=None) -> Estimate:
    """Regression-adjusted control-variate estimate of the q-th moment.

    ``rng`` is unused by the deterministic integrators and accepted for
    interface symmetry with the probe-based paths.
    """
    if q < 1:
        raise ParameterError(f"q must be >= 1, got {q}")
    if S.n < 4:
        raise ParameterError(f"control-variate estimator needs n >= 4, got {S.n}")
    if quad_resolution is not None and quad_resolution < 1:
        raise ParameterError(f"quad_resolution must be >= 1, got {quad_resolution}")
    S1, S2 = split_halves(S)
    if isinstance(regressor_spec, Regressor):
        reg = regressor_spec
    else:
        reg = regressor_spec.fit(S1)
    resolution = quad_resolution
    if isinstance(reg, KnnRegressor) and reg.dim > 1 and resolution is None:
        resolution = default_quad_resolution(reg.dim, reg.k)
        logger.debug("k-NN control variate: midpoint quadrature with %d points per axis", resolution)
    integral = reg.integrate_power(q, resolution)
    correction = float(np.mean(S2.values**q - reg.predict(S2.points) ** q))
    return _estimate(S, integral + correction, Method.CV_MOMENT, q,
                     regressor=reg.describe(), quad_resolution=resolution,
                     integral=integral, correction=correction)


def _check_k(S: SampleSet, k: int) -> None:
    half = S.n // 2
    if not 1 <= k <= half:
        raise ParameterError(f"k must lie in 1..n/2={half}, got {k}")


def integral_knn_quadrature(S: SampleSet, k: int, quad_resolution: int | None = None) -> Estimate:
    """k-NN adjusted integral, direct form: ``int f_hat + mean_{S2}(y - f_hat)``.

    ``int f_hat`` is exact in d=1 (sum of window lengths times window means)
    and a midpoint tensor rule in higher dimension.
    """
    _check_k(S, k)
    S1, S2 = split_halves(S)
    reg = fit_knn(S1, k)
    resolution = None
    if reg.dim > 1:
        resolution = quad_resolution or default_quad_resolution(reg.dim, k)
    integral = reg.integrate_power(1, resolution)
    correction = float(np.mean(S2.values - reg.predict(S2.points)))
    return _estimate(S, integral + correction, Method.KNN_DIRECT, 1, k=k,
                     quad_resolution=resolution, integral=integral, correction=correction)


def _interval_membership_sum(cells: CellVolumes, y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``sum_j 1{x in D_j} y_j`` for each x, with ``D_j = [lower_j, upper_j]``."""
    lo_order = np.argsort(cells.lower, kind="stable")
    hi_order = np.argsort(cells.upper, kind="stable")
    lo_sorted = cells.lower[lo_order]
    hi_sorted = cells.upper[hi_order]
    lo_csum = np.concatenate(([0.0], np.cumsum(y[lo_order])))
    hi_csum = np.concatenate(([0.0], np.cumsum(y[hi_order])))
    started = np.searchsorted(lo_sorted, X, side="right")
    ended = np.searchsorted(hi_sorted, X, side="left")
    return lo_csum[started] - hi_csum[ended]


def integral_weights_form(S: SampleSet, k: int, probe_n: int = 100_000, rng=None) -> Estimate:
    """k-NN adjusted integral through cell volumes and membership indicators.

    ``sum_i V(D_i) y_i / k + mean_{S2}(y - (1/k) sum_j 1{x in D_j} y_j)``.
    In d=1 the cells are exact intervals; otherwise volumes come from
    ``probe_n`` uniform probes and the estimate records their standard error.
    """
    _check_k(S, k)
    S1, S2 = split_halves(S)
    reg = fit_knn(S1, k)
    if reg.dim == 1:
        cells = knn_cell_volumes(reg)
        fitted = _interval_membership_sum(cells, S1.values, S2.points[:, 0]) / k
        probe_se = 0.0
    else:
        gen = as_generator(rng if rng is not None else 0)
        cells = knn_cell_volumes(reg, probe_n, gen)
        # x in D_j exactly when x_j is one of the k nearest neighbours of x
        fitted = S1.values[reg.neighbors(S2.points)].sum(axis=1) / k
        probe_se = _probe_stderr(cells, reg)
    integral = float(np.dot(cells.volumes, S1.values)) / k
    correction = float(np.mean(S2.values - fitted))
    return _estimate(S, integral + correction, Method.KNN_WEIGHTS, 1, k=k,
                     volume_method=cells.method, probe_n=cells.probe_n,
                     probe_se=probe_se, integral=integral, correction=correction)


def _probe_stderr(cells: CellVolumes, reg: KnnRegressor) -> float:
    # sum_i V_i y_i / k is the probe mean of f_hat, so its standard error
    # follows from the probe second moment sum_i V_i y_i^2 / k (an upper bound
    # on E f_hat^2, since f_hat^2 <= mean of y^2 over the neighbours)
    mean = float(np.dot(cells.volumes, reg.values)) / reg.k
    second = float(np.dot(cells.volumes, reg.values**2)) / reg.k
    return math.sqrt(max(second - mean**2, 0.0) / cells.probe_n)


def estimate_with_control(S: SampleSet, q: int, control: Regressor) -> Estimate:
    """``cv_moment`` with an injected control variate (e.g. :class:`FunctionControl`)."""
    return cv_moment(S, q, control)


__all__ = [
    "Estimate",
    "FunctionControl",
    "GridRegressor",
    "Method",
    "RegressorSpec",
    "cv_moment",
    "default_truncation",
    "estimate_with_control",
    "integral_knn_quadrature",
    "integral_weights_form",
    "peak_truncation",
    "plain_mc_moment",
    "truncated_mc_moment",
]
