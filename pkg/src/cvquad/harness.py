"""Convergence sweeps: replicate an estimator over a grid of sample sizes,
measure its error against the reference moment, and fit log-log slopes.

Every ``(n, rep)`` cell draws from its own counter-based stream, so results
do not depend on the number of worker threads or on scheduling.
"""

from __future__ import annotations

import enum
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import estimators as est
from . import rate_theory as rt
from . import testfn as tf
from .errors import ConfigError, CvquadError, ParameterError
from .sampling import RngStream, SampleSet, cell_stream, draw_sample

logger = logging.getLogger(__name__)

MIN_REPS = 30
MIN_GRID = 4
PROBE_BIT = 1 << 63


class Statistic(str, enum.Enum):
    RMSE = "RMSE"
    MEDIAN_ABS = "MedianAbs"


# --------------------------------------------------------------------------
# configuration


def build_function(spec: dict, d: int = 1) -> tf.TestFunction:
    """Test function from a JSON-style description such as ``{"kind": "sine"}``."""
    kind = spec.get("kind")
    if kind == "sine":
        return tf.make_sine(spec.get("offset", 2.0), d)
    if kind == "one_plus_bump":
        return tf.make_one_plus_bump(spec.get("amp", math.e), d)
    if kind == "lipschitz":
        return tf.make_lipschitz(d, spec.get("kink", 0.3))
    if kind == "linear":
        return tf.make_linear(spec.get("a", 0.0), spec.get("b", 1.0), d)
    if kind == "constant":
        return tf.make_constant(spec["c"], d)
    if kind == "bump":
        return tf.make_bump_base(d, spec.get("variant", "K"))
    if kind == "peak":
        x0 = spec.get("x0", [0.0] * d)
        return tf.make_peak(spec["beta"], x0, d, spec["q"], spec["p"], spec["s"])
    raise ConfigError(f"unknown function kind {kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One convergence experiment.

    ``estimator`` is a dict with a ``method`` key (``plain_mc``,
    ``truncated_mc``, ``cv_moment``, ``knn_direct``, ``knn_weights``) and
    method parameters. ``M``, ``k`` and grid ``cells`` may be numbers or
    n-dependent schedules, e.g. ``{"schedule": "power", "c": 1, "exponent": 0.18}``,
    ``{"schedule": "optimal"}`` or ``{"schedule": "fraction", "fraction": 0.5}``.
    Grid control variates fill empty cells from the nearest filled cell
    unless the regressor asks for ``"empty": "zero"``.
    ``theory`` holds ``s``, ``p`` (and optionally ``beta``, ``tol``) for
    schedules and the comparison with the predicted exponent.
    """

    function: dict
    estimator: dict
    n_grid: tuple[int, ...]
    reps: int = 100
    q: int = 1
    d: int = 1
    gamma: float = math.inf
    base_seed: int = 0
    statistic: Statistic = Statistic.RMSE
    theory: dict = field(default_factory=dict)
    reference_tol: float = 1e-10
    output: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "statistic", Statistic(self.statistic))
        object.__setattr__(self, "gamma", math.inf if self.gamma is None else float(self.gamma))
        grid = self.n_grid
        if len(grid) < MIN_GRID:
            raise ConfigError(f"n_grid needs at least {MIN_GRID} points, got {len(grid)}")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError(f"n_grid must be strictly increasing, got {list(grid)}")
        if grid[0] < 1:
            raise ConfigError("n_grid entries must be positive")
        if self.reps < MIN_REPS:
            raise ConfigError(f"reps must be >= {MIN_REPS}, got {self.reps}")
        if self.q < 1:
            raise ConfigError(f"q must be >= 1, got {self.q}")
        if "method" not in self.estimator:
            raise ConfigError("estimator needs a 'method'")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_grid"] = list(self.n_grid)
        out["statistic"] = self.statistic.value
        out["gamma"] = None if math.isinf(self.gamma) else self.gamma
        return out


def _resolve(value, n: int, name: str, f: tf.TestFunction, d: int, gamma: float, theory: dict):
    if not isinstance(value, dict):
        return value
    sched = value.get("schedule")
    c = value.get("c", 1.0)
    try:
        if sched == "power":
            return c * float(n) ** value["exponent"]
        if sched == "fraction":
            return max(1, int(n * value["fraction"]))
        if sched == "half":
            return n // 2
        if sched == "default":
            return est.default_truncation(n, theory["s"], theory["p"], d, c)
        if sched == "peak":
            return est.peak_truncation(n, f.params["beta"] / d, c)
        if sched == "optimal":
            return rt.optimal_k(n, theory["s"], d, gamma, c)
    except KeyError as exc:
        raise ConfigError(f"schedule {sched!r} for {name} needs {exc.args[0]!r}") from None
    raise ConfigError(f"unknown schedule {sched!r} for {name}")


def bind_estimator(spec: dict, f: tf.TestFunction, n: int, *, q: int = 1, d: int = 1,
                   gamma: float = math.inf, theory: dict | None = None) -> Callable[[SampleSet], est.Estimate]:
    """Fix the estimator described by ``spec`` (and its schedules) at sample size ``n``."""
    theory = theory or {}
    method = spec.get("method")

    def resolve(value, name):
        return _resolve(value, n, name, f, d, gamma, theory)

    if method == "plain_mc":
        return lambda S: est.plain_mc_moment(S, q)
    if method == "truncated_mc":
        M = resolve(spec.get("M", {"schedule": "default"}), "M")
        return lambda S: est.truncated_mc_moment(S, q, M)
    if method == "cv_moment":
        reg = dict(spec.get("regressor", {"kind": "grid", "cells": {"schedule": "fraction", "fraction": 0.5}}))
        rs = est.RegressorSpec(
            kind=reg.get("kind", "grid"),
            k=int(resolve(reg.get("k", 1), "k")),
            cells=int(resolve(reg.get("cells", 1), "cells")),
            empty=reg.get("empty", "nearest"),
        )
        res = spec.get("quad_resolution")
        return lambda S: est.cv_moment(S, q, rs, res)
    if method in ("knn_direct", "knn_weights"):
        if q != 1:
            raise ConfigError("k-NN quadrature estimates the integral (q = 1)")
        k = int(resolve(spec.get("k", 1), "k"))
        if method == "knn_direct":
            return lambda S: est.integral_knn_quadrature(S, k, spec.get("quad_resolution"))
        probe_n = int(spec.get("probe_n", 100_000))
        return lambda S: est.integral_weights_form(S, k, probe_n, rng=_probe_stream(S))
    raise ConfigError(f"unknown estimator method {method!r}")


def make_estimator(cfg: ExperimentConfig, f: tf.TestFunction, n: int) -> Callable[[SampleSet], est.Estimate]:
    return bind_estimator(cfg.estimator, f, n, q=cfg.q, d=cfg.d, gamma=cfg.gamma, theory=cfg.theory)


def _probe_stream(S: SampleSet) -> RngStream:
    # the top bit of the stream index is reserved for volume probes
    return RngStream(S.seed or 0, (S.stream_index or 0) | PROBE_BIT)


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    config: ExperimentConfig
    reference: float
    n_grid: tuple[int, ...]
    values: np.ndarray  # (len(n_grid), reps), NaN where the cell failed
    errors: np.ndarray
    failures: dict[tuple[int, int], str]
    stat: np.ndarray
    stderr: np.ndarray
    n_failed: np.ndarray

    def cell_error(self, i: int) -> str:
        """First failure message at grid index ``i`` (empty if none)."""
        msgs = [m for (a, _), m in sorted(self.failures.items()) if a == i]
        return msgs[0] if msgs else ""


def error_statistic(errors: np.ndarray, statistic: Statistic) -> tuple[float, float]:
    """Statistic of the finite errors and its standard error."""
    e = np.abs(errors[np.isfinite(errors)])
    r = e.size
    if r == 0:
        return math.nan, math.nan
    if Statistic(statistic) is Statistic.RMSE:
        sq = e**2
        mse = float(sq.mean())
        rmse = math.sqrt(mse)
        se_mse = float(sq.std(ddof=1)) / math.sqrt(r) if r > 1 else math.nan
        return rmse, (se_mse / (2 * rmse) if rmse > 0 else 0.0)
    s = np.sort(e)
    med = float(np.median(s))
    # distribution-free 95% band from order statistics, reported as one SE
    half = 1.96 * math.sqrt(r) / 2
    lo = max(0, int(math.floor(r / 2 - half)))
    hi = min(r - 1, int(math.ceil(r / 2 + half)))
    return med, float(s[hi] - s[lo]) / (2 * 1.96)


def reference_value(cfg: ExperimentConfig, f: tf.TestFunction) -> float:
    return tf.reference_moment(f, cfg.q, cfg.reference_tol)


def run_cell(cfg: ExperimentConfig, f: tf.TestFunction, n: int, rep: int,
             estimator: Callable[[SampleSet], est.Estimate]) -> float:
    S = draw_sample(f, n, cfg.gamma, cell_stream(cfg.base_seed, n, rep))
    return estimator(S).value


def run_sweep(cfg: ExperimentConfig, threads: int | None = None) -> SweepResult:
    """Run every ``(n, rep)`` cell; failures are recorded per cell, not raised."""
    f = build_function(cfg.function, cfg.d)
    reference = reference_value(cfg, f)
    grid = cfg.n_grid
    values = np.full((len(grid), cfg.reps), np.nan)
    failures: dict[tuple[int, int], str] = {}
    bound: dict[int, Callable | Exception] = {}
    for i, n in enumerate(grid):
        try:
            bound[i] = make_estimator(cfg, f, n)
        except ConfigError:
            raise
        except CvquadError as exc:
            bound[i] = exc

    def task(i: int, r: int):
        estimator = bound[i]
        if isinstance(estimator, Exception):
            return i, r, None, str(estimator)
        try:
            return i, r, run_cell(cfg, f, grid[i], r, estimator), None
        except (CvquadError, ValueError, FloatingPointError) as exc:
            return i, r, None, f"{type(exc).__name__}: {exc}"

    cells = [(i, r) for i in range(len(grid)) for r in range(cfg.reps)]
    workers = max(1, threads or os.cpu_count() or 1)
    if workers == 1:
        outcomes = [task(i, r) for i, r in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda c: task(*c), cells))
    for i, r, value, err in outcomes:
        if err is None:
            values[i, r] = value
        else:
            failures[(i, r)] = err
    errors = values - reference
    stat = np.empty(len(grid))
    stderr = np.empty(len(grid))
    for i in range(len(grid)):
        stat[i], stderr[i] = error_statistic(errors[i], cfg.statistic)
    n_failed = np.isnan(values).sum(axis=1)
    if failures:
        logger.warning("%d of %d cells failed", len(failures), len(cells))
    return SweepResult(cfg, reference, grid, values, errors, failures, stat, stderr, n_failed)


# --------------------------------------------------------------------------
# slope fitting and theory comparison


@dataclass(frozen=True)
class RateReport:
    """Least-squares fit of ``log stat = intercept + slope * log n``.

    When any statistic is at or below ``floor`` the fit is skipped and
    ``below_floor`` is set (slope and intercept are then NaN).
    """

    n_grid: tuple[int, ...]
    stat: tuple[float, ...]
    slope: float
    intercept: float
    r2: float
    residual_max: float
    below_floor: bool = False
    theory: float | None = None
    tol: float | None = None
    verdict: bool | None = None
    warnings: tuple[str, ...] = ()

    def with_theory(self, theory: float, tol: float, notes=()) -> RateReport:
        ok = (not self.below_floor) and abs(self.slope - theory) <= tol
        return RateReport(self.n_grid, self.stat, self.slope, self.intercept, self.r2,
                          self.residual_max, self.below_floor, theory, tol, ok, tuple(notes))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_grid"] = list(self.n_grid)
        d["stat"] = list(self.stat)
        d["warnings"] = list(self.warnings)
        return d


def fit_slope(result: SweepResult | None = None, *, n_grid=None, stat=None, floor: float = 1e-13) -> RateReport:
    """Fit the log-log slope of a sweep (or of explicit ``n_grid`` / ``stat`` arrays)."""
    if result is not None:
        n_grid, stat = result.n_grid, result.stat
    ns = np.asarray(n_grid, dtype=float)
    ys = np.asarray(stat, dtype=float)
    if ns.size < MIN_GRID or ns.size != ys.size:
        raise ParameterError(f"need >= {MIN_GRID} matching grid points, got {ns.size} and {ys.size}")
    if not np.all(np.isfinite(ys)):
        raise ParameterError("error statistic has non-finite entries (all reps failed?)")
    key = (tuple(int(n) for n in ns), tuple(float(v) for v in ys))
    if np.any(ys <= floor):
        logger.info("error statistic below the measurement floor %.3g; no slope fitted", floor)
        return RateReport(*key, math.nan, math.nan, math.nan, math.nan, below_floor=True)
    x, y = np.log(ns), np.log(ys)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateReport(*key, float(slope), float(intercept), r2, float(np.max(np.abs(resid))))


def theory_exponent(method: str, s: float, p: float | None, q: int, d: int, gamma: float,
                    beta: float | None = None) -> tuple[float, list[str]]:
    """Predicted error exponent of ``method`` and any regime warnings."""
    notes: list[str] = []
    if method in ("knn_direct", "knn_weights"):
        return rt.integral_exponent(s, d, gamma), notes
    if not math.isinf(gamma):
        notes.append("noisy observations: the moment rates assume exact evaluations")
    rare = None
    if p is not None:
        try:
            rare = rt.regime(s, p, q, d).regime is rt.Regime.RARE_EVENT
        except ParameterError as exc:
            notes.append(str(exc))
    if method == "plain_mc":
        if beta is not None and 2 * q * beta >= d:
            notes.append("plain MC has infinite variance on this peak; no CLT rate")
        return -0.5, notes
    if method == "truncated_mc":
        if rare is False:
            notes.append("truncation outside the rare-event regime: the CV estimator is recommended")
        if beta is not None:
            return rt.peak_truncated_exponent(beta, q, d), notes
        return rt.truncated_mc_exponent(s, p, q, d), notes
    if method == "cv_moment":
        if rare:
            notes.append("CV estimator in the rare-event regime: truncated MC is recommended")
            return rt.moment_exponent(s, p, q, d), notes
        if p is None:
            return -s / d - 0.5, notes
        return rt.moment_exponent(s, p, q, d), notes
    raise ParameterError(f"no theory for method {method!r}")


def compare_to_theory(report: RateReport, method: str, s: float, p: float | None, q: int, d: int,
                      gamma: float, tol: float, beta: float | None = None) -> RateReport:
    """Attach the predicted exponent and the verdict ``|slope - theory| <= tol``."""
    theory, notes = theory_exponent(method, s, p, q, d, gamma, beta)
    for note in notes:
        warnings.warn(note, stacklevel=2)
    return report.with_theory(theory, tol, notes)


def report_for(result: SweepResult) -> RateReport:
    """Fit and, when the config carries theory parameters, compare."""
    report = fit_slope(result)
    th = result.config.theory
    if "s" not in th or report.below_floor:
        return report
    cfg = result.config
    beta = th.get("beta", cfg.function.get("beta"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return compare_to_theory(report, cfg.estimator["method"], th["s"], th.get("p"), cfg.q,
                                 cfg.d, cfg.gamma, th.get("tol", 0.2), beta)


__all__ = [
    "ExperimentConfig",
    "RateReport",
    "Statistic",
    "SweepResult",
    "build_function",
    "compare_to_theory",
    "error_statistic",
    "fit_slope",
    "bind_estimator",
    "make_estimator",
    "report_for",
    "run_sweep",
    "theory_exponent",
]
