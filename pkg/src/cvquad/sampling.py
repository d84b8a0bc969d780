"""Uniform quadrature nodes, the Gaussian noise model, and seeded random streams.

Streams are counter-based (Philox keyed by ``(base_seed, stream_index)``), so
any replication can be regenerated independently of the order or the thread
in which replications run.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError
from .testfn import TestFunction

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
# bits reserved for the replication index inside a harness stream index
REP_BITS = 24


@dataclass(frozen=True)
class RngStream:
    """An independent random stream identified by ``(base_seed, stream_index)``."""

    base_seed: int
    stream_index: int = 0
    algorithm: str = "philox4x64-10"

    def __post_init__(self):
        for name in ("base_seed", "stream_index"):
            v = getattr(self, name)
            if not 0 <= int(v) <= _MASK64:
                raise ParameterError(f"{name} must fit in an unsigned 64-bit integer, got {v}")

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        key = np.array([self.base_seed, self.stream_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def derive_substream(base_seed: int, rep_index: int) -> RngStream:
    return RngStream(int(base_seed), int(rep_index))


def cell_stream(base_seed: int, n: int, rep: int) -> RngStream:
    """Stream of replication ``rep`` at sample size ``n`` in a sweep."""
    if not 0 <= rep < 2**REP_BITS:
        raise ParameterError(f"replication index {rep} exceeds 2^{REP_BITS}")
    return RngStream(int(base_seed), (int(n) << REP_BITS) | int(rep))


def as_generator(rng) -> np.random.Generator:
    """Accept an :class:`RngStream`, a numpy ``Generator`` or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


@dataclass(frozen=True)
class SampleSet:
    """Quadrature points with observed (possibly noisy) values."""

    points: np.ndarray
    values: np.ndarray
    gamma: float = math.inf
    n_total: int | None = None
    source: str = ""
    seed: int | None = None
    stream_index: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        vals = np.asarray(self.values, dtype=float).ravel()
        if pts.shape[0] != vals.size:
            raise ParameterError(f"{pts.shape[0]} points but {vals.size} values")
        if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
            raise ParameterError("sample points must lie in [0, 1]^d")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def subset(self, sl) -> SampleSet:
        return replace(self, points=self.points[sl], values=self.values[sl])


def sample_uniform(n: int, d: int, rng) -> np.ndarray:
    """``n`` i.i.d. uniform points on ``[0, 1]^d`` as an ``(n, d)`` array."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    return as_generator(rng).random((n, d))


def noise_scale(gamma: float, n_total: int) -> float:
    """Noise standard deviation ``n_total^-gamma`` (0 when ``gamma`` is infinite)."""
    if math.isinf(gamma):
        return 0.0
    if gamma < 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")
    return float(n_total) ** (-gamma)


def observe(f: TestFunction, points, gamma: float, n_total: int, rng) -> SampleSet:
    """Observe ``y_i = f(x_i) + n_total^-gamma z_i`` with standard normal ``z_i``.

    Points that land exactly on a singularity of ``f`` are redrawn.
    """
    gen = as_generator(rng)
    pts = np.array(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    vals = np.asarray(f(pts), dtype=float).reshape(-1)
    bad = ~np.isfinite(vals)
    while np.any(bad):
        logger.warning("resampling %d point(s) at a singularity of %s", int(bad.sum()), f.id)
        pts[bad] = gen.random((int(bad.sum()), pts.shape[1]))
        vals[bad] = f(pts[bad])
        bad = ~np.isfinite(vals)
    sigma = noise_scale(gamma, n_total)
    if sigma > 0.0:
        vals = vals + sigma * gen.standard_normal(vals.size)
    stream = rng if isinstance(rng, RngStream) else None
    return SampleSet(pts, vals, gamma=gamma, n_total=n_total, source=f.id,
                     seed=stream.base_seed if stream else None,
                     stream_index=stream.stream_index if stream else None)


def split_halves(S: SampleSet) -> tuple[SampleSet, SampleSet]:
    """First half (regression set) and second half (Monte Carlo set).

    An odd trailing point is dropped so the halves have equal size.
    """
    if S.n < 2:
        raise ParameterError(f"need at least 2 points to split, got {S.n}")
    n = S.n
    if n % 2:
        logger.info("odd sample size %d: dropping the last point before splitting", n)
        n -= 1
    h = n // 2
    return S.subset(slice(0, h)), S.subset(slice(h, n))


def draw_sample(f: TestFunction, n: int, gamma: float, stream: RngStream,
                n_total: int | None = None) -> SampleSet:
    """Uniform points and noisy observations of ``f``, all from one stream."""
    gen = stream.generator()
    pts = sample_uniform(n, f.dim, gen)
    S = observe(f, pts, gamma, n if n_total is None else n_total, gen)
    return replace(S, seed=stream.base_seed, stream_index=stream.stream_index)
