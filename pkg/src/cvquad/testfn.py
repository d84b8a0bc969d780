"""Test functions on the unit cube and their ground-truth moments.

Families provided:

* the smooth compactly supported bump ``K0`` and its rescaling ``K(x) = K0(2x)``;
* scaled bumps ``A * K(m (x - c_j))`` living on one cube of an ``m``-per-axis grid;
* random draws from the two-point and sign-vector priors used in the
  lower-bound constructions;
* isotropic power-law peaks ``||x - x0||^-beta`` (rare-event functions);
* a few smooth and constant functions used by the rate experiments.

Every function is a :class:`TestFunction`, callable on ``(N, d)`` arrays.
"""

from __future__ import annotations

import enum
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any

import numpy as np

from .errors import ParameterError
from .quadrature import integrate_box

logger = logging.getLogger(__name__)


class Kind(str, enum.Enum):
    BUMP_BASE = "BumpBase"
    SCALED_BUMP = "ScaledBump"
    PRIOR_SAMPLE = "PriorSample"
    PEAK = "Peak"
    SMOOTH = "Smooth"
    CONSTANT = "Constant"


class Amplitude(str, enum.Enum):
    """Amplitude rule of a scaled bump: ``m^-s`` or ``m^(-s + d/p)``."""

    LOWER_BOUND_CASE_I = "LowerBoundCaseI"
    LOWER_BOUND_CASE_II = "LowerBoundCaseII"


@dataclass(frozen=True)
class TestFunction:
    """A real function on ``[0, 1]^d`` with smoothness metadata ``(s, p)``."""

    __test__ = False  # not a pytest class

    kind: Kind
    dim: int
    smoothness: float
    integrability: float
    params: dict[str, Any]
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    name: str = ""

    def __call__(self, x):
        pts = np.asarray(x, dtype=float)
        if pts.ndim == 0:
            return float(self.fn(pts.reshape(1, 1))[0])
        if pts.ndim == 1:
            if self.dim == 1 and pts.size != 1:
                return self.fn(pts[:, None])
            return float(self.fn(pts.reshape(1, self.dim))[0])
        return self.fn(pts)

    @property
    def id(self) -> str:
        return self.name or self.kind.value


# --------------------------------------------------------------------------
# bump profiles


def _k0(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1.0
    safe = np.where(inside, x, 0.0)
    vals = np.where(inside, np.exp(-1.0 / (1.0 - safe * safe)), 0.0)
    return np.prod(vals, axis=-1)


def bump_k0(x) -> np.ndarray:
    """``prod_i exp(-1/(1 - x_i^2))`` on the open cube ``(-1, 1)^d``, else 0.

    ``x`` has the coordinate on the last axis.
    """
    return _k0(x)


def bump_k(x) -> np.ndarray:
    """``K(x) = K0(2x)``, supported on ``(-1/2, 1/2)^d``."""
    return _k0(2.0 * np.asarray(x, dtype=float))


def bump_base_eval(x, variant: str = "K") -> float:
    """Evaluate ``K0`` or ``K`` at a single point (or scalar in d=1)."""
    pts = np.atleast_1d(np.asarray(x, dtype=float))
    if variant == "K0":
        return float(_k0(pts))
    if variant == "K":
        return float(_k0(2.0 * pts))
    raise ParameterError(f"unknown bump variant {variant!r}; expected 'K0' or 'K'")


def bump_sup(d: int) -> float:
    """``||K||_inf = e^{-d}``, attained at the origin."""
    return math.exp(-d)


@lru_cache(maxsize=None)
def _pinned_constants() -> dict[str, float]:
    text = resources.files("cvquad.data").joinpath("k_norms.txt").read_text(encoding="utf-8")
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, value = line.split("=", 1)
        out[key.strip()] = float(value)
    return out


def k_norm(q: int, d: int) -> float:
    """Pinned ``||K||_{L^q([-1/2,1/2]^d)}`` for ``q`` in 1..6 and ``d`` in {1, 2}."""
    key = f"knorm_q{q}_d{d}"
    consts = _pinned_constants()
    if key not in consts:
        raise ParameterError(f"no pinned constant {key}; available q=1..6, d=1..2")
    return consts[key]


# --------------------------------------------------------------------------
# cube grid


def cube_multi_index(m: int, j: int, d: int) -> tuple[int, ...]:
    """Row-major multi-index of cube ``j`` (1-based) in an ``m``-per-axis grid."""
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    if not 1 <= j <= m**d:
        raise ParameterError(f"cube index j={j} outside 1..{m**d}")
    return tuple(int(v) for v in np.unravel_index(j - 1, (m,) * d))


def cube_bounds(m: int, j: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.array(cube_multi_index(m, j, d), dtype=float)
    return idx / m, (idx + 1.0) / m


def cube_center(m: int, j: int, d: int) -> np.ndarray:
    lo, hi = cube_bounds(m, j, d)
    return 0.5 * (lo + hi)


def _amplitude(m: int, s: float, p: float, d: int, rule: Amplitude) -> float:
    if Amplitude(rule) is Amplitude.LOWER_BOUND_CASE_I:
        return float(m) ** (-s + d / p)
    return float(m) ** (-s)


def make_bump_base(d: int, variant: str = "K", center=None) -> TestFunction:
    """``K0(x - c)`` or ``K(x - c)`` restricted to the unit cube (default ``c`` = cube center)."""
    c = np.full(d, 0.5) if center is None else np.asarray(center, dtype=float)
    scale = 1.0 if variant == "K0" else 2.0
    if variant not in ("K0", "K"):
        raise ParameterError(f"unknown bump variant {variant!r}")

    def fn(x):
        return _k0(scale * (x - c))

    return TestFunction(Kind.BUMP_BASE, d, math.inf, math.inf,
                        {"variant": variant, "center": c.tolist()}, fn, f"{variant}(x-c)")


def make_scaled_bump(m: int, j: int, s: float, p: float, d: int,
                     amplitude_exponent: Amplitude | str = Amplitude.LOWER_BOUND_CASE_II) -> TestFunction:
    """Bump ``A * K(m (x - c_j))`` supported on cube ``j``.

    ``A = m^-s`` for the Case II rule, ``m^(-s + d/p)`` for Case I.
    """
    rule = Amplitude(amplitude_exponent)
    lo, hi = cube_bounds(m, j, d)
    c = 0.5 * (lo + hi)
    amp = _amplitude(m, s, p, d, rule)

    def fn(x):
        return amp * _k0(2.0 * m * (x - c))

    params = {"m": m, "j": j, "amplitude": amp, "rule": rule.value,
              "center": c.tolist(), "lo": lo.tolist(), "hi": hi.tolist()}
    return TestFunction(Kind.SCALED_BUMP, d, s, p, params, fn, f"bump(m={m},j={j},{rule.value})")


# --------------------------------------------------------------------------
# priors


class PriorCase(str, enum.Enum):
    CASE_I = "CaseI"
    CASE_II = "CaseII"


@dataclass(frozen=True)
class PriorSpec:
    """Parameters of one of the two lower-bound prior constructions.

    ``m`` defaults to ``ceil((200 n)^(1/d))``; ``m_override`` replaces it.
    ``lam`` is the Hoeffding margin used by the Case II separation check.
    """

    case: PriorCase
    n: int
    s: float
    p: float
    q: int
    d: int = 1
    eps: float = 0.5
    m_override: int | None = None
    lam: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "case", PriorCase(self.case))
        if self.n < 1:
            raise ParameterError(f"n must be >= 1, got {self.n}")
        if self.case is PriorCase.CASE_I and not 0.0 < self.eps < 1.0:
            raise ParameterError(f"eps must lie in (0, 1), got {self.eps}")
        if self.m**self.d < self.n:
            raise ParameterError(f"need m^d >= n, got m^d={self.m**self.d} < n={self.n}")

    @property
    def m(self) -> int:
        if self.m_override is not None:
            return int(self.m_override)
        root = (200.0 * self.n) ** (1.0 / self.d)
        m = math.ceil(root - 1e-9)
        return max(m, 1)

    @property
    def cubes(self) -> int:
        return self.m**self.d

    @property
    def alpha(self) -> float:
        return bump_sup(self.d)

    @property
    def M(self) -> float:
        return 3.0 * self.alpha

    @property
    def kappa(self) -> float:
        return math.sqrt(2.0 / (3.0 * self.n)) / 3.0


def make_prior_sample(spec: PriorSpec, rng, arm: int = 0, signs=None, v: int | None = None) -> TestFunction:
    """Draw one function from the prior of the given arm (0 or 1).

    Case II returns ``M + sum_j eta_j f_j`` with ``P(eta_j = -1) = (1 + kappa)/2``
    under arm 0 and ``(1 - kappa)/2`` under arm 1. Case I returns ``g0 = 0``
    with probability ``(1 + eps)/2`` under arm 0 (``(1 - eps)/2`` under arm 1),
    else the Case I bump ``g1`` on the first cube. ``signs`` / ``v`` force the
    draw; the realized draw is stored in ``params``.
    """
    from .sampling import as_generator

    if arm not in (0, 1):
        raise ParameterError(f"arm must be 0 or 1, got {arm}")
    d, m = spec.d, spec.m
    if spec.case is PriorCase.CASE_I:
        if v is None:
            p_zero = (1 + spec.eps) / 2 if arm == 0 else (1 - spec.eps) / 2
            v = 0 if as_generator(rng).random() < p_zero else 1
        if v == 0:
            zero = make_constant(0.0, d)
            return TestFunction(Kind.PRIOR_SAMPLE, d, spec.s, spec.p,
                                {"case": "CaseI", "arm": arm, "v": 0, "m": m}, zero.fn, "prior(CaseI,g0)")
        g1 = make_scaled_bump(m, 1, spec.s, spec.p, d, Amplitude.LOWER_BOUND_CASE_I)
        params = dict(g1.params, case="CaseI", arm=arm, v=1)
        return TestFunction(Kind.PRIOR_SAMPLE, d, spec.s, spec.p, params, g1.fn, "prior(CaseI,g1)")

    cubes = spec.cubes
    if signs is None:
        p_minus = (1 + spec.kappa) / 2 if arm == 0 else (1 - spec.kappa) / 2
        signs = np.where(as_generator(rng).random(cubes) < p_minus, -1, 1).astype(np.int8)
    else:
        signs = np.asarray(signs, dtype=np.int8).ravel()
        if signs.size != cubes or not np.all(np.abs(signs) == 1):
            raise ParameterError(f"signs must be {cubes} entries in {{-1, +1}}")
    amp = float(m) ** (-spec.s)
    M = spec.M
    grid_shape = (m,) * d

    def fn(x):
        idx = np.clip(np.floor(x * m).astype(np.int64), 0, m - 1)
        flat = np.ravel_multi_index(tuple(idx.T), grid_shape)
        local = x * m - (idx + 0.5)
        return M + signs[flat] * amp * _k0(2.0 * local)

    params = {"case": "CaseII", "arm": arm, "m": m, "M": M, "amplitude": amp,
              "signs": signs, "n_plus": int(np.sum(signs == 1)), "n_minus": int(np.sum(signs == -1))}
    return TestFunction(Kind.PRIOR_SAMPLE, d, spec.s, spec.p, params, fn, f"prior(CaseII,arm={arm})")


# --------------------------------------------------------------------------
# rare-event peaks


def peak_window(d: int, q: float, p: float, s: float) -> tuple[float, float]:
    """Admissible ``[lo, hi)`` range of the peak exponent ``beta``."""
    return d / (2.0 * q), min(d / q, d / p - s)


def make_peak(beta: float, x0, d: int, q: float, p: float, s: float) -> TestFunction:
    """Power-law peak ``||x - x0||^-beta`` with finite q-th but infinite 2q-th moment."""
    lo, hi = peak_window(d, q, p, s)
    if lo >= hi:
        raise ParameterError(
            f"empty peak window: need d/(2q)={lo:.6g} < min(d/q, d/p - s)={hi:.6g}, "
            f"i.e. s < d(2q-p)/(2pq)={d * (2 * q - p) / (2 * p * q):.6g}"
        )
    if beta < lo:
        raise ParameterError(f"beta={beta} < d/(2q)={lo:.6g}: the 2q-th moment would be finite")
    if beta >= d / q:
        raise ParameterError(f"beta={beta} >= d/q={d / q:.6g}: the q-th moment would be infinite")
    if beta >= d / p - s:
        raise ParameterError(f"beta={beta} >= d/p - s={d / p - s:.6g}: not embedded at smoothness s")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != d or np.any(x0 < 0) or np.any(x0 > 1):
        raise ParameterError(f"x0 must be a point of [0,1]^{d}")

    def fn(x):
        r = np.sqrt(np.sum((x - x0) ** 2, axis=-1))
        with np.errstate(divide="ignore"):
            return np.where(r > 0, r ** (-beta), np.inf)

    return TestFunction(Kind.PEAK, d, s, p, {"beta": beta, "x0": x0.tolist(), "q": q}, fn,
                        f"peak(beta={beta})")


# --------------------------------------------------------------------------
# smooth and constant functions


def make_constant(c: float, d: int = 1) -> TestFunction:
    def fn(x):
        return np.full(x.shape[0], float(c))

    return TestFunction(Kind.CONSTANT, d, math.inf, math.inf, {"c": float(c)}, fn, f"const({c})")


def make_smooth(fn: Callable[[np.ndarray], np.ndarray], d: int, name: str,
                smoothness: float = math.inf, moments: dict[int, float] | None = None) -> TestFunction:
    """Wrap a vectorized callable; ``moments`` holds any closed-form q-th moments."""
    return TestFunction(Kind.SMOOTH, d, smoothness, math.inf, {"moments": dict(moments or {})}, fn, name)


def make_sine(offset: float = 2.0, d: int = 1) -> TestFunction:
    """``offset + sin(2 pi x_1)``; its integral is ``offset``."""

    def fn(x):
        return offset + np.sin(2.0 * np.pi * x[:, 0])

    return make_smooth(fn, d, f"sine(offset={offset})", moments={1: float(offset)})


def make_one_plus_bump(amp: float = math.e, d: int = 1) -> TestFunction:
    """``1 + amp * K0(2x - 1)``: a C-infinity bump of height ``amp * e^-d`` on a unit floor."""

    def fn(x):
        return 1.0 + amp * _k0(2.0 * x - 1.0)

    return make_smooth(fn, d, f"one_plus_bump(amp={amp})")


def make_lipschitz(d: int = 1, kink: float = 0.3) -> TestFunction:
    """``1 + |x_1 - kink|``: Lipschitz with a single kink."""

    def fn(x):
        return 1.0 + np.abs(x[:, 0] - kink)

    m1 = 1.0 + (kink**2 + (1 - kink) ** 2) / 2.0
    return make_smooth(fn, d, f"lipschitz(kink={kink})", smoothness=1.0, moments={1: m1})


def make_linear(a: float = 0.0, b: float = 1.0, d: int = 1) -> TestFunction:
    def fn(x):
        return a + b * x[:, 0]

    return make_smooth(fn, d, f"linear({a},{b})", moments={1: a + b / 2.0})


# --------------------------------------------------------------------------
# reference moments


def _radial_peak_integral(x0: np.ndarray, d: int, radial_G: Callable, tol: float) -> float:
    """Integrate a radial profile about ``x0`` over the unit cube.

    The cube is split into pyramids with apex ``x0`` over each face. Along a
    ray to a face point ``y`` at distance ``R`` the radial integral is the
    closed form ``radial_G(R) = int_0^R g(r) r^(d-1) dr``; only the smooth
    face integral ``h * int_face R^-d radial_G(R) dy`` is numerical.
    """
    total = 0.0
    for axis in range(d):
        for side in (0.0, 1.0):
            h = abs(side - x0[axis])
            if h == 0.0:
                continue
            if d == 1:
                total += h * radial_G(h) / h
                continue
            others = [i for i in range(d) if i != axis]

            def face(u, axis=axis, side=side, others=others):
                y = np.empty((u.shape[0], d))
                y[:, axis] = side
                y[:, others] = u
                R = np.sqrt(np.sum((y - x0) ** 2, axis=1))
                return radial_G(R) / R**d

            total += h * integrate_box(face, np.zeros(d - 1), np.ones(d - 1), tol=tol / (2 * d))
    return total


def _peak_moment(f: TestFunction, q: float, tol: float, M: float | None = None) -> float:
    beta = f.params["beta"]
    x0 = np.asarray(f.params["x0"], dtype=float)
    d = f.dim
    a = beta * q
    if M is None:
        if a >= d:
            raise ParameterError(f"q-th moment of the peak diverges (beta*q={a} >= d={d})")

        def G(R):
            return R ** (d - a) / (d - a)
    else:
        rstar = M ** (-1.0 / beta)
        cap = M**q

        def G(R):
            R = np.asarray(R, dtype=float)
            inner = cap * np.minimum(R, rstar) ** d / d
            if a == d:
                outer = np.where(R > rstar, np.log(np.maximum(R, rstar) / rstar), 0.0)
            else:
                outer = np.where(R > rstar, (np.maximum(R, rstar) ** (d - a) - rstar ** (d - a)) / (d - a), 0.0)
            return inner + outer

    return float(_radial_peak_integral(x0, d, G, tol))


def reference_moment(f: TestFunction, q: int, tol: float = 1e-10) -> float:
    """Ground-truth ``int_{[0,1]^d} f^q dx`` to absolute tolerance ``tol``.

    Closed forms are used for constants, d=1 peaks and (through the radial
    split) the singular part of peaks in any dimension; everything else goes
    through adaptive quadrature over the cubes where ``f`` is not trivial.
    """
    if q < 1:
        raise ParameterError(f"q must be >= 1, got {q}")
    kind = f.kind
    d = f.dim
    if kind is Kind.CONSTANT:
        return f.params["c"] ** q
    if kind is Kind.PEAK:
        return _peak_moment(f, q, tol)

    def power(x):
        return f.fn(x) ** q

    if kind is Kind.SCALED_BUMP:
        return integrate_box(power, f.params["lo"], f.params["hi"], tol=tol)
    if kind is Kind.PRIOR_SAMPLE:
        if f.params["case"] == "CaseI":
            if f.params["v"] == 0:
                return 0.0
            return integrate_box(power, f.params["lo"], f.params["hi"], tol=tol)
        A, B = prior_cube_moments(f.params["M"], f.params["amplitude"], f.params["m"], d, q, tol / 2)
        return f.params["n_plus"] * A + f.params["n_minus"] * B
    if kind is Kind.SMOOTH and q in f.params.get("moments", {}):
        return f.params["moments"][q]
    return integrate_box(power, np.zeros(d), np.ones(d), tol=tol)


def prior_cube_moments(M: float, amp: float, m: int, d: int, q: int, tol: float = 1e-12) -> tuple[float, float]:
    """``(A, B) = (int_cube (M + f_j)^q, int_cube (M - f_j)^q)`` for one grid cube."""
    lo = np.zeros(d)
    hi = np.full(d, 1.0 / m)
    c = np.full(d, 0.5 / m)

    def plus(x):
        return (M + amp * _k0(2.0 * m * (x - c))) ** q

    def minus(x):
        return (M - amp * _k0(2.0 * m * (x - c))) ** q

    return integrate_box(plus, lo, hi, tol=tol), integrate_box(minus, lo, hi, tol=tol)


def reference_truncated_moment(f: TestFunction, q: int, M: float, tol: float = 1e-10) -> float:
    """Ground truth ``int clamp(f, -M, M)^q dx``, the mean of the truncated estimator."""
    if M <= 0:
        raise ParameterError(f"M must be > 0, got {M}")
    if f.kind is Kind.PEAK:
        return _peak_moment(f, q, tol, M=M)
    if f.kind is Kind.CONSTANT:
        return float(np.clip(f.params["c"], -M, M)) ** q

    def power(x):
        return np.clip(f.fn(x), -M, M) ** q

    return integrate_box(power, np.zeros(f.dim), np.ones(f.dim), tol=tol)


def reference_variance(f: TestFunction, q: int = 1, tol: float = 1e-10) -> float:
    """``Var(f^q(X))`` for ``X`` uniform on the cube."""
    return reference_moment(f, 2 * q, tol) - reference_moment(f, q, tol) ** 2
