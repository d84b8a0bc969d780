"""Closed-form convergence exponents, regime classification and parameter schedules.

Rates are exponents of ``n``: an estimator with exponent ``-0.5`` has error
``O(n^-0.5)``. Moment estimation uses ``(s, p, q, d)`` under the standing
assumptions ``p > 2``, ``q < p < 2q``, ``s >= 0``, ``d >= 1``; integral
estimation under noise uses ``(s, d, gamma)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .errors import ParameterError


class Regime(str, enum.Enum):
    CASE_I = "CaseI_s_gt_d_over_p"
    CASE_II = "CaseII_mid"
    CASE_III = "CaseIII_low"
    RARE_EVENT = "RareEvent"


class Recommended(str, enum.Enum):
    CV = "CV"
    TRUNCATED_MC = "TruncatedMC"


def check_moment_assumptions(s: float, p: float, q: float, d: int) -> None:
    problems = []
    if not p > 2:
        problems.append(f"p > 2 (got p={p})")
    if not q < p:
        problems.append(f"q < p (got q={q}, p={p})")
    if not p < 2 * q:
        problems.append(f"p < 2q (got p={p}, 2q={2 * q})")
    if not s >= 0:
        problems.append(f"s >= 0 (got s={s})")
    if not (d >= 1 and int(d) == d):
        problems.append(f"d a positive integer (got d={d})")
    if problems:
        raise ParameterError("violated assumption(s): " + "; ".join(problems))


def moment_exponent(s: float, p: float, q: float, d: int) -> float:
    """Minimax exponent ``max(-q(s/d - 1/p) - 1, -s/d - 1/2)`` for the q-th moment."""
    check_moment_assumptions(s, p, q, d)
    return max(-q * (s / d - 1.0 / p) - 1.0, -s / d - 0.5)


def integral_exponent(s: float, d: int, gamma: float) -> float:
    """Minimax exponent ``max(-1/2 - gamma, -1/2 - s/d)`` for the integral under noise."""
    if not s > 0:
        raise ParameterError(f"need s > 0, got {s}")
    if not gamma >= 0:
        raise ParameterError(f"need gamma >= 0, got {gamma}")
    return max(-0.5 - gamma, -0.5 - s / d)


def thresholds(p: float, q: float, d: int) -> tuple[float, float, float]:
    """``(d/p, d(2q-p)/(p(2q-2)), d(2q-p)/(2pq))``, strictly decreasing under the assumptions."""
    return d / p, d * (2 * q - p) / (p * (2 * q - 2)), d * (2 * q - p) / (2 * p * q)


def truncation_exponent(s: float, p: float, d: int) -> float:
    """Exponent of the truncation level ``M = c n^(1/p - s/d)``."""
    return 1.0 / p - s / d


def truncated_mc_exponent(s: float, p: float, q: float, d: int) -> float:
    """Error exponent of truncated MC with the default level: ``q(1/p - s/d) - 1``."""
    return q * truncation_exponent(s, p, d) - 1.0


def peak_truncated_exponent(beta: float, q: float, d: int = 1) -> float:
    """Error exponent of truncated MC on ``||x - x0||^-beta`` with ``M = n^(beta/d)``.

    The peak lies in weak ``L^{p*}`` with ``p* = d/beta``; balancing the
    variance ``M^(2q - p*) / n`` against the squared bias ``M^(2(q - p*))``
    gives ``M = n^(1/p*)`` and error ``n^(q/p* - 1)``.
    """
    p_star = d / beta
    return q / p_star - 1.0


@dataclass(frozen=True)
class RegimeReport:
    regime: Regime
    thresholds: tuple[float, float, float]
    recommended_method: Recommended
    exponent: float
    boundary: bool = False
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime.value,
            "thresholds": list(self.thresholds),
            "recommended_method": self.recommended_method.value,
            "exponent": self.exponent,
            "boundary": self.boundary,
            **self.params,
        }


def regime(s: float, p: float, q: float, d: int) -> RegimeReport:
    """Place ``s`` against the three thresholds; a tie goes to the higher regime and is flagged."""
    exponent = moment_exponent(s, p, q, d)
    t1, t2, t3 = thresholds(p, q, d)
    boundary = s in (t1, t2, t3)
    if s >= t1:
        reg = Regime.CASE_I
    elif s >= t2:
        reg = Regime.CASE_II
    elif s >= t3:
        reg = Regime.CASE_III
    else:
        reg = Regime.RARE_EVENT
    method = Recommended.TRUNCATED_MC if reg is Regime.RARE_EVENT else Recommended.CV
    return RegimeReport(reg, (t1, t2, t3), method, exponent, boundary,
                        {"s": s, "p": p, "q": q, "d": d})


def optimal_k(n: int, s: float, d: int, gamma: float, c: float = 1.0) -> int:
    """Neighbour count ``c n^(2(s - gamma d)/(d + 2s))`` clamped to ``[1, n/2]``; 1 when ``gamma >= s/d``."""
    if n < 2:
        raise ParameterError(f"need n >= 2, got {n}")
    if not 0 < s < 1:
        raise ParameterError(f"the k schedule holds for s in (0, 1), got {s}")
    if gamma >= s / d:
        return 1
    k = round(c * n ** (2.0 * (s - gamma * d) / (d + 2.0 * s)))
    return int(min(max(k, 1), n // 2))


def theory_table(s: float, p: float, q: float, d: int, gamma: float | None = None,
                 n_values=(2**8, 2**10, 2**12, 2**14)) -> dict:
    """Everything ``cvquad theory`` prints, as a plain dict."""
    rep = regime(s, p, q, d)
    out = rep.to_dict()
    t_exp = truncation_exponent(s, p, d)
    out["truncation_exponent"] = t_exp
    out["truncated_mc_exponent"] = truncated_mc_exponent(s, p, q, d) if t_exp > 0 else None
    out["M_schedule"] = {int(n): (n**t_exp if t_exp > 0 else None) for n in n_values}
    if gamma is not None:
        out["gamma"] = gamma
        if s > 0:
            out["integral_exponent"] = integral_exponent(s, d, gamma)
        if 0 < s < 1:
            out["k_schedule"] = {int(n): optimal_k(n, s, d, gamma) for n in n_values}
    return out


__all__ = [
    "Recommended",
    "Regime",
    "RegimeReport",
    "check_moment_assumptions",
    "integral_exponent",
    "moment_exponent",
    "optimal_k",
    "peak_truncated_exponent",
    "regime",
    "theory_table",
    "thresholds",
    "truncated_mc_exponent",
    "truncation_exponent",
]
