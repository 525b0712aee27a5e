"""Gamma-function dimension thresholds and the singular-solution constant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special as sp

# relative band inside which lhs and rhs are reported as equal
VERDICT_RTOL = 1e-9


class DomainError(ValueError):
    """A Gamma argument is nonpositive (pole or outside the admissible range)."""


@dataclass(frozen=True)
class DimensionRegime:
    n: float
    s: float
    lhs: float
    rhs: float
    verdict: str  # "true", "false" or "boundary"
    p: float | None = None

    @property
    def satisfied(self) -> bool:
        return self.verdict == "true"

    def as_dict(self) -> dict:
        out = {"n": self.n, "s": self.s, "lhs": self.lhs, "rhs": self.rhs,
               "verdict": self.verdict}
        if self.p is not None:
            out["p"] = self.p
        return out


def _check_s(s: float) -> None:
    if not 0.0 < s < 1.0:
        raise DomainError(f"s must lie in (0, 1), got {s}")


def _gamma_pos(x: float) -> float:
    if not x > 0.0:
        raise DomainError(f"Gamma argument {x} is not positive")
    return float(sp.gamma(x))


def hardy_side(n: float, s: float) -> float:
    """Gamma^2((n+2s)/4) / Gamma^2((n-2s)/4)."""
    _check_s(s)
    num = _gamma_pos((n + 2 * s) / 4)
    den = _gamma_pos((n - 2 * s) / 4)
    return (num / den) ** 2


def exp_side(n: float, s: float) -> float:
    """Gamma(n/2) Gamma(1+s) / Gamma((n-2s)/2)."""
    _check_s(s)
    return _gamma_pos(n / 2) * _gamma_pos(1 + s) / _gamma_pos((n - 2 * s) / 2)


def power_side(n: float, s: float, p: float) -> float:
    """Right-hand side of the power-nonlinearity condition; tends to exp_side as p grows."""
    _check_s(s)
    if p <= 1:
        raise DomainError(f"p must exceed 1, got {p}")
    t = s / (p - 1)
    # log-gamma keeps large p (small t) well conditioned
    args = (n / 2 - t, s + t, t, (n - 2 * s) / 2 - t)
    for x in args:
        if not x > 0:
            raise DomainError(f"Gamma argument {x} is not positive")
    lg = sp.gammaln
    val = lg(args[0]) + lg(args[1]) - lg(args[2]) - lg(args[3])
    return float(p * math.exp(val))


def _verdict(lhs: float, rhs: float) -> str:
    if abs(lhs - rhs) <= VERDICT_RTOL * max(abs(lhs), abs(rhs)):
        return "boundary"
    return "true" if lhs < rhs else "false"


def condition_exponential(n: float, s: float) -> DimensionRegime:
    lhs, rhs = hardy_side(n, s), exp_side(n, s)
    return DimensionRegime(n=n, s=s, lhs=lhs, rhs=rhs, verdict=_verdict(lhs, rhs))


def sobolev_exponent(n: float, s: float) -> float:
    if n <= 2 * s:
        raise DomainError("n must exceed 2s")
    return (n + 2 * s) / (n - 2 * s)


def condition_power(n: float, s: float, p: float) -> DimensionRegime:
    if p <= sobolev_exponent(n, s):
        raise ValueError(f"p={p} does not exceed the Sobolev exponent {(n + 2 * s) / (n - 2 * s)}")
    lhs, rhs = hardy_side(n, s), power_side(n, s, p)
    return DimensionRegime(n=n, s=s, p=p, lhs=lhs, rhs=rhs, verdict=_verdict(lhs, rhs))


def threshold_n(s: float, n_max: float = 60.0) -> float:
    """Smallest real n > 2s at which hardy_side overtakes exp_side."""
    _check_s(s)
    g = lambda n: math.log(hardy_side(n, s)) - math.log(exp_side(n, s))
    grid = np.linspace(2 * s + 1e-6, n_max, 4000)
    vals = np.array([g(x) for x in grid])
    idx = np.nonzero((vals[:-1] < 0) & (vals[1:] >= 0))[0]
    if idx.size == 0:
        raise DomainError(f"no crossing below n = {n_max}")
    i = int(idx[0])
    return float(optimize.brentq(g, grid[i], grid[i + 1], xtol=1e-13))


def singular_lambda_closed_form(n: float, s: float) -> float:
    """Riesz-potential value 4^s Gamma(1+s) Gamma(n/2) / Gamma((n-2s)/2)."""
    return 4.0 ** s * exp_side(n, s)


def singular_lambda(n: int, s: float, radius: float = 1.0) -> float:
    """lambda with (-Delta)^s(-2s log|x|) = lambda |x|^{-2s}, by radial P.V. quadrature."""
    _check_s(s)
    if n <= 2 * s:
        raise DomainError("n must exceed 2s")
    from .fracops import frac_laplacian_point, log_trace

    u = log_trace(n, s, scale=2 * s)
    val = frac_laplacian_point(u, radius, s)
    return float(val * radius ** (2 * s))
