"""Nonlinearities, trace functions, weighted norms, the fractional Laplacian and the energy."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import interpolate, special

from .quadrature import geometric_breaks, gl01, panel_rule, refine_breaks


class DivergentTailError(ValueError):
    """The exterior tail is not integrable against the L1_s weight."""


class DivergenceError(ArithmeticError):
    """A double integral does not settle under refinement."""


class PrecisionWarning(UserWarning):
    pass


# ---------------------------------------------------------------- constants

def sphere_area(n: float) -> float:
    """Surface measure of the unit sphere S^{n-1}."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def cns_constant(n: float, s: float) -> float:
    """c_{n,s} = 4^s Gamma(n/2+s) / (pi^{n/2} |Gamma(-s)|), the symbol-|xi|^{2s} normalization."""
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    return 4.0 ** s * math.gamma(n / 2 + s) / (math.pi ** (n / 2) * abs(math.gamma(-s)))


def radial_kernel(n: float, s: float, r, rho) -> np.ndarray:
    """Sphere integral of |r e - rho w|^{-(n+2s)} over w in S^{n-1}, closed form via 2F1."""
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    a = np.maximum(r, rho)
    q = np.minimum(r, rho) / a
    nu = (n + 2 * s) / 2
    return sphere_area(n) * a ** (-(n + 2 * s)) * special.hyp2f1(nu, 1 + s, n / 2, q * q)


def radial_weight(n: float, s: float, r, rho) -> np.ndarray:
    """rho^{n-1} times radial_kernel, evaluated in log space to survive huge rho."""
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    a = np.maximum(r, rho)
    q = np.minimum(r, rho) / a
    nu = (n + 2 * s) / 2
    with np.errstate(divide="ignore"):
        logw = (n - 1) * np.log(rho) - (n + 2 * s) * np.log(a)
    return sphere_area(n) * np.exp(logw) * special.hyp2f1(nu, 1 + s, n / 2, q * q)


def radial_kernel_angular(n: int, s: float, r: float, rho, nodes: int = 64) -> np.ndarray:
    """Same sphere integral by Gauss-Legendre in the polar angle (cross-check route)."""
    rho = np.asarray(rho, dtype=float)
    x, w = np.polynomial.legendre.leggauss(nodes)
    if n == 1:
        return (np.abs(r - rho) ** (-(1 + 2 * s)) + np.abs(r + rho) ** (-(1 + 2 * s)))
    # polar angle theta in (0, pi), density |S^{n-2}| sin^{n-2} theta
    th = 0.5 * np.pi * (x + 1)
    w = 0.5 * np.pi * w
    dens = sphere_area(n - 1) * np.sin(th) ** (n - 2)
    d2 = r * r + rho[..., None] ** 2 - 2 * r * rho[..., None] * np.cos(th)
    return np.sum(w * dens * d2 ** (-(n + 2 * s) / 2), axis=-1)


# ---------------------------------------------------------------- nonlinearities

@dataclass(frozen=True)
class Nonlinearity:
    f: Callable
    fprime: Callable
    F: Callable
    name: str = "custom"
    nonnegative: bool = False
    convex: bool = False
    nondecreasing: bool = False
    positive_at_zero: bool = False
    superlinear: bool = False
    holder_exponent: float = 1.0

    @property
    def flags(self) -> dict:
        return {"nonnegative": self.nonnegative, "convex": self.convex,
                "nondecreasing": self.nondecreasing, "positive_at_zero": self.positive_at_zero}

    def scaled(self, lam: float) -> "Nonlinearity":
        f, fp, F = self.f, self.fprime, self.F
        return Nonlinearity(lambda t: lam * f(t), lambda t: lam * fp(t), lambda t: lam * F(t),
                            name=f"{lam}*{self.name}",
                            nonnegative=self.nonnegative and lam >= 0,
                            convex=self.convex and lam >= 0,
                            nondecreasing=self.nondecreasing and lam >= 0,
                            positive_at_zero=self.positive_at_zero and lam > 0,
                            superlinear=self.superlinear and lam > 0,
                            holder_exponent=self.holder_exponent)


def exponential() -> Nonlinearity:
    return Nonlinearity(np.exp, np.exp, lambda t: np.expm1(t), name="exp",
                        nonnegative=True, convex=True, nondecreasing=True,
                        positive_at_zero=True, superlinear=True)


def power(p: float) -> Nonlinearity:
    """(1 + t)_+^p, convex and nonnegative for p >= 1."""
    if p < 1:
        raise ValueError("power nonlinearity needs p >= 1")

    def f(t):
        return np.maximum(1 + np.asarray(t, dtype=float), 0.0) ** p

    def fp(t):
        return p * np.maximum(1 + np.asarray(t, dtype=float), 0.0) ** (p - 1)

    def F(t):
        b = np.maximum(1 + np.asarray(t, dtype=float), 0.0)
        return (b ** (p + 1) - 1) / (p + 1)

    return Nonlinearity(f, fp, F, name=f"power{p:g}", nonnegative=True, convex=True,
                        nondecreasing=True, positive_at_zero=True, superlinear=p > 1)


def convex_spline(gamma: float = 0.5) -> Nonlinearity:
    """1 + t_+^{1+gamma}: convex, C^{1,gamma}, superlinear."""
    g = gamma

    def f(t):
        return 1 + np.maximum(np.asarray(t, dtype=float), 0.0) ** (1 + g)

    def fp(t):
        return (1 + g) * np.maximum(np.asarray(t, dtype=float), 0.0) ** g

    def F(t):
        t = np.asarray(t, dtype=float)
        return t + np.maximum(t, 0.0) ** (2 + g) / (2 + g)

    return Nonlinearity(f, fp, F, name=f"spline{g:g}", nonnegative=True, convex=True,
                        nondecreasing=True, positive_at_zero=True, superlinear=True,
                        holder_exponent=g)


def linear(slope: float = 1.0, intercept: float = 1.0) -> Nonlinearity:
    return Nonlinearity(lambda t: slope * np.asarray(t, dtype=float) + intercept,
                        lambda t: slope + 0 * np.asarray(t, dtype=float),
                        lambda t: 0.5 * slope * np.asarray(t, dtype=float) ** 2
                        + intercept * np.asarray(t, dtype=float),
                        name="linear", nonnegative=False, convex=True,
                        nondecreasing=slope >= 0, positive_at_zero=intercept > 0)


def nonlinearity_from_name(name: str) -> Nonlinearity:
    name = name.strip().lower()
    if name in ("exp", "exponential"):
        return exponential()
    if name.startswith("power"):
        return power(float(name[5:] or 3))
    if name.startswith("spline"):
        return convex_spline(float(name[6:] or 0.5))
    if name == "linear":
        return linear()
    raise ValueError(f"unknown nonlinearity {name!r}")


# ---------------------------------------------------------------- exterior tails

@dataclass(frozen=True)
class ZeroTail:
    growth = -math.inf

    def __call__(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def rescaled(self, R):
        return self

    def scaled(self, c):
        return self


@dataclass(frozen=True)
class ConstantTail:
    value: float
    growth = 0.0

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.value)

    def rescaled(self, R):
        return self

    def scaled(self, c):
        return ConstantTail(c * self.value)


@dataclass(frozen=True)
class LogTail:
    """scale*log(shift + |x|) + offset."""
    scale: float = 1.0
    offset: float = 0.0
    shift: float = 0.0
    growth = 0.0

    def __call__(self, x):
        return self.scale * np.log(self.shift + np.abs(np.asarray(x, dtype=float))) + self.offset

    def rescaled(self, R):
        return LogTail(self.scale, self.offset + self.scale * math.log(R), self.shift / R)

    def scaled(self, c):
        return LogTail(c * self.scale, c * self.offset, self.shift)


@dataclass(frozen=True)
class PowerTail:
    coef: float
    exponent: float

    @property
    def growth(self):
        return self.exponent

    def __call__(self, x):
        return self.coef * np.abs(np.asarray(x, dtype=float)) ** self.exponent

    def rescaled(self, R):
        return PowerTail(self.coef * R ** self.exponent, self.exponent)

    def scaled(self, c):
        return PowerTail(c * self.coef, self.exponent)


@dataclass(frozen=True)
class PeriodicTail:
    """Exactly periodic exterior data (line geometry only)."""
    func: Callable
    period: float
    growth = 0.0

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    def mean(self, absolute=False):
        x, w = panel_rule(np.linspace(0, self.period, 65), 8)
        vals = self.func(x)
        return float(np.sum(w * (np.abs(vals) if absolute else vals)) / self.period)

    def rescaled(self, R):
        f = self.func
        return PeriodicTail(lambda x: f(R * np.asarray(x)), self.period / R)

    def scaled(self, c):
        f = self.func
        return PeriodicTail(lambda x: c * f(x), self.period)


# ---------------------------------------------------------------- trace functions

class TraceFunction:
    """u on a line grid (n=1) or a radial grid over R^n, plus an explicit exterior tail.

    The interior is either an exact callable or an interpolant of nodal values.  With
    ``boundary_power=b`` the interpolated quantity is u/w^b, w the distance weight to the
    end of the grid, so traces with a square-root edge are represented accurately.
    """

    def __init__(self, nodes, values=None, *, n: int = 1, geometry: str = "line",
                 s: float = 0.5, tail=None, func: Callable | None = None,
                 kind: str = "cubic", boundary_power: float | None = None):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if geometry not in ("line", "radial"):
            raise ValueError(f"unknown geometry {geometry!r}")
        if geometry == "radial" and nodes[0] < 0:
            raise ValueError("radial nodes must be nonnegative")
        if geometry == "line" and n != 1:
            raise ValueError("line geometry is one-dimensional")
        self.nodes = nodes
        self.n = int(n)
        self.geometry = geometry
        self.s = float(s)
        self.tail = ZeroTail() if tail is None else tail
        self.func = func
        self.kind = kind
        self.boundary_power = boundary_power
        if values is None:
            if func is None:
                raise ValueError("need nodal values or a callable")
            values = func(nodes)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != nodes.shape or not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite and match the grid")
        self._interp = None

    # -- geometry
    @property
    def lo(self) -> float:
        return 0.0 if self.geometry == "radial" else float(self.nodes[0])

    @property
    def hi(self) -> float:
        return float(self.nodes[-1])

    def _edge_weight(self, x):
        x = np.asarray(x, dtype=float)
        if self.geometry == "radial":
            return np.maximum(self.hi ** 2 - x * x, 0.0) / self.hi
        a, b = self.lo, self.hi
        return np.maximum((x - a) * (b - x), 0.0) / (0.5 * (b - a))

    def _build(self):
        if self.func is not None:
            self._interp = self.func
            return
        x, y = self.nodes, self.values
        bp = self.boundary_power
        if bp is not None:
            wgt = self._edge_weight(x)
            keep = wgt > 0
            x, y = x[keep], y[keep] / wgt[keep] ** bp
        if self.kind == "linear":
            base = lambda t, x=x, y=y: np.interp(t, x, y)
        else:
            if self.geometry == "radial" and x[0] == 0.0:
                bc = ((1, 0.0), "not-a-knot")
            else:
                bc = "not-a-knot"
            base = interpolate.CubicSpline(x, y, bc_type=bc, extrapolate=True)
        if bp is None:
            self._interp = base
        else:
            self._interp = lambda t, base=base: base(t) * self._edge_weight(t) ** bp

    def interior(self, x):
        if self._interp is None:
            self._build()
        return self._interp(x)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xx = np.abs(x) if self.geometry == "radial" else x
        inside = (xx >= self.lo) & (xx <= self.hi)
        out = np.empty_like(xx)
        if np.any(inside):
            out[inside] = self.interior(xx[inside])
        if np.any(~inside):
            out[~inside] = self.tail(xx[~inside])
        return out if out.ndim else float(out)

    def basis_matrix(self, z) -> np.ndarray:
        """Matrix M with u(z) = M @ values for interior points z (interpolated traces only)."""
        if self.func is not None:
            raise ValueError("callable traces have no nodal basis")
        z = np.asarray(z, dtype=float)
        x = self.nodes
        eye = np.eye(x.size)
        bp = self.boundary_power
        keep = np.ones(x.size, dtype=bool)
        scale = np.ones(x.size)
        if bp is not None:
            wgt = self._edge_weight(x)
            keep = wgt > 0
            scale[keep] = 1.0 / wgt[keep] ** bp
        xk = x[keep]
        Y = eye[keep] * scale[keep][:, None]
        if self.kind == "linear":
            cols = [np.interp(z, xk, Y[:, j]) for j in range(x.size)]
            M = np.stack(cols, axis=-1)
        else:
            bc = ((1, np.zeros(x.size)), "not-a-knot") if self.geometry == "radial" and xk[0] == 0.0 \
                else "not-a-knot"
            M = interpolate.CubicSpline(xk, Y, bc_type=bc, axis=0)(z)
        if bp is not None:
            M = M * (self._edge_weight(z) ** bp)[:, None]
        return M

    def derivative(self, x, order: int = 1):
        """Derivative of the interior representation (spline or central differences)."""
        x = np.asarray(x, dtype=float)
        if self.func is None and self.boundary_power is None and self.kind == "cubic":
            if self._interp is None:
                self._build()
            return self._interp(x, order)
        h = 1e-4 * max(self.hi - self.lo, 1.0)
        if order == 1:
            return (self(x + h) - self(x - h)) / (2 * h)
        return (self(x + h) - 2 * self(x) + self(x - h)) / h ** 2

    def spacing_near(self, x: float) -> float:
        i = int(np.clip(np.searchsorted(self.nodes, x), 1, self.nodes.size - 1))
        return float(self.nodes[i] - self.nodes[i - 1])

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    # -- transformations
    def rescaled(self, R: float) -> "TraceFunction":
        """x -> u(R x)."""
        return TraceFunction(self.nodes / R, n=self.n, geometry=self.geometry, s=self.s,
                             tail=self.tail.rescaled(R), func=lambda x: self(R * np.asarray(x)))

    def scaled(self, c: float) -> "TraceFunction":
        """x -> c u(x)."""
        return TraceFunction(self.nodes, c * self.values, n=self.n, geometry=self.geometry,
                             s=self.s, tail=self.tail.scaled(c),
                             func=None if self.func is None else (lambda x: c * self.func(x)),
                             kind=self.kind, boundary_power=self.boundary_power)

    def translated(self, d: float) -> "TraceFunction":
        """x -> u(x - d) (line geometry, callable representation)."""
        if self.geometry != "line":
            raise ValueError("translation needs line geometry")
        if not isinstance(self.tail, (ZeroTail, ConstantTail)):
            raise ValueError("translation supports zero or constant tails")
        return TraceFunction(self.nodes + d, n=1, s=self.s, tail=self.tail,
                             func=lambda x: self(np.asarray(x) - d))

    def with_s(self, s: float) -> "TraceFunction":
        t = TraceFunction(self.nodes, self.values, n=self.n, geometry=self.geometry, s=s,
                          tail=self.tail, func=self.func, kind=self.kind,
                          boundary_power=self.boundary_power)
        return t


def dirichlet_trace(nodes, values, *, n=1, geometry="line", s=0.5, kind="cubic"):
    """Trace vanishing outside the grid, interpolated with a d^s edge factor."""
    return TraceFunction(nodes, values, n=n, geometry=geometry, s=s, tail=ZeroTail(),
                         kind=kind, boundary_power=s)


def log_trace(n: int, s: float, scale: float = 1.0, R: float = 4.0, h: float = 1 / 64):
    """-scale*log|x| on R^n, exact interior plus logarithmic tail."""
    nodes = np.arange(0.0, R + h / 2, h)
    func = lambda r: -scale * np.log(np.abs(np.asarray(r, dtype=float)))
    with np.errstate(divide="ignore"):
        vals = func(nodes)
    vals[0] = 0.0  # placeholder at the singular node; never interpolated
    t = TraceFunction(nodes, vals, n=n, geometry="radial", s=s, tail=LogTail(-scale), func=func)
    return t


# ---------------------------------------------------------------- tail integrals

def _halfline(func, start: float, scale: float, decay: float, q: int = 8,
              levels: int = 90) -> float:
    """int_start^inf func, geometric panels; func ~ t^{-1-decay} at infinity."""
    k = np.arange(-24, levels, dtype=float)
    b = start + scale * np.concatenate([[0.0], 2.0 ** k])
    x, w = panel_rule(b, q)
    val = float(np.sum(w * func(x)))
    T = b[-1]
    if decay > 0:
        val += float(func(np.array([T]))[0]) * T / decay
    return val


def _check_tail(u: TraceFunction, s: float) -> None:
    if u.tail.growth >= 2 * s:
        raise DivergentTailError(
            f"tail grows like |x|^{u.tail.growth}, not integrable against the weight for s={s}")


def _periodic_line_pair(tail: PeriodicTail, x: float, T0: float, s: float,
                        periods: int = 1500) -> float:
    """int_T0^inf (E(x+t) + E(x-t)) t^{-1-2s} dt for periodic E."""
    P = tail.period
    T1 = T0 + periods * P
    b = np.linspace(T0, T1, 8 * periods + 1)
    t, w = panel_rule(b, 8)
    val = float(np.sum(w * (tail(x + t) + tail(x - t)) * t ** (-1 - 2 * s)))
    return val + 2 * tail.mean() * T1 ** (-2 * s) / (2 * s)


def _line_pair_tail(u: TraceFunction, x: float, T0: float, s: float) -> float:
    tail = u.tail
    if isinstance(tail, ZeroTail):
        return 0.0
    if isinstance(tail, ConstantTail):
        return 2 * tail.value * T0 ** (-2 * s) / (2 * s)
    if isinstance(tail, PeriodicTail):
        return _periodic_line_pair(tail, x, T0, s)
    f = lambda t: (tail(x + t) + tail(x - t)) * t ** (-1 - 2 * s)
    return _halfline(f, T0, max(T0, 1.0), 2 * s - max(tail.growth, 0.0))


# ---------------------------------------------------------------- fractional Laplacian

def _line_point(u: TraceFunction, x: float, s: float, q: int) -> tuple[float, float]:
    c = cns_constant(1, s)
    h = u.spacing_near(x)
    delta = 4 * h
    ux = float(u(x))
    # near field: second differences on geometric panels, Taylor below t0
    t0 = delta * 2.0 ** -10
    k = h / 4
    upp = (float(u(x + k)) - 2 * ux + float(u(x - k))) / k ** 2
    near_taylor = -upp * t0 ** (2 - 2 * s) / (2 - 2 * s)
    t, w = panel_rule(geometric_breaks(delta, 10), q)
    g = (2 * ux - u(x + t) - u(x - t)) * t ** (-1 - 2 * s)
    near = near_taylor + float(np.sum(w * g))
    # far field up to the last interior node on either side
    a, b = u.lo, u.hi
    T0 = max(x - a, b - x, delta)
    dist = np.abs(u.nodes - x)
    brk = np.concatenate([[delta, T0], dist[(dist > delta) & (dist < T0)]])
    brk = refine_breaks(brk, max(h, 1e-3 * T0))

    def far(qq):
        t, w = panel_rule(brk, qq)
        return float(np.sum(w * (2 * ux - u(x + t) - u(x - t)) * t ** (-1 - 2 * s)))

    f1 = far(q)
    f2 = far(max(q // 2 + 1, 3))
    tail = 2 * ux * T0 ** (-2 * s) / (2 * s) - _line_pair_tail(u, x, T0, s)
    err = c * (abs(f1 - f2) + abs(near_taylor))
    return c * (near + f1 + tail), err


def _radial_tail(u: TraceFunction, r: float, s: float, Ur: float) -> float:
    n, R = u.n, u.hi
    tail = u.tail
    wf = lambda rho: radial_weight(n, s, r, rho)
    scale = max(R - r, 1e-3 * R)
    if isinstance(tail, ZeroTail):
        return Ur * _halfline(wf, R, scale, 2 * s)
    if isinstance(tail, PeriodicTail):
        raise ValueError("periodic tails are supported on the line only")
    f = lambda rho: (Ur - tail(rho)) * wf(rho)
    return _halfline(f, R, scale, 2 * s - max(tail.growth, 0.0))


def _radial_point(u: TraceFunction, r: float, s: float, q: int) -> tuple[float, float]:
    n = u.n
    c = cns_constant(n, s)
    R = u.hi
    h = u.spacing_near(r)
    Ur = float(u(r))
    wf = lambda rho: radial_weight(n, s, r, rho)
    if r == 0.0:
        delta = 4 * h
        t, w = panel_rule(geometric_breaks(delta, 40), q)
        near = float(np.sum(w * (Ur - u(t)) * sphere_area(n) * t ** (-1 - 2 * s)))
        lo_far = delta
        far_brk = np.concatenate([[delta, R], u.nodes[(u.nodes > delta) & (u.nodes < R)]])
        err_near = 0.0
    else:
        delta = min(4 * h, r / 2)
        # symmetric pairing rho = r +- t; rounding of r +- t limits t >= 1e-7 r
        levels = int(np.ceil(np.log2(delta / (1e-7 * r))))
        t, w = panel_rule(geometric_breaks(delta, max(levels, 1)), q)
        g = (Ur - u(r + t)) * wf(r + t) + (Ur - u(r - t)) * wf(r - t)
        near = float(np.sum(w * g))
        err_near = abs(float(g[0])) * float(t[0])
        lo_far = None
        geo0 = r * 2.0 ** -np.arange(1, 40)
        inner = u.nodes[(u.nodes > 0) & (u.nodes < r - delta)]
        outer = u.nodes[(u.nodes > r + delta) & (u.nodes < R)]
        far_brk = np.concatenate([[0.0, r - delta], geo0[geo0 < r - delta], inner,
                                  [r + delta, R], outer])
    far_brk = refine_breaks(far_brk[far_brk <= R], max(h, 1e-3))
    if r > 0:
        # drop the excluded window (r - delta, r + delta)
        b_lo = far_brk[far_brk <= r - delta + 1e-15 * r]
        b_hi = far_brk[far_brk >= r + delta - 1e-15 * r]
    else:
        b_lo, b_hi = np.array([]), far_brk

    def far(qq):
        tot = 0.0
        for brk in (b_lo, b_hi):
            if brk.size >= 2:
                x, w = panel_rule(brk, qq)
                tot += float(np.sum(w * (Ur - u(x)) * wf(x)))
        return tot

    f1 = far(q)
    f2 = far(max(q // 2 + 1, 3))
    tail = _radial_tail(u, r, s, Ur)
    return c * (near + f1 + tail), c * (abs(f1 - f2) + err_near)


def frac_laplacian_point(u: TraceFunction, x, s: float | None = None, *, q: int = 8,
                         tol: float | None = None, return_error: bool = False):
    """c_{n,s} P.V. int (u(x) - u(z)) |x - z|^{-n-2s} dz at one point or an array of points."""
    s = u.s if s is None else s
    _check_tail(u, s)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    vals = np.empty(xs.shape)
    errs = np.empty(xs.shape)
    for i, xi in enumerate(xs):
        if u.geometry == "line":
            vals[i], errs[i] = _line_point(u, float(xi), s, q)
        else:
            vals[i], errs[i] = _radial_point(u, abs(float(xi)), s, q)
    if tol is not None:
        bad = errs > tol * np.maximum(1.0, np.abs(vals))
        if np.any(bad):
            warnings.warn(f"split error estimate {errs.max():.3g} exceeds tolerance {tol:.3g}",
                          PrecisionWarning, stacklevel=2)
    if np.ndim(x) == 0:
        vals, errs = vals[0], errs[0]
    return (vals, errs) if return_error else vals


# ---------------------------------------------------------------- norms

def l1s_norm(u: TraceFunction, s: float | None = None, q: int = 8) -> float:
    """int |u| (1+|x|^2)^{-(n+2s)/2} dx, interior quadrature plus semi-analytic tail."""
    s = u.s if s is None else s
    _check_tail(u, s)
    n = u.n
    nu = (n + 2 * s) / 2
    brk = refine_breaks(np.concatenate([[u.lo, u.hi], u.nodes]), max(u.spacing_near(u.hi), 1e-3))
    x, w = panel_rule(brk[(brk >= u.lo) & (brk <= u.hi)], q)
    if u.geometry == "line":
        total = float(np.sum(w * np.abs(u(x)) * (1 + x * x) ** (-nu)))
        sides = [(u.hi, 1.0), (u.lo, -1.0)]
        wt = lambda t: (1 + t * t) ** (-nu)
    else:
        total = sphere_area(n) * float(np.sum(w * np.abs(u(x)) * x ** (n - 1) * (1 + x * x) ** (-nu)))
        sides = [(u.hi, 1.0)]
        wt = lambda t: sphere_area(n) * t ** (n - 1) * (1 + t * t) ** (-nu)
    tail = u.tail
    if isinstance(tail, ZeroTail):
        return total
    for start, sgn in sides:
        a0 = abs(start)
        if isinstance(tail, PeriodicTail):
            P = tail.period
            T1 = a0 + 1500 * P
            t, w = panel_rule(np.linspace(a0, T1, 12001), 8)
            total += float(np.sum(w * np.abs(tail(sgn * t)) * wt(t)))
            total += tail.mean(absolute=True) * sphere_area(n) * T1 ** (-2 * s) / (2 * s) \
                if u.geometry == "radial" else tail.mean(absolute=True) * T1 ** (-2 * s) / (2 * s)
        else:
            f = lambda t, sgn=sgn: np.abs(tail(sgn * t)) * wt(t)
            total += _halfline(f, a0, max(a0, 1.0), 2 * s - max(tail.growth, 0.0))
    return total


def _as_domain(u: TraceFunction, U):
    if u.geometry == "line":
        a, b = (u.lo, u.hi) if U is None else (float(U[0]), float(U[1]))
        if not a < b:
            raise ValueError("empty interval")
        return a, b
    R = u.hi if U is None else float(U if np.ndim(U) == 0 else U[-1])
    if R <= 0:
        raise ValueError("empty ball")
    return 0.0, R


def _hs_line_sq(u, a, b, s, q, levels):
    """c int_0^L t^{-1-2s} int_a^{b-t} (u(x+t)-u(x))^2 dx dt, inner range mapped onto [a, b-t]."""
    c = cns_constant(1, s)
    L = b - a
    h = min(u.spacing_near(0.5 * (a + b)), L / 16)
    tb = np.concatenate([geometric_breaks(min(4 * h, L), levels), np.linspace(min(4 * h, L), L, 65)])
    tb = refine_breaks(tb, max(h, L / 256))
    t, wt = panel_rule(tb, q)
    m = max(16, int(np.ceil(L / h)))
    xg, wg = panel_rule(np.linspace(0.0, 1.0, m + 1), 6)
    tot = 0.0
    for ti, wi in zip(t, wt):
        span = L - ti
        x = a + span * xg
        d = u(x + ti) - u(x)
        tot += wi * ti ** (-1 - 2 * s) * span * float(np.sum(wg * d * d))
    return c * tot


def _hs_radial_sq(u, R, s, q, levels):
    n = u.n
    c = cns_constant(n, s)
    h = min(u.spacing_near(0.5 * R), R / 16)
    rb = refine_breaks(np.concatenate([[0.0, R], u.nodes[(u.nodes > 0) & (u.nodes < R)]]), max(h, R / 256))
    r, wr = panel_rule(rb, 4)
    tot = 0.0
    for ri, wi in zip(r, wr):
        Ur = float(u(ri))
        inner = 0.0
        for lo, hi in ((0.0, ri), (ri, R)):
            L = hi - lo
            if L <= 0:
                continue
            brk = geometric_breaks(L, levels)
            tt, ww = panel_rule(refine_breaks(brk, max(h, L / 64)), q)
            rho = ri - tt if lo == 0.0 else ri + tt
            rho = np.clip(rho, 0.0, R)
            d = Ur - u(rho)
            # offsets below the float spacing of ri collapse rho onto ri (d = 0, kernel = inf)
            keep = rho != ri
            inner += float(np.sum(ww[keep] * d[keep] ** 2 * radial_weight(n, s, ri, rho[keep])))
        tot += wi * sphere_area(n) * ri ** (n - 1) * inner
    return 0.5 * c * tot


def hs_seminorm_sq(u: TraceFunction, U=None, s: float | None = None, q: int = 8) -> float:
    """(c_{n,s}/2) double integral over U x U of |u(x)-u(z)|^2 |x-z|^{-n-2s}."""
    s = u.s if s is None else s
    a, b = _as_domain(u, U)
    vals = []
    for levels in (30, 45):
        if u.geometry == "line":
            vals.append(_hs_line_sq(u, a, b, s, q, levels))
        else:
            vals.append(_hs_radial_sq(u, b, s, q, levels))
    v1, v2 = vals
    if not np.isfinite(v2) or abs(v2 - v1) > 1e-6 * max(abs(v2), 1e-300) + 1e-14:
        warnings.warn("seminorm double integral does not settle under refinement", PrecisionWarning)
        if abs(v2 - v1) > 1e-3 * max(abs(v2), 1e-300):
            return math.inf
    return v2


def hs_seminorm(u: TraceFunction, U=None, s: float | None = None, q: int = 8) -> float:
    """[u]_{H^s(U)}, the square root of hs_seminorm_sq."""
    return math.sqrt(hs_seminorm_sq(u, U, s, q))


def killing_density(u: TraceFunction, x, U=None, s: float | None = None) -> np.ndarray:
    """c_{n,s} int_{U^c} |x - z|^{-n-2s} dz for x inside U."""
    s = u.s if s is None else s
    a, b = _as_domain(u, U)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if u.geometry == "line":
        return cns_constant(1, s) * ((x - a) ** (-2 * s) + (b - x) ** (-2 * s)) / (2 * s)
    n = u.n
    out = np.empty_like(x)
    for i, r in enumerate(x):
        out[i] = _halfline(lambda rho: radial_weight(n, s, r, rho), b, max(b - r, 1e-6), 2 * s)
    return cns_constant(n, s) * out


def _exterior_cross(u: TraceFunction, a: float, b: float, s: float, q: int) -> float:
    """c int_U dx int_{U^c} |u(x) - u(z)|^2 |x-z|^{-n-2s} dz."""
    n = u.n
    c = cns_constant(n, s)
    L = b - a
    h = u.spacing_near(0.5 * (a + b))
    if u.geometry == "line":
        mid = 0.5 * (a + b)
        half = 0.5 * L
        g = geometric_breaks(half, 40)
        brk = refine_breaks(np.concatenate([a + g, b - g, [mid]]), max(h, L / 256))
        x, w = panel_rule(brk, q)
        ux = u(x)
        if isinstance(u.tail, ZeroTail):
            dens = ((x - a) ** (-2 * s) + (b - x) ** (-2 * s)) / (2 * s)
            return c * float(np.sum(w * ux * ux * dens))
        tot = 0.0
        for xi, wi, ui in zip(x, w, ux):
            fr = lambda z: (ui - u.tail(z)) ** 2 * (z - xi) ** (-1 - 2 * s)
            fl = lambda z: (ui - u.tail(-z)) ** 2 * (z + xi) ** (-1 - 2 * s)
            d = 2 * s - 2 * max(u.tail.growth, 0.0)
            tot += wi * (_halfline(fr, b, b - xi, d) + _halfline(fl, -a, xi - a, d))
        return c * tot
    g = geometric_breaks(b, 40)
    brk = refine_breaks(np.concatenate([b - g, [0.0]]), max(h, b / 256))
    x, w = panel_rule(brk[brk >= 0], q)
    tot = 0.0
    for xi, wi in zip(x, w):
        ui = float(u(xi))
        fr = lambda rho: (ui - u.tail(rho)) ** 2 * radial_weight(n, s, xi, rho)
        d = 2 * s - 2 * max(u.tail.growth, 0.0)
        tot += wi * sphere_area(n) * xi ** (n - 1) * _halfline(fr, b, b - xi, d)
    return c * tot


def energy(u: TraceFunction, f: Nonlinearity, omega=None, s: float | None = None,
           q: int = 8) -> float:
    """(c/4) int over R^{2n} minus (omega^c)^2 of |u(x)-u(z)|^2 |x-z|^{-n-2s}, minus int_omega F(u)."""
    s = u.s if s is None else s
    _check_tail(u, s)
    a, b = _as_domain(u, omega)
    quad_part = 0.5 * hs_seminorm_sq(u, omega, s, q) + 0.5 * _exterior_cross(u, a, b, s, q)
    brk = refine_breaks(np.concatenate([[a, b], u.nodes[(u.nodes > a) & (u.nodes < b)]]),
                        max(u.spacing_near(0.5 * (a + b)), (b - a) / 512))
    x, w = panel_rule(brk, q)
    Fu = f.F(u(x))
    if u.geometry == "line":
        pot = float(np.sum(w * Fu))
    else:
        pot = sphere_area(u.n) * float(np.sum(w * Fu * x ** (u.n - 1)))
    return quad_part - pot
