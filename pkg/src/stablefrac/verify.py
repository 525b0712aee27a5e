"""Randomized property harness for the cube interpolation inequalities and the added-variable lemmas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .fracops import (Nonlinearity, TraceFunction, ZeroTail, _halfline, l1s_norm, sphere_area)
from .extension import ds_constant
from .quadrature import panel_rule, refine_breaks, tensor_rule

DEFAULT_SEED = 20240611
BUDGET = 1e-6
EPS_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass(frozen=True)
class CheckRow:
    check: str
    instance: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + BUDGET * max(abs(self.rhs), 1e-300)


@dataclass
class VerifyReport:
    rows: list
    seed: int
    constants: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda r: (r.check, r.instance))

    def failures(self) -> list:
        return [r for r in self.rows if not r.passed]


# ---------------------------------------------------------------- cube functions

@dataclass(frozen=True)
class CubeFunction:
    """w(x) = c0 + sum_j c_j cos(2 pi k_j . x + phi_j) on the unit cube (0,1)^n."""
    n: int
    waves: np.ndarray = field(default_factory=lambda: np.zeros((0, 1), dtype=int))
    coefs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    phases: np.ndarray = field(default_factory=lambda: np.zeros(0))
    constant: float = 0.0

    @staticmethod
    def random(n: int, rng: np.random.Generator, max_terms: int = 4, max_freq: int = 3) -> "CubeFunction":
        m = int(rng.integers(1, max_terms + 1))
        k = rng.integers(-max_freq, max_freq + 1, size=(m, n))
        for j in range(m):
            while not np.any(k[j]):
                k[j] = rng.integers(-max_freq, max_freq + 1, size=n)
        return CubeFunction(n, k, rng.normal(size=m), rng.uniform(0, 2 * math.pi, size=m),
                            float(rng.normal(scale=0.5)))

    @staticmethod
    def const(n: int, c: float) -> "CubeFunction":
        return CubeFunction(n, np.zeros((0, n), dtype=int), np.zeros(0), np.zeros(0), float(c))

    @property
    def max_freq(self) -> int:
        return int(np.max(np.abs(self.waves))) if self.waves.size else 0

    def _phase(self, x):
        return 2 * math.pi * (x @ self.waves.T) + self.phases

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.constant + np.cos(self._phase(x)) @ self.coefs

    def gradient(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        k = 2 * math.pi * self.waves
        return -(np.sin(self._phase(x)) * self.coefs) @ k

    def hessian(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        k = 2 * math.pi * self.waves
        c = np.cos(self._phase(x)) * self.coefs
        return -np.einsum("pj,ja,jb->pab", c, k, k)

    def rule(self, q: int = 6):
        return tensor_rule(self.n, max(8, 4 * self.max_freq), q)


@dataclass(frozen=True)
class CubeIntegrals:
    grad_p: float
    grad_hess: float
    abs_p: float
    abs_1: float


def cube_integrals(w: CubeFunction, p: float, hessian: bool = True) -> CubeIntegrals:
    x, wt = w.rule()
    g = np.linalg.norm(w.gradient(x), axis=1)
    v = np.abs(w(x))
    gh = np.nan
    if hessian:
        H = np.linalg.norm(w.hessian(x), axis=(1, 2))
        gp1 = g ** (p - 1) if p != 1 else np.ones_like(g)
        gh = float(wt @ (gp1 * H))
    return CubeIntegrals(float(wt @ g ** p), gh, float(wt @ v ** p), float(wt @ v))


def interp_gradient_check(w: CubeFunction, p: float, eps: float) -> tuple[float, float]:
    """(lhs, rhs) of int |grad w|^p <= n^{p/2+1} [p eps int |grad w|^{p-1}|D^2 w| + (18/eps)^p int |w|^p]."""
    if not (0 < eps < 1 and p >= 1):
        raise ValueError("need eps in (0, 1) and p >= 1")
    I = cube_integrals(w, p)
    c = w.n ** (p / 2 + 1)
    return I.grad_p, c * p * eps * I.grad_hess + c * (18 / eps) ** p * I.abs_p


def nash_terms(w: CubeFunction, p: float, eps: float,
               integrals: CubeIntegrals | None = None) -> tuple[float, float]:
    """(int |w|^p, eps^p int |grad w|^p + eps^{-n(p-1)} (int |w|)^p)."""
    I = integrals or cube_integrals(w, p, hessian=False)
    return I.abs_p, eps ** p * I.grad_p + eps ** (-w.n * (p - 1)) * I.abs_1 ** p


def calibrate_nash(n: int, p: float, seed: int, count: int = 40) -> float:
    """Largest ratio lhs/rhs_shape over a calibration family (constant 1 plus random waves)."""
    rng = np.random.default_rng([seed, n, int(p), 1])
    fam = [CubeFunction.const(n, 1.0)] + [CubeFunction.random(n, rng) for _ in range(count)]
    top = 0.0
    for w in fam:
        I = cube_integrals(w, p, hessian=False)
        for e in EPS_GRID:
            lhs, shape = nash_terms(w, p, e, I)
            if shape > 0:
                top = max(top, lhs / shape)
    return top


def interp_nash_check(w: CubeFunction, p: float, eps: float, C: float) -> tuple[float, float]:
    lhs, shape = nash_terms(w, p, eps)
    return lhs, C * shape


# ---------------------------------------------------------------- added variable

def lift(values, extra: int) -> np.ndarray:
    """Replicate grid values of u along a new trailing axis (w(x', x_m) = u(x'))."""
    v = np.asarray(values)
    return np.repeat(v[..., None], extra, axis=-1)


def lift_constant(m: int, s: float) -> float:
    """||w||_{L^1_s(R^m)} / ||u||_{L^1_s(R^{m-1})}, integrating out x_m exactly."""
    b = (m + 2 * s) / 2
    return math.sqrt(math.pi) * math.exp(special.gammaln(b - 0.5) - special.gammaln(b))


def lifted_l1s_norm(u: TraceFunction, s: float | None = None, q: int = 8) -> float:
    """||w||_{L^1_s(R^{n+1})} for w(x', x_m) = u(x') by iterated quadrature in (x', x_m)."""
    s = u.s if s is None else s
    n = u.n
    b = (n + 1 + 2 * s) / 2

    def inner(r):
        r = np.atleast_1d(r)
        A = 1 + r * r
        out = np.empty_like(r)
        for i, a in enumerate(A):
            out[i] = 2 * _halfline(lambda t, a=a: (a + t * t) ** (-b), 0.0, math.sqrt(a), 2 * b - 1, q)
        return out

    brk = refine_breaks(np.concatenate([[u.lo, u.hi], u.nodes]), max(u.spacing_near(u.hi), 1e-3))
    x, w = panel_rule(brk[(brk >= u.lo) & (brk <= u.hi)], q)
    meas = (lambda t: sphere_area(n) * t ** (n - 1)) if u.geometry == "radial" else (lambda t: 1.0)
    total = float(np.sum(w * np.abs(u(x)) * inner(x) * meas(x)))
    if not isinstance(u.tail, ZeroTail):
        sides = [1.0] if u.geometry == "radial" else [1.0, -1.0]
        for sgn in sides:
            start = abs(u.hi if sgn > 0 else u.lo)
            f = lambda t, sgn=sgn: np.abs(u.tail(sgn * t)) * inner(t) * meas(t)
            total += _halfline(f, start, max(start, 1.0), 2 * s - max(u.tail.growth, 0.0), q, levels=60)
    return total


def add_variable_l1s_check(u: TraceFunction, C: float, s: float | None = None) -> tuple[float, float]:
    """(||w||_{L^1_s(R^m)}, C ||u||_{L^1_s(R^{m-1})})."""
    return lifted_l1s_norm(u, s), C * l1s_norm(u, s)


@dataclass(frozen=True)
class LiftProbe:
    """xi(x, t, y) = B(|Z - c|/rho) (1 + amp cos(k . Z + phase)), B(r) = (1 - r^2)_+^3, Z = (x, t, y)."""
    center: tuple
    rho: float
    amp: float
    k: tuple
    phase: float

    def parts(self, x, t, y):
        c = self.center
        Z = np.stack([x - c[0], t - c[1], y - c[2]], axis=-1)
        r2 = np.sum(Z * Z, axis=-1) / self.rho ** 2
        base = np.where(r2 < 1, (1 - r2) ** 3, 0.0)
        dbase = np.where(r2 < 1, -6 * (1 - r2) ** 2 / self.rho ** 2, 0.0)[..., None] * Z
        k = np.asarray(self.k, float)
        arg = np.stack([x, t, y], axis=-1) @ k + self.phase
        mod = 1 + self.amp * np.cos(arg)
        dmod = -self.amp * np.sin(arg)[..., None] * k
        val = base * mod
        grad = dbase * mod[..., None] + base[..., None] * dmod
        return val, grad


def random_lift_probes(count: int, seed: int) -> list:
    rng = np.random.default_rng([seed, 72])
    out = []
    for _ in range(count):
        rho = float(rng.uniform(0.25, 0.6))
        cx, ct = rng.uniform(-1, 1, size=2) * (0.95 - rho) / math.sqrt(2)
        cy = float(rng.choice([0.0, rng.uniform(-0.5, 0.5) * rho]))
        out.append(LiftProbe((float(cx), float(ct), cy), rho, float(rng.uniform(0, 0.8)),
                             tuple(rng.uniform(-4, 4, size=3)), float(rng.uniform(0, 2 * math.pi))))
    return out


@dataclass(frozen=True)
class LiftStability:
    Q_lifted: float
    Q_averaged: float
    energy_lifted: float
    energy_averaged: float
    scale: float


def add_variable_stability_check(u: TraceFunction, f: Nonlinearity, probe: LiftProbe,
                                 s: float = 0.5, panels: int = 8, q: int = 6) -> LiftStability:
    """Q_m(xi) for the lifted solution w(x, t) = u(x), plus the averaged probe
    xibar(x, y) = (int xi^2 dt)^{1/2} evaluated in the original dimension."""
    if u.geometry != "line":
        raise ValueError("lifting is implemented from a line trace (n = 1 to m = 2)")
    cx, ct, cy = probe.center
    rho = probe.rho
    if math.hypot(cx, ct) + rho > 1 + 1e-12:
        raise ValueError("probe support leaves the unit ball in the lifted variables")
    a = 1 - 2 * s
    ylo = max(0.0, cy - rho)
    X, wx = panel_rule(np.linspace(cx - rho, cx + rho, panels + 1), q)
    T, wt = panel_rule(np.linspace(ct - rho, ct + rho, panels + 1), q)
    Y, wy = panel_rule(np.linspace(ylo, cy + rho, panels + 1), q)
    XX, TT, YY = np.meshgrid(X, T, Y, indexing="ij")
    val, grad = probe.parts(XX, TT, YY)
    wyy = Y ** a if a != 0 else np.ones_like(Y)
    W3 = wx[:, None, None] * wt[None, :, None] * (wy * wyy)[None, None, :]
    energy = float(np.sum(W3 * np.sum(grad * grad, axis=-1)))
    # trace at y = 0
    v0, _ = probe.parts(XX[:, :, 0], TT[:, :, 0], np.zeros_like(XX[:, :, 0]))
    fp = np.asarray(f.fprime(u(X)), float) * np.ones_like(X)
    pot = float(np.sum(wx[:, None] * wt[None, :] * fp[:, None] * v0 * v0))
    Q3 = ds_constant(s) * energy - pot
    # averaged probe and its gradient in (x, y)
    m2 = np.einsum("t,xty->xy", wt, val * val)
    bar = np.sqrt(m2)
    cross_x = np.einsum("t,xty->xy", wt, val * grad[..., 0])
    cross_y = np.einsum("t,xty->xy", wt, val * grad[..., 2])
    safe = np.where(bar > 0, bar, 1.0)
    gx = np.where(bar > 0, cross_x / safe, 0.0)
    gy = np.where(bar > 0, cross_y / safe, 0.0)
    W2 = wx[:, None] * (wy * wyy)[None, :]
    energy_bar = float(np.sum(W2 * (gx * gx + gy * gy)))
    bar0 = np.sum(wt[None, :] * v0 * v0, axis=1)
    pot_bar = float(np.sum(wx * fp * bar0))
    Q2 = ds_constant(s) * energy_bar - pot_bar
    return LiftStability(Q3, Q2, energy, energy_bar, ds_constant(s) * energy + abs(pot))


# ---------------------------------------------------------------- suite

def _branch_solutions(resolution: int = 256, keep: int = 4):
    from .gelfand import ContinuationConfig, minimal_branch
    from .fracops import exponential
    f = exponential()
    br = minimal_branch(f, ContinuationConfig(resolution=resolution), n=1)
    pts = [p for p in br.minimal() if p.lam > 0 and p.mu_min > 0]
    step = max(1, len(pts) // keep)
    return f, pts[::step][:keep]


def run_suite(seed: int = DEFAULT_SEED, instances: int = 100, probes: int = 20,
              calibration: int = 40, lift_points: int = 4) -> VerifyReport:
    """All interpolation and added-variable checks; deterministic for a fixed seed."""
    rows = []
    constants = {}
    for n in (1, 2, 3):
        for p in (1, 2, 3):
            rng = np.random.default_rng([seed, n, p])
            for i in range(instances):
                w = CubeFunction.random(n, rng)
                eps = float(rng.choice(EPS_GRID))
                lhs, rhs = interp_gradient_check(w, p, eps)
                rows.append(CheckRow("gradient_interpolation", f"n{n}-p{p}-{i:03d}", lhs, rhs))
            C = 1.2 * calibrate_nash(n, p, seed, calibration)
            constants[f"nash_C_n{n}_p{p}"] = C
            held = np.random.default_rng([seed, n, p, 2])
            for i in range(instances):
                w = CubeFunction.random(n, held)
                eps = float(held.choice(EPS_GRID))
                lhs, rhs = interp_nash_check(w, p, eps, C)
                rows.append(CheckRow("nash_interpolation", f"n{n}-p{p}-{i:03d}", lhs, rhs))
    f, pts = _branch_solutions(keep=lift_points)
    C_lift = lift_constant(2, 0.5)
    constants["lift_C_m2"] = C_lift
    battery = random_lift_probes(probes, seed)
    for j, pt in enumerate(pts):
        lhs, rhs = add_variable_l1s_check(pt.solution, C_lift * (1 + 1e-6), 0.5)
        rows.append(CheckRow("lift_l1s", f"pt{j:02d}", lhs, rhs))
        fl = f.scaled(pt.lam)
        for i, pr in enumerate(battery):
            r = add_variable_stability_check(pt.solution, fl, pr)
            tol = BUDGET * r.scale
            rows.append(CheckRow("lift_stability", f"pt{j:02d}-xi{i:02d}", -r.Q_lifted, tol))
            rows.append(CheckRow("lift_cauchy_schwarz", f"pt{j:02d}-xi{i:02d}",
                                 r.energy_averaged, r.energy_lifted))
    return VerifyReport(rows, seed, constants)
