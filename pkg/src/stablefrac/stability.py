"""Stability quadratic forms, probe spaces, and the estimate pipeline built on extended fields."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import splu

from .balls import BallRule, ball_rule, lens_limit, lens_volume, trace_rule
from .extension import ExtensionField, ds_constant, geometric_quantity_from
from .fracops import (Nonlinearity, TraceFunction, ZeroTail, _exterior_cross, hs_seminorm,
                      hs_seminorm_sq, l1s_norm, sphere_area)
from .quadrature import panel_rule, refine_breaks

TOL = 1e-6
ORIGIN_EPS = 2.0 ** -6
GEOM_RTOL, GEOM_ATOL = 1e-6, 1e-8


class SupportError(ValueError):
    pass


class RegimeError(ValueError):
    pass


class FlagError(ValueError):
    pass


class GeometryError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


class EigenError(RuntimeError):
    pass


class CertificateError(RuntimeError):
    pass


class SingularityWarning(UserWarning):
    pass


# ---------------------------------------------------------------- cutoffs

@dataclass(frozen=True)
class RadialCutoff:
    """Piecewise linear profile phi(|X - center|), zero beyond the last knot."""
    knots: tuple
    values: tuple
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        k = np.asarray(self.knots, float)
        if k[0] != 0.0 or np.any(np.diff(k) <= 0) or self.values[-1] != 0.0:
            raise ValueError("knots must start at 0, increase, and end with value 0")

    @staticmethod
    def standard(inner: float = 0.5, outer: float = 0.75, center=(0.0, 0.0)) -> "RadialCutoff":
        return RadialCutoff((0.0, inner, outer), (1.0, 1.0, 0.0), tuple(center))

    @property
    def radius(self) -> float:
        return float(self.knots[-1])

    @property
    def breaks(self) -> tuple:
        return tuple(self.knots)

    def __call__(self, d):
        return np.interp(d, self.knots, self.values, right=0.0)

    def derivative(self, d):
        k = np.asarray(self.knots, float)
        slopes = np.diff(self.values) / np.diff(k)
        i = np.clip(np.searchsorted(k, d, side="right") - 1, 0, slopes.size - 1)
        return np.where(np.asarray(d) < k[-1], slopes[i], 0.0)


@dataclass(frozen=True)
class RegularizedPower:
    """eps^{-alpha/2} on B_eps, r^{-alpha/2} zeta(r) outside, zeta a radial cutoff at the origin."""
    alpha: float
    eps: float = ORIGIN_EPS
    zeta: RadialCutoff = field(default_factory=RadialCutoff.standard)
    center: tuple = (0.0, 0.0)

    @property
    def radius(self) -> float:
        return self.zeta.radius

    @property
    def breaks(self) -> tuple:
        return tuple(sorted({self.eps, *self.zeta.knots}))

    def __call__(self, d):
        d = np.asarray(d, float)
        return np.maximum(d, self.eps) ** (-self.alpha / 2) * self.zeta(d)

    def derivative(self, d):
        d = np.asarray(d, float)
        g = np.maximum(d, self.eps) ** (-self.alpha / 2)
        dg = np.where(d > self.eps, -self.alpha / 2 * np.maximum(d, self.eps) ** (-self.alpha / 2 - 1), 0.0)
        return dg * self.zeta(d) + g * self.zeta.derivative(d)


def random_cutoffs(count: int = 20, n: int = 1, seed: int = 0, reach: float = 0.9,
                   y_spread: float = 0.3) -> list:
    """Seeded family of Lipschitz cutoffs supported in the half ball of radius ``reach``."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        y0 = 0.0 if k % 2 == 0 else float(rng.uniform(0.0, y_spread))
        if n == 1:
            x0 = float(rng.uniform(-0.4, 0.4))
        else:
            x0 = 0.0 if k % 4 < 2 else float(rng.uniform(0.0, 0.4))
        room = reach - math.hypot(x0, y0)
        rad = float(rng.uniform(0.4, 0.95)) * room
        t1, t2 = sorted(rng.uniform(0.1, 0.9, size=2) * rad)
        if t2 - t1 < 1e-3 * rad:
            t2 = t1 + 0.05 * rad
        mid = float(rng.uniform(0.0, 1.0))
        out.append(RadialCutoff((0.0, t1, t2, rad), (1.0, 1.0, mid, 0.0), (x0, y0)))
    return out


# ---------------------------------------------------------------- test functions

@dataclass
class TestFunction:
    """A perturbation xi, either of the extended variables or of the trace only.

    Extended functions are radial in x' and given by callables of (px, py) = (|x'|, y);
    the support is the half ball of ``radius`` about ``center``.
    """
    __test__ = False

    kind: str
    n: int
    geometry: str
    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    func: Callable | None = None
    grad: Callable | None = None
    trace: TraceFunction | None = None
    breaks: tuple = ()
    values: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("extended", "trace"):
            raise ValueError(f"unknown test-function kind {self.kind!r}")
        if self.kind == "extended" and (self.func is None or self.grad is None):
            raise ValueError("extended test functions need a value and a gradient")
        if self.kind == "trace" and self.trace is None:
            raise ValueError("trace test functions need a TraceFunction")

    def __call__(self, px, py=0.0):
        if self.kind == "trace":
            return self.trace(px)
        return self.func(np.asarray(px, float), np.asarray(py, float))

    def rule(self, **kw) -> BallRule:
        return ball_rule(self.n, self.center, self.radius, self.breaks, **kw)

    def footprint(self) -> tuple:
        """(lo, hi) of the trace support along e1."""
        if self.kind == "trace":
            nz = np.nonzero(self.trace.values)[0]
            if nz.size == 0:
                return (0.0, 0.0)
            x = self.trace.nodes
            lo, hi = x[max(nz[0] - 1, 0)], x[min(nz[-1] + 1, x.size - 1)]
            return (float(lo), float(hi))
        x0, y0 = self.center
        if y0 >= self.radius:
            return (x0, x0)
        rt = math.sqrt(self.radius ** 2 - y0 ** 2)
        return (x0 - rt, x0 + rt)

    def weighted_energy(self, s: float, **kw) -> float:
        """int y^a |grad xi|^2 over the support."""
        a = 1 - 2 * s
        r = self.rule(**kw)
        gr, gy = self.grad(r.px, r.py)
        wy = r.py ** a if a != 0 else 1.0
        return r.integrate(wy * (gr * gr + gy * gy))

    def support_vanishes(self, samples: int = 64) -> bool:
        """Values vanish on the boundary sphere of the declared support."""
        if self.kind == "trace":
            return not isinstance(self.trace.tail, ZeroTail) is False
        th = np.linspace(0, math.pi / 2, samples)
        x0, y0 = self.center
        px = np.abs(x0 + self.radius * np.sin(th))
        py = y0 + self.radius * np.cos(th)
        return bool(np.all(np.abs(self(px, py)) <= 1e-12 * max(1.0, np.max(np.abs(self(px * 0.5, py * 0.5))))))


def _check_support(xi: TestFunction, omega: float) -> None:
    lo, hi = xi.footprint()
    if xi.geometry == "radial":
        bad = max(abs(lo), abs(hi)) > omega * (1 + 1e-12)
    else:
        bad = lo < -omega * (1 + 1e-12) or hi > omega * (1 + 1e-12)
    if bad:
        raise SupportError(f"trace support [{lo:.4g}, {hi:.4g}] leaks outside the domain")
    if xi.kind == "trace" and not isinstance(xi.trace.tail, ZeroTail):
        raise SupportError("trace test functions must vanish outside the domain")


def stability_form(u: TraceFunction, f: Nonlinearity, xi: TestFunction, s: float | None = None,
                   omega: float = 1.0, **rule_kw) -> float:
    """Q(xi) = d_s int y^a |grad xi|^2 - int_Omega f'(u) xi(.,0)^2.

    Trace test functions are extended implicitly: their extension energy equals the full
    H^s double integral, evaluated as the seminorm on Omega plus the exterior interaction.
    """
    s = u.s if s is None else s
    _check_support(xi, omega)
    if xi.kind == "trace":
        t = xi.trace
        a, b = t.lo, t.hi
        kin = hs_seminorm_sq(t, (a, b) if t.geometry == "line" else b, s) + \
            _exterior_cross(t, a, b, s, 8)
        brk = refine_breaks(t.nodes, max(np.min(np.diff(t.nodes)), (b - a) / 512))
        x, w = panel_rule(brk, 8)
        xv = t(x)
        if t.geometry == "radial":
            w = w * sphere_area(t.n) * x ** (t.n - 1)
        pot = float(np.sum(w * f.fprime(u(x)) * xv * xv))
        return float(kin - pot)
    kin = ds_constant(s) * xi.weighted_energy(s, **rule_kw)
    tr = trace_rule(xi.n, xi.center, xi.radius, xi.breaks)
    xv = xi(tr.px, 0.0 * tr.px)
    pot = tr.integrate(f.fprime(u(tr.px)) * xv * xv)
    return float(kin - pot)


# ---------------------------------------------------------------- reports and probes

@dataclass
class StabilityReport:
    quad_form_value: float
    rayleigh_min: float
    eigenvector: TestFunction
    verdict: str
    tol: float
    marginal: bool
    pairing: str
    residual: float = 0.0

    @property
    def stable(self) -> bool:
        return self.verdict == "stable"

    def as_dict(self) -> dict:
        return {"quad_form_value": self.quad_form_value, "rayleigh_min": self.rayleigh_min,
                "verdict": self.verdict, "marginal": self.marginal, "tol": self.tol,
                "pairing": self.pairing, "residual": self.residual}


def _verdict(mu: float, tol: float) -> tuple[str, bool]:
    return ("stable" if mu >= -tol else "unstable"), abs(mu) <= tol


def _use_fprime(pairing: str, weights) -> bool:
    if pairing not in ("auto", "fprime", "l2"):
        raise ValueError(f"unknown pairing {pairing!r}")
    pos = bool(np.all(np.asarray(weights) > 0))
    if pairing == "fprime" and not pos:
        raise ValueError("f'(u) pairing needs f'(u) > 0")
    return pairing == "fprime" or (pairing == "auto" and pos)


class OperatorProbe:
    """The trace finite-difference space of a discrete operator: J = A - diag(f'(U))."""

    def __init__(self, op, U=None):
        self.op = op
        self.U = None if U is None else np.asarray(U, float)

    def report(self, u, f: Nonlinearity, s: float, pairing: str = "auto") -> StabilityReport:
        op = self.op
        U = self.U if self.U is not None else np.asarray(u(op.nodes), float)
        fp = np.asarray(f.fprime(U), float) * np.ones_like(U)
        use_f = _use_fprime(pairing, fp)
        A = op.matrix
        try:
            if op.geometry == "line":
                K = 0.5 * (A + A.T) - np.diag(fp)
                B = np.diag(fp) if use_f else None
                mus, vecs = linalg.eigh(K, B, subset_by_index=[0, 0])
                mu, vec = float(mus[0]), vecs[:, 0]
            else:
                J = A - np.diag(fp)
                M = (J / fp[:, None]) if use_f else J
                mus, vecs = linalg.eig(M)
                k = int(np.argmin(mus.real))
                mu, vec = float(mus[k].real), np.real(vecs[:, k])
        except (linalg.LinAlgError, ValueError) as exc:
            raise EigenError(f"eigensolver failed: {exc}") from exc
        J = A - np.diag(fp)
        Bv = fp * vec if use_f else vec
        norm = math.sqrt(abs(float(np.sum(op.weights * Bv * vec)))) or 1.0
        vec = vec / norm
        if vec[np.argmax(np.abs(vec))] < 0:
            vec = -vec
        Bv = fp * vec if use_f else vec
        Jv = J @ vec
        res = float(np.linalg.norm(Jv - mu * Bv) /
                    max(np.linalg.norm(J, 1) * np.linalg.norm(vec), 1e-300))
        if res > 1e-6:
            raise EigenError(f"eigenpair residual {res:.3g} too large")
        Q = float(np.sum(op.weights * vec * Jv))
        tol = TOL * (1.0 if use_f else max(1.0, float(np.max(np.abs(fp)))))
        verdict, marginal = _verdict(mu, tol)
        xi = TestFunction("trace", op.n, op.geometry, trace=op.trace(vec), values=vec)
        return StabilityReport(Q, mu, xi, verdict, tol, marginal,
                               "fprime" if use_f else "l2", res)


class LogPolarProbe:
    """Extended finite elements on the half annulus eps < |X| < 1, radial in x'.

    Coordinates are tau = log|X| and the angle theta from the y axis; the unknown is
    eta = |X|^{(n-2s)/2} xi, which makes the energy translation invariant in tau for
    scale-invariant problems.  Q1 elements, Dirichlet at both ends of the annulus; the
    interior unknowns are eliminated exactly (Schur complement onto the trace).
    """

    def __init__(self, n: int, eps: float = 1e-10, tau_cells: int = 200, theta_cells: int = 32):
        if not 0 < eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        self.n = int(n)
        self.eps = float(eps)
        self.tau = np.linspace(math.log(eps), 0.0, int(tau_cells) + 1)
        self.theta = np.linspace(0.0, math.pi / 2, int(theta_cells) + 1)

    def _stiffness(self, s: float):
        n = self.n
        a = 1 - 2 * s
        beta = (n - 2 * s) / 2
        Nt, Nh = self.tau.size, self.theta.size
        g, gw = np.polynomial.legendre.leggauss(3)
        g, gw = (g + 1) / 2, gw / 2
        dt = np.diff(self.tau)
        dh = np.diff(self.theta)
        S = sphere_area(n) if n > 1 else 2.0
        rows, cols, vals = [], [], []
        # local basis on the unit square: corners (0,0),(1,0),(0,1),(1,1)
        corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
        for p, gp in zip(g, gw):
            for q_, gq in zip(g, gw):
                phi = np.array([(1 - p if cx == 0 else p) * (1 - q_ if cy == 0 else q_) for cx, cy in corners])
                dp = np.array([(-1 if cx == 0 else 1) * (1 - q_ if cy == 0 else q_) for cx, cy in corners])
                dq = np.array([(1 - p if cx == 0 else p) * (-1 if cy == 0 else 1) for cx, cy in corners])
                th = self.theta[:-1] + q_ * dh
                wth = S * np.sin(th) ** (n - 1) * np.cos(th) ** a
                # element arrays: (tau cells, theta cells)
                W = gp * gq * dt[:, None] * dh[None, :] * wth[None, :]
                for i, (ci, cj) in enumerate(corners):
                    for j, (di, dj) in enumerate(corners):
                        gi = dp[i] / dt[:, None] - beta * phi[i]
                        gj = dp[j] / dt[:, None] - beta * phi[j]
                        val = W * (gi * gj + dq[i] * dq[j] / dh[None, :] ** 2)
                        I = (np.arange(Nt - 1)[:, None] + ci) * Nh + np.arange(Nh - 1)[None, :] + cj
                        Jx = (np.arange(Nt - 1)[:, None] + di) * Nh + np.arange(Nh - 1)[None, :] + dj
                        rows.append(I.ravel())
                        cols.append(Jx.ravel())
                        vals.append(val.ravel())
        N = Nt * Nh
        K = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(N, N))
        return K

    def _trace_mass(self, weight):
        """Tridiagonal matrix of int weight(tau) phi_i phi_j dtau on the tau nodes."""
        g, gw = np.polynomial.legendre.leggauss(4)
        g, gw = (g + 1) / 2, gw / 2
        t = self.tau
        M = np.zeros((t.size, t.size))
        for p, wp in zip(g, gw):
            x = t[:-1] + p * np.diff(t)
            w = wp * np.diff(t) * weight(x)
            b0, b1 = 1 - p, p
            idx = np.arange(t.size - 1)
            M[idx, idx] += w * b0 * b0
            M[idx + 1, idx + 1] += w * b1 * b1
            M[idx, idx + 1] += w * b0 * b1
            M[idx + 1, idx] += w * b0 * b1
        return M

    def report(self, u: TraceFunction, f: Nonlinearity, s: float, pairing: str = "auto") -> StabilityReport:
        n = self.n
        S = sphere_area(n) if n > 1 else 2.0
        K = ds_constant(s) * self._stiffness(s)
        Nt, Nh = self.tau.size, self.theta.size
        mf = lambda t: S * np.asarray(f.fprime(u(np.exp(t))), float) * np.exp(2 * s * t)
        m2 = lambda t: S * np.exp(2 * s * t)
        use_f = _use_fprime(pairing, mf(self.tau))
        Mf = self._trace_mass(mf)[1:-1, 1:-1]
        Mp = Mf if use_f else self._trace_mass(m2)[1:-1, 1:-1]
        free = np.zeros((Nt, Nh), dtype=bool)
        free[1:-1, :] = True
        trace = np.zeros((Nt, Nh), dtype=bool)
        trace[1:-1, -1] = True
        interior = free & ~trace
        it, ii = np.flatnonzero(trace.ravel()), np.flatnonzero(interior.ravel())
        K = K.tocsc()
        Kii = K[ii][:, ii]
        Kit = K[ii][:, it].toarray()
        Ktt = K[it][:, it].toarray()
        lu = splu(Kii.tocsc())
        X = lu.solve(Kit)
        Sch = Ktt - Kit.T @ X
        Sch = 0.5 * (Sch + Sch.T)
        try:
            mus, vecs = linalg.eigh(Sch - Mf, Mp, subset_by_index=[0, 0])
        except (linalg.LinAlgError, ValueError) as exc:
            raise EigenError(f"eigensolver failed: {exc}") from exc
        mu, xt = float(mus[0]), vecs[:, 0]
        if xt[np.argmax(np.abs(xt))] < 0:
            xt = -xt
        res = float(np.linalg.norm((Sch - Mf) @ xt - mu * (Mp @ xt)) /
                    max(np.linalg.norm(Sch - Mf, 1) * np.linalg.norm(xt), 1e-300))
        eta = np.zeros(Nt * Nh)
        eta[it] = xt
        eta[ii] = -X @ xt
        Q = float(xt @ ((Sch - Mf) @ xt))
        tol = TOL
        verdict, marginal = _verdict(mu, tol)
        xi = self._test_function(eta.reshape(Nt, Nh), s)
        return StabilityReport(Q, mu, xi, verdict, tol, marginal, "fprime" if use_f else "l2", res)

    def _test_function(self, eta, s) -> TestFunction:
        tau, theta = self.tau, self.theta
        beta = (self.n - 2 * s) / 2

        def locate(px, py):
            R = np.hypot(px, py)
            t = np.log(np.maximum(R, 1e-300))
            h = np.arctan2(np.abs(px), py)
            i = np.clip(np.searchsorted(tau, t) - 1, 0, tau.size - 2)
            j = np.clip(np.searchsorted(theta, h) - 1, 0, theta.size - 2)
            p = (t - tau[i]) / (tau[i + 1] - tau[i])
            q = (h - theta[j]) / (theta[j + 1] - theta[j])
            inside = (R >= self.eps) & (R <= 1.0)
            return R, t, h, i, j, p, q, inside

        def value(px, py):
            R, t, h, i, j, p, q, inside = locate(px, py)
            e = ((1 - p) * (1 - q) * eta[i, j] + p * (1 - q) * eta[i + 1, j]
                 + (1 - p) * q * eta[i, j + 1] + p * q * eta[i + 1, j + 1])
            return np.where(inside, np.exp(-beta * t) * e, 0.0)

        def grad(px, py):
            R, t, h, i, j, p, q, inside = locate(px, py)
            e = ((1 - p) * (1 - q) * eta[i, j] + p * (1 - q) * eta[i + 1, j]
                 + (1 - p) * q * eta[i, j + 1] + p * q * eta[i + 1, j + 1])
            et = ((1 - q) * (eta[i + 1, j] - eta[i, j]) + q * (eta[i + 1, j + 1] - eta[i, j + 1])) \
                / (tau[i + 1] - tau[i])
            eh = ((1 - p) * (eta[i, j + 1] - eta[i, j]) + p * (eta[i + 1, j + 1] - eta[i + 1, j])) \
                / (theta[j + 1] - theta[j])
            amp = np.exp(-beta * t)
            xt = amp * (et - beta * e)
            xh = amp * eh
            Rs = np.maximum(R, 1e-300)
            # e_R = (sin h, cos h), e_theta = (cos h, -sin h) in the (rho, y) plane
            g_rho = (np.sin(h) * xt + np.cos(h) * xh) / Rs
            g_y = (np.cos(h) * xt - np.sin(h) * xh) / Rs
            g_rho = np.where(px < 0, -g_rho, g_rho)
            return np.where(inside, g_rho, 0.0), np.where(inside, g_y, 0.0)

        geo = "line" if self.n == 1 else "radial"
        brk = tuple(np.exp(tau))
        return TestFunction("extended", self.n, geo, (0.0, 0.0), 1.0, value, grad,
                            breaks=brk, values=eta, info={"probe": "logpolar"})


def rayleigh_min(u, f: Nonlinearity, s: float, probe, pairing: str = "auto") -> StabilityReport:
    """Smallest eigenvalue of the stability form on a probe space.

    The pairing is L^2(Omega, f'(u)) when f'(u) > 0 on the probe support and L^2 otherwise
    ("auto"); the reported eigenvector is normalized in that pairing.
    """
    return probe.report(u, f, s, pairing)


# ---------------------------------------------------------------- field sampling

def _needs(fld: ExtensionField, ball: BallRule, center, radius) -> None:
    x0, y0 = center
    if fld.geometry == "line":
        ok = abs(x0) + radius <= np.max(np.abs(fld.x)) + 1e-12
    else:
        ok = abs(x0) + radius <= fld.x[-1] + 1e-12
    ok = ok and y0 + radius <= fld.y[-1] + 1e-12
    if not ok:
        raise GeometryError("ball leaves the computed field")


def _sample(fld: ExtensionField, rule: BallRule, hessian: bool = False) -> dict:
    names = ["v", "vx", "vy"] + (["vxx", "vxy", "vyy"] if hessian else [])
    vals = fld.sample(names, rule.px, rule.py)
    out = dict(zip(names, vals))
    if hessian:
        m = fld.n - 1 if fld.geometry == "radial" else 0
        px = rule.px
        small = np.abs(px) < 1e-9
        T = np.where(small, out["vxx"], out["vx"] / np.where(small, 1.0, px)) if m else 0 * px
        out["T"] = T
        out["m"] = m
    out["grad2"] = out["vx"] ** 2 + out["vy"] ** 2
    out["vr"] = rule.om_rho * out["vx"] + rule.om_y * out["vy"]
    return out


def _weight(fld: ExtensionField, py):
    a = fld.a
    return py ** a if a != 0 else np.ones_like(py)


def _hess2(d) -> np.ndarray:
    return d["vxx"] ** 2 + 2 * d["vxy"] ** 2 + d["vyy"] ** 2 + d["m"] * d["T"] ** 2


# ---------------------------------------------------------------- test function of the radial derivative

def radial_test_function(fld: ExtensionField, zeta: RadialCutoff | None = None,
                         eps: float = ORIGIN_EPS) -> TestFunction:
    """xi = |X|^{-(n-1)/2} (X . grad v) zeta, with |X| replaced by eps on B_eps."""
    zeta = zeta or RadialCutoff.standard()
    n = fld.n
    if n > 1 and eps > 1 / 8:
        warnings.warn(f"origin regularization radius {eps} exceeds 1/8", SingularityWarning,
                      stacklevel=2)
    if tuple(zeta.center) != (0.0, 0.0):
        raise ValueError("the cutoff must be centered at the origin")
    beta = (n - 1) / 2
    names = ["vx", "vy", "vxx", "vxy", "vyy"]

    def parts(px, py):
        px = np.asarray(px, float)
        py = np.asarray(py, float)
        R = np.hypot(px, py)
        vx, vy, vxx, vxy, vyy = fld.sample(names, px, py)
        c = px * vx + py * vy
        g = np.maximum(R, eps) ** (-beta)
        dg = np.where(R > eps, -beta * np.maximum(R, eps) ** (-beta - 1), 0.0)
        return R, c, g, dg, vx, vy, vxx, vxy, vyy

    def value(px, py):
        R, c, g, dg, *_ = parts(px, py)
        return g * zeta(R) * c

    def grad(px, py):
        R, c, g, dg, vx, vy, vxx, vxy, vyy = parts(px, py)
        px = np.asarray(px, float)
        py = np.asarray(py, float)
        Rs = np.where(R > 0, R, 1.0)
        amp = g * zeta(R)
        damp = dg * zeta(R) + g * zeta.derivative(R)
        cr = vx + px * vxx + py * vxy
        cy = px * vxy + vy + py * vyy
        return damp * px / Rs * c + amp * cr, damp * py / Rs * c + amp * cy

    return TestFunction("extended", n, fld.geometry, (0.0, 0.0), zeta.radius, value, grad,
                        breaks=tuple(sorted({eps, *zeta.knots})), info={"eps": eps})


# ---------------------------------------------------------------- integral identities

@dataclass
class InequalityResult:
    lhs: float
    rhs: float
    parts: dict = field(default_factory=dict)
    holds: bool = True

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs <= 0 else math.inf)


def lemma23_check(fld: ExtensionField, eta, tol: float = 1e-8) -> InequalityResult:
    """The three integrals of the stability inequality tested with xi = (X . grad v) eta."""
    if tuple(eta.center) != (0.0, 0.0):
        raise ValueError("eta must be radial about the origin")
    s, n = fld.s, fld.n
    rule = ball_rule(n, (0.0, 0.0), eta.radius, eta.breaks)
    _needs(fld, rule, (0.0, 0.0), eta.radius)
    d = _sample(fld, rule)
    R = rule.dist
    e, de = eta(R), eta.derivative(R)
    wy = _weight(fld, rule.py)
    l1 = s * rule.integrate(wy * ((n - 2 * s) * e * e + R * 2 * e * de) * d["grad2"])
    l2 = -2 * s * rule.integrate(wy * R * d["vr"] * 2 * e * de * d["vr"])
    r = rule.integrate(wy * R * R * d["vr"] ** 2 * de * de)
    scale = max(abs(l1), abs(l2), abs(r), 1e-300)
    return InequalityResult(l1 + l2, r, {"lhs1": l1, "lhs2": l2, "rhs": r},
                            l1 + l2 <= r + tol * scale)


def pohozaev_check(fld: ExtensionField, eta) -> InequalityResult:
    """Both sides of -int y^a (X . grad|grad v|^2) eta^2 = (n+2-2s) int y^a |grad v|^2 eta^2
    + int y^a |grad v|^2 r (eta^2)_r."""
    s, n = fld.s, fld.n
    rule = ball_rule(n, (0.0, 0.0), eta.radius, eta.breaks)
    _needs(fld, rule, (0.0, 0.0), eta.radius)
    d = _sample(fld, rule, hessian=True)
    R = rule.dist
    e, de = eta(R), eta.derivative(R)
    wy = _weight(fld, rule.py)
    px, py = rule.px, rule.py
    # X . grad |grad v|^2 = 2 sum_ij X_i v_j v_ij in the (rho, y) plane
    xg = 2 * (px * (d["vx"] * d["vxx"] + d["vy"] * d["vxy"]) + py * (d["vx"] * d["vxy"] + d["vy"] * d["vyy"]))
    lhs = -rule.integrate(wy * xg * e * e)
    rhs = (n + 2 - 2 * s) * rule.integrate(wy * d["grad2"] * e * e) + \
        rule.integrate(wy * d["grad2"] * R * 2 * e * de)
    return InequalityResult(lhs, rhs, {}, True)


def weighted_radial_estimate(fld: ExtensionField, C: float | None = None,
                             inner: float = 0.5, outer: float = 0.75) -> InequalityResult:
    """lhs = int_{B_inner} y^{1-2s} r^{2s-n} v_r^2 against the annulus energy."""
    s, n = fld.s, fld.n
    if not 2 * s < n < 10 * s:
        raise RegimeError(f"n = {n} outside (2s, 10s) for s = {s}")
    r_in = ball_rule(n, (0.0, 0.0), inner)
    r_out = ball_rule(n, (0.0, 0.0), outer, (inner,))
    _needs(fld, r_out, (0.0, 0.0), outer)
    d = _sample(fld, r_in)
    lhs = r_in.integrate(_weight(fld, r_in.py) * r_in.dist ** (2 * s - n) * d["vr"] ** 2)
    d2 = _sample(fld, r_out)
    ann = r_out.integrate(np.where(r_out.dist > inner, _weight(fld, r_out.py) * d2["grad2"], 0.0))
    out = InequalityResult(lhs, ann, {"annulus": ann})
    out.holds = True if C is None else lhs <= C * ann * (1 + 1e-12) + 1e-300
    return out


def geometric_stability_check(fld: ExtensionField, eta, f: Nonlinearity | None = None,
                              rtol: float = GEOM_RTOL, atol: float = GEOM_ATOL,
                              **rule_kw) -> InequalityResult:
    """lhs = int A^2 eta^2, rhs = int |grad v|^2 |grad eta|^2 (s = 1/2)."""
    if abs(fld.s - 0.5) > 1e-14:
        raise ValueError("the geometric stability inequality is stated for s = 1/2")
    f = f if f is not None else fld.nonlinearity
    if f is None or not (f.convex and f.nonnegative):
        raise FlagError("geometric stability needs a nonnegative convex nonlinearity")
    rule = ball_rule(fld.n, eta.center, eta.radius, eta.breaks, **rule_kw)
    _needs(fld, rule, eta.center, eta.radius)
    d = _sample(fld, rule, hessian=True)
    thr = 1e-12 * max(fld.scale(), float(np.max(fld.grad_norm)))
    A2 = geometric_quantity_from(d["vx"], d["vy"], d["vxx"], d["vxy"], d["vyy"], d["T"], d["m"], thr)
    e, de = eta(rule.dist), eta.derivative(rule.dist)
    lhs = rule.integrate(A2 * e * e)
    rhs = rule.integrate(d["grad2"] * de * de)
    return InequalityResult(lhs, rhs, {}, lhs <= rhs * (1 + rtol) + atol)


def hessian_bound_check(fld: ExtensionField, x0=(0.0, 0.0), R1: float = 0.75, R2: float = 1.0,
                        C: float | None = None) -> InequalityResult:
    """lhs = |grad v|_{L2(B_R1)} + (R2-R1)|D^2 v|_{L2(B_R1)}, rhs = |grad v|_{L2(B_R2)}."""
    if not 0 < R1 < R2:
        raise GeometryError("need 0 < R1 < R2")
    if math.hypot(*x0) + R2 > 1 + 1e-12:
        raise GeometryError("the outer ball leaves the unit half ball")
    r1 = ball_rule(fld.n, x0, R1)
    r2 = ball_rule(fld.n, x0, R2)
    _needs(fld, r2, x0, R2)
    d1 = _sample(fld, r1, hessian=True)
    d2 = _sample(fld, r2)
    g1 = math.sqrt(r1.integrate(d1["grad2"]))
    h1 = math.sqrt(r1.integrate(_hess2(d1)))
    g2 = math.sqrt(r2.integrate(d2["grad2"]))
    lhs = g1 + (R2 - R1) * h1
    out = InequalityResult(lhs, g2, {"grad_inner": g1, "hessian_inner": h1})
    out.holds = True if C is None else lhs <= C * g2 * (1 + 1e-12)
    return out


def hessian_pointwise_bound(fld: ExtensionField) -> float:
    """max over nodes with grad v != 0 of |D^2 v|^2 / A^2 (the harmonic case bounds it by n+2)."""
    from .extension import hessian_frame
    gx, gy, hxx, hxy, hyy, T = hessian_frame(fld)
    m = fld.n - 1 if fld.geometry == "radial" else 0
    thr = 1e-12 * max(fld.scale(), float(np.max(fld.grad_norm)))
    A2 = geometric_quantity_from(gx, gy, hxx, hxy, hyy, T, m, thr)
    full = hxx ** 2 + 2 * hxy ** 2 + hyy ** 2 + m * T ** 2
    sel = (A2 > 1e-10 * np.max(A2)) & np.isfinite(full)
    return float(np.max(full[sel] / A2[sel])) if np.any(sel) else 0.0


# ---------------------------------------------------------------- decay sequences

@dataclass
class DecaySequences:
    a: np.ndarray
    b: np.ndarray
    theta: float | None
    alpha: float | None
    C0: float | None
    degenerate: bool

    def dichotomy(self, L: float) -> list:
        """(j, applies, holds) of: a_j >= a_{j-1}/2 implies b_j <= L (b_{j-1} - b_j)."""
        out = []
        for j in range(1, self.b.size):
            applies = self.a[j] >= self.a[j - 1] / 2
            ok = (not applies) or self.b[j] <= L * (self.b[j - 1] - self.b[j]) * (1 + 1e-12)
            out.append((j, bool(applies), bool(ok)))
        return out

    def dichotomy_constant(self) -> float:
        vals = [self.b[j] / max(self.b[j - 1] - self.b[j], 1e-300)
                for j in range(1, self.b.size) if self.a[j] >= self.a[j - 1] / 2]
        return float(max(vals)) if vals else 0.0

    def recurrence_constant(self) -> float:
        """Smallest L with a_j + b_j <= L a_{j-1} for every j >= 1."""
        return float(np.max((self.a[1:] + self.b[1:]) / np.maximum(self.a[:-1], 1e-300)))

    @property
    def nonincreasing(self) -> bool:
        return bool(np.all(np.diff(self.b) <= 1e-14 * max(self.b[0], 1e-300)))


def decay_sequences(fld: ExtensionField, J: int = 5) -> DecaySequences:
    """a_j = 2^{-j(1-n)} int_{B_{2^-(j+1)}} |grad v|^2 and b_j = int_{B_{2^-(j+1)}} r^{1-n} v_r^2."""
    n = fld.n
    h = float(np.min(np.diff(fld.x)))
    if 2.0 ** -(J + 1) < h * (1 - 1e-9):
        raise ResolutionError(f"ball radius 2^-{J + 1} is below the grid spacing {h:.3g}")
    a = np.empty(J + 1)
    b = np.empty(J + 1)
    for j in range(J + 1):
        rho = 2.0 ** -(j + 1)
        rule = ball_rule(n, (0.0, 0.0), rho)
        d = _sample(fld, rule)
        a[j] = 2.0 ** (-j * (1 - n)) * rule.integrate(d["grad2"])
        b[j] = rule.integrate(rule.dist ** (1 - n) * d["vr"] ** 2)
    if not np.all(b > 0):
        return DecaySequences(a, b, None, None, None, True)
    slope = np.polyfit(np.arange(J + 1), np.log(b), 1)[0]
    theta = float(math.exp(slope))
    C0 = float(np.max(b / (theta ** np.arange(J + 1) * b[0])))
    alpha = -math.log(theta) / (2 * math.log(2)) if theta < 1 else None
    return DecaySequences(a, b, theta, alpha, C0, False)


# ---------------------------------------------------------------- Morrey / Hoelder pipeline

@dataclass
class MorreyResult:
    bound: float
    deviation: float
    quotient: float
    quotient_bound: float
    C1: float
    lens: float
    alpha: float

    @property
    def passes(self) -> bool:
        return self.deviation <= self.bound * (1 + 1e-9) and \
            self.quotient <= self.quotient_bound * (1 + 1e-9)


def growth_profile(fld: ExtensionField, z: float, radii) -> np.ndarray:
    """phi(R) = int_{B_R^+(z)} |w_r| for the radial derivative about (z, 0)."""
    out = []
    for R in radii:
        rule = ball_rule(fld.n, (z, 0.0), float(R))
        d = _sample(fld, rule)
        out.append(rule.integrate(np.abs(d["vr"])))
    return np.array(out)


def morrey_holder(fld: ExtensionField, z: float, d: float, alpha: float,
                  C1: float | None = None, levels: int = 4) -> MorreyResult:
    """Bound C C1 d^{n+1}/|S| d^alpha on |v(z,0) - v_S|, S the half lens of B_d(z), B_d(z + d)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n = fld.n
    zt = z + d
    if fld.geometry == "radial" and min(z, zt) < 0:
        raise GeometryError("radial fields take centers with z >= 0")
    radii = d * 2.0 ** -np.arange(0, levels + 1, 0.5)
    phi = np.maximum(growth_profile(fld, z, radii), growth_profile(fld, zt, radii))
    need = float(np.max(phi / radii ** (n + alpha)))
    if C1 is None:
        C1 = need
    elif need > C1 * (1 + 1e-9):
        raise CertificateError(f"growth bound violated: needs C1 >= {need:.4g}, got {C1:.4g}")
    S = lens_volume(n, d)
    C = (1 + n / alpha) / (n + 1)
    bound = C * C1 * d ** (n + 1) / S * d ** alpha
    rule = ball_rule(n, (z, 0.0), d, limit=lens_limit(d))
    vS = rule.integrate(fld.sample(["v"], rule.px, rule.py)[0]) / rule.integrate(1.0)
    u = fld.trace
    uz = float(u(abs(z) if fld.geometry == "radial" else z))
    uzt = float(u(abs(zt) if fld.geometry == "radial" else zt))
    return MorreyResult(bound, abs(uz - vS), abs(uz - uzt) / d ** alpha, 2 * bound / d ** alpha,
                        C1, S, alpha)


def holder_ratio(u: TraceFunction, alpha: float, radius: float = 0.5) -> float:
    """||u||_{C^alpha(closed B_radius)} / ||u||_{L^1_{1/2}} with the seminorm a sup over node pairs.

    Returns 0 when u vanishes identically (the degenerate convention).
    """
    x = u.nodes
    if u.geometry == "radial":
        pts = np.unique(np.concatenate([x[x <= radius], [radius]]))
    else:
        pts = np.unique(np.concatenate([x[np.abs(x) <= radius], [-radius, radius]]))
    vals = np.asarray(u(pts), float)
    norm = l1s_norm(u, 0.5)
    if norm == 0.0 or not np.any(vals):
        return 0.0
    dx = np.abs(pts[:, None] - pts[None, :])
    dv = np.abs(vals[:, None] - vals[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(dx > 0, dv / dx ** alpha, 0.0)
    return float((np.max(np.abs(vals)) + np.max(q)) / norm)


def hs_ratio(u: TraceFunction, radius: float = 0.5) -> float:
    """[u]_{H^{1/2}(B_radius)} / ||u||_{L^1_{1/2}}."""
    U = (-radius, radius) if u.geometry == "line" else radius
    norm = l1s_norm(u, 0.5)
    return 0.0 if norm == 0 else hs_seminorm(u, U, 0.5) / norm


def gradient_ratio(fld: ExtensionField, radius: float = 0.5) -> float:
    """||grad v||_{L^2(B_radius^+)} / ||u||_{L^1_{1/2}}."""
    rule = ball_rule(fld.n, (0.0, 0.0), radius)
    d = _sample(fld, rule)
    norm = l1s_norm(fld.trace, 0.5)
    return 0.0 if norm == 0 else math.sqrt(rule.integrate(d["grad2"])) / norm


# ---------------------------------------------------------------- fitted constants

@dataclass(frozen=True)
class FrozenConstant:
    """A constant fitted on a calibration set and then held fixed."""
    value: float
    calibration_max: float
    margin: float
    count: int

    def admits(self, x) -> np.ndarray:
        return np.asarray(x) <= self.value


def fit_constant(ratios, margin: float = 1.2) -> FrozenConstant:
    r = np.asarray(list(ratios), float)
    if r.size == 0 or not np.all(np.isfinite(r)):
        raise ValueError("calibration ratios must be finite and nonempty")
    top = float(np.max(r))
    return FrozenConstant(margin * top, top, margin, int(r.size))


def refinement_stable(coarse: float, fine: float, rel: float = 0.2) -> bool:
    """|fine - coarse| <= rel * coarse (bounded-ratio stability under one refinement)."""
    return abs(fine - coarse) <= rel * abs(coarse)
