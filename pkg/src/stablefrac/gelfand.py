"""Discrete half-Laplacian with zero exterior data and continuation of the Gelfand branch."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .fracops import (Nonlinearity, TraceFunction, cns_constant, dirichlet_trace,
                      radial_weight, sphere_area)
from .quadrature import geometric_breaks, panel_rule

S_HALF = 0.5


class NoFoldError(RuntimeError):
    """The branch never turned: no fold and no sign change of mu_min."""


class NewtonError(RuntimeError):
    pass


class ExtrapolationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ContinuationConfig:
    initial_step: float = 0.05
    max_step: float = 0.5
    min_step: float = 1e-7
    newton_tol: float = 1e-10
    max_newton: int = 12
    fold_window: int = 8
    resolution: int = 256
    max_points: int = 500
    sup_limit: float = 60.0
    post_fold_ratio: float = 0.8

    def __post_init__(self):
        if self.initial_step <= 0 or self.max_step <= 0 or self.min_step <= 0:
            raise ValueError("steps must be positive")
        if not self.newton_tol > np.finfo(float).eps:
            raise ValueError("Newton tolerance must exceed machine epsilon")
        if self.resolution < 8:
            raise ValueError("resolution too coarse for the singular split")


@dataclass
class DiscreteOperator:
    matrix: np.ndarray
    nodes: np.ndarray        # unknown positions
    weights: np.ndarray      # quadrature weights of the discrete L2(Omega) pairing
    n: int
    geometry: str
    h: float
    s: float = S_HALF

    @property
    def size(self) -> int:
        return self.nodes.size

    def full_grid(self, U):
        """Nodes including the boundary point(s) carrying the zero exterior value."""
        U = np.asarray(U, dtype=float)
        if self.geometry == "line":
            x = np.concatenate([[-1.0], self.nodes, [1.0]])
            v = np.concatenate([[0.0], U, [0.0]])
        else:
            x = np.concatenate([self.nodes, [1.0]])
            v = np.concatenate([U, [0.0]])
        return x, v

    def trace(self, U) -> TraceFunction:
        x, v = self.full_grid(U)
        return dirichlet_trace(x, v, n=self.n, geometry=self.geometry, s=self.s)

    def inner(self, U, V) -> float:
        return float(np.sum(self.weights * U * V))


# ---------------------------------------------------------------- assembly

def _line_matrix(cells: int, s: float) -> DiscreteOperator:
    h = 2.0 / cells
    M = cells - 1
    c = cns_constant(1, s)
    k = np.arange(1, M + 1, dtype=float)
    a, b = k, k + 1
    I0 = (a ** (-2 * s) - b ** (-2 * s)) / (2 * s)
    if abs(s - 0.5) < 1e-14:
        I1 = np.log(b / a)
    else:
        I1 = (b ** (1 - 2 * s) - a ** (1 - 2 * s)) / (1 - 2 * s)
    alpha = (k + 1) * I0 - I1        # hat weight of the left end of [k, k+1]
    beta = I1 - k * I0               # hat weight of the right end
    w = alpha.copy()
    w[1:] += beta[:-1]               # w_m = alpha_m + beta_{m-1}
    col = np.empty(M)
    col[0] = 2 / (2 - 2 * s) + 2 / (2 * s)
    col[1:] = -w[: M - 1]
    col[1] -= 1 / (2 - 2 * s)
    A = c * h ** (-2 * s) * linalg.toeplitz(col)
    nodes = -1 + h * np.arange(1, M + 1)
    return DiscreteOperator(A, nodes, np.full(M, h), 1, "line", h, s)


def _radial_matrix(n: int, cells: int, s: float, q: int = 8) -> DiscreteOperator:
    h = 1.0 / cells
    N = cells
    r = h * np.arange(N + 1)
    c = cns_constant(n, s)
    S = sphere_area(n)
    A = np.zeros((N, N))
    x0, w0 = np.polynomial.legendre.leggauss(q)
    x0, w0 = (x0 + 1) / 2, w0 / 2
    # row 0: w_0(rho) = |S| rho^{-1-2s}
    A[0, 0] += c * S * h ** (-2 * s) / (2 - 2 * s)
    A[0, 1] -= c * S * h ** (-2 * s) / (2 - 2 * s)
    A[0, 0] += c * S * h ** (-2 * s) / (2 * s)
    for j in range(1, N):
        rho = r[j] + h * x0
        wk = S * rho ** (-1 - 2 * s) * h * w0
        A[0, j] -= c * np.sum(wk * (1 - x0))
        if j + 1 < N:
            A[0, j + 1] -= c * np.sum(wk * x0)
    from .fracops import _halfline
    for i in range(1, N):
        ri = r[i]
        wf = lambda rho, ri=ri: radial_weight(n, s, ri, rho)
        # near field on (0, h): quadratic interpolation through i-1, i, i+1
        levels = int(np.ceil(np.log2(h / (1e-7 * ri))))
        t, wt = panel_rule(geometric_breaks(h, levels), q)
        wp, wm = wf(ri + t), wf(ri - t)
        J1 = float(np.sum(wt * t * (wp - wm)))
        J2 = float(np.sum(wt * t * t * (wp + wm)))
        A[i, i] += c * J2 / h ** 2
        if i + 1 < N:
            A[i, i + 1] += c * (-J1 / (2 * h) - J2 / (2 * h ** 2))
        A[i, i - 1] += c * (J1 / (2 * h) - J2 / (2 * h ** 2))
        # far field: hat functions on cells away from the window
        cells_idx = np.array([j for j in range(N) if j <= i - 2 or j >= i + 1])
        lo = r[cells_idx]
        rho = lo[:, None] + h * x0[None, :]
        wk = wf(rho) * h * w0[None, :]
        left = np.sum(wk * (1 - x0[None, :]), axis=1)
        right = np.sum(wk * x0[None, :], axis=1)
        wfar = float(np.sum(wk))
        wfar += _halfline(wf, 1.0, max(1.0 - ri, 1e-3), 2 * s)
        A[i, i] += c * wfar
        np.subtract.at(A[i], cells_idx, c * left)
        right_idx = cells_idx + 1
        keep = right_idx < N
        np.subtract.at(A[i], right_idx[keep], c * right[keep])
    nodes = r[:N]
    wts = S * np.maximum(nodes, h / 4) ** (n - 1) * h
    wts[0] = S * (h / 2) ** n / n
    return DiscreteOperator(A, nodes, wts, n, "radial", h, s)


def assemble_operator(n: int = 1, geometry: str | None = None, resolution: int = 256,
                      s: float = S_HALF) -> DiscreteOperator:
    """Matrix approximating (-Delta)^s on Omega = (-1,1) or B_1 with zero exterior data."""
    geometry = geometry or ("line" if n == 1 else "radial")
    if resolution < 8:
        raise ValueError("resolution too coarse for the singular split")
    if geometry == "line":
        if n != 1:
            raise ValueError("interval geometry needs n = 1")
        return _line_matrix(int(resolution), s)
    if geometry == "radial":
        if n < 2:
            raise ValueError("radial ball geometry needs n >= 2")
        return _radial_matrix(int(n), int(resolution), s)
    raise ValueError(f"unknown geometry {geometry!r}")


# ---------------------------------------------------------------- continuation

@dataclass
class BranchPoint:
    lam: float
    values: np.ndarray
    solution: TraceFunction
    sup_norm: float
    mu_min: float
    arclength: float
    newton_residual: float
    tangent: np.ndarray = field(repr=False, default=None)
    newton_iterations: int = 0

    @property
    def tangent_lambda(self) -> float:
        return float(self.tangent[-1])


@dataclass
class Branch:
    points: list
    operator: DiscreteOperator
    f: Nonlinearity
    config: ContinuationConfig
    fold_index: int | None = None     # first point past the fold
    aborted: bool = False

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    def minimal(self) -> list:
        """Points on the minimal (pre-fold) part of the branch."""
        if self.fold_index is None:
            return list(self.points)
        return list(self.points[: self.fold_index])


def _residual(A, U, lam, f) -> float:
    F = A @ U - lam * f.f(U)
    return float(np.max(np.abs(F))) / max(1.0, float(np.max(np.abs(lam * f.f(U)))))


def _tangent(A, U, lam, f, theta, prev):
    """Bordered solve for the branch tangent, oriented along prev."""
    N = U.size
    J = A - lam * np.diag(f.fprime(U))
    B = np.zeros((N + 1, N + 1))
    B[:N, :N] = J
    B[:N, N] = -f.f(U)
    B[N, :N] = theta * prev[:N]
    B[N, N] = prev[N]
    rhs = np.zeros(N + 1)
    rhs[N] = 1.0
    z = linalg.solve(B, rhs)
    z /= math.sqrt(theta * float(z[:N] @ z[:N]) + z[N] ** 2)
    if theta * float(z[:N] @ prev[:N]) + z[N] * prev[N] < 0:
        z = -z
    return z


def _correct(A, f, Up, lp, t, theta, cfg):
    """Newton on (A U - lam f(U), arclength constraint) from the predictor."""
    N = Up.size
    U, lam = Up.copy(), lp
    res = _residual(A, U, lam, f)
    for it in range(1, cfg.max_newton + 1):
        F = A @ U - lam * f.f(U)
        g = theta * float((U - Up) @ t[:N]) + (lam - lp) * t[N]
        B = np.empty((N + 1, N + 1))
        B[:N, :N] = A - lam * np.diag(f.fprime(U))
        B[:N, N] = -f.f(U)
        B[N, :N] = theta * t[:N]
        B[N, N] = t[N]
        try:
            d = linalg.solve(B, -np.concatenate([F, [g]]))
        except linalg.LinAlgError:
            return None
        U = U + d[:N]
        lam = lam + d[N]
        if not np.all(np.isfinite(U)):
            return None
        res = _residual(A, U, lam, f)
        if res <= cfg.newton_tol and np.max(np.abs(d[:N])) <= 1e-6 * max(1.0, np.max(np.abs(U))):
            return U, lam, it, res
    return None


def _mu_min(op: DiscreteOperator, U, lam, f) -> float:
    from .stability import OperatorProbe, rayleigh_min
    return rayleigh_min(None, f.scaled(lam), op.s, OperatorProbe(op, U)).rayleigh_min


def _make_point(op, f, U, lam, arclength, res, t, it) -> BranchPoint:
    return BranchPoint(lam=float(lam), values=U.copy(), solution=op.trace(U),
                       sup_norm=float(np.max(np.abs(U))) if U.size else 0.0,
                       mu_min=_mu_min(op, U, lam, f), arclength=float(arclength),
                       newton_residual=float(res), tangent=t.copy(), newton_iterations=it)


def minimal_branch(f: Nonlinearity, config: ContinuationConfig | None = None, *, n: int = 1,
                   geometry: str | None = None, operator: DiscreteOperator | None = None) -> Branch:
    """Pseudo-arclength continuation of A_h u = lam f(u) from (0, 0) through the first fold."""
    cfg = config or ContinuationConfig()
    if not (f.nondecreasing and f.positive_at_zero):
        raise ValueError("f must be nondecreasing with f(0) > 0")
    op = operator or assemble_operator(n, geometry, cfg.resolution)
    A = op.matrix
    N = op.size
    theta = 1.0 / N
    U = np.zeros(N)
    lam = 0.0
    t = _tangent(A, U, lam, f, theta, np.concatenate([np.zeros(N), [1.0]]))
    pts = [_make_point(op, f, U, lam, 0.0, _residual(A, U, lam, f), t, 0)]
    branch = Branch(pts, op, f, cfg)
    ds = cfg.initial_step
    arclength = 0.0
    lam_peak = 0.0
    post = 0
    while len(pts) < cfg.max_points:
        Up, lp = U + ds * t[:N], lam + ds * t[N]
        out = _correct(A, f, Up, lp, t, theta, cfg)
        if out is None:
            ds /= 2
            if ds < cfg.min_step:
                branch.aborted = True
                warnings.warn("Newton diverged below the minimum step; keeping the last good point")
                break
            continue
        Un, ln, it, res = out
        tn = _tangent(A, Un, ln, f, theta, t)
        arclength += ds
        pt = _make_point(op, f, Un, ln, arclength, res, tn, it)
        pts.append(pt)
        if branch.fold_index is None and t[N] > 0 and tn[N] <= 0:
            branch.fold_index = len(pts) - 1
        U, lam, t = Un, ln, tn
        lam_peak = max(lam_peak, lam)
        if it <= 3:
            ds = min(2 * ds, cfg.max_step)
        elif it >= 8:
            ds /= 2
        if branch.fold_index is not None:
            post += 1
            if post >= cfg.fold_window or lam < cfg.post_fold_ratio * lam_peak:
                break
        if pt.sup_norm > cfg.sup_limit:
            break
    return branch


# ---------------------------------------------------------------- fold location

@dataclass
class FoldResult:
    lambda_star: float
    fold_point: BranchPoint
    lambda_mu: float | None
    arclength_fold: float
    arclength_mu: float | None
    bracket_step: float

    @property
    def detectors_agree(self) -> bool:
        return self.arclength_mu is not None and \
            abs(self.arclength_fold - self.arclength_mu) <= self.bracket_step


def _secant(phi, s0, p0, s1, p1, tol=1e-11, maxit=60):
    """Illinois regula falsi for phi(sigma) = 0 inside [s0, s1]."""
    side = 0
    best = None
    for _ in range(maxit):
        s = s1 - p1 * (s1 - s0) / (p1 - p0)
        ps, extra = phi(s)
        best = (s, ps, extra)
        if abs(ps) < tol or abs(s1 - s0) < 1e-13:
            break
        if ps * p1 < 0:
            s0, p0 = s1, p1
            side = 0
        else:
            p0 = p0 / 2 if side == -1 else p0
            side = -1
        s1, p1 = s, ps
    return best


def detect_lambda_star(branch: Branch) -> FoldResult:
    """Locate lambda* by secant refinement of dlambda/ds = 0 and of mu_min = 0."""
    op, f, cfg = branch.operator, branch.f, branch.config
    A = op.matrix
    N = op.size
    theta = 1.0 / N
    pts = branch.points
    k = branch.fold_index
    if k is None:
        raise NoFoldError("continuation exhausted its budget before the branch turned")
    p0, p1 = pts[k - 1], pts[k]
    base_U, base_l, base_t = p0.values, p0.lam, p0.tangent

    def solve_at(sig):
        Up, lp = base_U + sig * base_t[:N], base_l + sig * base_t[N]
        out = _correct(A, f, Up, lp, base_t, theta, replace(cfg, max_newton=30))
        if out is None:
            raise NewtonError("corrector failed during fold refinement")
        U, lam, it, res = out
        t = _tangent(A, U, lam, f, theta, base_t)
        return U, lam, t, res, it

    step = p1.arclength - p0.arclength

    def phi_fold(sig):
        U, lam, t, res, it = solve_at(sig)
        return t[N], (U, lam, t, res, it)

    s_f, _, (U, lam, t, res, it) = _secant(phi_fold, 0.0, p0.tangent_lambda, step,
                                           p1.tangent_lambda)
    fold_pt = _make_point(op, f, U, lam, p0.arclength + s_f, res, t, it)

    # mu-crossing detector on the same bracket or the nearest sign change
    mus = np.array([p.mu_min for p in pts])
    sgn = np.nonzero((mus[:-1] > 0) & (mus[1:] <= 0))[0]
    lam_mu = s_mu = None
    if sgn.size:
        j = int(sgn[0])
        q0, q1 = pts[j], pts[j + 1]
        base_U, base_l, base_t = q0.values, q0.lam, q0.tangent

        def phi_mu(sig):
            U, lam, t, res, it = solve_at(sig)
            return _mu_min(op, U, lam, f), lam

        sm, _, lm = _secant(phi_mu, 0.0, q0.mu_min, q1.arclength - q0.arclength, q1.mu_min,
                            tol=1e-10)
        lam_mu, s_mu = float(lm), q0.arclength + sm
    return FoldResult(float(fold_pt.lam), fold_pt, lam_mu, fold_pt.arclength, s_mu, step)


# ---------------------------------------------------------------- extremal solution

@dataclass
class ExtremalEstimate:
    trace: TraceFunction
    values: np.ndarray
    lambda_star: float
    sup_norm: float
    sup_trend: list
    weak_residuals: np.ndarray
    disagreement: float


def _solve_natural(A, f, lam, U0, tol=1e-11, maxit=40):
    U = U0.copy()
    for _ in range(maxit):
        F = A @ U - lam * f.f(U)
        J = A - lam * np.diag(f.fprime(U))
        d = linalg.solve(J, -F)
        U = U + d
        if np.max(np.abs(d)) < tol * max(1.0, np.max(np.abs(U))):
            return U
    raise NewtonError(f"Newton did not converge at lambda={lam}")


def weak_test_battery(op: DiscreteOperator, count: int = 4) -> np.ndarray:
    """Rows zeta_j = (1 - |x|^2)^{1/2} P_j(x): bounded with bounded half-Laplacian."""
    x = op.nodes
    base = np.sqrt(np.maximum(1 - x * x, 0.0))
    rows = [base * np.polynomial.legendre.legval(x, np.eye(count)[j]) for j in range(count)]
    return np.array(rows)


def extremal_estimate(branch: Branch, levels: int = 6) -> ExtremalEstimate:
    """Aitken extrapolation of u_lambda along lambda_k = lambda*(1 - 4^-k)."""
    fold = detect_lambda_star(branch)
    op, f = branch.operator, branch.f
    A = op.matrix
    lam_star = fold.lambda_star
    mins = branch.minimal()
    U = mins[-1].values.copy()
    seq = []
    for k in range(1, levels + 1):
        lam_k = lam_star * (1 - 4.0 ** (-k))
        start = max((p for p in mins if p.lam <= lam_k), key=lambda p: p.lam, default=mins[0])
        guess = U if seq else start.values
        U = _solve_natural(A, f, lam_k, guess)
        seq.append(U.copy())
    est = []
    for a, b, c in zip(seq[:-2], seq[1:-1], seq[2:]):
        d0, d1 = b - a, c - b
        ratio = float(d1 @ d0) / float(d0 @ d0)
        est.append(c + ratio / (1 - ratio) * d1)
    disagreement = float(np.max(np.abs(est[-1] - est[-2])) / max(np.max(np.abs(est[-1])), 1e-300))
    if disagreement > 0.05:
        raise ExtrapolationError(f"successive extrapolations differ by {disagreement:.3g}")
    Ustar = est[-1]
    Z = weak_test_battery(op)
    # weak form: the operator acts on the test functions, not on u
    lhs = (A @ Z.T).T @ (op.weights * Ustar)
    rhs = (Z * op.weights) @ (lam_star * f.f(Ustar))
    # odd test functions integrate to ~0, so compare against the absolute integral
    scale = np.maximum(np.abs(Z * op.weights) @ np.abs(lam_star * f.f(Ustar)), 1e-300)
    return ExtremalEstimate(op.trace(Ustar), Ustar, lam_star, float(np.max(Ustar)),
                            [float(np.max(v)) for v in seq], np.abs(lhs - rhs) / scale,
                            disagreement)
