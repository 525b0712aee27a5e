"""s-harmonic extension by Poisson convolution or by a finite-difference solve; DtN map."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, special
from scipy.sparse.linalg import spsolve

from .fracops import (ConstantTail, TraceFunction, ZeroTail, _check_tail, _halfline,
                      sphere_area)
from .quadrature import geometric_breaks, panel_rule, refine_breaks


class ExtrapolationWarning(UserWarning):
    pass


class SolverError(RuntimeError):
    pass


def ds_constant(s: float) -> float:
    """d_s = 2^{2s-1} Gamma(s)/Gamma(1-s); d_{1/2} = 1."""
    return 2.0 ** (2 * s - 1) * math.gamma(s) / math.gamma(1 - s)


@dataclass(frozen=True)
class PoissonKernel:
    n: int
    s: float

    @property
    def p(self) -> float:
        """p_{n,s} making P_s(., y) integrate to one."""
        n, s = self.n, self.s
        return math.gamma((n + 2 * s) / 2) / (math.pi ** (n / 2) * math.gamma(s))

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n, s = self.n, self.s
        return self.p * y ** (2 * s) * (x * x + y * y) ** (-(n + 2 * s) / 2)

    def mass(self, y: float) -> float:
        """int_{R^n} P_s(x, y) dx by radial quadrature."""
        f = lambda r: sphere_area(self.n) * r ** (self.n - 1) * self(r, y)
        x, w = panel_rule(np.concatenate([[0.0], y * 2.0 ** np.arange(-30, 4)]), 10)
        return float(np.sum(w * f(x))) + _halfline(f, 8 * y, 8 * y, 2 * self.s)


# ---------------------------------------------------------------- grids and fields

@dataclass(frozen=True)
class ExtensionGrid:
    x: np.ndarray
    y: np.ndarray

    @staticmethod
    def uniform(geometry: str = "line", h: float = 1 / 64, x_max: float = 1.0,
                y_max: float = 1.0) -> "ExtensionGrid":
        m = int(round(x_max / h))
        x = h * np.arange(-m if geometry == "line" else 0, m + 1)
        y = h * np.arange(0, int(round(y_max / h)) + 1)
        return ExtensionGrid(x, y)

    def key(self):
        return (self.x.tobytes(), self.y.tobytes())


@dataclass
class ExtensionField:
    n: int
    s: float
    geometry: str
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    vxx: np.ndarray = None
    vxy: np.ndarray = None
    vyy: np.ndarray = None
    provenance: str = "poisson"
    trace: TraceFunction | None = None
    nonlinearity: object = None
    info: dict = field(default_factory=dict)

    @property
    def a(self) -> float:
        return 1 - 2 * self.s

    @property
    def grad_norm(self) -> np.ndarray:
        return np.hypot(self.vx, self.vy)

    def laplacian_residual(self) -> np.ndarray:
        """div(y^a grad v)/y^a on interior nodes, nan on the boundary rows."""
        res = self.vxx + self.vyy
        if self.geometry == "radial" and self.n > 1:
            X = self.x[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                tang = np.where(X > 0, self.vx / np.where(X > 0, X, 1), self.vxx)
            res = res + (self.n - 1) * tang
        if self.a != 0:
            Y = self.y[None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                res = res + self.a * self.vy / Y
        out = np.full_like(res, np.nan)
        out[2:-2, 2:-2] = res[2:-2, 2:-2]
        if self.geometry == "radial":
            out[:2, 2:-2] = res[:2, 2:-2]
        return out

    def scale(self) -> float:
        return float(max(np.max(np.abs(self.v)), 1e-300))

    def sample(self, names, px, py) -> np.ndarray:
        """Local 4x4 Lagrange interpolation of the named arrays at points (px, py)."""
        arrs = [getattr(self, nm) for nm in names]
        x, y = self.x, self.y
        if self.geometry == "radial":
            # even/odd reflection across the axis
            par = {"v": 1, "vy": 1, "vyy": 1, "vxx": 1, "vx": -1, "vxy": -1}
            k = 3
            x = np.concatenate([-x[k:0:-1], x])
            arrs = [np.concatenate([par[nm] * A[k:0:-1], A], axis=0) for nm, A in zip(names, arrs)]
        return _lagrange2(x, y, np.stack(arrs), np.asarray(px, float), np.asarray(py, float))


def _lagrange_weights(grid, p):
    i = np.clip(np.searchsorted(grid, p) - 2, 0, grid.size - 4)
    idx = i[:, None] + np.arange(4)[None, :]
    nodes = grid[idx]
    w = np.ones((p.size, 4))
    for a in range(4):
        for b in range(4):
            if a != b:
                w[:, a] *= (p - nodes[:, b]) / (nodes[:, a] - nodes[:, b])
    return idx, w


def _lagrange2(x, y, F, px, py):
    shape = np.broadcast(px, py).shape
    px, py = np.broadcast_to(px, shape).ravel(), np.broadcast_to(py, shape).ravel()
    ix, wx = _lagrange_weights(x, px)
    iy, wy = _lagrange_weights(y, py)
    out = np.zeros((F.shape[0], px.size))
    for a in range(4):
        for b in range(4):
            out += F[:, ix[:, a], iy[:, b]] * (wx[:, a] * wy[:, b])[None, :]
    return out.reshape((F.shape[0],) + shape)


# ---------------------------------------------------------------- finite differences

def _is_uniform(g):
    d = np.diff(g)
    return np.allclose(d, d[0], rtol=1e-9, atol=0)


def _d1(F, g, axis, parity=None):
    """First derivative along an axis, 4th order on uniform grids, 2nd order otherwise."""
    F = np.moveaxis(F, axis, 0)
    if not _is_uniform(g):
        out = np.gradient(F, g, axis=0, edge_order=2)
        return np.moveaxis(out, 0, axis)
    h = g[1] - g[0]
    if parity is not None:
        # reflect across g[0] = 0 with the given parity
        G = np.concatenate([parity * F[2:0:-1], F], axis=0)
        D = np.empty_like(G)
        D[2:-2] = (G[:-4] - 8 * G[1:-3] + 8 * G[3:-1] - G[4:]) / (12 * h)
        D[-2:] = _edge4(G, h)[1]
        return np.moveaxis(D[2:], 0, axis)
    D = np.empty_like(F)
    D[2:-2] = (F[:-4] - 8 * F[1:-3] + 8 * F[3:-1] - F[4:]) / (12 * h)
    lo, hi = _edge4(F, h)
    D[:2], D[-2:] = lo, hi
    return np.moveaxis(D, 0, axis)


def _edge4(F, h):
    c0 = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    c1 = np.array([-3, -10, 18, -6, 1]) / (12 * h)
    lo = np.stack([np.tensordot(c0, F[:5], axes=(0, 0)), np.tensordot(c1, F[:5], axes=(0, 0))])
    top = F[::-1]
    hi = np.stack([-np.tensordot(c1, top[:5], axes=(0, 0)), -np.tensordot(c0, top[:5], axes=(0, 0))])
    return lo, hi


def finish_field(fld: ExtensionField) -> ExtensionField:
    """Second derivatives from the cached first derivatives."""
    x, y = fld.x, fld.y
    rad = fld.geometry == "radial" and x[0] == 0.0
    fld.vxx = _d1(fld.vx, x, 0, parity=-1 if rad else None)
    fld.vyy = _d1(fld.vy, y, 1)
    a1 = _d1(fld.vx, y, 1)
    a2 = _d1(fld.vy, x, 0, parity=1 if rad else None)
    fld.vxy = 0.5 * (a1 + a2)
    return fld


# ---------------------------------------------------------------- Poisson route

_CACHE: dict = {}
_CACHE_LIMIT = 12


def _source_rule(u: TraceFunction, ymin: float, q: int):
    lo, hi = u.lo, u.hi
    brk = np.concatenate([[lo, hi], u.nodes])
    L = hi - lo
    brk = np.concatenate([brk, hi - L * 2.0 ** -np.arange(2, 24)])
    if u.geometry == "line":
        brk = np.concatenate([brk, lo + L * 2.0 ** -np.arange(2, 24)])
    brk = refine_breaks(brk[(brk >= lo) & (brk <= hi)], ymin / 2)
    return panel_rule(brk, q)


def _kernels_line(s, X, Z, y):
    """P, dP/dx, dP/dy for targets X (m,) at height y against sources Z (k,)."""
    n = 1
    nu = (n + 2 * s) / 2
    p = PoissonKernel(1, s).p
    d = X[:, None] - Z[None, :]
    D = d * d + y * y
    P = p * y ** (2 * s) * D ** (-nu)
    Px = -2 * nu * d / D * P
    Py = P * (2 * s / y - 2 * nu * y / D)
    return P, Px, Py


def _kernels_radial(n, s, X, Z, y):
    nu = (n + 2 * s) / 2
    al, be, ga = nu / 2, (nu + 1) / 2, n / 2
    C = PoissonKernel(n, s).p * sphere_area(n) * Z[None, :] ** (n - 1)
    r = X[:, None]
    rho = Z[None, :]
    A = r * r + rho * rho + y * y
    w = 4 * r * r * rho * rho / (A * A)
    F = special.hyp2f1(al, be, ga, w)
    Fp = al * be / ga * special.hyp2f1(al + 1, be + 1, ga + 1, w)
    Am = A ** (-nu)
    G = Am * F
    wr = 8 * r * rho * rho / (A * A) * (1 - 2 * r * r / A)
    wy = -w * 4 * y / A
    Gr = -nu * Am / A * 2 * r * F + Am * Fp * wr
    Gy = -nu * Am / A * 2 * y * F + Am * Fp * wy
    y2s = y ** (2 * s)
    P = C * y2s * G
    Pr = C * y2s * Gr
    Py = C * (2 * s * y ** (2 * s - 1) * G + y2s * Gy)
    return P, Pr, Py


def _layer_kernels(u, x, y, z):
    if u.geometry == "line":
        return _kernels_line(u.s, x, z, y)
    return _kernels_radial(u.n, u.s, x, z, y)


def _tail_layers(u: TraceFunction, x, ys):
    """Contribution of the exterior tail to v, v_x, v_y on every layer y > 0."""
    out = np.zeros((3, x.size, ys.size))
    if isinstance(u.tail, ZeroTail):
        return out
    sides = [(u.hi, 1.0)] + ([(u.lo, -1.0)] if u.geometry == "line" else [])
    for start, sgn in sides:
        a0 = abs(start)
        k = np.arange(-16, 70, dtype=float)
        b = a0 + max(a0, 1.0) * np.concatenate([[0.0], 2.0 ** k])
        t, w = panel_rule(b, 8)
        z = sgn * t
        vals = u.tail(z) * w
        for j, yj in enumerate(ys):
            P, Px, Py = _layer_kernels(u, x, yj, z)
            for c, K in enumerate((P, Px, Py)):
                out[c, :, j] += K @ vals
                # leading-order remainder beyond the last panel
                out[c, :, j] += K[:, -1] * u.tail(z[-1:])[0] * t[-1] / (2 * u.s)
    return out


def extend_poisson(u: TraceFunction, grid: ExtensionGrid | None = None, *, q: int = 8,
                   cache: bool = True, nonlinearity=None) -> ExtensionField:
    """v(x,y) = int u(z) P_s(x-z, y) dz on the grid, first derivatives from the kernel."""
    _check_tail(u, u.s)
    grid = grid or ExtensionGrid.uniform(u.geometry)
    x, y = np.asarray(grid.x, float), np.asarray(grid.y, float)
    if y[0] != 0.0 or np.any(np.diff(y) <= 0):
        raise ValueError("vertical grid must start at y = 0 and increase")
    ys = y[1:]
    z, wz = _source_rule(u, float(ys[0]), q)
    interp = u.func is None
    key = None
    if interp:
        key = (u.geometry, u.n, u.s, grid.key(), u.nodes.tobytes(), u.boundary_power, u.kind, q)
    if interp and cache and key in _CACHE:
        ops = _CACHE[key]
    else:
        if interp:
            src = u.basis_matrix(z) * wz[:, None]
        else:
            src = (u(z) * wz)[:, None]
        ops = np.empty((3, x.size, ys.size, src.shape[1]))
        for j, yj in enumerate(ys):
            for c, K in enumerate(_layer_kernels(u, x, yj, z)):
                ops[c, :, j, :] = K @ src
        if interp and cache:
            if len(_CACHE) >= _CACHE_LIMIT:
                _CACHE.pop(next(iter(_CACHE)))
            _CACHE[key] = ops
    coef = u.values if interp else np.ones(1)
    layers = ops @ coef + _tail_layers(u, x, ys)
    v = np.empty((x.size, y.size))
    vx = np.empty_like(v)
    vy = np.empty_like(v)
    v[:, 1:], vx[:, 1:], vy[:, 1:] = layers
    xx = np.abs(x) if u.geometry == "radial" else x
    v[:, 0] = u(xx)
    vx[:, 0] = u.derivative(xx)
    if u.geometry == "radial":
        vx[x == 0.0, 0] = 0.0
    if abs(u.s - 0.5) < 1e-14:
        # quartic extrapolation of v_y to the trace from layers 1..4
        Y = y[1:5]
        V = np.polynomial.polynomial.polyvander(Y, 3)
        coefs = np.linalg.solve(V, vy[:, 1:5].T)
        vy[:, 0] = coefs[0]
    else:
        vy[:, 0] = np.nan
    fld = ExtensionField(u.n, u.s, u.geometry, x, y, v, vx, vy, provenance="poisson", trace=u,
                         nonlinearity=nonlinearity)
    if abs(u.s - 0.5) < 1e-14:
        finish_field(fld)
        res = fld.laplacian_residual()
        fld.info["residual"] = float(np.nanmax(np.abs(res)))
    return fld


def clear_cache() -> None:
    _CACHE.clear()


def poisson_values(u: TraceFunction, px, py, q: int = 8) -> np.ndarray:
    """v at scattered points (no caching); points on y = 0 return the trace itself."""
    shape = np.shape(px)
    px = np.asarray(px, float).ravel()
    py = np.asarray(py, float).ravel()
    out = np.empty(px.size)
    flat = py <= 0
    out[flat] = u(np.abs(px[flat]) if u.geometry == "radial" else px[flat])
    if np.any(~flat):
        z, wz = _source_rule(u, float(np.min(py[~flat])), q)
        uz = u(z) * wz
        for yj in np.unique(py[~flat]):
            m = py == yj
            P = _layer_kernels(u, px[m], yj, z)[0]
            out[m] = P @ uz + _tail_layers(u, px[m], np.array([yj]))[0, :, 0]
    return out.reshape(shape)


# ---------------------------------------------------------------- PDE route

def graded_axis(lo_uniform: float, hi_uniform: float, h: float, limit: float, ratio: float,
                cap: float) -> np.ndarray:
    """Uniform spacing h on [lo, hi], then geometric growth (capped) out to limit."""
    core = np.linspace(lo_uniform, hi_uniform, int(round((hi_uniform - lo_uniform) / h)) + 1)
    right = [hi_uniform]
    d = h
    while right[-1] < limit:
        d = min(d * ratio, cap)
        right.append(min(right[-1] + d, limit))
    return np.concatenate([core, np.array(right[1:])])


def graded_vertical(y_max: float, first: float, ratio: float = 1.15, cap: float = np.inf) -> np.ndarray:
    ys = [0.0, first]
    d = first
    while ys[-1] < y_max:
        d = min(d * ratio, cap)
        ys.append(min(ys[-1] + d, y_max))
    return np.array(ys)


@dataclass(frozen=True)
class PDEGridSpec:
    h: float = 1 / 32
    ratio: float = 1.15
    first_layer: float = 1e-4     # relative to Y_max
    r_factor: float = 8.0         # R_max = r_factor * diam
    y_factor: float = 4.0         # Y_max = y_factor * diam
    cap_factor: float = 6.0       # spacing cap, in units of h


def solve_extension(u: TraceFunction, spec: PDEGridSpec | None = None) -> ExtensionField:
    """Conservative finite differences for div(rho^{n-1} y^a grad v) = 0 on a truncated strip."""
    spec = spec or PDEGridSpec()
    _check_tail(u, u.s)
    s, n = u.s, u.n
    a = 1 - 2 * s
    lo, hi = u.lo, u.hi
    diam = (hi - lo) if u.geometry == "line" else 2 * hi
    R_max, Y_max = spec.r_factor * diam, spec.y_factor * diam
    cap = spec.cap_factor * spec.h
    if u.geometry == "line":
        right = graded_axis(0.0, max(abs(lo), abs(hi)), spec.h, R_max, spec.ratio, cap)
        x = np.concatenate([-right[:0:-1], right])
    else:
        x = graded_axis(0.0, hi, spec.h, R_max, spec.ratio, cap)
    y = graded_vertical(Y_max, spec.first_layer * Y_max, spec.ratio, cap)
    Nx, Ny = x.size, y.size
    rad = u.geometry == "radial"
    xx = np.abs(x)
    # far-field Dirichlet data from the Poisson integral
    V = np.zeros((Nx, Ny))
    V[:, 0] = u(xx)
    V[:, -1] = poisson_values(u, xx, np.full(Nx, y[-1]))
    V[-1, 1:] = poisson_values(u, np.full(Ny - 1, xx[-1]), y[1:])
    if not rad:
        V[0, 1:] = poisson_values(u, np.full(Ny - 1, xx[0]), y[1:])
    # cell geometry
    xm = 0.5 * (x[1:] + x[:-1])
    ym = 0.5 * (y[1:] + y[:-1])
    xe = np.concatenate([[x[0] if rad else x[0]], xm, [x[-1]]])
    ye = np.concatenate([[y[0]], ym, [y[-1]]])
    if rad:
        wx_cell = (xe[1:] ** n - xe[:-1] ** n) / n      # int rho^{n-1} over the cell
        wx_face = xm ** (n - 1)
    else:
        wx_cell = xe[1:] - xe[:-1]
        wx_face = np.ones(Nx - 1)
    wy_cell = np.array([_int_pow(ye[j], ye[j + 1], a) for j in range(Ny)])
    wy_face = ym ** a
    unknown = np.zeros((Nx, Ny), dtype=bool)
    unknown[(0 if rad else 1):-1, 1:-1] = True
    idx = -np.ones((Nx, Ny), dtype=int)
    idx[unknown] = np.arange(unknown.sum())
    rows, cols, vals = [], [], []
    rhs = np.zeros(unknown.sum())
    I, J = np.nonzero(unknown)
    for i, j in zip(I, J):
        k = idx[i, j]
        diag = 0.0
        nbrs = []
        if i + 1 < Nx:
            nbrs.append((i + 1, j, wx_face[i] * wy_cell[j] / (x[i + 1] - x[i])))
        if i - 1 >= 0:
            nbrs.append((i - 1, j, wx_face[i - 1] * wy_cell[j] / (x[i] - x[i - 1])))
        nbrs.append((i, j + 1, wx_cell[i] * wy_face[j] / (y[j + 1] - y[j])))
        nbrs.append((i, j - 1, wx_cell[i] * wy_face[j - 1] / (y[j] - y[j - 1])))
        for ii, jj, c in nbrs:
            diag += c
            if unknown[ii, jj]:
                rows.append(k)
                cols.append(idx[ii, jj])
                vals.append(-c)
            else:
                rhs[k] += c * V[ii, jj]
        rows.append(k)
        cols.append(k)
        vals.append(diag)
    M = sparse.csc_matrix((vals, (rows, cols)), shape=(rhs.size, rhs.size))
    sol = spsolve(M, rhs)
    resid = float(np.linalg.norm(M @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if not np.all(np.isfinite(sol)) or resid > 1e-8:
        raise SolverError(f"linear solve failed: relative residual {resid:.3g} after 1 direct solve")
    V[unknown] = sol
    vx = np.gradient(V, x, axis=0, edge_order=2)
    vy = np.gradient(V, y, axis=1, edge_order=2)
    if rad:
        vx[0, :] = 0.0
    fld = ExtensionField(n, s, u.geometry, x, y, V, vx, vy, provenance="pde", trace=u)
    fld.vxx = np.gradient(vx, x, axis=0, edge_order=2)
    fld.vyy = np.gradient(vy, y, axis=1, edge_order=2)
    fld.vxy = np.gradient(vx, y, axis=1, edge_order=2)
    fld.info.update(residual=resid, iterations=1, R_max=R_max, Y_max=Y_max, shape=(Nx, Ny))
    return fld


def _int_pow(a0, b0, a):
    """int_{a0}^{b0} y^a dy."""
    if b0 <= a0:
        return 0.0
    if a == 0:
        return b0 - a0
    return (b0 ** (a + 1) - max(a0, 0.0) ** (a + 1)) / (a + 1)


# ---------------------------------------------------------------- DtN

def _flux_samples(fld: ExtensionField, layers: int = 3):
    """Heights and values of y^a v_y on the lowest layers."""
    a = fld.a
    if fld.provenance == "pde":
        V, y = fld.v, fld.y
        hts = 0.5 * (y[1:layers + 1] + y[:layers])
        g = (V[:, 1:layers + 1] - V[:, :layers]) / (y[1:layers + 1] - y[:layers]) * hts ** a
        return hts, g
    hts = fld.y[1:layers + 1]
    return hts, fld.vy[:, 1:layers + 1] * hts ** a


def dtn(fld: ExtensionField, rtol: float = 2e-2) -> TraceFunction:
    """-d_s lim y^a v_y at the trace, by one-sided extrapolation from the lowest layers."""
    s = fld.s
    hts, g = _flux_samples(fld, 3)
    e = 2 - 2 * s
    # two-layer: linear in y^{2-2s}
    t1, t2 = hts[0] ** e, hts[1] ** e
    two = g[:, 0] - t1 * (g[:, 1] - g[:, 0]) / (t2 - t1)
    # three-layer: basis 1, y^{2-2s}, y^2
    B = np.stack([np.ones(3), hts ** e, hts ** 2], axis=1)
    if abs(e - 1) < 1e-12:
        B[:, 2] = hts ** 2
    three = np.linalg.solve(B, g.T)[0]
    scale = max(float(np.max(np.abs(three))), 1e-300)
    gap = float(np.max(np.abs(two - three))) / scale
    if gap > rtol:
        warnings.warn(f"two- and three-layer extrapolations differ by {gap:.3g}",
                      ExtrapolationWarning, stacklevel=2)
    vals = -ds_constant(s) * three
    x = fld.x
    t = TraceFunction(x, vals, n=fld.n, geometry=fld.geometry, s=s, kind="linear")
    t.extrapolation_gap = gap
    return t


# ---------------------------------------------------------------- geometric quantity

def hessian_frame(fld: ExtensionField, i=None, j=None):
    """Gradient and Hessian blocks in the frame (e_rho, tangential, e_y).

    Returns (g_x, g_y, H_xx, H_xy, H_yy, T) with T = v_rho/rho the tangential eigenvalue of
    multiplicity n-1 (zero for the line geometry).
    """
    sl = (slice(None) if i is None else i, slice(None) if j is None else j)
    gx, gy = fld.vx[sl], fld.vy[sl]
    hxx, hxy, hyy = fld.vxx[sl], fld.vxy[sl], fld.vyy[sl]
    if fld.geometry == "radial" and fld.n > 1:
        X = np.broadcast_to(fld.x[:, None], fld.v.shape)[sl]
        with np.errstate(divide="ignore", invalid="ignore"):
            T = np.where(X > 0, gx / np.where(X > 0, X, 1.0), hxx)
    else:
        T = np.zeros_like(gx)
    return gx, gy, hxx, hxy, hyy, T


def geometric_quantity_from(gx, gy, hxx, hxy, hyy, T, m: int, threshold: float) -> np.ndarray:
    """A^2 = |D^2 v|^2 - |D^2 v nu|^2 with m = n-1 tangential directions."""
    full = hxx ** 2 + 2 * hxy ** 2 + hyy ** 2 + m * T ** 2
    g = np.hypot(gx, gy)
    safe = np.where(g > threshold, g, 1.0)
    nx, ny = gx / safe, gy / safe
    hn_x = hxx * nx + hxy * ny
    hn_y = hxy * nx + hyy * ny
    A2 = np.maximum(full - hn_x ** 2 - hn_y ** 2, 0.0)
    return np.where(g > threshold, A2, 0.0)


def geometric_quantity(fld: ExtensionField, squared: bool = False) -> np.ndarray:
    """The quantity A at every node (s = 1/2); A = 0 where |grad v| falls below threshold."""
    if abs(fld.s - 0.5) > 1e-14:
        raise ValueError("the geometric quantity is defined for s = 1/2 only")
    if fld.vxx is None:
        finish_field(fld)
    thr = 1e-12 * max(fld.scale(), float(np.max(fld.grad_norm)))
    m = fld.n - 1 if fld.geometry == "radial" else 0
    A2 = geometric_quantity_from(*hessian_frame(fld), m, thr)
    return A2 if squared else np.sqrt(A2)


def field_from_function(geometry: str, n: int, grid: ExtensionGrid, v, grad=None, hess=None,
                        s: float = 0.5) -> ExtensionField:
    """Wrap an explicit function; derivatives are analytic when given, else differenced."""
    X, Y = np.meshgrid(grid.x, grid.y, indexing="ij")
    V = v(X, Y)
    if grad is None:
        vx = _d1(V, grid.x, 0)
        vy = _d1(V, grid.y, 1)
    else:
        vx, vy = grad(X, Y)
    fld = ExtensionField(n, s, geometry, np.asarray(grid.x, float), np.asarray(grid.y, float),
                         V, vx, vy, provenance="explicit")
    if hess is None:
        finish_field(fld)
    else:
        fld.vxx, fld.vxy, fld.vyy = hess(X, Y)
    return fld
