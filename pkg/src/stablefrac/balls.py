"""Quadrature on half-balls of R^{n+1}_+ for fields that are radial in x' (or live on a line)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .fracops import sphere_area
from .quadrature import panel_rule, refine_breaks


@dataclass
class BallRule:
    """Nodes in field coordinates (px = |x'| or x, py = y) with volume weights.

    ``dist`` is the distance to the center, ``om_rho`` and ``om_y`` the components of the unit
    offset direction along e_rho and e_y, so that w_r = om_rho v_rho + om_y v_y.
    """
    px: np.ndarray
    py: np.ndarray
    w: np.ndarray
    dist: np.ndarray
    om_rho: np.ndarray
    om_y: np.ndarray

    def integrate(self, vals) -> float:
        return float(np.sum(self.w * vals))


def _angle_rule(lo, hi, panels, q):
    if hi <= lo:
        return np.empty(0), np.empty(0)
    return panel_rule(np.linspace(lo, hi, panels + 1), q)


def _directions(n, x0, y0, radius, panels, q, symmetric=True):
    """Direction angles (theta from +y, psi around e1) with angular weights."""
    cuts = [0.0]
    if y0 <= 0:
        top = math.pi / 2
    else:
        top = math.pi
        if y0 < radius:
            cuts.append(math.pi / 2)
            cuts.append(math.acos(-y0 / radius))
        else:
            cuts.append(math.pi / 2)
    cuts.append(top)
    cuts = sorted(set(cuts))
    th, wth = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        t, w = _angle_rule(a, b, panels, q)
        th.append(t)
        wth.append(w)
    th, wth = np.concatenate(th), np.concatenate(wth)
    if n == 1:
        # both half planes x > x0 and x < x0: theta in (-top, top)
        th = np.concatenate([th, -th])
        wth = np.concatenate([wth, wth])
        return th, wth, np.zeros(1), np.ones(1)
    wth = wth * np.sin(th) ** (n - 1)
    if x0 == 0.0 and symmetric:
        return th, wth, np.array([math.pi / 2]), np.array([sphere_area(n)])
    ps, wps = _angle_rule(0.0, math.pi, panels, q)
    wps = wps * sphere_area(n - 1) * np.sin(ps) ** (n - 2)
    return th, wth, ps, wps


def ball_rule(n: int, center=(0.0, 0.0), radius: float = 1.0, breaks=(), *, q: int = 6,
              angle_panels: int = 6, max_width: float | None = None, limit=None) -> BallRule:
    """Rule on B_radius(center) intersected with {y > 0}.

    The center is (x0 e1, y0).  ``breaks`` are radial kinks of the integrand (for instance
    the knots of a cutoff).  ``limit(om_rho1, om_y)`` optionally caps the radius per direction,
    where om_rho1 is the e1 component of the direction.
    """
    x0, y0 = float(center[0]), float(center[1])
    if y0 < 0:
        raise ValueError("center must lie in the closed upper half space")
    th, wth, ps, wps = _directions(n, x0, y0, radius, angle_panels, q, symmetric=limit is None)
    mw = radius / 4 if max_width is None else max_width
    base = np.array(sorted({0.0, radius, *[b for b in breaks if 0 < b < radius]}))
    T, P = np.meshgrid(th, ps, indexing="ij")
    WA = np.outer(wth, wps)
    if n == 1:
        e1 = np.sin(T)
        eperp = np.zeros_like(T)
    else:
        e1 = np.sin(T) * np.cos(P)
        eperp = np.sin(T) * np.sin(P)
    ey = np.cos(T)
    # per-direction cap from y >= 0 and the optional limit
    cap = np.full(T.shape, radius)
    neg = ey < -1e-15
    cap[neg] = np.minimum(cap[neg], y0 / -ey[neg])
    if limit is not None:
        cap = np.minimum(cap, limit(e1, ey))
    out = {k: [] for k in ("px", "py", "w", "d", "orho", "oy")}
    # group directions sharing the full radius to reuse one radial rule
    full = cap >= radius * (1 - 1e-14)
    r_full, w_full = panel_rule(refine_breaks(base, mw), q)
    groups = [(full, r_full, w_full, None)]
    for idx in zip(*np.nonzero(~full)):
        c = cap[idx]
        if c <= 0:
            continue
        b = refine_breaks(np.concatenate([base[base < c], [c]]), mw)
        r, w = panel_rule(b, q)
        m = np.zeros_like(full)
        m[idx] = True
        groups.append((m, r, w, None))
    for mask, r, wr, _ in groups:
        if not np.any(mask):
            continue
        a1, ap, ay, wa = e1[mask], eperp[mask], ey[mask], WA[mask]
        R = r[None, :]
        X1 = x0 + R * a1[:, None]
        XP = R * ap[:, None]
        Y = y0 + R * ay[:, None]
        if n == 1:
            px = X1
            orho = np.broadcast_to(a1[:, None], X1.shape)
        else:
            px = np.hypot(X1, XP)
            safe = np.where(px > 0, px, 1.0)
            orho = np.where(px > 0, (a1[:, None] * X1 + ap[:, None] * XP) / safe,
                            np.hypot(a1, ap)[:, None] + 0 * R)
        out["px"].append(px.ravel())
        out["py"].append(np.maximum(Y, 0.0).ravel())
        out["w"].append((wa[:, None] * wr[None, :] * R ** n).ravel())
        out["d"].append(np.broadcast_to(R, X1.shape).ravel())
        out["orho"].append(np.asarray(orho).ravel())
        out["oy"].append(np.broadcast_to(ay[:, None], X1.shape).ravel())
    cat = {k: np.concatenate(v) if v else np.empty(0) for k, v in out.items()}
    return BallRule(cat["px"], cat["py"], cat["w"], cat["d"], cat["orho"], cat["oy"])


def trace_rule(n: int, center=(0.0, 0.0), radius: float = 1.0, breaks=(), *, q: int = 8,
               panels: int = 12) -> BallRule:
    """Rule on the flat footprint B_radius(center) intersected with {y = 0}."""
    x0, y0 = float(center[0]), float(center[1])
    if y0 >= radius:
        z = np.empty(0)
        return BallRule(z, z, z, z, z, z)
    rt = math.sqrt(radius ** 2 - y0 ** 2)
    # kinks of a profile in dist = sqrt(t^2 + y0^2)
    tb = [math.sqrt(b * b - y0 * y0) for b in breaks if y0 < b < radius]
    base = np.array(sorted({0.0, rt, *tb}))
    t, wt = panel_rule(refine_breaks(base, rt / panels), q)
    if n == 1:
        px = np.concatenate([x0 + t, x0 - t])
        w = np.concatenate([wt, wt])
        tt = np.concatenate([t, t])
    elif x0 == 0.0:
        px, w, tt = t, sphere_area(n) * t ** (n - 1) * wt, t
    else:
        ps, wps = _angle_rule(0.0, math.pi, 2 * panels, q)
        wps = wps * sphere_area(n - 1) * np.sin(ps) ** (n - 2)
        T, P = np.meshgrid(t, ps, indexing="ij")
        px = np.hypot(x0 + T * np.cos(P), T * np.sin(P)).ravel()
        w = (np.outer(wt * t ** (n - 1), wps)).ravel()
        tt = T.ravel()
    d = np.sqrt(tt * tt + y0 * y0)
    z = np.zeros_like(px)
    return BallRule(px, z, w, d, z, z)


def half_ball_volume(n: int, radius: float) -> float:
    """|B_radius^+| in R^{n+1}."""
    N = n + 1
    return 0.5 * math.pi ** (N / 2) / math.gamma(N / 2 + 1) * radius ** N


def lens_volume(n: int, d: float) -> float:
    """Volume of the upper half of the intersection of two balls of radius d in R^{n+1}
    whose centers lie on {y = 0} at distance d."""
    N = n + 1
    unit = math.pi ** (N / 2) / math.gamma(N / 2 + 1)
    # two caps of height d/2; a cap of height h is (1/2) V d^N I_{(2dh - h^2)/d^2}((N+1)/2, 1/2)
    full = unit * d ** N * special.betainc((N + 1) / 2, 0.5, 0.75)
    return 0.5 * full


def lens_limit(d: float):
    """Per-direction radius of the lens seen from one center (partner along +e1)."""
    return lambda e1, ey: np.where(e1 > 0, np.minimum(d, 2 * d * np.maximum(e1, 0.0)), 0.0)
