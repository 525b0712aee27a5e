"""Composite Gauss-Legendre rules on panel partitions."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _gl01(q: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(q)
    return (x + 1) / 2, w / 2


def gl01(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = _gl01(int(q))
    return x.copy(), w.copy()


def panel_rule(breaks, q: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule over consecutive breakpoints (sorted, duplicates dropped)."""
    b = np.unique(np.asarray(breaks, dtype=float))
    if b.size < 2:
        return np.empty(0), np.empty(0)
    lo, hi = b[:-1], b[1:]
    x0, w0 = _gl01(int(q))
    width = hi - lo
    nodes = lo[:, None] + width[:, None] * x0[None, :]
    weights = width[:, None] * w0[None, :]
    return nodes.ravel(), weights.ravel()


def geometric_breaks(length: float, levels: int = 40, ratio: float = 2.0) -> np.ndarray:
    """Points length*ratio^-k, k = levels..0, graded toward zero."""
    k = np.arange(levels, -1, -1, dtype=float)
    return length * ratio ** (-k)


def refine_breaks(breaks, max_width: float) -> np.ndarray:
    """Subdivide panels wider than max_width."""
    b = np.unique(np.asarray(breaks, dtype=float))
    out = [b[:1]]
    for lo, hi in zip(b[:-1], b[1:]):
        m = max(1, int(np.ceil((hi - lo) / max_width)))
        out.append(np.linspace(lo, hi, m + 1)[1:])
    return np.concatenate(out)


def tensor_rule(n: int, panels: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor composite rule on the unit cube (0,1)^n."""
    x1, w1 = panel_rule(np.linspace(0.0, 1.0, panels + 1), q)
    grids = np.meshgrid(*([x1] * n), indexing="ij")
    wgrids = np.meshgrid(*([w1] * n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return pts, wts
