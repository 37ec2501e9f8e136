"""Closed-form proximal maps for mixed l1 / group-l2 terms over boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import coordinate_weights, grad_smooth_augmented


def soft_threshold(v, lam):
    """``sign(v) * max(|v| - lam, 0)``; works elementwise on arrays."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError(f"threshold must be nonnegative, got {lam}")
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def group_soft_threshold(v, w):
    """Minimizer of ``w ||u|| + 0.5 ||u - v||^2``; returns 0 for ``v = 0``."""
    if w < 0:
        raise ValueError(f"group weight must be nonnegative, got {w}")
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv <= w or nv == 0.0:
        return np.zeros_like(v)
    return (1.0 - w / nv) * v


def _prox_segment(v, lam, lo, hi, groups, scale):
    # Shrink, clamp, then group-shrink. The last step commutes with the first
    # two because Problem only admits sign-cone bounds inside weighted groups.
    u = soft_threshold(v, scale * lam)
    u = np.clip(u, lo, hi)
    for idx, w in groups:
        if w > 0:
            u[idx] = group_soft_threshold(u[idx], scale * w)
    return u


def prox_block(p, k, v, scale=1.0):
    """``argmin_u scale*h_k(u) + 0.5||u - v||^2`` over the box ``X_k``."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    sl = p.block(k)
    v = np.asarray(v, dtype=float)
    if v.shape != (sl.stop - sl.start,):
        raise ValueError(f"block {k} has size {sl.stop - sl.start}, got vector of shape {v.shape}")
    groups = [(list(g.indices), g.weight) for g in p.nonsmooth.groups[k]]
    return _prox_segment(
        v, p.nonsmooth.lam[k], p.sets.lower[sl], p.sets.upper[sl], groups, scale
    )


def prox_full(p, v, scale=1.0):
    """Block-separable prox of ``scale*h`` plus the box indicator on all of ``x``."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    lam, groups = coordinate_weights(p)
    return _prox_segment(np.asarray(v, dtype=float), lam, p.sets.lower, p.sets.upper, groups, scale)


@dataclass(frozen=True, eq=False)
class ProxGradientMap:
    value: np.ndarray
    norm: float


def prox_gradient_map(p, x, y=None):
    """``x - prox_{h+box}(x - grad_x(L(x; y) - h(x)))`` and its norm."""
    x = np.asarray(x, dtype=float)
    if y is None:
        y = np.zeros(p.m)
    g = grad_smooth_augmented(p, x, y)
    val = x - prox_full(p, x - g, 1.0)
    return ProxGradientMap(val, float(np.linalg.norm(val)))
