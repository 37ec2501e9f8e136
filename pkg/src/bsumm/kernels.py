"""Scalar-block coordinate loops shared by every block-coordinate variant.

All kernels keep two caches coherent with ``x``: ``Ax`` (the loss argument) and
``res = q - E x`` (the constraint residual). Each scalar update
minimizes the model

    c_k/2 (v - x_k)^2 + grad_k (v - x_k) + lam_k |v|    over lo_k <= v <= hi_k

which is the exact block minimizer for quadratic losses (``c_k`` the block
curvature) and the prox-linear step otherwise (``c_k = tau_k``).

Compiled with numba unless ``BSUMM_DISABLE_NUMBA`` is set; see ``_accel``.
"""

import numpy as np

from ._accel import jit

LOSS_CODES = {"zero": 0, "quadratic": 1, "logistic": 2}


@jit
def scalar_update(k, x, Ax, res, y, ET, AT, target, a_target, lin, loss, lam, lo, hi, curv, rho):
    g = lin[k]
    if loss == 1:
        a = AT[k]
        g += np.dot(a, Ax) - a_target[k]
    elif loss == 2:
        a = AT[k]
        g -= np.dot(a, target / (1.0 + np.exp(target * Ax)))
    if ET.shape[1] > 0:
        e = ET[k]
        g -= rho * np.dot(e, res) + np.dot(e, y)
    c = curv[k]
    v = x[k] - g / c
    t = abs(v) - lam[k] / c
    if t > 0.0:
        nv = t if v > 0.0 else -t
    else:
        nv = 0.0
    if nv < lo[k]:
        nv = lo[k]
    elif nv > hi[k]:
        nv = hi[k]
    d = nv - x[k]
    if d != 0.0:
        x[k] = nv
        if ET.shape[1] > 0:
            res -= d * ET[k]
        if loss != 0:
            Ax += d * AT[k]


@jit
def scalar_pass(order, x, Ax, res, y, ET, AT, target, a_target, lin, loss, lam, lo, hi, curv, rho):
    """Gauss-Seidel pass over the coordinates listed in ``order``."""
    for i in range(order.size):
        scalar_update(order[i], x, Ax, res, y, ET, AT, target, a_target, lin, loss, lam, lo, hi, curv, rho)


@jit
def bsum_m_sweeps(alphas, x, Ax, res, y, ET, AT, target, a_target, lin, loss, lam, lo, hi, curv, rho):
    """One dual ascent step followed by a full cyclic pass, per entry of ``alphas``."""
    n = x.size
    for s in range(alphas.size):
        y += alphas[s] * res
        for k in range(n):
            scalar_update(k, x, Ax, res, y, ET, AT, target, a_target, lin, loss, lam, lo, hi, curv, rho)


@jit
def rbsum_m_steps(indices, alphas, x, Ax, res, y, ET, AT, target, a_target, lin, loss, lam, lo, hi, curv, rho):
    """Randomized steps: index 0 is a dual step with ``alphas[t]``, ``k >= 1`` updates block ``k-1``."""
    for t in range(indices.size):
        j = indices[t]
        if j == 0:
            y += alphas[t] * res
        else:
            scalar_update(j - 1, x, Ax, res, y, ET, AT, target, a_target, lin, loss, lam, lo, hi, curv, rho)
