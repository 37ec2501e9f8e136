"""Dual-function probes, primal/dual gaps and the support-stabilization detector."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .problem import eval_aug_lagrangian, grad_smooth_augmented, smooth_augmented_value
from .prox import prox_full, prox_gradient_map
from .rng import make_rng

INNER_CAP = 2000
SUPPORT_TOL = 1e-8


class InnerSolveError(RuntimeError):
    """The inner minimization of ``L(.; y)`` did not reach its tolerance."""


def _closed_form_ok(p):
    return (
        p.smooth.loss in ("zero", "quadratic")
        and p.nonsmooth.is_zero()
        and p.sets.is_unbounded()
    )


def _solve_quadratic(p, y):
    sm = p.smooth
    H = p.rho * (p.E.T @ p.E)
    rhs = -sm.b + p.E.T @ (y + p.rho * p.q)
    if sm.loss == "quadratic":
        H = H + sm.A.T @ sm.A
        rhs = rhs + sm.A.T @ sm.target
    try:
        c = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return None
    if np.min(np.diag(c)) ** 2 < 1e-12 * max(1.0, float(np.max(np.diag(H)))):
        return None
    return np.linalg.solve(H, rhs)


def _lagrangian_smooth(p, x, y):
    return smooth_augmented_value(p, x) + float(y @ (p.q - p.E @ x))


def _inner_fista(p, y, tol, x0, max_iter):
    # FISTA with backtracking and gradient-based adaptive restart on L(.; y)
    colE = np.einsum("ij,ij->j", p.E, p.E) if p.m else np.zeros(p.n)
    colA = np.einsum("ij,ij->j", p.smooth.A, p.smooth.A) if p.smooth.A.shape[0] else np.zeros(p.n)
    L = max(float(np.max(p.smooth.curvature_bound * colA + p.rho * colE, initial=0.0)), 1e-12)
    x = np.zeros(p.n) if x0 is None else np.array(x0, dtype=float)
    z, t = x.copy(), 1.0
    for it in range(max_iter):
        gz = grad_smooth_augmented(p, z, y)
        fz = _lagrangian_smooth(p, z, y)
        while True:
            xn = prox_full(p, z - gz / L, 1.0 / L)
            d = xn - z
            dd = float(d @ d)
            if _lagrangian_smooth(p, xn, y) <= fz + float(gz @ d) + 0.5 * L * dd + 1e-13 * abs(fz):
                break
            # near the optimum the value test drowns in rounding; the curvature
            # form is equivalent for quadratics and does not cancel
            if float((grad_smooth_augmented(p, xn, y) - gz) @ d) <= L * dd:
                break
            L *= 2.0
        if float(gz @ (xn - x)) > 0:
            t = 1.0
        tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = xn + ((t - 1.0) / tn) * (xn - x)
        x, t = xn, tn
        if it % 10 == 9 and prox_gradient_map(p, x, y).norm <= tol:
            return x
    raise InnerSolveError(f"inner solve did not reach prox-gradient norm {tol:g} in {max_iter} iterations")


def dual_value(p, y, inner_tol=1e-10, *, cap=INNER_CAP, x0=None, max_iter=100000):
    """``d(y) = min_x L(x; y)`` and a minimizer.

    Uses a linear solve when ``h = 0``, the sets are unbounded and the
    smooth part is a positive definite quadratic; FISTA otherwise.
    """
    if not inner_tol > 0:
        raise ValueError("inner_tol must be positive")
    if p.n > cap:
        raise ValueError(f"dual_value is limited to n <= {cap}, got n = {p.n}")
    y = np.asarray(y, dtype=float)
    x = _solve_quadratic(p, y) if _closed_form_ok(p) else None
    if x is None:
        x = _inner_fista(p, y, inner_tol, x0, max_iter)
    return eval_aug_lagrangian(p, x, y), x


@dataclass(frozen=True)
class GapEstimate:
    primal_gap: float
    dual_gap: float
    d_value: float
    inner_tolerance: float

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict())


def gap_estimates(p, x, y, d_star=None, inner_tol=1e-10):
    """``Delta_p = L(x; y) - d(y)`` and, if ``d_star`` is given, ``Delta_d = d* - d(y)``."""
    d, _ = dual_value(p, y, inner_tol)
    dual_gap = None if d_star is None else float(d_star) - d
    return GapEstimate(eval_aug_lagrangian(p, x, y) - d, dual_gap, d, inner_tol)


def dual_gradient(p, y, inner_tol=1e-11, x0=None):
    """``grad d(y) = q - E x(y)`` with ``x(y)`` from :func:`dual_value`."""
    _, x = dual_value(p, y, inner_tol, x0=x0)
    return p.q - p.E @ x, x


def dual_gradient_lipschitz_probe(p, trials, seed, *, centers=None, radius=1.0, inner_tol=1e-11):
    """Worst ``||grad d(y') - grad d(y)|| / ||y' - y||`` over random pairs.

    Pairs are drawn as Gaussian perturbations of scale ``radius`` around
    ``centers`` (e.g. recorded dual iterates; default the origin). Identical
    pairs are skipped.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = make_rng(seed)
    centers = np.zeros((1, p.m)) if centers is None else np.atleast_2d(np.asarray(centers, float))
    worst = 0.0
    for i in range(trials):
        c = centers[i % len(centers)]
        y1 = c + radius * rng.standard_normal(p.m)
        y2 = y1 + radius * rng.standard_normal(p.m)
        dy = float(np.linalg.norm(y2 - y1))
        if dy == 0.0:
            continue
        g1, x1 = dual_gradient(p, y1, inner_tol)
        g2, _ = dual_gradient(p, y2, inner_tol, x0=x1)
        worst = max(worst, float(np.linalg.norm(g2 - g1)) / dy)
    return worst


def support_pattern(x, tol=SUPPORT_TOL):
    """Componentwise sign of ``x`` with ``|x_i| <= tol`` mapped to 0."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    x = np.asarray(x, dtype=float)
    s = np.sign(x).astype(np.int8)
    s[np.abs(x) <= tol] = 0
    return s


def stabilization_index(patterns, target=None):
    """First index from which every pattern equals ``target`` (default: the last one).

    Returns ``None`` if the final pattern differs from ``target``.
    """
    if not len(patterns):
        raise ValueError("no patterns given")
    target = patterns[-1] if target is None else np.asarray(target)
    idx = None
    for i in range(len(patterns) - 1, -1, -1):
        if np.array_equal(patterns[i], target):
            idx = i
        else:
            break
    return idx


def constant_stepsize_search(p, surrogate, d_star, *, alpha0=None, window=50, max_halvings=30, inner_tol=1e-10):
    """Largest ``alpha = alpha0 / 2^j`` whose combined gap trace is nonincreasing.

    Runs ``window`` BSUM-M sweeps from the origin with constant stepsize
    ``alpha`` and accepts the first ``alpha`` for which ``Delta_p + Delta_d``
    never increases by more than ``inner_tol`` per sweep. ``alpha0``
    defaults to ``rho``. Returns ``(alpha, gap_trace)``.
    """
    from .solvers import IterateState, StepsizeSchedule, _Engine

    alpha = p.rho if alpha0 is None else float(alpha0)
    eng = _Engine(p, surrogate)
    for _ in range(max_halvings + 1):
        st = IterateState.initial(p)
        gaps, x_warm = [], None
        ok = True
        for r in range(window + 1):
            d, x_warm = dual_value(p, st.y, inner_tol, x0=x_warm)
            gaps.append(eval_aug_lagrangian(p, st.x, st.y) - 2.0 * d + float(d_star))
            if r and gaps[-1] > gaps[-2] + 4.0 * inner_tol * max(1.0, abs(gaps[-2])):
                ok = False
                break
            if r < window:
                eng.bsum_m(st, StepsizeSchedule("constant", alpha).alphas(r + 1, 1))
        if ok:
            return alpha, gaps
        alpha *= 0.5
    raise RuntimeError(f"no nonincreasing gap trace after {max_halvings} halvings")
