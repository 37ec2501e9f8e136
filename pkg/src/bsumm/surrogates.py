"""Per-block upper-bound models of the smooth augmented Lagrangian.

Two kinds are supported:

``exact``
    the block restriction of ``g(x) + rho/2 ||E x - q||^2`` itself;
``prox_linear``
    its linearization at the current point plus ``tau_k/2 ||v - x_k||^2``.

:func:`check_assumption_b` verifies the majorization contract (tightness,
dominance, gradient match, strong convexity, Lipschitz gradient) by sampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .prox import prox_block
from .rng import make_rng

KINDS = ("exact", "prox_linear")

TIGHT_TOL = 1e-9
DOMINANCE_TOL = 1e-9
GRAD_TOL = 1e-6
MODULUS_TOL = 1e-9
FD_STEP = 1e-5
GAMMA_FLOOR = 1e-12


def _block_gram(M, sl):
    Mk = M[:, sl]
    return Mk.T @ Mk


def _block_spectra(p):
    """(lambda_min, lambda_max) of A_k^T A_k and E_k^T E_k for every block."""
    A, E = p.smooth.A, p.E
    if p.partition.is_scalar:
        a2 = np.einsum("ij,ij->j", A, A) if A.shape[0] else np.zeros(p.n)
        e2 = np.einsum("ij,ij->j", E, E) if E.shape[0] else np.zeros(p.n)
        return (a2, a2), (e2, e2)
    amin, amax, emin, emax = (np.zeros(p.K) for _ in range(4))
    for k in range(p.K):
        sl = p.block(k)
        wa = np.linalg.eigvalsh(_block_gram(A, sl))
        we = np.linalg.eigvalsh(_block_gram(E, sl))
        amin[k], amax[k] = max(wa[0], 0.0), wa[-1]
        emin[k], emax[k] = max(we[0], 0.0), we[-1]
    return (amin, amax), (emin, emax)


def tau_lower_bound(p):
    """Certified per-block lower bound on ``tau_k``.

    ``curv * lmax(A_k^T A_k) + rho * lmax(E_k^T E_k)``, where ``curv`` bounds
    the loss Hessian (1 for quadratic, max(t^2)/4 for logistic).
    """
    (_, amax), (_, emax) = _block_spectra(p)
    return p.smooth.curvature_bound * amax + p.rho * emax


@dataclass(frozen=True, eq=False)
class Surrogate:
    kind: str
    gamma: np.ndarray
    lipschitz: np.ndarray
    tau: np.ndarray = None
    certified: bool = True
    hess: tuple = field(default=None, repr=False)

    @property
    def gamma_min(self):
        return float(np.min(self.gamma))


def exact_surrogate(p):
    """The block function itself. Fails if some block is not strongly convex."""
    sq = p.smooth.loss == "quadratic"
    if p.partition.is_scalar:
        (amin, amax), (emin, emax) = _block_spectra(p)
        lo = p.rho * emin + (amin if sq else 0.0)
        hi = p.rho * emax + p.smooth.curvature_bound * amax
        hess = None
    else:
        lo, hi = np.zeros(p.K), np.zeros(p.K)
        hess = []
        for k in range(p.K):
            sl = p.block(k)
            G_E = p.rho * _block_gram(p.E, sl)
            G_A = _block_gram(p.smooth.A, sl)
            H = G_E + (G_A if sq else 0.0)
            w = np.linalg.eigvalsh(H)
            lo[k] = w[0]
            hi[k] = w[-1] if sq else np.linalg.eigvalsh(G_E + p.smooth.curvature_bound * G_A)[-1]
            hess.append(H if sq or p.smooth.loss == "zero" else None)
        hess = tuple(hess)
    bad = np.flatnonzero(lo < GAMMA_FLOOR)
    if bad.size:
        raise ValueError(
            f"exact surrogate is not strongly convex on block(s) {bad[:5].tolist()}: "
            f"smallest block-Hessian eigenvalue {float(lo[bad[0]]):.3g}"
        )
    return Surrogate("exact", np.asarray(lo, float), np.asarray(hi, float), hess=hess)


def prox_linear_surrogate(p, tau=None, tau_scale=1.0, certify=True):
    """Linearization plus a proximal term with weight ``tau_k`` per block.

    By default ``tau_k`` is the certified bound from :func:`tau_lower_bound`
    times ``tau_scale``. With ``certify=True`` any ``tau_k`` below the bound
    is rejected.
    """
    bound = tau_lower_bound(p)
    if tau is None:
        tau = bound * float(tau_scale)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (p.K,)).copy()
    if np.any(tau <= 0):
        raise ValueError("tau must be positive on every block")
    below = tau < bound * (1.0 - 1e-12)
    if certify and np.any(below):
        k = int(np.flatnonzero(below)[0])
        raise ValueError(f"tau[{k}]={tau[k]:.6g} is below its certified bound {bound[k]:.6g}")
    return Surrogate("prox_linear", tau.copy(), tau.copy(), tau=tau, certified=not np.any(below))


def make_surrogate(p, kind, **kw):
    if kind == "exact":
        return exact_surrogate(p)
    if kind == "prox_linear":
        return prox_linear_surrogate(p, **kw)
    raise ValueError(f"unknown surrogate kind {kind!r}; expected one of {KINDS}")


class _Linearization:
    """Cached ``A x`` and ``E x - q`` for cheap block-restricted evaluations."""

    def __init__(self, p, x):
        self.p = p
        self.x = np.asarray(x, dtype=float)
        self.Ax = p.smooth.A @ self.x
        self.r = p.E @ self.x - p.q
        self.lin = float(p.smooth.b @ self.x)
        self.base = p.smooth.loss_value(self.Ax) + self.lin + 0.5 * p.rho * float(self.r @ self.r)

    def value(self, k, v):
        """Smooth augmented value at ``(v, x_{-k})``."""
        p = self.p
        sl = p.block(k)
        d = v - self.x[sl]
        z = self.Ax + p.smooth.A[:, sl] @ d
        r = self.r + p.E[:, sl] @ d
        return p.smooth.loss_value(z) + self.lin + float(p.smooth.b[sl] @ d) + 0.5 * p.rho * float(r @ r)

    def grad(self, k, v=None):
        """Block-k gradient of the smooth augmented part at ``(v, x_{-k})``."""
        p = self.p
        sl = p.block(k)
        if v is None:
            z, r = self.Ax, self.r
        else:
            d = v - self.x[sl]
            z = self.Ax + p.smooth.A[:, sl] @ d
            r = self.r + p.E[:, sl] @ d
        return p.smooth.A[:, sl].T @ p.smooth.loss_grad(z) + p.smooth.b[sl] + p.rho * (p.E[:, sl].T @ r)


def _u_value(s, lin, k, v):
    if s.kind == "exact":
        return lin.value(k, v)
    d = v - lin.x[lin.p.block(k)]
    return lin.base + float(lin.grad(k) @ d) + 0.5 * s.tau[k] * float(d @ d)


def _u_grad(s, lin, k, v):
    if s.kind == "exact":
        return lin.grad(k, v)
    return lin.grad(k) + s.tau[k] * (v - lin.x[lin.p.block(k)])


def surrogate_value(s, p, k, v_k, x):
    """``u_k(v_k; x)``."""
    return _u_value(s, _Linearization(p, x), k, np.asarray(v_k, dtype=float))


def surrogate_grad(s, p, k, v_k, x):
    """Gradient of ``u_k(.; x)`` at ``v_k``."""
    return _u_grad(s, _Linearization(p, x), k, np.asarray(v_k, dtype=float))


def block_step(s, p, k, x_k, grad_k):
    """Minimize ``u_k(.; x) - <y, E_k .> + h_k`` over ``X_k``.

    ``grad_k`` is the block gradient of ``L(x; y) - h(x)`` at the current
    point, i.e. it already includes ``-E_k^T y``.
    """
    if s.kind == "prox_linear":
        t = s.tau[k]
        return prox_block(p, k, x_k - grad_k / t, 1.0 / t)
    if p.smooth.loss == "logistic":
        raise ValueError("exact block minimization has no closed form for the logistic loss")
    sl = p.block(k)
    if sl.stop - sl.start == 1:
        # scalar block: exact curvature is gamma == lipschitz
        h = s.gamma[k] if s.hess is None else float(s.hess[k][0, 0])
        return prox_block(p, k, x_k - grad_k / h, 1.0 / h)
    if p.nonsmooth.is_zero(k) and p.sets.is_unbounded(sl):
        return x_k - np.linalg.solve(s.hess[k], grad_k)
    raise ValueError(
        f"exact block minimization on block {k} (size {sl.stop - sl.start}) with a nonsmooth "
        "term or box has no closed form; use the prox_linear surrogate"
    )


def surrogate_block_minimize(s, p, k, x, y):
    """Unique minimizer over ``X_k`` of ``u_k(v; x) - <y, E_k v> + h_k(v)``."""
    x = np.asarray(x, dtype=float)
    y = np.zeros(p.m) if y is None else np.asarray(y, dtype=float)
    lin = _Linearization(p, x)
    g = lin.grad(k) - p.E[:, p.block(k)].T @ y
    return block_step(s, p, k, x[p.block(k)], g)


# -- conformance --------------------------------------------------------------


@dataclass
class ClauseResult:
    passed: bool
    worst_margin: float
    witness: dict | None = None

    def to_dict(self):
        return {"pass": self.passed, "worst_margin": self.worst_margin, "witness_point": self.witness}


@dataclass
class ConformanceReport:
    kind: str
    samples: int
    clauses: dict

    @property
    def passed(self):
        return all(c.passed for c in self.clauses.values())

    def failed(self):
        return [name for name, c in self.clauses.items() if not c.passed]

    def to_dict(self):
        return {
            "kind": self.kind,
            "samples": self.samples,
            "pass": self.passed,
            "clauses": {name: c.to_dict() for name, c in self.clauses.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def _top_directions(s, p):
    """Unit direction of largest surrogate curvature relative to the true block Hessian."""
    dirs = []
    for k in range(p.K):
        sl = p.block(k)
        nk = sl.stop - sl.start
        if nk == 1:
            dirs.append(np.ones(1))
            continue
        H = p.rho * _block_gram(p.E, sl) + p.smooth.curvature_bound * _block_gram(p.smooth.A, sl)
        dirs.append(np.linalg.eigh(H)[1][:, -1])
    return dirs


def check_assumption_b(s, p, samples, seed, scale=1.0):
    """Sample ``samples`` states (blocks taken cyclically) and test clauses (a)-(e).

    Each clause reports its worst signed margin; a clause passes when that
    margin is nonnegative after the fixed tolerance is applied. The witness
    is the state attaining the worst margin.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = make_rng(seed)
    top = _top_directions(s, p)
    worst = {c: (np.inf, None) for c in "abcde"}

    def note(c, margin, k, v, x):
        if margin < worst[c][0]:
            worst[c] = (float(margin), {"block": k, "v": v.tolist(), "x": x.tolist()})

    for i in range(samples):
        k = i % p.K
        sl = p.block(k)
        nk = sl.stop - sl.start
        x = p.sets.project(scale * rng.standard_normal(p.n))
        if i % 2:
            d = top[k] * scale * rng.standard_normal()
            d2 = top[k] * scale * rng.standard_normal()
        else:
            d = scale * rng.standard_normal(nk)
            d2 = scale * rng.standard_normal(nk)
        v = p.sets.project(x[sl] + d, sl)
        vh = p.sets.project(x[sl] + d2, sl)
        lin = _Linearization(p, x)
        xk = x[sl]

        # (a) tightness at v = x_k
        note("a", TIGHT_TOL - abs(_u_value(s, lin, k, xk) - lin.base), k, xk, x)
        # (b) dominance of the true block function
        note("b", _u_value(s, lin, k, v) - lin.value(k, v) + DOMINANCE_TOL, k, v, x)
        # (c) gradient match, central differences of u at x_k
        g_true = lin.grad(k)
        fd = np.empty(nk)
        for j in range(nk):
            h = FD_STEP * max(1.0, abs(xk[j]))
            e = np.zeros(nk)
            e[j] = h
            fd[j] = (_u_value(s, lin, k, xk + e) - _u_value(s, lin, k, xk - e)) / (2 * h)
        rel = np.linalg.norm(fd - g_true) / max(1.0, np.linalg.norm(g_true))
        note("c", GRAD_TOL - rel, k, xk, x)
        # (d) strong convexity with modulus gamma_k
        dv = v - vh
        uv, uvh = _u_value(s, lin, k, v), _u_value(s, lin, k, vh)
        lhs = uv - uvh - float(_u_grad(s, lin, k, vh) @ dv)
        # the difference of u values cancels, so allow rounding relative to their size
        slack = MODULUS_TOL * max(1.0, abs(uv), abs(uvh))
        note("d", lhs - 0.5 * (s.gamma[k] - MODULUS_TOL) * float(dv @ dv) + slack, k, v, x)
        # (e) Lipschitz gradient with constant L_k
        gd = np.linalg.norm(_u_grad(s, lin, k, v) - _u_grad(s, lin, k, vh))
        note("e", (s.lipschitz[k] + MODULUS_TOL) * np.linalg.norm(dv) - gd, k, v, x)

    clauses = {
        c: ClauseResult(bool(worst[c][0] >= 0.0), worst[c][0], worst[c][1]) for c in "abcde"
    }
    return ConformanceReport(s.kind, samples, clauses)
