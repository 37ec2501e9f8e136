"""Block-structured linearly constrained composite convex programs.

A :class:`Problem` describes

    minimize    g(x) + sum_k h_k(x_k)
    subject to  E x = q,   x_k in X_k,

with ``g(x) = loss(A x) + <b, x>``, ``h_k`` a weighted mix of l1 and group-l2
norms, and ``X_k`` an axis-aligned box. All values are float64 and arrays are
frozen after construction, so a problem can be shared between runs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

LOSSES = ("quadratic", "logistic", "zero")


def _frozen(a, ndim=1, name="array"):
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_vec(v, size, name):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (size,):
        raise ValueError(f"{name} must have shape ({size},), got {v.shape}")
    return v


@dataclass(frozen=True)
class BlockPartition:
    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise ValueError("a partition needs at least one block")
        if any(s < 1 for s in sizes):
            raise ValueError(f"block sizes must be positive, got {sizes}")
        object.__setattr__(self, "sizes", sizes)
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def scalar(cls, n):
        return cls((1,) * int(n))

    @property
    def K(self):
        return len(self.sizes)

    @property
    def n(self):
        return int(self.offsets[-1])

    @property
    def is_scalar(self):
        return all(s == 1 for s in self.sizes)

    def block(self, k):
        if not 0 <= k < self.K:
            raise IndexError(f"block index {k} out of range for K={self.K}")
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def block_index(self):
        """Block id of every coordinate."""
        return np.repeat(np.arange(self.K), self.sizes)


@dataclass(frozen=True, eq=False)
class SmoothTerm:
    """``g(x) = loss(A x) + <b, x>``.

    ``quadratic`` is ``0.5 * ||z - target||^2``; ``logistic`` is
    ``sum_i log(1 + exp(-target_i * z_i))`` (target holds the labels);
    ``zero`` means ``A`` has no rows and ``g`` is linear.
    """

    loss: str
    A: np.ndarray
    b: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        A = _frozen(self.A, 2, "A")
        b = _frozen(self.b, 1, "b")
        target = _frozen(self.target, 1, "target")
        if A.shape[1] != b.size:
            raise ValueError(f"A has {A.shape[1]} columns but b has {b.size} entries")
        if target.size != A.shape[0]:
            raise ValueError(f"target has {target.size} entries, A has {A.shape[0]} rows")
        if self.loss == "zero" and A.shape[0] != 0:
            raise ValueError("loss 'zero' requires an empty A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "target", target)

    @classmethod
    def zero(cls, n):
        return cls("zero", np.zeros((0, n)), np.zeros(n), np.zeros(0))

    @property
    def n(self):
        return self.b.size

    def loss_value(self, z):
        if self.loss == "quadratic":
            r = z - self.target
            return 0.5 * float(r @ r)
        if self.loss == "logistic":
            return float(np.sum(np.logaddexp(0.0, -self.target * z)))
        return 0.0

    def loss_grad(self, z):
        if self.loss == "quadratic":
            return z - self.target
        if self.loss == "logistic":
            return -self.target * expit(-self.target * z)
        return np.zeros_like(z)

    def loss_hess_diag(self, z):
        if self.loss == "quadratic":
            return np.ones_like(z)
        if self.loss == "logistic":
            s = expit(self.target * z)
            return self.target**2 * s * (1.0 - s)
        return np.zeros_like(z)

    @property
    def curvature_bound(self):
        """Uniform upper bound on the loss Hessian's diagonal."""
        if self.loss == "quadratic":
            return 1.0
        if self.loss == "logistic":
            return 0.25 * float(np.max(self.target**2, initial=0.0))
        return 0.0

    def value(self, x):
        return self.loss_value(self.A @ x) + float(self.b @ x)

    def grad(self, x):
        return self.A.T @ self.loss_grad(self.A @ x) + self.b


class Group(NamedTuple):
    indices: tuple
    weight: float


@dataclass(frozen=True, eq=False)
class NonsmoothTerm:
    """Per block ``h_k(x_k) = lam_k ||x_k||_1 + sum_J w_J ||x_{k,J}||_2``.

    ``groups[k]`` lists disjoint :class:`Group` entries with block-local
    indices; coordinates not listed belong to weight-zero groups.
    """

    lam: np.ndarray
    groups: tuple

    def __post_init__(self):
        lam = _frozen(self.lam, 1, "lam")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("l1 weights must be finite and nonnegative")
        groups = tuple(
            tuple(Group(tuple(int(i) for i in g[0]), float(g[1])) for g in blk)
            for blk in self.groups
        )
        if len(groups) != lam.size:
            raise ValueError(f"{lam.size} l1 weights but {len(groups)} group lists")
        for blk in groups:
            seen = set()
            for g in blk:
                if g.weight < 0 or not np.isfinite(g.weight):
                    raise ValueError("group weights must be finite and nonnegative")
                if not g.indices:
                    raise ValueError("empty group")
                if seen.intersection(g.indices):
                    raise ValueError("groups within a block must be disjoint")
                seen.update(g.indices)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "groups", groups)

    @classmethod
    def zero(cls, K):
        return cls(np.zeros(K), ((),) * K)

    @classmethod
    def l1(cls, lam, K):
        return cls(np.broadcast_to(np.asarray(lam, float), (K,)).copy(), ((),) * K)

    @property
    def K(self):
        return self.lam.size

    def active_groups(self, k):
        return [g for g in self.groups[k] if g.weight > 0]

    def block_value(self, k, u):
        val = self.lam[k] * float(np.sum(np.abs(u)))
        for g in self.groups[k]:
            if g.weight > 0:
                val += g.weight * float(np.linalg.norm(u[list(g.indices)]))
        return val

    def is_zero(self, k=None):
        ks = range(self.K) if k is None else [k]
        return all(self.lam[j] == 0 and not self.active_groups(j) for j in ks)


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """Axis-aligned box ``lower <= x <= upper``; infinite bounds allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.lower, 1, "lower")
        hi = _frozen(self.upper, 1, "upper")
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise ValueError("box must be nonempty (lower <= upper)")
        if np.any(lo == np.inf) or np.any(hi == -np.inf):
            raise ValueError("box must be nonempty")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, n):
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    def is_unbounded(self, sl=slice(None)):
        return bool(np.all(np.isneginf(self.lower[sl])) and np.all(np.isposinf(self.upper[sl])))

    def kind(self, sl=slice(None)):
        return "unbounded" if self.is_unbounded(sl) else "box"

    def project(self, v, sl=slice(None)):
        return np.clip(v, self.lower[sl], self.upper[sl])

    def contains(self, x, tol=0.0):
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


def _sign_cone(lo, hi):
    """True where the interval is R, [0, inf) or (-inf, 0]."""
    return ((lo == -np.inf) & ((hi == np.inf) | (hi == 0.0))) | ((lo == 0.0) & (hi == np.inf))


@dataclass(frozen=True, eq=False)
class Problem:
    partition: BlockPartition
    smooth: SmoothTerm
    nonsmooth: NonsmoothTerm
    sets: FeasibleSet
    E: np.ndarray
    q: np.ndarray
    rho: float = 1.0

    def __post_init__(self):
        n = self.partition.n
        E = _frozen(self.E, 2, "E")
        q = _frozen(self.q, 1, "q")
        if E.shape[1] != n:
            raise ValueError(f"E has {E.shape[1]} columns, partition has n={n}")
        if q.size != E.shape[0]:
            raise ValueError(f"q has {q.size} entries, E has {E.shape[0]} rows")
        if self.smooth.n != n:
            raise ValueError(f"smooth term has dimension {self.smooth.n}, expected {n}")
        if self.nonsmooth.K != self.partition.K:
            raise ValueError("nonsmooth term block count differs from partition")
        if self.sets.lower.size != n:
            raise ValueError(f"feasible set has dimension {self.sets.lower.size}, expected {n}")
        rho = float(self.rho)
        if not rho > 0 or not np.isfinite(rho):
            raise ValueError(f"rho must be positive, got {self.rho}")
        for k, blk in enumerate(self.nonsmooth.groups):
            sizes = self.partition.sizes[k]
            for g in blk:
                if max(g.indices) >= sizes or min(g.indices) < 0:
                    raise ValueError(f"group index out of range in block {k}")
            # group shrinkage commutes with the box only for sign cones
            sl = self.partition.block(k)
            lo, hi = self.sets.lower[sl], self.sets.upper[sl]
            for g in self.nonsmooth.active_groups(k):
                idx = list(g.indices)
                if not np.all(_sign_cone(lo[idx], hi[idx])):
                    raise ValueError(
                        f"block {k}: group-l2 term combined with a finite box bound has no "
                        "closed-form prox; only unbounded or sign-constrained coordinates "
                        "are supported in weighted groups"
                    )
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "rho", rho)

    @property
    def n(self):
        return self.partition.n

    @property
    def m(self):
        return self.E.shape[0]

    @property
    def K(self):
        return self.partition.K

    @property
    def constrained(self):
        return self.m > 0

    def block(self, k):
        return self.partition.block(k)

    def E_block(self, k):
        return self.E[:, self.partition.block(k)]

    def A_block(self, k):
        return self.smooth.A[:, self.partition.block(k)]

    def with_rho(self, rho):
        return dataclasses.replace(self, rho=rho)


def make_problem(
    sizes,
    *,
    loss="zero",
    A=None,
    b=None,
    target=None,
    lam=0.0,
    groups=None,
    lower=None,
    upper=None,
    E=None,
    q=None,
    rho=1.0,
):
    """Convenience constructor with zero/unbounded defaults.

    ``sizes`` is either a sequence of block sizes or an int (scalar blocks).
    """
    partition = BlockPartition.scalar(sizes) if np.isscalar(sizes) else BlockPartition(tuple(sizes))
    n, K = partition.n, partition.K
    if loss == "zero":
        smooth = SmoothTerm("zero", np.zeros((0, n)), np.zeros(n) if b is None else b, np.zeros(0))
    else:
        A = np.asarray(A, dtype=float)
        if target is None:
            target = np.zeros(A.shape[0]) if loss == "quadratic" else np.ones(A.shape[0])
        smooth = SmoothTerm(loss, A, np.zeros(n) if b is None else b, target)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (K,)).copy()
    nonsmooth = NonsmoothTerm(lam, tuple(groups) if groups is not None else ((),) * K)
    lo = np.full(n, -np.inf) if lower is None else np.broadcast_to(np.asarray(lower, float), (n,))
    hi = np.full(n, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, float), (n,))
    if E is None:
        E = np.zeros((0, n))
    E = np.asarray(E, dtype=float)
    if q is None:
        q = np.zeros(E.shape[0])
    return Problem(partition, smooth, nonsmooth, FeasibleSet(lo, hi), E, q, rho)


# -- evaluation ---------------------------------------------------------------


def _x(p, x):
    return _check_vec(x, p.n, "x")


def _y(p, y):
    return _check_vec(y, p.m, "y")


def coordinate_weights(p):
    """Per-coordinate l1 weights and the weighted groups in global indices.

    Cached on the problem instance.
    """
    cached = p.__dict__.get("_coord_weights")
    if cached is None:
        lam = np.repeat(p.nonsmooth.lam, p.partition.sizes)
        groups = []
        for k in range(p.K):
            off = int(p.partition.offsets[k])
            for g in p.nonsmooth.active_groups(k):
                groups.append((np.asarray(g.indices, dtype=np.int64) + off, g.weight))
        cached = p.__dict__["_coord_weights"] = (lam, groups)
    return cached


def nonsmooth_value(p, x):
    x = _x(p, x)
    lam, groups = coordinate_weights(p)
    val = float(lam @ np.abs(x))
    for idx, w in groups:
        val += w * float(np.linalg.norm(x[idx]))
    return val


def eval_objective(p, x):
    """``f(x) = g(x) + sum_k h_k(x_k)``."""
    x = _x(p, x)
    return p.smooth.value(x) + nonsmooth_value(p, x)


def constraint_residual(p, x):
    """``q - E x``."""
    x = _x(p, x)
    return p.q - p.E @ x


def smooth_augmented_value(p, x):
    """``g(x) + rho/2 ||E x - q||^2``, the function every surrogate majorizes."""
    r = constraint_residual(p, x)
    return p.smooth.value(x) + 0.5 * p.rho * float(r @ r)


def eval_aug_lagrangian(p, x, y):
    """``f(x) + <y, q - E x> + rho/2 ||q - E x||^2``."""
    y = _y(p, y)
    r = constraint_residual(p, x)
    return eval_objective(p, x) + float(y @ r) + 0.5 * p.rho * float(r @ r)


def grad_smooth_augmented(p, x, y):
    """Gradient of ``L(x; y) - h(x)``: ``grad g(x) - E^T y + rho E^T (E x - q)``."""
    x = _x(p, x)
    y = _y(p, y)
    r = p.E @ x - p.q
    return p.smooth.grad(x) + p.E.T @ (p.rho * r - y)


# -- serialization ------------------------------------------------------------


def _enc(v):
    """Nested lists with infinities spelled as strings."""
    if isinstance(v, np.ndarray):
        return _enc(v.tolist())
    if isinstance(v, list):
        return [_enc(e) for e in v]
    if isinstance(v, float):
        if v == np.inf:
            return "inf"
        if v == -np.inf:
            return "-inf"
        return v
    return v


def _dec(v):
    if isinstance(v, list):
        return [_dec(e) for e in v]
    if v == "inf":
        return np.inf
    if v == "-inf":
        return -np.inf
    return float(v)


def _matrix(rows, ncols):
    if len(rows) == 0:
        return np.zeros((0, ncols))
    return np.array(_dec(rows), dtype=float).reshape(len(rows), ncols)


def problem_to_dict(p):
    return {
        "partition": list(p.partition.sizes),
        "smooth": {
            "loss": p.smooth.loss,
            "A": _enc(p.smooth.A),
            "b": _enc(p.smooth.b),
            "target": _enc(p.smooth.target),
        },
        "nonsmooth": {
            "lambda": _enc(p.nonsmooth.lam),
            "groups": [
                [{"indices": list(g.indices), "weight": g.weight} for g in blk]
                for blk in p.nonsmooth.groups
            ],
        },
        "sets": {"lower": _enc(p.sets.lower), "upper": _enc(p.sets.upper)},
        "E": _enc(p.E),
        "q": _enc(p.q),
        "rho": p.rho,
    }


def problem_from_dict(d):
    partition = BlockPartition(tuple(d["partition"]))
    n = partition.n
    sm = d["smooth"]
    A = _matrix(sm.get("A", []), n)
    target = np.array(_dec(sm.get("target", [0.0] * A.shape[0])), dtype=float)
    smooth = SmoothTerm(sm["loss"], A, np.array(_dec(sm["b"]), dtype=float), target)
    ns = d["nonsmooth"]
    groups = tuple(
        tuple(Group(tuple(g["indices"]), float(g["weight"])) for g in blk) for blk in ns["groups"]
    )
    nonsmooth = NonsmoothTerm(np.array(_dec(ns["lambda"]), dtype=float), groups)
    sets = FeasibleSet(np.array(_dec(d["sets"]["lower"])), np.array(_dec(d["sets"]["upper"])))
    E = _matrix(d["E"], n)
    q = np.array(_dec(d["q"]), dtype=float)
    return Problem(partition, smooth, nonsmooth, sets, E, q, float(d["rho"]))


def dumps_problem(p):
    return json.dumps(problem_to_dict(p))


def loads_problem(s):
    return problem_from_dict(json.loads(s))
