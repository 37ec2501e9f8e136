"""Seeded generators with ground truth: the 3-block counterexample, basis
pursuit and LASSO with a certified optimum."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .problem import (
    constraint_residual,
    eval_objective,
    make_problem,
    problem_from_dict,
    problem_to_dict,
)
from .prox import prox_gradient_map
from .rng import make_rng

FAMILIES = ("counterexample", "basis_pursuit", "lasso")
CERT_TOL = 1e-10
MAX_ATTEMPTS = 100

COUNTEREXAMPLE_E = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 2.0], [1.0, 2.0, 2.0]])


@dataclass(frozen=True)
class InstanceSpec:
    """Generator family plus its parameters.

    ``params`` keys: basis_pursuit ``n, m, p_nonzero``; lasso ``n, m, p_A,
    p_b, lam`` and optionally ``nnz`` (support size, default ``m // 10``).
    """

    family: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown instance family {self.family!r}; expected one of {FAMILIES}")
        P = self.params
        if self.family == "basis_pursuit":
            n, m, pz = int(P["n"]), int(P["m"]), float(P["p_nonzero"])
            if not 0 < m < n:
                raise ValueError(f"basis pursuit needs 0 < m < n, got m={m}, n={n}")
            if not 0 < pz < 1:
                raise ValueError(f"p_nonzero must lie in (0, 1), got {pz}")
        elif self.family == "lasso":
            n, m = int(P["n"]), int(P["m"])
            if n < 1 or m < 1:
                raise ValueError("lasso needs positive n and m")
            for key in ("p_A", "p_b"):
                if not 0 < float(P[key]) <= 1:
                    raise ValueError(f"{key} must lie in (0, 1], got {P[key]}")
            if not float(P["lam"]) > 0:
                raise ValueError(f"lam must be positive, got {P['lam']}")
            if "nnz" in P and not 0 < int(P["nnz"]) <= n:
                raise ValueError(f"nnz must lie in [1, n], got {P['nnz']}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self):
        return {"family": self.family, "params": dict(self.params), "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], dict(d.get("params", {})), int(d.get("seed", 0)))


@dataclass(frozen=True, eq=False)
class GeneratedInstance:
    problem: object
    x_bar: np.ndarray = None
    f_star: float = None
    support: np.ndarray = None

    def to_dict(self):
        d = problem_to_dict(self.problem)
        if self.x_bar is not None:
            d["x_bar"] = [float(v) for v in self.x_bar]
        if self.f_star is not None:
            d["f_star"] = float(self.f_star)
        return d

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d):
        x_bar = np.asarray(d["x_bar"], dtype=float) if "x_bar" in d else None
        return cls(
            problem_from_dict(d),
            x_bar,
            float(d["f_star"]) if "f_star" in d else None,
            None if x_bar is None else x_bar != 0,
        )

    @classmethod
    def loads(cls, s):
        return cls.from_dict(json.loads(s))


def generate(spec):
    if spec.family == "counterexample":
        return gen_counterexample()
    if spec.family == "basis_pursuit":
        return gen_basis_pursuit(spec)
    return gen_lasso(spec)


def gen_counterexample(rho=1.0):
    """``min 0 s.t. E1 x1 + E2 x2 + E3 x3 = 0``; the unique solution is 0."""
    p = make_problem(3, E=COUNTEREXAMPLE_E, q=np.zeros(3), rho=rho)
    return GeneratedInstance(p, np.zeros(3), 0.0, np.zeros(3, dtype=bool))


def gen_basis_pursuit(spec):
    """``min ||x||_1 s.t. E x = q`` with unit-norm Gaussian columns and ``q = E x_bar``.

    ``rho`` defaults to ``10 m / ||q||_1``; pass ``params["rho"]`` to override.
    """
    P = spec.params
    n, m, pz = int(P["n"]), int(P["m"]), float(P["p_nonzero"])
    for attempt in range(MAX_ATTEMPTS):
        rng = make_rng([int(spec.seed), attempt])
        E = rng.standard_normal((m, n))
        E /= np.linalg.norm(E, axis=0)
        mask = rng.random(n) < pz
        x_bar = np.where(mask, rng.standard_normal(n), 0.0)
        if np.any(x_bar):
            break
    else:
        raise RuntimeError("basis pursuit generator drew an empty support every attempt")
    q = E @ x_bar
    rho = float(P["rho"]) if "rho" in P else 10.0 * m / float(np.abs(q).sum())
    p = make_problem(n, lam=1.0, E=E, q=q, rho=rho)
    inst = GeneratedInstance(p, x_bar, eval_objective(p, x_bar), x_bar != 0)
    viol = float(np.linalg.norm(constraint_residual(p, x_bar)))
    if viol > 1e-12 * max(1.0, float(np.linalg.norm(q))):
        raise RuntimeError(f"basis pursuit certificate failed: ||q - E x_bar|| = {viol:.3e}")
    return inst


def gen_lasso(spec):
    """``min 0.5 ||A x - b||^2 + lam ||x||_1`` with a known minimizer.

    Draw a sparse ``B`` and a sparse nonnegative unit vector ``r``, take
    ``v = B^T r`` and put the support on the ``nnz`` largest ``|v_i|``.
    Columns are rescaled so ``|A^T r| = lam`` on the support and ``< lam``
    off it; then ``x*`` with ``sign(x*) = sign(v)`` on the support and
    ``b = A x* + r`` satisfy the optimality conditions exactly.
    """
    P = spec.params
    n, m = int(P["n"]), int(P["m"])
    pA, pb, lam = float(P["p_A"]), float(P["p_b"]), float(P["lam"])
    nnz = int(P.get("nnz", max(1, m // 10)))
    for attempt in range(MAX_ATTEMPTS):
        rng = make_rng([int(spec.seed), attempt])
        B = np.where(rng.random((m, n)) < pA, rng.uniform(-1.0, 1.0, (m, n)), 0.0)
        r = np.where(rng.random(m) < pb, rng.uniform(0.0, 1.0, m), 0.0)
        if not np.any(r):
            continue
        r /= np.linalg.norm(r)
        v = B.T @ r
        av = np.abs(v)
        s = min(nnz, int(np.count_nonzero(av)))
        if s == 0:
            continue
        order = np.argsort(-av, kind="stable")
        S, off = order[:s], order[s:]
        scale = np.ones(n)
        scale[S] = lam / av[S]
        xi = rng.random(n)
        big = off[av[off] >= lam]
        scale[big] = lam * xi[big] / av[big]
        A = B * scale
        x_star = np.zeros(n)
        x_star[S] = np.sign(v[S]) * rng.random(s)
        b = A @ x_star + r
        p = make_problem(n, loss="quadratic", A=A, target=b, lam=lam)
        cert = prox_gradient_map(p, x_star).norm
        if cert <= CERT_TOL:
            return GeneratedInstance(p, x_star, eval_objective(p, x_star), x_star != 0)
    raise RuntimeError(f"lasso generator failed to certify an optimum in {MAX_ATTEMPTS} attempts")


def penalized_bp(inst, mu=None, rel_mu=1e-8):
    """Unconstrained surrogate ``0.5 ||E x - q||^2 + mu ||x||_1`` of a BP instance.

    Used to run FISTA (which needs ``E`` empty) on basis-pursuit data.
    ``mu`` defaults to ``rel_mu * ||E^T q||_inf``.
    """
    p = inst.problem
    if mu is None:
        mu = rel_mu * float(np.max(np.abs(p.E.T @ p.q)))
    return make_problem(p.n, loss="quadratic", A=p.E, target=p.q, lam=mu)
