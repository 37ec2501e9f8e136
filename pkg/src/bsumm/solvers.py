"""BSUM-M, RBSUM-M, BSUM, R-BSUM and the ADMM / FISTA baselines.

Every variant advances an :class:`IterateState` and reports progress as a
list of :class:`TraceRecord` rows. Problems whose blocks are all scalars run
through the compiled loops in :mod:`bsumm.kernels`; everything else uses the
per-block numpy path built on :func:`bsumm.surrogates.block_step`.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .problem import eval_aug_lagrangian, eval_objective
from .prox import prox_full, prox_gradient_map
from .rng import categorical, make_rng
from .surrogates import block_step, make_surrogate

VARIANTS = ("bsum_m", "rbsum_m", "bsum", "r_bsum", "admm", "fista", "prox_gradient")
CONSTRAINED = ("bsum_m", "rbsum_m", "admm")
RANDOMIZED = ("rbsum_m", "r_bsum")


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class StepsizeSchedule:
    """Dual stepsize ``alpha^r`` for ``r = 1, 2, ...``.

    ``constant``: ``c``; ``inv_sqrt``: ``c / sqrt(r)``;
    ``shifted``: ``c (s + 1) / (sqrt(r) + s)``.
    """

    kind: str
    c: float
    s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "inv_sqrt", "shifted"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.c > 0:
            raise ValueError("schedule scale must be positive")
        if self.kind == "shifted" and not self.s > 0:
            raise ValueError("shifted schedule needs a positive shift")

    def alpha(self, r):
        if r < 1:
            raise ValueError("stepsizes are indexed from r = 1")
        return float(self.alphas(r, 1)[0])

    def alphas(self, start, count):
        r = np.arange(start, start + count, dtype=float)
        if self.kind == "constant":
            return np.full(count, float(self.c))
        if self.kind == "inv_sqrt":
            return self.c / np.sqrt(r)
        return self.c * (self.s + 1.0) / (np.sqrt(r) + self.s)

    @classmethod
    def parse(cls, text):
        """``"constant:0.5"``, ``"inv_sqrt:1"`` or ``"shifted:30,10"``."""
        kind, _, args = text.partition(":")
        vals = [float(a) for a in args.split(",") if a]
        kind = {"const": "constant"}.get(kind, kind)
        if not vals:
            raise ValueError(f"schedule {text!r} needs parameters")
        return cls(kind, *vals)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class SamplingWeights:
    p: np.ndarray
    alpha_exponent: float = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("sampling weights must be a nonempty vector")
        if np.any(p <= 0) or not np.isclose(p.sum(), 1.0, rtol=0, atol=1e-12):
            raise ValueError("sampling probabilities must be positive and sum to one")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "cumulative", np.cumsum(p))

    @classmethod
    def uniform(cls, size):
        return cls(np.full(size, 1.0 / size), 0.0)

    @classmethod
    def lipschitz(cls, L, alpha, dual=False):
        """``p_k proportional to L_k^alpha``; with ``dual`` the dual index 0 gets ``1/(K+1)``."""
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha exponent must lie in [0, 1]")
        w = np.asarray(L, dtype=float) ** alpha
        w = w / w.sum()
        if dual:
            K = w.size
            w = np.concatenate([[1.0 / (K + 1)], w * K / (K + 1)])
        return cls(w / w.sum(), alpha)

    def draw(self, u):
        return categorical(u, self.cumulative)


@dataclass
class SolverConfig:
    variant: str
    surrogate: str = "exact"
    schedule: StepsizeSchedule = None
    weights: SamplingWeights = None
    alpha_exponent: float = None
    max_sweeps: int = 1000
    rel_err_tol: float = 0.0
    prox_grad_tol: float = 0.0
    reference_solution: np.ndarray = None
    seed: int = 0
    trace_every: int = 1
    tau_scale: float = 1.0
    x0: np.ndarray = None
    y0: np.ndarray = None
    continuation: float = None
    lipschitz0: float = None
    record_time: bool = False

    def validate(self, p):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.max_sweeps < 0 or self.trace_every < 1:
            raise ValueError("max_sweeps must be >= 0 and trace_every >= 1")
        if self.variant in ("bsum_m", "rbsum_m") and self.schedule is None:
            raise ValueError(f"{self.variant} needs a dual stepsize schedule")
        if self.variant in CONSTRAINED and not p.constrained:
            raise ValueError(f"{self.variant} needs a coupling constraint E x = q")
        if self.variant not in CONSTRAINED and p.constrained:
            raise ValueError(f"{self.variant} only applies to problems without E x = q")
        if self.weights is not None and self.variant in RANDOMIZED:
            want = p.K + 1 if self.variant == "rbsum_m" else p.K
            if self.weights.p.size != want:
                raise ValueError(f"{self.variant} needs {want} sampling probabilities")
        if self.reference_solution is not None and np.shape(self.reference_solution) != (p.n,):
            raise ValueError("reference solution has the wrong dimension")


# -- state and traces ---------------------------------------------------------


@dataclass
class IterateState:
    x: np.ndarray
    y: np.ndarray
    residual: np.ndarray
    Ax: np.ndarray
    sweep: int = 0
    steps: int = 0
    mvm_units: int = 0
    alpha: float = None

    @property
    def mvm_count(self):
        return self.mvm_units / self.x.size

    @classmethod
    def initial(cls, p, x0=None, y0=None):
        x = np.zeros(p.n) if x0 is None else np.array(x0, dtype=float)
        y = np.zeros(p.m) if y0 is None else np.array(y0, dtype=float)
        if x.shape != (p.n,) or y.shape != (p.m,):
            raise ValueError("initial point has the wrong dimension")
        return cls(x, y, p.q - p.E @ x, p.smooth.A @ x)

    def copy(self):
        return dataclasses.replace(
            self, x=self.x.copy(), y=self.y.copy(), residual=self.residual.copy(), Ax=self.Ax.copy()
        )


@dataclass(frozen=True)
class TraceRecord:
    sweep: int
    objective: float
    aug_lagrangian: float
    constraint_violation: float
    prox_grad_norm: float
    rel_err: float
    alpha: float
    mvm_count: float
    elapsed_seconds: float


TRACE_FIELDS = tuple(f.name for f in dataclasses.fields(TraceRecord))


class Trace(list):
    """Trace records plus the final state of the run."""

    def __init__(self, records=(), state=None, variant=None):
        super().__init__(records)
        self.state = state
        self.variant = variant


def relative_error(x, ref):
    """``||x - ref|| / ||ref||``; the absolute error when ``ref`` is zero."""
    nref = np.linalg.norm(ref)
    err = np.linalg.norm(x - ref)
    return float(err / nref) if nref > 0 else float(err)


# -- engine -------------------------------------------------------------------


class _Engine:
    """Block updates on a fixed (problem, surrogate) pair, mutating states in place."""

    def __init__(self, p, s):
        self.p, self.s = p, s
        # E_k and A_k are each applied twice per block update, at cost n_k / n;
        # counts are kept in integer units of 1/n so totals are exact
        nmat = int(p.m > 0) + int(p.smooth.A.shape[0] > 0)
        self.units_per_block = 2 * nmat * np.asarray(p.partition.sizes, dtype=np.int64)
        exact_ok = s.kind == "prox_linear" or p.smooth.loss != "logistic"
        self.scalar = p.partition.is_scalar and exact_ok
        if self.scalar:
            self._setup_kernel()

    def _setup_kernel(self):
        p, s = self.p, self.s
        lam = p.nonsmooth.lam.copy()
        for k in range(p.K):
            for g in p.nonsmooth.active_groups(k):
                lam[k] += g.weight
        A = p.smooth.A
        self.kargs = dict(
            ET=np.ascontiguousarray(p.E.T),
            AT=np.ascontiguousarray(A.T),
            target=np.ascontiguousarray(p.smooth.target),
            a_target=A.T @ p.smooth.target if p.smooth.loss == "quadratic" else np.zeros(p.n),
            lin=np.ascontiguousarray(p.smooth.b),
            loss=kernels.LOSS_CODES[p.smooth.loss],
            lam=lam,
            lo=np.ascontiguousarray(p.sets.lower),
            hi=np.ascontiguousarray(p.sets.upper),
            curv=np.ascontiguousarray(s.tau if s.kind == "prox_linear" else s.gamma, dtype=float),
            rho=p.rho,
        )

    def _kv(self):
        k = self.kargs
        return (k["ET"], k["AT"], k["target"], k["a_target"], k["lin"], k["loss"],
                k["lam"], k["lo"], k["hi"], k["curv"], k["rho"])

    def block_update(self, st, k):
        p = self.p
        sl = p.block(k)
        Ek, Ak = p.E[:, sl], p.smooth.A[:, sl]
        g = Ak.T @ p.smooth.loss_grad(st.Ax) + p.smooth.b[sl] - Ek.T @ (p.rho * st.residual + st.y)
        v = block_step(self.s, p, k, st.x[sl], g)
        d = v - st.x[sl]
        st.x[sl] = v
        st.residual -= Ek @ d
        st.Ax += Ak @ d

    def blocks(self, st, order):
        order = np.asarray(order, dtype=np.int64)
        if self.scalar:
            kernels.scalar_pass(order, st.x, st.Ax, st.residual, st.y, *self._kv())
        else:
            for k in order:
                self.block_update(st, int(k))
        st.mvm_units += int(np.sum(self.units_per_block[order]))

    def dual(self, st, alpha):
        st.y += alpha * st.residual
        st.alpha = float(alpha)

    def bsum_m(self, st, alphas):
        """``len(alphas)`` full BSUM-M sweeps."""
        alphas = np.asarray(alphas, dtype=float)
        if self.scalar:
            kernels.bsum_m_sweeps(alphas, st.x, st.Ax, st.residual, st.y, *self._kv())
            st.mvm_units += alphas.size * int(np.sum(self.units_per_block))
            st.alpha = float(alphas[-1])
        else:
            order = np.arange(self.p.K)
            for a in alphas:
                self.dual(st, a)
                self.blocks(st, order)
        st.sweep += alphas.size

    def rbsum_m(self, st, indices, alphas):
        """Randomized steps; ``indices`` in ``0..K`` with 0 the dual update."""
        indices = np.asarray(indices, dtype=np.int64)
        if self.scalar:
            kernels.rbsum_m_steps(indices, alphas, st.x, st.Ax, st.residual, st.y, *self._kv())
            blk = indices[indices > 0] - 1
            st.mvm_units += int(np.sum(self.units_per_block[blk]))
            duals = np.flatnonzero(indices == 0)
            if duals.size:
                st.alpha = float(alphas[duals[-1]])
        else:
            for j, a in zip(indices, alphas):
                if j == 0:
                    self.dual(st, a)
                else:
                    self.blocks(st, [j - 1])
        st.steps += indices.size


def _surrogate(p, config):
    kw = {"tau_scale": config.tau_scale} if config.surrogate == "prox_linear" else {}
    return make_surrogate(p, config.surrogate, **kw)


# -- single-step operations ----------------------------------------------------


def bsum_m_sweep(p, s, sched, state):
    """One BSUM-M iteration: dual ascent step, then blocks ``1..K`` in order."""
    if not p.constrained:
        raise ValueError("bsum_m_sweep needs a coupling constraint")
    st = state.copy()
    _Engine(p, s).bsum_m(st, sched.alphas(st.sweep + 1, 1))
    return st


def admm_baseline_sweep(p, state, s=None):
    """Multi-block ADMM: BSUM-M with exact blocks and a constant dual step ``rho``."""
    s = make_surrogate(p, "exact") if s is None else s
    return bsum_m_sweep(p, s, StepsizeSchedule("constant", p.rho), state)


def rbsum_m_step(p, s, sched, w, state, rng_draw):
    """One RBSUM-M step; ``rng_draw`` in [0, 1) picks the index by inverse CDF."""
    if not p.constrained:
        raise ValueError("rbsum_m_step needs a coupling constraint")
    w = SamplingWeights.uniform(p.K + 1) if w is None else w
    st = state.copy()
    j = int(w.draw(rng_draw))
    _Engine(p, s).rbsum_m(st, [j], sched.alphas(st.steps + 1, 1))
    return st


def bsum_sweep(p, s, state):
    """One cyclic pass of block upper-bound minimizations (no coupling constraint)."""
    if p.constrained:
        raise ValueError("bsum_sweep applies only to problems without E x = q")
    st = state.copy()
    _Engine(p, s).blocks(st, np.arange(p.K))
    st.sweep += 1
    return st


def r_bsum_step(p, s, w, state, rng_draw):
    if p.constrained:
        raise ValueError("r_bsum_step applies only to problems without E x = q")
    w = SamplingWeights.uniform(p.K) if w is None else w
    st = state.copy()
    _Engine(p, s).blocks(st, [int(w.draw(rng_draw))])
    st.steps += 1
    return st


# -- drivers ------------------------------------------------------------------


class _Recorder:
    def __init__(self, p, config):
        self.p = p
        self.ref = None if config.reference_solution is None else np.asarray(config.reference_solution, float)
        self.timed = config.record_time
        self.t0 = time.perf_counter()
        self.records = []

    def __call__(self, st):
        p = self.p
        pg = prox_gradient_map(p, st.x, st.y).norm
        rec = TraceRecord(
            sweep=int(st.sweep),
            objective=eval_objective(p, st.x),
            aug_lagrangian=eval_aug_lagrangian(p, st.x, st.y),
            constraint_violation=float(np.linalg.norm(st.residual)),
            prox_grad_norm=pg,
            rel_err=None if self.ref is None else relative_error(st.x, self.ref),
            alpha=st.alpha,
            mvm_count=float(st.mvm_count),
            elapsed_seconds=time.perf_counter() - self.t0 if self.timed else None,
        )
        self.records.append(rec)
        return rec


def _should_stop(rec, config, constrained):
    if config.rel_err_tol > 0 and rec.rel_err is not None and rec.rel_err <= config.rel_err_tol:
        return True
    if config.prox_grad_tol > 0 and rec.prox_grad_norm <= config.prox_grad_tol:
        return not constrained or rec.constraint_violation <= config.prox_grad_tol
    return False


def run(p, config, callback=None):
    """Run ``config.variant`` on ``p`` until ``max_sweeps`` or a tolerance is met.

    A record is taken for the initial state, every ``trace_every`` sweeps and
    at the end; tolerances are checked at those points only. ``callback``,
    if given, is called as ``callback(state, record)`` after each record with
    the live state; a true return value ends the run. Randomized
    variants count ``K + 1`` (RBSUM-M) or ``K`` (R-BSUM) steps as one sweep.
    """
    config.validate(p)
    if config.variant in ("fista", "prox_gradient"):
        return fista_run(p, config, callback=callback)
    if config.variant == "admm":
        s = make_surrogate(p, "exact")
        sched = StepsizeSchedule("constant", p.rho)
    else:
        s = _surrogate(p, config)
        sched = config.schedule
    eng = _Engine(p, s)
    st = IterateState.initial(p, config.x0, config.y0)
    rec = _Recorder(p, config)
    rng = make_rng(config.seed)
    weights = config.weights
    if config.variant in RANDOMIZED and weights is None:
        dual = config.variant == "rbsum_m"
        if config.alpha_exponent is not None:
            weights = SamplingWeights.lipschitz(s.lipschitz, config.alpha_exponent, dual=dual)
        else:
            weights = SamplingWeights.uniform(p.K + 1 if dual else p.K)

    last = rec(st)
    halt = bool(callback(st, last)) if callback else False
    done = halt or _should_stop(last, config, p.constrained)
    while not done and st.sweep < config.max_sweeps:
        chunk = min(config.trace_every, config.max_sweeps - st.sweep)
        v = config.variant
        if v in ("bsum_m", "admm"):
            eng.bsum_m(st, sched.alphas(st.sweep + 1, chunk))
        elif v == "bsum":
            for _ in range(chunk):
                eng.blocks(st, np.arange(p.K))
                st.sweep += 1
        else:
            per = p.K + 1 if v == "rbsum_m" else p.K
            idx = weights.draw(rng.random(chunk * per))
            if v == "rbsum_m":
                eng.rbsum_m(st, idx, sched.alphas(st.steps + 1, idx.size))
            else:
                eng.blocks(st, idx)
                st.steps += idx.size
            st.sweep += chunk
        last = rec(st)
        halt = bool(callback(st, last)) if callback else False
        done = halt or _should_stop(last, config, p.constrained)
    return Trace(rec.records, st, config.variant)


def fista_run(p, config, callback=None):
    """Accelerated proximal gradient with backtracking on ``g + h`` (no constraint).

    The Lipschitz estimate starts at ``config.lipschitz0`` (default: the
    largest single-coordinate curvature) and doubles until the quadratic
    upper bound holds. With ``config.continuation = eta`` the nonsmooth
    weights are inflated by ``max(1, c0 * eta^t)`` at iteration ``t``, where
    ``c0`` makes ``x0`` optimal for the inflated problem. Variant
    ``prox_gradient`` drops the momentum.
    """
    if p.constrained:
        raise ValueError("FISTA applies only to problems without E x = q")
    sm = p.smooth
    accelerate = config.variant != "prox_gradient"
    st = IterateState.initial(p, config.x0, None)
    rec = _Recorder(p, config)
    L = config.lipschitz0
    if L is None:
        col = np.einsum("ij,ij->j", sm.A, sm.A) if sm.A.shape[0] else np.zeros(1)
        L = max(sm.curvature_bound * float(col.max()), 1e-12)

    inflate0 = 1.0
    if config.continuation is not None:
        lam_max = float(np.max(p.nonsmooth.lam, initial=0.0))
        if lam_max > 0:
            g0 = sm.grad(st.x)
            inflate0 = max(1.0, float(np.max(np.abs(g0))) / lam_max)
            st.mvm_units += 2 * p.n

    x, Ax = st.x, st.Ax
    z, Az = x.copy(), Ax.copy()
    t = 1.0
    last = rec(st)
    halt = bool(callback(st, last)) if callback else False
    done = halt or _should_stop(last, config, False)
    while not done and st.sweep < config.max_sweeps:
        for _ in range(min(config.trace_every, config.max_sweeps - st.sweep)):
            infl = 1.0
            if config.continuation is not None:
                infl = max(1.0, inflate0 * config.continuation ** st.sweep)
            gz = sm.A.T @ sm.loss_grad(Az) + sm.b
            fz = sm.loss_value(Az) + float(sm.b @ z)
            st.mvm_units += p.n if sm.A.shape[0] else 0
            while True:
                xn = prox_full(p, z - gz / L, infl / L)
                Axn = sm.A @ xn
                st.mvm_units += p.n if sm.A.shape[0] else 0
                d = xn - z
                if sm.loss_value(Axn) + float(sm.b @ xn) <= fz + float(gz @ d) + 0.5 * L * float(d @ d) + 1e-12 * abs(fz):
                    break
                L *= 2.0
            if accelerate:
                tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
                beta = (t - 1.0) / tn
                t = tn
            else:
                beta = 0.0
            z = xn + beta * (xn - x)
            Az = Axn + beta * (Axn - Ax)
            x, Ax = xn, Axn
            st.sweep += 1
            st.alpha = 1.0 / L
        st.x, st.Ax = x, Ax
        last = rec(st)
        halt = bool(callback(st, last)) if callback else False
        done = halt or _should_stop(last, config, False)
    st.x, st.Ax = x, Ax
    return Trace(rec.records, st, config.variant)


# -- CSV ----------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trace_to_csv(records):
    """CSV text with the trace header; floats in shortest round-trip form."""
    lines = [",".join(TRACE_FIELDS)]
    for r in records:
        lines.append(",".join(_fmt(getattr(r, f)) for f in TRACE_FIELDS))
    return "\n".join(lines) + "\n"


def write_trace_csv(records, path):
    with open(path, "w", newline="") as fh:
        fh.write(trace_to_csv(records))


def read_trace_csv(path):
    """Parse a trace CSV back into records; raises ``ValueError`` on a bad schema."""
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_FIELDS:
        raise ValueError(f"{path}: expected header {','.join(TRACE_FIELDS)}")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(TRACE_FIELDS):
            raise ValueError(f"{path}:{i}: expected {len(TRACE_FIELDS)} fields, got {len(row)}")
        try:
            vals = [None if v == "" else float(v) for v in row]
        except ValueError as exc:
            raise ValueError(f"{path}:{i}: {exc}") from None
        vals[0] = int(vals[0])
        out.append(TraceRecord(*vals))
    return out
