"""Command line harness: ``bsumm gen|run|plot|check``.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 conformance
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .instances import GeneratedInstance, InstanceSpec, generate, penalized_bp
from .plot import plot_csvs
from .rng import make_rng, trial_seed
from .solvers import (
    TRACE_FIELDS,
    SolverConfig,
    StepsizeSchedule,
    TraceRecord,
    run,
    write_trace_csv,
)
from .surrogates import check_assumption_b, make_surrogate, prox_linear_surrogate

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CONFORMANCE = 0, 1, 2, 3
FAMILY_ALIASES = {"bp": "basis_pursuit", "ce": "counterexample"}
DEFAULT_TARGET = 1e-6


class ValidationError(ValueError):
    pass


# -- experiment configuration -------------------------------------------------


@dataclass
class RunSpec:
    """One solver entry of an experiment config (JSON object under ``runs``)."""

    variant: str
    name: str = None
    surrogate: str = "exact"
    schedule: str = None
    schedule_times_rho: bool = False
    alpha_exponent: float = None
    max_sweeps: int = 1000
    rel_err_tol: float = 0.0
    prox_grad_tol: float = 0.0
    trace_every: int = 1
    tau_scale: float = 1.0
    continuation: float = None
    penalty: float = None

    def __post_init__(self):
        self.name = self.name or self.variant

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown run keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class ExperimentConfig:
    instance: object
    runs: list
    trials: int = 1
    seed: int = 0
    output_dir: str = "out"
    plot: bool = False
    init: str = "zero"
    init_scale: float = 10.0
    vary_instance: bool = False
    target_rel_err: float = DEFAULT_TARGET
    rho: float = None
    record_time: bool = False
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_dict(cls, d, base_dir=Path(".")):
        d = dict(d)
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        if "instance" not in d or "runs" not in d:
            raise ValidationError("config needs 'instance' and 'runs'")
        d["runs"] = [RunSpec.from_dict(r) for r in d["runs"]]
        inst = d["instance"]
        if isinstance(inst, dict):
            inst = dict(inst)
            inst["family"] = FAMILY_ALIASES.get(inst.get("family"), inst.get("family"))
            d["instance"] = InstanceSpec.from_dict(inst)
        elif not isinstance(inst, str):
            raise ValidationError("'instance' must be a spec object or a path")
        cfg = cls(**d, base_dir=base_dir)
        if cfg.trials < 1:
            raise ValidationError("trials must be >= 1")
        if cfg.init not in ("zero", "uniform"):
            raise ValidationError("init must be 'zero' or 'uniform'")
        names = [r.name for r in cfg.runs]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate run names: {names}")
        return cfg

    def instance_for(self, trial):
        if isinstance(self.instance, str):
            path = Path(self.instance)
            if not path.is_absolute():
                path = self.base_dir / path
            inst = GeneratedInstance.loads(path.read_text())
        else:
            spec = self.instance
            if self.vary_instance:
                spec = InstanceSpec(spec.family, spec.params, spec.seed + trial)
            inst = generate(spec)
        if self.rho is not None:
            inst = GeneratedInstance(inst.problem.with_rho(self.rho), inst.x_bar, inst.f_star, inst.support)
        return inst


def solver_config(run_spec, inst, trial_rng_seed, x0, y0, record_time=False):
    """Build the :class:`SolverConfig` and the problem it runs on."""
    p = inst.problem
    if run_spec.penalty is not None:
        p = penalized_bp(inst, rel_mu=run_spec.penalty)
        y0 = None
    sched = None
    if run_spec.schedule is not None:
        sched = StepsizeSchedule.parse(run_spec.schedule)
        if run_spec.schedule_times_rho:
            sched = StepsizeSchedule(sched.kind, sched.c * p.rho, sched.s)
    cfg = SolverConfig(
        variant=run_spec.variant,
        surrogate=run_spec.surrogate,
        schedule=sched,
        alpha_exponent=run_spec.alpha_exponent,
        max_sweeps=run_spec.max_sweeps,
        rel_err_tol=run_spec.rel_err_tol,
        prox_grad_tol=run_spec.prox_grad_tol,
        reference_solution=inst.x_bar,
        seed=trial_rng_seed,
        trace_every=run_spec.trace_every,
        tau_scale=run_spec.tau_scale,
        x0=x0,
        y0=y0 if p.constrained else None,
        continuation=run_spec.continuation,
        record_time=record_time,
    )
    cfg.validate(p)
    return p, cfg


def mvm_to_tolerance(records, target):
    """#MVM at the first record with ``rel_err <= target``, interpolated linearly."""
    prev = None
    for r in records:
        if r.rel_err is not None and r.rel_err <= target:
            if prev is None or prev.rel_err is None or prev.rel_err == r.rel_err:
                return float(r.mvm_count)
            t = (prev.rel_err - target) / (prev.rel_err - r.rel_err)
            return float(prev.mvm_count + t * (r.mvm_count - prev.mvm_count))
        prev = r
    return None


def mean_trace(traces):
    """Record-wise mean over trials, truncated to the shortest trace."""
    n = min(len(t) for t in traces)
    out = []
    for i in range(n):
        vals = {}
        for f in TRACE_FIELDS:
            col = [getattr(t[i], f) for t in traces]
            vals[f] = None if any(v is None for v in col) else float(np.mean(col))
        vals["sweep"] = int(traces[0][i].sweep)
        out.append(TraceRecord(**vals))
    return out


def run_experiment(cfg, out_dir=None, log=None):
    """Run every (solver, trial) pair; returns the summary dict."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    insts = [cfg.instance_for(t) for t in range(cfg.trials)]
    # validate every config before anything runs
    inits = []
    for t, inst in enumerate(insts):
        seed = trial_seed(cfg.seed, t)
        rng = make_rng([seed, 1])  # separate from the solver's sampling stream
        p = inst.problem
        if cfg.init == "uniform":
            x0 = rng.uniform(-cfg.init_scale, cfg.init_scale, p.n)
            y0 = rng.uniform(-cfg.init_scale, cfg.init_scale, p.m)
        else:
            x0, y0 = np.zeros(p.n), np.zeros(p.m)
        inits.append((seed, x0, y0))
        for rs in cfg.runs:
            try:
                solver_config(rs, inst, seed, x0, y0)
            except ValueError as exc:
                raise ValidationError(f"run {rs.name!r}: {exc}") from None

    summary = {"trials": cfg.trials, "seed": cfg.seed, "target_rel_err": cfg.target_rel_err, "runs": {}}
    for rs in cfg.runs:
        rows, traces = [], []
        for t, (inst, (seed, x0, y0)) in enumerate(zip(insts, inits)):
            p, sc = solver_config(rs, inst, seed, x0, y0, cfg.record_time)
            t0 = time.perf_counter()
            trace = run(p, sc)
            wall = time.perf_counter() - t0
            write_trace_csv(trace, out / f"{rs.name}_t{t}.csv")
            traces.append(trace)
            last = trace[-1]
            rows.append(
                {
                    "trial": t,
                    "seed": seed,
                    "instance_seed": None if isinstance(cfg.instance, str) else cfg.instance.seed
                    + (t if cfg.vary_instance else 0),
                    "sweeps": last.sweep,
                    "final_rel_err": last.rel_err,
                    "mvm_to_tol": mvm_to_tolerance(trace, cfg.target_rel_err),
                    "final_mvm": last.mvm_count,
                    "final_constraint_violation": last.constraint_violation,
                    "initial_x_norm": float(np.linalg.norm(x0)),
                    "final_x_norm": float(np.linalg.norm(trace.state.x)),
                    "wall_seconds": wall,
                }
            )
            if log:
                log(f"{rs.name} trial {t}: sweeps={last.sweep} rel_err={last.rel_err} mvm={last.mvm_count}")
        write_trace_csv(mean_trace(traces), out / f"{rs.name}_mean.csv")
        summary["runs"][rs.name] = {"variant": rs.variant, "trials": rows}
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    if cfg.plot:
        plot_csvs([out / f"{rs.name}_mean.csv" for rs in cfg.runs], out / "convergence.svg")
    return summary


# -- commands -----------------------------------------------------------------


def cmd_gen(args):
    family = FAMILY_ALIASES.get(args.family, args.family)
    params = {}
    if family == "basis_pursuit":
        params = {"n": args.n or 1000, "m": args.m or 300, "p_nonzero": args.p if args.p is not None else 0.06}
    elif family == "lasso":
        params = {"n": args.n or 2000, "m": args.m or 1000, "p_A": args.p_A, "p_b": args.p_b, "lam": args.lam}
        if args.nnz is not None:
            params["nnz"] = args.nnz
    if args.rho is not None and family == "basis_pursuit":
        params["rho"] = args.rho
    spec = InstanceSpec(family, params, args.seed)
    inst = generate(spec)
    if args.rho is not None and family != "basis_pursuit":
        inst = GeneratedInstance(inst.problem.with_rho(args.rho), inst.x_bar, inst.f_star, inst.support)
    text = inst.dumps() + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_run(args):
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None
    if args.trials is not None:
        raw["trials"] = args.trials
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.rho is not None:
        raw["rho"] = args.rho
    for r in raw.get("runs", []):
        if args.alpha is not None and r.get("variant") in ("bsum_m", "rbsum_m"):
            r["schedule"] = args.alpha
        if args.tau_scale is not None:
            r["tau_scale"] = args.tau_scale
    cfg = ExperimentConfig.from_dict(raw, base_dir=path.parent)
    log = (lambda s: print(s, file=sys.stderr)) if args.verbose else None
    summary = run_experiment(cfg, args.out, log=log)
    for name, r in summary["runs"].items():
        errs = [t["final_rel_err"] for t in r["trials"]]
        print(f"{name}: trials={len(errs)} final_rel_err={errs}")
    return EXIT_OK


def cmd_plot(args):
    if not args.csv:
        raise ValidationError("plot needs at least one CSV")
    plot_csvs(args.csv, args.out)
    return EXIT_OK


def cmd_check(args):
    inst = GeneratedInstance.loads(Path(args.instance).read_text())
    p = inst.problem if args.rho is None else inst.problem.with_rho(args.rho)
    if args.surrogate == "prox_linear":
        ts = 1.0 if args.tau_scale is None else args.tau_scale
        s = prox_linear_surrogate(p, tau_scale=ts, certify=False)
    else:
        s = make_surrogate(p, args.surrogate)
    report = check_assumption_b(s, p, args.samples, args.seed)
    text = json.dumps(report.to_dict(), indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if report.passed else EXIT_CONFORMANCE


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors, not argparse's default exit status 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="bsumm", description="BSUM-M experiment harness")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate an instance JSON")
    g.add_argument("family", choices=["counterexample", "ce", "basis_pursuit", "bp", "lasso"])
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--p", type=float, help="nonzero probability of x_bar (basis pursuit)")
    g.add_argument("--p-A", dest="p_A", type=float, default=0.1)
    g.add_argument("--p-b", dest="p_b", type=float, default=0.1)
    g.add_argument("--lam", type=float, default=1.0)
    g.add_argument("--nnz", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rho", type=float)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--rho", type=float)
    r.add_argument("--alpha", help="dual schedule, e.g. inv_sqrt:1 or shifted:30,10")
    r.add_argument("--tau-scale", dest="tau_scale", type=float)
    r.add_argument("--out")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", help="plot rel_err against #MVM")
    pl.add_argument("csv", nargs="*")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)

    c = sub.add_parser("check", help="sample the surrogate conditions on an instance")
    c.add_argument("instance")
    c.add_argument("--surrogate", choices=["exact", "prox_linear"], default="exact")
    c.add_argument("--samples", type=int, default=10000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--rho", type=float)
    c.add_argument("--tau-scale", dest="tau_scale", type=float)
    c.add_argument("--out")
    c.set_defaults(func=cmd_check)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, TypeError) as exc:
        print(f"bsumm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RuntimeError, OSError, FloatingPointError) as exc:
        print(f"bsumm {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
