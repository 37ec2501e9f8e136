"""Compiled vs pure-numpy BSUM-M sweeps on a basis pursuit instance.

    python3 benchmarks/bench_kernels.py [--n 1000] [--m 300] [--sweeps 50]

Each mode runs in its own interpreter (the fallback is selected with
BSUMM_DISABLE_NUMBA=1 at import time). Both modes start from the same
state, so the final iterates must agree.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def measure(n, m, sweeps):
    from bsumm import kernels
    from bsumm._accel import NUMBA_ENABLED
    from bsumm.instances import InstanceSpec, gen_basis_pursuit
    from bsumm.solvers import IterateState, StepsizeSchedule, _Engine
    from bsumm.surrogates import make_surrogate

    p = gen_basis_pursuit(InstanceSpec("basis_pursuit", {"n": n, "m": m, "p_nonzero": 0.06}, 0)).problem
    eng = _Engine(p, make_surrogate(p, "exact"))
    alphas = StepsizeSchedule("shifted", p.rho, 10.0).alphas(1, sweeps)

    warm = IterateState.initial(p)
    kernels.bsum_m_sweeps(alphas[:1], warm.x, warm.Ax, warm.residual, warm.y, *eng._kv())
    st = IterateState.initial(p)
    t0 = time.perf_counter()
    kernels.bsum_m_sweeps(alphas, st.x, st.Ax, st.residual, st.y, *eng._kv())
    dt = time.perf_counter() - t0
    return {"numba": NUMBA_ENABLED, "seconds_per_sweep": dt / sweeps, "x": st.x.tolist()}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--m", type=int, default=300)
    ap.add_argument("--sweeps", type=int, default=50)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(measure(args.n, args.m, args.sweeps)))
        return

    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, BSUMM_DISABLE_NUMBA=flag)
        cmd = [sys.executable, __file__, "--child", f"--n={args.n}", f"--m={args.m}", f"--sweeps={args.sweeps}"]
        res = json.loads(subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout)
        out["numba" if res["numba"] else "numpy"] = res
    for name, res in out.items():
        print(f"{name:6s}: {res['seconds_per_sweep'] * 1e3:9.3f} ms/sweep")
    if len(out) == 2:
        ratio = out["numpy"]["seconds_per_sweep"] / out["numba"]["seconds_per_sweep"]
        diff = np.max(np.abs(np.subtract(out["numpy"]["x"], out["numba"]["x"])))
        print(f"speedup: {ratio:9.1f}x   max |x_numba - x_numpy| after {args.sweeps} sweeps: {diff:.3e}")


if __name__ == "__main__":
    main()
