"""Block successive upper-bound minimization method of multipliers (BSUM-M).

Solvers for ``min sum_k f_k(x_k) s.t. sum_k E_k x_k = q, x_k in X_k`` with
block-separable nonsmooth terms, plus the instance generators and
diagnostics used to study them.
"""

from ._accel import NUMBA_ENABLED
from .diagnostics import GapEstimate, dual_value, gap_estimates, support_pattern
from .instances import GeneratedInstance, InstanceSpec, gen_basis_pursuit, gen_counterexample, gen_lasso, generate
from .problem import Problem, eval_aug_lagrangian, eval_objective, make_problem
from .prox import prox_block, prox_gradient_map, soft_threshold
from .solvers import SamplingWeights, SolverConfig, StepsizeSchedule, run
from .surrogates import check_assumption_b, make_surrogate

__version__ = "0.1.0"
