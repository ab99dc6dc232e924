"""Time-optimal joint curves for redundant manipulators on a fixed Cartesian path.

The problem is split in two levels. For fixed polynomial joint curves the
fastest path-speed profile solves a convex program in the squared speeds
(:mod:`.inner`). Its value, the squared traversal time, is then decreased
over the curve parameters by a primal-dual loop that keeps the task-space
error under a tolerance (:mod:`.outer`).
"""

from .basis import (BasisRow, BasisSpec, FitResult, GridBasis, PathGrid, SingularFitError,
                    basis_matrices, eval_basis, fit_parameters, joint_curves, joint_state, tabulate)
from .inner import (ConstraintSystem, InfeasibleError, InnerSolution, JointLimits, assemble,
                    brute_force_oracle, descent_direction_general, feasible_point_dagger,
                    solve_const_speed, solve_general, solve_inner, solve_no_acc)
from .kinematics import (CartesianPath, DHChain, ErrorEval, IKError, Planar3R, channel_errors, fk,
                         ik_solve, jacobian, path_error)
from .outer import (DualState, OptimizationError, OptimizationReport, OuterConfig, OuterProblem,
                    dual_step, optimize, outer_direction, outer_lagrangian, primal_step)
from .scenario import (EdgeCurve, Scenario, ScenarioError, build_problem, generate_edge_path,
                       load_scenario, random_free_variable_init)
from .trajectory import (ExtendedPath, TimingLaw, build_grid, extend_path, reconstruct_timing,
                         sample_trajectory, traversal_time, validate_limits)
from .bench import run_batch, run_single

__version__ = "0.1.0"
