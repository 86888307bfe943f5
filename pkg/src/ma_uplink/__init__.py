"""Movable-antenna enhanced multiuser uplink: simulation and optimization.

Joint optimization of per-user antenna positions, transmit powers, and
the base-station receive combiner to minimize total uplink transmit
power under per-user rate constraints, with a Monte Carlo harness for
system-level studies.
"""

from .channel import (
    ArrayGeometry,
    Scenario,
    ScenarioConfig,
    UserChannel,
    channel_matrix,
    channel_power_quadratic,
    channel_vector,
    dump_scenario,
    make_user_channel,
    perturb_fri,
    receive_frm,
    sample_scenario,
    transmit_frv,
    virtual_angles,
)
from .combining import (
    CombinerSolution,
    PowerSolution,
    RankDeficientError,
    min_power_fixed_point,
    mmse_coefficients,
    mmse_combiner,
    mrc_power,
    power_feasible,
    sinr,
    solve_power_balance,
    zf_combiner,
    zf_powers,
    zf_total_power,
)
from .experiments import (
    ALL_SCHEMES,
    SchemeId,
    SweepSpec,
    TrialResult,
    aggregate,
    run_sweep,
    run_trial,
)
from .optimizer import (
    DescentConfig,
    InfeasibleScenarioError,
    OptimizeResult,
    PositionVector,
    backtrack_step,
    channel_power_gradient,
    finite_diff_gradient,
    maximize_channel_power,
    optimize_mmse,
    optimize_zf,
    project_box,
)

__all__ = [name for name in dir() if not name.startswith("_")]
