"""Load-altering attack impact and DG resilience planning for radial feeders."""

__version__ = "0.1.0"

from .attacks import (
    AttackSpec,
    DynamicAttackSpec,
    TimeSeriesResult,
    multiplier_at,
    run_step_attack,
    run_time_series,
)
from .dgopt import (
    ObjectiveWeights,
    OptimizationResult,
    PsoConfig,
    decode_particle,
    evaluate_objective,
    pso_optimize,
)
from .errors import BoundsError, CaseError, FeederError, PowerFlowError, ScenarioError, TopologyError
from .netmodel import (
    Branch,
    Bus,
    DgPlacement,
    DgUnit,
    NetworkCase,
    apply_dg,
    load_case,
    remove_dg,
    resolve_case,
    scale_loads,
    to_per_unit,
    validate_radial,
)
from .powerflow import (
    CriticalityRanking,
    PowerFlowSolution,
    VoltageBand,
    branch_loss_at,
    check_limits,
    rank_vm,
    select_critical,
    solve,
    total_losses,
)
