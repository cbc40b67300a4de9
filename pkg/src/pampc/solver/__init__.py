from .problem import (
    AvoidanceSetup,
    MpcWeights,
    NlpProblem,
    PerceptionSetup,
    ProblemError,
    ReferenceTrajectory,
    build_classical,
    build_pampc,
    hover_reference,
    straight_line_reference,
)
from .qp import QpResult, solve_box_qp
from .sqp import (
    COST_TERMS,
    Linearization,
    RtiSolver,
    SolverStats,
    SqpSolution,
    cold_start,
    constraint_values,
    dynamics_defect,
    evaluate,
    objective,
    rti_step,
    solve_to_convergence,
    stage_cost_report,
)
