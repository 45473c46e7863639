"""Joint completion of related tensors with shared unfolding factors."""

from mtcomplete.tensor import (
    frobenius_norm,
    fold,
    project_observed,
    unfold,
)
from mtcomplete.solver import (
    ModelState,
    SharingPlan,
    SolveReport,
    SolverConfig,
    ValidationError,
    init_state,
    objective,
    solve,
    sweep,
    validate,
)
from mtcomplete.experiment import (
    MaskSpec,
    SynthSpec,
    generate_mask,
    rse,
    run_comparison,
    synth_coupled,
)

__all__ = [
    "frobenius_norm",
    "fold",
    "project_observed",
    "unfold",
    "ModelState",
    "SharingPlan",
    "SolveReport",
    "SolverConfig",
    "ValidationError",
    "init_state",
    "objective",
    "solve",
    "sweep",
    "validate",
    "MaskSpec",
    "SynthSpec",
    "generate_mask",
    "rse",
    "run_comparison",
    "synth_coupled",
]
