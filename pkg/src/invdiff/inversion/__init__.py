"""Reconstruction schemes for the diffusion and potential coefficients."""

from .basis import AdmissibleSet, RbfBasis, triple_norm, tsvd_solve
from .diagnostics import (
    ContractionReport,
    ProbePair,
    contraction_factor,
    make_probe_pairs,
    phi_integral,
    phi_integrand_alpha1,
    phi_of_T,
)
from .model import ForwardModel, ForwardOutputs, ObservationSet, make_observations
from .schemes import (
    SCHEMES,
    ReconstructionState,
    RunResult,
    SchemeError,
    StepOptions,
    compute_W,
    find_W_zeros,
    rhs_fields,
    run_scheme,
    step_eliminate_a,
    step_eliminate_q,
    step_parallel,
    step_potential_only,
)

__all__ = [
    "ContractionReport",
    "ProbePair",
    "contraction_factor",
    "make_probe_pairs",
    "phi_integral",
    "phi_integrand_alpha1",
    "phi_of_T",
    "AdmissibleSet",
    "RbfBasis",
    "triple_norm",
    "tsvd_solve",
    "ForwardModel",
    "ForwardOutputs",
    "ObservationSet",
    "make_observations",
    "SCHEMES",
    "ReconstructionState",
    "RunResult",
    "SchemeError",
    "StepOptions",
    "compute_W",
    "find_W_zeros",
    "rhs_fields",
    "run_scheme",
    "step_eliminate_a",
    "step_eliminate_q",
    "step_parallel",
    "step_potential_only",
]
