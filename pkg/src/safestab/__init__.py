"""safestab: CLF/CBF universal formulas with Gaussian-process model learning.

Building blocks for safe stabilization: control-affine system simulation,
closed-form universal control laws with compatibility analysis, GP
regression of residual dynamics with confidence margins, a stability-
relaxed formula for incompatible states, an exhaustive QP oracle for
certification, and the adaptive-cruise-control benchmark.
"""

from .backend import active_backend, get_kernels
from .clf_cbf import (
    CbfSpec,
    CbfTerms,
    ClfSpec,
    ClfTerms,
    CompatibilityStatus,
    ControlDecision,
    DegenerateGeometry,
    IncompatiblePoint,
    cbf_terms,
    cbf_universal_control,
    clf_terms,
    compatibility_status,
    sontag_clf_control,
    universal_formula,
)
from .dynamics import (
    ContractViolation,
    ControlAffineSystem,
    ControllerStep,
    IntegrationError,
    SimulationError,
    TrajectoryLog,
    UncertainSystem,
    closed_loop_field,
    rk4_step,
    simulate,
)
from .gp import (
    ErrorBoundConfig,
    GpPosterior,
    IllConditionedKernel,
    KernelConfig,
    KernelConfigError,
    ResidualDataset,
    beta_values,
    build_measurements,
    dataset_from_csv,
    dataset_to_csv,
    fit_posterior,
    grid_search_kernel,
    kernel_eval,
    predict,
)
from .gp_control import (
    ControlLimits,
    ProbabilisticCompatibility,
    RelaxedDecision,
    UncertaintyMargins,
    UnsafeState,
    gp_universal_formula,
    probabilistic_compatibility,
    project_to_box,
    relaxed_universal_formula,
    uncertainty_margins,
)
from .qp_oracle import OracleSolution, PointwiseQp, oracle_objective, solve_min_norm

__version__ = "0.1.0"
