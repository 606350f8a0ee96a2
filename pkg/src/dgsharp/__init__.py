"""Multi-domain sharpness-aware optimization toolkit.

Implements averaged-gradient descent (ERM), sharpness-aware minimization
(SAM) and decreased-overhead gradual SAM (DGSAM) over multi-domain
problems, zeroth-order sharpness and Hessian-spectrum estimators, and
executable worst-case-domain-risk checks, plus a CLI harness that wires
them together (``dgsharp --help``).
"""

from .core import SeededRng, axpy, dot, finite_diff_gradient, finite_diff_hvp, norm2
from .objectives import (
    FakeFlatLandscape,
    FiniteSupportStatLoss,
    LinearObjective,
    MlpObjective,
    MultiDomainProblem,
    QuadraticDomainEnsemble,
    QuadraticObjective,
    build_fake_flat,
    init_mlp_params,
    make_shifted_blob_dataset,
    mlp_problem_from_dataset,
)
from .optimizers import OptimizerConfig, RunRecord, dgsam_step, erm_step, run, sam_step
from .robustrisk import (
    ConvergenceBudget,
    UncertaintySet,
    average_worst_case_risk,
    build_sharpness_reversal_pair,
    check_individual_sharpness_bound,
    convergence_constants,
    empirical_stationarity_test,
    global_violation_report,
    rho_of_delta,
    worst_case_risk,
)
from .sharpness import (
    SharpnessEstimatorConfig,
    SharpnessReport,
    curvature_term_decomposition,
    disk_grid_sharpness,
    landscape_grid,
    max_quadratic_over_ball,
    sharpness_report,
    zeroth_order_sharpness,
)
from .spectral import SpectrumConfig, hutchinson_trace, lanczos_spectrum, top_eigenvalue

__version__ = "0.1.0"
