"""Skew-normal posterior approximations by statistic matching."""

from .estimators import (
    GaussianApprox,
    ImportanceConfig,
    NonConvergenceError,
    QuadratureGrid,
    find_mode,
    improved_laplace_mean,
    importance_moments,
    jensen_mean,
    laplace,
)
from .harness import (
    AccuracyReport,
    MethodSpec,
    SimDesign,
    detect_separation,
    load_benchmark,
    run_experiment,
    run_method,
    simulate_dataset,
)
from .matching import (
    LossWeights,
    MatchResult,
    NoRootError,
    match_derivatives,
    match_mmc,
    match_mmh,
    match_moments,
    solve_kappa,
)
from .models import GlmData, LogisticModel, ProbitModel, make_model
from .msn import (
    ConstraintError,
    DerivativeStats,
    MomentStats,
    MsnParams,
    d_from_delta,
)
from .reference import (
    ChainDiagnostics,
    MarginalCurve,
    grid_marginals,
    kde,
    l1_accuracy,
    mh_sample,
)
from .specialfns import zeta, zeta_vec

__version__ = "0.1.0"
