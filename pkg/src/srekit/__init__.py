"""Simulation and numerical checks for stochastic recurrence equations."""

__version__ = "0.1.0"

from .core import (
    AffineMap,
    ComposedMap,
    GeneralMap,
    LipschitzEstimate,
    PerturbedAffineMap,
    ProbePlan,
    StateSpace,
    Trajectory,
    compose,
    evaluate,
    lipschitz_coefficient,
    lipschitz_difference,
)
from .convergence import (
    GapSeries,
    RateFit,
    backward_approximant,
    backward_gaps,
    coupling_gap,
    fit_rate,
    iterate_forward,
    lemma1_probe,
    lemma3_probe,
    perturbation_gaps,
    perturbed_gap,
)
from .errors import ConfigurationError, DomainError, NumericError, SREError
from .lyapunov import (
    ConditionBundle,
    ConditionSettings,
    ContractionReport,
    MomentReport,
    check_logplus_moment,
    estimate_contraction,
    find_contraction_order,
    lemma2_violations,
    verify_conditions,
)
from .models import (
    ArParams,
    GarchParams,
    JointFilterParams,
    NoiseSpec,
    garch_observations,
    make_ar,
    make_garch,
    make_joint_filter,
    simulate_observations,
)
from .sequences import MapSequence, PerturbedSequence, decaying_intercept, run_forward
