"""Particle simulation of McKean-Vlasov SDEs with a tamed Milstein-type scheme."""

from .measure import EmpiricalMeasure, mean, moment, w2_coupling_bound, w2_distance_1d
from .model import (
    AdditiveNoiseModel,
    CoefficientModel,
    GinzburgLandauModel,
    LinearMeanFieldModel,
    build_model,
    tame_drift,
    taming_growth_check,
)
from .noise import BrownianLattice, generate
from .scheme import (
    DivergenceError,
    DivergenceEvent,
    InitialLaw,
    SimConfig,
    SimState,
    Trajectory,
    euler_step,
    lambda1,
    lambda2,
    milstein_step,
    simulate,
)
from .analysis import (
    ConvergenceReport,
    chaos_study,
    fit_rate,
    moment_track,
    strong_error,
    validate_derivatives,
)

__version__ = "0.1.0"
