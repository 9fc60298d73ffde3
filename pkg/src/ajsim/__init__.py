"""Monte Carlo toolkit for an Ait-Sahalia-type short-rate model with
Poisson jumps: explicit Euler-Maruyama simulation, boundedness and
convergence diagnostics, and bond / barrier-option pricing."""

__version__ = "0.1.0"

from .engine import (
    EmPath,
    EnsembleBlock,
    continuous_interpolant,
    em_step,
    simulate_block,
    simulate_ensemble,
    simulate_path,
    step_interpolant,
)
from .estimators import (
    ConvergenceReport,
    JumpInequalityReport,
    LogRatioSummary,
    MomentCurve,
    RegimeWarning,
    convergence_in_probability,
    find_occupancy_level,
    moment_curve,
    occupancy_probability,
    pathwise_log_ratio,
    poisson_integral_inequality_check,
    time_avg_moment,
)
from .model import (
    ModelParams,
    ParameterError,
    RegimeReport,
    diffusion_eval,
    drift_eval,
    generator_supremum,
    generator_with_jump_eval,
    jump_eval,
    lyapunov_eval,
    pow_signed,
    regime_check,
)
from .noise import (
    DrivingNoise,
    SimGrid,
    brownian_modulus_bound,
    brownian_modulus_check,
    coarsen,
    generate_noise,
)
from .pricing import (
    BarrierOptionSpec,
    BondSpec,
    barrier_option_price,
    bond_price,
)
from .stats import EstimateWithCI

__all__ = [
    "BarrierOptionSpec",
    "BondSpec",
    "ConvergenceReport",
    "DrivingNoise",
    "EmPath",
    "EnsembleBlock",
    "EstimateWithCI",
    "JumpInequalityReport",
    "LogRatioSummary",
    "ModelParams",
    "MomentCurve",
    "ParameterError",
    "RegimeReport",
    "RegimeWarning",
    "SimGrid",
    "barrier_option_price",
    "bond_price",
    "brownian_modulus_bound",
    "brownian_modulus_check",
    "coarsen",
    "continuous_interpolant",
    "convergence_in_probability",
    "diffusion_eval",
    "drift_eval",
    "em_step",
    "find_occupancy_level",
    "generate_noise",
    "generator_supremum",
    "generator_with_jump_eval",
    "jump_eval",
    "lyapunov_eval",
    "moment_curve",
    "occupancy_probability",
    "pathwise_log_ratio",
    "poisson_integral_inequality_check",
    "pow_signed",
    "regime_check",
    "simulate_block",
    "simulate_ensemble",
    "simulate_path",
    "step_interpolant",
    "time_avg_moment",
]
