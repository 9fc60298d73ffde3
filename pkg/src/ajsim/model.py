"""Coefficient functions and parameter regimes for the jump-extended
Ait-Sahalia-type short-rate model.

The state y follows

    dy = (a_neg1/y - a0 + a1*y - a2*y**gamma) dt + sigma*|y|**rho dB
         + delta * y(t-) dN,

with gamma, rho > 1, nonnegative coefficients, Brownian motion B and a
Poisson process N of intensity ``lam``.  The explicit Euler scheme can step
through zero, so the drift is extended to negative arguments with the odd
power ``pow_signed`` and the diffusion reads the absolute value; see
:func:`drift_eval` and :func:`diffusion_eval`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

#: iterates closer to zero than this make the reciprocal drift term
#: numerically meaningless; callers clamp or raise below it
RECIPROCAL_FLOOR = 1e-12

#: absolute tolerance for regime boundary comparisons such as 2*rho == gamma+1
REGIME_TOL = 1e-12


class ParameterError(ValueError):
    """A model or grid parameter violates its documented range."""


class EvaluationDomainError(ValueError):
    """A coefficient or Lyapunov expression was evaluated off its domain."""


@dataclass(frozen=True)
class ModelParams:
    """The nine model coefficients plus the initial value.

    a_neg1, a0, a1, a2 : nonnegative drift coefficients
    gamma : nonlinear mean-reversion exponent, > 1
    sigma : diffusion coefficient, >= 0
    rho : diffusion exponent, > 1
    delta : jump size multiplier, >= 0 (one jump scales the state by 1+delta)
    lam : jump intensity, >= 0 (events per unit time)
    y0 : initial value, > 0
    """

    a_neg1: float
    a0: float
    a1: float
    a2: float
    gamma: float
    sigma: float
    rho: float
    delta: float
    lam: float
    y0: float

    def __post_init__(self):
        for name in ("a_neg1", "a0", "a1", "a2", "sigma", "delta", "lam"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ParameterError(f"{name} must be finite and >= 0, got {v}")
        if not math.isfinite(self.gamma) or self.gamma <= 1:
            raise ParameterError(f"gamma must be > 1, got {self.gamma}")
        if not math.isfinite(self.rho) or self.rho <= 1:
            raise ParameterError(f"rho must be > 1, got {self.rho}")
        if not math.isfinite(self.y0) or self.y0 <= 0:
            raise ParameterError(f"y0 must be > 0, got {self.y0}")

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class RegimeReport:
    """Which moment / pathwise parameter regimes the model satisfies.

    ``moment_bound_ok`` covers the p-th moment bound E y^p <= y0^p e^-t + C:
    either the strict regime 2*rho < gamma+1 or the boundary regime
    2*rho == gamma+1 with a2 > (p-1)*sigma^2/2.  ``moment_bound_branch`` is
    "strict", "boundary", or None.

    ``inverse_moment_ok`` is the first inverse moment regime
    (2*rho <= gamma+1 and gamma <= 2).  ``pathwise_lower_ok`` /
    ``pathwise_upper_ok`` are the log-asymptotics regimes
    (1 < rho <= 1.5, 1 < gamma <= 2) and (1 < rho < (gamma+1)/2,
    1 < gamma <= 2).  ``time_avg_ok`` is rho > 1.5 for the time-averaged
    second-moment bound.
    """

    p: float
    moment_bound_ok: bool
    moment_bound_branch: str | None
    inverse_moment_ok: bool
    pathwise_lower_ok: bool
    pathwise_upper_ok: bool
    time_avg_ok: bool

    def to_record(self) -> dict:
        return {
            "p": self.p,
            "moment_bound_ok": self.moment_bound_ok,
            "moment_bound_branch": self.moment_bound_branch,
            "inverse_moment_ok": self.inverse_moment_ok,
            "pathwise_lower_ok": self.pathwise_lower_ok,
            "pathwise_upper_ok": self.pathwise_upper_ok,
            "time_avg_ok": self.time_avg_ok,
        }


def _eq(a: float, b: float) -> bool:
    return abs(a - b) <= REGIME_TOL


def _lt(a: float, b: float) -> bool:
    return b - a > REGIME_TOL


def _leq(a: float, b: float) -> bool:
    return a <= b + REGIME_TOL


def pow_signed(y, p):
    """Odd extension of the power function: sign(y) * |y|**p.

    Matches y**p for y >= 0 and keeps the drift odd-symmetric for the
    negative iterates the explicit scheme can produce.
    """
    y = np.asarray(y, dtype=np.float64)
    out = np.sign(y) * np.abs(y) ** p
    return float(out) if out.ndim == 0 else out


def drift_eval(params: ModelParams, y: float) -> float:
    """Drift a_neg1/y - a0 + a1*y - a2*pow_signed(y, gamma).

    Raises :class:`EvaluationDomainError` when the reciprocal term is active
    (a_neg1 > 0) and |y| is below ``RECIPROCAL_FLOOR``; the simulation engine
    maps that condition to a floor-clamp event instead of propagating it.
    """
    y = float(y)
    if params.a_neg1 > 0.0:
        if abs(y) < RECIPROCAL_FLOOR:
            raise EvaluationDomainError(
                f"|y|={abs(y):.3e} below reciprocal floor {RECIPROCAL_FLOOR:.0e}"
            )
        recip = params.a_neg1 / y
    else:
        recip = 0.0
    return recip - params.a0 + params.a1 * y - params.a2 * pow_signed(y, params.gamma)


def drift_with_floor(params: ModelParams, y):
    """Vector drift with the reciprocal argument clamped at the floor.

    Returns ``(drift, clamped)`` where ``clamped`` marks entries whose
    reciprocal argument was replaced by sign(y) * RECIPROCAL_FLOOR (zero maps
    to +RECIPROCAL_FLOOR).  Scalar and array inputs go through the same
    floating-point expression as :func:`drift_eval`.
    """
    y = np.asarray(y, dtype=np.float64)
    if params.a_neg1 > 0.0:
        clamped = np.abs(y) < RECIPROCAL_FLOOR
        safe = np.where(clamped, np.where(y < 0.0, -RECIPROCAL_FLOOR, RECIPROCAL_FLOOR), y)
        recip = params.a_neg1 / safe
    else:
        clamped = np.zeros(y.shape, dtype=bool)
        recip = np.zeros(y.shape, dtype=np.float64)
    drift = recip - params.a0 + params.a1 * y - params.a2 * (np.sign(y) * np.abs(y) ** params.gamma)
    return drift, clamped


def diffusion_eval(params: ModelParams, y):
    """Diffusion sigma * |y|**rho (the scheme reads the absolute value)."""
    out = params.sigma * np.abs(np.asarray(y, dtype=np.float64)) ** params.rho
    return float(out) if out.ndim == 0 else out


def jump_eval(params: ModelParams, y):
    """Jump coefficient delta * y; one jump multiplies the state by 1+delta."""
    out = params.delta * np.asarray(y, dtype=np.float64)
    return float(out) if out.ndim == 0 else out


def lyapunov_eval(theta: float, y):
    """V(y) = y**theta - 1 - theta*log(y) for 0 < theta < 1, y > 0.

    Nonnegative, zero exactly at y = 1, and blowing up at both ends of
    (0, inf); the workhorse for the no-explosion / no-exit diagnostics.
    """
    if not 0.0 < theta < 1.0:
        raise EvaluationDomainError(f"theta must be in (0,1), got {theta}")
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0.0):
        raise EvaluationDomainError("lyapunov_eval requires y > 0")
    out = y**theta - 1.0 - theta * np.log(y)
    return float(out) if out.ndim == 0 else out


def generator_with_jump_eval(params: ModelParams, theta: float, y):
    """Jump-extended generator of V applied at y, expanded term by term.

    Computes L V(y) + lam * (V((1+delta) y) - V(y)) where
    L V = V'(y) f(y) + 0.5 V''(y) g(y)^2 with f the drift and
    g(y) = sigma * y**rho:

        a_neg1*th*y^(th-2) - a0*th*y^(th-1) + a1*th*y^th
        - a2*th*y^(th+gamma-1) - a_neg1*th*y^-2 + a0*th*y^-1 - a1*th
        + a2*th*y^(gamma-1)
        - sigma^2*th*(1-th)/2 * y^(th+2*rho-2) + sigma^2*th/2 * y^(2*rho-2)
        + lam*((1+delta)^th - 1)*y^th - lam*th*log(1+delta)

    The grid supremum of this expression over (0, inf) is finite for every
    valid parameter set, which is what rules out explosion and exit to zero.
    """
    if not 0.0 < theta < 1.0:
        raise EvaluationDomainError(f"theta must be in (0,1), got {theta}")
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0.0):
        raise EvaluationDomainError("generator_with_jump_eval requires y > 0")
    th = theta
    s2 = params.sigma**2
    out = (
        params.a_neg1 * th * y ** (th - 2.0)
        - params.a0 * th * y ** (th - 1.0)
        + params.a1 * th * y**th
        - params.a2 * th * y ** (th + params.gamma - 1.0)
        - params.a_neg1 * th * y**-2.0
        + params.a0 * th * y**-1.0
        - params.a1 * th
        + params.a2 * th * y ** (params.gamma - 1.0)
        - 0.5 * s2 * th * (1.0 - th) * y ** (th + 2.0 * params.rho - 2.0)
        + 0.5 * s2 * th * y ** (2.0 * params.rho - 2.0)
        + params.lam * ((1.0 + params.delta) ** th - 1.0) * y**th
        - params.lam * th * math.log1p(params.delta)
    )
    return float(out) if out.ndim == 0 else out


def generator_profile(
    params: ModelParams,
    theta: float,
    n_points: int = 10_000,
    y_min: float = 1e-6,
    y_max: float = 1e6,
) -> tuple[np.ndarray, np.ndarray]:
    """Generator values over a log-spaced grid; both tails must dive down.

    Log spacing covers both asymptotic ends of (0, inf) evenly; 1e4 points
    over [1e-6, 1e6] is the documented default for the empirical bound.
    """
    grid = np.logspace(math.log10(y_min), math.log10(y_max), n_points)
    return grid, generator_with_jump_eval(params, theta, grid)


def generator_supremum(params: ModelParams, theta: float, **kwargs) -> float:
    """Empirical upper bound: the grid supremum of the jump generator."""
    _, values = generator_profile(params, theta, **kwargs)
    return float(np.max(values))


def regime_check(params: ModelParams, p: float = 2.0) -> RegimeReport:
    """Evaluate the parameter-regime inequalities for the given moment order.

    Pure inequality arithmetic on (rho, gamma, a2, sigma, p); boundary
    equalities are detected with ``REGIME_TOL`` absolute tolerance because
    exponents arrive as decimal literals.
    """
    if p < 2.0:
        raise ParameterError(f"regime_check requires p >= 2, got {p}")
    two_rho = 2.0 * params.rho
    edge = params.gamma + 1.0
    if _eq(two_rho, edge):
        boundary_ok = params.a2 > (p - 1.0) * params.sigma**2 / 2.0
        branch = "boundary" if boundary_ok else None
        moment_ok = boundary_ok
    elif _lt(two_rho, edge):
        branch = "strict"
        moment_ok = True
    else:
        branch = None
        moment_ok = False
    return RegimeReport(
        p=p,
        moment_bound_ok=moment_ok,
        moment_bound_branch=branch,
        inverse_moment_ok=_leq(two_rho, edge) and _leq(params.gamma, 2.0),
        pathwise_lower_ok=_leq(params.rho, 1.5) and _leq(params.gamma, 2.0),
        pathwise_upper_ok=_lt(params.rho, edge / 2.0) and _leq(params.gamma, 2.0),
        time_avg_ok=_lt(1.5, params.rho),
    )


def moment_hypotheses_ok(params: ModelParams, p: float) -> bool | None:
    """Whether the moment-bound hypotheses hold for E|y|^p.

    p >= 2 uses the direct moment regime; p < 0 uses the inverse moment
    regime with order |p| (2*rho <= gamma+1 and gamma <= |p|+1).  Returns
    None for p in [0, 2), where no hypothesis applies.
    """
    if p >= 2.0:
        return regime_check(params, p).moment_bound_ok
    if p < 0.0:
        q = -p
        if q < 1.0:
            return None
        return _leq(2.0 * params.rho, params.gamma + 1.0) and _leq(params.gamma, q + 1.0)
    return None
