"""Riccati operator algebra, fixed points, and covariance bounds.

Two maps drive every covariance statement in the toolkit:

    h(X)         = A X A^T + Q                       (no observation)
    g[theta,W](X) = h(X) - theta * A X C^T (C X C^T + W)^{-1} C X A^T

``g`` is the modified algebraic Riccati operator for observations that
arrive with probability theta and carry noise covariance W.  Its unique
positive-definite fixed point exists whenever theta > 1 - 1/rho(A)^2 and
is reached by plain iteration from any PSD start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import (
    IllConditionedTriggerError,
    InfeasibleLambdaError,
    InvalidInputError,
    RiccatiDivergenceError,
)
from .sysmodel import LtiSystem, feasibility_check, steady_state

TRIGGER_MAX_COND = 1e12


def _trigger_matrix(trig) -> np.ndarray:
    """Accept a TriggerParam or a raw symmetric matrix."""
    mat = getattr(trig, "matrix", trig)
    return matcore.symmetrize(mat)


def invert_trigger(trig) -> np.ndarray:
    """Y^{-1} with a condition-number guard.

    Near-singular triggers mean near-deterministic behaviour in one output
    direction; surfacing that as an error beats returning garbage.
    """
    y = _trigger_matrix(trig)
    w = np.linalg.eigvalsh(y)
    if w[0] <= 0.0 or w[-1] / w[0] > TRIGGER_MAX_COND:
        raise IllConditionedTriggerError(
            f"trigger matrix condition number {w[-1] / max(w[0], 0.0):.3g} exceeds {TRIGGER_MAX_COND:.0e}"
        )
    return matcore.inv_psym(y)


def h(sys: LtiSystem, X) -> np.ndarray:
    """Open-channel covariance propagation A X A^T + Q."""
    X = matcore.symmetrize(X)
    return matcore.symmetrize(sys.A @ X @ sys.A.T + sys.Q)


class RiccatiOp:
    """The operator g[theta,W] for a fixed plant.

    Either ``W`` (observation noise, PD) or ``trigger`` (event matrix T,
    implying W = R + T^{-1}) is given.  The trigger form is evaluated
    through the identity

        (C X C^T + R + T^{-1})^{-1} = T0^{-1} - T0^{-1} (T + T0^{-1})^{-1} T0^{-1}

    with T0 = C X C^T + R, which stays well defined for singular PSD T.
    """

    def __init__(self, sys: LtiSystem, theta: float, W=None, trigger=None):
        if not (0.0 < theta <= 1.0):
            raise InvalidInputError(f"theta must be in (0, 1], got {theta}")
        if (W is None) == (trigger is None):
            raise InvalidInputError("provide exactly one of W or trigger")
        self.sys = sys
        self.theta = float(theta)
        if W is not None:
            self.W = matcore.symmetrize(W)
            if matcore.min_eigenvalue(self.W) <= 0:
                raise InvalidInputError("W must be positive definite")
            self.trigger = None
        else:
            self.W = None
            self.trigger = _trigger_matrix(trigger)
            if not matcore.is_psd(self.trigger):
                raise InvalidInputError("trigger matrix must be PSD")

    def g(self, X) -> np.ndarray:
        X = matcore.symmetrize(X)
        sys = self.sys
        axc = sys.A @ X @ sys.C.T
        if self.W is not None:
            t = matcore.symmetrize(sys.C @ X @ sys.C.T + self.W)
            gain = matcore.solve_psym(t, axc.T)
        else:
            t0 = matcore.symmetrize(sys.C @ X @ sys.C.T + sys.R)
            t0_inv = matcore.inv_psym(t0)
            inner = t0_inv - t0_inv @ matcore.solve_psym(
                matcore.symmetrize(self.trigger + t0_inv), t0_inv
            )
            gain = inner @ axc.T
        return matcore.symmetrize(
            sys.A @ X @ sys.A.T + sys.Q - self.theta * (axc @ gain)
        )


def fixed_point(
    op: RiccatiOp,
    start=None,
    rel_tol: float = 1e-11,
    max_iter: int = 100_000,
) -> np.ndarray:
    """Unique PD fixed point of g by plain iteration.

    Start defaults to Q; the result is start-independent.  Non-convergence
    signals an infeasible theta for this plant.
    """
    x = matcore.symmetrize(start) if start is not None else op.sys.Q.copy()
    for _ in range(max_iter):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                nxt = op.g(x)
        except (InvalidInputError, np.linalg.LinAlgError) as exc:
            raise RiccatiDivergenceError(
                "Riccati iteration blew up (theta/lambda infeasible for this plant)"
            ) from exc
        if not np.all(np.isfinite(nxt)):
            raise RiccatiDivergenceError("Riccati iteration produced non-finite values")
        if np.linalg.norm(nxt - x, "fro") < rel_tol * max(1.0, np.linalg.norm(x, "fro")):
            return nxt
        x = nxt
    raise RiccatiDivergenceError(
        f"no fixed point within {max_iter} iterations (theta={op.theta}, rho={op.sys.spectral_radius:.4g})"
    )


def x_zero(sys: LtiSystem, lam: float) -> np.ndarray:
    """Scheduler-independent floor on the mean prior covariance: the fixed
    point of g[1, R/lambda]."""
    return fixed_point(RiccatiOp(sys, 1.0, W=sys.R / lam))


def x_p(sys: LtiSystem, lam: float, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Comparison lower bound from the intermittent-Kalman literature:
    the fixed point of X -> (1 - lambda) A X A^T + Q."""
    if (1.0 - lam) * sys.spectral_radius**2 >= 1.0:
        raise InfeasibleLambdaError(
            f"(1-lambda)*rho(A)^2 = {(1.0 - lam) * sys.spectral_radius**2:.4g} >= 1"
        )
    x = sys.Q.copy()
    for _ in range(max_iter):
        nxt = matcore.symmetrize((1.0 - lam) * (sys.A @ x @ sys.A.T) + sys.Q)
        if np.linalg.norm(nxt - x, "fro") < tol:
            return nxt
        x = nxt
    raise InfeasibleLambdaError("x_p iteration did not converge")


def blend_r_one(sys: LtiSystem, w_silent: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """R1 with R1^{-1} = gamma R^{-1} + (lambda - gamma) (R + T^{-1})^{-1}.

    ``w_silent`` is the silent-step noise R + T^{-1}.
    """
    if not (0.0 <= gamma <= lam + 1e-12):
        raise InvalidInputError(f"need 0 <= gamma <= lambda, got gamma={gamma}, lambda={lam}")
    r_inv = matcore.inv_psym(sys.R)
    ws_inv = matcore.inv_psym(w_silent)
    return matcore.inv_psym(gamma * r_inv + (lam - gamma) * ws_inv)


@dataclass(frozen=True)
class BoundSet:
    """Asymptotic covariance bounds for one (plant, lambda, trigger) choice."""

    x_upper: np.ndarray
    x_lower: np.ndarray
    x_zero: np.ndarray
    r_one: np.ndarray
    x_p: np.ndarray | None = None


def _check_ordering(lo, hi, label: str):
    diff = matcore.symmetrize(hi) - matcore.symmetrize(lo)
    if not matcore.is_psd(diff):
        raise RiccatiDivergenceError(
            f"bound ordering violated ({label}): min eig {matcore.min_eigenvalue(diff):.3g}"
        )


def bound_set_open(sys: LtiSystem, lam: float, Y, gamma: float) -> BoundSet:
    """Lower/upper fixed-point bounds on the open-loop mean covariance.

    x_upper is the fixed point of g[lambda, R + Y^{-1}]; x_lower uses the
    blended noise R1 at the realized rate gamma; x_zero is the
    scheduler-independent floor.
    """
    if not feasibility_check(sys, lam):
        raise InfeasibleLambdaError(f"lambda={lam} infeasible for rho={sys.spectral_radius:.4g}")
    w_silent = matcore.symmetrize(sys.R + invert_trigger(Y))
    upper = fixed_point(RiccatiOp(sys, lam, W=w_silent))
    r1 = blend_r_one(sys, w_silent, gamma, lam)
    lower = fixed_point(RiccatiOp(sys, 1.0, W=r1))
    x0 = x_zero(sys, lam)
    _check_ordering(x0, lower, "x_zero <= x_lower")
    _check_ordering(lower, upper, "x_lower <= x_upper")
    try:
        xp = x_p(sys, lam)
    except InfeasibleLambdaError:
        xp = None
    return BoundSet(x_upper=upper, x_lower=lower, x_zero=x0, r_one=r1, x_p=xp)


def bound_set_closed(sys: LtiSystem, lam: float, Z) -> BoundSet:
    """Closed-loop analogue of :func:`bound_set_open`.

    The blend rate is the closed-loop rate upper bound evaluated at the
    upper fixed point (no closed form exists for the true rate).
    """
    from .rates import closed_loop_rate_upper

    if not feasibility_check(sys, lam):
        raise InfeasibleLambdaError(f"lambda={lam} infeasible for rho={sys.spectral_radius:.4g}")
    w_silent = matcore.symmetrize(sys.R + invert_trigger(Z))
    upper = fixed_point(RiccatiOp(sys, lam, W=w_silent))
    gamma_bar = closed_loop_rate_upper(upper, Z, sys, lam)
    r1 = blend_r_one(sys, w_silent, gamma_bar, lam)
    lower = fixed_point(RiccatiOp(sys, 1.0, W=r1))
    x0 = x_zero(sys, lam)
    _check_ordering(x0, lower, "x_zero <= x_lower")
    _check_ordering(lower, upper, "x_lower <= x_upper")
    try:
        xp = x_p(sys, lam)
    except InfeasibleLambdaError:
        xp = None
    return BoundSet(x_upper=upper, x_lower=lower, x_zero=x0, r_one=r1, x_p=xp)


def bounded_iterates(sys: LtiSystem, op: RiccatiOp, k: int) -> list[np.ndarray]:
    """First k iterates g^1(Sigma), ..., g^k(Sigma) from the stationary
    covariance (the finite-horizon bound sequence)."""
    x = steady_state(sys).Sigma
    out = []
    for _ in range(k):
        x = op.g(x)
        out.append(x)
    return out
