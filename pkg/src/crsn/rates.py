"""Communication-rate formulas, bounds, and optimality gaps.

The average communication rate is gamma = lambda * E[epsilon].  For the
open-loop trigger it has the closed form

    gamma = lambda * (1 - det(I + Pi Y)^{-1/2})

and for the closed-loop trigger only a per-step expression and an upper
bound evaluated at the covariance upper bound are available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import InvalidInputError


@dataclass(frozen=True)
class RateReport:
    """Rate figures attached to a designed trigger."""

    gamma: float
    f1: float
    f2: float
    gamma_bar: float | None = None
    kappa_bound: float | None = None


def det_i_plus_product(S, T) -> float:
    """det(I + S T) for PSD S, T via the symmetric eigenproblem of
    S^{1/2} T S^{1/2} (the raw product is non-symmetric and fragile)."""
    s_half = matcore.sqrt_psd(S)
    mu = np.linalg.eigvalsh(matcore.symmetrize(s_half @ matcore.symmetrize(T) @ s_half))
    return float(np.prod(1.0 + np.clip(mu, 0.0, None)))


def open_loop_rate(lam: float, Pi, Y) -> float:
    """Closed-form open-loop rate, Pi the stationary output covariance."""
    y = matcore.symmetrize(getattr(Y, "matrix", Y))
    det = det_i_plus_product(Pi, y)
    return lam * (1.0 - det ** -0.5)


def rate_sandwich(lam: float, trace_piy: float) -> tuple[float, float]:
    """(f1, f2) with f1(x) <= gamma <= f2(x) at x = tr(Pi Y)."""
    if trace_piy < -1e-12:
        raise InvalidInputError(f"tr(Pi Y) must be nonnegative, got {trace_piy}")
    x = max(trace_piy, 0.0)
    f1 = lam * (1.0 - (1.0 + x) ** -0.5)
    f2 = lam * (1.0 - np.exp(-0.5 * x))
    return f1, f2


def closed_loop_rate_upper(X_bar, Z, sys, lam: float) -> float:
    """gamma_bar = lambda (1 - det(I + (C X_bar C^T + R) Z)^{-1/2})."""
    z = matcore.symmetrize(getattr(Z, "matrix", Z))
    t = matcore.symmetrize(sys.C @ matcore.symmetrize(X_bar) @ sys.C.T + sys.R)
    det = det_i_plus_product(t, z)
    return lam * (1.0 - det ** -0.5)


def closed_loop_rate_empirical(p_prior_trace, Z, sys, lam: float) -> float:
    """Time-average of the per-step rate expression over realized P^-.

    ``p_prior_trace`` is an iterable of prior covariance matrices from a
    long stationary run.
    """
    z = matcore.symmetrize(getattr(Z, "matrix", Z))
    total = 0.0
    count = 0
    for p in p_prior_trace:
        t = matcore.symmetrize(sys.C @ matcore.symmetrize(p) @ sys.C.T + sys.R)
        total += lam * (1.0 - det_i_plus_product(t, z) ** -0.5)
        count += 1
    if count == 0:
        raise InvalidInputError("empty P^- trace")
    return total / count


def gap_open(lam: float, Pi, Y_star) -> float:
    """Upper bound on the open-loop suboptimality gap at the trace-proxy
    solution Y*."""
    y = matcore.symmetrize(getattr(Y_star, "matrix", Y_star))
    tr = float(np.trace(matcore.symmetrize(Pi) @ y))
    det = det_i_plus_product(Pi, y)
    return lam * ((1.0 + tr) ** -0.5 - det ** -0.5)


def gap_closed(lam: float, upsilon_star: float, X_star, Z_star, sys) -> float:
    """Closed-loop gap bound from the global objective value upsilon*."""
    z = matcore.symmetrize(getattr(Z_star, "matrix", Z_star))
    t = matcore.symmetrize(sys.C @ matcore.symmetrize(X_star) @ sys.C.T + sys.R)
    det = det_i_plus_product(t, z)
    return lam * ((1.0 + upsilon_star) ** -0.5 - det ** -0.5)
