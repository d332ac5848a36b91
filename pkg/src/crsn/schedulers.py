"""Sensor-side transmission decisions.

Stochastic event triggers fire with probability 1 - exp(-q/2) where q is
a quadratic form of the raw measurement (open loop) or of the innovation
(closed loop).  Two offline baselines (random, maximally-even periodic)
are included for the comparison experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import InvalidInputError, InvalidRateError

OPEN = "open"
CLOSED = "closed"


@dataclass(frozen=True)
class TriggerParam:
    """Symmetric positive-definite event matrix with its loop mode."""

    matrix: np.ndarray
    mode: str

    def __post_init__(self):
        mat = matcore.symmetrize(self.matrix)
        object.__setattr__(self, "matrix", mat)
        if self.mode not in (OPEN, CLOSED):
            raise InvalidInputError(f"mode must be 'open' or 'closed', got {self.mode!r}")
        if matcore.min_eigenvalue(mat) <= 0:
            raise InvalidInputError("trigger matrix must be positive definite")


@dataclass(frozen=True)
class TriggerDecision:
    """One transmission decision; epsilon is None when the channel was busy
    and the realized decision is unobservable."""

    epsilon: int | None
    zeta: float


def _quad(vec, mat) -> float:
    v = np.atleast_1d(np.asarray(vec, dtype=float))
    return float(v @ mat @ v)


def trigger_open(y, Y: TriggerParam, rng: np.random.Generator) -> TriggerDecision:
    """Open-loop decision on the raw measurement y."""
    if Y.mode != OPEN:
        raise InvalidInputError("trigger_open needs an open-mode parameter")
    zeta = float(rng.random())
    eps = int(zeta > math.exp(-0.5 * _quad(y, Y.matrix)))
    return TriggerDecision(epsilon=eps, zeta=zeta)


def trigger_closed(z, Z: TriggerParam, rng: np.random.Generator) -> TriggerDecision:
    """Closed-loop decision on the innovation z = y - yhat_prior."""
    if Z.mode != CLOSED:
        raise InvalidInputError("trigger_closed needs a closed-mode parameter")
    zeta = float(rng.random())
    eps = int(zeta > math.exp(-0.5 * _quad(z, Z.matrix)))
    return TriggerDecision(epsilon=eps, zeta=zeta)


def trigger_random_offline(rate: float, lam: float, rng: np.random.Generator) -> TriggerDecision:
    """Transmit with probability rate/lambda, independent of the data."""
    if not (0.0 <= rate <= lam):
        raise InvalidRateError(f"need 0 <= rate <= lambda, got rate={rate}, lambda={lam}")
    zeta = float(rng.random())
    return TriggerDecision(epsilon=int(zeta < rate / lam), zeta=zeta)


def trigger_periodic_offline(step: int, rate: float, lam: float, phase: int = 0) -> TriggerDecision:
    """Deterministic maximally-even pattern at average rate rate/lambda.

    Fires at step k iff floor((k+1) r) > floor(k r) with r = rate/lambda;
    transmissions are spread as evenly as a fixed-rate pattern allows.
    """
    if not (0.0 < rate <= lam):
        raise InvalidRateError(f"need 0 < rate <= lambda, got rate={rate}, lambda={lam}")
    r = rate / lam
    k = step + phase
    eps = int(math.floor((k + 1) * r) > math.floor(k * r))
    return TriggerDecision(epsilon=eps, zeta=0.0)
