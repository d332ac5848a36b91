"""Stochastic event-triggered remote state estimation over an
intermittently available shared channel.

Simulation of the plant/channel/scheduler/estimator loop, Riccati-based
covariance bounds, closed-form communication rates, and trigger-parameter
design: a semidefinite program for the open-loop scheduler and a global
convex-envelope branch-and-bound for the closed-loop one.
"""

from . import bnb, conic, estimator, harness, matcore, rates, riccati, schedulers, sysmodel
from .errors import CrsnError

__version__ = "0.1.0"

__all__ = [
    "bnb",
    "conic",
    "estimator",
    "harness",
    "matcore",
    "rates",
    "riccati",
    "schedulers",
    "sysmodel",
    "CrsnError",
]
