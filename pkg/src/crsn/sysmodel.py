"""Plant, channel, and single-step trajectory simulation.

The plant is the discrete-time LTI process

    x[k+1] = A x[k] + w[k],      w ~ N(0, Q)
    y[k]   = C x[k] + v[k],      v ~ N(0, R)

observed through a shared channel that is free with probability
``lambda`` independently at every step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import ConfigError, InvalidInputError, UnstablePlantError


class LtiSystem:
    """The plant (A, C, Q, R, Pi0) and its basic spectral facts.

    Parameters
    ----------
    A : (n, n) array_like
        State transition matrix.
    C : (m, n) array_like
        Output map.
    Q : (n, n) array_like
        Process-noise covariance, PSD.
    R : (m, m) array_like
        Measurement-noise covariance, PD.
    Pi0 : (n, n) array_like, optional
        Initial-state covariance, PSD.  Defaults to Q.
    """

    def __init__(self, A, C, Q, R, Pi0=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        C = np.asarray(C, dtype=float)
        if C.ndim < 2:
            C = np.atleast_2d(C)
        self.C = C
        self.Q = matcore.symmetrize(Q)
        self.R = matcore.symmetrize(R)
        self.Pi0 = matcore.symmetrize(Pi0) if Pi0 is not None else self.Q.copy()

        n = self.A.shape[0]
        m = self.C.shape[0]
        if self.A.shape != (n, n):
            raise InvalidInputError(f"A must be square, got {self.A.shape}")
        if self.C.shape != (m, n):
            raise InvalidInputError(f"C must be m-by-n, got {self.C.shape}")
        if self.Q.shape != (n, n) or self.R.shape != (m, m) or self.Pi0.shape != (n, n):
            raise InvalidInputError("Q/R/Pi0 dimensions do not match A, C")
        for name, mat in (("A", self.A), ("C", self.C)):
            if not np.all(np.isfinite(mat)):
                raise InvalidInputError(f"{name} has non-finite entries")
        if not matcore.is_psd(self.Q):
            raise InvalidInputError("Q must be positive semidefinite")
        if matcore.min_eigenvalue(self.R) <= 0:
            raise InvalidInputError("R must be positive definite")
        if not matcore.is_psd(self.Pi0):
            raise InvalidInputError("Pi0 must be positive semidefinite")

        self.n = n
        self.m = m
        self.spectral_radius = float(max(abs(np.linalg.eigvals(self.A))))
        self.stable = self.spectral_radius < 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "LtiSystem":
        try:
            return cls(d["A"], d["C"], d["Q"], d["R"], d.get("Pi0"))
        except KeyError as exc:
            raise ConfigError(f"plant spec missing key {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "LtiSystem":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "C": self.C.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "Pi0": self.Pi0.tolist(),
        }

    def q_factor(self) -> np.ndarray:
        """Cached factor L with L L^T = Q."""
        if not hasattr(self, "_q_factor"):
            self._q_factor = covariance_factor(self.Q)
        return self._q_factor

    def r_factor(self) -> np.ndarray:
        """Cached factor L with L L^T = R."""
        if not hasattr(self, "_r_factor"):
            self._r_factor = covariance_factor(self.R)
        return self._r_factor

    def __repr__(self):
        return f"LtiSystem(n={self.n}, m={self.m}, rho={self.spectral_radius:.4g})"


@dataclass(frozen=True)
class SteadyState:
    """Stationary state covariance Sigma and output covariance Pi."""

    Sigma: np.ndarray
    Pi: np.ndarray


@dataclass(frozen=True)
class ChannelModel:
    """Bernoulli channel: free (eta=1) with probability lam each step."""

    lam: float
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.lam <= 1.0):
            raise InvalidInputError(f"lambda must be in (0, 1], got {self.lam}")


@dataclass
class SimState:
    """Realized plant state at a given step."""

    x: np.ndarray
    step: int = 0


def steady_state(sys: LtiSystem, tol: float = 1e-12, max_iter: int = 1_000_000) -> SteadyState:
    """Stationary covariances of a stable plant.

    Sigma solves the discrete Lyapunov equation Sigma = A Sigma A^T + Q by
    fixed-point iteration from Q; Pi = C Sigma C^T + R.
    """
    if not sys.stable:
        raise UnstablePlantError(
            f"steady state needs rho(A) < 1, got {sys.spectral_radius:.4g}"
        )
    sigma = sys.Q.copy()
    for _ in range(max_iter):
        nxt = matcore.symmetrize(sys.A @ sigma @ sys.A.T + sys.Q)
        if np.linalg.norm(nxt - sigma, "fro") < tol:
            sigma = nxt
            break
        sigma = nxt
    pi = matcore.symmetrize(sys.C @ sigma @ sys.C.T + sys.R)
    return SteadyState(Sigma=sigma, Pi=pi)


def feasibility_check(sys: LtiSystem, lam: float) -> bool:
    """True iff lambda > 1 - 1/rho(A)^2, the convergence condition for the
    mean error covariance under intermittent observations."""
    rho = sys.spectral_radius
    if rho == 0.0:
        return True
    return lam > 1.0 - 1.0 / rho**2


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

def path_rng(seed: int, path_index: int = 0) -> np.random.Generator:
    """Independent per-path generator via a counter-based seed split."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(path_index,)))


def standard_normals(rng: np.random.Generator, size: int) -> np.ndarray:
    """Box-Muller standard normals driven by rng.random() uniforms.

    Self-contained transform so trajectories depend only on the raw
    uniform stream (stable across numpy releases).
    """
    if size == 0:
        return np.zeros(0)
    pairs = (size + 1) // 2
    u = rng.random((pairs, 2))
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    angle = 2.0 * np.pi * u[:, 1]
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return z[:size]


def covariance_factor(cov) -> np.ndarray:
    """Factor L with L L^T = cov.  Cholesky when PD, eigen square root
    otherwise (Q is allowed to be singular PSD)."""
    cov = matcore.symmetrize(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return matcore.sqrt_psd(cov)


def sample_gaussian(rng: np.random.Generator, factor: np.ndarray, count: int = 1) -> np.ndarray:
    """Draw count vectors from N(0, L L^T) given the factor L."""
    dim = factor.shape[0]
    z = standard_normals(rng, count * dim).reshape(count, dim)
    return z @ factor.T


def initial_state(sys: LtiSystem, rng: np.random.Generator) -> SimState:
    """Draw x0 from the stationary law N(0, Sigma) for stable plants and
    from N(0, Pi0) otherwise."""
    cov = steady_state(sys).Sigma if sys.stable else sys.Pi0
    x0 = sample_gaussian(rng, covariance_factor(cov), 1)[0]
    return SimState(x=x0, step=0)


def step_plant(state: SimState, sys: LtiSystem, rng: np.random.Generator):
    """Advance the plant one step.

    Returns ``(next_state, y)`` where ``y`` is the measurement of the
    *current* state.  Draw order per step is fixed: w then v.
    """
    w = sample_gaussian(rng, sys.q_factor(), 1)[0]
    v = sample_gaussian(rng, sys.r_factor(), 1)[0]
    y = sys.C @ state.x + v
    x_next = sys.A @ state.x + w
    return SimState(x=x_next, step=state.step + 1), y


def draw_channel(ch: ChannelModel, rng: np.random.Generator) -> int:
    """One Bernoulli(lambda) channel availability draw."""
    return int(rng.random() < ch.lam)
