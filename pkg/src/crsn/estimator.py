"""Remote MMSE estimators and a grid-based exact-Bayes oracle.

The remote estimator sees three regimes each step:

* channel busy (eta=0): nothing to learn, covariance carried over;
* packet received (eta=1, eps=1): standard Kalman measurement update;
* channel free but silent (eta=1, eps=0): the *absence* of a packet is
  informative -- an update with inflated noise R + T^{-1}, where T is
  the event matrix.

Open- and closed-loop filters share the gain and covariance recursions
and differ only in the mean update.  The grid oracle performs exact
Bayesian filtering on a dense scalar grid and certifies both filters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import InvalidInputError, WidenGridError
from .schedulers import TriggerParam
from .sysmodel import LtiSystem, steady_state


@dataclass(frozen=True)
class FilterState:
    """Prior/posterior estimate and covariance plus the applied gain."""

    x_prior: np.ndarray
    P_prior: np.ndarray
    x_post: np.ndarray
    P_post: np.ndarray
    gain: np.ndarray


@dataclass(frozen=True)
class ObservationRecord:
    """What the remote estimator learned in one step.

    ``epsilon`` is None exactly when the channel was busy; ``y`` is
    present exactly when the packet arrived (eta = epsilon = 1).
    """

    eta: int
    epsilon: int | None
    y: np.ndarray | None = None

    def __post_init__(self):
        if self.eta not in (0, 1):
            raise InvalidInputError(f"eta must be 0 or 1, got {self.eta}")
        if self.eta == 0:
            if self.epsilon is not None:
                raise InvalidInputError("epsilon must be absent when the channel is busy")
            if self.y is not None:
                raise InvalidInputError("no measurement can arrive when the channel is busy")
        else:
            if self.epsilon not in (0, 1):
                raise InvalidInputError("epsilon must be 0 or 1 when the channel is free")
            if (self.y is not None) != (self.epsilon == 1):
                raise InvalidInputError("y must be present iff the packet was sent")


def initial_filter_state(sys: LtiSystem) -> FilterState:
    """Prior at k=0: zero mean with the stationary covariance for stable
    plants, Pi0 otherwise."""
    p0 = steady_state(sys).Sigma if sys.stable else sys.Pi0.copy()
    zero = np.zeros(sys.n)
    return FilterState(
        x_prior=zero,
        P_prior=p0,
        x_post=zero.copy(),
        P_post=p0.copy(),
        gain=np.zeros((sys.n, sys.m)),
    )


def _gain_and_cov(fs: FilterState, obs: ObservationRecord, trig_inv: np.ndarray, sys: LtiSystem):
    """Shared gain/covariance recursion for both filter flavours."""
    if obs.eta == 0:
        return np.zeros((sys.n, sys.m)), fs.P_prior.copy()
    extra = 0.0 if obs.epsilon == 1 else trig_inv
    innov_cov = matcore.symmetrize(sys.C @ fs.P_prior @ sys.C.T + sys.R + extra)
    gain = matcore.solve_psym(innov_cov, (fs.P_prior @ sys.C.T).T).T
    p_post = matcore.symmetrize(fs.P_prior - gain @ sys.C @ fs.P_prior)
    return gain, p_post


def measurement_update_open(
    fs: FilterState, obs: ObservationRecord, Y: TriggerParam, sys: LtiSystem
) -> FilterState:
    """Open-loop measurement update.

    Silence with a free channel pulls the estimate toward zero in output
    space: xhat = (I - K C) xhat_prior (+ K y when the packet arrived).
    """
    y_inv = matcore.inv_psym(Y.matrix)
    gain, p_post = _gain_and_cov(fs, obs, y_inv, sys)
    x_post = fs.x_prior - gain @ (sys.C @ fs.x_prior)
    if obs.eta == 1 and obs.epsilon == 1:
        x_post = x_post + gain @ np.atleast_1d(obs.y)
    return FilterState(fs.x_prior, fs.P_prior, x_post, p_post, gain)


def measurement_update_closed(
    fs: FilterState, obs: ObservationRecord, Z: TriggerParam, sys: LtiSystem
) -> FilterState:
    """Closed-loop measurement update: the mean moves only on arrival
    (zero innovation is the no-trigger conditional mean), the covariance
    recursion is identical to the open-loop one."""
    z_inv = matcore.inv_psym(Z.matrix)
    gain, p_post = _gain_and_cov(fs, obs, z_inv, sys)
    x_post = fs.x_prior.copy()
    if obs.eta == 1 and obs.epsilon == 1:
        innovation = np.atleast_1d(obs.y) - sys.C @ fs.x_prior
        x_post = x_post + gain @ innovation
    return FilterState(fs.x_prior, fs.P_prior, x_post, p_post, gain)


def time_update(fs: FilterState, sys: LtiSystem) -> FilterState:
    """Propagate the posterior one step: xhat <- A xhat, P <- A P A^T + Q."""
    x_prior = sys.A @ fs.x_post
    p_prior = matcore.symmetrize(sys.A @ fs.P_post @ sys.A.T + sys.Q)
    return FilterState(
        x_prior=x_prior,
        P_prior=p_prior,
        x_post=x_prior.copy(),
        P_post=p_prior.copy(),
        gain=np.zeros((sys.n, sys.m)),
    )


# ---------------------------------------------------------------------------
# grid oracle (scalar systems)
# ---------------------------------------------------------------------------

class GridOracle1D:
    """Exact Bayesian filter on a dense grid for scalar plants.

    The grid covers +-span standard deviations of the stationary state
    and tracks the full posterior density, so it is immune to any
    Gaussianity assumption the closed-form filters make.
    """

    def __init__(
        self,
        sys: LtiSystem,
        trigger: TriggerParam,
        n_points: int = 4001,
        span: float = 8.0,
        mass_tol: float = 1e-6,
    ):
        if sys.n != 1 or sys.m != 1:
            raise InvalidInputError("grid oracle supports scalar systems only")
        if n_points < 4001:
            raise InvalidInputError("grid oracle needs at least 4001 points")
        self.sys = sys
        self.trigger = trigger
        self.mass_tol = mass_tol
        sigma = float(steady_state(sys).Sigma[0, 0]) if sys.stable else float(sys.Pi0[0, 0])
        half = span * np.sqrt(sigma)
        self.x = np.linspace(-half, half, n_points)
        self.dx = self.x[1] - self.x[0]
        q = float(sys.Q[0, 0])
        if q <= 0:
            raise InvalidInputError("grid oracle needs Q > 0 for the predict convolution")
        a = float(sys.A[0, 0])
        # dense predict kernel: column j holds the density of A*x_j + w
        diff = self.x[:, None] - a * self.x[None, :]
        self.predict_kernel = np.exp(-0.5 * diff**2 / q) / np.sqrt(2 * np.pi * q) * self.dx
        # start from the filter's initial prior N(0, sigma)
        self.density = np.exp(-0.5 * self.x**2 / sigma) / np.sqrt(2 * np.pi * sigma)
        self.density /= self.density.sum() * self.dx

    def predict(self):
        new = self.predict_kernel @ self.density
        mass = new.sum() * self.dx
        if 1.0 - mass > self.mass_tol:
            raise WidenGridError(f"predict step lost {1.0 - mass:.3g} probability mass")
        self.density = new / mass

    def update(self, obs: ObservationRecord, yhat_prior: float | None = None):
        """Condition on one step of remote information.

        ``yhat_prior`` is the feedback value the sensor actually used
        (closed-loop histories only).
        """
        if obs.eta == 0:
            return
        c = float(self.sys.C[0, 0])
        r = float(self.sys.R[0, 0])
        t = float(self.trigger.matrix[0, 0])
        center = 0.0
        if self.trigger.mode == "closed":
            if yhat_prior is None:
                raise InvalidInputError("closed-loop oracle update needs the feedback value")
            center = float(yhat_prior)
        if obs.epsilon == 1:
            y = float(np.atleast_1d(obs.y)[0])
            trig_arg = y - center if self.trigger.mode == "closed" else y
            # joint likelihood of (packet sent, y observed)
            like = np.exp(-0.5 * (y - c * self.x) ** 2 / r)
            like *= 1.0 - np.exp(-0.5 * t * trig_arg**2)
        else:
            # silence with a free channel: integrate the keep-probability
            # exp(-t*z^2/2) against N(y; c x, r) in closed form
            shift = c * self.x - center
            like = (1.0 + r * t) ** -0.5 * np.exp(-0.5 * t * shift**2 / (1.0 + r * t))
        post = self.density * like
        mass = post.sum() * self.dx
        if mass <= 0:
            raise WidenGridError("update annihilated the grid posterior")
        self.density = post / mass

    def moments(self) -> tuple[float, float, float]:
        """Posterior mean, variance, and excess kurtosis."""
        w = self.density * self.dx
        mean = float(np.sum(w * self.x))
        centered = self.x - mean
        var = float(np.sum(w * centered**2))
        kurt = float(np.sum(w * centered**4) / var**2 - 3.0)
        return mean, var, kurt


def grid_oracle_posterior(
    history,
    sys: LtiSystem,
    trigger: TriggerParam,
    feedback=None,
    n_points: int = 4001,
    span: float = 8.0,
    return_trace: bool = False,
):
    """Exact posterior mean and variance after a scalar observation history.

    Parameters
    ----------
    history : sequence of ObservationRecord
        Per-step channel/decision/measurement records.
    feedback : sequence of float, optional
        Per-step yhat_prior values (required for closed-loop triggers).
    return_trace : bool
        When true, also return per-step (mean, var, kurtosis) posterior
        rows for side-by-side filter comparison.

    The oracle predicts *between* steps, so step k's posterior conditions
    on records 0..k, matching the filter recursion.
    """
    oracle = GridOracle1D(sys, trigger, n_points=n_points, span=span)
    trace = []
    for k, obs in enumerate(history):
        if k > 0:
            oracle.predict()
        fb = None if feedback is None else feedback[k]
        oracle.update(obs, yhat_prior=fb)
        if return_trace:
            trace.append(oracle.moments())
    mean, var, _ = oracle.moments()
    if return_trace:
        return (mean, var), trace
    return mean, var
