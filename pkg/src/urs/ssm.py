"""Unscented Kalman filtering, RTS smoothing and multi-step prediction.

The engine works with any *model* object exposing:

``dim``
    state dimension.
``transition(points, u)``
    maps a ``(k, dim)`` stack of states to the next states.
``process_cov()``
    additive evolution noise covariance.
``measure(points, batch)``
    maps states to a ``(k, n_obs)`` stack of predicted observations.
``obs_cov(batch)``
    additive observation noise covariance.
``observed(batch)``
    observed values as a vector.
``sigma_gaussian(g)``
    distribution of the volatility readout given a state Gaussian.

:class:`ReservoirModel` is the model of the library; :class:`LinearModel` is
an affine hook used to check the engine against the exact Kalman recursions.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ContractError, ShapeError
from .gaussian import Gaussian, cholesky, repair_cov, solve_psd
from .pricing import ObservationBatch, call_price
from .reservoir import ReservoirParams, evolve, readout, readout_gaussian
from .unscented import UtConfig, augmented_transform, propagate, sigma_points

SIGMA_CLIP = (1e-4, 0.9999)


class ReservoirModel:
    """Reservoir evolution observed through Black-Scholes prices of the readout."""

    def __init__(self, params, sigma_clip=SIGMA_CLIP):
        self.params = params
        self.sigma_clip = sigma_clip

    @property
    def dim(self):
        return self.params.p

    def transition(self, points, u):
        return evolve(self.params, points, u)

    def process_cov(self):
        return np.asarray(self.params.W)

    def measure(self, points, batch):
        sigma = np.clip(readout(points), *self.sigma_clip)
        return call_price(batch.spot, batch.rate, batch.strike, batch.maturity, sigma[:, None])

    def obs_cov(self, batch):
        return self.params.v * np.eye(batch.size)

    def observed(self, batch):
        if batch.prices is None:
            raise ContractError("batch carries no observed prices")
        return batch.prices

    def sigma_gaussian(self, g):
        return readout_gaussian(g)


class LinearModel:
    """Affine hook: ``x' = A x + B u + c + w``, ``y = H x + d + e``.

    Observations passed to the engine are plain vectors.
    """

    def __init__(self, A, Q, H, R, c=None, B=None, d=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        n = self.A.shape[0]
        self.c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
        self.B = None if B is None else np.atleast_2d(np.asarray(B, dtype=float))
        self.d = np.zeros(self.H.shape[0]) if d is None else np.asarray(d, dtype=float)

    @property
    def dim(self):
        return self.A.shape[0]

    def transition(self, points, u):
        out = points @ self.A.T + self.c
        if self.B is not None and u is not None:
            out = out + self.B @ np.asarray(u, dtype=float)
        return out

    def process_cov(self):
        return self.Q

    def measure(self, points, batch):
        return points @ self.H.T + self.d

    def obs_cov(self, batch):
        return self.R

    def observed(self, batch):
        return np.atleast_1d(np.asarray(batch, dtype=float))

    def sigma_gaussian(self, g):
        return readout_gaussian(g)


def as_model(model):
    if isinstance(model, ReservoirParams):
        return ReservoirModel(model)
    return model


@dataclass(frozen=True)
class FilterState:
    """One filtering step.

    ``cross_prev`` is the covariance between the state at the previous step
    (filtered) and the current state (predicted).
    """

    prior: Gaussian
    posterior: Gaussian
    cross_prev: np.ndarray
    predicted_obs: Gaussian
    log_evidence_increment: float


@dataclass(frozen=True)
class FilterResult:
    initial: Gaussian
    states: list

    def __len__(self):
        return len(self.states)

    @property
    def final(self):
        return self.states[-1].posterior if self.states else self.initial

    @property
    def log_evidence(self):
        return float(sum(s.log_evidence_increment for s in self.states))


@dataclass(frozen=True)
class SmoothedTrajectory:
    """Smoothed marginals for t = 0..T, with T cross-covariances and gains.

    ``cross[t]`` is ``Cov(theta_t, theta_{t+1} | all data)``.
    """

    marginals: list
    cross: list
    gains: list

    def __len__(self):
        return len(self.cross)

    def pair(self, t):
        """Joint of ``(theta_{t-1}, theta_t)`` given all data, for ``t >= 1``."""
        from .gaussian import JointGaussian

        return JointGaussian(self.marginals[t - 1], self.marginals[t], self.cross[t - 1])


@dataclass(frozen=True)
class UpdateResult:
    posterior: Gaussian
    predicted_obs: Gaussian
    log_evidence_increment: float


@dataclass(frozen=True)
class Forecast:
    """Predictive distributions ``k`` steps ahead of the last update."""

    horizon: int
    state: Gaussian
    sigma: Gaussian
    price: Gaussian


def predict(model, posterior, u, cfg=UtConfig()):
    """Time update. Returns ``(prior, cross)``."""
    model = as_model(model)
    if posterior.dim != model.dim:
        raise ShapeError("posterior dimension %d, model dimension %d" % (posterior.dim, model.dim))
    joint = augmented_transform(posterior, lambda x: model.transition(x, u), cfg)
    prior = Gaussian(joint.second.mean, repair_cov(joint.second.cov + model.process_cov()))
    return prior, joint.cross


def predict_observation(model, prior, batch, cfg=UtConfig(), with_noise=True):
    """Predictive observation Gaussian and state-observation cross-covariance."""
    model = as_model(model)
    sps = sigma_points(prior, cfg)
    _, mean, cov, cross = propagate(sps, lambda x: model.measure(x, batch))
    if with_noise:
        cov = cov + model.obs_cov(batch)
    return Gaussian(mean, repair_cov(cov)), cross


def _matmul(a, b):
    return np.sum(a[:, :, None] * b[None, :, :], axis=1)


def update(model, prior, batch, cfg=UtConfig()):
    """Measurement update with a joint sigma-point Gaussian approximation."""
    model = as_model(model)
    y = model.observed(batch)
    pred, cross = predict_observation(model, prior, batch, cfg)
    S = pred.cov
    lower = cholesky(S)
    if np.any(np.diag(lower) <= 0):
        raise ContractError("innovation covariance is singular")
    # products spelled as reductions so that each entry of the state update
    # is computed the same way whatever the state dimension
    gain = _matmul(cross, solve_psd(S, np.eye(S.shape[0])))
    resid = y - pred.mean
    mean = prior.mean + np.sum(gain * resid, axis=1)
    gs = _matmul(gain, S)
    cov = prior.cov - np.sum(gs[:, None, :] * gain[None, :, :], axis=-1)
    z = np.linalg.solve(lower, resid)
    loglik = -0.5 * (z @ z) - np.sum(np.log(np.diag(lower))) - 0.5 * y.size * np.log(2 * np.pi)
    return UpdateResult(Gaussian(mean, repair_cov(cov)), pred, float(loglik))


def forward_filter(model, initial, inputs, observations, cfg=UtConfig()):
    """Alternate predict/update over ``len(observations)`` steps.

    ``inputs[t]`` drives the transition into step ``t + 1``; it may be
    ``None`` for models without exogenous input.
    """
    model = as_model(model)
    observations = list(observations)
    if inputs is None:
        inputs = [None] * len(observations)
    if len(inputs) != len(observations):
        raise ContractError("inputs and observations differ in length")
    states = []
    post = initial
    for u, batch in zip(inputs, observations):
        prior, cross = predict(model, post, u, cfg)
        res = update(model, prior, batch, cfg)
        states.append(FilterState(prior, res.posterior, cross, res.predicted_obs,
                                  res.log_evidence_increment))
        post = res.posterior
    return FilterResult(initial, states)


def rts_smooth(result, cfg=UtConfig()):
    """Backward pass producing smoothed marginals and consecutive cross-covariances."""
    states = result.states
    if not states:
        raise ContractError("cannot smooth an empty filter pass")
    T = len(states)
    posts = [result.initial] + [s.posterior for s in states]
    marginals = [None] * (T + 1)
    cross = [None] * T
    gains = [None] * T
    marginals[T] = posts[T]
    for t in range(T - 1, -1, -1):
        nxt = states[t]  # prior and cross for step t + 1
        R = nxt.prior.cov
        D = solve_psd(R, nxt.cross_prev.T).T
        sm_next = marginals[t + 1]
        m = posts[t].mean + D @ (sm_next.mean - nxt.prior.mean)
        C = posts[t].cov + D @ (sm_next.cov - R) @ D.T
        marginals[t] = Gaussian(m, repair_cov(C))
        cross[t] = D @ sm_next.cov
        gains[t] = D
    return SmoothedTrajectory(marginals, cross, gains)


def k_step_predict(model, posterior, future_inputs, future_batches=None, cfg=UtConfig()):
    """Iterate the time update without measurement updates.

    Returns one :class:`Forecast` per step.  The price predictive includes the
    observation noise; it is ``None`` when no batch is given for that step.
    """
    model = as_model(model)
    k = len(future_inputs)
    if k < 1:
        raise ContractError("k must be at least 1")
    if future_batches is None:
        future_batches = [None] * k
    out = []
    g = posterior
    for h, (u, batch) in enumerate(zip(future_inputs, future_batches), start=1):
        g, _ = predict(model, g, u, cfg)
        price = None
        if batch is not None:
            price, _ = predict_observation(model, g, batch, cfg)
        out.append(Forecast(h, g, model.sigma_gaussian(g), price))
    return out


def export_trajectory_csv(path, traj, model, batches, level=0.95, cfg=UtConfig()):
    """Write smoothed volatility with a central credible interval per step.

    Columns: ``t, sigma_mean, sigma_lo, sigma_hi, price_1..price_I`` where the
    prices are the predicted option prices under the smoothed state (time 0
    has no options and leaves them empty).
    """
    model = as_model(model)
    z = norm.ppf(0.5 + level / 2.0)
    n_opt = max((b.size for b in batches), default=0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "sigma_mean", "sigma_lo", "sigma_hi"]
                   + ["price_%d" % (i + 1) for i in range(n_opt)])
        for t, g in enumerate(traj.marginals):
            s = model.sigma_gaussian(g)
            mu, sd = float(s.mean[0]), float(np.sqrt(s.cov[0, 0]))
            row = [t, repr(mu), repr(float(mu - z * sd)), repr(float(mu + z * sd))]
            prices = [""] * n_opt
            if t >= 1 and t - 1 < len(batches):
                pred, _ = predict_observation(model, g, batches[t - 1], cfg, with_noise=False)
                prices[: pred.dim] = [repr(float(x)) for x in pred.mean]
            w.writerow(row + prices)


def initial_belief(batch, p, var=1e-3):
    """Prior over the time-0 state centred on the first date's implied volatility.

    Every coordinate gets the mean implied volatility of ``batch`` (so the
    readout matches it) with independent variance ``var``.
    """
    from .errors import UrsError
    from .pricing import implied_vol

    vols = []
    for spec, price in zip(batch.specs(), batch.prices):
        try:
            vols.append(implied_vol(spec, price))
        except UrsError:
            continue
    level = float(np.mean(vols)) if vols else 0.2
    level = float(np.clip(level, 1e-3, 0.99))
    return Gaussian(np.full(p, level), var * np.eye(p))
