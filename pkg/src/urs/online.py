"""Online inference: filter the reservoir state jointly with its weights.

The augmented state stacks ``theta`` with the row-major flattenings of ``G``,
``G_in`` and ``b``.  Weights evolve as a random walk with a small variance;
``W`` and ``v`` stay fixed.  After every forward/backward pass the time-0
belief is reset to the smoothed time-0 belief and the pass is repeated.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ContractError, NumericalError, UrsError
from .gaussian import Gaussian, block_diag
from .gem import one_step_errors
from .pricing import call_price
from .reservoir import readout, readout_gaussian, spectral_radius, squash
from .ssm import SIGMA_CLIP, forward_filter, rts_smooth
from .unscented import UtConfig


@dataclass(frozen=True)
class AugmentedLayout:
    """Index map of the augmented vector ``(theta, G, G_in, b)``."""

    p: int
    m: int

    @property
    def dim(self):
        return self.p + self.p * self.p + self.p * self.m + self.p

    @property
    def theta(self):
        return slice(0, self.p)

    @property
    def G(self):
        return slice(self.p, self.p + self.p * self.p)

    @property
    def G_in(self):
        s = self.p + self.p * self.p
        return slice(s, s + self.p * self.m)

    @property
    def b(self):
        return slice(self.dim - self.p, self.dim)

    @property
    def weights(self):
        return slice(self.p, self.dim)

    def flatten(self, theta, G, G_in, b):
        return np.concatenate([np.ravel(theta), np.ravel(G), np.ravel(G_in), np.ravel(b)]).astype(float)

    def unflatten(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ContractError("augmented vector has length %d, layout needs %d" % (x.shape[-1], self.dim))
        lead = x.shape[:-1]
        return (x[..., self.theta], x[..., self.G].reshape(lead + (self.p, self.p)),
                x[..., self.G_in].reshape(lead + (self.p, self.m)), x[..., self.b])


def augmented_evolve(aug, u, layout, input_gain=1.0):
    """Evolve the state block with the weights carried in the same vector.

    ``aug`` may be a single vector or a ``(k, dim)`` stack.  Weight blocks are
    copied through unchanged.
    """
    aug = np.asarray(aug, dtype=float)
    single = aug.ndim == 1
    X = np.atleast_2d(aug)
    if X.shape[1] != layout.dim:
        raise ContractError("augmented vector has length %d, layout needs %d" % (X.shape[1], layout.dim))
    theta, G, G_in, b = layout.unflatten(X)
    u = np.asarray(u, dtype=float)
    out = X.copy()
    out[:, layout.theta] = squash(theta, G, G_in, b, input_gain * u * u)
    return out[0] if single else out


class AugmentedModel:
    """State-space model over the augmented vector, for the filtering engine."""

    def __init__(self, layout, W, v, param_innovation_var=1e-6, input_gain=1.0, sigma_clip=SIGMA_CLIP):
        self.layout = layout
        self.W = np.asarray(W, dtype=float)
        self.v = float(v)
        self.param_innovation_var = float(param_innovation_var)
        self.input_gain = float(input_gain)
        self.sigma_clip = sigma_clip
        n_w = layout.dim - layout.p
        self._Q = block_diag(self.W, self.param_innovation_var * np.eye(n_w))

    @property
    def dim(self):
        return self.layout.dim

    def transition(self, points, u):
        return augmented_evolve(points, u, self.layout, self.input_gain)

    def process_cov(self):
        return self._Q

    def measure(self, points, batch):
        sigma = np.clip(readout(points[:, self.layout.theta]), *self.sigma_clip)
        return call_price(batch.spot, batch.rate, batch.strike, batch.maturity, sigma[:, None])

    def obs_cov(self, batch):
        return self.v * np.eye(batch.size)

    def observed(self, batch):
        if batch.prices is None:
            raise ContractError("batch carries no observed prices")
        return batch.prices

    def state_marginal(self, g):
        s = self.layout.theta
        return Gaussian(g.mean[s], g.cov[s, s])

    def sigma_gaussian(self, g):
        return readout_gaussian(self.state_marginal(g))

    def params_at(self, g, template):
        """Reservoir parameters at the mean of an augmented belief."""
        _, G, G_in, b = self.layout.unflatten(g.mean)
        return template.replace(G=G, G_in=G_in, b=b)


@dataclass(frozen=True)
class OnlineConfig:
    """Settings for :func:`online_fit`.

    Attributes:
        param_innovation_var: random-walk variance of each weight per step.
        param_prior_var: prior variance of each weight at time 0.
        outer_iterations: maximum forward/backward passes.
        patience: passes without validation improvement before stopping.
    """

    param_innovation_var: float = 1e-6
    param_prior_var: float = 1e-3
    outer_iterations: int = 5
    patience: int = 2

    def __post_init__(self):
        if self.param_innovation_var < 0 or self.param_prior_var < 0:
            raise ContractError("variances must be non-negative")
        if self.outer_iterations < 1:
            raise ContractError("outer_iterations must be at least 1")


@dataclass
class OnlineResult:
    """Outcome of :func:`online_fit`.

    Attributes:
        model: the augmented model.
        initial: augmented time-0 belief of the selected pass.
        filtered: filter result of the selected pass.
        trajectory: smoothed augmented trajectory of the selected pass.
        params: reservoir parameters at the final filtered mean.
        report: per-pass diagnostics.
    """

    model: AugmentedModel
    initial: Gaussian
    filtered: object
    trajectory: object
    params: object
    report: dict


def augmented_prior(layout, theta_belief, params, param_prior_var):
    mean = layout.flatten(theta_belief.mean, params.G, params.G_in, params.b)
    cov = block_diag(theta_belief.cov, param_prior_var * np.eye(layout.dim - layout.p))
    return Gaussian(mean, cov)


def online_fit(train, validation, init_params, initial, cfg=OnlineConfig(), ut=UtConfig()):
    """Joint filtering of states and weights with repeated passes.

    Args:
        train: training series.
        validation: series after ``train``; its one-step error picks the pass.
        init_params: starting weights; ``W``, ``v`` and the input gain are kept.
        initial: Gaussian belief over ``theta_0``.
    """
    if len(train) == 0:
        raise ContractError("online fitting needs a non-empty series")
    layout = AugmentedLayout(init_params.p, init_params.m)
    model = AugmentedModel(layout, init_params.W, init_params.v, cfg.param_innovation_var,
                           init_params.input_gain)
    prior0 = augmented_prior(layout, initial, init_params, cfg.param_prior_var)
    report = {"passes": []}
    best = None
    stale = 0
    for it in range(cfg.outer_iterations):
        try:
            fr = forward_filter(model, prior0, train.inputs, train.batches, ut)
            traj = rts_smooth(fr, ut)
            if len(validation):
                errs, _ = one_step_errors(model, fr.final, validation, ut)
                score = float(np.mean(errs))
            else:
                score = -fr.log_evidence
        except UrsError as exc:
            report["aborted"] = "pass %d: %s" % (it, exc)
            break
        if not np.isfinite(score):
            report["aborted"] = "pass %d: non-finite validation error" % it
            break
        G_mean = layout.unflatten(fr.final.mean)[1]
        report["passes"].append({"pass": it, "validation_error": score, "log_evidence": fr.log_evidence,
                                 "spectral_radius": float(spectral_radius(G_mean))})
        if best is None or score < best[0]:
            best = (score, prior0, fr, traj)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
        prior0 = traj.marginals[0]
    if best is None:
        raise NumericalError(report.get("aborted", "online fit failed"))
    _, prior0, fr, traj = best
    report["best_pass"] = [p["validation_error"] for p in report["passes"]].index(best[0])
    params = model.params_at(fr.final, init_params)
    return OnlineResult(model, prior0, fr, traj, params, report)


def export_online_csv(path, result, level=0.95):
    """Per-step smoothed readout with a central interval and the spectral radius of the mean ``G``."""
    z = norm.ppf(0.5 + level / 2.0)
    layout = result.model.layout
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "sigma_mean", "sigma_lo", "sigma_hi", "spectral_radius"])
        for t, g in enumerate(result.trajectory.marginals):
            s = result.model.sigma_gaussian(g)
            mu, sd = float(s.mean[0]), float(np.sqrt(s.cov[0, 0]))
            rho = spectral_radius(layout.unflatten(g.mean)[1])
            w.writerow([t, repr(mu), repr(float(mu - z * sd)), repr(float(mu + z * sd)), repr(float(rho))])
