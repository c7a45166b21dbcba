"""Echo-state reservoir: parameters, initialization, evolution and readout."""

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError, DomainError, NumericalError, PropagationError, ShapeError
from .gaussian import Gaussian, affine_transform


@dataclass(frozen=True)
class ReservoirParams:
    """Learnable parameters of the state-space model.

    Attributes:
        G: (p, p) evolution matrix.
        G_in: (p, m) input matrix.
        b: (p,) bias.
        W: (p, p) evolution noise covariance.
        v: observation noise variance.
        input_gain: scalar multiplying the squared inputs.
        seed: seed used at initialization, if any.
    """

    G: np.ndarray
    G_in: np.ndarray
    b: np.ndarray
    W: np.ndarray
    v: float
    input_gain: float = 1.0
    seed: int = None

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        p = G.shape[0]
        G_in = np.asarray(self.G_in, dtype=float).reshape(p, -1)
        b = np.asarray(self.b, dtype=float).reshape(p)
        W = np.asarray(self.W, dtype=float).reshape(p, p)
        if G.shape != (p, p):
            raise ShapeError("G must be square, got %s" % (G.shape,))
        if not np.allclose(W, W.T, atol=1e-12, rtol=1e-10):
            raise DomainError("W must be symmetric")
        if not float(self.v) > 0:
            raise DomainError("v must be positive, got %r" % self.v)
        for name, val in (("G", G), ("G_in", G_in), ("b", b), ("W", W)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "input_gain", float(self.input_gain))

    @property
    def p(self):
        return self.G.shape[0]

    @property
    def m(self):
        return self.G_in.shape[1]

    def replace(self, **changes):
        d = dict(G=self.G, G_in=self.G_in, b=self.b, W=self.W, v=self.v,
                 input_gain=self.input_gain, seed=self.seed)
        d.update(changes)
        return ReservoirParams(**d)

    def to_dict(self):
        return {
            "p": self.p,
            "m": self.m,
            "G": self.G.tolist(),
            "G_in": self.G_in.tolist(),
            "b": self.b.tolist(),
            "W": self.W.tolist(),
            "v": self.v,
            "input_gain": self.input_gain,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            G=np.array(d["G"], dtype=float),
            G_in=np.array(d["G_in"], dtype=float),
            b=np.array(d["b"], dtype=float),
            W=np.array(d["W"], dtype=float),
            v=d["v"],
            input_gain=d.get("input_gain", 1.0),
            seed=d.get("seed"),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def fingerprint(self):
        """Hash of the parameter values; used to check evaluation leaves them alone."""
        import hashlib

        h = hashlib.sha256()
        for a in (self.G, self.G_in, self.b, self.W, np.array([self.v, self.input_gain])):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class InitConfig:
    """Settings for :func:`init_reservoir`.

    ``bias_fill`` overrides the random bias draw with a constant when set.
    """

    p: int = 8
    m: int = 10
    eta1: float = 0.97
    eta2: float = 0.85
    bias_mean: float = -2.0
    bias_var: float = 1.0
    bias_fill: float = None
    w0: float = 1e-4
    v0: float = 1e-2
    input_gain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        problems = []
        if not 0 < self.eta1 < 1:
            problems.append("eta1 must lie in (0, 1)")
        if not self.eta2 > 0:
            problems.append("eta2 must be positive")
        if self.p < 1 or self.m < 1:
            problems.append("p and m must be at least 1")
        if self.bias_var < 0:
            problems.append("bias_var must be non-negative")
        if problems:
            raise ContractError("; ".join(problems))


def spectral_radius(M, tol=1e-13, max_iter=5000):
    """Largest eigenvalue modulus of a square matrix.

    Power iteration is tried first.  It only converges cleanly when a single
    real eigenvalue dominates; for complex or tied dominant pairs the dense
    eigensolver is used instead.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ShapeError("matrix must be square, got %s" % (M.shape,))
    if not np.all(np.isfinite(M)):
        raise NumericalError("matrix has non-finite entries")
    n = M.shape[0]
    if n == 0 or not np.any(M):
        return 0.0
    x = np.ones(n) / np.sqrt(n) + 1e-3 * np.arange(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = M @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            break
        new = float(x @ y)
        x = y / ny
        if abs(abs(new) - est) <= tol * max(abs(new), 1e-300) and np.linalg.norm(M @ x - new * x) <= 1e-10 * abs(new):
            return abs(new)
        est = abs(new)
    ev = np.linalg.eigvals(M)
    if not np.all(np.isfinite(ev)):
        raise NumericalError("eigenvalue computation did not converge")
    return float(np.max(np.abs(ev)))


def init_reservoir(cfg=InitConfig()):
    """Draw reservoir weights with a prescribed spectral radius.

    Draw order from ``numpy.random.default_rng(cfg.seed)``: ``G`` (p x p),
    then ``G_in`` (p x m), then ``b`` (p) unless ``bias_fill`` is set.
    """
    rng = np.random.default_rng(cfg.seed)
    G = rng.standard_normal((cfg.p, cfg.p))
    rho = spectral_radius(G)
    if rho == 0.0:
        G = rng.standard_normal((cfg.p, cfg.p))
        rho = spectral_radius(G)
        if rho == 0.0:
            raise NumericalError("drew a nilpotent evolution matrix twice")
    G_in = rng.standard_normal((cfg.p, cfg.m))
    G = cfg.eta1 * G / rho
    G_in = cfg.eta2 * G_in
    if cfg.bias_fill is None:
        b = rng.normal(cfg.bias_mean, np.sqrt(cfg.bias_var), cfg.p)
    else:
        b = np.full(cfg.p, float(cfg.bias_fill))
    return ReservoirParams(G, G_in, b, cfg.w0 * np.eye(cfg.p), cfg.v0, cfg.input_gain, cfg.seed)


def logistic(x):
    return expit(x)


def squash(theta, G, G_in, b, u2):
    """``logistic(G theta + G_in u2 + b)`` for a stack of states.

    ``theta`` is (k, p); the weights are either shared ((p, p), (p, m), (p,))
    or per state ((k, p, p), (k, p, m), (k, p)).  Products are formed
    elementwise and summed along the last axis, so shared and per-state
    weights with equal values give bit-identical results.
    """
    z = np.sum(G * theta[..., None, :], axis=-1) + (np.sum(G_in * u2, axis=-1) + b)
    return expit(z)


def evolve(params, theta_prev, u):
    """Deterministic state map ``logistic(G theta + gain * G_in u**2 + b)``.

    ``theta_prev`` may carry leading batch dimensions.
    """
    theta_prev = np.asarray(theta_prev, dtype=float)
    u = np.asarray(u, dtype=float)
    if theta_prev.shape[-1] != params.p or u.shape != (params.m,):
        raise ShapeError(
            "expected state (..., %d) and input (%d,), got %s and %s"
            % (params.p, params.m, theta_prev.shape, u.shape)
        )
    if not (np.all(np.isfinite(theta_prev)) and np.all(np.isfinite(u))):
        raise PropagationError("non-finite input to evolve")
    return squash(theta_prev, params.G, params.G_in, params.b, params.input_gain * u * u)


def readout(theta):
    """Volatility readout: the mean of the state coordinates (last axis)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] == 0:
        raise ShapeError("cannot read out an empty state")
    return theta.mean(axis=-1)


def readout_gaussian(g):
    """Exact distribution of the readout when the state is Gaussian."""
    p = g.dim
    return affine_transform(g, np.full((1, p), 1.0 / p))
