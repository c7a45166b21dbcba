"""Dense multivariate Gaussian algebra.

Every routine that produces a covariance passes it through :func:`repair_cov`,
which symmetrizes and floors the spectrum at ``1e-12 * lambda_max``.  Solves go
through :func:`cholesky`, which retries with a growing diagonal jitter before
giving up.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import NumericalError, ShapeError

EIG_FLOOR = 1e-12
JITTER_START = 1e-12
JITTER_STOP = 1e-6


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def _live(c):
    """Indices of coordinates that are not exactly deterministic.

    A coordinate whose row and column of ``c`` are exactly zero is a point
    mass; it is excluded from spectral repair and from factorization so that
    it stays exactly deterministic.
    """
    return np.flatnonzero(np.any(c != 0.0, axis=1))


def repair_cov(cov):
    """Symmetrize ``cov`` and clip small or negative eigenvalues.

    Eigenvalues below ``1e-12 * lambda_max`` are raised to that floor.  A
    matrix with no positive eigenvalue is returned as zeros.  Coordinates with
    an exactly zero row and column are left at zero.
    """
    c = symmetrize(cov)
    if c.size == 0:
        return c
    live = _live(c)
    if live.size < c.shape[0]:
        out = np.zeros_like(c)
        if live.size:
            out[np.ix_(live, live)] = _repair_dense(c[np.ix_(live, live)])
        return out
    return _repair_dense(c)


def _repair_dense(c):
    w, v = np.linalg.eigh(c)
    lmax = w[-1]
    if not np.isfinite(lmax):
        raise NumericalError("covariance has non-finite entries")
    if lmax <= 0.0:
        return np.zeros_like(c)
    floor = EIG_FLOOR * lmax
    if w[0] >= floor:
        return c
    w = np.maximum(w, floor)
    return symmetrize((v * w) @ v.T)


def cholesky(a):
    """Lower Cholesky factor with jitter escalation.

    Jitter starts at ``1e-12`` and grows by 10x up to ``1e-6``, each relative
    to the mean absolute diagonal.  Coordinates with an exactly zero row and
    column get exactly zero rows and columns in the factor.
    """
    a = symmetrize(a)
    n = a.shape[0]
    if n == 0:
        return a.copy()
    live = _live(a)
    if live.size < n:
        out = np.zeros_like(a)
        if live.size:
            out[np.ix_(live, live)] = _cholesky_dense(a[np.ix_(live, live)])
        return out
    return _cholesky_dense(a)


def _cholesky_dense(a):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.abs(np.diag(a))))
    if scale == 0.0:
        scale = float(np.max(np.abs(a)))
    eye = np.eye(a.shape[0])
    jitter = JITTER_START
    while jitter <= JITTER_STOP * (1 + 1e-9):
        try:
            return np.linalg.cholesky(a + jitter * scale * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        "Cholesky failed after jitter escalation to %g; condition number %.3e"
        % (JITTER_STOP, np.linalg.cond(a))
    )


def solve_psd(a, b):
    """Solve ``a x = b`` for symmetric PSD ``a`` via :func:`cholesky`."""
    lower = cholesky(a)
    if a.shape[0] and np.any(np.diag(lower) <= 0.0):
        raise NumericalError(
            "singular matrix in solve; condition number %.3e" % np.linalg.cond(a)
        )
    return linalg.cho_solve((lower, True), b, check_finite=False)


def logdet_psd(a):
    lower = cholesky(a)
    d = np.diag(lower)
    if np.any(d <= 0.0):
        raise NumericalError("log-determinant of a singular matrix")
    return 2.0 * float(np.sum(np.log(d)))


@dataclass(frozen=True)
class Gaussian:
    """Multivariate normal ``N(mean, cov)``; ``cov`` is symmetrized on construction."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1:
            raise ShapeError("mean must be a vector, got shape %s" % (mean.shape,))
        if cov.shape != (mean.size, mean.size):
            raise ShapeError(
                "cov shape %s does not match mean dimension %d" % (cov.shape, mean.size)
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))

    @property
    def dim(self):
        return self.mean.size

    @classmethod
    def repaired(cls, mean, cov):
        return cls(mean, repair_cov(cov))

    def std(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def sample(self, rng, size):
        lower = cholesky(self.cov)
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ lower.T

    def is_psd(self, tol=1e-8):
        w = np.linalg.eigvalsh(self.cov)
        return bool(w[0] >= -tol * max(w[-1], 0.0))


@dataclass(frozen=True)
class JointGaussian:
    """Two Gaussian blocks and their cross-covariance ``cross = Cov(x1, x2)``."""

    first: Gaussian
    second: Gaussian
    cross: np.ndarray

    def __post_init__(self):
        cross = np.asarray(self.cross, dtype=float).reshape(self.first.dim, self.second.dim)
        object.__setattr__(self, "cross", cross)

    @property
    def mean(self):
        return np.concatenate([self.first.mean, self.second.mean])

    @property
    def cov(self):
        return np.block([[self.first.cov, self.cross], [self.cross.T, self.second.cov]])

    def full(self):
        return Gaussian(self.mean, self.cov)

    @classmethod
    def from_full(cls, g, d1):
        m, c = g.mean, g.cov
        return cls(Gaussian(m[:d1], c[:d1, :d1]), Gaussian(m[d1:], c[d1:, d1:]), c[:d1, d1:])


def affine_transform(g, A, c=None):
    """Exact push-forward of ``g`` through ``x -> A x + c``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != g.dim:
        raise ShapeError("A has %d columns, Gaussian has dimension %d" % (A.shape[1], g.dim))
    mean = A @ g.mean
    if c is not None:
        c = np.atleast_1d(np.asarray(c, dtype=float))
        if c.shape != mean.shape:
            raise ShapeError("offset shape %s does not match %s" % (c.shape, mean.shape))
        mean = mean + c
    return Gaussian(mean, A @ g.cov @ A.T)


def condition(j, observed_value):
    """Distribution of the first block given the second block equals ``observed_value``."""
    x2 = np.atleast_1d(np.asarray(observed_value, dtype=float))
    if x2.shape != (j.second.dim,):
        raise ShapeError(
            "observed value has shape %s, expected (%d,)" % (x2.shape, j.second.dim)
        )
    # K = S12 S22^{-1}
    gain = solve_psd(j.second.cov, j.cross.T).T
    mean = j.first.mean + gain @ (x2 - j.second.mean)
    cov = j.first.cov - gain @ j.cross.T
    return Gaussian.repaired(mean, cov)


def expect_quadratic_form(g, Minv):
    """``E[x^T Minv x]`` for ``x ~ g``."""
    Minv = np.atleast_2d(np.asarray(Minv, dtype=float))
    if Minv.shape != (g.dim, g.dim):
        raise ShapeError("matrix shape %s does not match dimension %d" % (Minv.shape, g.dim))
    return float(np.sum(Minv * g.cov.T) + g.mean @ Minv @ g.mean)


def block_diag(*blocks):
    return linalg.block_diag(*blocks)
