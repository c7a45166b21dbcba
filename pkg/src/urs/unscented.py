"""Scaled unscented transform.

Sigma points are ``m`` and ``m +/- sqrt(n + lam) * L[:, i]`` where ``L`` is the
lower Cholesky factor of the covariance, so that ``L L^T`` reproduces it.
Moments are accumulated relative to the central point; with the default
``alpha = 1e-3`` the outer weights are of order ``1e6`` and the naive weighted
sums would lose most of their digits.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, PropagationError
from .gaussian import Gaussian, JointGaussian, cholesky, repair_cov


@dataclass(frozen=True)
class UtConfig:
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ContractError("alpha must be positive")

    def lam(self, n):
        return self.alpha**2 * (n + self.kappa) - n

    def spread(self, n):
        """``n + lam``, computed directly to avoid cancellation for small alpha."""
        return self.alpha**2 * (n + self.kappa)

    def central_extra(self):
        return 1.0 - self.alpha**2 + self.beta

    def weights(self, n):
        """Return ``(lam, wm, wc)`` for an ``n``-dimensional source."""
        denom = self.spread(n)
        if denom == 0:
            raise ContractError("n + lambda is zero for n = %d" % n)
        lam = denom - n
        wm = np.full(2 * n + 1, 0.5 / denom)
        wc = wm.copy()
        wm[0] = lam / denom
        wc[0] = wm[0] + self.central_extra()
        return lam, wm, wc


@dataclass(frozen=True)
class SigmaPointSet:
    points: np.ndarray  # (2n+1, n)
    mean_weights: np.ndarray
    cov_weights: np.ndarray
    # cov_weights[0] - mean_weights[0], kept exactly; recovering it by
    # subtraction loses digits because both weights are of order 1 / alpha**2
    central_extra: float = None

    def __post_init__(self):
        if self.central_extra is None:
            object.__setattr__(self, "central_extra",
                               float(self.cov_weights[0] - self.mean_weights[0]))

    @property
    def dim(self):
        return self.points.shape[1]

    def mean(self):
        p = self.points
        return p[0] + _wsum(self.mean_weights[1:], p[1:] - p[0])

    def cov(self):
        return _weighted_cov(self.points, self.mean_weights, self.cov_weights,
                             extra=self.central_extra)


def sigma_points(g, cfg=UtConfig()):
    n = g.dim
    _, wm, wc = cfg.weights(n)
    spread = cfg.spread(n)
    if spread < 0:
        raise ContractError("n + lambda must be positive to take its square root")
    lower = cholesky(g.cov)
    offsets = np.sqrt(spread) * lower.T  # row i = column i of L
    pts = np.empty((2 * n + 1, n))
    pts[0] = g.mean
    pts[1 : n + 1] = g.mean + offsets
    pts[n + 1 :] = g.mean - offsets
    return SigmaPointSet(pts, wm, wc, cfg.central_extra())


def _wsum(w, x):
    """``sum_k w_k x_k`` reduced row by row along the first axis.

    Plain numpy reductions over the leading axis accumulate rows in order, so
    every output entry sees the same sequence of operations whatever the
    trailing shape.  BLAS kernels give no such guarantee, and with weights of
    order ``1 / alpha**2`` the difference is visible.
    """
    return np.sum(w.reshape((-1,) + (1,) * (x.ndim - 1)) * x, axis=0)


def _outer_wsum(w, a, b):
    """``sum_k w_k a_k b_k^T`` with the same ordering guarantee as :func:`_wsum`."""
    return _wsum(w, a[:, :, None] * b[:, None, :])


def _weighted_cov(q, wm, wc, mean=None, extra=None):
    dq = q[1:] - q[0]
    if mean is None:
        mean = q[0] + _wsum(wm[1:], dq)
    if extra is None:
        extra = wc[0] - wm[0]
    d = mean - q[0]
    return _outer_wsum(wc[1:], dq, dq) - np.outer(d, d) + extra * np.outer(d, d)


def _weighted_cross(p, q, wm, wc, pmean=None, qmean=None, extra=None):
    """``sum_i wc_i (p_i - pmean)(q_i - qmean)^T`` in central-point form."""
    dp = p[1:] - p[0]
    dq = q[1:] - q[0]
    if pmean is None:
        pmean = p[0] + _wsum(wm[1:], dp)
    if qmean is None:
        qmean = q[0] + _wsum(wm[1:], dq)
    if extra is None:
        extra = wc[0] - wm[0]
    ep = pmean - p[0]
    eq = qmean - q[0]
    s = _wsum(wc[1:], dp)
    # sum_i wc_i (dp_i - ep)(dq_i - eq)^T + wc_0 ep eq^T; the cov weights of
    # the full set sum to 1 + wc_0 - wm_0
    return _outer_wsum(wc[1:], dp, dq) - np.outer(s, eq) - np.outer(ep, _wsum(wc[1:], dq)) + (
        1.0 + extra
    ) * np.outer(ep, eq)


def apply_map(f, points):
    """Evaluate ``f`` on a stack of points and check the result is finite.

    ``f`` receives the full ``(k, n)`` array and must return ``(k, d)``.
    """
    q = np.asarray(f(points), dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    if q.shape[0] != points.shape[0]:
        raise ContractError("map returned %d rows for %d points" % (q.shape[0], points.shape[0]))
    bad = ~np.all(np.isfinite(q), axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise PropagationError("non-finite output at sigma point %d" % i, index=i)
    return q


def _live_points(sps):
    """Indices of the centre point and every point that differs from it.

    A point equal to the centre (a direction with zero spread) contributes
    exactly nothing to the centred sums, so it is skipped.
    """
    pts = sps.points
    moved = np.any(pts[1:] != pts[0], axis=1)
    return np.concatenate([[0], 1 + np.flatnonzero(moved)])


def propagate(sps, f):
    """Push a sigma-point set through ``f``.

    Returns ``(q, mean, cov, cross)`` where ``q`` holds the transformed live
    points (see :func:`_live_points`) and ``cross`` is the input-output
    cross-covariance.  ``cov`` is not repaired.
    """
    idx = _live_points(sps)
    pts = sps.points[idx]
    wm, wc = sps.mean_weights[idx], sps.cov_weights[idx]
    q = apply_map(f, pts)
    mean = q[0] + _wsum(wm[1:], q[1:] - q[0])
    ex = sps.central_extra
    cov = _weighted_cov(q, wm, wc, mean, ex)
    cross = _weighted_cross(pts, q, wm, wc, pts[0] + _wsum(wm[1:], pts[1:] - pts[0]), mean, ex)
    return q, mean, cov, cross


def unscented_transform(g, f, cfg=UtConfig()):
    """Gaussian approximation of ``f(x)`` for ``x ~ g``.

    ``f`` maps a ``(k, n)`` array of points to a ``(k, d)`` array.
    """
    _, mean, cov, _ = propagate(sigma_points(g, cfg), f)
    return Gaussian(mean, repair_cov(cov))


def augmented_transform(g, f, cfg=UtConfig()):
    """Joint Gaussian of ``(x, f(x))`` from a single sigma-point pass.

    The duplicated vector ``(x, x)`` has a rank-deficient covariance whose
    square root is ``[L; L]``, so its sigma points coincide with those of ``g``
    and the weights are those of an ``n``-dimensional source.  Consequently the
    ``f(x)`` block agrees exactly with :func:`unscented_transform`.
    """
    sps = sigma_points(g, cfg)
    _, mean, cov, cross = propagate(sps, f)
    return JointGaussian(g, Gaussian(mean, repair_cov(cov)), cross)


def joint_gaussian_from_two_stage(g_joint, A, c, nonlinearity, cfg=UtConfig()):
    """Joint of ``(nonlinearity(A x1 + c), x2)`` for ``(x1, x2) ~ g_joint``.

    The affine step is exact: sigma points of the pair joint are taken and the
    first block is mapped through ``A x1 + c`` before the nonlinearity.  This
    is algebraically the square root ``blockdiag(A, I) L`` of the affinely
    transformed joint, which may be singular, so no second factorization is
    needed.  Returned blocks: first = transformed block, second = ``x2``
    (exact), cross = ``Cov(transformed, x2)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    d1 = g_joint.first.dim
    full = g_joint.full()
    sps = sigma_points(full, cfg)
    x1 = sps.points[:, :d1]
    x2 = sps.points[:, d1:]
    q = apply_map(nonlinearity, x1 @ A.T + c)
    wm, wc = sps.mean_weights, sps.cov_weights
    mean = q[0] + _wsum(wm[1:], q[1:] - q[0])
    cov = _weighted_cov(q, wm, wc, mean, sps.central_extra)
    cross = _weighted_cross(q, x2, wm, wc, mean, g_joint.second.mean, sps.central_extra)
    return JointGaussian(Gaussian(mean, repair_cov(cov)), g_joint.second, cross)
