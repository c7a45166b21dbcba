"""Independent reference implementations used as test oracles.

Nothing here imports the library: the exact Kalman filter and RTS smoother
are written from the textbook recursions with plain matrix inverses, and the
Monte Carlo helpers sample directly with numpy.
"""

import numpy as np


def kalman_filter(A, Q, H, R, m0, P0, ys, c=None, d=None, B=None, us=None):
    """Exact filter for ``x' = A x + B u + c + w``, ``y = H x + d + e``.

    Returns a dict of lists: predicted means/covs, filtered means/covs, the
    lag-one predicted cross-covariance ``Cov(x_{t-1}, x_t | y_{1:t-1})`` and
    the total log-evidence.
    """
    n = A.shape[0]
    c = np.zeros(n) if c is None else c
    d = np.zeros(H.shape[0]) if d is None else d
    m, P = np.array(m0, dtype=float), np.array(P0, dtype=float)
    out = {"m_pred": [], "P_pred": [], "m": [], "P": [], "cross": [], "loglik": 0.0}
    for t, y in enumerate(ys):
        mp = A @ m + c
        if B is not None:
            mp = mp + B @ us[t]
        Pp = A @ P @ A.T + Q
        out["cross"].append(P @ A.T)
        S = H @ Pp @ H.T + R
        Sinv = np.linalg.inv(S)
        K = Pp @ H.T @ Sinv
        r = y - (H @ mp + d)
        m = mp + K @ r
        P = (np.eye(n) - K @ H) @ Pp @ (np.eye(n) - K @ H).T + K @ R @ K.T
        _, logdet = np.linalg.slogdet(S)
        out["loglik"] += -0.5 * (r @ Sinv @ r + logdet + len(y) * np.log(2 * np.pi))
        out["m_pred"].append(mp)
        out["P_pred"].append(Pp)
        out["m"].append(m)
        out["P"].append(P)
    return out


def rts_smoother(A, m0, P0, kf):
    """Exact RTS pass over the output of :func:`kalman_filter`.

    Returns smoothed means and covariances for ``t = 0..T`` and the
    cross-covariances ``Cov(x_t, x_{t+1} | y_{1:T})`` for ``t = 0..T-1``.
    """
    ms = [np.asarray(m0, dtype=float)] + kf["m"]
    Ps = [np.asarray(P0, dtype=float)] + kf["P"]
    T = len(kf["m"])
    sm = [None] * (T + 1)
    sP = [None] * (T + 1)
    cross = [None] * T
    sm[T], sP[T] = ms[T], Ps[T]
    for t in range(T - 1, -1, -1):
        J = Ps[t] @ A.T @ np.linalg.inv(kf["P_pred"][t])
        sm[t] = ms[t] + J @ (sm[t + 1] - kf["m_pred"][t])
        sP[t] = Ps[t] + J @ (sP[t + 1] - kf["P_pred"][t]) @ J.T
        cross[t] = J @ sP[t + 1]
    return sm, sP, cross


def random_spd(rng, n, scale=1.0, cond=50.0):
    """Random symmetric positive definite matrix with a bounded condition number."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = scale * np.exp(rng.uniform(0.0, np.log(cond), n))
    return (q * ev) @ q.T


def bs_call_monte_carlo(spot, rate, strike, maturity, sigma, n_paths, rng, chunk=10**6):
    """Risk-neutral Monte Carlo price of a European call with its standard error.

    The terminal price is sampled exactly from the lognormal law; the
    discounted payoff mean and its standard error are accumulated in chunks.
    """
    total = 0.0
    total_sq = 0.0
    done = 0
    drift = (rate - 0.5 * sigma**2) * maturity
    vol = sigma * np.sqrt(maturity)
    disc = np.exp(-rate * maturity)
    while done < n_paths:
        k = min(chunk, n_paths - done)
        z = rng.standard_normal(k)
        payoff = disc * np.maximum(spot * np.exp(drift + vol * z) - strike, 0.0)
        total += payoff.sum()
        total_sq += (payoff * payoff).sum()
        done += k
    mean = total / n_paths
    var = total_sq / n_paths - mean * mean
    return mean, np.sqrt(max(var, 0.0) / n_paths)


def sample_moments(x):
    """Sample mean and (biased) covariance of rows of ``x``."""
    m = x.mean(axis=0)
    d = x - m
    return m, d.T @ d / x.shape[0]


def linear_system(seed, p=3, k=2, T=30, with_input=False):
    """Random stable linear-Gaussian system and a simulated observation path."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((p, p))
    A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
    Q = random_spd(rng, p, 0.05)
    H = rng.standard_normal((k, p))
    R = random_spd(rng, k, 0.1)
    c = rng.standard_normal(p) * 0.1
    d = rng.standard_normal(k) * 0.1
    B = rng.standard_normal((p, 2)) if with_input else None
    us = rng.standard_normal((T, 2)) if with_input else None
    m0 = rng.standard_normal(p)
    P0 = random_spd(rng, p)
    x = rng.multivariate_normal(m0, P0)
    ys = []
    for t in range(T):
        x = A @ x + c + (B @ us[t] if with_input else 0) + rng.multivariate_normal(np.zeros(p), Q)
        ys.append(H @ x + d + rng.multivariate_normal(np.zeros(k), R))
    return dict(A=A, Q=Q, H=H, R=R, c=c, d=d, B=B, us=us, m0=m0, P0=P0, ys=ys)
