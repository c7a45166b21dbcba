"""Offline parameter inference by generalized EM.

E-step: filter and smooth with the current parameters, then freeze the sigma
points of every smoothed marginal and every consecutive smoothed pair.  The
expected complete-data log-likelihood is then a deterministic function of
``(G, G_in, b, W, v)``.

M-step: proximal gradient with backtracking on ``(G, G_in, b)`` for the
L1-penalized negative expected log-likelihood, followed by the exact
maximizers in ``W`` and ``v`` given the new weights.  Both stages can only
lower the regularized loss, so every accepted M-step is monotone.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError, DomainError, NumericalError, UrsError
from .gaussian import Gaussian, logdet_psd
from .reservoir import evolve, spectral_radius
from .ssm import ReservoirModel, forward_filter, predict, predict_observation, rts_smooth, update
from .unscented import UtConfig, joint_gaussian_from_two_stage, sigma_points, unscented_transform

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class GemConfig:
    """Settings for :func:`gem_fit`.

    Attributes:
        lasso_alpha: L1 weight on ``G`` and ``G_in`` (``b`` is not penalized).
        term_ii_method: ``"joint_ut"`` or ``"taylor"``.
        max_iters: outer EM iterations.
        inner_steps: proximal-gradient steps per M-step.
        step_size: initial step length.
        shrink, grow: backtracking factors.
        max_backtracks: backtracking attempts per step.
        patience: outer iterations without validation improvement before stopping.
        tol: minimum validation improvement that counts.
        update_noise: re-estimate ``W`` and ``v`` in each M-step.
        w_floor, v_floor: eigenvalue floor for ``W`` and floor for ``v``.
    """

    lasso_alpha: float = 0.05
    term_ii_method: str = "joint_ut"
    max_iters: int = 30
    inner_steps: int = 10
    step_size: float = 1e-2
    shrink: float = 0.5
    grow: float = 2.0
    max_backtracks: int = 40
    patience: int = 5
    tol: float = 0.0
    update_noise: bool = True
    w_floor: float = 1e-7
    v_floor: float = 1e-10

    def __post_init__(self):
        if self.lasso_alpha < 0:
            raise ContractError("lasso_alpha must be non-negative")
        if self.term_ii_method not in ("joint_ut", "taylor"):
            raise ContractError("term_ii_method must be 'joint_ut' or 'taylor'")


# ---------------------------------------------------------------------------
# complete-data log-likelihood


def log_likelihood(states, params, inputs, batches, sigma_clip=(1e-4, 0.9999)):
    """Complete-data log-likelihood of a state path ``theta_0..theta_T``.

    The additive constant ``-(T p + N) log(2 pi) / 2`` is dropped.
    """
    states = np.asarray(states, dtype=float)
    T = len(batches)
    if states.shape != (T + 1, params.p):
        raise ContractError("expected %d states of dimension %d" % (T + 1, params.p))
    try:
        Winv = np.linalg.inv(params.W)
        logdet_w = logdet_psd(params.W)
    except (np.linalg.LinAlgError, NumericalError) as exc:
        raise DomainError("W must be positive definite") from exc
    model = ReservoirModel(params, sigma_clip)
    total = -0.5 * T * logdet_w
    for t in range(1, T + 1):
        r = states[t] - evolve(params, states[t - 1], inputs[t - 1])
        total -= 0.5 * r @ Winv @ r
        b = batches[t - 1]
        y = model.measure(states[t][None, :], b)[0]
        total -= 0.5 * b.size * math.log(params.v) + 0.5 * np.sum((b.prices - y) ** 2) / params.v
    return float(total)


# ---------------------------------------------------------------------------
# term ii for a single pair


def term_ii_joint_ut(pair, params, u, Winv, cfg=UtConfig()):
    """``E[theta_t^T Winv evolve(theta_{t-1})]`` via an exact affine step and a UT."""
    c = params.G_in @ (params.input_gain * np.asarray(u) ** 2) + params.b
    j = joint_gaussian_from_two_stage(pair, params.G, c, expit, cfg)
    m = pair.second.mean
    return float(np.sum(Winv * j.cross) + m @ Winv @ j.first.mean)


def term_ii_taylor(pair, params, u, Winv):
    """First-order expansion of the logistic around the smoothed mean of ``theta_{t-1}``."""
    m_prev, m = pair.first.mean, pair.second.mean
    z0 = params.G @ m_prev + params.G_in @ (params.input_gain * np.asarray(u) ** 2) + params.b
    s = expit(z0)
    N = s * (1 - s)
    cross_tp = pair.cross.T  # Cov(theta_t, theta_{t-1})
    diag = np.einsum("ik,ik->i", Winv @ cross_tp, params.G)
    return float(m @ Winv @ s + N @ diag)


# ---------------------------------------------------------------------------
# E-step cache and vectorized objective


@dataclass
class EStepCache:
    """Everything the M-step needs from one E-step.

    The per-step term arrays correspond to the parameters the cache was built
    with; :func:`smooth_objective` re-evaluates terms ii and iii for new
    ``(G, G_in, b)`` using the frozen sigma points.
    """

    traj: object
    method: str
    ut: UtConfig
    u2: np.ndarray  # (T, m), gain * u**2
    means: np.ndarray  # (T + 1, p) smoothed means
    covs: np.ndarray  # (T + 1, p, p)
    cross_tp: np.ndarray  # (T, p, p), Cov(theta_t, theta_{t-1})
    single_pts: np.ndarray  # (T, 2p + 1, p)
    single_w: tuple
    pair_pts: np.ndarray  # (T, 4p + 1, 2p)
    pair_w: tuple
    psi_mean: list
    psi_var: list
    y: list
    n_obs: int
    term_i: np.ndarray = None
    term_ii: np.ndarray = None
    term_iii: np.ndarray = None
    xi_mean: np.ndarray = None
    xi_cov: np.ndarray = None

    @property
    def T(self):
        return self.u2.shape[0]

    @property
    def term_iv(self):
        return self.psi_mean

    @property
    def term_v(self):
        return [m * m + v for m, v in zip(self.psi_mean, self.psi_var)]

    def obs_sse(self):
        """``sum_t sum_i E[(y - f)^2]`` under the smoothed readouts."""
        return float(sum(np.sum((y - m) ** 2 + v) for y, m, v in zip(self.y, self.psi_mean, self.psi_var)))


def build_cache(traj, params, inputs, batches, method="joint_ut", ut=UtConfig(), sigma_clip=(1e-4, 0.9999)):
    if traj is None or len(traj.cross) != len(batches) or any(c is None for c in traj.cross):
        raise ContractError("smoothed trajectory with cross-covariances for every step is required")
    T, p = len(batches), params.p
    means = np.array([g.mean for g in traj.marginals])
    covs = np.array([g.cov for g in traj.marginals])
    cross_tp = np.array([c.T for c in traj.cross])
    u2 = params.input_gain * np.asarray(inputs, dtype=float)[:T] ** 2
    single, pair = [], []
    for t in range(1, T + 1):
        single.append(sigma_points(traj.marginals[t - 1], ut).points)
        pair.append(sigma_points(traj.pair(t).full(), ut).points)
    _, wm1, wc1 = ut.weights(p)
    _, wm2, wc2 = ut.weights(2 * p)
    model = ReservoirModel(params, sigma_clip)
    psi_mean, psi_var, ys = [], [], []
    for t in range(1, T + 1):
        s = model.sigma_gaussian(traj.marginals[t])
        b = batches[t - 1]
        out = unscented_transform(s, lambda x, b=b: _price(b, x, sigma_clip), ut)
        psi_mean.append(out.mean)
        psi_var.append(np.diag(out.cov).copy())
        ys.append(b.prices)
    cache = EStepCache(traj, method, ut, u2, means, covs, cross_tp, np.array(single), (wm1, wc1),
                       np.array(pair), (wm2, wc2), psi_mean, psi_var, ys, int(sum(len(y) for y in ys)))
    return cache


def _price(batch, x, sigma_clip):
    from .pricing import call_price

    sigma = np.clip(x[:, 0], *sigma_clip)
    return call_price(batch.spot, batch.rate, batch.strike, batch.maturity, sigma[:, None])


def _unpack(x, p, m):
    G = x[: p * p].reshape(p, p)
    G_in = x[p * p : p * p + p * m].reshape(p, m)
    b = x[p * p + p * m :]
    return G, G_in, b


def pack(params):
    return np.concatenate([params.G.ravel(), params.G_in.ravel(), params.b])


def penalty_mask(p, m):
    """1 on the entries of ``G`` and ``G_in``, 0 on ``b``."""
    return np.concatenate([np.ones(p * p + p * m), np.zeros(p)])


def _term_iii(G, G_in, b, cache, Winv, grad):
    pts = cache.single_pts
    wm, _ = cache.single_w
    w = wm[1]
    k = cache.ut.central_extra() - 1.0
    drive = cache.u2 @ G_in.T + b
    X = expit(pts @ G.T + drive[:, None, :])
    D = X[:, 1:] - X[:, :1]
    d = w * D.sum(axis=1)
    mu = X[:, 0] + d
    DW = D @ Winv
    val = w * np.einsum("tji,tji->t", DW, D) + k * np.einsum("ti,ij,tj->t", d, Winv, d) \
        + np.einsum("ti,ij,tj->t", mu, Winv, mu)
    if not grad:
        return val, mu, X, None
    g_mu = 2 * mu @ Winv
    g_d = 2 * k * d @ Winv + g_mu
    g_D = 2 * w * DW + w * g_d[:, None, :]
    g_X = np.concatenate([(g_mu - g_D.sum(axis=1))[:, None, :], g_D], axis=1)
    g_Z = g_X * X * (1 - X)
    return val, mu, X, (g_Z, pts)


def _term_ii_ut(G, G_in, b, cache, Winv, grad):
    p = G.shape[0]
    pts = cache.pair_pts
    wm, _ = cache.pair_w
    w = wm[1]
    A = pts[:, :, :p]
    B = pts[:, :, p:]
    drive = cache.u2 @ G_in.T + b
    X = expit(A @ G.T + drive[:, None, :])
    DX = X[:, 1:] - X[:, :1]
    DB = B[:, 1:] - B[:, :1]
    m = cache.means[1:]
    mu = X[:, 0] + w * DX.sum(axis=1)
    DBW = DB @ Winv
    mW = m @ Winv
    val = w * np.einsum("tji,tji->t", DBW, DX) + np.einsum("ti,ti->t", mW, mu)
    if not grad:
        cross = w * np.einsum("tji,tjk->tik", DX, DB)  # Cov(xi, theta_t)
        return val, mu, cross, None
    g_D = w * DBW + w * mW[:, None, :]
    g_X = np.concatenate([(mW - g_D.sum(axis=1))[:, None, :], g_D], axis=1)
    g_Z = g_X * X * (1 - X)
    return val, mu, None, (g_Z, A)


def _term_ii_taylor(G, G_in, b, cache, Winv, grad):
    m_prev, m = cache.means[:-1], cache.means[1:]
    z0 = m_prev @ G.T + cache.u2 @ G_in.T + b
    s = expit(z0)
    N = s * (1 - s)
    P = np.einsum("ij,tjk->tik", Winv, cache.cross_tp)  # Winv Cov(theta_t, theta_{t-1})
    diag = np.einsum("tik,ik->ti", P, G)
    mW = m @ Winv
    val = np.einsum("ti,ti->t", mW, s) + np.einsum("ti,ti->t", N, diag)
    if not grad:
        # E[xi theta_t^T] - E[xi] E[theta_t]^T under the linearization
        NG = N[:, :, None] * G[None]
        cross = np.einsum("tij,tkj->tik", NG, cache.cross_tp)
        return val, s, cross, None
    g_z = mW * N + diag * N * (1 - 2 * s)
    g_G_direct = np.einsum("ti,tik->ik", N, P)
    return val, s, None, (g_z, m_prev, g_G_direct)


def smooth_objective(x, params, cache, Winv, grad=True):
    """Part of the negative expected log-likelihood that depends on ``(G, G_in, b)``.

    Returns ``0.5 * sum_t (iii_t - 2 ii_t)`` and, if ``grad``, its gradient
    with respect to the packed vector ``x``.
    """
    p, m = params.p, params.m
    G, G_in, b = _unpack(x, p, m)
    iii, _, _, g3 = _term_iii(G, G_in, b, cache, Winv, grad)
    if cache.method == "joint_ut":
        ii, _, _, g2 = _term_ii_ut(G, G_in, b, cache, Winv, grad)
    else:
        ii, _, _, g2 = _term_ii_taylor(G, G_in, b, cache, Winv, grad)
    val = 0.5 * float(np.sum(iii - 2 * ii))
    if not grad:
        return val
    gG = np.zeros((p, p))
    gz_sum = np.zeros((cache.T, p))
    g_Z, pts = g3
    gG += 0.5 * np.einsum("tji,tjk->ik", g_Z, pts)
    gz_sum += 0.5 * g_Z.sum(axis=1)
    if cache.method == "joint_ut":
        g_Z, A = g2
        gG -= np.einsum("tji,tjk->ik", g_Z, A)
        gz_sum -= g_Z.sum(axis=1)
    else:
        g_z, m_prev, g_direct = g2
        gG -= np.einsum("ti,tk->ik", g_z, m_prev) + g_direct
        gz_sum -= g_z
    gGin = gz_sum.T @ cache.u2
    gb = gz_sum.sum(axis=0)
    return val, np.concatenate([gG.ravel(), gGin.ravel(), gb])


def fill_terms(cache, params):
    """Evaluate terms i-iii for ``params`` and store them on the cache."""
    Winv = np.linalg.inv(params.W)
    G, G_in, b = params.G, params.G_in, params.b
    cache.term_i = np.einsum("ij,tji->t", Winv, cache.covs[1:]) + np.einsum(
        "ti,ij,tj->t", cache.means[1:], Winv, cache.means[1:])
    iii, mu, X, _ = _term_iii(G, G_in, b, cache, Winv, False)
    cache.term_iii = iii
    cache.xi_mean = mu
    wm, _ = cache.single_w
    D = X[:, 1:] - X[:, :1]
    d = mu - X[:, 0]
    cache.xi_cov = wm[1] * np.einsum("tji,tjk->tik", D, D) + (cache.ut.central_extra() - 1.0) * np.einsum("ti,tk->tik", d, d)
    if cache.method == "joint_ut":
        ii, _, _, _ = _term_ii_ut(G, G_in, b, cache, Winv, False)
    else:
        ii, _, _, _ = _term_ii_taylor(G, G_in, b, cache, Winv, False)
    cache.term_ii = ii
    return cache


def expected_loglik_from_cache(cache, params):
    """Expected complete-data log-likelihood (constant dropped)."""
    fill_terms(cache, params)
    T = cache.T
    quad = np.sum(cache.term_i - 2 * cache.term_ii + cache.term_iii)
    obs = sum(np.sum(y * y - 2 * y * iv + v) for y, iv, v in zip(cache.y, cache.term_iv, cache.term_v))
    return float(-0.5 * T * logdet_psd(params.W) - 0.5 * cache.n_obs * math.log(params.v)
                 - 0.5 * quad - 0.5 * obs / params.v)


def expected_loglik(traj, params, inputs, batches, cfg=GemConfig(), ut=UtConfig()):
    """Expected log-likelihood under a smoothed trajectory; returns ``(value, cache)``."""
    cache = build_cache(traj, params, inputs, batches, cfg.term_ii_method, ut)
    return expected_loglik_from_cache(cache, params), cache


def l1_penalty(params):
    return float(np.abs(params.G).sum() + np.abs(params.G_in).sum())


def loss_from_cache(cache, params, alpha):
    return -expected_loglik_from_cache(cache, params) + alpha * l1_penalty(params)


def loss(traj, params, inputs, batches, cfg=GemConfig(), ut=UtConfig()):
    """Regularized loss ``-E[log-likelihood] + alpha * (|G|_1 + |G_in|_1)``."""
    value, _ = expected_loglik(traj, params, inputs, batches, cfg, ut)
    return -value + cfg.lasso_alpha * l1_penalty(params)


def noise_updates(cache, params, w_floor=0.0, v_floor=0.0):
    """Maximizers of the expected log-likelihood in ``W`` and ``v`` for fixed weights."""
    fill_terms(cache, params)
    T = cache.T
    m = cache.means[1:]
    G, G_in, b = params.G, params.G_in, params.b
    Winv = np.linalg.inv(params.W)
    if cache.method == "joint_ut":
        _, mu2, cross, _ = _term_ii_ut(G, G_in, b, cache, Winv, False)
    else:
        _, mu2, cross, _ = _term_ii_taylor(G, G_in, b, cache, Winv, False)
    # E[(theta - xi)(theta - xi)^T] with E[xi theta^T] = cross + mu2 m^T
    e_tt = cache.covs[1:] + np.einsum("ti,tk->tik", m, m)
    e_xt = cross + np.einsum("ti,tk->tik", mu2, m)
    e_xx = cache.xi_cov + np.einsum("ti,tk->tik", cache.xi_mean, cache.xi_mean)
    S = (e_tt - e_xt - np.transpose(e_xt, (0, 2, 1)) + e_xx).sum(axis=0) / T
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    W = (V * np.maximum(w, w_floor)) @ V.T
    W = 0.5 * (W + W.T)
    v = max(cache.obs_sse() / cache.n_obs, v_floor)
    return W, v


# ---------------------------------------------------------------------------
# proximal gradient


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def proximal_gradient(fun, x0, alpha, mask, steps=10, step_size=1.0, shrink=0.5, grow=2.0, max_backtracks=40):
    """Minimize ``fun(x) + alpha * |mask * x|_1`` by proximal gradient.

    ``fun(x)`` returns ``(value, gradient)``.  A step is accepted when the
    smooth part satisfies the quadratic upper-bound (Armijo) condition, which
    also guarantees the regularized objective does not increase.

    Returns ``(x, info)`` where ``info`` holds per-step objective values and
    step lengths.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    hist = {"objective": [f + alpha * np.abs(mask * x).sum()], "step": [], "accepted": 0}
    s = step_size
    for _ in range(steps):
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient")
        accepted = False
        for _ in range(max_backtracks):
            z = x - s * g
            xn = np.where(mask > 0, soft_threshold(z, s * alpha * mask), z)
            dx = xn - x
            if not np.any(dx):
                return x, hist
            fn, gn = fun(xn)
            if np.isfinite(fn) and fn <= f + g @ dx + (dx @ dx) / (2 * s):
                accepted = True
                break
            s *= shrink
        if not accepted:
            break
        x, f, g = xn, fn, gn
        hist["objective"].append(f + alpha * np.abs(mask * x).sum())
        hist["step"].append(s)
        hist["accepted"] += 1
        s *= grow
    return x, hist


# ---------------------------------------------------------------------------
# validation and the outer loop


def one_step_errors(model, posterior, series, ut=UtConfig()):
    """Relative one-step-ahead price errors while updating through ``series``.

    Returns ``(errors, final_posterior)``.
    """
    errs = []
    post = posterior
    for u, batch in zip(series.inputs, series.batches):
        prior, _ = predict(model, post, u, ut)
        pred, _ = predict_observation(model, prior, batch, ut)
        errs.append(float(np.mean(np.abs(pred.mean - batch.prices) / batch.prices)))
        post = update(model, prior, batch, ut).posterior
    return errs, post


@dataclass
class FitResult:
    params: object
    report: dict
    initial: Gaussian
    trajectory: object = None

    def save_report(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.report, fh, indent=2)


def _norms(params):
    return {
        "G_fro": float(np.linalg.norm(params.G)),
        "G_in_fro": float(np.linalg.norm(params.G_in)),
        "b_norm": float(np.linalg.norm(params.b)),
        "G_l1": float(np.abs(params.G).sum()),
        "G_in_l1": float(np.abs(params.G_in).sum()),
        "spectral_radius": float(spectral_radius(params.G)),
        "W_trace": float(np.trace(params.W)),
        "v": float(params.v),
    }


def gem_fit(train, validation, init_params, initial, cfg=GemConfig(), ut=UtConfig()):
    """Fit ``(G, G_in, b, W, v)`` on ``train``; stop on ``validation`` error.

    Args:
        train: :class:`~urs.series.Series` used for filtering and smoothing.
        validation: series following ``train`` (may be empty).
        init_params: starting :class:`~urs.reservoir.ReservoirParams`.
        initial: Gaussian belief over the state at time 0.

    Returns:
        :class:`FitResult` with the parameters of lowest validation error
        (the last parameters when ``validation`` is empty).
    """
    params = init_params
    mask = penalty_mask(params.p, params.m)
    report = {"term_ii_method": cfg.term_ii_method, "config": asdict(cfg), "iterations": []}
    best = None
    stale = 0
    step = cfg.step_size
    traj = None
    for it in range(cfg.max_iters + 1):
        entry = {"iteration": it, **_norms(params)}
        try:
            model = ReservoirModel(params)
            fr = forward_filter(model, initial, train.inputs, train.batches, ut)
            traj = rts_smooth(fr, ut)
            entry["log_evidence"] = fr.log_evidence
            if len(validation):
                errs, _ = one_step_errors(model, fr.final, validation, ut)
                val_err = float(np.mean(errs))
            else:
                val_err = -fr.log_evidence
            entry["validation_error"] = val_err
        except UrsError as exc:
            report["aborted"] = "iteration %d: %s" % (it, exc)
            break
        if not np.isfinite(val_err):
            report["aborted"] = "iteration %d: non-finite validation error" % it
            break
        if best is None or val_err < best[0] - cfg.tol:
            best = (val_err, params, it, traj)
            stale = 0
        else:
            stale += 1
        report["iterations"].append(entry)
        if it == cfg.max_iters or stale >= cfg.patience:
            break
        try:
            cache = build_cache(traj, params, train.inputs, train.batches, cfg.term_ii_method, ut)
            Winv = np.linalg.inv(params.W)
            loss_before = loss_from_cache(cache, params, cfg.lasso_alpha)
            x, info = proximal_gradient(
                lambda z: smooth_objective(z, params, cache, Winv), pack(params), cfg.lasso_alpha, mask,
                cfg.inner_steps, step, cfg.shrink, cfg.grow, cfg.max_backtracks)
            if info["step"]:
                step = info["step"][-1]
            G, G_in, b = _unpack(x, params.p, params.m)
            new = params.replace(G=G, G_in=G_in, b=b)
            loss_mid = loss_from_cache(cache, new, cfg.lasso_alpha)
            if cfg.update_noise:
                W, v = noise_updates(cache, new, cfg.w_floor, cfg.v_floor)
                new = new.replace(W=W, v=v)
            loss_after = loss_from_cache(cache, new, cfg.lasso_alpha)
        except UrsError as exc:
            report["aborted"] = "M-step %d: %s" % (it, exc)
            break
        if not np.isfinite(loss_after):
            report["aborted"] = "M-step %d: non-finite loss" % it
            break
        entry.update(loss_before=loss_before, loss_after_weights=loss_mid, loss_after=loss_after,
                     accepted_steps=info["accepted"])
        params = new
    if best is None:
        raise NumericalError(report.get("aborted", "fit failed before the first iteration"))
    report["best_iteration"] = best[2]
    report["best_validation_error"] = best[0]
    return FitResult(best[1], report, initial, best[3])
