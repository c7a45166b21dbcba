"""Static figures for reports (Agg canvas, PNG output).

Figures are built on :class:`matplotlib.figure.Figure` with an Agg canvas, so
nothing touches pyplot's global state and no display is needed.
"""

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {"smoothed": "C0", "forecast": "C3", "truth": "k", "baseline": "C2"}


def _new(width=7.0, height=3.6, ncols=1):
    fig = Figure(figsize=(width, height), dpi=120)
    FigureCanvasAgg(fig)
    axes = [fig.add_subplot(1, ncols, i + 1) for i in range(ncols)]
    for ax in axes:
        ax.grid(True, alpha=0.3, linewidth=0.6)
    return fig, axes


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, metadata={"Software": None})
    return path


def trajectory_figure(path, t, mean, lo, hi, truth=None, forecast=None, level=0.95):
    """Smoothed volatility with its central interval and an optional forecast band.

    ``forecast`` is ``(t, mean, lo, hi)`` for the out-of-sample part.
    """
    fig, (ax,) = _new()
    ax.fill_between(t, lo, hi, color=STYLE["smoothed"], alpha=0.25, linewidth=0,
                    label="%d%% interval" % round(100 * level))
    ax.plot(t, mean, color=STYLE["smoothed"], linewidth=1.2, label="smoothed mean")
    if forecast is not None:
        ft, fm, flo, fhi = forecast
        ax.fill_between(ft, flo, fhi, color=STYLE["forecast"], alpha=0.25, linewidth=0)
        ax.plot(ft, fm, color=STYLE["forecast"], linewidth=1.2, label="1-step forecast")
    if truth is not None:
        tt, tv = truth
        ax.plot(tt, tv, color=STYLE["truth"], linewidth=0.9, label="ground truth")
    ax.set_xlabel("t")
    ax.set_ylabel("volatility")
    ax.legend(loc="best", fontsize=8, frameon=False)
    return _save(fig, path)


def coverage_figure(path, curve):
    """Observed against nominal coverage, one line per horizon."""
    fig, (ax,) = _new(width=4.6, height=4.2)
    lv = np.asarray(curve.levels)
    ax.plot([0, 1], [0, 1], color="0.5", linestyle="--", linewidth=0.8)
    for k, obs in sorted(curve.observed.items()):
        ax.plot(lv, obs, marker="o", markersize=2.5, linewidth=1.0, label="k = %d" % k)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("nominal level")
    ax.set_ylabel("observed coverage (%s)" % curve.target)
    ax.legend(loc="lower right", fontsize=8, frameon=False)
    return _save(fig, path)


def error_by_horizon_figure(path, errors, baseline=None):
    """Mean relative price error per horizon, with the implied-volatility baseline if given."""
    fig, (ax,) = _new(width=4.6, height=3.4)
    ks = sorted(errors)
    ax.plot(ks, [errors[k] for k in ks], marker="o", color=STYLE["smoothed"], label="URS")
    if baseline:
        kb = sorted(baseline)
        ax.plot(kb, [baseline[k] for k in kb], marker="s", color=STYLE["baseline"], label="implied vol")
    ax.set_xticks(ks)
    ax.set_xlabel("horizon k")
    ax.set_ylabel("mean relative error")
    ax.legend(loc="best", fontsize=8, frameon=False)
    return _save(fig, path)


def loss_figure(path, iterations):
    """Regularized loss and validation error over GEM iterations."""
    fig, (a1, a2) = _new(width=7.0, height=3.0, ncols=2)
    it = [e["iteration"] for e in iterations if "loss_before" in e]
    a1.plot(it, [e["loss_before"] for e in iterations if "loss_before" in e], marker="o", markersize=3)
    a1.set_xlabel("iteration")
    a1.set_ylabel("regularized loss")
    a2.plot([e["iteration"] for e in iterations], [e["validation_error"] for e in iterations],
            marker="o", markersize=3, color=STYLE["forecast"])
    a2.set_xlabel("iteration")
    a2.set_ylabel("validation error")
    return _save(fig, path)
