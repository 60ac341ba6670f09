"""Optional PNG figures rendered next to the CSV outputs (Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def plot_eigenvalue_curves(path, t, curves: dict, title="") -> Path:
    """One panel per operator; ``curves[name]`` is an (n_t, k) array."""
    fig, axes = plt.subplots(1, len(curves), figsize=(4.2 * len(curves), 3.4), squeeze=False)
    for ax, (name, lam) in zip(axes[0], curves.items()):
        lam = np.asarray(lam)
        for j in range(lam.shape[1]):
            ax.plot(t, lam[:, j], marker=".", lw=1)
        ax.set_title(name)
        ax.set_xlabel("t")
    axes[0][0].set_ylabel("eigenvalue")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_errors(path, t, errors: dict, fits: dict | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    for name, eps in errors.items():
        eps = np.asarray(eps, dtype=float)
        ok = eps > 0
        ax.loglog(np.asarray(t)[ok], eps[ok], marker="o", lw=1, label=name)
        fit = (fits or {}).get(name)
        if fit is not None and fit.ok:
            tt = np.array(fit.window)
            ax.loglog(tt, np.exp(fit.intercept) * tt**fit.slope, "--", lw=1,
                      label=f"{name} slope {fit.slope:.2f}")
    ax.set_xlabel("t")
    ax.set_ylabel("eigenvalue error")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_bounds(path, rows_by_source: dict, mc=None) -> Path:
    """``rows_by_source[name]`` holds (t, upper, lower) arrays; ``mc`` is
    (t, sum, stderr)."""
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    for name, (t, up, lo) in rows_by_source.items():
        line = ax.plot(t, up, lw=1, label=f"{name} upper")[0]
        ax.plot(t, lo, lw=1, ls="--", color=line.get_color(), label=f"{name} lower")
    if mc is not None:
        t, s, se = mc
        ax.errorbar(t, s, yerr=3 * np.asarray(se), fmt="ko", ms=3, label="MC sum")
    ax.set_xlabel("t")
    ax.set_ylabel("summed self-transition probability")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_labels(path, points, labels, title="") -> Path:
    """Set labels over a 1D or 2D support."""
    points = np.asarray(points)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    if points.shape[1] == 1:
        ax.step(points[:, 0], labels, where="mid")
        ax.set_xlabel("q")
        ax.set_ylabel("set")
    else:
        sc = ax.scatter(points[:, 0], points[:, 1], c=labels, s=12, cmap="tab10", marker="s")
        ax.set_xlabel("q1")
        ax.set_ylabel("q2")
        ax.set_aspect("equal")
        fig.colorbar(sc, ax=ax, label="set")
    if title:
        ax.set_title(title)
    return _save(fig, path)
