"""Eigenvalue errors against a Monte-Carlo reference and log-log slope fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NOISE_FACTOR = 3.0
MIN_POINTS = 4


def eigenvalue_error(reference, approx, n_dominant: int = 2) -> float:
    """Sum of |lambda_j(ref) - lambda_j(approx)| over the dominant eigenvalues."""
    ref = np.real(np.asarray(reference))[:n_dominant]
    app = np.real(np.asarray(approx))[:n_dominant]
    if ref.size < n_dominant or app.size < n_dominant:
        raise ValueError(f"need {n_dominant} eigenvalues from both operators")
    return float(np.abs(ref - app).sum())


def error_stderr(stderr, n_dominant: int = 2) -> float:
    """Standard error of the summed error from per-eigenvalue reference stderrs."""
    if stderr is None:
        return 0.0
    se = np.asarray(stderr, dtype=float)[:n_dominant]
    return float(np.sqrt(np.sum(se**2)))


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    t_used: np.ndarray
    window: tuple[float, float]
    ok: bool
    reason: str = ""

    @property
    def n_points(self) -> int:
        return int(self.t_used.size)


def loglog_slope(
    t,
    eps,
    stderr=None,
    window=(0.05, 0.4),
    noise_factor: float = NOISE_FACTOR,
    min_points: int = MIN_POINTS,
) -> SlopeFit:
    """Least-squares slope of log(eps) against log(t) inside ``window``.

    Points whose error is not above ``noise_factor`` standard errors carry no
    information about the rate and are dropped, which shrinks the window when
    the noise floor dominates its small-t end. The fit is flagged unusable when
    fewer than ``min_points`` remain.
    """
    t = np.asarray(t, dtype=float)
    eps = np.asarray(eps, dtype=float)
    se = np.zeros_like(eps) if stderr is None else np.asarray(stderr, dtype=float)
    order = np.argsort(t)
    t, eps, se = t[order], eps[order], se[order]
    inside = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    t, eps, se = t[inside], eps[inside], se[inside]
    keep = (eps > noise_factor * se) & (eps > 0)
    tu, eu = t[keep], eps[keep]
    win = (float(tu[0]), float(tu[-1])) if tu.size else (float(window[0]), float(window[1]))
    if tu.size < min_points:
        return SlopeFit(np.nan, np.nan, tu, win, False, f"only {tu.size} usable points")
    slope, intercept = np.polyfit(np.log(tu), np.log(eu), 1)
    return SlopeFit(float(slope), float(intercept), tu, win, True)
