"""Least-trimmed-squares line fitting via concentration steps.

Minimizes the sum of the h smallest squared residuals (h = n - trim*n),
which tolerates up to ~trim fraction of arbitrary outliers. Concentration
step: fit OLS on the current subset, rank all residuals, keep the h best,
repeat until the subset is stable or the iteration cap is hit. Given a
starting fit the procedure is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    inliers: np.ndarray
    objective: float
    n_iter: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(x, dtype=np.float64)


def fit_line_ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Plain least squares, centered for conditioning. Returns (slope, intercept)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    var = float(dx @ dx)
    if var == 0.0:
        return 0.0, float(ym)
    slope = float(dx @ (y - ym)) / var
    return slope, float(ym - slope * xm)


def fit_line_lts(
    x: np.ndarray,
    y: np.ndarray,
    trim_fraction: float = 0.5,
    max_iter: int = 50,
    init: tuple[float, float] | None = None,
) -> LineFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n < 4:
        raise InsufficientDataError(f"need at least 4 points for a trimmed fit, got {n}")
    if not 0.0 <= trim_fraction < 1.0:
        raise ValueError(f"trim_fraction must be in [0, 1), got {trim_fraction}")
    h = max(2, n - int(trim_fraction * n))

    if init is None:
        slope, intercept = fit_line_ols(x, y)
    else:
        slope, intercept = float(init[0]), float(init[1])

    best = None
    subset = None
    for it in range(1, max_iter + 1):
        resid = np.abs(y - (intercept + slope * x))
        new_subset = np.sort(np.argpartition(resid, h - 1)[:h])
        if subset is not None and new_subset.shape == subset.shape and np.array_equal(new_subset, subset):
            break
        subset = new_subset
        slope, intercept = fit_line_ols(x[subset], y[subset])
        r = y[subset] - (intercept + slope * x[subset])
        obj = float(r @ r)
        if best is None or obj < best[0]:
            best = (obj, slope, intercept, subset, it)

    obj, slope, intercept, subset, it = best
    inliers = np.zeros(n, dtype=bool)
    inliers[subset] = True
    return LineFit(slope=slope, intercept=intercept, inliers=inliers, objective=obj, n_iter=it)
