"""Log-log slope fits for convergence studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from kacsphere.errors import PreconditionError


class DegenerateFitError(PreconditionError):
    """Raised when every estimate is statistically indistinguishable from zero."""


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    ci: tuple[float, float]
    intercept: float
    points: int
    weighted: bool
    excluded: list = field(default_factory=list)

    def contains(self, value: float) -> bool:
        return self.ci[0] <= value <= self.ci[1]

    def to_dict(self) -> dict:
        return {"slope": self.slope, "stderr": self.stderr, "ci": list(self.ci), "intercept": self.intercept,
                "points": self.points, "weighted": self.weighted, "excluded": list(self.excluded)}


def fit_loglog(N: Sequence[float], values: Sequence[float], errors: Sequence[float] | None = None,
               level: float = 0.95, min_points: int = 4) -> SlopeFit:
    """Slope of ``log value`` against ``log N``.

    With ``errors`` the fit is weighted by ``(value / error)^2``, the inverse
    variance of ``log value`` to first order.  Non-positive values cannot be
    placed on a log scale and are excluded (and reported).
    """
    N = np.asarray(N, dtype=float)
    v = np.asarray(values, dtype=float)
    e = None if errors is None else np.asarray(errors, dtype=float)
    if e is not None and v.size and np.all(np.abs(v) <= 3 * e):
        raise DegenerateFitError("estimates consistent with zero; slope fit refused")
    ok = np.isfinite(v) & (v > 0) & np.isfinite(N)
    excluded = [float(n) for n in N[~ok]]
    if ok.sum() < min_points:
        raise PreconditionError(f"need at least {min_points} positive finite estimates, got {int(ok.sum())}")
    x, y = np.log(N[ok]), np.log(v[ok])
    n = x.size
    weighted = e is not None and np.all(e[ok] > 0)
    w = (v[ok] / e[ok]) ** 2 if weighted else np.ones(n)
    X = np.column_stack([np.ones(n), x])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = (y - X @ coef) * sw
    dof = n - 2
    s2 = float(resid @ resid) / dof if dof > 0 else math.nan
    cov = s2 * np.linalg.inv((X * w[:, None]).T @ X)
    se = math.sqrt(cov[1, 1]) if dof > 0 else math.inf
    half = stats.t.ppf(0.5 + level / 2, dof) * se if dof > 0 else math.inf
    return SlopeFit(float(coef[1]), se, (float(coef[1] - half), float(coef[1] + half)), float(coef[0]), n,
                    bool(weighted), excluded)


def spearman_trend(N: Sequence[float], values: Sequence[float]) -> float:
    """Spearman rank correlation between the grid and the estimates."""
    rho = stats.spearmanr(N, values).statistic
    return float(rho)
