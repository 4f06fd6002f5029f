"""Result containers shared by every estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass(frozen=True)
class EstimateWithError:
    """A scalar Monte Carlo or quadrature result.

    ``stderr`` is the Monte Carlo standard error (0 for pure quadrature) and
    ``quad_error`` a deterministic quadrature error bound.  The two are added
    linearly in :attr:`error`.
    """

    value: float
    stderr: float = 0.0
    samples: int = 0
    seed: Any = None
    method: str = ""
    quad_error: float = 0.0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def error(self) -> float:
        return self.stderr + self.quad_error

    def within(self, target: float, k: float = 3.0, atol: float = 0.0) -> bool:
        """True if ``|value - target| <= k * error + atol``."""
        return abs(self.value - target) <= k * self.error + atol

    def scaled(self, factor: float) -> EstimateWithError:
        return EstimateWithError(
            value=self.value * factor,
            stderr=self.stderr * abs(factor),
            samples=self.samples,
            seed=self.seed,
            method=self.method,
            quad_error=self.quad_error * abs(factor),
            extra=dict(self.extra),
        )

    def to_dict(self) -> dict:
        out = {
            "value": self.value,
            "stderr": self.stderr,
            "quad_error": self.quad_error,
            "samples": self.samples,
            "seed": list(self.seed) if isinstance(self.seed, tuple) else self.seed,
            "method": self.method,
        }
        extra = {k: v for k, v in self.extra.items() if _jsonable(v)}
        if extra:
            out["extra"] = extra
        return out


def _jsonable(v) -> bool:
    return isinstance(v, (int, float, str, bool)) or v is None


def mean_estimate(values, *, seed=None, method: str = "monte-carlo", **extra) -> EstimateWithError:
    """Sample mean with its standard error."""
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return EstimateWithError(mean, se, samples=n, seed=seed, method=method, extra=extra)


@dataclass(frozen=True)
class Ensemble:
    """An ``M x N`` batch of particle configurations with provenance."""

    points: np.ndarray
    law: str
    seed: Any
    rescaled: bool

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def N(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class IdentityCheck:
    """Two estimates of the same quantity and their (paired) difference."""

    lhs: EstimateWithError
    rhs: EstimateWithError
    discrepancy: EstimateWithError

    def consistent(self, k: float = 3.0, atol: float = 0.0) -> bool:
        return self.discrepancy.within(0.0, k=k, atol=atol)
