"""Closed-form exponents and constants of the chaos bounds.

Unknown constants are represented by ``None``; they are never silently
replaced by 1.  Open-interval exponents ("any eta < x") are returned as the
supremum ``x`` with ``strict=True``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from kacsphere.errors import PreconditionError


@dataclass(frozen=True)
class RatePrediction:
    """A bound of the form ``constant * N^-exponent`` (times ``log N`` if ``log_factor``)."""

    theorem: str
    exponent: float
    constant: float | None = None
    log_factor: bool = False
    strict: bool = False
    validity: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.exponent):
            raise ValueError("exponent must be finite")

    @property
    def constant_known(self) -> bool:
        return self.constant is not None

    def shape(self, N):
        """``N^-exponent`` (with the log factor) without the constant."""
        N = np.asarray(N, dtype=float)
        out = N ** (-self.exponent)
        if self.log_factor:
            out = out * np.log(N)
        return out

    def bound(self, N):
        if self.constant is None:
            raise ValueError(f"{self.theorem}: constant is not explicit")
        return self.constant * self.shape(N)

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "exponent": self.exponent, "constant": self.constant,
                "log_factor": self.log_factor, "strict": self.strict, "validity": self.validity,
                **{k: v for k, v in self.extra.items() if isinstance(v, (int, float, str, bool))}}


def _require(cond: bool, msg: str):
    if not cond:
        raise PreconditionError(msg)


# -- Wasserstein ----------------------------------------------------------


def w2_prediction(p: float) -> RatePrediction:
    """Shape of the bound on ``(1/N) W_2(f_hat^N, f^N)^2`` for ``f`` with ``p`` moments."""
    _require(p > 2, "w2 rate needs p > 2")
    if p > 4:
        return RatePrediction("w2", 0.5, validity="p > 4")
    if p == 4:
        return RatePrediction("w2", 0.5, log_factor=True, validity="p = 4")
    return RatePrediction("w2", 1.0 - 2.0 / p, validity="2 < p < 4")


def w2_rate(N, p: float):
    return w2_prediction(p).shape(N)


def wr_b(p: float, r: float) -> float:
    _require(2 < r < p, "need 2 < r < p")
    return 1.0 if math.isinf(p) else (p - r) / (p - 2)


def wr_prediction(p: float, r: float) -> RatePrediction:
    b = wr_b(p, r)
    base = w2_prediction(p)
    return RatePrediction("wr", b * base.exponent, log_factor=base.log_factor,
                          validity=f"2 < r < p, {base.validity}", extra={"b": b, "r": r})


def wr_rate(N, p: float, r: float):
    """``(b, shape)``; the w2 shape raised to the power ``b``."""
    b = wr_b(p, r)
    return b, np.asarray(w2_rate(N, p)) ** b


# -- L1 marginal ----------------------------------------------------------


def _check_l1(k, delta, r):
    _require(k >= 1, "k must be >= 1")
    _require(0 < delta <= 2, "delta must be in (0, 2]")
    _require(r >= 0, "r must be >= 0")


def l1_eta(k: int, delta: float, r: float) -> float:
    _check_l1(k, delta, r)
    return delta / (k + 5 + delta + r * (2 + delta))


def l1_qstar(k: int, delta: float, r: float) -> float:
    _check_l1(k, delta, r)
    d = r * (2 + delta)
    return (delta / (delta + 2)) * (k + 3 + delta + d) / (k + 5 + delta + d)


def eta_components(q, k: int, delta: float, r: float):
    """The three competing exponents as functions of the splitting parameter ``q``.

    The first one carries the ``r`` dependence coming from the almost-Lipschitz
    comparison with ``beta = 2 + delta``.
    """
    q = np.asarray(q, dtype=float)
    e1 = (2 + delta) * q / (k + 3 + delta + r * (2 + delta))
    e2 = delta / 2 - q * (1 + delta / 2)
    e3 = (2 + delta) * (1 - q) / 4
    return e1, e2, e3


def l1_eta_numeric(k: int, delta: float, r: float, grid: int = 10_000) -> tuple[float, float]:
    """``max_q min(eta_1, eta_2, eta_3)`` by grid search plus bounded refinement."""
    _check_l1(k, delta, r)
    qs = np.linspace(0.0, 1.0, grid + 1)
    vals = np.minimum.reduce(eta_components(qs, k, delta, r))
    i = int(np.argmax(vals))
    lo, hi = qs[max(i - 1, 0)], qs[min(i + 1, grid)]
    res = optimize.minimize_scalar(lambda q: -min(eta_components(q, k, delta, r)), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-12})
    if -res.fun >= vals[i]:
        return float(-res.fun), float(res.x)
    return float(vals[i]), float(qs[i])


def l1_prediction(k: int, delta: float, r: float) -> RatePrediction:
    return RatePrediction("l1", l1_eta(k, delta, r), validity="f in ALip(r), 2+delta moments, delta in (0,2]",
                          extra={"q_star": l1_qstar(k, delta, r), "n_min": n_min(k, delta)})


def n_min(k: int, delta: float, q: float | None = None, second_moment: float | None = None) -> float:
    """``(2k)^{1+delta/2}``; with ``q`` also enforces ``max(2k, (2k E X^2)^{1/(1-q)})``."""
    _require(k >= 1 and delta > 0, "need k >= 1 and delta > 0")
    n0 = (2 * k) ** (1 + delta / 2)
    if q is not None:
        n0 = max(n0, vonbahr_n_min(k, q, 1.0 if second_moment is None else second_moment))
    return n0


# -- psi-map distortion -----------------------------------------------------


def c_kq(k: int, q: float) -> float:
    _require(k >= 1 and 0 < q < 1, "need k >= 1 and q in (0, 1)")
    d = 1.0 - 2.0 ** (-q)
    return (10 + 2 * k * (1 + 2 * k / d ** (k / 2))) / d


def epsilon_N(k: int, q: float, N) -> tuple[float, float]:
    """``(C(k,q) N^-q, C(k,q))``."""
    c = c_kq(k, q)
    _require(np.all(np.asarray(N) >= 2), "need N >= 2")
    return c * np.asarray(N, dtype=float) ** (-q), c


def remark_constants(k: int, q: float, N: float) -> dict:
    """Sharper per-quantity constants (times ``N^-q``) for the three distortions."""
    d = 1.0 - 2.0 ** (-q)
    nq = N ** (-q)
    return {
        "displacement": 4 / d,
        "operator_norm": 4 * (1 + 2.0 ** (-q)) / d + 1,
        "det_deviation": (1 + 2 * k * (1 + 4 * nq / d) ** (k / 2)) / d,
    }


# -- von Bahr-Esseen tail --------------------------------------------------


def vonbahr_bound(N, q: float, delta: float, moment_2pdelta: float):
    """``16 N^{-(d/2 - (1+d/2) q)} E|X|^{2+d}`` with ``d = min(2, delta)``.

    ``moment_2pdelta`` must be the ``2 + d`` absolute moment.
    """
    _require(0 < q < 1 and delta > 0, "need q in (0, 1) and delta > 0")
    d = min(2.0, delta)
    return 16.0 * np.asarray(N, dtype=float) ** (-(d / 2 - (1 + d / 2) * q)) * moment_2pdelta


def vonbahr_n_min(k: int, q: float, second_moment: float = 1.0) -> float:
    return max(2 * k, (2 * k * second_moment) ** (1 / (1 - q)))


# -- entropic ---------------------------------------------------------------


def entropic_rate(k: float) -> RatePrediction:
    """Supremum of admissible entropic exponents for ``f`` with ``k > 4`` moments."""
    _require(k > 4, "entropic rate needs k > 4 moments")
    return RatePrediction("entropic", (k - 2) / (8 * (k + 1)), strict=True,
                          validity="k > 4 moments, f in L^p, I(f|gamma) finite",
                          extra={"companion_exponent": k / 4 - 1})


def conditioned_rate(r: float) -> RatePrediction:
    _require(0 < r <= 2, "need r in (0, 2]")
    return RatePrediction("conditioned_entropy", r / 4, validity="4 + r moments, f in L^p")


def default_delta(moment_sup: float) -> float:
    """Largest usable ``delta <= 2`` for a density with moments below ``moment_sup``."""
    return min(2.0, moment_sup - 2.0 - 0.01)
