"""Lipschitz approximations of rough one-dimensional functions and the L1 distortion functional.

A function is in ``ALip(r)`` when it can be approximated in ``L1`` to
accuracy ``eps`` by Lipschitz functions with constant ``O(eps^-r)``.  The
constructions here build such approximants, *measure* their error and
Lipschitz constant, and fit ``r`` across a parameter sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, signal, special, stats

from kacsphere.errors import PreconditionError, QuadratureError
from kacsphere.rates import c_kq
from kacsphere.sphere import PsiMap

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class ApproximationFamily:
    """One member ``g`` of an approximation sweep together with its measured quality."""

    target: Callable
    approximant: Callable
    construction: str
    parameter: float
    l1_error: float
    lip_constant: float
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExponentFit:
    r: float
    L0: float
    ci: tuple[float, float]
    points: int

    def contains(self, value: float) -> bool:
        return self.ci[0] <= value <= self.ci[1]


def measure_lipschitz(fn: Callable, lo: float, hi: float, kinks: Sequence[float] = (),
                      n: int = 10_000, levels: int = 24) -> float:
    """Largest secant slope of ``fn`` on a uniform grid refined dyadically towards each kink.

    Points closer than ``1e-9`` of the span are merged so that round-off in
    ``fn`` is never divided by a vanishing spacing.
    """
    pts = [np.linspace(lo, hi, n + 1)]
    span = hi - lo
    offs = span * 2.0 ** -np.arange(1, levels + 1)
    for c in kinks:
        pts.append(np.array([c]))
        pts.append(c - offs)
        pts.append(c + offs)
    x = np.unique(np.clip(np.concatenate(pts), lo, hi))
    x = x[np.concatenate([[True], np.diff(x) > 1e-9 * span])]
    y = np.asarray(fn(x), dtype=float)
    return float(np.max(np.abs(np.diff(y) / np.diff(x))))


def _l1_pieces(fn: Callable, breaks: Sequence[float]) -> tuple[float, float]:
    """``int |fn|`` over consecutive breakpoints by adaptive quadrature; returns value and error."""
    total = err = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        v, e = integrate.quad(lambda t: abs(float(fn(np.array([t]))[0])), a, b,
                              epsabs=1e-15, epsrel=1e-12, limit=400)
        total += v
        err += e
    return total, err


# ---------------------------------------------------------------------------
# the three constructions


def approx_power(a: float, h: float, R: float = 1.0) -> ApproximationFamily:
    """Tangent-line core for ``|x|^a`` on ``[-R, R]``.

    Inside ``|x| < h`` the target is replaced by its tangent at ``|x| = h``,
    reflected to make the approximant even.
    """
    if not -1 < a <= 1:
        raise PreconditionError("need a in (-1, 1]")
    if not 0 < h < R:
        raise PreconditionError("need 0 < h < R")

    def target(x):
        with np.errstate(divide="ignore"):
            return np.abs(np.asarray(x, dtype=float)) ** a

    def approx(x):
        ax = np.abs(np.asarray(x, dtype=float))
        core = h**a + a * h ** (a - 1) * (ax - h)
        with np.errstate(divide="ignore"):
            return np.where(ax >= h, ax**a, core)

    # the difference vanishes for |x| >= h and is even
    err, qerr = _l1_pieces(lambda t: target(t) - approx(t), [0.0, h])
    err *= 2
    lip = measure_lipschitz(approx, -R, R, kinks=(-h, 0.0, h))
    norm = 2 * R ** (1 + a) / (1 + a)
    return ApproximationFamily(target, approx, "power-kink", h, err, lip,
                               {"a": a, "R": R, "normalization": norm, "quad_error": 2 * qerr})


def approx_step(h: float) -> ApproximationFamily:
    """Ramp ``1/2 + x/h`` on ``[-h/2, h/2]`` for the Heaviside step."""
    if not 0 < h <= 1:
        raise PreconditionError("need h in (0, 1]")

    def target(x):
        return (np.asarray(x, dtype=float) >= 0).astype(float)

    def approx(x):
        return np.clip(0.5 + np.asarray(x, dtype=float) / h, 0.0, 1.0)

    # the integrand is linear on each piece, so Gauss-Legendre is exact
    nodes, weights = np.polynomial.legendre.leggauss(4)
    err = 0.0
    for lo, hi in ((-h / 2, 0.0), (0.0, h / 2)):
        t = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        err += 0.5 * (hi - lo) * float(weights @ np.abs(target(t) - approx(t)))
    lip = measure_lipschitz(approx, -1.0, 1.0, kinks=(-h / 2, h / 2))
    return ApproximationFamily(target, approx, "step", h, err, lip)


@dataclass(frozen=True)
class HolderTarget:
    """A bounded Hölder-``alpha`` function with ``int_{|x|>R} |f| <= M R^-beta``."""

    fn: Callable
    alpha: float
    beta: float
    M: float
    finest_scale: float
    name: str = "target"

    def __call__(self, x):
        return self.fn(x)


def weierstrass_target(alpha: float = 0.5, beta: float = 2.0, terms: int = 19) -> HolderTarget:
    """``sum_{n<terms} 2^{-n alpha} cos(2^n x) (1 + x^2)^{-(1+beta)/2}``."""
    coef = 2.0 ** (-alpha * np.arange(terms))
    freq = 2.0 ** np.arange(terms)

    def fn(x):
        x = np.asarray(x, dtype=float)
        s = np.zeros_like(x)
        for c, w in zip(coef, freq):
            s += c * np.cos(w * x)
        return s * (1 + x * x) ** (-(1 + beta) / 2)

    return HolderTarget(fn, alpha, beta, float(coef.sum()) * 2 / beta, 2.0 ** -(terms - 1),
                        f"weierstrass(alpha={alpha:g}, beta={beta:g})")


def gaussian_target() -> HolderTarget:
    def fn(x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)

    return HolderTarget(fn, 1.0, 2.0, 2 * math.sqrt(2 / math.pi) * math.exp(-1), 1.0, "gaussian")


def _bump(t):
    return np.where(np.abs(t) < 1, 15.0 / 16.0 * (1 - t * t) ** 2, 0.0)


def _bump_prime(t):
    return np.where(np.abs(t) < 1, -15.0 / 4.0 * t * (1 - t * t), 0.0)


def approx_mollify(target: HolderTarget, delta: float, window: float = 1.0,
                   grid_step: float | None = None) -> ApproximationFamily:
    """``target * psi_delta`` with the ``C^1`` bump ``(15/16)(1 - t^2)^2``.

    The convolution and its derivative are Riemann sums on a uniform grid
    finer than both ``delta`` and the target's finest oscillation, evaluated
    by FFT.  Error and Lipschitz constant are measured on ``[-window, window]``.
    """
    if not delta > 0:
        raise PreconditionError("delta must be positive")
    step = grid_step or min(delta / 32, target.finest_scale / 4)
    m = int(math.ceil(delta / step))
    if m < 8:
        raise QuadratureError(f"grid step {step:g} resolves delta = {delta:g} with only {m} points")
    n = int(math.ceil(window / step))
    x = step * np.arange(-(n + m), n + m + 1)
    t = step * np.arange(-m, m + 1) / delta
    w = _bump(t)
    w /= w.sum()
    dw = _bump_prime(t) * step / delta**2
    f = target(x)
    g = signal.fftconvolve(f, w, mode="same")
    dg = signal.fftconvolve(f, dw, mode="same")
    inner = slice(m, 2 * n + m + 1)
    diff = np.abs(f[inner] - g[inner])
    err = float(integrate.trapezoid(diff, dx=step))
    lip = float(np.max(np.abs(dg[inner])))
    xi = x[inner]

    def approx(z):
        return np.interp(z, xi, g[inner])

    return ApproximationFamily(target, approx, "mollified", delta, err, lip,
                               {"window": window, "grid_step": step, "alpha": target.alpha,
                                "beta": target.beta, "x": xi, "values": g[inner]})


def sweep(builder: Callable[[float], ApproximationFamily], params: Sequence[float]) -> list[ApproximationFamily]:
    return [builder(p) for p in params]


def fit_r(families: Sequence[ApproximationFamily], level: float = 0.95) -> ExponentFit:
    """Least-squares fit of ``log lip = log L0 + r log(1/error)`` with a t-based CI.

    A sweep whose Lipschitz constant does not move is the ``r = 0`` class
    and is returned as such without regression.
    """
    if len(families) < 6:
        raise PreconditionError(f"need at least 6 sweep points, got {len(families)}")
    lip = np.array([f.lip_constant for f in families])
    err = np.array([f.l1_error for f in families])
    if np.ptp(lip) <= 1e-9 * np.max(lip):
        return ExponentFit(0.0, float(lip.mean()), (0.0, 0.0), len(families))
    if np.any(err <= 0):
        raise PreconditionError("errors must be positive for an exponent fit")
    if err.max() / err.min() < 100:
        raise PreconditionError(f"sweep spans {math.log10(err.max() / err.min()):.2f} decades of error; need 2")
    res = stats.linregress(np.log(1 / err), np.log(lip))
    half = stats.t.ppf(0.5 + level / 2, len(families) - 2) * res.stderr
    return ExponentFit(float(res.slope), float(math.exp(res.intercept)),
                       (float(res.slope - half), float(res.slope + half)), len(families))


# ---------------------------------------------------------------------------
# L1 distortion


@dataclass(frozen=True)
class TestFunction:
    """Integrable ``g`` on ``R^k`` with Lipschitz constant, tail bound ``M R^-beta`` and integration radius."""

    __test__ = False

    fn: Callable
    k: int
    lip: float
    M: float
    beta: float
    radius: float
    l1_norm: float
    breaks: tuple = ()
    name: str = "g"


def gaussian_test_function(k: int = 1) -> TestFunction:
    """Standard Gaussian density on ``R^k``, ``k`` in {1, 2}, with ``beta = 2``."""
    if k == 1:
        lip = math.exp(-0.5) / math.sqrt(2 * math.pi)

        def tail(R):
            return special.erfc(R / math.sqrt(2))
    elif k == 2:
        lip = math.exp(-0.5) / (2 * math.pi)

        def tail(R):
            return np.exp(-0.5 * R * R)
    else:
        raise PreconditionError("distortion quadrature supports k in {1, 2}")
    R = np.linspace(1e-3, 20, 20_001)
    M = float(np.max(R**2 * tail(R))) * (1 + 1e-6)

    def fn(x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * np.sum(x * x, axis=-1) - k * _LOG_SQRT_2PI)

    return TestFunction(fn, k, lip, M, 2.0, 12.0, 1.0, name=f"gamma_{k}")


def indicator_test_function(lo: float = 0.0, hi: float = 1.0) -> TestFunction:
    """``1_[lo, hi]`` on the line: compactly supported, in ``ALip(1)`` but not Lipschitz."""

    def fn(x):
        x = np.asarray(x, dtype=float)[..., 0]
        return ((x >= lo) & (x <= hi)).astype(float)

    R = max(abs(lo), abs(hi))
    return TestFunction(fn, 1, math.inf, 0.0, math.inf, R * 1.5 + 1, hi - lo, (lo, hi), "indicator")


@dataclass(frozen=True)
class DistortionResult:
    g: str
    k: int
    epsilon: float
    measured: float
    bound: float
    quad_error: float
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.measured <= self.bound + self.quad_error


def sphere_area(k: int) -> float:
    """``|S^{k-1}(1)|``."""
    return 2 * math.pi ** (k / 2) / math.gamma(k / 2)


def comparison_bound(k: int, lip: float, M: float, beta: float, eps: float, l1_norm: float) -> float:
    """Right-hand side of the Lipschitz L1-comparison estimate."""
    if not 0 <= eps < 1:
        raise PreconditionError("need epsilon in [0, 1)")
    if eps == 0:
        return 0.0
    tail_part = 0.0
    if M > 0 and math.isfinite(lip):
        e = k + 1 + beta
        tail_part = (e * (2 * M / ((k + 1) * (1 - eps) ** (k + beta))) ** ((k + 1) / e)
                     * (lip * sphere_area(k) / (k + 1) / beta) ** (beta / e) * eps ** (beta / e))
    return tail_part + ((1 + eps) ** k - 1) / (1 - eps) ** k * l1_norm


def map_epsilon(psi: PsiMap) -> float:
    """``sup_z max(|psi^-1(z) - z|/|z|, ||D psi^-1(z) - Id||)`` from the branch endpoints."""
    r = psi.z0 * np.array([0.0, 1 - 1e-12, 1 + 1e-12])
    z = np.zeros((3, psi.k))
    z[:, 0] = r
    d = psi.distortion(z)
    return float(max(d.displacement.max(), d.operator_norm.max()))


def _panel_rule(breaks, width, nodes):
    x0, w0 = np.polynomial.legendre.leggauss(nodes)
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        m = max(1, int(math.ceil((b - a) / width)))
        e = np.linspace(a, b, m + 1)
        for lo, hi in zip(e[:-1], e[1:]):
            xs.append(0.5 * (hi - lo) * x0 + 0.5 * (hi + lo))
            ws.append(0.5 * (hi - lo) * w0)
    return np.concatenate(xs), np.concatenate(ws)


def _distortion_integral(g: TestFunction, psi: PsiMap | None, breaks, width, nodes, n_theta) -> float:
    r, w = _panel_rule(breaks, width, nodes)
    if g.k == 1:
        x = r[:, None]
    else:
        th = 2 * math.pi * np.arange(n_theta) / n_theta
        x = np.stack([np.outer(r, np.cos(th)), np.outer(r, np.sin(th))], axis=-1).reshape(-1, 2)
        w = np.repeat(w * r * 2 * math.pi / n_theta, n_theta)
    if psi is None:
        return 0.0
    gx = g.fn(x)
    gn = g.fn(psi.inverse(x)) * np.abs(psi.inverse_jacobian_det(x))
    return float(w @ np.abs(gx - gn))


def distortion_l1(g: TestFunction, psi: PsiMap | None, nodes: int = 16, width: float = 1 / 64,
                  n_theta: int = 64, epsilon: float | None = None) -> DistortionResult:
    """``||g - g(phi) |det D phi|||_{L1}`` with ``phi = psi^-1``, against the comparison bound.

    ``psi=None`` is the identity map.  ``epsilon`` defaults to the map's
    measured sup distortion.  Quadrature is Gauss-Legendre on panels aligned
    with the map's branch radius and the jumps of ``g`` (polar for ``k = 2``);
    the error is estimated by halving the node count.
    """
    if g.k not in (1, 2):
        raise PreconditionError("distortion quadrature supports k in {1, 2}")
    if psi is not None and psi.k != g.k:
        raise PreconditionError("map and test function dimensions differ")
    eps = 0.0 if psi is None else (map_epsilon(psi) if epsilon is None else float(epsilon))
    if eps >= 1:
        raise PreconditionError(f"map distortion {eps:g} is not below 1")
    L = g.radius / (1 - eps)
    pts = {0.0, L}
    if psi is not None:
        pts.add(psi.z0)
        for b in g.breaks:
            pts.update([abs(b), abs(float(psi.forward(np.array([b]))[0]))])
    if g.k == 1:
        pts.update(-p for p in list(pts))
    breaks = sorted(p for p in pts if -L <= p <= L)
    if g.k == 2:
        breaks = [p for p in breaks if p >= 0]
    full = _distortion_integral(g, psi, breaks, width, nodes, n_theta)
    half = _distortion_integral(g, psi, breaks, width, max(2, nodes // 2), n_theta)
    qerr = abs(full - half)
    if qerr > 0.05 * full + 1e-13 * g.l1_norm:
        raise QuadratureError(f"distortion quadrature unsettled: {full:.6g} vs {half:.6g}")
    bound = comparison_bound(g.k, g.lip, g.M, g.beta, eps, g.l1_norm) if math.isfinite(g.lip) else math.inf
    return DistortionResult(g.name, g.k, eps, full, bound, qerr, {"radius": L})


def nonlipschitz_exponent(r: float, k: int, beta: float) -> float:
    """``1 / (1 + r + (k+1)/beta)``, the rate in ``epsilon_N`` for ``ALip(r)`` functions."""
    return 1.0 / (1.0 + r + (k + 1) / beta)


def quantitative_epsilon(k: int, q: float, N: float) -> float:
    return c_kq(k, q) * N ** (-q)
