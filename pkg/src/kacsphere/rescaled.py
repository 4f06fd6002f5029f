"""Rescaled product measures ``f_hat^N`` on Kac's sphere and their exact densities.

The density of ``f_hat^N`` with respect to the uniform law ``sigma^N`` is

    h(x) = |S^{N-1}(1)| * int_0^inf r^{N-1} F(r * x / sqrt(N)) dr,   F = f^{tensor N},

a one-dimensional radial integral per point.  For large ``N`` the integrand is
a sharp bump near ``r ~ sqrt(N)`` whose height under- or overflows double
precision, so everything is computed in log space around a Laplace centre.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from kacsphere import _rng
from kacsphere.densities import LOG_SQRT_2PI, STANDARD_GAUSSIAN, DensityModel, Gaussian, make_density
from kacsphere.errors import DegeneracyError, GradientCheckError, PreconditionError, UnsupportedError
from kacsphere.estimates import Ensemble, EstimateWithError, mean_estimate
from kacsphere.sphere import log_surface_area, project_tangent, rescale

CONDITIONED_CAP = 64
MIN_ESS = 100.0


@dataclass(frozen=True)
class RescaledLaw:
    base: DensityModel
    N: int

    def __post_init__(self):
        if self.N < 2:
            raise PreconditionError("N must be >= 2")
        object.__setattr__(self, "base", make_density(self.base))

    @property
    def name(self) -> str:
        return f"hat({self.base.name})^{self.N}"


def sample_product(law: RescaledLaw, M: int, seed, stream: str = "product") -> np.ndarray:
    """``M`` rows of ``f^{tensor N}``; rows that are exactly zero are redrawn."""
    if M < 1:
        raise PreconditionError("M must be >= 1")
    out = np.empty((M, law.N))
    for a, b, rng in _rng.blocks(_rng.child(seed, stream, law.N), M):
        x = law.base.sample(rng, (b - a, law.N))
        zero = ~np.any(x != 0.0, axis=1)
        while np.any(zero):
            warnings.warn("redrawing an all-zero configuration", RuntimeWarning, stacklevel=2)
            x[zero] = law.base.sample(rng, (int(zero.sum()), law.N))
            zero = ~np.any(x != 0.0, axis=1)
        out[a:b] = x
    return out


def sample_rescaled_pair(law: RescaledLaw, M: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """The coupling ``(X, X_hat)`` with ``X ~ f^{tensor N}``."""
    x = sample_product(law, M, seed)
    return x, rescale(x)


def sample_rescaled(law: RescaledLaw, M: int, seed) -> Ensemble:
    return Ensemble(sample_rescaled_pair(law, M, seed)[1], law.name, _rng.seed_repr(seed), rescaled=True)


def sample_angular(law: RescaledLaw, M: int, seed) -> np.ndarray:
    """Draws of the angular version: ``|Z| X_hat / sqrt(N)`` with ``Z`` standard Gaussian."""
    xh = sample_rescaled_pair(law, M, seed)[1]
    radius = np.empty(M)
    for a, b, rng in _rng.blocks(_rng.child(seed, "angular-radius", law.N), M):
        radius[a:b] = np.sqrt(rng.chisquare(law.N, b - a))
    return xh * (radius / math.sqrt(law.N))[:, None]


# ---------------------------------------------------------------------------
# density kernel


@dataclass
class KernelOutput:
    log_h: np.ndarray
    grad: np.ndarray | None
    quad_error: float
    underflow: int
    grad_error: float = 0.0


@dataclass(frozen=True)
class SphericalDensityKernel:
    """Log-density of ``f_hat^N`` with respect to ``sigma^N`` by radial quadrature.

    The radial maximiser ``r*`` is located by a coarse log-grid followed by
    golden-section search; the curvature there sets a width ``s`` and the
    integral is taken over ``r* +/- window * s`` with ``nodes`` Gauss-Legendre
    points.  Non-Gaussian bases with unbounded support get extra panels in
    ``log r`` on both sides for slowly decaying tails.
    """

    base: DensityModel
    N: int
    nodes: int = 256
    window: float = 12.0
    coarse: int = 24
    golden_iters: int = 24
    tail_nodes: int = 48
    audit_rows: int = 16

    def __post_init__(self):
        if self.N < 2:
            raise PreconditionError("N must be >= 2")
        object.__setattr__(self, "base", make_density(self.base))

    @property
    def log_area(self) -> float:
        return log_surface_area(self.N, 1.0)

    @property
    def _tails(self) -> bool:
        # only polynomially decaying bases need panels beyond the Laplace window
        return math.isfinite(self.base.moment_sup)

    # -- radial profile -----------------------------------------------------
    def _phi(self, omega, r):
        """``(N-1) log r + sum_i log f(r omega_i)`` for ``r`` of shape ``(M, K)``."""
        with np.errstate(divide="ignore"):
            return (self.N - 1) * np.log(r) + self.base.radial_log_sum(omega, r)

    def _centre(self, omega):
        M = omega.shape[0]
        rmax = self.base.radial_limit(omega) * (1.0 - 1e-12)
        t_lo = np.full(M, 0.5 * math.log(self.N) - 7.0)
        t_hi = np.minimum(0.5 * math.log(self.N) + 3.0, np.log(rmax))
        t_lo = np.minimum(t_lo, t_hi - 1.0)
        u = np.linspace(0.0, 1.0, self.coarse)
        tg = t_lo[:, None] + (t_hi - t_lo)[:, None] * u[None, :]
        vals = self._phi(omega, np.exp(tg))
        i = np.argmax(vals, axis=1)
        rows = np.arange(M)
        a = tg[rows, np.maximum(i - 1, 0)]
        b = tg[rows, np.minimum(i + 1, self.coarse - 1)]
        g = (math.sqrt(5.0) - 1.0) / 2.0
        c, d = b - g * (b - a), a + g * (b - a)
        fc = self._phi(omega, np.exp(c)[:, None])[:, 0]
        fd = self._phi(omega, np.exp(d)[:, None])[:, 0]
        for _ in range(self.golden_iters):
            left = fc >= fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            nc = np.where(left, b - g * (b - a), d)
            nd = np.where(left, c, a + g * (b - a))
            fnew = self._phi(omega, np.exp(np.where(left, nc, nd))[:, None])[:, 0]
            fc, fd = np.where(left, fnew, fd), np.where(left, fc, fnew)
            c, d = nc, nd
        rstar = np.exp(0.5 * (a + b))
        h = 1e-3 * rstar
        trip = np.stack([rstar - h, rstar, np.minimum(rstar + h, rmax)], axis=1)
        pv = self._phi(omega, trip)
        curv = (pv[:, 0] - 2 * pv[:, 1] + pv[:, 2]) / h**2
        ok = np.isfinite(curv) & (curv < 0) & (trip[:, 2] == rstar + h)
        s = np.where(ok, 1.0 / np.sqrt(np.where(ok, -curv, 1.0)), rstar / math.sqrt(max(self.N - 1, 1)))
        r_lo = np.maximum(rstar - self.window * s, 0.0)
        r_hi = np.minimum(rstar + self.window * s, rmax)
        return r_lo, r_hi

    def _grid(self, r_lo, r_hi, nodes):
        """Nodes ``r`` and log-weights (including Jacobians) of the composite rule."""
        x, w = np.polynomial.legendre.leggauss(nodes)
        half = 0.5 * (r_hi - r_lo)[:, None]
        r = 0.5 * (r_hi + r_lo)[:, None] + half * x[None, :]
        with np.errstate(divide="ignore"):
            lw = np.log(half) + np.log(w)[None, :]
        parts_r, parts_w = [r], [lw]
        if self._tails and self.tail_nodes:
            xt, wt = np.polynomial.legendre.leggauss(self.tail_nodes)
            span = 6.0
            # upper panel on [log r_hi, log r_hi + span], dr = r dt
            t = np.log(r_hi)[:, None] + 0.5 * span * (xt[None, :] + 1.0)
            parts_r.append(np.exp(t))
            parts_w.append(math.log(0.5 * span) + np.log(wt)[None, :] + t)
            # lower panel on [log r_lo - span, log r_lo] when the window stops short of 0
            lo_ok = r_lo > 0
            tl = np.log(np.where(lo_ok, r_lo, 1.0))[:, None] + 0.5 * span * (xt[None, :] - 1.0)
            parts_r.append(np.exp(tl))
            lwl = math.log(0.5 * span) + np.log(wt)[None, :] + tl
            parts_w.append(np.where(lo_ok[:, None], lwl, -np.inf))
        return np.concatenate(parts_r, axis=1), np.concatenate(parts_w, axis=1)

    def _integrate(self, omega, r_lo, r_hi, nodes, want_grad):
        r, lw = self._grid(r_lo, r_hi, nodes)
        with np.errstate(invalid="ignore"):
            logint = self._phi(omega, r) + lw
        logint = np.where(np.isnan(logint), -np.inf, logint)
        total = special.logsumexp(logint, axis=1)
        grad = None
        if want_grad:
            finite = np.isfinite(total)
            w = np.where(finite[:, None], np.exp(logint - np.where(finite, total, 0.0)[:, None]), 0.0)
            grad = self.base.radial_score_sum(omega, r, w) / math.sqrt(self.N)
        return total, grad

    def evaluate(self, x, grad: bool = False, chunk: int | None = None) -> KernelOutput:
        """Log-density (and optionally its tangential gradient) at rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.N:
            raise ValueError(f"points must have {self.N} coordinates")
        if grad and not self.base.differentiable:
            raise UnsupportedError(f"gradient needs a differentiable base; {self.base.name} is not")
        omega = x / np.linalg.norm(x, axis=1, keepdims=True)
        M = x.shape[0]
        if chunk is None:
            width = self.nodes + self.coarse + 2 * self.tail_nodes
            chunk = M if isinstance(self.base, Gaussian) else max(1, (1 << 23) // (width * self.N))
        log_h = np.empty(M)
        g = np.empty((M, self.N)) if grad else None
        for a in range(0, M, chunk):
            om = omega[a:a + chunk]
            r_lo, r_hi = self._centre(om)
            tot, gr = self._integrate(om, r_lo, r_hi, self.nodes, grad)
            log_h[a:a + chunk] = tot
            if grad:
                g[a:a + chunk] = gr
        n = min(self.audit_rows, M)
        qerr = gerr = 0.0
        y = x * (math.sqrt(self.N) / np.linalg.norm(x, axis=1, keepdims=True))
        if grad:
            g_amb = g
            g = project_tangent(g, y)
        if n:
            r_lo, r_hi = self._centre(omega[:n])
            coarse, gc = self._integrate(omega[:n], r_lo, r_hi, self.nodes // 2, grad)
            diff = np.abs(coarse - log_h[:n])
            diff = diff[np.isfinite(diff)]
            qerr = float(diff.max()) if diff.size else 0.0
            if grad:
                dg = np.linalg.norm(project_tangent(gc, y[:n]) - g[:n], axis=1)
                # the projection cancels the radial part, leaving round-off of that size
                floor = 16 * np.finfo(float).eps * np.linalg.norm(g_amb[:n], axis=1) * math.sqrt(self.N)
                dg = np.maximum(dg, floor)
                dg = dg[np.isfinite(dg)]
                gerr = float(dg.max()) if dg.size else 0.0
        log_h = log_h + self.log_area
        return KernelOutput(log_h, g, qerr, int(np.sum(np.isneginf(log_h))), gerr)

    def log_density(self, x) -> np.ndarray:
        return self.evaluate(x).log_h

    def grad_log_density(self, x) -> np.ndarray:
        return self.evaluate(x, grad=True).grad


def density_wrt_sigma(kernel: SphericalDensityKernel, x) -> np.ndarray | float:
    """``log h(x)``; ``-inf`` flags radial underflow."""
    x = np.asarray(x, dtype=float)
    out = kernel.log_density(x)
    return float(out[0]) if x.ndim == 1 else out


def gradient_audit(kernel: SphericalDensityKernel, x: np.ndarray, grad: np.ndarray, seed,
                   fraction: float = 0.01, cap: int = 200, tol: float = 1e-4) -> dict:
    """Compare analytic tangential gradients with central differences along random tangents."""
    M = x.shape[0]
    n = min(cap, max(1, int(math.ceil(fraction * M))))
    rng = _rng.generator(seed, "gradient-audit", kernel.N)
    idx = rng.choice(M, size=n, replace=False)
    v = project_tangent(rng.standard_normal((n, kernel.N)), x[idx])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    h = 1e-5 * math.sqrt(kernel.N)
    plus = kernel.log_density(rescale(x[idx] + h * v))
    minus = kernel.log_density(rescale(x[idx] - h * v))
    fd = (plus - minus) / (2 * h)
    an = np.einsum("ij,ij->i", grad[idx], v)
    err = np.abs(fd - an) / np.maximum(1.0, np.abs(an))
    worst = float(err.max())
    if worst > tol:
        i = int(np.argmax(err))
        raise GradientCheckError(f"tangential gradient mismatch {worst:.3e} at sample {int(idx[i])}: "
                                 f"analytic {an[i]:.10g}, finite-difference {fd[i]:.10g}")
    return {"audited": n, "max_rel_error": worst}


# ---------------------------------------------------------------------------
# angular version


def angular_density(kernel: SphericalDensityKernel, x) -> np.ndarray | float:
    """``log F_check(x) = log gamma^{tensor N}(x) + log h(x_hat)``."""
    x = np.asarray(x, dtype=float)
    xx = np.atleast_2d(x)
    xh = rescale(xx)
    lg = -0.5 * np.einsum("ij,ij->i", xx, xx) - kernel.N * LOG_SQRT_2PI
    out = lg + kernel.log_density(xh)
    return float(out[0]) if x.ndim == 1 else out


def angular_log_density_grad(kernel: SphericalDensityKernel, x) -> np.ndarray:
    """Ambient gradient of ``log F_check``: ``-x + (sqrt(N)/|x|) grad_S log h(x_hat)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    gs = kernel.grad_log_density(rescale(x))
    return -x + (math.sqrt(kernel.N) / norm) * gs


# ---------------------------------------------------------------------------
# one-particle marginal


def sphere_marginal1_density(N: int, z) -> np.ndarray:
    """Closed-form first marginal of the uniform law on Kac's sphere."""
    z = np.asarray(z, dtype=float)
    logc = special.gammaln(N / 2) - special.gammaln((N - 1) / 2) - 0.5 * math.log(N * math.pi)
    inside = np.abs(z) < math.sqrt(N)
    u = np.where(inside, 1.0 - z * z / N, 1.0)
    return np.where(inside, np.exp(logc + 0.5 * (N - 3) * np.log(u)), 0.0)


def sample_mixing_variable(law: RescaledLaw, M_mix: int, seed, k: int = 1) -> np.ndarray:
    """Draws of ``S = X_{k+1}^2 + ... + X_N^2``."""
    out = np.empty(M_mix)
    for a, b, rng in _rng.blocks(_rng.child(seed, "mixing", law.N, k), M_mix):
        out[a:b] = law.base.sample_sum_squares(rng, law.N - k, b - a)
    return out


def marginal1_terms(law: RescaledLaw, z: np.ndarray, S: np.ndarray) -> np.ndarray:
    """``f(sqrt(S) z / sqrt(N - z^2)) sqrt(S) N (N - z^2)^{-3/2}`` with shape ``(len(S), len(z))``."""
    N = law.N
    z = np.asarray(z, dtype=float)
    inside = np.abs(z) < math.sqrt(N)
    d = np.where(inside, N - z * z, 1.0)
    rs = np.sqrt(S)[:, None]
    vals = law.base.pdf(rs * (z / np.sqrt(d))[None, :]) * rs * (N / d**1.5)[None, :]
    return np.where(inside[None, :], vals, 0.0)


def _marginal1_chi2(law: RescaledLaw, z: np.ndarray, nodes: int = 128) -> list[EstimateWithError]:
    """Gaussian base: ``S`` is chi-square with ``N - 1`` degrees; integrate over its quantiles."""

    def rule(n):
        u, w = np.polynomial.legendre.leggauss(n)
        s = stats.chi2.ppf(0.5 * (u + 1), law.N - 1)
        return 0.5 * w @ marginal1_terms(law, z, s)

    full, half = rule(nodes), rule(nodes // 2)
    return [EstimateWithError(float(v), 0.0, method="chi-square-quadrature", quad_error=float(abs(v - h)))
            for v, h in zip(full, half)]


def marginal1_density(law: RescaledLaw, z, M_mix: int, seed) -> EstimateWithError | list[EstimateWithError]:
    """Monte Carlo over ``S`` of the exact conditional change of variables."""
    scalar = np.ndim(z) == 0
    zz = np.atleast_1d(np.asarray(z, dtype=float))
    if law.base == STANDARD_GAUSSIAN:
        out = _marginal1_chi2(law, zz)
        return out[0] if scalar else out
    S = sample_mixing_variable(law, M_mix, seed)
    terms = marginal1_terms(law, zz, S)
    out = [mean_estimate(terms[:, j], seed=_rng.seed_repr(seed), method="mixture-monte-carlo")
           for j in range(zz.size)]
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# conditioned state


@dataclass(frozen=True)
class ConditionedState:
    """``f^{tensor N}`` restricted to Kac's sphere and renormalised."""

    base: DensityModel
    N: int
    cap: int = CONDITIONED_CAP
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "base", make_density(self.base))
        if self.N < 2:
            raise PreconditionError("N must be >= 2")
        if self.N > self.cap:
            raise PreconditionError(f"conditioned state capped at N = {self.cap} (got {self.N})")


def conditioned_log_weights(state: ConditionedState, M: int, seed) -> np.ndarray:
    """``sum_i log f(W_i)`` for ``W ~ sigma^N``."""
    out = np.empty(M)
    n = state.N
    for a, b, rng in _rng.blocks(_rng.child(seed, "conditioned", n), M):
        w = rescale(rng.standard_normal((b - a, n)))
        out[a:b] = state.base.log_pdf(w).sum(axis=1)
    return out


def _ess(logw: np.ndarray) -> float:
    w = np.exp(logw - logw.max())
    return float(w.sum() ** 2 / np.sum(w * w))


def conditioned_log_normalizer(state: ConditionedState, M: int, seed) -> EstimateWithError:
    """``log E_sigma[f^{tensor N}(W)]`` by log-mean-exp; SE by the delta method."""
    logw = conditioned_log_weights(state, M, seed)
    ess = _ess(logw)
    if ess < MIN_ESS:
        raise DegeneracyError(f"effective sample size {ess:.1f} < {MIN_ESS:g} at N = {state.N}")
    m = logw.max()
    w = np.exp(logw - m)
    mean = w.mean()
    se = float(w.std(ddof=1) / math.sqrt(M) / mean)
    return EstimateWithError(float(m + math.log(mean)), se, samples=M, seed=_rng.seed_repr(seed),
                             method="importance-log-mean-exp", extra={"ess": ess})
