"""Estimators of the chaos functionals for rescaled product measures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize, special

from kacsphere import _rng, rates
from kacsphere.densities import LOG_SQRT_2PI, DensityModel, make_density, moment
from kacsphere.errors import (
    DegeneracyError,
    PreconditionError,
    QuadratureError,
    UnderflowError,
    UnsupportedError,
)
from kacsphere.estimates import EstimateWithError, IdentityCheck, mean_estimate
from kacsphere.rescaled import (
    MIN_ESS,
    ConditionedState,
    RescaledLaw,
    SphericalDensityKernel,
    angular_log_density_grad,
    conditioned_log_weights,
    gradient_audit,
    marginal1_terms,
    sample_mixing_variable,
    sample_rescaled_pair,
    sphere_marginal1_density,
)

MAX_EXCLUDED_FRACTION = 1e-3
BLOCK_ROWS = _rng.BLOCK


def _q_statistic(law: RescaledLaw, M: int, seed) -> np.ndarray:
    out = np.empty(M)
    for a, b, rng in _rng.blocks(_rng.child(seed, "q-statistic", law.N), M):
        out[a:b] = law.base.sample_sum_squares(rng, law.N, b - a) / law.N
    return out


# ---------------------------------------------------------------------------
# Wasserstein couplings


def w2_coupling_estimate(law: RescaledLaw, M: int, seed) -> EstimateWithError:
    """``E(sqrt(Q_N) - 1)^2 = (1/N) E|X - X_hat|^2``, an upper bound for ``(1/N) W_2^2``.

    Only ``Q_N`` enters, so it is drawn directly from the law of the sum of squares.
    """
    if not law.base.unit_energy:
        raise PreconditionError(f"w2 coupling needs a unit-energy base; {law.base.name} is not")
    q = _q_statistic(law, M, seed)
    return mean_estimate((np.sqrt(q) - 1.0) ** 2, seed=_rng.seed_repr(seed), method="coupling")


def w2_gaussian_closed_form(N: int) -> float:
    """``E(sqrt(Q_N) - 1)^2`` for standard Gaussian coordinates."""
    return 2.0 - 2.0 * math.sqrt(2.0 / N) * math.exp(special.gammaln((N + 1) / 2) - special.gammaln(N / 2))


def wr_coupling_estimate(law: RescaledLaw, r: float, M: int, seed) -> EstimateWithError:
    """``E[(1/N) sum_i |X_i|^r |1 - Q_N^{-1/2}|^r]``, an upper bound for ``(1/N) W_r^r``."""
    if r < 1:
        raise PreconditionError("r must be >= 1")
    if not law.base.moment_sup > r:
        raise PreconditionError(f"wr coupling with r = {r:g} needs more than r moments; "
                                f"{law.base.name} has moments only below {law.base.moment_sup:g}")
    vals = np.empty(M)
    for a, b, rng in _rng.blocks(_rng.child(seed, "wr", law.N), M):
        x = law.base.sample(rng, (b - a, law.N))
        q = np.einsum("ij,ij->i", x, x) / law.N
        vals[a:b] = np.mean(np.abs(x) ** r, axis=1) * np.abs(1.0 - q ** -0.5) ** r
    return mean_estimate(vals, seed=_rng.seed_repr(seed), method="coupling", r=r)


def w2_marginal_quantile(law: RescaledLaw, M: int, seed) -> EstimateWithError:
    """Empirical ``W_2^2`` between the first marginals of ``f^N`` and ``f_hat^N`` (k = 1 diagnostic).

    Both samples come from the same draws and are coupled by sorting, which is
    optimal in one dimension.  The value is biased upward by the empirical
    measures' own distance, so it only diagnoses, it does not estimate.  The SE
    comes from eight independent sub-samples.
    """
    x1, xh = np.empty(M), np.empty(M)
    for a, b, rng in _rng.blocks(_rng.child(seed, "w2-quantile", law.N), M):
        x1[a:b] = law.base.sample(rng, b - a)
        s = law.base.sample_sum_squares(rng, law.N - 1, b - a)
        xh[a:b] = math.sqrt(law.N) * x1[a:b] / np.sqrt(x1[a:b] ** 2 + s)
    value = float(np.mean((np.sort(x1) - np.sort(xh)) ** 2))
    parts = [float(np.mean((np.sort(u) - np.sort(v)) ** 2))
             for u, v in zip(np.array_split(x1, 8), np.array_split(xh, 8))]
    se = float(np.std(parts, ddof=1) / math.sqrt(8)) if M >= 16 else math.inf
    return EstimateWithError(value, se, M, _rng.seed_repr(seed), "quantile-coupling")


def q_deviation(law: RescaledLaw, M: int, seed) -> EstimateWithError:
    """``E|Q_N - 1|``; tends to 0 for unit-energy bases."""
    q = _q_statistic(law, M, seed)
    return mean_estimate(np.abs(q - 1.0), seed=_rng.seed_repr(seed))


def rescaled_coordinate_moment(law: RescaledLaw, p: float, M: int, seed, inner: int = 1) -> EstimateWithError:
    """``E|X_hat_1|^p`` with ``X_hat_1 = sqrt(N) X_1 / sqrt(X_1^2 + S)``.

    With ``inner > 1`` each draw of ``S = X_2^2 + ... + X_N^2`` is shared by
    ``inner`` independent draws of ``X_1``.  The estimator stays unbiased, the
    SE is computed from the independent group means, and ``M`` still counts
    draws of ``X_1``, whose tail drives the moment.
    """
    if inner < 1 or M % inner:
        raise PreconditionError("inner must be a positive divisor of M")
    groups = M // inner
    means = np.empty(groups)
    rows = max(1, BLOCK_ROWS // inner)
    for a, b, rng in _rng.blocks(_rng.child(seed, "coordinate-moment", law.N, inner), groups, rows):
        x1 = law.base.sample(rng, (b - a, inner))
        s = law.base.sample_sum_squares(rng, law.N - 1, b - a)[:, None]
        means[a:b] = (np.abs(math.sqrt(law.N) * x1 / np.sqrt(x1 * x1 + s)) ** p).mean(axis=1)
    est = mean_estimate(means, seed=_rng.seed_repr(seed), method="coordinate-monte-carlo", p=p, inner=inner)
    return EstimateWithError(est.value, est.stderr, M, est.seed, est.method, 0.0, est.extra)


# ---------------------------------------------------------------------------
# L1 distance of the one-particle marginal


def _z_grid(law: RescaledLaw, quad_nodes: int, width: float = 0.5, zcap: float = 40.0):
    L = min(math.sqrt(law.N), zcap)
    n_panels = max(2, int(math.ceil(2 * L / width)))
    edges = np.linspace(-L, L, n_panels + 1)
    x, w = np.polynomial.legendre.leggauss(quad_nodes)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    z = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wz = (half[:, None] * w[None, :]).ravel()
    return z, wz, L


def _outside_mass(base: DensityModel, L: float) -> float:
    return float(base.cdf(-L) + (1.0 - base.cdf(L)))


def l1_marginal_distance(law: RescaledLaw, M_mix: int, quad_nodes: int, seed) -> EstimateWithError:
    """``int |Pi_1 f_hat^N - f| dz`` with the first marginal mixed over ``S = sum_{i>=2} X_i^2``.

    The SE linearises ``|.|`` around the pointwise estimate: each mixing draw
    contributes ``sum_z w_z sign(m(z) - f(z)) g_S(z)``.  The quadrature error
    is the change when the rule is halved, evaluated on a common subset of draws.
    """
    S = sample_mixing_variable(law, M_mix, seed)
    z, wz, L = _z_grid(law, quad_nodes)
    fz = law.base.pdf(z)
    chunk = max(1, (1 << 22) // z.size)
    total = np.zeros(z.size)
    for a in range(0, M_mix, chunk):
        total += marginal1_terms(law, z, S[a:a + chunk]).sum(axis=0)
    m = total / M_mix
    sgn = np.sign(m - fz)
    lin = np.empty(M_mix)
    for a in range(0, M_mix, chunk):
        lin[a:a + chunk] = marginal1_terms(law, z, S[a:a + chunk]) @ (wz * sgn)
    tail = _outside_mass(law.base, L)
    value = float(np.sum(wz * np.abs(m - fz)) + tail)
    se = float(lin.std(ddof=1) / math.sqrt(M_mix)) if M_mix > 1 else math.inf

    sub = S[: min(M_mix, 20_000)]
    zh, wh, _ = _z_grid(law, max(2, quad_nodes // 2))
    full = np.sum(wz * np.abs(marginal1_terms(law, z, sub).mean(axis=0) - fz))
    halved = np.sum(wh * np.abs(marginal1_terms(law, zh, sub).mean(axis=0) - law.base.pdf(zh)))
    return EstimateWithError(value, se, samples=M_mix, seed=_rng.seed_repr(seed), method="mixture-quadrature",
                             quad_error=float(abs(full - halved)), extra={"outside_mass": tail})


def l1_sphere_marginal_vs_gamma(N: int) -> EstimateWithError:
    """Deterministic ``int |Pi_1 sigma^N - gamma|`` from the closed-form sphere marginal."""
    root = math.sqrt(N)

    def integrand(z):
        return abs(float(sphere_marginal1_density(N, z)) - math.exp(-0.5 * z * z - LOG_SQRT_2PI))

    # the two densities cross where the log-ratio vanishes; splitting there keeps QUADPACK smooth
    pts = {0.0, *_crossings(N)}
    edges = sorted({-root, root, *pts, *(-p for p in pts)})
    val = err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(integrand, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
        val += v
        err += e
    val += 2.0 * float(special.ndtr(-root))
    return EstimateWithError(val, 0.0, method="closed-form-quadrature", quad_error=err)


def _crossings(N: int) -> list[float]:
    root = math.sqrt(N)
    logc = special.gammaln(N / 2) - special.gammaln((N - 1) / 2) - 0.5 * math.log(N * math.pi)

    def g(z):
        return logc + 0.5 * (N - 3) * math.log1p(-z * z / N) + 0.5 * z * z + LOG_SQRT_2PI

    zs = np.linspace(0.0, root * (1 - 1e-9), 4000)
    vals = np.array([g(v) for v in zs])
    out = []
    for i in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
        out.append(optimize.brentq(g, zs[i], zs[i + 1], xtol=1e-14))
    return out


# ---------------------------------------------------------------------------
# entropy


class EntropyDecomposition(NamedTuple):
    per_particle: EstimateWithError
    gap: EstimateWithError
    plugin_entropy: EstimateWithError


def _log_h_samples(kernel: SphericalDensityKernel, M: int, seed):
    law = RescaledLaw(kernel.base, kernel.N)
    x, xh = sample_rescaled_pair(law, M, seed)
    out = kernel.evaluate(xh)
    bad = ~np.isfinite(out.log_h)
    if bad.mean() > MAX_EXCLUDED_FRACTION:
        raise UnderflowError(f"{int(bad.sum())} of {M} radial integrals underflowed at N = {kernel.N}")
    return x, xh, out, ~bad


def entropy_decomposition(kernel: SphericalDensityKernel, M: int, seed) -> EntropyDecomposition:
    """Per-particle entropy, entropy gap and plug-in ``H(f|gamma)`` on one common sample.

    By construction ``per_particle + gap == plugin_entropy`` up to round-off.
    """
    N = kernel.N
    x, _, out, keep = _log_h_samples(kernel, M, seed)
    log_ratio = (kernel.base.log_pdf(x) + 0.5 * x * x + LOG_SQRT_2PI).sum(axis=1)
    lh = out.log_h[keep] / N
    lr = log_ratio[keep] / N
    s = _rng.seed_repr(seed)
    excluded = int((~keep).sum())
    qe = out.quad_error / N
    per = mean_estimate(lh, seed=s, method="radial-quadrature-monte-carlo", excluded=excluded)
    gap = mean_estimate(lr - lh, seed=s, method="radial-quadrature-monte-carlo", excluded=excluded)
    plug = mean_estimate(lr, seed=s, method="plug-in", excluded=excluded)
    per = EstimateWithError(per.value, per.stderr, per.samples, s, per.method, qe, per.extra)
    gap = EstimateWithError(gap.value, gap.stderr, gap.samples, s, gap.method, qe, gap.extra)
    return EntropyDecomposition(per, gap, plug)


def entropy_per_particle(kernel: SphericalDensityKernel, M: int, seed) -> EstimateWithError:
    """``(1/N) H(f_hat^N | sigma^N) = (1/N) E[log h(X_hat)]``."""
    return entropy_decomposition(kernel, M, seed).per_particle


def entropy_gap(kernel: SphericalDensityKernel, M: int, seed) -> EstimateWithError:
    """``(1/N) H(f^{tensor N} | F_check^N)``, nonnegative, tending to 0."""
    return entropy_decomposition(kernel, M, seed).gap


# ---------------------------------------------------------------------------
# Fisher information


def fisher_per_particle(kernel: SphericalDensityKernel, M: int, seed, audit: bool = True) -> EstimateWithError:
    """``(1/N) E|grad_S log h(X_hat)|^2`` with analytic radial-integral gradients."""
    if not kernel.base.differentiable:
        raise UnsupportedError(f"Fisher information needs a differentiable base; {kernel.base.name} is not")
    law = RescaledLaw(kernel.base, kernel.N)
    _, xh = sample_rescaled_pair(law, M, seed)
    out = kernel.evaluate(xh, grad=True)
    keep = np.isfinite(out.log_h)
    if (~keep).mean() > MAX_EXCLUDED_FRACTION:
        raise UnderflowError(f"{int((~keep).sum())} of {M} radial integrals underflowed at N = {kernel.N}")
    info = gradient_audit(kernel, xh[keep], out.grad[keep], seed) if audit else {}
    gk = out.grad[keep]
    norms = np.linalg.norm(gk, axis=1)
    vals = norms**2 / kernel.N
    est = mean_estimate(vals, seed=_rng.seed_repr(seed), method="radial-gradient-monte-carlo", **info)
    # deterministic error of |g|^2 from the gradient error bound
    de = out.grad_error
    qe = float(np.mean(2 * norms * de + de * de) / kernel.N)
    return EstimateWithError(est.value, est.stderr, est.samples, est.seed, est.method, qe, est.extra)


def _n2_profile(base: DensityModel, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """``h(theta)``, ``h'(theta)`` for ``h(theta) = 2 pi int r f(r cos) f(r sin) dr``, all angles at once."""
    c, s = np.cos(theta), np.sin(theta)

    def integrand(r):
        fc, fs = base.pdf(r * c), base.pdf(r * s)
        dc, ds = base.pdf_derivative(r * c), base.pdf_derivative(r * s)
        return np.concatenate([r * fc * fs, r * r * (-s * dc * fs + c * fc * ds)])

    out, err = integrate.quad_vec(integrand, 0, np.inf, epsabs=1e-13, epsrel=1e-12, norm="max", limit=400)
    n = theta.size
    return 2 * math.pi * out[:n], 2 * math.pi * out[n:], 2 * math.pi * float(err)


def fisher_n2_exact(base, quad_nodes: int = 48) -> EstimateWithError:
    """Per-particle Fisher information ``(1/2) I(f_hat^2 | sigma^2)`` by pure quadrature.

    On the circle of radius sqrt(2) the arc-length derivative is ``(1/sqrt 2) d/dtheta``,
    so ``I = (1/4 pi) int_0^{2 pi} h'^2 / h dtheta``.  The angle integral is a
    Gauss-Legendre rule on each quadrant; its error is estimated by halving.
    """
    base = make_density(base)
    if not base.differentiable:
        raise UnsupportedError(f"Fisher information needs a differentiable base; {base.name} is not")

    def rule(n):
        x, w = np.polynomial.legendre.leggauss(n)
        theta = (np.arange(4)[:, None] * (math.pi / 2) + math.pi / 4 * (x + 1)).ravel()
        h, d, _ = _n2_profile(base, theta)
        if np.any(h <= 0):
            raise QuadratureError("N = 2 density vanished on the circle")
        return float(np.sum(np.tile(w, 4) * (math.pi / 4) * d * d / h) / (4 * math.pi))

    full = rule(quad_nodes)
    half = rule(max(2, quad_nodes // 2))
    return EstimateWithError(0.5 * full, 0.0, method="angle-quadrature", quad_error=0.5 * abs(full - half),
                             extra={"fisher_total": full})


def fisher_main_identity_check(base, N: int, M: int, seed, **kernel_opts) -> IdentityCheck:
    """Spherical Fisher information against ``(N-2)/N`` times that of the angular version.

    Both sides use the same draws ``X_hat`` and an independent Gaussian radius,
    so the paired discrepancy has a small SE.  ``extra['raw_ratio']`` is the
    ambient over spherical ratio, which should be ``N/(N-2)``.
    """
    if N < 3:
        raise PreconditionError("the angular-version identity needs N >= 3")
    base = make_density(base)
    kernel = SphericalDensityKernel(base, N, **kernel_opts)
    law = RescaledLaw(base, N)
    _, xh = sample_rescaled_pair(law, M, seed)
    radius = np.empty(M)
    for a, b, rng in _rng.blocks(_rng.child(seed, "angular-radius", N), M):
        radius[a:b] = np.sqrt(rng.chisquare(N, b - a))
    x = xh * (radius / math.sqrt(N))[:, None]
    gs = kernel.grad_log_density(xh)
    lhs = np.einsum("ij,ij->i", gs, gs)
    amb = angular_log_density_grad(kernel, x) + x
    amb2 = np.einsum("ij,ij->i", amb, amb)
    rhs = (N - 2) / N * amb2
    s = _rng.seed_repr(seed)
    e_l = mean_estimate(lhs, seed=s, method="spherical")
    e_r = mean_estimate(rhs, seed=s, method="angular-ambient")
    disc = mean_estimate(lhs - rhs, seed=s, method="paired-difference",
                         raw_ratio=float(amb2.mean() / lhs.mean()) if lhs.mean() > 0 else math.nan)
    return IdentityCheck(e_l, e_r, disc)


# ---------------------------------------------------------------------------
# tail probability


class TailCheck(NamedTuple):
    empirical: EstimateWithError
    bound: float
    delta_bar: float

    @property
    def ok(self) -> bool:
        return self.empirical.value <= self.bound + 3 * self.empirical.stderr


def tail_probability_check(base, N: int, k: int, q: float, M: int, seed, delta: float | None = None) -> TailCheck:
    """Frequency of ``|X_1^2 + ... + X_{N-k}^2 - N E X^2| > N^{1-q}`` against its moment bound."""
    base = make_density(base)
    if delta is None:
        delta = rates.default_delta(base.moment_sup)
    if not delta > 0:
        raise PreconditionError(f"{base.name} lacks a finite 2 + delta moment")
    dbar = min(2.0, delta)
    m2 = base.second_moment()
    n_min = rates.vonbahr_n_min(k, q, m2)
    if N <= k or N < n_min:
        raise PreconditionError(f"tail bound needs N >= max(2k, (2k E X^2)^(1/(1-q))) = {n_min:.4g}; got {N}")
    mom = moment(base, 2.0 + dbar)
    if not math.isfinite(mom.value):
        raise PreconditionError(f"{base.name} has no finite moment of order {2 + dbar:g}")
    hits = np.empty(M)
    for a, b, rng in _rng.blocks(_rng.child(seed, "tail", N, k), M):
        s = base.sample_sum_squares(rng, N - k, b - a)
        hits[a:b] = np.abs(s - N * m2) > N ** (1 - q)
    p = hits.mean()
    se = math.sqrt(max(p * (1 - p), 1.0 / M) / M)
    emp = EstimateWithError(float(p), se, samples=M, seed=_rng.seed_repr(seed), method="frequency")
    return TailCheck(emp, float(rates.vonbahr_bound(N, q, dbar, mom.value)), dbar)


# ---------------------------------------------------------------------------
# conditioned state


def conditioned_entropy_per_particle(state: ConditionedState, M: int, seed, bootstrap: int = 200) -> EstimateWithError:
    """``(1/N) H([f^{tensor N}]_N | sigma^N)`` by self-normalised importance sampling from ``sigma^N``.

    With ``l = sum_i log f(W_i)`` the target is ``(1/N)(E_w[l] - log Z)``;
    the SE comes from a nonparametric bootstrap over the draws.
    """
    ell = conditioned_log_weights(state, M, seed)

    # centring keeps round-off at the scale of the spread of ell, not its size
    ell = ell - ell.mean()

    def estimate(v):
        m = v.max()
        w = np.exp(v - m)
        log_z = m + math.log(w.mean())
        return (np.dot(w, v) / w.sum() - log_z) / state.N

    w = np.exp(ell - ell.max())
    ess = float(w.sum() ** 2 / np.sum(w * w))
    if ess < MIN_ESS:
        raise DegeneracyError(f"effective sample size {ess:.1f} < {MIN_ESS:g} at N = {state.N}")
    value = estimate(ell)
    rng = _rng.generator(seed, "conditioned-bootstrap", state.N)
    boots = np.array([estimate(ell[rng.integers(0, M, M)]) for _ in range(bootstrap)])
    floor = 16 * np.finfo(float).eps * (1.0 + float(np.abs(ell).max())) / state.N
    return EstimateWithError(float(value), float(boots.std(ddof=1)), samples=M, seed=_rng.seed_repr(seed),
                             method="importance-bootstrap", quad_error=floor,
                             extra={"ess": ess, "bootstrap": bootstrap})


# ---------------------------------------------------------------------------
# reports


@dataclass
class ChaosReport:
    metric: str
    base: str
    Ns: list
    estimates: list
    bound: list | None = None
    slope: object | None = None
    seed: object = None
    extra: dict = field(default_factory=dict)

    @property
    def violations(self) -> list[bool]:
        if self.bound is None:
            return [False] * len(self.Ns)
        return [e.value - 3 * e.error > b for e, b in zip(self.estimates, self.bound)]

    def to_records(self, study_id: str) -> list[dict]:
        """Rows in the harness result schema."""
        bounds = self.bound if self.bound is not None else [None] * len(self.Ns)
        return [{"study_id": study_id, "metric": self.metric, "N": int(n), "estimate": e.value, "stderr": e.error,
                 "method": e.method, "samples": e.samples, "seed": str(e.seed), "bound": b, "violation": v}
                for n, e, b, v in zip(self.Ns, self.estimates, bounds, self.violations)]
