"""Catalog of one-dimensional reference densities.

Every member exposes pdf / log-pdf / derivative / score, an exact sampler that
takes an explicit :class:`numpy.random.Generator`, and the functionals needed
downstream: absolute moments, relative entropy ``H(f|gamma)`` and relative
Fisher information ``I(f|gamma)`` with respect to the standard Gaussian.

The radial hooks :meth:`DensityModel.radial_log_sum` and
:meth:`DensityModel.radial_score_sum` evaluate sums over coordinates along
rays ``r * omega``; they are what the spherical density kernel spends its time
in, so Gaussian members override them with closed forms that cost O(N) per
ray instead of O(N * nodes).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate, special, stats

from kacsphere import _rng
from kacsphere.errors import QuadratureError, UnsupportedError
from kacsphere.estimates import EstimateWithError, mean_estimate

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
QUAD_ABS_TOL = 1e-10


class DensityModel:
    """Base class; subclasses are immutable dataclasses."""

    name: str = "density"
    catalog_key: str = ""
    differentiable: bool = True
    #: moments of order p are finite iff p < moment_sup
    moment_sup: float = math.inf

    # -- pointwise ----------------------------------------------------------
    def pdf(self, x):
        return np.exp(self.log_pdf(x))

    def log_pdf(self, x):
        raise NotImplementedError

    def score(self, x):
        """d/dx log f(x)."""
        raise NotImplementedError

    def pdf_derivative(self, x):
        if not self.differentiable:
            raise UnsupportedError(f"{self.name} is not differentiable")
        x = np.asarray(x, dtype=float)
        return self.pdf(x) * self.score(x)

    def cdf(self, x):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size):
        raise NotImplementedError

    def sample_sum_squares(self, rng: np.random.Generator, n_terms: int, size: int) -> np.ndarray:
        """``size`` independent draws of ``X_1^2 + ... + X_n^2``."""
        out = np.zeros(size)
        rows = max(1, (1 << 20) // max(n_terms, 1))
        for a in range(0, size, rows):
            b = min(size, a + rows)
            x = self.sample(rng, (b - a, n_terms))
            out[a:b] = np.einsum("ij,ij->i", x, x)
        return out

    # -- metadata -----------------------------------------------------------
    @property
    def support(self) -> tuple[float, float]:
        return (-math.inf, math.inf)

    @property
    def kinks(self) -> tuple[float, ...]:
        return ()

    @property
    def unit_energy(self) -> bool:
        return abs(self.second_moment() - 1.0) < 1e-9

    @property
    def bounded(self) -> bool:
        return True

    def second_moment(self) -> float:
        return moment(self, 2.0).value

    def params(self) -> dict:
        return {}

    def spec(self) -> dict:
        """Config form accepted by :func:`make_density`."""
        return {"name": self.catalog_key, "params": self.params()}

    # -- closed forms (None when unavailable) ------------------------------
    def _moment_closed(self, p: float) -> float | None:
        return None

    def _rel_entropy_closed(self) -> float | None:
        return None

    def _rel_fisher_closed(self) -> float | None:
        return None

    # -- radial hooks -------------------------------------------------------
    def radial_log_sum(self, omega: np.ndarray, r: np.ndarray) -> np.ndarray:
        """``sum_i log f(r[m, k] * omega[m, i])`` with shape ``(M, K)``."""
        x = r[:, :, None] * omega[:, None, :]
        return self.log_pdf(x).sum(axis=2)

    def radial_score_sum(self, omega: np.ndarray, r: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``sum_k w[m, k] r[m, k] s(r[m, k] omega[m, j])`` with shape ``(M, N)``."""
        x = r[:, :, None] * omega[:, None, :]
        return np.einsum("mk,mkj->mj", w * r, self.score(x))

    def radial_limit(self, omega: np.ndarray) -> np.ndarray:
        """Largest ``r`` with ``r * omega`` inside the support (``inf`` if unbounded)."""
        lo, hi = self.support
        out = np.full(omega.shape[0], math.inf)
        if math.isinf(lo) and math.isinf(hi):
            return out
        with np.errstate(divide="ignore"):
            pos = np.where(omega > 0, hi / np.where(omega > 0, omega, 1.0), math.inf)
            neg = np.where(omega < 0, lo / np.where(omega < 0, omega, -1.0), math.inf)
        return np.minimum(out, np.minimum(pos.min(axis=1), neg.min(axis=1)))


@dataclass(frozen=True)
class Gaussian(DensityModel):
    catalog_key = "gaussian"
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def name(self) -> str:
        if self.mu == 0.0 and self.sigma == 1.0:
            return "gamma"
        return f"gaussian(mu={self.mu:g},sigma={self.sigma:g})"

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}

    def log_pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - LOG_SQRT_2PI

    def score(self, x):
        return -(np.asarray(x, dtype=float) - self.mu) / self.sigma**2

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def sample(self, rng, size):
        return self.mu + self.sigma * rng.standard_normal(size)

    def second_moment(self):
        return self.mu**2 + self.sigma**2

    def sample_sum_squares(self, rng, n_terms, size):
        if self.mu == 0.0:
            return self.sigma**2 * rng.chisquare(n_terms, size)
        lam = n_terms * (self.mu / self.sigma) ** 2
        return self.sigma**2 * rng.noncentral_chisquare(n_terms, lam, size)

    def _moment_closed(self, p):
        if self.mu != 0.0:
            return None
        return self.sigma**p * 2 ** (p / 2) * math.exp(special.gammaln((p + 1) / 2)) / math.sqrt(math.pi)

    def _rel_entropy_closed(self):
        return 0.5 * (self.sigma**2 + self.mu**2 - 1.0) - math.log(self.sigma)

    def _rel_fisher_closed(self):
        return (1.0 - 1.0 / self.sigma**2) ** 2 * self.sigma**2 + self.mu**2

    def radial_log_sum(self, omega, r):
        n = omega.shape[1]
        s1 = omega.sum(axis=1)[:, None]
        s2 = np.einsum("ij,ij->i", omega, omega)[:, None]
        quad = r * r * s2 - 2.0 * self.mu * r * s1 + n * self.mu**2
        return -quad / (2.0 * self.sigma**2) - n * (math.log(self.sigma) + LOG_SQRT_2PI)

    def radial_score_sum(self, omega, r, w):
        m2 = (w * r * r).sum(axis=1)[:, None]
        m1 = (w * r).sum(axis=1)[:, None]
        return -(omega * m2 - self.mu * m1) / self.sigma**2


@dataclass(frozen=True)
class GaussianMixture(DensityModel):
    catalog_key = "mixture"
    weights: tuple = (0.5, 0.5)
    means: tuple = (-0.6, 0.6)
    sigmas: tuple = (0.8, 0.8)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not (len(self.weights) == len(self.means) == len(self.sigmas)):
            raise ValueError("weights, means and sigmas must have equal length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(np.asarray(self.sigmas) <= 0):
            raise ValueError("sigmas must be positive")

    @classmethod
    def symmetric(cls, mu: float = 0.6, sigma: float = 0.8) -> GaussianMixture:
        return cls((0.5, 0.5), (-mu, mu), (sigma, sigma))

    @property
    def name(self) -> str:
        if len(self.weights) == 2 and self.weights[0] == self.weights[1] and self.means[0] == -self.means[1] \
                and self.sigmas[0] == self.sigmas[1]:
            return f"mixture(mu={self.means[1]:g},sigma={self.sigmas[0]:g})"
        return "mixture(" + ",".join(f"{w:g}:{m:g}:{s:g}" for w, m, s in
                                     zip(self.weights, self.means, self.sigmas)) + ")"

    def params(self):
        return {"weights": list(self.weights), "means": list(self.means), "sigmas": list(self.sigmas)}

    def _components(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        mu = np.asarray(self.means)
        sd = np.asarray(self.sigmas)
        z = (x - mu) / sd
        logc = np.log(self.weights) - 0.5 * z * z - np.log(sd) - LOG_SQRT_2PI
        return x, mu, sd, logc

    def log_pdf(self, x):
        _, _, _, logc = self._components(x)
        return special.logsumexp(logc, axis=-1)

    def score(self, x):
        x, mu, sd, logc = self._components(x)
        resp = special.softmax(logc, axis=-1)
        return (resp * (-(x - mu) / sd**2)).sum(axis=-1)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return (np.asarray(self.weights) * special.ndtr((x - np.asarray(self.means)) / np.asarray(self.sigmas))).sum(-1)

    def sample(self, rng, size):
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        return np.asarray(self.means)[comp] + np.asarray(self.sigmas)[comp] * rng.standard_normal(size)

    def second_moment(self):
        return float(sum(w * (m * m + s * s) for w, m, s in zip(self.weights, self.means, self.sigmas)))

    @property
    def is_symmetric_pair(self) -> bool:
        return len(self.weights) == 2 and self.weights[0] == self.weights[1] \
            and self.means[0] == -self.means[1] and self.sigmas[0] == self.sigmas[1]

    # For 1/2 N(-m, s^2) + 1/2 N(m, s^2):
    #   log f(x) = -(x^2 + m^2) / (2 s^2) + log cosh(m x / s^2) - log(s sqrt(2 pi))
    #   score(x) = -x / s^2 + (m / s^2) tanh(m x / s^2)
    def radial_log_sum(self, omega, r):
        if not self.is_symmetric_pair:
            return super().radial_log_sum(omega, r)
        m, sd = self.means[1], self.sigmas[0]
        n = omega.shape[1]
        s2 = np.einsum("ij,ij->i", omega, omega)[:, None]
        out = -(r * r * s2 + n * m * m) / (2 * sd * sd) - n * (math.log(sd) + LOG_SQRT_2PI)
        if m == 0.0:
            return out
        c = m / (sd * sd)
        rows = max(1, (1 << 22) // max(r.shape[1] * n, 1))
        lc = np.empty_like(r)
        for a in range(0, r.shape[0], rows):
            y = np.abs(c * r[a:a + rows, :, None] * omega[a:a + rows, None, :])
            lc[a:a + rows] = (y + np.log1p(np.exp(-2.0 * y))).sum(axis=2)
        return out + lc - n * math.log(2.0)

    def radial_score_sum(self, omega, r, w):
        if not self.is_symmetric_pair:
            return super().radial_score_sum(omega, r, w)
        m, sd = self.means[1], self.sigmas[0]
        c = m / (sd * sd)
        out = -omega * (w * r * r).sum(axis=1)[:, None] / (sd * sd)
        if m == 0.0:
            return out
        wr = w * r
        rows = max(1, (1 << 22) // max(r.shape[1] * omega.shape[1], 1))
        for a in range(0, r.shape[0], rows):
            t = np.tanh(c * r[a:a + rows, :, None] * omega[a:a + rows, None, :])
            out[a:a + rows] += c * np.einsum("mk,mkj->mj", wr[a:a + rows], t)
        return out


@dataclass(frozen=True)
class StudentT(DensityModel):
    """Student-t with ``nu`` degrees of freedom, rescaled to unit variance."""
    catalog_key = "student_t"

    nu: float = 5.0

    def __post_init__(self):
        if not self.nu > 2:
            raise ValueError("unit-variance rescaling needs nu > 2")

    @property
    def name(self) -> str:
        return f"student_t(nu={self.nu:g})"

    @property
    def moment_sup(self) -> float:
        return float(self.nu)

    @property
    def scale(self) -> float:
        return math.sqrt((self.nu - 2.0) / self.nu)

    def params(self):
        return {"nu": self.nu}

    @property
    def _log_norm(self) -> float:
        nu = self.nu
        return special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log(nu * math.pi) \
            - math.log(self.scale)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        return self._log_norm - 0.5 * (self.nu + 1.0) * np.log1p(x * x / (self.nu * self.scale**2))

    def score(self, x):
        x = np.asarray(x, dtype=float)
        return -(self.nu + 1.0) * x / (self.nu * self.scale**2 + x * x)

    def cdf(self, x):
        return stats.t.cdf(np.asarray(x, dtype=float) / self.scale, self.nu)

    def sample(self, rng, size):
        return self.scale * rng.standard_t(self.nu, size)

    def second_moment(self):
        return 1.0

    def _moment_closed(self, p):
        if p >= self.nu:
            return math.inf
        log_t = (p / 2) * math.log(self.nu) + special.gammaln((p + 1) / 2) + special.gammaln((self.nu - p) / 2) \
            - 0.5 * math.log(math.pi) - special.gammaln(self.nu / 2)
        return self.scale**p * math.exp(log_t)

    def _rel_entropy_closed(self):
        h = float(stats.t.entropy(self.nu)) + math.log(self.scale)
        return -h + 0.5 + LOG_SQRT_2PI


@dataclass(frozen=True)
class Uniform(DensityModel):
    """Uniform on ``[-a, a]``; ``a = sqrt(3)`` gives unit energy.  Bounded, with jumps."""
    catalog_key = "uniform"

    half_width: float = math.sqrt(3.0)
    differentiable = False

    @property
    def name(self) -> str:
        return f"uniform(a={self.half_width:.6g})"

    def params(self):
        return {"half_width": self.half_width}

    @property
    def support(self):
        return (-self.half_width, self.half_width)

    @property
    def kinks(self):
        return (-self.half_width, self.half_width)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= self.half_width
        return np.where(inside, -math.log(2.0 * self.half_width), -np.inf)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) <= self.half_width, 0.5 / self.half_width, 0.0)

    def score(self, x):
        raise UnsupportedError(f"{self.name} has no derivative at its jumps")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.clip((x + self.half_width) / (2.0 * self.half_width), 0.0, 1.0)

    def sample(self, rng, size):
        return rng.uniform(-self.half_width, self.half_width, size)

    def second_moment(self):
        return self.half_width**2 / 3.0

    def _moment_closed(self, p):
        return self.half_width**p / (p + 1.0)

    def _rel_entropy_closed(self):
        return -math.log(2.0 * self.half_width) + 0.5 * self.second_moment() + LOG_SQRT_2PI


# ---------------------------------------------------------------------------
# catalog

STANDARD_GAUSSIAN = Gaussian()

CATALOG = {
    "gamma": lambda **kw: Gaussian(),
    "gaussian": lambda mu=0.6, sigma=0.8: Gaussian(mu, sigma),
    "mixture": lambda mu=0.6, sigma=0.8, weights=None, means=None, sigmas=None: (
        GaussianMixture(tuple(weights), tuple(means), tuple(sigmas)) if weights is not None
        else GaussianMixture.symmetric(mu, sigma)),
    "student_t": lambda nu=5.0: StudentT(nu),
    "uniform": lambda half_width=math.sqrt(3.0): Uniform(half_width),
}

DESCRIPTIONS = {
    "gamma": "standard Gaussian N(0,1)",
    "gaussian": "N(mu, sigma^2); unit energy when mu^2 + sigma^2 = 1 (default mu=0.6, sigma=0.8)",
    "mixture": "symmetric two-component mixture 1/2 N(-mu,sigma^2) + 1/2 N(mu,sigma^2) (default 0.6, 0.8)",
    "student_t": "Student-t(nu) rescaled to unit variance; moments finite for p < nu",
    "uniform": "uniform on [-a, a] (default a = sqrt 3, unit energy); has jumps",
}


def make_density(spec) -> DensityModel:
    """Build a catalog member from ``"name"`` or ``{"name": ..., "params": {...}}``."""
    if isinstance(spec, DensityModel):
        return spec
    if isinstance(spec, str):
        name, params = spec, {}
    else:
        name, params = spec["name"], dict(spec.get("params") or {})
    if name not in CATALOG:
        raise ValueError(f"unknown density {name!r}; known: {sorted(CATALOG)}")
    return CATALOG[name](**params)


def list_densities() -> list[tuple[str, DensityModel, str]]:
    return [(name, make_density(name), DESCRIPTIONS[name]) for name in CATALOG]


# ---------------------------------------------------------------------------
# pointwise evaluation


class Evaluation(NamedTuple):
    pdf: float
    log_pdf: float
    derivative: float
    derivative_defined: bool


def evaluate(model: DensityModel, x: float) -> Evaluation:
    """(pdf, log pdf, derivative) at a finite point; derivative is NaN where undefined."""
    if not math.isfinite(x):
        raise ValueError("x must be finite")
    pdf = float(model.pdf(x))
    lp = float(model.log_pdf(x))
    defined = model.differentiable and not any(x == k for k in model.kinks)
    if model.differentiable:
        deriv = float(model.pdf_derivative(x))
    elif defined or x not in model.kinks:
        # piecewise-constant members: zero slope away from jumps
        deriv = 0.0
        defined = True
    else:
        deriv = math.nan
    return Evaluation(pdf, lp, deriv, defined)


# ---------------------------------------------------------------------------
# functionals


def _intervals(model: DensityModel):
    lo, hi = model.support
    cuts = sorted({c for c in (*model.kinks, 0.0) if lo < c < hi})
    edges = [lo, *cuts, hi]
    return list(zip(edges[:-1], edges[1:]))


def _quad(model: DensityModel, integrand, what: str) -> tuple[float, float]:
    total = 0.0
    err = 0.0
    for a, b in _intervals(model):
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, e = integrate.quad(integrand, a, b, epsabs=QUAD_ABS_TOL, epsrel=1e-10, limit=400)
            except integrate.IntegrationWarning as exc:
                raise QuadratureError(f"{what} of {model.name} on ({a}, {b}): {exc}") from None
        if not math.isfinite(val):
            raise QuadratureError(f"{what} of {model.name} diverged on ({a}, {b})")
        total += val
        err += e
    return total, err


def moment(model: DensityModel, p: float) -> EstimateWithError:
    """``int |x|^p f(dx)``; ``+inf`` (flagged, not raised) when the tail makes it diverge."""
    if p < 0:
        raise ValueError("p must be >= 0")
    if p >= model.moment_sup:
        return EstimateWithError(math.inf, 0.0, method="divergent", extra={"divergent": True})
    closed = model._moment_closed(p)
    if closed is not None:
        return EstimateWithError(float(closed), 0.0, method="closed-form")
    val, err = _quad(model, lambda x: abs(x) ** p * float(model.pdf(x)), f"moment {p}")
    return EstimateWithError(val, 0.0, method="adaptive-quadrature", quad_error=err)


def rel_entropy_gaussian(model: DensityModel) -> EstimateWithError:
    """``H(f|gamma) = int f log(f/gamma)``."""
    closed = model._rel_entropy_closed()
    if closed is not None:
        return EstimateWithError(float(closed), 0.0, method="closed-form")

    def integrand(x):
        lf = float(model.log_pdf(x))
        if lf == -math.inf:
            return 0.0
        return math.exp(lf) * (lf + 0.5 * x * x + LOG_SQRT_2PI)

    val, err = _quad(model, integrand, "relative entropy")
    return EstimateWithError(max(val, 0.0), 0.0, method="adaptive-quadrature", quad_error=err)


def rel_fisher_gaussian(model: DensityModel) -> EstimateWithError:
    """``I(f|gamma) = int (f' + x f)^2 / f``."""
    if not model.differentiable:
        raise UnsupportedError(f"Fisher information undefined for non-differentiable {model.name}")
    closed = model._rel_fisher_closed()
    if closed is not None:
        return EstimateWithError(float(closed), 0.0, method="closed-form")

    def integrand(x):
        f = float(model.pdf(x))
        if f == 0.0:
            return 0.0
        return f * (float(model.score(x)) + x) ** 2

    val, err = _quad(model, integrand, "relative Fisher information")
    return EstimateWithError(max(val, 0.0), 0.0, method="adaptive-quadrature", quad_error=err)


def rel_entropy_gaussian_mc(model: DensityModel, M: int, seed) -> EstimateWithError:
    """Plug-in Monte Carlo of ``E_f[log f - log gamma]``."""
    vals = np.empty(M)
    for a, b, rng in _rng.blocks(_rng.child(seed, "entropy-mc"), M):
        x = model.sample(rng, b - a)
        vals[a:b] = model.log_pdf(x) + 0.5 * x * x + LOG_SQRT_2PI
    return mean_estimate(vals, seed=_rng.seed_repr(seed))


def rel_fisher_gaussian_mc(model: DensityModel, M: int, seed) -> EstimateWithError:
    """Plug-in Monte Carlo of ``E_f[(f'/f + x)^2]``."""
    if not model.differentiable:
        raise UnsupportedError(f"Fisher information undefined for non-differentiable {model.name}")
    vals = np.empty(M)
    for a, b, rng in _rng.blocks(_rng.child(seed, "fisher-mc"), M):
        x = model.sample(rng, b - a)
        vals[a:b] = (model.score(x) + x) ** 2
    return mean_estimate(vals, seed=_rng.seed_repr(seed))


@dataclass(frozen=True)
class Functionals:
    """Reference values of a density, as recorded in study audits."""

    second_moment: float
    rel_entropy_gaussian: float
    rel_fisher_gaussian: float | None
    moment_sup: float
    method: dict = field(default_factory=dict)

    @classmethod
    def of(cls, model: DensityModel) -> Functionals:
        h = rel_entropy_gaussian(model)
        try:
            i = rel_fisher_gaussian(model)
            fisher, fmethod = i.value, i.method
        except UnsupportedError:
            fisher, fmethod = None, "unsupported"
        return cls(model.second_moment(), h.value, fisher, model.moment_sup,
                   {"rel_entropy_gaussian": h.method, "rel_fisher_gaussian": fmethod})
