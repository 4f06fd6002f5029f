"""Geometry of Kac's sphere ``{x in R^N : |x|^2 = N}`` and the radial psi-maps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import special

from kacsphere import _rng
from kacsphere.errors import PreconditionError
from kacsphere.estimates import Ensemble, IdentityCheck, mean_estimate

FD_STEP = 1e-5


@dataclass(frozen=True)
class SpherePoint:
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim != 1:
            raise ValueError("a sphere point is a 1-D vector")
        n = c.size
        if abs(c @ c - n) > 1e-12 * n:
            raise ValueError(f"|x|^2 = {c @ c!r} is not N = {n}")
        object.__setattr__(self, "coords", c)

    @property
    def N(self) -> int:
        return self.coords.size


def rescale(x) -> np.ndarray:
    """Map ``x`` (one vector or rows of a matrix) to ``sqrt(N) x / |x|``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise PreconditionError("cannot rescale the zero vector")
    return x * (math.sqrt(n) / norm)


def rescale_point(x) -> SpherePoint:
    return SpherePoint(rescale(x))


def sample_uniform_sphere(N: int, M: int, seed) -> Ensemble:
    """``M`` draws from the uniform law on Kac's sphere via rescaled Gaussians."""
    if N < 2 or M < 1:
        raise PreconditionError("need N >= 2 and M >= 1")
    out = np.empty((M, N))
    for a, b, rng in _rng.blocks(_rng.child(seed, "sigma", N), M):
        out[a:b] = rescale(rng.standard_normal((b - a, N)))
    return Ensemble(out, f"sigma^{N}", _rng.seed_repr(seed), rescaled=True)


def project_tangent(g: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Remove the component of ``g`` along ``y`` (rows on the sphere of radius sqrt(N))."""
    n = y.shape[-1]
    return g - (np.sum(g * y, axis=-1, keepdims=True) / n) * y


def spherical_gradient(fn: Callable, y, grad: Callable | None = None) -> np.ndarray:
    """Tangential gradient of ``fn`` at ``y``.

    ``grad`` is the ambient gradient if known; otherwise central differences
    with step ``1e-5 * sqrt(N)`` are used and projected afterwards.
    """
    y = np.asarray(y.coords if isinstance(y, SpherePoint) else y, dtype=float)
    n = y.size
    if grad is not None:
        g = np.asarray(grad(y), dtype=float)
    else:
        h = FD_STEP * math.sqrt(n)
        g = np.empty(n)
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            g[j] = (fn(y + e) - fn(y - e)) / (2 * h)
    return project_tangent(g, y)


def log_surface_area(N: int, radius: float = 1.0) -> float:
    """``log |S^{N-1}(radius)|`` through log-gamma."""
    if N < 2 or not radius > 0:
        raise PreconditionError("need N >= 2 and radius > 0")
    return math.log(2.0) + 0.5 * N * math.log(math.pi) - special.gammaln(0.5 * N) + (N - 1) * math.log(radius)


def inverse_norm2_identity_check(N: int, phi: Callable, M: int, seed) -> IdentityCheck:
    """Compare ``E[|Z|^-2 phi(Z/|Z|)]`` with ``(N-2)^-1`` times the sphere average of ``phi``.

    ``phi`` receives rows of unit vectors.  The discrepancy is estimated from
    the paired per-sample differences, so its SE is much smaller than either side's.
    """
    if N < 3:
        raise PreconditionError("the inverse-norm identity needs N >= 3")
    lhs = np.empty(M)
    rhs = np.empty(M)
    for a, b, rng in _rng.blocks(_rng.child(seed, "inv-norm2", N), M):
        z = rng.standard_normal((b - a, N))
        r2 = np.einsum("ij,ij->i", z, z)
        v = np.asarray(phi(z / np.sqrt(r2)[:, None]), dtype=float)
        lhs[a:b] = v / r2
        rhs[a:b] = v / (N - 2)
    s = _rng.seed_repr(seed)
    return IdentityCheck(mean_estimate(lhs, seed=s), mean_estimate(rhs, seed=s), mean_estimate(lhs - rhs, seed=s))


# ---------------------------------------------------------------------------
# psi maps


class Distortion(NamedTuple):
    displacement: np.ndarray  # |psi^-1(z) - z| / |z|
    operator_norm: np.ndarray  # ||D psi^-1(z) - Id||
    det_deviation: np.ndarray  # |1 - |det D psi^-1(z)||


@dataclass(frozen=True)
class PsiMap:
    """``psi(x) = (a / (b + min(|x|^2, c)))^{1/2} x`` on ``R^k``.

    The inverse has an inner branch ``|z| < z0`` and a linear outer branch;
    its derivative jumps across ``|z| = z0`` and the outer value is returned there.
    """

    a: float
    b: float
    c: float
    k: int = 1

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.c > 0):
            raise PreconditionError("a, b, c must be positive")
        if self.k < 1:
            raise PreconditionError("k must be >= 1")

    @classmethod
    def quantitative(cls, N: float, q: float, u: float, k: int = 1) -> PsiMap:
        """The ``(N, N + u N^{1-q}, N^{(1-q)/2})`` family."""
        if not (0 < q < 1 and -1 < u < 1):
            raise PreconditionError("need q in (0, 1) and u in (-1, 1)")
        return cls(float(N), N + u * N ** (1 - q), N ** ((1 - q) / 2), k)

    @property
    def z0(self) -> float:
        return math.sqrt(self.a * self.c / (self.b + self.c))

    def _vec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.k:
            raise ValueError(f"expected trailing dimension {self.k}")
        return v

    def forward(self, x) -> np.ndarray:
        x = self._vec(x)
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        return np.sqrt(self.a / (self.b + np.minimum(r2, self.c))) * x

    def _branches(self, z):
        rho = np.sum(z * z, axis=-1)
        inner = rho < self.z0**2
        if np.any(rho[inner] >= self.a):
            raise PreconditionError("inner branch needs |z|^2 < a")
        return rho, inner

    def _scale(self, rho, inner):
        outer = math.sqrt((self.b + self.c) / self.a)
        safe = np.where(inner, rho, 0.0)
        return np.where(inner, np.sqrt(self.b / (self.a - safe)), outer)

    def inverse(self, z) -> np.ndarray:
        z = self._vec(z)
        rho, inner = self._branches(z)
        return self._scale(rho, inner)[..., None] * z

    def on_threshold(self, z) -> np.ndarray:
        z = self._vec(z)
        return np.sum(z * z, axis=-1) == self.z0**2

    def inverse_jacobian(self, z) -> np.ndarray:
        """``D psi^-1(z)`` with shape ``(..., k, k)``."""
        z = self._vec(z)
        rho, inner = self._branches(z)
        s = self._scale(rho, inner)
        t = np.where(inner, 1.0 / (self.a - np.where(inner, rho, 0.0)), 0.0)
        eye = np.eye(self.k)
        return s[..., None, None] * (eye + t[..., None, None] * z[..., :, None] * z[..., None, :])

    def inverse_jacobian_det(self, z) -> np.ndarray:
        z = self._vec(z)
        rho, inner = self._branches(z)
        s = self._scale(rho, inner)
        radial = np.where(inner, self.a / (self.a - np.where(inner, rho, 0.0)), 1.0)
        return s**self.k * radial

    def distortion(self, z) -> Distortion:
        """The three deviations from the identity, using the rank-one structure.

        ``D psi^-1`` has eigenvalue ``s`` on the tangent space and ``s a/(a-|z|^2)``
        along ``z``; both are positive so they are also the singular values.
        """
        z = self._vec(z)
        rho, inner = self._branches(z)
        s = self._scale(rho, inner)
        radial = s * np.where(inner, self.a / (self.a - np.where(inner, rho, 0.0)), 1.0)
        op = np.abs(radial - 1.0)
        if self.k > 1:
            op = np.maximum(op, np.abs(s - 1.0))
        det = s ** (self.k - 1) * radial
        return Distortion(np.abs(s - 1.0), op, np.abs(1.0 - det))


def finite_difference_jacobian(fn: Callable, z: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``fn: R^k -> R^k`` at one point."""
    z = np.asarray(z, dtype=float)
    k = z.size
    jac = np.empty((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        jac[:, j] = (fn(z + e) - fn(z - e)) / (2 * h)
    return jac
