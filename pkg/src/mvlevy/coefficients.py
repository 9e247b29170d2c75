"""Interaction kernels and their mean-field averages.

Coefficients are integrals of two-point kernels against the particle law::

    b(x, mu) = int b~(x, y) mu(dy),   sigma(x, mu) = int s~(x, y) mu(dy)
    G(x, mu, z) = int G~(x, y, z) mu(dy)

Kernels come from a fixed catalog.  Every kernel evaluates on batched
arrays: evaluation points ``x`` of shape ``(R, M, d)`` against clouds of
shape ``(R, N, d)`` (one cloud per replica).  Kernels that are affine in
``y`` only need the cloud mean, so their mean-field cost is O(N) rather
than O(N M).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from . import rng as _rng


# ---------------------------------------------------------------- moduli

class Modulus:
    """Continuous nondecreasing ``rho: R+ -> R+`` with ``rho(0) = 0``."""

    name = "abstract"

    def __call__(self, u):
        raise NotImplementedError

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class LinearModulus(Modulus):
    L: float
    name: str = field(default="linear", init=False)

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("linear modulus needs L > 0")

    def __call__(self, u):
        return self.L * np.asarray(u, dtype=float)

    def params(self):
        return {"L": self.L}


@dataclass(frozen=True)
class LogCapModulus(Modulus):
    """``u log(1/u)`` on ``[0, delta]``, continued by its tangent line."""

    delta: float
    name: str = field(default="logcap", init=False)

    def __post_init__(self):
        if not (0 < self.delta <= np.exp(-1)):
            raise ValueError("logcap modulus needs delta in (0, 1/e]")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        d = self.delta
        with np.errstate(divide="ignore", invalid="ignore"):
            low = np.where(u > 0, -u * np.log(np.where(u > 0, u, 1.0)), 0.0)
        high = -d * np.log(d) + (-np.log(d) - 1.0) * (u - d)
        return np.where(u <= d, low, high)

    def params(self):
        return {"delta": self.delta}


@dataclass(frozen=True)
class PowerModulus(Modulus):
    """``coef * u**power``.  Not an Osgood modulus when ``power < 1``."""

    power: float
    coef: float = 1.0
    name: str = field(default="power", init=False)

    def __post_init__(self):
        if not (self.power > 0 and self.coef > 0):
            raise ValueError("power modulus needs positive power and coef")

    def __call__(self, u):
        return self.coef * np.power(np.asarray(u, dtype=float), self.power)

    def params(self):
        return {"power": self.power, "coef": self.coef}


ConcaveModulus = (LinearModulus, LogCapModulus)


def osgood_partial_sums(kappa: Modulus, levels: int = 1000) -> np.ndarray:
    """Partial sums of ``int_{u_j}^{1} du / kappa(u)`` on ``u_j = 2**-j``.

    Uses the left-endpoint bound ``(u_j - u_{j+1}) / kappa(u_j)``.
    """
    u = np.power(2.0, -np.arange(levels + 1, dtype=float))
    terms = (u[:-1] - u[1:]) / kappa(u[:-1])
    return np.cumsum(terms)


def osgood_diverges(kappa: Modulus, levels: int = 1000) -> bool:
    """Numerical divergence test: ``j * term_j`` stays bounded away from 0."""
    s = osgood_partial_sums(kappa, levels)
    terms = np.diff(np.concatenate([[0.0], s]))
    j = np.arange(1, levels + 1)
    return bool(np.min((j * terms)[levels // 2:]) > 1e-3)


def modulus_from_params(kind: str, **p) -> Modulus:
    if kind == "linear":
        return LinearModulus(float(p["L"]))
    if kind == "logcap":
        return LogCapModulus(float(p["delta"]))
    if kind == "power":
        return PowerModulus(float(p["power"]), float(p.get("coef", 1.0)))
    raise ValueError(f"unknown modulus {kind!r}")


# ------------------------------------------------------------ measures

@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform measure on a finite particle cloud."""

    particles: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError("empirical measure needs at least one particle")
        object.__setattr__(self, "particles", p)

    @property
    def dim(self):
        return self.particles.shape[1]

    @property
    def size(self):
        return self.particles.shape[0]

    def mean(self):
        return self.particles.mean(axis=0)

    def second_moment(self) -> float:
        return float(np.mean(np.sum(self.particles**2, axis=1)))

    @classmethod
    def dirac(cls, x):
        return cls(np.asarray(x, dtype=float).reshape(1, -1))


def _mean(cloud):
    if cloud.shape[-2] == 1:
        return cloud
    return cloud.mean(axis=-2, keepdims=True)


# -------------------------------------------------------------- drifts

class DriftKernel:
    kind = "abstract"
    linear_in_y = True

    def __init__(self, dim):
        self.dim = int(dim)

    def pair(self, x, y):
        raise NotImplementedError

    def from_mean(self, x, m):
        raise NotImplementedError

    def mean_field(self, x, cloud):
        return self.from_mean(x, _mean(cloud))

    def pair_jacobian(self, x, y):
        """``d/dx b~(x, y)`` with shape ``(..., d, d)``; ``None`` if unavailable."""
        return None

    def params(self) -> dict:
        return {}


class ZeroDrift(DriftKernel):
    kind = "zero"

    def pair(self, x, y):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)))

    def from_mean(self, x, m):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(m)))

    def pair_jacobian(self, x, y):
        shp = np.broadcast_shapes(np.shape(x), np.shape(y))
        return np.zeros(shp + (self.dim,))


class ConstantDrift(DriftKernel):
    kind = "constant"

    def __init__(self, c):
        c = np.atleast_1d(np.asarray(c, dtype=float))
        super().__init__(c.shape[0])
        self.c = c

    def pair(self, x, y):
        return np.broadcast_to(self.c, np.broadcast_shapes(np.shape(x), np.shape(y))).copy()

    def from_mean(self, x, m):
        return self.pair(x, m)

    def pair_jacobian(self, x, y):
        shp = np.broadcast_shapes(np.shape(x), np.shape(y))
        return np.zeros(shp + (self.dim,))

    def params(self):
        return {"c": self.c.tolist()}


class LinearDrift(DriftKernel):
    """``b~(x, y) = A x + B y + c``."""

    kind = "linear"

    def __init__(self, A, B, c=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        super().__init__(A.shape[0])
        if A.shape != (self.dim, self.dim) or B.shape != A.shape:
            raise ValueError("linear drift matrices must be d x d")
        self.A, self.B = A, B
        self.c = np.zeros(self.dim) if c is None else np.atleast_1d(np.asarray(c, dtype=float))

    def pair(self, x, y):
        return np.asarray(x) @ self.A.T + np.asarray(y) @ self.B.T + self.c

    def from_mean(self, x, m):
        return x @ self.A.T + m @ self.B.T + self.c

    def pair_jacobian(self, x, y):
        shp = np.broadcast_shapes(np.shape(x), np.shape(y))[:-1]
        return np.broadcast_to(self.A, shp + self.A.shape).copy()

    def params(self):
        return {"A": self.A.tolist(), "B": self.B.tolist(), "c": self.c.tolist()}


class MeanFieldOU(LinearDrift):
    """``b~(x, y) = -alpha x + beta (y - x)``."""

    kind = "mean_field_ou"

    def __init__(self, alpha, beta, dim=1):
        eye = np.eye(int(dim))
        super().__init__(-(alpha + beta) * eye, beta * eye)
        self.alpha, self.beta = float(alpha), float(beta)

    def params(self):
        return {"alpha": self.alpha, "beta": self.beta}


class TanhInteraction(DriftKernel):
    """``b~(x, y) = -alpha x + beta * ell * tanh((y - x) / ell)`` componentwise.

    Nonlinear in ``y``: the mean field needs every pair, which is the O(N^2)
    loop handled by the compiled backend.
    """

    kind = "tanh_interaction"
    linear_in_y = False

    def __init__(self, alpha, beta, scale=1.0, dim=1):
        super().__init__(dim)
        if not scale > 0:
            raise ValueError("tanh scale must be positive")
        self.alpha, self.beta, self.scale = float(alpha), float(beta), float(scale)

    def pair(self, x, y):
        x = np.asarray(x, dtype=float)
        return -self.alpha * x + self.beta * self.scale * np.tanh((np.asarray(y) - x) / self.scale)

    def from_mean(self, x, m):
        raise TypeError("tanh interaction is not affine in y")

    def mean_field(self, x, cloud):
        x = np.asarray(x, dtype=float)
        cloud = np.asarray(cloud, dtype=float)
        R = max(x.shape[0], cloud.shape[0])
        x = np.ascontiguousarray(np.broadcast_to(x, (R,) + x.shape[1:]))
        cloud = np.ascontiguousarray(np.broadcast_to(cloud, (R,) + cloud.shape[1:]))
        return backend.tanh_mean_field(x, cloud, self.alpha, self.beta, self.scale)

    def pair_jacobian(self, x, y):
        x = np.asarray(x, dtype=float)
        s = 1.0 / np.cosh((np.asarray(y) - x) / self.scale) ** 2
        diag = -self.alpha - self.beta * s
        return diag[..., :, None] * np.eye(self.dim)

    def params(self):
        return {"alpha": self.alpha, "beta": self.beta, "scale": self.scale}


class SumDrift(DriftKernel):
    kind = "sum"

    def __init__(self, first: DriftKernel, second: DriftKernel):
        if first.dim != second.dim:
            raise ValueError("summed kernels must share dimension")
        super().__init__(first.dim)
        self.first, self.second = first, second
        self.linear_in_y = first.linear_in_y and second.linear_in_y

    def pair(self, x, y):
        return self.first.pair(x, y) + self.second.pair(x, y)

    def from_mean(self, x, m):
        return self.first.from_mean(x, m) + self.second.from_mean(x, m)

    def mean_field(self, x, cloud):
        return self.first.mean_field(x, cloud) + self.second.mean_field(x, cloud)

    def pair_jacobian(self, x, y):
        j1, j2 = self.first.pair_jacobian(x, y), self.second.pair_jacobian(x, y)
        if j1 is None or j2 is None:
            return None
        return j1 + j2


# ----------------------------------------------------------- diffusions

class DiffusionKernel:
    kind = "abstract"

    def __init__(self, dim):
        self.dim = int(dim)

    def pair(self, x, y):
        """``s~(x, y)`` with shape ``(..., d, d)``."""
        raise NotImplementedError

    def matrix(self, x, cloud):
        """Mean-field matrix ``sigma(x, mu)``, shape ``(R, M, d, d)``."""
        raise NotImplementedError

    def apply(self, x, cloud, v):
        """``sigma(x, mu) v`` for vectors ``v`` of shape ``(R, M, d)``."""
        return np.einsum("...ij,...j->...i", self.matrix(x, cloud), v)

    def params(self) -> dict:
        return {}


class ZeroDiffusion(DiffusionKernel):
    kind = "zero"

    def pair(self, x, y):
        shp = np.broadcast_shapes(np.shape(x), np.shape(y))[:-1]
        return np.zeros(shp + (self.dim, self.dim))

    def matrix(self, x, cloud):
        return np.zeros(np.shape(x)[:-1] + (self.dim, self.dim))

    def apply(self, x, cloud, v):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(v)))


class ConstantDiffusion(DiffusionKernel):
    kind = "constant"

    def __init__(self, sigma, dim=None):
        s = np.asarray(sigma, dtype=float)
        if s.ndim == 0:
            s = float(s) * np.eye(int(dim or 1))
        super().__init__(s.shape[0])
        if s.shape != (self.dim, self.dim):
            raise ValueError("diffusion matrix must be d x d")
        self.sigma = s

    def pair(self, x, y):
        shp = np.broadcast_shapes(np.shape(x), np.shape(y))[:-1]
        return np.broadcast_to(self.sigma, shp + self.sigma.shape).copy()

    def matrix(self, x, cloud):
        return np.broadcast_to(self.sigma, np.shape(x)[:-1] + self.sigma.shape).copy()

    def apply(self, x, cloud, v):
        return v @ self.sigma.T

    def params(self):
        return {"sigma": self.sigma.tolist()}


class AffineDiffusion(DiffusionKernel):
    """``s~(x, y) = S0 + diag(s1 x + s2 y)``."""

    kind = "affine"

    def __init__(self, sigma0, s1, s2, dim=None):
        s = np.asarray(sigma0, dtype=float)
        if s.ndim == 0:
            s = float(s) * np.eye(int(dim or 1))
        super().__init__(s.shape[0])
        self.sigma0, self.s1, self.s2 = s, float(s1), float(s2)

    def pair(self, x, y):
        diag = self.s1 * np.asarray(x) + self.s2 * np.asarray(y)
        return self.sigma0 + diag[..., :, None] * np.eye(self.dim)

    def matrix(self, x, cloud):
        diag = self.s1 * x + self.s2 * _mean(cloud)
        return self.sigma0 + diag[..., :, None] * np.eye(self.dim)

    def apply(self, x, cloud, v):
        return v @ self.sigma0.T + (self.s1 * x + self.s2 * _mean(cloud)) * v

    def params(self):
        return {"sigma0": self.sigma0.tolist(), "s1": self.s1, "s2": self.s2}


# ---------------------------------------------------------------- jumps

class JumpKernel:
    """``G~(x, y, z) = gamma(z) (c0 + c1 x + c2 y)``."""

    kind = "jump_kernel"

    def __init__(self, c0, c1=0.0, c2=0.0):
        self.c0 = np.atleast_1d(np.asarray(c0, dtype=float))
        self.dim = self.c0.shape[0]
        self.c1, self.c2 = float(c1), float(c2)

    def pair(self, x, y, gamma):
        base = self.c0 + self.c1 * np.asarray(x) + self.c2 * np.asarray(y)
        return np.asarray(gamma, dtype=float)[..., None] * base

    def base(self, x, cloud):
        return self.c0 + self.c1 * x + self.c2 * _mean(cloud)

    def per_mark(self, x, cloud, gamma):
        """``G(x, mu, z_k)`` for every mark: shape ``(R, M, m, d)``."""
        return self.base(x, cloud)[..., None, :] * np.asarray(gamma)[:, None]

    def weighted_sum(self, x, cloud, weights, gamma):
        """``sum_k w_k G(x, mu, z_k)``; ``weights`` broadcast to ``(R, M, m)``."""
        return (np.asarray(weights) @ np.asarray(gamma))[..., None] * self.base(x, cloud)

    def params(self):
        return {"c0": self.c0.tolist(), "c1": self.c1, "c2": self.c2}


# ------------------------------------------------------------- container

@dataclass(eq=False)
class KernelCoefficients:
    dim: int
    drift: DriftKernel
    diffusion: DiffusionKernel
    jump: JumpKernel | None = None
    modulus: Modulus = field(default_factory=lambda: LinearModulus(1.0))
    growth_L: float = 1.0
    lipschitz_L: float | None = None

    def __post_init__(self):
        dims = {self.drift.dim, self.diffusion.dim}
        if self.jump is not None:
            dims.add(self.jump.dim)
        if dims != {self.dim}:
            raise ValueError(f"kernel dimensions {dims} do not match dim={self.dim}")

    @property
    def measure_free(self) -> bool:
        """True when no coefficient depends on the particle law."""
        d = self.drift
        drift_free = isinstance(d, (ZeroDrift, ConstantDrift)) or (
            isinstance(d, LinearDrift) and not np.any(d.B))
        diff_free = not isinstance(self.diffusion, AffineDiffusion) or self.diffusion.s2 == 0
        jump_free = self.jump is None or self.jump.c2 == 0
        return drift_free and diff_free and jump_free


def _point_and_cloud(x, mu):
    x = np.asarray(x, dtype=float).reshape(-1)
    if not isinstance(mu, EmpiricalMeasure):
        mu = EmpiricalMeasure(mu)
    if mu.dim != x.shape[0]:
        raise ValueError("dimension mismatch between point and measure")
    return x[None, None, :], mu.particles[None, :, :]


def eval_mean_field(coeffs: KernelCoefficients, which: str, x, mu) -> np.ndarray:
    """Mean-field drift (``which='b'``) or diffusion matrix (``'sigma'``) at one point."""
    xx, cl = _point_and_cloud(x, mu)
    if xx.shape[-1] != coeffs.dim:
        raise ValueError("dimension mismatch")
    if which == "b":
        return coeffs.drift.mean_field(xx, cl)[0, 0]
    if which in ("sigma", "s"):
        return coeffs.diffusion.matrix(xx, cl)[0, 0]
    raise ValueError(f"unknown coefficient {which!r}")


def eval_jump_mean_field(coeffs: KernelCoefficients, x, mu, gamma: float) -> np.ndarray:
    """``G(x, mu, z)`` for a mark with amplitude ``gamma``."""
    xx, cl = _point_and_cloud(x, mu)
    if coeffs.jump is None:
        return np.zeros(coeffs.dim)
    return coeffs.jump.per_mark(xx, cl, np.atleast_1d(gamma))[0, 0, 0]


def grad_b(coeffs: KernelCoefficients, x, mu) -> np.ndarray:
    """Jacobian in the first argument of the mean-field drift."""
    xx, cl = _point_and_cloud(x, mu)
    jac = coeffs.drift.pair_jacobian(xx[:, :, None, :], cl[:, None, :, :])
    if jac is not None:
        return jac[0, 0].mean(axis=0)
    return fd_grad_b(coeffs, x, mu)


def fd_grad_b(coeffs: KernelCoefficients, x, mu) -> np.ndarray:
    """Central finite difference with step ``1e-6 (1 + |x|)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    h = 1e-6 * (1.0 + np.linalg.norm(x))
    d = x.shape[0]
    out = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out[:, j] = (eval_mean_field(coeffs, "b", x + e, mu)
                     - eval_mean_field(coeffs, "b", x - e, mu)) / (2 * h)
    return out


# --------------------------------------------------------- perturbations

@dataclass(frozen=True)
class RhoSchedule:
    """``rho(eps) = coef * eps**power``."""

    coef: float = 0.0
    power: float = 1.0

    def __call__(self, eps):
        if self.coef == 0:
            return 0.0 * np.asarray(eps, dtype=float)
        return self.coef * np.power(np.asarray(eps, dtype=float), self.power)

    @property
    def vanishes(self) -> bool:
        return self.coef == 0 or self.power > 0


def _direction_vec(kind, x):
    if kind == "none":
        return np.zeros_like(x)
    if kind == "unit":
        out = np.zeros_like(x)
        out[..., 0] = 1.0
        return out
    if kind == "sin":
        return np.sin(x) / np.sqrt(x.shape[-1])
    raise ValueError(f"unknown perturbation direction {kind!r}")


def _direction_mat_apply(kind, x, v):
    if kind == "none":
        return np.zeros(np.broadcast_shapes(x.shape, v.shape))
    if kind == "unit":
        out = np.zeros(np.broadcast_shapes(x.shape, v.shape))
        out[..., 0] = v[..., 0]
        return out
    if kind == "sin":
        return np.sin(x[..., :1]) / np.sqrt(x.shape[-1]) * v
    raise ValueError(f"unknown perturbation direction {kind!r}")


def _direction_mat(kind, x):
    d = x.shape[-1]
    eye = np.eye(d)
    if kind == "none":
        return np.zeros(x.shape[:-1] + (d, d))
    if kind == "unit":
        m = np.zeros((d, d))
        m[0, 0] = 1.0
        return np.broadcast_to(m, x.shape[:-1] + (d, d)).copy()
    if kind == "sin":
        return (np.sin(x[..., :1]) / np.sqrt(d))[..., None] * eye
    raise ValueError(f"unknown perturbation direction {kind!r}")


DIRECTIONS = ("none", "unit", "sin")


@dataclass(frozen=True)
class PerturbationFamily:
    """``b_eps = b + rho_b(eps) h_b``, likewise for sigma and G (via ``L3``)."""

    rho_b: RhoSchedule = RhoSchedule()
    rho_sigma: RhoSchedule = RhoSchedule()
    rho_G: RhoSchedule = RhoSchedule()
    h_b: str = "none"
    h_sigma: str = "none"
    h_G: str = "none"

    def __post_init__(self):
        for k in (self.h_b, self.h_sigma, self.h_G):
            if k not in DIRECTIONS:
                raise ValueError(f"unknown perturbation direction {k!r}")

    @property
    def is_null(self) -> bool:
        return all(r.coef == 0 or h == "none" for r, h in
                   ((self.rho_b, self.h_b), (self.rho_sigma, self.h_sigma), (self.rho_G, self.h_G)))

    def drift_shift(self, eps, x):
        return float(self.rho_b(eps)) * _direction_vec(self.h_b, x)

    def sigma_shift_apply(self, eps, x, v):
        return float(self.rho_sigma(eps)) * _direction_mat_apply(self.h_sigma, x, v)

    def sigma_shift(self, eps, x):
        return float(self.rho_sigma(eps)) * _direction_mat(self.h_sigma, x)

    def jump_shift(self, eps, x, weighted_l3):
        """``rho_G(eps) * (sum_k w_k L3(z_k)) * h_G(x)``."""
        return float(self.rho_G(eps)) * np.asarray(weighted_l3)[..., None] * _direction_vec(self.h_G, x)


# ------------------------------------------------------- catalog builders

def drift_from_params(kind: str, dim: int, **p) -> DriftKernel:
    if kind == "zero":
        return ZeroDrift(dim)
    if kind == "constant":
        return ConstantDrift(_vec(p.get("c", 0.0), dim))
    if kind == "linear":
        return LinearDrift(_mat(p.get("A", 0.0), dim), _mat(p.get("B", 0.0), dim),
                           _vec(p.get("c", 0.0), dim))
    if kind == "mean_field_ou":
        return MeanFieldOU(float(p.get("alpha", 1.0)), float(p.get("beta", 0.0)), dim)
    if kind == "tanh_interaction":
        return TanhInteraction(float(p.get("alpha", 1.0)), float(p.get("beta", 1.0)),
                               float(p.get("scale", 1.0)), dim)
    raise ValueError(f"unknown drift kernel {kind!r}")


def diffusion_from_params(kind: str, dim: int, **p) -> DiffusionKernel:
    if kind == "zero":
        return ZeroDiffusion(dim)
    if kind == "constant":
        return ConstantDiffusion(_mat(p.get("sigma", 1.0), dim))
    if kind == "affine":
        return AffineDiffusion(_mat(p.get("sigma", 1.0), dim), float(p.get("s1", 0.0)),
                               float(p.get("s2", 0.0)))
    raise ValueError(f"unknown diffusion kernel {kind!r}")


def jump_from_params(kind: str, dim: int, **p) -> JumpKernel | None:
    if kind == "none":
        return None
    if kind == "jump_kernel":
        return JumpKernel(_vec(p.get("c0", 0.0), dim), float(p.get("c1", 0.0)),
                          float(p.get("c2", 0.0)))
    raise ValueError(f"unknown jump kernel {kind!r}")


def _vec(v, dim):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape == (1,) and dim > 1:
        v = np.full(dim, v[0])
    if v.shape != (dim,):
        raise ValueError(f"expected a vector of length {dim}")
    return v


def _mat(m, dim):
    m = np.asarray(m, dtype=float)
    if m.ndim == 0 or m.size == 1:
        return float(m.reshape(-1)[0]) * np.eye(dim)
    if m.ndim == 1 and m.shape[0] == dim:
        return np.diag(m)
    m = m.reshape(dim, dim)
    return m


# ------------------------------------------------------ hypothesis checks

@dataclass
class HypothesisResult:
    name: str
    passed: bool
    worst_violation: float
    witness: str = ""
    note: str = ""


@dataclass
class HypothesisReport:
    results: list[HypothesisResult]

    def __getitem__(self, name) -> HypothesisResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def rows(self):
        return [(r.name, int(r.passed), r.worst_violation, r.witness, r.note) for r in self.results]

    header = ("hypothesis", "passed", "worst_violation", "witness", "note")


class _Worst:
    def __init__(self, name, note=""):
        self.name, self.note = name, note
        self.value, self.witness = -np.inf, ""

    def update(self, violation, tol, witness):
        excess = float(violation - tol)
        if excess > self.value:
            self.value, self.witness = excess, witness

    def result(self):
        v = self.value if np.isfinite(self.value) else 0.0
        return HypothesisResult(self.name, bool(v <= 0.0), v, self.witness if v > 0 else "", self.note)


def _fmt(*arrs):
    return " ".join(np.array2string(np.asarray(a), precision=4, separator=",") for a in arrs)


def _w2sq(mu, nu):
    from .analysis import wasserstein2
    return wasserstein2(EmpiricalMeasure(mu), EmpiricalMeasure(nu)).value ** 2


def check_hypotheses(coeffs: KernelCoefficients, family: PerturbationFamily, domain, jump_model,
                     n_samples: int, rng_seed: int, *, eps_grid=(0.2, 0.1, 0.05, 0.025),
                     theta: float = 0.25, x0=None, T: float = 1.0, dt: float = 0.01,
                     c0_L: float = 1.0, c0_q: float = 0.0, sample_scale: float = 3.0,
                     cloud_size: int = 5) -> HypothesisReport:
    """Sampling-based falsification of the standing assumptions.

    Failures are reported with the worst violating sample, never raised.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    from .dynamics import solve_limit

    gen = _rng.stream(rng_seed, "check_hypotheses")
    d = coeffs.dim
    kappa = coeffs.modulus
    Lg = coeffs.growth_L
    Ll = coeffs.lipschitz_L if coeffs.lipschitz_L is not None else Lg
    has_jumps = coeffs.jump is not None and jump_model is not None
    gam = jump_model.gamma if has_jumps else np.zeros(0)
    wts = jump_model.weights if has_jumps else np.zeros(0)
    eps_grid = np.asarray(eps_grid, dtype=float)
    w2_note = "" if d == 1 else "W2 replaced by the paired-coupling upper bound (d>1)"

    h2 = _Worst("H2", w2_note)
    h2p = _Worst("H2prime", w2_note)
    h3 = _Worst("H3")
    h4 = _Worst("H4", "" if has_jumps else "no jumps")
    h5 = _Worst("H5")
    h6 = _Worst("H6", w2_note)
    h7 = _Worst("H7", "" if has_jumps else "no jumps")
    h8 = _Worst("H8")

    def b(x, cl):
        return coeffs.drift.mean_field(x[None, None], cl[None])[0, 0]

    def sig(x, cl):
        return coeffs.diffusion.matrix(x[None, None], cl[None])[0, 0]

    def G(x, cl):
        if not has_jumps:
            return np.zeros((0, d))
        return coeffs.jump.per_mark(x[None, None], cl[None], gam)[0, 0]

    for _ in range(n_samples):
        x = gen.normal(0.0, sample_scale, d)
        xp = gen.normal(0.0, sample_scale, d)
        mu = gen.normal(gen.normal(0.0, 1.0, d), sample_scale, (cloud_size, d))
        mup = gen.normal(gen.normal(0.0, 1.0, d), sample_scale, (cloud_size, d))
        dx2 = float(np.sum((x - xp) ** 2))
        w2 = _w2sq(mu, mup)
        rhs = float(kappa(dx2) + kappa(w2))
        tol = 1e-9 * (1.0 + abs(rhs))
        wit = _fmt(x, xp)
        db = b(x, mu) - b(xp, mup)
        h2.update(float(np.dot(x - xp, db)) - rhs, tol, wit)
        h2.update(float(np.sum((sig(x, mu) - sig(xp, mup)) ** 2)) - rhs, tol, wit)
        gdiff = G(x, mu) - G(xp, mup)
        h2.update(float(np.sum(wts * np.sum(gdiff**2, axis=-1))) - rhs, tol, wit)

        # strengthened one-sided Lipschitz form
        tol_p = 1e-9 * (1.0 + Ll * (dx2 + w2))
        h2p.update(float(np.dot(x - xp, b(x, mu) - b(xp, mu))) - Ll * dx2, tol_p, wit)
        h2p.update(float(np.linalg.norm(b(x, mu) - b(x, mup))) - Ll * np.sqrt(w2), tol_p, wit)
        h2p.update(float(np.sum((sig(x, mu) - sig(xp, mup)) ** 2)) - Ll * (dx2 + w2), tol_p, wit)
        h2p.update(float(np.sum(wts * np.sum(gdiff**2, axis=-1))) - Ll * (dx2 + w2), tol_p, wit)

        # linear growth of the two-point kernels
        y = mu[0]
        bound = Lg * (1.0 + float(x @ x) + float(y @ y))
        vals = [float(np.sum(coeffs.drift.pair(x, y) ** 2)),
                float(np.sum(coeffs.diffusion.pair(x, y) ** 2))]
        if has_jumps:
            gt = coeffs.jump.pair(x, y, gam)
            vals.append(float(np.sum(wts * np.sum(gt**2, axis=-1))))
        h3.update(max(vals) - bound, 1e-9 * bound, _fmt(x, y))

        for eps in eps_grid:
            bs = family.drift_shift(eps, x)
            vals8 = [float(np.sum((coeffs.drift.pair(x, y) + bs) ** 2)),
                     float(np.sum((coeffs.diffusion.pair(x, y) + family.sigma_shift(eps, x)) ** 2))]
            h8.update(max(vals8) - bound, 1e-9 * bound, _fmt(x, y) + f" eps={eps}")
            h5.update(float(np.linalg.norm(bs)) - float(family.rho_b(eps)), 1e-12, f"eps={eps}")
            h5.update(float(np.linalg.norm(family.sigma_shift(eps, x))) - float(family.rho_sigma(eps)),
                      1e-12, f"eps={eps}")

        if has_jumps:
            l1, l2, l3 = jump_model.L1, jump_model.L2, jump_model.L3
            per = np.sum(gdiff**2, axis=-1)
            h6.update(float(np.max(per - l1**2 * rhs)), 1e-9 * (1 + float(np.max(l1**2)) * rhs), wit)
            for eps in eps_grid:
                shift = family.jump_shift(eps, x, l3)
                h6.update(float(np.max(np.linalg.norm(shift, axis=-1) - float(family.rho_G(eps)) * l3)),
                          1e-12, f"eps={eps}")

    if has_jumps:
        g0 = np.linalg.norm(coeffs.jump.per_mark(np.zeros((1, 1, d)), np.zeros((1, 1, d)), gam)[0, 0], axis=-1)
        h6.update(float(np.max(g0 - jump_model.L2)), 1e-12, "x=0, mu=delta_0")
        sq = jump_model.l2_norms_sq()
        if not np.all(np.isfinite(sq)):
            h6.update(np.inf, 0.0, "L1/L2/L3 not square integrable")
        # domain preservation of jumps, unperturbed and perturbed
        bnd = [p for p, _ in domain.sample_boundary(gen, max(1, n_samples // 2))]
        pts = np.vstack([domain.sample_interior(gen, n_samples)] + ([np.array(bnd)] if bnd else []))
        for x in pts:
            y = gen.normal(0.0, sample_scale, d)
            gt = coeffs.jump.pair(x, y, gam)
            bad = ~domain.contains(x + gt)
            if np.any(bad):
                k = int(np.argmax(bad))
                h4.update(float(np.linalg.norm(x + gt[k] - domain.project(x + gt[k]))), 0.0,
                          _fmt(x, y) + f" mark={k}")
            bound = Lg * (1.0 + float(x @ x) + float(y @ y))
            for eps in eps_grid:
                gte = gt + family.jump_shift(eps, x, jump_model.L3)
                h7.update(float(np.sum(wts * np.sum(gte**2, axis=-1))) - bound, 1e-9 * bound,
                          _fmt(x, y) + f" eps={eps}")
                bad = ~domain.contains(x + gte)
                if np.any(bad):
                    k = int(np.argmax(bad))
                    h7.update(float(np.linalg.norm(x + gte[k] - domain.project(x + gte[k]))), 0.0,
                              _fmt(x, y) + f" mark={k} eps={eps}")

    results = [HypothesisResult("H1", True, 0.0, "", f"{domain.kind} domain validated at construction")]
    results += [h.result() for h in (h2, h2p, h3, h4)]
    h5r = h5.result()
    if not (family.rho_b.vanishes and family.rho_sigma.vanishes):
        h5r.passed, h5r.note = False, "rho_b or rho_sigma does not vanish as eps -> 0"
    results.append(h5r)
    h6r = h6.result()
    if not family.rho_G.vanishes:
        h6r.passed, h6r.note = False, "rho_G does not vanish as eps -> 0"
    results += [h6r, h7.result(), h8.result()]

    # modulus properties
    u = np.concatenate([[0.0], np.logspace(-12, 2, 400)])
    ku = kappa(u)
    mid = kappa(0.5 * (u[1:] + u[:-1]))
    conc = float(np.max(0.5 * (ku[1:] + ku[:-1]) - mid))
    ok = bool(ku[0] == 0 and np.all(np.diff(ku) >= -1e-15) and np.all(ku[1:] > 0)
              and conc <= 1e-12 and osgood_diverges(kappa))
    results.append(HypothesisResult("kappa", ok, max(conc, 0.0), "",
                                    f"{kappa.name} modulus: zero at 0, nondecreasing, concave, Osgood"))

    # derivative conditions along the limit path
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    from .dynamics import Problem
    lim = solve_limit(Problem(domain, coeffs, jump_model, family, x0), T, dt)
    path = lim.states[0, 0]
    c0 = _Worst("C0", f"L'={c0_L}, q'={c0_q}")
    for _ in range(n_samples):
        s = path[gen.integers(0, path.shape[0])]
        x = s + gen.normal(0.0, 1.0, d)
        xp = s + gen.normal(0.0, 1.0, d)
        gdiff = grad_b(coeffs, x, EmpiricalMeasure.dirac(s)) - grad_b(coeffs, xp, EmpiricalMeasure.dirac(s))
        rhs = c0_L * (1.0 + np.linalg.norm(x) ** c0_q + np.linalg.norm(xp) ** c0_q) * np.linalg.norm(x - xp)
        c0.update(float(np.sum(gdiff**2)) - rhs, 1e-9 * (1 + rhs), _fmt(x, xp))
    results.append(c0.result())
    gn = np.array([np.sum(grad_b(coeffs, p, EmpiricalMeasure.dirac(p)) ** 2) for p in path])
    integral = float(np.trapezoid(gn, dx=dt)) if hasattr(np, "trapezoid") else float(np.trapz(gn, dx=dt))
    results.append(HypothesisResult("C1", bool(np.isfinite(integral)), 0.0, "",
                                    f"int |grad b|^2 along X0 = {integral:.6g}"))
    lam = np.power(eps_grid, theta)
    ratio = np.asarray(family.rho_b(eps_grid)) / lam
    rb = family.rho_b
    c2_ok = rb.coef == 0 or rb.power > theta
    results.append(HypothesisResult("C2", bool(c2_ok), float(ratio.min()) if not c2_ok else 0.0, "",
                                    "rho_b/lambda on grid: " + _fmt(ratio)))
    results.append(HypothesisResult("lambda", bool(0 < theta < 0.5), 0.0, "",
                                    f"lambda(eps)=eps^{theta}, eps/lambda^2=eps^{1 - 2 * theta}"))
    return HypothesisReport(results)
