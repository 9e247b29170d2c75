"""Convex domains and the normal-cone operator of their indicator.

The only multivalued operators handled here are subdifferentials of convex
indicators, ``A = dI_K``.  For these the resolvent ``(I + lam A)^-1`` is the
Euclidean projection onto ``K`` for every ``lam > 0``, and ``A(x)`` is the
exterior normal cone at boundary points (``{0}`` in the interior).

All projection routines accept arrays of shape ``(..., d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from . import rng as _rng

BOUNDARY_RTOL = 1e-9
KKT_TOL = 1e-10


class DomainError(ValueError):
    """Invalid domain construction or a point outside the admissible set."""


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (dim,):
        raise DomainError(f"expected trailing dimension {dim}, got shape {x.shape}")
    return x


def _btol(x):
    return BOUNDARY_RTOL * (1.0 + np.linalg.norm(x, axis=-1))


class ConvexDomain:
    """Closed convex set ``K`` with nonempty interior."""

    dim: int
    kind: str = "abstract"

    def project(self, x):
        raise NotImplementedError

    def contains(self, x, rtol=BOUNDARY_RTOL):
        raise NotImplementedError

    def interior_radius(self, a) -> float:
        """Distance from ``a`` to the boundary (``inf`` for the whole space)."""
        raise NotImplementedError

    def normal_generators(self, x) -> np.ndarray:
        """Generators of the exterior normal cone at a single point ``x``."""
        raise NotImplementedError

    def kkt_residual(self, x, p) -> np.ndarray:
        raise NotImplementedError

    def sample_interior(self, gen: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def sample_boundary(self, gen: np.random.Generator, n: int):
        """Boundary points with exact normal-cone generators.

        Returns a list of ``(x, generators)`` pairs.
        """
        raise NotImplementedError

    def params(self) -> dict:
        return {}


@dataclass(frozen=True, eq=False)
class WholeSpace(ConvexDomain):
    dim: int
    kind: str = field(default="whole", init=False)

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError("dim must be >= 1")

    def project(self, x):
        return _as_points(x, self.dim).copy()

    def contains(self, x, rtol=BOUNDARY_RTOL):
        x = _as_points(x, self.dim)
        return np.all(np.isfinite(x), axis=-1)

    def interior_radius(self, a):
        _as_points(a, self.dim)
        return np.inf

    def normal_generators(self, x):
        return np.zeros((0, self.dim))

    def kkt_residual(self, x, p):
        return np.linalg.norm(np.asarray(x) - np.asarray(p), axis=-1)

    def sample_interior(self, gen, n):
        return gen.normal(0.0, 2.0, size=(n, self.dim))

    def sample_boundary(self, gen, n):
        return []

    def params(self):
        return {}


@dataclass(frozen=True, eq=False)
class Box(ConvexDomain):
    """Axis-aligned box; bounds may be infinite."""

    lo: np.ndarray
    hi: np.ndarray
    kind: str = field(default="box", init=False)

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DomainError("box bounds must be vectors of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or not np.all(lo < hi):
            raise DomainError("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.shape[0]

    def project(self, x):
        return np.clip(_as_points(x, self.dim), self.lo, self.hi)

    def contains(self, x, rtol=BOUNDARY_RTOL):
        x = _as_points(x, self.dim)
        tol = rtol * (1.0 + np.linalg.norm(x, axis=-1))[..., None]
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def interior_radius(self, a):
        a = _as_points(a, self.dim)
        return float(np.min(np.minimum(a - self.lo, self.hi - a)))

    def normal_generators(self, x):
        x = _as_points(x, self.dim)
        tol = BOUNDARY_RTOL * (1.0 + np.linalg.norm(x))
        eye = np.eye(self.dim)
        gens = [-eye[j] for j in range(self.dim) if abs(x[j] - self.lo[j]) <= tol]
        gens += [eye[j] for j in range(self.dim) if abs(x[j] - self.hi[j]) <= tol]
        return np.array(gens).reshape(-1, self.dim)

    def kkt_residual(self, x, p):
        x = _as_points(x, self.dim)
        p = _as_points(p, self.dim)
        r = x - p
        tol = _btol(p)[..., None]
        at_lo = np.abs(p - self.lo) <= tol
        at_hi = np.abs(p - self.hi) <= tol
        # Multiplier sign: r <= 0 at lo faces, r >= 0 at hi faces, r = 0 elsewhere.
        viol = np.where(at_lo & ~at_hi, np.maximum(r, 0.0),
                        np.where(at_hi & ~at_lo, np.maximum(-r, 0.0),
                                 np.where(at_lo & at_hi, 0.0, np.abs(r))))
        infeas = np.maximum(self.lo - p, 0.0) + np.maximum(p - self.hi, 0.0)
        return np.max(viol + infeas, axis=-1)

    def _window(self):
        lo = np.where(np.isfinite(self.lo), self.lo,
                      np.where(np.isfinite(self.hi), self.hi - 4.0, -2.0))
        hi = np.where(np.isfinite(self.hi), self.hi,
                      np.where(np.isfinite(self.lo), self.lo + 4.0, 2.0))
        return lo, hi

    def sample_interior(self, gen, n):
        lo, hi = self._window()
        return gen.uniform(lo, hi, size=(n, self.dim))

    def sample_boundary(self, gen, n):
        lo, hi = self._window()
        out = []
        finite_faces = [(j, s) for j in range(self.dim) for s in (-1, 1)
                        if np.isfinite(self.lo[j] if s < 0 else self.hi[j])]
        if not finite_faces:
            return out
        eye = np.eye(self.dim)
        for _ in range(n):
            x = gen.uniform(lo, hi)
            k = 1 + gen.integers(0, min(len(finite_faces), self.dim))
            picks = gen.choice(len(finite_faces), size=k, replace=False)
            gens, used = [], set()
            for idx in sorted(picks):
                j, s = finite_faces[idx]
                if j in used:
                    continue
                used.add(j)
                x[j] = self.lo[j] if s < 0 else self.hi[j]
                gens.append(s * eye[j])
            out.append((x, np.array(gens)))
        return out

    def params(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Ball(ConvexDomain):
    center: np.ndarray
    radius: float
    kind: str = field(default="ball", init=False)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise DomainError("ball center must be a finite vector")
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise DomainError("ball radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.shape[0]

    def project(self, x):
        x = _as_points(x, self.dim)
        v = x - self.center
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        scale = np.where(n > self.radius, self.radius / np.where(n > 0, n, 1.0), 1.0)
        return np.where(n > self.radius, self.center + v * scale, x)

    def contains(self, x, rtol=BOUNDARY_RTOL):
        x = _as_points(x, self.dim)
        return np.linalg.norm(x - self.center, axis=-1) <= self.radius + rtol * (1.0 + np.linalg.norm(x, axis=-1))

    def interior_radius(self, a):
        a = _as_points(a, self.dim)
        return float(self.radius - np.linalg.norm(a - self.center))

    def normal_generators(self, x):
        x = _as_points(x, self.dim)
        v = x - self.center
        if abs(np.linalg.norm(v) - self.radius) <= BOUNDARY_RTOL * (1.0 + np.linalg.norm(x)):
            return (v / self.radius)[None, :]
        return np.zeros((0, self.dim))

    def kkt_residual(self, x, p):
        x = _as_points(x, self.dim)
        p = _as_points(p, self.dim)
        r = x - p
        v = p - self.center
        nv = np.linalg.norm(v, axis=-1)
        on = np.abs(nv - self.radius) <= _btol(p)
        lam = np.maximum(np.sum(r * v, axis=-1), 0.0) / self.radius**2
        stat_on = np.linalg.norm(r - lam[..., None] * v, axis=-1)
        stat = np.where(on, stat_on, np.linalg.norm(r, axis=-1))
        return stat + np.maximum(nv - self.radius, 0.0)

    def sample_interior(self, gen, n):
        u = gen.normal(size=(n, self.dim))
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        rad = self.radius * 0.999 * gen.uniform(size=(n, 1)) ** (1.0 / self.dim)
        return self.center + rad * u

    def sample_boundary(self, gen, n):
        out = []
        for _ in range(n):
            u = gen.normal(size=self.dim)
            u /= np.linalg.norm(u)
            out.append((self.center + self.radius * u, u[None, :]))
        return out

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Polyhedron(ConvexDomain):
    """``{x : <a_i, x> <= c_i}`` with a supplied strictly feasible point."""

    normals: np.ndarray
    offsets: np.ndarray
    interior_point: np.ndarray
    kind: str = field(default="polyhedron", init=False)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.normals, dtype=float))
        c = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        p = np.atleast_1d(np.asarray(self.interior_point, dtype=float))
        if a.shape[0] != c.shape[0] or a.shape[1] != p.shape[0]:
            raise DomainError("inconsistent polyhedron dimensions")
        if np.any(np.linalg.norm(a, axis=1) == 0):
            raise DomainError("zero constraint normal")
        slack = c - a @ p
        if not np.all(slack > 1e-12 * (1.0 + np.abs(c))):
            raise DomainError("interior_point is not strictly feasible")
        object.__setattr__(self, "normals", a)
        object.__setattr__(self, "offsets", c)
        object.__setattr__(self, "interior_point", p)

    @property
    def dim(self):
        return self.normals.shape[1]

    def contains(self, x, rtol=BOUNDARY_RTOL):
        x = _as_points(x, self.dim)
        scale = np.linalg.norm(self.normals, axis=1)
        tol = rtol * (1.0 + np.linalg.norm(x, axis=-1))[..., None] * scale
        return np.all(x @ self.normals.T <= self.offsets + tol, axis=-1)

    def project(self, x):
        x = _as_points(x, self.dim)
        flat = x.reshape(-1, self.dim)
        out = flat.copy()
        bad = np.nonzero(~np.all(flat @ self.normals.T <= self.offsets, axis=-1))[0]
        for i in bad:
            out[i] = self._project_point(flat[i])
        return out.reshape(x.shape)

    def _project_point(self, x):
        """Primal active-set QP for ``min |w - x|^2`` with Bland-style index rules."""
        a, c = self.normals, self.offsets
        m = a.shape[0]
        if m == 1:
            s = (a[0] @ x - c[0]) / (a[0] @ a[0])
            return x - max(s, 0.0) * a[0]
        w = self.interior_point.copy()
        work: list[int] = []
        tol = KKT_TOL * (1.0 + np.linalg.norm(x))
        for _ in range(50 * (m + self.dim)):
            if work:
                aw = a[work]
                lam, *_ = np.linalg.lstsq(aw @ aw.T, aw @ x - c[work], rcond=None)
                q = x - aw.T @ lam
            else:
                lam = np.zeros(0)
                q = x
            p = q - w
            if np.linalg.norm(p) <= tol:
                neg = [work[i] for i in range(len(work)) if lam[i] < -tol]
                if not neg:
                    return q
                work.remove(min(neg))
                continue
            ap = a @ p
            slack = c - a @ w
            alpha, block = 1.0, None
            for i in range(m):
                if i in work or ap[i] <= 1e-15 * np.linalg.norm(p):
                    continue
                step = max(slack[i], 0.0) / ap[i]
                if step < alpha - 1e-15:
                    alpha, block = step, i
            w = w + alpha * p
            if block is not None:
                work.append(block)
        raise DomainError("active-set projection did not converge")

    def interior_radius(self, a):
        a = _as_points(a, self.dim)
        return float(np.min((self.offsets - self.normals @ a) / np.linalg.norm(self.normals, axis=1)))

    def normal_generators(self, x):
        x = _as_points(x, self.dim)
        tol = BOUNDARY_RTOL * (1.0 + np.linalg.norm(x)) * np.linalg.norm(self.normals, axis=1)
        active = np.abs(self.normals @ x - self.offsets) <= tol
        return self.normals[active]

    def kkt_residual(self, x, p):
        x = _as_points(x, self.dim)
        p = _as_points(p, self.dim)
        fx, fp = x.reshape(-1, self.dim), p.reshape(-1, self.dim)
        out = np.empty(fx.shape[0])
        nrm = np.linalg.norm(self.normals, axis=1)
        for i in range(fx.shape[0]):
            r = fx[i] - fp[i]
            g = self.normals @ fp[i] - self.offsets
            active = np.abs(g) <= _btol(fp[i]) * nrm
            stat = np.linalg.norm(r)
            if np.any(active):
                _, stat = nnls(self.normals[active].T, r)
            out[i] = stat + max(np.max(g / nrm), 0.0)
        return out.reshape(x.shape[:-1])

    def sample_interior(self, gen, n):
        out = np.empty((n, self.dim))
        scale = 1.0 + np.linalg.norm(self.interior_point)
        k = 0
        while k < n:
            cand = self.interior_point + gen.normal(0.0, scale, size=self.dim)
            if np.all(self.normals @ cand < self.offsets):
                out[k] = cand
                k += 1
            else:
                scale *= 0.9
        return out

    def sample_boundary(self, gen, n):
        out = []
        tries = 0
        while len(out) < n and tries < 100 * n:
            tries += 1
            w = self.sample_interior(gen, 1)[0]
            d = gen.normal(size=self.dim)
            ad = self.normals @ d
            pos = ad > 1e-12
            if not np.any(pos):
                continue
            steps = (self.offsets[pos] - self.normals[pos] @ w) / ad[pos]
            j = np.nonzero(pos)[0][np.argmin(steps)]
            x = w + steps.min() * d
            out.append((x, self.normals[j][None, :]))
        return out

    def params(self):
        return {"normals": self.normals.tolist(), "offsets": self.offsets.tolist(),
                "interior_point": self.interior_point.tolist()}


def project(domain: ConvexDomain, x) -> np.ndarray:
    """Euclidean projection onto ``domain`` (closest point of ``K``)."""
    return domain.project(x)


def resolvent(domain: ConvexDomain, lam: float, x) -> np.ndarray:
    """``(I + lam dI_K)^-1 x``; equals the projection for every ``lam > 0``."""
    if not lam > 0:
        raise DomainError("resolvent parameter must be positive")
    return domain.project(x)


@dataclass(frozen=True)
class GraphSample:
    x: np.ndarray
    y: np.ndarray


def sample_graph(domain: ConvexDomain, n: int, rng_seed: int,
                 interior_fraction: float = 0.5) -> list[GraphSample]:
    """Draw ``n`` pairs ``(x, y)`` with ``y`` in the normal cone at ``x``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = _rng.stream(rng_seed, "sample_graph")
    n_bnd = int(round(n * (1.0 - interior_fraction)))
    boundary = domain.sample_boundary(gen, n_bnd)
    n_int = n - len(boundary)
    out = [GraphSample(x, np.zeros(domain.dim)) for x in domain.sample_interior(gen, n_int)]
    for x, gens in boundary:
        t = gen.exponential(1.0, size=gens.shape[0])
        out.append(GraphSample(x, t @ gens))
    order = gen.permutation(len(out))
    return [out[i] for i in order]


def pairwise_monotonicity(samples: Sequence[GraphSample]) -> float:
    """Smallest ``<x1 - x2, y1 - y2>`` over all pairs (``inf`` for one sample)."""
    xs = np.array([s.x for s in samples])
    ys = np.array([s.y for s in samples])
    if len(xs) < 2:
        return np.inf
    dx = xs[:, None, :] - xs[None, :, :]
    dy = ys[:, None, :] - ys[None, :, :]
    return float(np.min(np.sum(dx * dy, axis=-1)))


@dataclass
class MonotonicityReport:
    inner_products: np.ndarray
    min_value: float
    tol: float
    passed: bool


def default_path_tol(times, path_x) -> float:
    dt = float(np.max(np.diff(times))) if len(times) > 1 else 0.0
    return 10.0 * dt * (1.0 + float(np.max(np.linalg.norm(path_x, axis=-1))))


def _check_grid(times, *paths):
    n = len(times)
    for p in paths:
        if p is not None and np.asarray(p).shape[0] != n:
            raise ValueError("paths do not share the time grid")


def check_pair_monotonicity(times, path_x, path_k, graph: Sequence[GraphSample] = (),
                            *, other=None, tol=None) -> MonotonicityReport:
    """Discrete check of ``<X_t - x, dK_t - y dt> >= 0``.

    Each increment ``dK_k = K_{k+1} - K_k`` is paired with the right endpoint
    ``X_{k+1}``, which is where the projected scheme evaluates the normal
    cone.  ``other`` is an optional second pair ``(X', K')`` on the same grid;
    it contributes ``<X - X', dK - dK'>``.
    """
    times = np.asarray(times, dtype=float)
    x = np.asarray(path_x, dtype=float)
    k = np.asarray(path_k, dtype=float)
    _check_grid(times, x, k)
    if other is not None:
        _check_grid(times, other[0], other[1])
    if tol is None:
        tol = default_path_tol(times, x)
    dt = np.diff(times)
    dk = np.diff(k, axis=0)
    xr = x[1:]
    vals = []
    for g in graph:
        vals.append(np.sum((xr - g.x) * (dk - g.y * dt[:, None]), axis=-1))
    if other is not None:
        xo = np.asarray(other[0], dtype=float)
        ko = np.asarray(other[1], dtype=float)
        vals.append(np.sum((xr - xo[1:]) * (dk - np.diff(ko, axis=0)), axis=-1))
    if not vals:
        vals.append(np.zeros(len(dt)))
    ip = np.concatenate(vals)
    mn = float(ip.min()) if ip.size else 0.0
    return MonotonicityReport(ip, mn, float(tol), bool(mn >= -tol))


@dataclass
class VariationReport:
    lhs: float
    rhs: float
    variation: float
    tol: float
    passed: bool


def check_variation_bound(times, path_x, path_k, domain: ConvexDomain, a, r: float,
                          mu: float, s: float, t: float, tol=None) -> VariationReport:
    """Discrete form of ``int <X - a, dK> >= r|K| - mu int |X - a| dv - r mu (t - s)``."""
    times = np.asarray(times, dtype=float)
    x = np.asarray(path_x, dtype=float)
    k = np.asarray(path_k, dtype=float)
    _check_grid(times, x, k)
    a = np.asarray(a, dtype=float)
    rad = domain.interior_radius(a)
    if not rad > 0:
        raise DomainError("reference point is not interior to the domain")
    if not (0 < r <= rad):
        raise DomainError(f"r must lie in (0, {rad}]")
    if mu <= 0:
        raise ValueError("mu must be positive")
    if tol is None:
        tol = default_path_tol(times, x)
    eps = 1e-12 * (1.0 + abs(t))
    sel = (times[:-1] >= s - eps) & (times[1:] <= t + eps)
    dk = np.diff(k, axis=0)[sel]
    xr = x[1:][sel] - a
    dt = np.diff(times)[sel]
    lhs = float(np.sum(xr * dk))
    var = float(np.sum(np.linalg.norm(dk, axis=-1)))
    rhs = r * var - mu * float(np.sum(np.linalg.norm(xr, axis=-1) * dt)) - r * mu * max(t - s, 0.0)
    return VariationReport(lhs, rhs, var, float(tol), bool(lhs >= rhs - tol))


def domain_from_params(kind: str, dim: int, **p) -> ConvexDomain:
    if kind == "whole":
        return WholeSpace(dim)
    if kind == "box":
        return Box(p["lo"], p["hi"])
    if kind == "ball":
        return Ball(p["center"], p["radius"])
    if kind == "polyhedron":
        return Polyhedron(p["normals"], p["offsets"], p["interior_point"])
    raise DomainError(f"unknown domain variant {kind!r}")
