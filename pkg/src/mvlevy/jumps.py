"""Finite-activity Poisson noise: mark models, samplers and entropy energy."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from . import rng as _rng


@dataclass(frozen=True, eq=False)
class JumpModel:
    """Finite intensity measure on a discretized mark space.

    Interval mark spaces are reduced to their Gauss-Legendre nodes, so in
    both cases the model is a finite list of marks with positive weights.

    Attributes
    ----------
    values : ndarray, shape (m,)
        Mark locations.
    weights : ndarray, shape (m,)
        Intensity mass of each mark.
    gamma : ndarray, shape (m,)
        Jump amplitude used by the jump kernel.
    L1, L2, L3 : ndarray, shape (m,)
        Per-mark bounding functions for the jump coefficient.
    """

    values: np.ndarray
    weights: np.ndarray
    gamma: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    L3: np.ndarray
    kind: str = "finite"
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        m = vals.shape[0]
        object.__setattr__(self, "values", vals)
        for name in ("weights", "gamma", "L1", "L2", "L3"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.shape == (1,) and m > 1:
                arr = np.full(m, arr[0])
            if arr.shape != (m,):
                raise ValueError(f"{name} must have one entry per mark")
            object.__setattr__(self, name, arr)
        if m < 1:
            raise ValueError("jump model needs at least one mark")
        if not np.all(self.weights > 0):
            raise ValueError("mark weights must be positive")
        for name in ("L1", "L2", "L3"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} must be nonnegative")
        if not np.all(np.isfinite(self.l2_norms_sq())):
            raise ValueError("bounding functions must be square integrable")

    @property
    def n_marks(self) -> int:
        return self.values.shape[0]

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def l2_norms_sq(self) -> np.ndarray:
        """``int L_i^2 dnu`` for ``i = 1, 2, 3``."""
        return np.array([np.sum(self.weights * L**2) for L in (self.L1, self.L2, self.L3)])

    @classmethod
    def finite(cls, values, weights, gamma=None, L1=None, L2=None, L3=None):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        gamma = values if gamma is None else gamma
        g = np.abs(np.broadcast_to(np.asarray(gamma, dtype=float), values.shape))
        return cls(values, weights, gamma, g if L1 is None else L1, g if L2 is None else L2,
                   g if L3 is None else L3, "finite",
                   {"values": values.tolist(), "weights": np.atleast_1d(weights).tolist()})

    @classmethod
    def interval(cls, a, b, density=1.0, nodes=8, gamma=None, L1=None, L2=None, L3=None):
        """Constant density on ``[a, b]`` discretized with Gauss-Legendre nodes.

        ``gamma`` defaults to the mark value itself.
        """
        if not b > a:
            raise ValueError("interval marks need a < b")
        if not density > 0:
            raise ValueError("mark density must be positive")
        x, w = np.polynomial.legendre.leggauss(int(nodes))
        vals = 0.5 * (b - a) * x + 0.5 * (b + a)
        wts = 0.5 * (b - a) * w * density
        gamma = vals if gamma is None else gamma
        g = np.abs(np.broadcast_to(np.asarray(gamma, dtype=float), vals.shape))
        return cls(vals, wts, gamma, g if L1 is None else L1, g if L2 is None else L2,
                   g if L3 is None else L3, "interval",
                   {"a": a, "b": b, "density": density, "nodes": int(nodes)})


def ell(x):
    """Entropy integrand ``x log x - x + 1`` with value 1 at 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("ell is defined for x >= 0 only")
    out = xlogy(x, x) - x + 1.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class ControlField:
    """Piecewise-constant field on a ``cells x marks`` lattice over ``[0, T]``.

    Nonnegative unless ``signed`` (the moderate-deviation regime uses signed
    fields).  ``bounds`` is optional metadata ``(1/n, n)``.
    """

    values: np.ndarray
    T: float
    signed: bool = False
    bounds: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("control field values must be (cells, marks)")
        if not self.signed and np.any(v < 0):
            raise ValueError("control field must be nonnegative")
        if not np.all(np.isfinite(v)):
            raise ValueError("control field must be finite")
        object.__setattr__(self, "values", v)

    @property
    def cells(self) -> int:
        return self.values.shape[0]

    @property
    def n_marks(self) -> int:
        return self.values.shape[1]

    @property
    def cell_dt(self) -> float:
        return self.T / self.cells

    @classmethod
    def constant(cls, value, model: JumpModel, T, cells=1, signed=False):
        return cls(np.full((cells, model.n_marks), float(value)), T, signed)

    def on_grid(self, n_steps: int) -> np.ndarray:
        """Values on a fine grid of ``n_steps`` steps, shape ``(n_steps, m)``."""
        if n_steps % self.cells:
            raise ValueError(f"{self.cells} control cells do not divide {n_steps} steps")
        return np.repeat(self.values, n_steps // self.cells, axis=0)

    def at(self, t) -> np.ndarray:
        k = np.minimum((np.asarray(t) / self.cell_dt).astype(int), self.cells - 1)
        return self.values[k]


def q2(psi: ControlField, model: JumpModel, half: bool = False) -> float:
    """Entropy energy ``int int ell(psi) dnu ds`` (times 1/2 with ``half``)."""
    if psi.n_marks != model.n_marks:
        raise ValueError("control field and jump model disagree on the mark grid")
    val = float(np.sum(ell(psi.values) * model.weights) * psi.cell_dt)
    return 0.5 * val if half else val


@dataclass(frozen=True, eq=False)
class JumpLog:
    times: np.ndarray
    mark_index: np.ndarray
    model: JumpModel

    @property
    def count(self) -> int:
        return self.times.shape[0]

    @property
    def mark_values(self):
        return self.model.values[self.mark_index]

    def rows(self):
        return zip(self.times.tolist(), self.mark_index.tolist(), self.mark_values.tolist())

    header = ("time", "mark_index", "mark_value")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            for t, k, z in self.rows():
                w.writerow((repr(t), k, repr(z)))


def _check_eps(T, epsilon):
    if not T > 0:
        raise ValueError("T must be positive")
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")


def _sample(gen, model, T, intensity):
    """Poisson process on ``[0, T] x Z`` with intensity ``intensity * nu``."""
    count = gen.poisson(intensity * model.total_mass * T)
    marks = gen.choice(model.n_marks, size=count, p=model.weights / model.total_mass)
    times = gen.uniform(0.0, T, size=count)
    order = np.argsort(times, kind="stable")
    return times[order], marks[order]


def sample_prm(model: JumpModel, T: float, epsilon: float, rng_seed) -> JumpLog:
    """Poisson random measure with intensity ``nu / epsilon`` on ``[0, T]``."""
    _check_eps(T, epsilon)
    t, k = _sample(_rng.stream(rng_seed, "prm"), model, T, 1.0 / epsilon)
    return JumpLog(t, k, model)


def sample_controlled_prm(model: JumpModel, psi: ControlField, T: float, epsilon: float,
                          rng_seed) -> JumpLog:
    """Controlled measure with intensity ``psi nu / epsilon``, by thinning."""
    _check_eps(T, epsilon)
    if psi.n_marks != model.n_marks:
        raise ValueError("control field and jump model disagree on the mark grid")
    if abs(psi.T - T) > 1e-12 * max(1.0, T):
        raise ValueError("control field horizon does not match T")
    psi_max = float(psi.values.max())
    if psi_max == 0.0:
        return JumpLog(np.zeros(0), np.zeros(0, dtype=int), model)
    gen = _rng.stream(rng_seed, "controlled_prm")
    t, k = _sample(gen, model, T, psi_max / epsilon)
    accept = gen.uniform(size=t.shape[0]) * psi_max < psi.at(t)[np.arange(t.shape[0]), k]
    return JumpLog(t[accept], k[accept], model)
