"""Deterministic controlled skeleton equations and control energies.

The large-deviation skeleton ``Y`` follows the limit dynamics with the
law frozen at the Dirac mass of the limit path, pushed by ``sigma phi`` and
by the compensated jump control ``int G (psi - 1) dnu``.  The moderate
deviation skeleton ``V`` is the linearization around the limit path, driven
by ``sigma phi`` and ``int G psi dnu`` with a signed ``psi``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .coefficients import EmpiricalMeasure, grad_b
from .dynamics import PathBundle, Problem, _deterministic, _project, time_grid
from .jumps import ControlField, q2


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant vector control on ``cells`` equal cells of ``[0, T]``."""

    values: np.ndarray
    T: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ValueError("control values must be a finite (cells, d) array")
        object.__setattr__(self, "values", v)

    @property
    def cells(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def cell_dt(self):
        return self.T / self.cells

    @classmethod
    def constant(cls, c, T, dim=1, cells=1):
        c = np.broadcast_to(np.asarray(c, dtype=float), (dim,))
        return cls(np.tile(c, (cells, 1)), T)

    @classmethod
    def from_function(cls, f, T, cells, dim=1):
        """Sample ``f`` at cell midpoints."""
        mid = (np.arange(cells) + 0.5) * T / cells
        return cls(np.array([np.broadcast_to(f(t), (dim,)) for t in mid], dtype=float), T)

    def on_grid(self, n_steps):
        if n_steps % self.cells:
            raise ValueError(f"{self.cells} control cells do not divide {n_steps} steps")
        return np.repeat(self.values, n_steps // self.cells, axis=0)


def q1(phi: Control) -> float:
    """Quadratic energy ``1/2 int |phi|^2``."""
    return 0.5 * phi.cell_dt * float(np.sum(phi.values**2))


@dataclass(eq=False)
class SkeletonSolution:
    times: np.ndarray
    path: np.ndarray
    correction: np.ndarray
    costs: dict
    meta: dict = field(default_factory=dict)

    @property
    def cost(self) -> float:
        return float(sum(self.costs.values()))

    def header(self):
        d = self.path.shape[-1]
        return ["t"] + [f"y{i}" for i in range(d)] + [f"k{i}" for i in range(d)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for t, y, k in zip(self.times, self.path, self.correction):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in y] + [repr(float(v)) for v in k])


def _limit_path(limit):
    if isinstance(limit, PathBundle):
        return limit.times, limit.states[0, 0]
    times, path = limit
    return np.asarray(times, dtype=float), np.asarray(path, dtype=float)


def _check_grid(times, T, dt):
    grid = time_grid(T, dt)
    if grid.shape != times.shape or not np.allclose(grid, times, rtol=0, atol=1e-12):
        raise ValueError("control grid and limit path grid disagree")
    return len(grid) - 1


def _stack_controls(controls, n, size, T):
    """``(B, n, size)`` fine-grid array from a list of controls or arrays."""
    out = []
    for c in controls:
        if c is None:
            out.append(np.zeros((n, size)))
            continue
        if hasattr(c, "on_grid"):
            if abs(c.T - T) > 1e-12 * max(1.0, T):
                raise ValueError("control horizon does not match the limit path")
            a = c.on_grid(n)
        else:
            a = np.asarray(c, dtype=float)
            if a.ndim == 2 and a.shape[0] != n:
                if n % a.shape[0]:
                    raise ValueError("control cells do not divide the grid")
                a = np.repeat(a, n // a.shape[0], axis=0)
        out.append(np.broadcast_to(a, (n, size)))
    return np.stack(out).astype(float)


def ldp_paths(problem: Problem, limit, phis, psis=None):
    """Batched large-deviation skeleton for ``B`` controls.

    ``phis`` is ``(B, n, d)`` and ``psis`` is ``(B, n, m)`` on the fine grid.
    Returns ``(paths, corrections)`` each ``(B, n + 1, d)``.
    """
    times, x0path = _limit_path(limit)
    c = problem.coeffs
    B = phis.shape[0]
    jumps = problem.has_jumps and psis is not None
    if jumps:
        jm = problem.jump_model
        drive = (psis - 1.0) @ (jm.weights * jm.gamma)  # (B, n)

    def forcing(k, y, cloud):
        f = c.diffusion.apply(y, cloud, phis[:, k][:, None, :])
        if jumps:
            f = f + drive[:, k][:, None, None] * c.jump.base(y, cloud)
        return f

    return _deterministic(problem, times, measure_path=x0path, forcing=forcing, batch=B)


def solve_ldp_skeleton(problem: Problem, limit, phi: Control | None = None,
                       psi: ControlField | None = None, dt: float | None = None,
                       half: bool = False) -> SkeletonSolution:
    """Large-deviation skeleton along the limit path ``limit``."""
    times, _ = _limit_path(limit)
    T = float(times[-1])
    dt = float(times[1] - times[0]) if dt is None else dt
    n = _check_grid(times, T, dt)
    if phi is not None and phi.dim != problem.dim:
        raise ValueError("control dimension mismatch")
    phis = _stack_controls([phi], n, problem.dim, T)
    psis = None
    if psi is not None:
        if not problem.has_jumps:
            raise ValueError("jump control given but the problem has no jumps")
        psis = _stack_controls([psi], n, problem.jump_model.n_marks, T)
    paths, corr = ldp_paths(problem, limit, phis, psis)
    costs = {"q1": q1(phi) if phi is not None else 0.0,
             "q2": q2(psi, problem.jump_model, half) if psi is not None else 0.0}
    return SkeletonSolution(times, paths[0], corr[0], costs, {"regime": "ldp", "half": half})


@dataclass(eq=False)
class LinearizedCoefficients:
    """Coefficients frozen along the limit path, cached per grid node.

    ``A[k]`` is the drift Jacobian, ``S[k]`` the diffusion matrix and
    ``G[k, j]`` the jump coefficient of mark ``j``, all at ``(X0_k, delta)``.
    """

    times: np.ndarray
    limit_path: np.ndarray
    A: np.ndarray
    S: np.ndarray
    G: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, problem: Problem, limit):
        times, xp = _limit_path(limit)
        c = problem.coeffs
        A = np.array([grad_b(c, p, EmpiricalMeasure.dirac(p)) for p in xp])
        S = c.diffusion.matrix(xp[:, None, :], xp[:, None, :])[:, 0]
        if problem.has_jumps:
            jm = problem.jump_model
            G = c.jump.per_mark(xp[:, None, :], xp[:, None, :], jm.gamma)[:, 0]
            w = jm.weights
        else:
            G = np.zeros((len(xp), 0, problem.dim))
            w = np.zeros(0)
        return cls(times, xp, np.ascontiguousarray(A), S, G, w)


def mdp_paths(lin: LinearizedCoefficients, phis, psis=None, *, domain=None):
    """Batched moderate-deviation skeleton.

    ``phis`` is ``(B, n, d)``; ``psis`` is ``(B, n, m)`` or ``None``.  With a
    ``domain`` the deviation is projected onto ``K - X0_t`` after every step;
    otherwise no correction is applied.
    """
    n = len(lin.times) - 1
    dt = float(lin.times[1] - lin.times[0])
    F = np.einsum("kij,bkj->bki", lin.S[:n], phis)
    if psis is not None and lin.G.shape[1]:
        F = F + np.einsum("kmi,bkm->bki", lin.G[:n], psis * lin.weights)
    B, d = phis.shape[0], phis.shape[2]
    if domain is None:
        V = backend.linear_recursion(lin.A[:n].copy(), np.ascontiguousarray(F), np.zeros((B, d)), dt)
        return V, np.zeros_like(V)
    V = np.zeros((B, n + 1, d))
    K = np.zeros((B, n + 1, d))
    for k in range(n):
        vhat = V[:, k] + dt * (V[:, k] @ lin.A[k].T + F[:, k])
        xn = _project(domain, lin.limit_path[k + 1] + vhat)
        V[:, k + 1] = xn - lin.limit_path[k + 1]
        K[:, k + 1] = K[:, k] + (vhat - V[:, k + 1])
    return V, K


def mdp_cost(phi_values, psi_values, weights, dt) -> float:
    """``1/2 int |phi|^2 + 1/2 int int psi^2 dnu`` for fine- or coarse-grid arrays."""
    c = 0.5 * dt * float(np.sum(np.asarray(phi_values) ** 2))
    if psi_values is not None and len(weights):
        c += 0.5 * dt * float(np.sum(np.asarray(psi_values) ** 2 * weights))
    return c


def solve_mdp_skeleton(problem: Problem, limit, phi: Control | None = None,
                       psi: ControlField | None = None, dt: float | None = None,
                       project_deviation: bool = False,
                       linearization: LinearizedCoefficients | None = None) -> SkeletonSolution:
    """Moderate-deviation skeleton (linearized dynamics, ``V_0 = 0``)."""
    times, _ = _limit_path(limit)
    T = float(times[-1])
    dt = float(times[1] - times[0]) if dt is None else dt
    n = _check_grid(times, T, dt)
    lin = linearization or LinearizedCoefficients.build(problem, limit)
    phis = _stack_controls([phi], n, problem.dim, T)
    psis = None
    if psi is not None:
        if not problem.has_jumps:
            raise ValueError("jump control given but the problem has no jumps")
        psis = _stack_controls([psi], n, problem.jump_model.n_marks, T)
    V, K = mdp_paths(lin, phis, psis, domain=problem.domain if project_deviation else None)
    costs = {"phi": q1(phi) if phi is not None else 0.0,
             "psi": (0.5 * psi.cell_dt * float(np.sum(psi.values**2 * lin.weights))) if psi is not None else 0.0}
    meta = {"regime": "mdp", "deviation_projection": bool(project_deviation),
            "correction": "projected onto K - X0" if project_deviation else "none (interior assumed)"}
    return SkeletonSolution(times, V[0], K[0], costs, meta)


@dataclass
class LevelSetReport:
    q1: float
    q2: float
    bound_q1: float
    bound_q2: float

    @property
    def flags(self):
        return (self.q1 <= self.bound_q1, self.q2 <= self.bound_q2)


def level_set_check(phi: Control | None, psi: ControlField | None, m: float, jump_model=None,
                    *, regime: str = "ldp", lam: float = 1.0, half: bool = False) -> LevelSetReport:
    """Membership of ``phi`` and ``psi`` in the energy sublevel sets of height ``m``.

    In the moderate regime the jump energy bound is ``m * lam**2``.
    """
    v1 = q1(phi) if phi is not None else 0.0
    v2 = q2(psi, jump_model, half) if psi is not None else 0.0
    b2 = m * lam**2 if regime == "mdp" else m
    return LevelSetReport(v1, v2, m, b2)


# ------------------------------------------------------------ control I/O

def write_control_csv(path, phi: Control | None = None, psi: ControlField | None = None):
    """Write ``phi`` as ``(t, phi0..)`` rows and ``psi`` to ``<path>.psi`` style rows.

    Rows give each cell's left endpoint.
    """
    if phi is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"phi{i}" for i in range(phi.dim)])
            for k, v in enumerate(phi.values):
                w.writerow([repr(k * phi.cell_dt)] + [repr(float(a)) for a in v])
    if psi is not None:
        ppath = str(path) if phi is None else str(path).replace(".csv", "") + "_psi.csv"
        with open(ppath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mark_index", "psi"])
            for k, row in enumerate(psi.values):
                for j, v in enumerate(row):
                    w.writerow([repr(k * psi.cell_dt), j, repr(float(v))])
        return ppath
    return None


def read_phi_csv(path, T: float) -> Control:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ValueError(f"{path}: expected a header starting with 't'")
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return Control(vals, T)


def read_psi_csv(path, T: float, signed: bool = False) -> ControlField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["t", "mark_index", "psi"]:
        raise ValueError(f"{path}: expected header t,mark_index,psi")
    data = np.array([[float(r[0]), int(r[1]), float(r[2])] for r in rows[1:]])
    ts = np.unique(data[:, 0])
    m = int(data[:, 1].max()) + 1
    vals = np.zeros((len(ts), m))
    idx = np.searchsorted(ts, data[:, 0])
    vals[idx, data[:, 1].astype(int)] = data[:, 2]
    return ControlField(vals, T, signed)
