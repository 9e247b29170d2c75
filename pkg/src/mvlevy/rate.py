"""Rate-function evaluation over discretized controls.

The rate of an event is approximated from above by minimizing the control
energy over piecewise-constant controls on a coarse grid, subject to the
skeleton reaching the event.  The constraint enters as a quadratic penalty
whose weight grows geometrically over a few continuation rounds; each round
is solved by a derivative-free conjugate-direction pattern search whose
line searches are evaluated as batches of candidate controls.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .dynamics import PathBundle, Problem, time_grid
from .jumps import ControlField, JumpModel, ell, q2
from .skeleton import Control, LinearizedCoefficients, ldp_paths, mdp_paths, q1


class InfeasibleEvent(RuntimeError):
    """The coarse feasibility scan could not reach the event."""


class SingularGramian(np.linalg.LinAlgError):
    """The controllability Gramian is singular: the target is unreachable."""


# ------------------------------------------------------------------ events

class Event:
    def residual(self, paths, ref):
        """Distance to the event for paths of shape ``(B, n + 1, d)``."""
        raise NotImplementedError

    def hit(self, terminal, sup_dist):
        """Indicator for simulated data: terminal states ``(..., d)``, sup distances ``(...)``."""
        raise NotImplementedError

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class Halfspace(Event):
    """Terminal event ``<a, Y_T> >= c``."""

    a: tuple
    c: float
    kind: str = field(default="halfspace", init=False)

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(np.atleast_1d(np.asarray(self.a, dtype=float)).tolist()))

    def residual(self, paths, ref):
        return np.maximum(0.0, self.c - paths[:, -1] @ np.asarray(self.a))

    def hit(self, terminal, sup_dist):
        return terminal @ np.asarray(self.a) >= self.c

    def params(self):
        return {"a": list(self.a), "c": self.c}


@dataclass(frozen=True)
class TerminalPoint(Event):
    """Terminal event ``Y_T = target`` (residual is the Euclidean miss)."""

    target: tuple
    kind: str = field(default="point", init=False)

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(np.atleast_1d(np.asarray(self.target, dtype=float)).tolist()))

    def residual(self, paths, ref):
        return np.linalg.norm(paths[:, -1] - np.asarray(self.target), axis=-1)

    def hit(self, terminal, sup_dist):
        raise ValueError("a terminal point has probability zero; use a halfspace event")

    def params(self):
        return {"target": list(self.target)}


@dataclass(frozen=True)
class SupNorm(Event):
    """Path event ``sup_t |Y_t - ref_t| >= delta``.

    ``relative`` measures against the limit path (large deviations) and
    against 0 otherwise.  In the moderate regime the skeleton is already a
    deviation, so the distance is always ``sup_t |V_t|``.
    """

    delta: float
    relative: bool = True
    kind: str = field(default="supnorm", init=False)

    def residual(self, paths, ref):
        return np.maximum(0.0, self.delta - np.sqrt(np.max(np.sum((paths - ref) ** 2, axis=-1), axis=-1)))

    def hit(self, terminal, sup_dist):
        return sup_dist >= self.delta

    def params(self):
        return {"delta": self.delta, "relative": self.relative}


# ------------------------------------------------------------------- costs

def control_cost(phi: Control | None, psi: ControlField | None, regime: str,
                 jump_model: JumpModel | None = None, half: bool = False) -> float:
    """Energy of a control pair in the given regime."""
    if regime == "ldp":
        c = q1(phi) if phi is not None else 0.0
        if psi is not None:
            c += q2(psi, jump_model, half)
        return c
    if regime == "mdp":
        c = q1(phi) if phi is not None else 0.0
        if psi is not None:
            if psi.n_marks != jump_model.n_marks:
                raise ValueError("control field and jump model disagree on the mark grid")
            c += 0.5 * psi.cell_dt * float(np.sum(psi.values**2 * jump_model.weights))
        return c
    raise ValueError(f"unknown regime {regime!r}")


# ---------------------------------------------------------------- queries

@dataclass
class RateQuery:
    regime: str
    event: Event
    control_cells: int = 10
    use_jumps: bool = True
    restarts: int = 3
    rounds: int = 4
    penalty0: float = 10.0
    penalty_factor: float = 10.0
    maxiter: int = 100
    seed: int = 0
    half: bool = False
    feasibility_tol: float = 1e-4
    start_scale: float = 0.5
    project_deviation: bool = False

    def __post_init__(self):
        if self.regime not in ("ldp", "mdp"):
            raise ValueError("regime must be 'ldp' or 'mdp'")
        if self.control_cells < 1 or self.restarts < 1 or self.rounds < 1:
            raise ValueError("control_cells, restarts and rounds must be >= 1")


@dataclass
class RateResult:
    value: float
    phi: Control | None
    psi: ControlField | None
    residual: float
    feasible: bool
    diagnostics: dict

    header = ("value", "residual", "feasible", "converged", "evaluations", "best_start")

    def row(self):
        d = self.diagnostics
        return (self.value, self.residual, int(self.feasible), int(d.get("converged", False)),
                d.get("evaluations", 0), d.get("best_start", -1))

    def to_csv(self, path, control_path=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            w.writerow([repr(v) if isinstance(v, float) else v for v in self.row()])
            w.writerow([])
            w.writerow(("start", "round", "penalty", "objective", "cost", "residual"))
            for rec in self.diagnostics.get("trace", []):
                w.writerow([rec[0], rec[1], repr(rec[2]), repr(rec[3]), repr(rec[4]), repr(rec[5])])
        if control_path is not None and (self.phi is not None or self.psi is not None):
            from .skeleton import write_control_csv
            return write_control_csv(control_path, self.phi, self.psi)
        return None


class _Transcription:
    """Decision vector <-> controls, skeleton evaluation and energies."""

    def __init__(self, problem: Problem, limit, query: RateQuery):
        if isinstance(limit, PathBundle):
            self.times, self.x0path = limit.times, limit.states[0, 0]
        else:
            self.times, self.x0path = (np.asarray(a, dtype=float) for a in limit)
        self.problem, self.query = problem, query
        self.T = float(self.times[-1])
        self.n = len(self.times) - 1
        time_grid(self.T, float(self.times[1] - self.times[0]))
        M = query.control_cells
        if self.n % M:
            raise ValueError(f"{M} control cells do not divide {self.n} steps")
        self.M, self.block = M, self.n // M
        self.cell_dt = self.T / M
        self.d = problem.dim
        self.m = problem.jump_model.n_marks if (problem.has_jumps and query.use_jumps) else 0
        self.size = M * (self.d + self.m)
        self.evaluations = 0
        if query.regime == "mdp":
            self.lin = LinearizedCoefficients.build(problem, (self.times, self.x0path))
            self.ref = np.zeros_like(self.x0path)
        else:
            self.ref = self.x0path if getattr(query.event, "relative", True) else np.zeros_like(self.x0path)

    def unpack(self, theta):
        theta = np.atleast_2d(theta)
        B = theta.shape[0]
        nphi = self.M * self.d
        phi = theta[:, :nphi].reshape(B, self.M, self.d)
        psi = None
        if self.m:
            eta = theta[:, nphi:].reshape(B, self.M, self.m)
            psi = np.exp(eta) if self.query.regime == "ldp" else eta
        return phi, psi

    def paths(self, theta):
        phi, psi = self.unpack(theta)
        self.evaluations += phi.shape[0]
        phis = np.repeat(phi, self.block, axis=1)
        psis = None if psi is None else np.repeat(psi, self.block, axis=1)
        if self.query.regime == "ldp":
            return ldp_paths(self.problem, (self.times, self.x0path), phis, psis)[0]
        dom = self.problem.domain if self.query.project_deviation else None
        return mdp_paths(self.lin, phis, psis, domain=dom)[0]

    def costs(self, theta):
        phi, psi = self.unpack(theta)
        c = 0.5 * self.cell_dt * np.sum(phi**2, axis=(1, 2))
        if psi is not None:
            w = self.problem.jump_model.weights
            if self.query.regime == "ldp":
                e = self.cell_dt * np.sum(ell(psi) * w, axis=(1, 2))
                c = c + (0.5 * e if self.query.half else e)
            else:
                c = c + 0.5 * self.cell_dt * np.sum(psi**2 * w, axis=(1, 2))
        return c

    def residuals(self, theta):
        return self.query.event.residual(self.paths(theta), self.ref)

    def controls(self, theta):
        phi, psi = self.unpack(theta)
        ctrl = Control(phi[0], self.T)
        field_ = None if psi is None else ControlField(psi[0], self.T, signed=self.query.regime == "mdp")
        return ctrl, field_


_STEPS = 2.0 ** np.arange(-6, 5)


def _line_search(fb, x, fx, u, h):
    """Batched minimization of ``s -> f(x + s u)``.

    A symmetric geometric scan of steps around 0 is evaluated in one batch,
    then a second batch refines around the best step, including the vertex of
    the parabola through it and its neighbours.
    """
    steps = h * np.concatenate([-_STEPS[::-1], _STEPS])
    F = fb(x + steps[:, None] * u)
    s_all = np.concatenate([[0.0], steps])
    f_all = np.concatenate([[fx], F])
    order = np.argsort(s_all, kind="stable")
    s_all, f_all = s_all[order], f_all[order]
    i = int(np.argmin(f_all))
    if 0 < i < len(s_all) - 1:
        s0, s1, s2 = s_all[i - 1:i + 2]
        f0, f1, f2 = f_all[i - 1:i + 2]
        den = (s1 - s0) * (f1 - f2) - (s1 - s2) * (f1 - f0)
        cand = []
        if den != 0:
            cand.append(s1 - 0.5 * ((s1 - s0) ** 2 * (f1 - f2) - (s1 - s2) ** 2 * (f1 - f0)) / den)
        gap = min(s1 - s0, s2 - s1)
        cand += [s1 + sg * gap * fr for sg in (-1, 1) for fr in (0.5, 0.25, 0.125)]
        cand = np.array(cand)
        Fc = fb(x + cand[:, None] * u)
        j = int(np.argmin(Fc))
        if Fc[j] < f_all[i]:
            return float(cand[j]), float(Fc[j])
    return float(s_all[i]), float(f_all[i])


def _pattern_descent(fb, x0, h0, maxiter, ftol=1e-12, direc=None):
    """Conjugate-direction pattern search with batched line searches.

    Sweeps the current direction set, then tries the overall move of the
    sweep as a new direction (Powell's replacement rule).  Step lengths
    shrink when a direction yields no progress.

    Returns ``(x, f, direc, converged)``.
    """
    n = len(x0)
    x = np.array(x0, dtype=float)
    fx = float(fb(x[None])[0])
    direc = np.eye(n) if direc is None else np.array(direc, dtype=float)
    steps = np.full(n, float(h0))
    for _ in range(maxiter):
        x_start, f_start = x.copy(), fx
        big, ibig = 0.0, 0
        for i in range(n):
            s, f = _line_search(fb, x, fx, direc[i], steps[i])
            if f < fx:
                if fx - f > big:
                    big, ibig = fx - f, i
                x = x + s * direc[i]
                fx = f
                steps[i] = max(abs(s), 1e-12)
            else:
                steps[i] *= 0.25
        if 2.0 * (f_start - fx) <= ftol * (abs(f_start) + abs(fx)) + 1e-300:
            return x, fx, direc, True
        move = x - x_start
        nrm = np.linalg.norm(move)
        if nrm == 0:
            continue
        f_ext = float(fb((2 * x - x_start)[None])[0])
        if f_ext < f_start:
            t = 2.0 * (f_start - 2.0 * fx + f_ext) * (f_start - fx - big) ** 2 - big * (f_start - f_ext) ** 2
            if t < 0:
                u = move / nrm
                s, f = _line_search(fb, x, fx, u, nrm)
                if f < fx:
                    x, fx = x + s * u, f
                direc[ibig] = direc[-1]
                direc[-1] = u
                steps[ibig] = steps[-1]
                steps[-1] = max(abs(s), nrm)
    return x, fx, direc, False


def _feasibility_scan(tr: _Transcription, seed):
    """Minimize the squared residual from a few starts; returns the best residual."""
    zero = np.zeros(tr.size)
    r0 = float(tr.residuals(zero)[0])
    if r0 == 0.0:
        return 0.0, zero
    best, arg = r0, zero
    gen = _rng.stream(seed, "rate_feasibility")
    starts = [zero] + [gen.normal(0.0, 1.0, tr.size) for _ in range(2)]
    for s in starts:
        x, _, _, _ = _pattern_descent(lambda th: tr.residuals(th) ** 2, s, 1.0, 10)
        r = float(tr.residuals(x)[0])
        if r < best:
            best, arg = r, x
        if best <= tr.query.feasibility_tol:
            break
    return best, arg


def _solve_start(tr: _Transcription, start: int, x0):
    q = tr.query
    theta = x0.copy()
    trace = []
    converged = True
    P = q.penalty0
    direc = None
    for rnd in range(q.rounds):
        def obj(th, P=P):
            r = tr.residuals(th)
            return tr.costs(th) + P * r * r
        theta, fval, direc, conv = _pattern_descent(obj, theta, q.start_scale, q.maxiter, direc=direc)
        converged = converged and conv
        cost = float(tr.costs(theta[None])[0])
        r = float(tr.residuals(theta[None])[0])
        trace.append((start, rnd, P, fval, cost, r))
        P *= q.penalty_factor
    return theta, trace, converged


def minimize_rate(query: RateQuery, problem: Problem, limit, workers: int = 1) -> RateResult:
    """Upper bound on the rate of ``query.event`` over coarse piecewise-constant controls."""
    tr = _Transcription(problem, limit, query)
    r_feas, theta_feas = _feasibility_scan(tr, query.seed)
    if r_feas > query.feasibility_tol:
        return RateResult(np.inf, None, None, r_feas, False,
                          {"reason": "event not reached by the feasibility scan",
                           "evaluations": tr.evaluations, "converged": False})
    zero = np.zeros(tr.size)
    if float(tr.residuals(zero)[0]) == 0.0:
        phi, psi = tr.controls(zero)
        return RateResult(0.0, phi, psi, 0.0, True,
                          {"evaluations": tr.evaluations, "converged": True, "best_start": 0,
                           "trace": [], "reason": "null control reaches the event"})

    starts = [zero]
    for i in range(1, query.restarts):
        gen = _rng.stream(query.seed, "rate_start", i)
        starts.append(theta_feas + gen.normal(0.0, query.start_scale, tr.size))

    def run(i):
        # each start gets its own transcription so evaluation counters do not race
        local = _Transcription(problem, limit, query) if workers > 1 else tr
        return (*_solve_start(local, i, starts[i]), local.evaluations if local is not tr else 0)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(run, range(len(starts))))
    else:
        outs = [run(i) for i in range(len(starts))]

    tol = max(query.feasibility_tol, 1e-3)
    ranked = []
    for i, (theta, trace, conv, _) in enumerate(outs):
        cost = float(tr.costs(theta[None])[0])
        r = float(tr.residuals(theta[None])[0])
        ranked.append((r > tol, cost if r <= tol else cost + r, i, theta, conv, r, cost))
    ranked.sort(key=lambda t: (t[0], t[1], t[2]))
    _, _, best, theta, conv, r, cost = ranked[0]
    phi, psi = tr.controls(theta)
    trace = [rec for o in outs for rec in o[1]]
    evals = tr.evaluations + sum(o[3] for o in outs)
    return RateResult(cost, phi, psi, r, r <= tol,
                      {"evaluations": evals, "converged": conv, "best_start": best,
                       "trace": trace, "start_values": [t[6] for t in sorted(ranked, key=lambda t: t[2])]})


# ----------------------------------------------------------------- oracle

def _as_path(a, n1, shape):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a * np.eye(shape[0]) if len(shape) == 2 and shape[0] == shape[1] else np.full(shape, float(a))
    if a.shape == shape:
        a = np.broadcast_to(a, (n1,) + shape)
    if a.shape[1:] != shape:
        raise ValueError(f"expected path of shape (n+1,) + {shape}")
    return a


def _propagated_inputs(a_path, sigma_path, jump_path, weights, d, T, dt):
    n = len(time_grid(T, dt)) - 1
    A = _as_path(a_path, n + 1, (d, d))
    S = _as_path(sigma_path, n + 1, (d, d))
    m = 0
    if jump_path is not None:
        Gj = np.asarray(jump_path, dtype=float)
        if Gj.ndim == 2:
            Gj = np.broadcast_to(Gj, (n + 1,) + Gj.shape)
        w = np.asarray(weights, dtype=float)
        m = Gj.shape[1]
    # B_k = [S_k | sqrt(nu_j) G_kj], propagated by P_{k+1} = prod_{i > k} (I + A_i dt)
    P = np.eye(d)
    props = np.empty((n, d, d))
    for k in range(n - 1, -1, -1):
        props[k] = P
        P = P @ (np.eye(d) + dt * A[k])
    Bs = [S[:n]]
    if m:
        Bs.append(np.transpose(Gj[:n] * np.sqrt(w)[None, :, None], (0, 2, 1)))
    PB = props @ np.concatenate(Bs, axis=2)  # (n, d, d + m)
    return PB, (w if m else None), m


def controllability_gramian(a_path, sigma_path, jump_path=None, weights=None, T=1.0, dt=0.01, dim=1):
    """Discrete Gramian ``sum_k P_{k+1} B_k B_k^T P_{k+1}^T dt`` of the Euler recursion."""
    PB, _, _ = _propagated_inputs(a_path, sigma_path, jump_path, weights, dim, T, dt)
    return np.einsum("kij,klj->il", PB, PB) * dt


def lq_oracle(a_path, sigma_path, jump_path=None, weights=None, v=1.0, T=1.0, dt=0.01):
    """Minimum-energy control of the linearized skeleton to ``V_T = v``.

    Uses the discrete transition matrices of the explicit Euler recursion,
    so the result is exact for the discretized problem.

    Parameters
    ----------
    a_path : scalar, (d, d) or (n + 1, d, d)
        Drift Jacobian along the limit path.
    sigma_path : scalar, (d, d) or (n + 1, d, d)
    jump_path : (m, d) or (n + 1, m, d), optional
        Jump coefficient of each mark.
    weights : (m,), optional
        Intensity of each mark.

    Returns
    -------
    value : float
    phi : ndarray, shape (n, d)
    psi : ndarray, shape (n, m)
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    d = v.shape[0]
    PB, w, m = _propagated_inputs(a_path, sigma_path, jump_path, weights, d, T, dt)
    n = PB.shape[0]
    gram = np.einsum("kij,klj->il", PB, PB) * dt
    if np.allclose(v, 0.0):
        return 0.0, np.zeros((n, d)), np.zeros((n, m))
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
        raise SingularGramian("controllability Gramian is singular; target unreachable")
    lam = np.linalg.solve(gram, v)
    u = np.einsum("kji,j->ki", PB, lam)  # (n, d + m)
    phi = u[:, :d]
    psi = u[:, d:] / np.sqrt(w) if m else np.zeros((n, 0))
    value = 0.5 * float(v @ lam)
    return value, phi, psi


def _frozen_inputs(problem: Problem, limit):
    lin = LinearizedCoefficients.build(problem, limit)
    T = float(lin.times[-1])
    dt = float(lin.times[1] - lin.times[0])
    if problem.has_jumps:
        return lin, (lin.A, lin.S, lin.G, lin.weights), T, dt
    return lin, (lin.A, lin.S, None, None), T, dt


def lq_oracle_for(problem: Problem, limit, v):
    """LQ oracle with coefficients frozen along the limit path of ``problem``."""
    _, args, T, dt = _frozen_inputs(problem, limit)
    return lq_oracle(*args, v=v, T=T, dt=dt)


def lq_event_value(problem: Problem, limit, event: Event, regime: str, use_jumps: bool = True):
    """Closed-form rate of a terminal event when the skeleton is linear.

    Returns ``None`` when no closed form applies: path events, a constrained
    domain, or (large deviations) a drift that is not affine in the state,
    a state-dependent diffusion or an active jump control.
    """
    from .coefficients import ConstantDiffusion, ConstantDrift, LinearDrift, ZeroDiffusion, ZeroDrift

    if not isinstance(event, (Halfspace, TerminalPoint)) or problem.domain.kind != "whole":
        return None
    c = problem.coeffs
    if regime == "ldp":
        if not isinstance(c.drift, (LinearDrift, ZeroDrift, ConstantDrift)):
            return None
        if not isinstance(c.diffusion, (ConstantDiffusion, ZeroDiffusion)):
            return None
        if problem.has_jumps and use_jumps:
            return None
    lin, (A, S, G, w), T, dt = _frozen_inputs(problem, limit)
    if not use_jumps:
        G = w = None
    base = lin.limit_path[-1] if regime == "ldp" else np.zeros(problem.dim)
    if isinstance(event, TerminalPoint):
        return lq_oracle(A, S, G, w, np.asarray(event.target) - base, T, dt)[0]
    a = np.asarray(event.a)
    gap = event.c - float(a @ base)
    if gap <= 0:
        return 0.0
    gram = controllability_gramian(A, S, G, w, T, dt, problem.dim)
    q = float(a @ gram @ a)
    if q <= 0:
        raise SingularGramian("event direction is not controllable")
    return 0.5 * gap * gap / q
