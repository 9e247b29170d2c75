"""Projected Euler-Maruyama solvers for the reflected mean-field system.

One step of every solver reads::

    X_hat = X + b_eps(X, mu) dt + sqrt(eps) sigma_eps(X, mu) dW
              + eps * sum_jumps G_eps(X, mu, z) - dt * int G_eps(X, mu, z) nu(dz)
    X_new = P_K(X_hat),    K_new = K + (X_hat - X_new)

so ``X = x0 + int(...) - K`` and each increment of ``K`` is an exterior
normal at the new state.  The empirical law ``mu`` is taken from the
start-of-step states of the particle cloud.

Replicas are processed in fixed-size chunks, each with its own seed
streams, and reduced in chunk order.  Results therefore do not depend on
the number of worker threads.
"""
from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .coefficients import KernelCoefficients, PerturbationFamily, _direction_vec
from .geometry import ConvexDomain, DomainError
from .jumps import JumpLog, JumpModel

CHUNK_ELEMENTS = 65536
CONTAINMENT_RTOL = 1e-9


@dataclass(eq=False)
class Problem:
    """Everything that defines the dynamics apart from the noise level."""

    domain: ConvexDomain
    coeffs: KernelCoefficients
    jump_model: JumpModel | None = None
    family: PerturbationFamily = field(default_factory=PerturbationFamily)
    x0: np.ndarray | None = None

    def __post_init__(self):
        d = self.coeffs.dim
        if self.domain.dim != d:
            raise ValueError("domain and coefficients disagree on dimension")
        self.x0 = np.zeros(d) if self.x0 is None else np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.x0.shape != (d,):
            raise ValueError(f"x0 must have length {d}")
        if not bool(self.domain.contains(self.x0)):
            raise DomainError("x0 lies outside the closed domain")
        if self.coeffs.jump is not None and self.jump_model is None:
            raise ValueError("a jump kernel needs a jump model")

    @property
    def dim(self) -> int:
        return self.coeffs.dim

    @property
    def has_jumps(self) -> bool:
        return self.coeffs.jump is not None and self.jump_model is not None


@dataclass(frozen=True)
class ModerateScale:
    """``lambda(eps) = eps**theta``.  ``theta = 0`` is the large-deviation regime."""

    theta: float

    def __post_init__(self):
        if not 0 <= self.theta < 0.5:
            raise ValueError("theta must lie in [0, 1/2)")

    def lam(self, eps):
        return np.power(np.asarray(eps, dtype=float), self.theta)

    def speed(self, eps):
        """``eps / lambda(eps)**2``."""
        return np.power(np.asarray(eps, dtype=float), 1.0 - 2.0 * self.theta)


@dataclass(eq=False)
class PathBundle:
    """Stored trajectories.

    ``states`` and ``corrections`` have shape ``(R, N, n + 1, d)``: replicas,
    particles, time nodes, components.  ``jump_logs[r][i]`` is the jump log of
    particle ``i`` in replica ``r`` (times are step start times).
    """

    times: np.ndarray
    states: np.ndarray
    corrections: np.ndarray
    epsilon: float
    seed: int | None
    scheme: dict
    jump_logs: list | None = None

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def replicas(self) -> int:
        return self.states.shape[0]

    @property
    def particles(self) -> int:
        return self.states.shape[1]

    def path(self, replica=0, particle=0):
        return self.states[replica, particle], self.corrections[replica, particle]

    def cloud(self, k, replica=0):
        return self.states[replica, :, k]

    def header(self):
        d = self.states.shape[-1]
        return (["replica", "particle", "t"] + [f"x{i}" for i in range(d)]
                + [f"k{i}" for i in range(d)])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            R, N, n1, _ = self.states.shape
            for r in range(R):
                for i in range(N):
                    for k in range(n1):
                        w.writerow([r, i, repr(float(self.times[k]))]
                                   + [repr(float(v)) for v in self.states[r, i, k]]
                                   + [repr(float(v)) for v in self.corrections[r, i, k]])


def time_grid(T: float, dt: float) -> np.ndarray:
    if not (T > 0 and dt > 0):
        raise ValueError("T and dt must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-12 * max(1.0, T):
        raise ValueError(f"dt={dt} does not divide T={T}")
    return np.linspace(0.0, T, n + 1)


def _check_eps(eps):
    if not 0 <= eps <= 1:
        raise ValueError("epsilon must lie in [0, 1]")


# ------------------------------------------------------------------ kernels

def _assert_inside(domain, x):
    if not np.all(domain.contains(x, CONTAINMENT_RTOL)):
        raise AssertionError("projected state left the domain")


def _project(domain, xhat, check=True):
    if domain.kind == "whole":
        return xhat
    xn = domain.project(xhat)
    if check:
        _assert_inside(domain, xn)
    return xn


def _noise_increment(problem: Problem, eps, x, cloud, dt, dW, counts):
    """Everything in one step except the drift: diffusion and compensated jumps."""
    c, fam = problem.coeffs, problem.family
    out = 0.0
    if eps > 0 and dW is not None:
        out = np.sqrt(eps) * (c.diffusion.apply(x, cloud, dW) + fam.sigma_shift_apply(eps, x, dW))
    if eps > 0 and counts is not None:
        jm = problem.jump_model
        base = c.jump.base(x, cloud)
        jump = eps * ((counts @ jm.gamma)[..., None] * base)
        comp = dt * float(jm.weights @ jm.gamma) * base
        rho = float(fam.rho_G(eps))
        if rho != 0.0 and fam.h_G != "none":
            h = _direction_vec(fam.h_G, x)
            jump = jump + eps * rho * (counts @ jm.L3)[..., None] * h
            comp = comp + dt * rho * float(jm.weights @ jm.L3) * h
        out = out + (jump - comp)
    return out


def _drift(problem: Problem, eps, x, cloud):
    return problem.coeffs.drift.mean_field(x, cloud) + problem.family.drift_shift(eps, x)


def _step(problem, eps, x, cloud, dt, dW, counts, control_phi=None):
    incr = _drift(problem, eps, x, cloud) * dt + _noise_increment(problem, eps, x, cloud, dt, dW, counts)
    if control_phi is not None:
        fam = problem.family
        sig = problem.coeffs.diffusion.apply(x, cloud, control_phi) + fam.sigma_shift_apply(eps, x, control_phi)
        incr = incr + dt * sig
    xhat = x + incr
    xn = _project(problem.domain, xhat)
    return xn, xhat - xn


def _jump_exits(problem, eps, x, cloud, counts):
    """Number of particles whose accumulated jump alone leaves the domain."""
    if counts is None or eps == 0:
        return 0
    moved = np.any(counts > 0, axis=-1)
    if not np.any(moved):
        return 0
    base = problem.coeffs.jump.base(x, cloud)
    y = x + eps * (counts @ problem.jump_model.gamma)[..., None] * base
    return int(np.sum(moved & ~problem.domain.contains(y)))


# ---------------------------------------------------------- deterministic

def _deterministic(problem: Problem, times, measure_path=None, forcing=None, batch=1):
    """Projected Euler for ``dY = (b(Y, mu_t) + f_k(Y)) dt - dK``.

    ``measure_path`` of shape ``(n + 1, d)`` freezes the law to the Dirac mass
    at that path; otherwise the law is the Dirac mass at the state itself.
    ``forcing(k, y, cloud)`` returns the extra drift at step ``k``.
    """
    d, n = problem.dim, len(times) - 1
    dt = times[1] - times[0]
    x = np.broadcast_to(problem.x0, (batch, 1, d)).copy()
    states = np.empty((batch, n + 1, d))
    corr = np.zeros((batch, n + 1, d))
    states[:, 0] = x[:, 0]
    drift = problem.coeffs.drift
    for k in range(n):
        cloud = x if measure_path is None else measure_path[k][None, None, :]
        f = drift.mean_field(x, cloud)
        if forcing is not None:
            f = f + forcing(k, x, cloud)
        xhat = x + f * dt
        xn = _project(problem.domain, xhat, check=False)
        corr[:, k + 1] = corr[:, k] + (xhat - xn)[:, 0]
        x = xn
        states[:, k + 1] = x[:, 0]
    _assert_inside(problem.domain, states)
    return states, corr


def solve_limit(problem: Problem, T: float, dt: float) -> PathBundle:
    """Deterministic limit path with its correction process."""
    times = time_grid(T, dt)
    s, k = _deterministic(problem, times)
    return PathBundle(times, s[:, None], k[:, None], 0.0, None,
                      {"scheme": "projected_euler", "kind": "limit"})


# -------------------------------------------------------------- stochastic

@dataclass
class _RunSpec:
    problem: Problem
    eps: float
    times: np.ndarray
    particles: int
    seed: int
    store: bool = False
    reference: np.ndarray | None = None
    phi: np.ndarray | None = None          # (n, d) fine-grid control
    psi: np.ndarray | None = None          # (n, m) fine-grid control field
    control_reference: np.ndarray | None = None


def chunk_layout(replicas: int, particles: int, dim: int):
    per = max(1, CHUNK_ELEMENTS // max(1, particles * dim))
    sizes = [per] * (replicas // per)
    if replicas % per:
        sizes.append(replicas % per)
    return sizes


def _thin(counts, psi_k, lam, gen_thin, gen_extra):
    """Controlled counts from base counts at ratio ``psi_k``.

    Marks with ``psi < 1`` are thinned binomially; marks with ``psi > 1``
    receive extra independent Poisson points.  ``psi == 1`` leaves the base
    counts untouched, so the null control reproduces them exactly.
    """
    out = counts
    low = psi_k < 1.0
    if np.any(low):
        p = np.where(low, psi_k, 1.0)
        thinned = gen_thin.binomial(counts, np.broadcast_to(p, counts.shape))
        out = np.where(low, thinned, counts)
    high = psi_k > 1.0
    if np.any(high):
        extra = gen_extra.poisson(np.broadcast_to(np.where(high, psi_k - 1.0, 0.0) * lam, counts.shape))
        out = out + extra
    return out


def _run_chunk(spec: _RunSpec, chunk: int, R: int):
    pb, eps, times = spec.problem, spec.eps, spec.times
    n, d, N = len(times) - 1, pb.dim, spec.particles
    dt = times[1] - times[0]
    sq = np.sqrt(dt)
    g_w = _rng.stream(spec.seed, "brownian", chunk)
    g_j = _rng.stream(spec.seed, "jumps", chunk)
    g_t = _rng.stream(spec.seed, "thinning", chunk)
    g_x = _rng.stream(spec.seed, "jumps_extra", chunk)
    jumps = pb.has_jumps and eps > 0
    lam = pb.jump_model.weights * dt / eps if jumps else None
    m = pb.jump_model.n_marks if jumps else 0
    controlled = spec.phi is not None or spec.psi is not None

    x = np.broadcast_to(pb.x0, (R, N, d)).copy()
    ktot = np.zeros((R, N, d))
    kvar = np.zeros((R, N))
    z = x.copy() if controlled else None
    out = {"exits": 0}
    if spec.store:
        S = np.empty((R, N, n + 1, d))
        Kp = np.zeros((R, N, n + 1, d))
        S[:, :, 0] = x
        logs = [[([], []) for _ in range(N)] for _ in range(R)]
        if controlled:
            SZ = np.empty((R, N, n + 1, d))
            KZ = np.zeros((R, N, n + 1, d))
            SZ[:, :, 0] = z
    sup = None
    if spec.reference is not None:
        sup = np.sum((x - spec.reference[0]) ** 2, axis=-1)
    zsup = None
    if controlled and spec.control_reference is not None:
        zsup = np.sum((z - spec.control_reference[0]) ** 2, axis=-1)

    for k in range(n):
        dW = g_w.standard_normal((R, N, d)) * sq if eps > 0 else None
        counts = g_j.poisson(lam, size=(R, N, m)) if jumps else None
        if controlled:
            phi_k = spec.phi[k] if spec.phi is not None else None
            zc = counts
            if jumps and spec.psi is not None:
                zc = _thin(counts, spec.psi[k], lam, g_t, g_x)
            zn, dkz = _step(pb, eps, z, x, dt, dW, zc, phi_k)
        out["exits"] += _jump_exits(pb, eps, x, x, counts)
        xn, dk = _step(pb, eps, x, x, dt, dW, counts)
        x = xn
        ktot += dk
        kvar += np.linalg.norm(dk, axis=-1)
        if controlled:
            z = zn
        if spec.store:
            S[:, :, k + 1] = x
            Kp[:, :, k + 1] = ktot
            if controlled:
                SZ[:, :, k + 1] = z
                KZ[:, :, k + 1] = KZ[:, :, k] + dkz
            if jumps:
                for r, i, j in zip(*np.nonzero(counts)):
                    logs[r][i][0].extend([times[k]] * int(counts[r, i, j]))
                    logs[r][i][1].extend([j] * int(counts[r, i, j]))
        if sup is not None:
            np.maximum(sup, np.sum((x - spec.reference[k + 1]) ** 2, axis=-1), out=sup)
        if zsup is not None:
            np.maximum(zsup, np.sum((z - spec.control_reference[k + 1]) ** 2, axis=-1), out=zsup)

    out.update(terminal=x, kvar=kvar, sup=sup, zterminal=z, zsup=zsup)
    if spec.store:
        out.update(states=S, corrections=Kp)
        if controlled:
            out.update(zstates=SZ, zcorrections=KZ)
        if jumps:
            out["logs"] = [[JumpLog(np.asarray(t, dtype=float), np.asarray(j, dtype=int), pb.jump_model)
                            for t, j in row] for row in logs]
    return out


def _run(spec: _RunSpec, replicas: int, workers: int = 1):
    sizes = chunk_layout(replicas, spec.particles, spec.problem.dim)
    workers = max(1, int(workers))
    if workers == 1 or len(sizes) == 1:
        parts = [_run_chunk(spec, c, r) for c, r in enumerate(sizes)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda cr: _run_chunk(spec, *cr), enumerate(sizes)))
    merged = {"exits": int(sum(p["exits"] for p in parts))}
    for key in parts[0]:
        if key == "exits":
            continue
        vals = [p[key] for p in parts]
        if vals[0] is None:
            merged[key] = None
        elif key == "logs":
            merged[key] = [row for v in vals for row in v]
        else:
            merged[key] = np.concatenate(vals, axis=0)
    return merged


def _control_arrays(phi, psi, n, problem):
    d = problem.dim
    phi_a = None
    if phi is not None:
        phi_a = phi.on_grid(n) if hasattr(phi, "on_grid") else np.asarray(phi, dtype=float)
        phi_a = np.broadcast_to(phi_a.reshape(-1, d) if phi_a.ndim else phi_a, (n, d)).astype(float)
    psi_a = None
    if psi is not None:
        if not problem.has_jumps:
            raise ValueError("a jump control field needs a jump model")
        m = problem.jump_model.n_marks
        psi_a = psi.on_grid(n) if hasattr(psi, "on_grid") else np.asarray(psi, dtype=float)
        psi_a = np.broadcast_to(psi_a, (n, m)).astype(float)
        if np.any(psi_a < 0):
            raise ValueError("jump control must be nonnegative")
    return phi_a, psi_a


def simulate_particles(problem: Problem, T: float, dt: float, epsilon: float, n_particles: int,
                       rng_seed: int, replicas: int = 1, workers: int = 1) -> PathBundle:
    """Simulate ``replicas`` independent clouds of ``n_particles`` particles.

    ``epsilon = 0`` is accepted and gives the noiseless particle system.
    """
    _check_eps(epsilon)
    if n_particles < 1 or replicas < 1:
        raise ValueError("need at least one particle and one replica")
    times = time_grid(T, dt)
    spec = _RunSpec(problem, float(epsilon), times, int(n_particles), int(rng_seed), store=True)
    res = _run(spec, replicas, workers)
    bundle = PathBundle(times, res["states"], res["corrections"], float(epsilon), int(rng_seed),
                        _scheme(problem, n_particles, res), res.get("logs"))
    return bundle


def _scheme(problem, n_particles, res):
    meta = {"scheme": "projected_euler_maruyama", "particles": n_particles,
            "chunk_elements": CHUNK_ELEMENTS, "jump_exits": res["exits"]}
    if res["exits"]:
        warnings.warn(f"{res['exits']} jump(s) left the domain before projection", RuntimeWarning)
    return meta


def simulate_controlled(problem: Problem, companion: PathBundle, phi=None, psi=None,
                        workers: int = 1) -> PathBundle:
    """Controlled paths driven by the same noise as ``companion``.

    Each controlled particle shares its Brownian increments and base Poisson
    counts with the companion particle of the same index, and its
    coefficients are evaluated against the companion (uncontrolled) cloud.
    ``phi`` shifts the drift by ``sigma_eps phi``; ``psi`` rescales the jump
    intensity through thinning.  With the null control the result equals the
    companion bit for bit.
    """
    if companion.seed is None:
        raise ValueError("companion bundle has no seed (is it a limit path?)")
    times = companion.times
    n = len(times) - 1
    phi_a, psi_a = _control_arrays(phi, psi, n, problem)
    if phi_a is None and psi_a is None:
        phi_a = np.zeros((n, problem.dim))
    spec = _RunSpec(problem, companion.epsilon, times, companion.particles, companion.seed,
                    store=True, phi=phi_a, psi=psi_a)
    res = _run(spec, companion.replicas, workers)
    if not np.array_equal(res["states"], companion.states):
        raise ValueError("companion law does not match this problem, grid or seed")
    return PathBundle(times, res["zstates"], res["zcorrections"], companion.epsilon, companion.seed,
                      dict(_scheme(problem, companion.particles, res), controlled=True))


def moderate_rescale(bundle_eps: PathBundle, bundle_limit: PathBundle, scale: ModerateScale) -> np.ndarray:
    """``(X_eps - X0) / lambda(eps)`` for every stored particle path."""
    if bundle_eps.times.shape != bundle_limit.times.shape or not np.allclose(
            bundle_eps.times, bundle_limit.times, rtol=0, atol=1e-12):
        raise ValueError("bundles do not share the time grid")
    ref = bundle_limit.states[0, 0]
    return (bundle_eps.states - ref) / float(scale.lam(bundle_eps.epsilon))


@dataclass
class EnsembleStats:
    """Streaming summaries of a replica ensemble (no path storage).

    Arrays have leading shape ``(R, N)``.  ``sup_sq`` is the running maximum
    of ``|X_t - reference_t|^2``; the ``control_*`` fields refer to the
    coupled controlled paths.
    """

    epsilon: float
    terminal: np.ndarray
    k_variation: np.ndarray
    sup_sq: np.ndarray | None
    control_terminal: np.ndarray | None
    control_sup_sq: np.ndarray | None
    jump_exits: int


def run_ensemble(problem: Problem, T: float, dt: float, epsilon: float, replicas: int,
                 particles: int, rng_seed: int, *, reference=None, phi=None, psi=None,
                 control_reference=None, workers: int = 1) -> EnsembleStats:
    _check_eps(epsilon)
    times = time_grid(T, dt)
    n = len(times) - 1
    for ref in (reference, control_reference):
        if ref is not None and np.shape(ref)[0] != n + 1:
            raise ValueError("reference path does not match the time grid")
    phi_a, psi_a = _control_arrays(phi, psi, n, problem)
    if control_reference is not None and phi_a is None and psi_a is None:
        phi_a = np.zeros((n, problem.dim))
    spec = _RunSpec(problem, float(epsilon), times, int(particles), int(rng_seed),
                    reference=None if reference is None else np.asarray(reference, dtype=float),
                    phi=phi_a, psi=psi_a,
                    control_reference=None if control_reference is None else np.asarray(control_reference, dtype=float))
    res = _run(spec, replicas, workers)
    return EnsembleStats(float(epsilon), res["terminal"], res["kvar"], res["sup"],
                         res["zterminal"], res["zsup"], res["exits"])
