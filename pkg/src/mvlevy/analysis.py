"""Verification layer: transport distances, Bihari bounds, tails and convergence."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, cumulative_trapezoid, quad
from scipy.optimize import brentq
from scipy.special import ndtr

from .coefficients import EmpiricalMeasure, Modulus
from .dynamics import ModerateScale, Problem, run_ensemble, solve_limit


class TailEstimationError(RuntimeError):
    """Every noise level was dropped for lack of hits."""


# ------------------------------------------------------------ Wasserstein

@dataclass(frozen=True)
class W2Result:
    value: float
    bound_only: bool

    def __float__(self):
        return self.value


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure, paired: bool = False) -> W2Result:
    """Quadratic transport distance between uniform empirical measures.

    In one dimension the monotone (sorted) coupling is optimal and the value
    is exact.  Otherwise, or when ``paired`` is set, the index coupling
    ``X_i <-> Y_i`` gives an upper bound and ``bound_only`` is set.
    """
    x, y = mu.particles, nu.particles
    if x.shape[1] != y.shape[1]:
        raise ValueError("measures live in different dimensions")
    if x.shape[1] == 1 and not paired:
        if x.shape[0] == y.shape[0]:
            xs, ys = np.sort(x[:, 0]), np.sort(y[:, 0])
            return W2Result(float(np.sqrt(np.mean((xs - ys) ** 2))), False)
        return W2Result(_w2_quantile(x[:, 0], y[:, 0]), False)
    if x.shape[0] != y.shape[0]:
        raise ValueError("paired coupling needs equal particle counts")
    return W2Result(float(np.sqrt(np.mean(np.sum((x - y) ** 2, axis=1)))), True)


def _w2_quantile(x, y):
    """Exact 1-d distance for unequal sizes via the merged quantile grid."""
    xs, ys = np.sort(x), np.sort(y)
    cuts = np.union1d(np.arange(1, len(xs)) / len(xs), np.arange(1, len(ys)) / len(ys))
    edges = np.concatenate([[0.0], cuts, [1.0]])
    mid = 0.5 * (edges[1:] + edges[:-1])
    qx = xs[np.minimum((mid * len(xs)).astype(int), len(xs) - 1)]
    qy = ys[np.minimum((mid * len(ys)).astype(int), len(ys) - 1)]
    return float(np.sqrt(np.sum(np.diff(edges) * (qx - qy) ** 2)))


# ----------------------------------------------------------------- Bihari

@dataclass(eq=False)
class BihariSpec:
    """Data of the bound ``g(t) <= f^-1(f(C) + int_0^t q)``, ``f(r) = int_1^r ds / rho(s)``."""

    C: float
    q: np.ndarray
    modulus: Modulus
    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.q = np.broadcast_to(np.asarray(self.q, dtype=float), self.grid.shape).copy()
        if not self.C > 0:
            raise ValueError("C must be positive")
        if np.any(self.q < 0):
            raise ValueError("q must be nonnegative")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")


@dataclass
class BihariResult:
    times: np.ndarray
    bound: np.ndarray
    integral_q: np.ndarray
    f_C: float
    f_sup: float

    header = ("t", "int_q", "bound")

    def rows(self):
        return zip(self.times.tolist(), self.integral_q.tolist(), self.bound.tolist())


def bihari_bound(spec: BihariSpec) -> np.ndarray:
    """Bound path on ``spec.grid``; ``inf`` once the target leaves the range of ``f``."""
    return bihari_result(spec).bound


def _invert_step(integral, rho, x0, f0, target, xtol=1e-12):
    """Solve ``f(x) = target`` for ``x >= x0`` given ``f(x0) = f0 < target``.

    Newton on ``f' = 1 / rho`` inside a bracket; falls back to brentq if
    the safeguarded iteration stalls.
    """
    f = lambda s: f0 + integral(x0, s)  # noqa: E731
    lo, hi = x0, None
    x, fx = x0, f0
    for _ in range(60):
        step = float(rho(x)) * (target - fx)
        cand = x + step
        if hi is not None and not (lo < cand < hi):
            cand = 0.5 * (lo + hi)
        fc = f(cand)
        if fc < target:
            lo = cand
        else:
            hi = cand
        if abs(cand - x) <= xtol * max(1.0, abs(cand)):
            return cand, fc
        x, fx = cand, fc
    if hi is None:
        hi = 2.0 * lo + 1.0
        while f(hi) < target:
            lo, hi = hi, 2.0 * hi
    x = brentq(lambda s: f(s) - target, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return x, f(x)


def bihari_result(spec: BihariSpec) -> BihariResult:
    rho = spec.modulus

    def inv_rho(s):
        r = float(rho(s))
        if not r > 0:
            raise ValueError(f"modulus is not positive at s={s}")
        return 1.0 / r

    def integral(a, b):
        if a == b:
            return 0.0
        val, _ = quad(inv_rho, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
        return val

    fC = integral(1.0, spec.C)
    # a divergent tail (Osgood at infinity) shows up as an integration warning
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            f_sup = fC + quad(inv_rho, spec.C, np.inf, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
        except IntegrationWarning:
            f_sup = np.inf
    Q = cumulative_trapezoid(spec.q, spec.grid, initial=0.0)
    Q = Q - Q[0]
    out = np.empty_like(Q)
    prev_x, prev_f = spec.C, fC
    for i, target in enumerate(fC + Q):
        if target >= f_sup or not np.isfinite(prev_x):
            out[i:] = np.inf
            break
        if target == prev_f:
            out[i] = prev_x
            continue
        x, fx = _invert_step(integral, rho, prev_x, prev_f, target)
        prev_x, prev_f = x, fx
        out[i] = x
    return BihariResult(spec.grid, out, Q, fC, f_sup)


# ------------------------------------------------------------------- tails

@dataclass
class TailEstimate:
    epsilon: np.ndarray
    speed: np.ndarray
    p_hat: np.ndarray
    hits: np.ndarray
    replicas: int
    std_err: np.ndarray
    scaled_log: np.ndarray
    used: np.ndarray
    slope: float
    intercept: float
    intercept_se: float
    regime: str

    @property
    def rate_estimate(self) -> float:
        return -self.intercept

    header = ("epsilon", "speed", "p_hat", "hits", "replicas", "std_err", "scaled_log", "used")

    def rows(self):
        for i in range(len(self.epsilon)):
            yield (self.epsilon[i], self.speed[i], self.p_hat[i], int(self.hits[i]), self.replicas,
                   self.std_err[i], self.scaled_log[i], int(self.used[i]))


def _wls(x, y, w):
    X = np.column_stack([np.ones_like(x), x])
    W = np.diag(w)
    cov = np.linalg.inv(X.T @ W @ X)
    beta = cov @ X.T @ W @ y
    resid = y - X @ beta
    dof = len(x) - 2
    s2 = float(resid @ W @ resid / dof) if dof > 0 else 1.0
    return beta, cov * max(s2, 1.0)


def estimate_tail(problem: Problem, event, epsilon_grid, replicas: int, T: float, dt: float,
                  rng_seed: int, scale: ModerateScale | None = None, particles: int = 1,
                  min_hits: int = 10, workers: int = 1) -> TailEstimate:
    """Plain Monte Carlo tail probabilities and their speed-scaled logarithms.

    In the moderate regime (``scale`` given) the event is applied to the
    rescaled deviation ``(X - X0) / lambda(eps)``; otherwise to ``X`` itself
    (path events measured against the limit path).  Only particle 0 of each
    replica is scored.  ``h log p`` is regressed on the speed ``h`` by
    weighted least squares with delta-method binomial weights; the intercept
    estimates minus the rate.
    """
    eps = np.asarray(epsilon_grid, dtype=float)
    if np.any(np.diff(eps) >= 0):
        raise ValueError("epsilon grid must be strictly decreasing")
    if particles == 1 and not problem.coeffs.measure_free:
        raise ValueError("single-particle mode needs measure-free coefficients")
    lim = solve_limit(problem, T, dt).states[0, 0]
    regime = "ldp" if scale is None else "mdp"
    n_eps = len(eps)
    p = np.zeros(n_eps)
    hits = np.zeros(n_eps, dtype=int)
    relative = scale is not None or getattr(event, "relative", True)
    ref = lim if relative else np.zeros_like(lim)
    for i, e in enumerate(eps):
        st = run_ensemble(problem, T, dt, e, replicas, particles, rng_seed, reference=ref, workers=workers)
        lamb = 1.0 if scale is None else float(scale.lam(e))
        term = st.terminal[:, 0]
        if scale is not None:
            term = (term - lim[-1]) / lamb
        sup = np.sqrt(st.sup_sq[:, 0]) / lamb
        hits[i] = int(np.sum(event.hit(term, sup)))
        p[i] = hits[i] / replicas
    speed = eps if scale is None else scale.speed(eps)
    se = np.sqrt(np.maximum(p * (1 - p), 1e-300) / replicas)
    used = hits >= min_hits
    for e, h in zip(eps[~used], hits[~used]):
        warnings.warn(f"epsilon={e}: only {h} hits, dropped from the fit", RuntimeWarning)
    with np.errstate(divide="ignore"):
        scaled = speed * np.log(p)
    if not np.any(used):
        raise TailEstimationError("every epsilon was dropped: event too rare at this replica count")
    slope = intercept = np.nan
    icpt_se = np.inf
    if np.sum(used) >= 2:
        h = speed[used]
        pu = p[used]
        var = h**2 * (1 - pu) / (replicas * pu)
        w = 1.0 / np.maximum(var, 1e-300)
        if np.all(pu == 1.0):
            w = np.ones_like(h)
        (intercept, slope), cov = _wls(h, scaled[used], w)
        icpt_se = float(np.sqrt(cov[0, 0]))
    else:
        intercept = float(scaled[used][0])
    return TailEstimate(eps, speed, p, hits, replicas, se, scaled, used, float(slope),
                        float(intercept), icpt_se, regime)


def gaussian_tail(threshold, epsilon, T=1.0, sigma=1.0):
    """``P(sqrt(eps) sigma W_T >= threshold)``."""
    return float(ndtr(-threshold / (sigma * np.sqrt(epsilon * T))))


# ------------------------------------------------------------ convergence

@dataclass
class ConvergenceReport:
    mode: str
    epsilon: np.ndarray
    mean_sup_sq: np.ndarray
    std_err: np.ndarray
    bound_scale: np.ndarray
    slope: float
    slope_se: float
    C_hat: float
    extra: dict = field(default_factory=dict)

    header = ("epsilon", "mean_sup_sq", "std_err", "bound_scale", "ratio")

    def rows(self):
        for e, m, s, b in zip(self.epsilon, self.mean_sup_sq, self.std_err, self.bound_scale):
            yield (e, m, s, b, m / b)

    @property
    def strictly_decreasing(self) -> bool:
        order = np.argsort(-self.epsilon)
        return bool(np.all(np.diff(self.mean_sup_sq[order]) < 0))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            for r in self.rows():
                w.writerow([repr(float(v)) for v in r])


def convergence_study(problem: Problem, epsilon_grid, replicas: int, mode: str, rng_seed: int,
                      T: float, dt: float, particles: int = 1, phi=None, psi=None,
                      workers: int = 1) -> ConvergenceReport:
    """Mean-square sup distances across noise levels, with common random numbers.

    ``limit`` and ``rate`` compare ``X_eps`` with the limit path; ``rate``
    also reports the ratio against ``eps + rho_b^2 + eps rho_sigma^2 +
    eps rho_G^2``.  ``controlled`` compares the coupled controlled path with
    the large-deviation skeleton for the same control.
    """
    from .skeleton import solve_ldp_skeleton

    if mode not in ("limit", "rate", "controlled"):
        raise ValueError("mode must be limit, rate or controlled")
    eps = np.asarray(epsilon_grid, dtype=float)
    limit = solve_limit(problem, T, dt)
    lim = limit.states[0, 0]
    means, ses = [], []
    ref_y = None
    if mode == "controlled":
        ref_y = solve_ldp_skeleton(problem, limit, phi, psi).path
    for e in eps:
        if mode == "controlled":
            st = run_ensemble(problem, T, dt, e, replicas, particles, rng_seed,
                              phi=phi, psi=psi, control_reference=ref_y, workers=workers)
            vals = st.control_sup_sq.mean(axis=1)
        else:
            st = run_ensemble(problem, T, dt, e, replicas, particles, rng_seed, reference=lim,
                              workers=workers)
            vals = st.sup_sq.mean(axis=1)
        means.append(float(vals.mean()))
        ses.append(float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else np.nan)
    means, ses = np.array(means), np.array(ses)
    fam = problem.family
    bound = eps + fam.rho_b(eps) ** 2 + eps * fam.rho_sigma(eps) ** 2 + eps * fam.rho_G(eps) ** 2
    slope = slope_se = np.nan
    if len(eps) >= 2 and np.all(means > 0):
        coef, cov = np.polyfit(np.log(eps), np.log(means), 1, cov=True) if len(eps) > 2 else (
            np.polyfit(np.log(eps), np.log(means), 1), np.zeros((2, 2)))
        slope, slope_se = float(coef[0]), float(np.sqrt(cov[0, 0]))
    C_hat = float(np.max(means / bound)) if np.all(bound > 0) else np.nan
    return ConvergenceReport(mode, eps, means, ses, np.asarray(bound, dtype=float), slope, slope_se,
                             C_hat, {"replicas": replicas, "particles": particles})
