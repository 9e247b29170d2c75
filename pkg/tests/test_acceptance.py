"""Acceptance gate: one test per criterion, each at its stated tolerance.

A pass/fail line per criterion is printed in the pytest terminal summary.
"""
import io
import time
from pathlib import Path

import numpy as np

from mvlevy import Ball, Box, Polyhedron, WholeSpace, cli
from mvlevy.analysis import (BihariSpec, bihari_bound, convergence_study, estimate_tail,
                             gaussian_tail)
from mvlevy.coefficients import (ConstantDiffusion, ConstantDrift, JumpKernel, KernelCoefficients,
                                 LinearDrift, LinearModulus, PowerModulus, TanhInteraction,
                                 ZeroDrift)
from mvlevy.dynamics import ModerateScale, Problem, simulate_particles, solve_limit
from mvlevy.geometry import (check_pair_monotonicity, check_variation_bound, default_path_tol,
                             pairwise_monotonicity, sample_graph)
from mvlevy.jumps import ControlField, JumpModel, ell, q2
from mvlevy.rate import Halfspace, RateQuery, TerminalPoint, lq_oracle_for, minimize_rate
from mvlevy.skeleton import Control, q1, solve_mdp_skeleton

from .conftest import record

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# speeds h in [0.06, 0.4]; the smallest level still has about 20 hits in 1e6 replicas
TAIL_SPEEDS = [0.4, 0.3, 0.25, 0.2, 0.15, 0.12, 0.1, 0.08, 0.07, 0.06]
TAIL_REPLICAS = 10**6
CONV_EPS = [0.2, 0.1, 0.05, 0.025]


def gaussian_problem():
    return Problem(WholeSpace(1), KernelCoefficients(1, ZeroDrift(1), ConstantDiffusion(1.0, 1)))


def lipschitz_problem(jumps=False):
    jm = JumpModel.finite([0.5, 1.0], [1.0, 0.5]) if jumps else None
    coeffs = KernelCoefficients(1, TanhInteraction(1.0, 1.0, 1.0, 1), ConstantDiffusion(0.8, 1),
                                JumpKernel([0.5], -0.2) if jumps else None)
    return Problem(WholeSpace(1), coeffs, jm, x0=[1.0])


def test_criterion_01_geometry():
    t0 = time.perf_counter()
    domains = {
        "box": Box([-1.0, -0.5, 0.0], [1.0, 2.0, 0.5]),
        "ball": Ball([0.5, -0.5, 0.0], 1.5),
        "polyhedron": Polyhedron([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -1.0, -1.0]],
                                 [1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0]),
        "whole": WholeSpace(3),
    }
    gen = np.random.default_rng(1)
    worst = {"nonexp": -np.inf, "idem": 0.0, "kkt": 0.0, "mono": np.inf}
    for dom in domains.values():
        x, y = gen.normal(0, 3, (2, 1000, 3))
        px, py = dom.project(x), dom.project(y)
        worst["nonexp"] = max(worst["nonexp"], float(np.max(
            np.linalg.norm(px - py, axis=-1) - np.linalg.norm(x - y, axis=-1))))
        worst["idem"] = max(worst["idem"], float(np.max(np.abs(dom.project(px) - px))))
        worst["kkt"] = max(worst["kkt"], float(np.max(dom.kkt_residual(x, px))))
        worst["mono"] = min(worst["mono"], pairwise_monotonicity(sample_graph(dom, 300, 7)))
    elapsed = time.perf_counter() - t0
    ok = (worst["nonexp"] <= 1e-12 and worst["idem"] <= 1e-12 and worst["kkt"] <= 1e-9
          and worst["mono"] >= -1e-12 and elapsed < 10)
    record(1, ok, f"kkt={worst['kkt']:.2e} idem={worst['idem']:.2e} nonexp={worst['nonexp']:.2e} "
                  f"graph_min={worst['mono']:.2e} time={elapsed:.2f}s")
    assert ok


def test_criterion_02_energy_identities():
    jm = JumpModel.finite([0.5, 1.0], [1.0, 2.0])
    grid = np.linspace(0.0, 10.0, 10001)
    v = ell(grid)
    second = v[2:] - 2 * v[1:-1] + v[:-2]
    checks = {
        "ell(1)": ell(1.0) == 0.0,
        "ell(0)": ell(0.0) == 1.0,
        "Q2(1)": q2(ControlField.constant(1.0, jm, 2.0, cells=5), jm) == 0.0,
        "Q1(0)": q1(Control.constant(0.0, 2.0, dim=3, cells=5)) == 0.0,
        "convex": float(second.min()) >= -1e-12,
    }
    ok = all(checks.values())
    record(2, ok, " ".join(f"{k}={'ok' if v else 'bad'}" for k, v in checks.items())
           + f" min_second_difference={second.min():.2e}")
    assert ok


def test_criterion_03_bihari():
    t0 = time.perf_counter()
    grid = np.linspace(0.0, 1.0, 1000)
    q = 0.5 + grid  # int_0^t q = t/2 + t^2/2
    Q = 0.5 * grid + 0.5 * grid**2
    lin = bihari_bound(BihariSpec(2.0, q, LinearModulus(1.0), grid))
    err_lin = float(np.max(np.abs(lin - 2.0 * np.exp(Q))))
    t_lin = time.perf_counter() - t0
    t1 = time.perf_counter()
    sq = bihari_bound(BihariSpec(2.0, 1.0, PowerModulus(0.5), grid))
    err_sq = float(np.max(np.abs(sq - (np.sqrt(2.0) + 0.5 * grid) ** 2)))
    t_sq = time.perf_counter() - t1
    # the trapezoid integral of an affine q is exact, so the tolerance applies to the inversion
    ok = err_lin <= 1e-9 and err_sq <= 1e-8 and t_lin < 1.0 and t_sq < 1.0
    record(3, ok, f"linear_err={err_lin:.2e} sqrt_err={err_sq:.2e} time={t_lin:.2f}s/{t_sq:.2f}s")
    assert ok


def _random_linear_instance(gen, i):
    d = 1 if i % 2 == 0 else 2
    A = gen.uniform(-1.0, 0.5, (1, 1)) if d == 1 else gen.normal(0.0, 0.5, (2, 2))
    S = np.eye(d) * gen.uniform(0.5, 1.5) + (gen.normal(0.0, 0.2, (2, 2)) if d == 2 else 0.0)
    jumps = i % 3 == 0
    jm = JumpModel.finite([0.5, 1.0], [1.0, 0.5]) if jumps else None
    jk = JumpKernel(gen.uniform(0.3, 1.0, d)) if jumps else None
    coeffs = KernelCoefficients(d, LinearDrift(A, np.zeros((d, d))), ConstantDiffusion(S, d), jk)
    return Problem(WholeSpace(d), coeffs, jm, x0=gen.normal(0.0, 0.5, d)), gen.normal(0.0, 1.0, d)


def test_criterion_04_skeleton_oracle():
    t0 = time.perf_counter()
    a, sigma, phi, T = 0.7, 1.3, 0.9, 1.0
    exact = sigma * phi * np.expm1(a * T) / a
    errs = []
    for dt in (0.02, 0.01, 0.005, 0.0025):
        p = Problem(WholeSpace(1), KernelCoefficients(1, LinearDrift([[a]], [[0.0]]), ConstantDiffusion(sigma, 1)))
        sol = solve_mdp_skeleton(p, solve_limit(p, T, dt), Control.constant(phi, T))
        errs.append(abs(sol.path[-1, 0] - exact))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    gen = np.random.default_rng(2024)
    rel = []
    for i in range(12):
        p, v = _random_linear_instance(gen, i)
        lim = solve_limit(p, 1.0, 0.02)
        res = minimize_rate(RateQuery("mdp", TerminalPoint(v), control_cells=10, restarts=1, seed=i), p, lim)
        oracle = lq_oracle_for(p, lim, v)[0]
        rel.append(abs(res.value - oracle) / oracle)
    elapsed = time.perf_counter() - t0
    ok = bool(np.min(orders) >= 0.9 and max(rel) <= 1e-3 and elapsed < 120)
    record(4, ok, f"orders={np.round(orders, 3).tolist()} max_rel_gap={max(rel):.2e} "
                  f"instances=12 time={elapsed:.1f}s")
    assert ok


def test_criterion_05_gaussian_rate():
    t0 = time.perf_counter()
    p = gaussian_problem()
    ev = Halfspace([1.0], 1.0)
    lim = solve_limit(p, 1.0, 0.01)
    rate = minimize_rate(RateQuery("ldp", ev), p, lim).value
    # exact law at any step size: the terminal value is a sum of Gaussian increments
    direct = estimate_tail(p, ev, [0.5, 0.25], TAIL_REPLICAS, 1.0, 0.1, 11, min_hits=1)
    z = []
    for e, ph in zip(direct.epsilon, direct.p_hat):
        pe = gaussian_tail(1.0, e)
        z.append(abs(ph - pe) / np.sqrt(pe * (1 - pe) / TAIL_REPLICAS))
    ext = estimate_tail(p, ev, TAIL_SPEEDS, TAIL_REPLICAS, 1.0, 1.0, 12)
    rel = abs(ext.rate_estimate - 0.5) / 0.5
    elapsed = time.perf_counter() - t0
    ok = abs(rate - 0.5) <= 1e-3 and max(z) <= 3 and rel <= 0.3 and elapsed < 600
    record(5, ok, f"rate={rate:.5f} tail_z={np.round(z, 2).tolist()} intercept_rate={ext.rate_estimate:.4f} "
                  f"(rel {rel:.2f}) fitted_levels={int(ext.used.sum())} time={elapsed:.1f}s")
    assert ok


def test_criterion_06_convergence():
    t0 = time.perf_counter()
    rep = convergence_study(lipschitz_problem(), CONV_EPS, 2000, "limit", 21, 1.0, 1e-3, particles=8)
    elapsed = time.perf_counter() - t0
    ok = abs(rep.slope - 1.0) <= 0.2 and rep.strictly_decreasing and elapsed < 900
    record(6, ok, f"slope={rep.slope:.3f}+-{rep.slope_se:.3f} means={np.round(rep.mean_sup_sq, 6).tolist()} "
                  f"time={elapsed:.1f}s")
    assert ok


def test_criterion_07_controlled_limit():
    t0 = time.perf_counter()
    p = lipschitz_problem(jumps=True)
    phi = Control.constant(0.8, 1.0)
    psi = ControlField(np.array([[1.5, 0.5], [0.7, 2.0]]), 1.0)
    rep = convergence_study(p, CONV_EPS, 2000, "controlled", 31, 1.0, 1e-3, particles=8, phi=phi, psi=psi)
    elapsed = time.perf_counter() - t0
    ok = rep.strictly_decreasing
    record(7, ok, f"means={np.round(rep.mean_sup_sq, 6).tolist()} slope={rep.slope:.3f} time={elapsed:.1f}s")
    assert ok


def test_criterion_08_constrained_dynamics():
    cases = [
        (Box([-1.0, -1.0], [1.0, 1.0]), [0.0, 0.0], 0.8),
        (Ball([0.0, 0.0], 1.0), [0.0, 0.0], 0.8),
    ]
    worst_out, n_checked, all_ok = 0.0, 0, True
    for dom, a, r in cases:
        coeffs = KernelCoefficients(2, ConstantDrift([3.0, 2.0]), ConstantDiffusion(1.0, 2))
        p = Problem(dom, coeffs, x0=[0.3, -0.2])
        graph = sample_graph(dom, 20, 5)
        for eps in (0.0, 0.05, 0.3):
            b = simulate_particles(p, 1.0, 0.005, eps, 4, 8, replicas=5)
            pts = b.states.reshape(-1, 2)
            worst_out = max(worst_out, float(np.max(np.linalg.norm(dom.project(pts) - pts, axis=-1))))
            for rr in range(b.replicas):
                for i in range(b.particles):
                    x, k = b.path(rr, i)
                    tol = default_path_tol(b.times, x)
                    xo, ko = b.path(rr, (i + 1) % b.particles)
                    m1 = check_pair_monotonicity(b.times, x, k, graph, tol=tol)
                    m2 = check_pair_monotonicity(b.times, x, k, other=(xo, ko), tol=tol)
                    vb = check_variation_bound(b.times, x, k, dom, a, r, 1.0 + 3.0 * np.sqrt(13.0), 0.0, 1.0,
                                               tol=tol)
                    all_ok &= m1.passed and m2.passed and vb.passed
                    n_checked += 1
    ok = worst_out <= 1e-9 and all_ok
    record(8, ok, f"max_distance_outside={worst_out:.1e} paths_checked={n_checked} all_checks={'ok' if all_ok else 'bad'}")
    assert ok


def test_criterion_09_moderate_scaling():
    t0 = time.perf_counter()
    p = gaussian_problem()
    scale = ModerateScale(0.25)
    lim = solve_limit(p, 1.0, 0.05)
    zs = []
    for eps in (0.2, 0.05):
        b = simulate_particles(p, 1.0, 0.05, eps, 1, 41, replicas=10**4)
        m = (b.states[:, 0, -1, 0] - lim.states[0, 0, -1, 0]) / float(scale.lam(eps))
        target = np.sqrt(eps) * 1.0
        zs.append(abs(m.var(ddof=1) - target) / (target * np.sqrt(2.0 / (len(m) - 1))))
    # speed h = eps / lambda^2 = sqrt(eps), so eps = h^2
    eps_grid = [h * h for h in TAIL_SPEEDS]
    est = estimate_tail(p, Halfspace([1.0], 1.0), eps_grid, TAIL_REPLICAS, 1.0, 1.0, 42, scale=scale)
    rel = abs(est.rate_estimate - 0.5) / 0.5
    elapsed = time.perf_counter() - t0
    ok = max(zs) <= 4 and rel <= 0.3
    record(9, ok, f"variance_z={np.round(zs, 2).tolist()} intercept_rate={est.rate_estimate:.4f} "
                  f"(rel {rel:.2f}) time={elapsed:.1f}s")
    assert ok


FAST = {
    "simulate_box.cfg": {},
    "limit_zero.cfg": {},
    "skeleton_ldp.cfg": {},
    "skeleton_mdp.cfg": {},
    "rate_gaussian.cfg": {"task.control_cells": 5, "task.restarts": 2, "task.maxiter": 30, "run.dt": 0.05},
    "tail_gaussian.cfg": {"run.replicas": 20000, "run.epsilon": "0.5, 0.3, 0.2"},
    "converge_ou.cfg": {"run.replicas": 100},
    "hypotheses_tanh.cfg": {"task.samples": 30},
    "bihari_linear.cfg": {"task.bihari_points": 101},
}


def test_criterion_10_reproducibility(tmp_path):
    mismatches, compared = [], 0
    for name, over in FAST.items():
        lines = [ln for ln in (CONFIGS / name).read_text().splitlines()
                 if ln.split("=")[0].strip() not in over]
        lines += [f"{k} = {v}" for k, v in over.items()]
        cfg = tmp_path / name
        cfg.write_text("\n".join(lines) + "\n")
        first, second = tmp_path / f"{name}.a", tmp_path / f"{name}.b"
        assert cli.run(str(cfg), workers=1, out=str(first), stream=io.StringIO()) == 0
        manifest = next(first.glob("*manifest.cfg"))
        assert cli.run(str(manifest), workers=3, out=str(second), stream=io.StringIO()) == 0
        for f in sorted(first.glob("*.csv")):
            compared += 1
            if f.read_bytes() != (second / f.name).read_bytes():
                mismatches.append(f.name)
    ok = not mismatches and compared > 0
    record(10, ok, f"tasks={len(FAST)} csv_files={compared} mismatches={mismatches or 'none'} workers=1 vs 3")
    assert ok
