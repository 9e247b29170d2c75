import numpy as np
import pytest

from mvlevy import Box, WholeSpace
from mvlevy.coefficients import (ConstantDiffusion, JumpKernel, KernelCoefficients, LinearDrift,
                                 ZeroDiffusion, ZeroDrift)
from mvlevy.dynamics import Problem, solve_limit
from mvlevy.jumps import ControlField, JumpModel
from mvlevy.rate import (Halfspace, RateQuery, SingularGramian, SupNorm, TerminalPoint,
                         control_cost, controllability_gramian, lq_event_value, lq_oracle,
                         lq_oracle_for, minimize_rate)
from mvlevy.skeleton import Control, solve_mdp_skeleton


def brownian():
    return Problem(WholeSpace(1), KernelCoefficients(1, ZeroDrift(1), ConstantDiffusion(1.0, 1)))


def test_lq_oracle_brownian_value():
    # reaching v at time T with unit noise costs v^2 / (2 T)
    val, phi, psi = lq_oracle(0.0, 1.0, v=1.0, T=1.0, dt=0.01)
    assert val == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(phi, 1.0)
    assert psi.shape == (100, 0)
    assert lq_oracle(0.0, 1.0, v=2.0, T=2.0, dt=0.01)[0] == pytest.approx(1.0, abs=1e-12)


def test_lq_oracle_ou_converges_to_continuous_value():
    a, T = 0.5, 1.0
    exact = 0.5 / ((np.expm1(2 * a * T)) / (2 * a))
    val = lq_oracle(a, 1.0, v=1.0, T=T, dt=1e-3)[0]
    assert abs(val - exact) < 1e-3


def test_lq_oracle_control_reaches_target():
    a = np.array([[0.2, 1.0], [-0.5, -0.3]])
    s = np.array([[1.0, 0.0], [0.3, 0.5]])
    v = np.array([0.7, -0.4])
    val, phi, _ = lq_oracle(a, s, v=v, T=1.0, dt=0.01)
    # replay the Euler recursion
    x = np.zeros(2)
    for k in range(100):
        x = x + 0.01 * (a @ x + s @ phi[k])
    assert np.allclose(x, v, atol=1e-12)
    assert np.isclose(val, 0.5 * 0.01 * np.sum(phi**2), rtol=1e-10)


def test_lq_oracle_with_jumps():
    G = np.array([[1.0]])
    w = np.array([2.0])
    val, phi, psi = lq_oracle(0.0, 1.0, G, w, v=1.0, T=1.0, dt=0.01)
    # Gramian is (1 + nu G^2) T = 3
    assert val == pytest.approx(1.0 / 6.0, rel=1e-12)
    assert np.allclose(psi, 1.0 / 3.0)


def test_singular_gramian():
    with pytest.raises(SingularGramian):
        lq_oracle(0.0, np.diag([1.0, 0.0]), v=[1.0, 1.0], T=1.0, dt=0.1)


def test_gramian_symmetric_psd():
    g = controllability_gramian(np.array([[0.0, 1.0], [0.0, 0.0]]), np.diag([0.0, 1.0]), T=1.0, dt=0.01, dim=2)
    assert np.allclose(g, g.T)
    assert np.all(np.linalg.eigvalsh(g) > 0)


def test_control_cost_regimes():
    jm = JumpModel.finite([1.0], [2.0])
    phi = Control.constant(1.0, 1.0)
    assert control_cost(phi, None, "ldp") == 0.5
    assert control_cost(None, ControlField.constant(1.0, jm, 1.0), "ldp", jm) == 0.0
    psi = ControlField.constant(-0.5, jm, 1.0, signed=True)
    assert np.isclose(control_cost(None, psi, "mdp", jm), 0.5 * 2.0 * 0.25)
    with pytest.raises(ValueError):
        control_cost(phi, None, "xdp")


def test_events():
    paths = np.array([[[0.0], [0.5], [1.2]], [[0.0], [0.2], [0.4]]])
    ref = np.zeros((3, 1))
    assert np.allclose(Halfspace([1.0], 1.0).residual(paths, ref), [0.0, 0.6])
    assert np.allclose(TerminalPoint([1.0]).residual(paths, ref), [0.2, 0.6])
    assert np.allclose(SupNorm(1.0).residual(paths, ref), [0.0, 0.6])
    assert Halfspace([1.0], 1.0).hit(np.array([[1.0], [0.5]]), None).tolist() == [True, False]
    with pytest.raises(ValueError):
        TerminalPoint([1.0]).hit(np.zeros((1, 1)), None)


def test_ldp_rate_brownian():
    p = brownian()
    lim = solve_limit(p, 1.0, 0.05)
    q = RateQuery("ldp", Halfspace([1.0], 1.0), control_cells=4, restarts=1, rounds=4, maxiter=40)
    res = minimize_rate(q, p, lim)
    assert res.feasible
    assert res.value == pytest.approx(0.5, abs=2e-3)
    assert lq_event_value(p, lim, q.event, "ldp") == pytest.approx(0.5, abs=1e-12)


def test_mdp_rate_matches_oracle():
    p = Problem(WholeSpace(1), KernelCoefficients(1, LinearDrift([[-0.8]], [[0.0]]), ConstantDiffusion(0.7, 1)),
                x0=[0.3])
    lim = solve_limit(p, 1.0, 0.02)
    q = RateQuery("mdp", TerminalPoint([0.6]), control_cells=10, restarts=1, maxiter=60)
    res = minimize_rate(q, p, lim)
    oracle = lq_oracle_for(p, lim, [0.6])[0]
    assert res.value == pytest.approx(oracle, rel=2e-3)


def test_rate_oracle_control_reproduces_target():
    p = Problem(WholeSpace(1), KernelCoefficients(1, LinearDrift([[0.4]], [[0.0]]), ConstantDiffusion(1.0, 1)))
    lim = solve_limit(p, 1.0, 0.01)
    val, phi, _ = lq_oracle_for(p, lim, [1.0])
    sol = solve_mdp_skeleton(p, lim, Control(phi, 1.0))
    assert np.isclose(sol.path[-1, 0], 1.0, atol=1e-10)
    assert np.isclose(sol.cost, val, rtol=1e-10)


def test_null_control_event_has_zero_rate():
    p = brownian()
    lim = solve_limit(p, 1.0, 0.1)
    res = minimize_rate(RateQuery("ldp", Halfspace([1.0], -1.0), restarts=1), p, lim)
    assert res.value == 0.0 and res.feasible


def test_unreachable_event_is_infinite():
    p = Problem(Box([-1.0], [1.0]), KernelCoefficients(1, ZeroDrift(1), ConstantDiffusion(1.0, 1)))
    lim = solve_limit(p, 1.0, 0.1)
    res = minimize_rate(RateQuery("ldp", Halfspace([1.0], 2.0), restarts=1, rounds=2, maxiter=10), p, lim)
    assert res.value == np.inf
    assert not res.feasible
    assert lq_event_value(p, lim, Halfspace([1.0], 2.0), "ldp") is None


def test_jump_only_rate_uses_intensity_control():
    jm = JumpModel.finite([1.0], [1.0])
    p = Problem(WholeSpace(1), KernelCoefficients(1, ZeroDrift(1), ZeroDiffusion(1), JumpKernel([1.0])), jm)
    lim = solve_limit(p, 1.0, 0.05)
    q = RateQuery("ldp", Halfspace([1.0], 1.0), control_cells=2, restarts=1, maxiter=40)
    res = minimize_rate(q, p, lim)
    # constant psi = 2 reaches the event; its entropy cost is ell(2) = 2 log 2 - 1
    assert res.feasible
    assert res.value == pytest.approx(2 * np.log(2) - 1, abs=2e-3)


def test_rate_result_csv(tmp_path):
    p = brownian()
    lim = solve_limit(p, 1.0, 0.1)
    res = minimize_rate(RateQuery("mdp", Halfspace([1.0], 1.0), control_cells=2, restarts=1, maxiter=20), p, lim)
    res.to_csv(tmp_path / "r.csv", tmp_path / "c.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == ",".join(res.header)
    assert (tmp_path / "c.csv").exists()


def test_rate_deterministic_in_seed():
    p = brownian()
    lim = solve_limit(p, 1.0, 0.1)
    q = RateQuery("ldp", SupNorm(0.8), control_cells=2, restarts=2, maxiter=15, seed=4)
    a, b = minimize_rate(q, p, lim), minimize_rate(q, p, lim, workers=2)
    assert a.value == b.value
