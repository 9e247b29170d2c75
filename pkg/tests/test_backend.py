import numpy as np
import pytest

from mvlevy import _kernels_py, backend


def _compiled():
    try:
        from mvlevy import _kernels
    except ImportError:  # pragma: no cover
        pytest.skip("compiled kernels not built")
    return _kernels


def test_backend_name():
    assert backend.NAME in ("compiled", "python")


def test_tanh_mean_field_agrees(gen):
    comp = _compiled()
    x = gen.normal(size=(3, 5, 2))
    cloud = gen.normal(size=(3, 7, 2))
    a = comp.tanh_mean_field(x, cloud, 1.3, 0.7, 0.5)
    b = _kernels_py.tanh_mean_field(x, cloud, 1.3, 0.7, 0.5)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-14)


def test_tanh_mean_field_accepts_read_only(gen):
    comp = _compiled()
    x = np.broadcast_to(gen.normal(size=(1, 2, 1)), (1, 2, 1))
    x.flags.writeable = False if x.flags.owndata else x.flags.writeable
    cloud = np.ascontiguousarray(gen.normal(size=(1, 4, 1)))
    cloud.flags.writeable = False
    assert comp.tanh_mean_field(np.ascontiguousarray(x), cloud, 1.0, 1.0, 1.0).shape == (1, 2, 1)


def test_linear_recursion_agrees(gen):
    comp = _compiled()
    A = gen.normal(size=(20, 3, 3))
    F = gen.normal(size=(4, 20, 3))
    v0 = gen.normal(size=(4, 3))
    a = comp.linear_recursion(A, F, v0, 0.01)
    b = _kernels_py.linear_recursion(A, F, v0, 0.01)
    assert a.shape == (4, 21, 3)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)


def test_linear_recursion_scalar_oracle():
    # v' = a v, explicit Euler: v_n = (1 + a dt)^n v0
    n, dt, a = 50, 0.02, -0.7
    A = np.full((n, 1, 1), a)
    out = _kernels_py.linear_recursion(A, np.zeros((1, n, 1)), np.ones((1, 1)), dt)
    assert np.isclose(out[0, -1, 0], (1 + a * dt) ** n, rtol=1e-13)


def test_sup_sq_distance_agrees(gen):
    comp = _compiled()
    paths = gen.normal(size=(6, 3, 11, 2))
    ref = gen.normal(size=(11, 2))
    a = comp.sup_sq_distance(paths, ref)
    b = _kernels_py.sup_sq_distance(paths, ref)
    brute = np.max(np.sum((paths - ref) ** 2, axis=-1), axis=-1)
    assert np.allclose(a, brute, rtol=1e-14)
    assert np.allclose(b, brute, rtol=1e-14)
