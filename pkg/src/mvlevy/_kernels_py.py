"""Pure-numpy versions of the compiled kernels (same signatures)."""
import numpy as np

_CHUNK = 1 << 22


def tanh_mean_field(x, cloud, alpha, beta, ell):
    x = np.asarray(x, dtype=float)
    cloud = np.asarray(cloud, dtype=float)
    R, M, d = x.shape
    if cloud.shape[0] != R or cloud.shape[2] != d:
        raise ValueError("cloud shape does not match evaluation points")
    N = cloud.shape[1]
    out = np.empty((R, M, d))
    step = max(1, _CHUNK // max(1, M * N * d))
    for r0 in range(0, R, step):
        sl = slice(r0, r0 + step)
        diff = (cloud[sl, None, :, :] - x[sl, :, None, :]) / ell
        out[sl] = -alpha * x[sl] + beta * ell * np.tanh(diff).mean(axis=2)
    return out


def linear_recursion(A, F, v0, dt):
    A = np.asarray(A, dtype=float)
    F = np.asarray(F, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    n, d, _ = A.shape
    B = F.shape[0]
    if F.shape[1:] != (n, d) or v0.shape != (B, d):
        raise ValueError("shape mismatch in linear_recursion")
    out = np.empty((B, n + 1, d))
    out[:, 0] = v0
    for k in range(n):
        out[:, k + 1] = out[:, k] + dt * (out[:, k] @ A[k].T + F[:, k])
    return out


def sup_sq_distance(paths, ref):
    paths = np.asarray(paths, dtype=float)
    diff = paths - np.asarray(ref, dtype=float)
    return np.max(np.sum(diff * diff, axis=-1), axis=-1)
