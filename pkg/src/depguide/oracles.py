"""Independent reference computations used by the tests and by ``selftest``.

Nothing here shares code with the paths it checks: derivatives come from
central differences, simplex problems from exhaustive enumeration, PCA
from the closed-form 2x2 eigendecomposition.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable

import numba
import numpy as np

FD_REL_STEP = 1e-5


def fd_steps(x) -> np.ndarray:
    return FD_REL_STEP * (1.0 + np.abs(np.asarray(x, dtype=float)))


def _central(field, x, i, h):
    e = np.zeros_like(x)
    e[i] = h
    return (np.asarray(field(x + e), dtype=float) - np.asarray(field(x - e), dtype=float)) / (2.0 * h)


def fd_gradient(f: Callable[[np.ndarray], float], x) -> np.ndarray:
    """Central differences, h_i = 1e-5 (1 + |x_i|)."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x)
    return np.array([float(_central(f, x, i, h[i])) for i in range(x.size)])


def fd_jacobian(field: Callable[[np.ndarray], np.ndarray], x) -> np.ndarray:
    """Column i is the central difference of ``field`` along coordinate i."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x)
    return np.stack([_central(field, x, i, h[i]) for i in range(x.size)], axis=1)


def fd_hvp(grad: Callable[[np.ndarray], np.ndarray], x, v) -> np.ndarray:
    return fd_jacobian(grad, x) @ np.asarray(v, dtype=float)


def rel_err(a, b) -> float:
    """|a - b| / max(|a|, |b|); zero when both vanish."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b)) / scale


# -- simplex -----------------------------------------------------------------


def project_simplex_active_set(y) -> np.ndarray:
    """Projection onto the simplex by trying every support set.

    On a fixed support S the KKT point is w_S = y_S - (sum y_S - 1) / |S|;
    the projection is the feasible candidate closest to ``y``.
    """
    y = np.asarray(y, dtype=float)
    best, best_d = None, np.inf
    n = y.size
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            idx = list(support)
            w = np.zeros(n)
            w[idx] = y[idx] - (y[idx].sum() - 1.0) / size
            if np.any(w[idx] < -1e-15):
                continue
            w = np.maximum(w, 0.0)
            d = float(np.sum((w - y) ** 2))
            if d < best_d:
                best, best_d = w, d
    return best


@numba.njit(cache=True)
def _grid_min(gram, lin, sqrt_phi, steps):
    m = lin.size
    inv = 1.0 / steps
    best = np.inf
    best_k = np.zeros(m, dtype=np.int64)
    if m == 1:
        best_k[0] = steps
        return lin[0] + sqrt_phi * math.sqrt(max(gram[0, 0], 0.0)), best_k
    p = m - 2
    q = m - 1
    outer = np.zeros(max(p, 1), dtype=np.int64)
    total = 0
    while True:
        lin_o = 0.0
        q_oo = 0.0
        u_p = 0.0
        u_q = 0.0
        for i in range(p):
            oi = outer[i] * inv
            lin_o += oi * lin[i]
            u_p += oi * gram[i, p]
            u_q += oi * gram[i, q]
            for j in range(p):
                q_oo += oi * outer[j] * inv * gram[i, j]
        rest = steps - total
        for a in range(rest + 1):
            wa = a * inv
            wb = (rest - a) * inv
            lin_v = lin_o + wa * lin[p] + wb * lin[q]
            quad = (q_oo + 2.0 * wa * u_p + 2.0 * wb * u_q + wa * wa * gram[p, p]
                    + 2.0 * wa * wb * gram[p, q] + wb * wb * gram[q, q])
            f = lin_v + sqrt_phi * math.sqrt(max(quad, 0.0))
            if f < best:
                best = f
                for i in range(p):
                    best_k[i] = outer[i]
                best_k[p] = a
                best_k[q] = rest - a
        if p == 0:
            break
        # odometer over the outer coordinates with sum <= steps
        i = p - 1
        outer[i] += 1
        total += 1
        while total > steps:
            total -= outer[i]
            outer[i] = 0
            i -= 1
            if i < 0:
                break
            outer[i] += 1
            total += 1
        if i < 0:
            break
    return best, best_k


def simplex_grid_min(grads, c: float, step: float = 0.01):
    """Brute-force minimum of the CAGrad dual objective on the simplex grid.

    Returns (min value, weights). Exhaustive over all weight vectors with
    entries in multiples of ``step``.
    """
    grads = np.asarray(grads, dtype=float)
    g0 = grads.mean(axis=0)
    gram = grads @ grads.T
    lin = grads @ g0
    sqrt_phi = c * math.sqrt(float(g0 @ g0))
    steps = int(round(1.0 / step))
    f, k = _grid_min(np.ascontiguousarray(gram), np.ascontiguousarray(lin), sqrt_phi, steps)
    return float(f), k / steps


# -- PCA -----------------------------------------------------------------------


def eig2x2_symmetric(m) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenpairs of a symmetric 2x2 matrix, largest first."""
    a, b, d = float(m[0, 0]), float(m[0, 1]), float(m[1, 1])
    mean = 0.5 * (a + d)
    rad = math.hypot(0.5 * (a - d), b)
    vals = np.array([mean + rad, mean - rad])
    if b == 0.0:
        vecs = [np.array([1.0, 0.0]), np.array([0.0, 1.0])] if a >= d else [np.array([0.0, 1.0]), np.array([1.0, 0.0])]
    else:
        vecs = [np.array([b, lam - a]) / math.hypot(b, lam - a) for lam in vals]
    return vals, np.stack(vecs)


def gaussian_posterior_mean(mu, var0: float, alpha_bar: float, x) -> np.ndarray:
    """E[x0 | xt] for x0 ~ N(mu, var0 I), xt = sqrt(ab) x0 + sqrt(1-ab) eps."""
    mu = np.asarray(mu, dtype=float)
    x = np.asarray(x, dtype=float)
    s = math.sqrt(alpha_bar)
    gain = s * var0 / (alpha_bar * var0 + 1.0 - alpha_bar)
    return mu + gain * (x - s * mu)
