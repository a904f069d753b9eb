"""Multi-condition guidance through conflict-averse gradient descent (CAGrad).

Every ordered pair (i, j), i != j, gives a dependent pair gradient. CAGrad
then picks the update inside the ball of radius c * |g0| around the mean
gradient g0 that maximises the worst-case improvement, through the dual
problem over simplex weights w:

    min_w  F(w) = g_w . g0 + sqrt(phi) * |g_w|,   g_w = sum_k w_k g_k,
    phi = c^2 |g0|^2,

and returns g0 + sqrt(phi) / |g_w*| * g_w*.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .condition import ConditionEnergy
from .guidance import dependent_pair_grad
from .score import GaussianMixture

NORM_SMOOTHING = 1e-18


@dataclass(frozen=True)
class CAGradConfig:
    c: float = 0.4
    inner_iters: int = 200
    inner_step: float = 0.1
    inner_tol: float = 1e-8
    norm_guard: float = 1e-12

    def __post_init__(self):
        if not 0.0 <= self.c < 1.0:
            raise ValueError(f"cagrad c must lie in [0, 1), got {self.c}")
        if int(self.inner_iters) != self.inner_iters or self.inner_iters < 1:
            raise ValueError(f"inner_iters must be a positive integer, got {self.inner_iters}")
        if not self.inner_step > 0:
            raise ValueError(f"inner_step must be positive, got {self.inner_step}")
        if not self.inner_tol >= 0:
            raise ValueError(f"inner_tol must be non-negative, got {self.inner_tol}")
        if not self.norm_guard > 0:
            raise ValueError(f"norm_guard must be positive, got {self.norm_guard}")


@dataclass(frozen=True, eq=False)
class PairGradientSet:
    n: int
    pairs: tuple          # ((i, j), ...) sorted
    grads: np.ndarray     # (n(n-1), d), row k belongs to pairs[k]

    @property
    def entries(self):
        return [(i, j, self.grads[k]) for k, (i, j) in enumerate(self.pairs)]

    @property
    def g0(self) -> np.ndarray:
        return self.grads.mean(axis=0)


class CAGradOutput(NamedTuple):
    direction: np.ndarray
    weights: np.ndarray
    objective: float
    converged: bool
    guarded: bool


def pairwise_gradients(conds: Sequence[ConditionEnergy], x, t: int, mixture: GaussianMixture, z,
                       schedule, **kwargs) -> PairGradientSet:
    n = len(conds)
    if n < 2:
        raise ValueError(f"multi-condition approximation needs at least 2 conditions, got {n}; "
                         "use mode 'dependent_pair' for two conditions or 'independent' for one")
    x = np.asarray(x, dtype=float)
    pairs, grads = [], []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            bd = dependent_pair_grad(x, t, mixture, conds[i], conds[j], z, schedule, **kwargs)
            pairs.append((i, j))
            grads.append(bd.combined)
    return PairGradientSet(n, tuple(pairs), np.array(grads))


def project_simplex(w) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} (sort and threshold)."""
    w = np.asarray(w, dtype=float)
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, w.size + 1)
    rho = np.flatnonzero(u - css / ks > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(w - theta, 0.0)


def _objective_parts(grads: np.ndarray, c: float):
    grads = np.asarray(grads, dtype=float)
    g0 = grads.mean(axis=0)
    gram = grads @ grads.T
    lin = grads @ g0
    sqrt_phi = c * math.sqrt(float(g0 @ g0))
    return g0, gram, lin, sqrt_phi


def inner_objective(w, grads, c: float) -> float:
    """F(w) = g_w . g0 + sqrt(phi) |g_w| for raw gradient rows ``grads``."""
    grads = np.asarray(grads, dtype=float)
    g0 = grads.mean(axis=0)
    gw = np.asarray(w, dtype=float) @ grads
    return float(gw @ g0 + c * np.linalg.norm(g0) * np.linalg.norm(gw))


def solve_weights(grads, cfg: CAGradConfig):
    """Accelerated projected gradient on the smoothed F over the simplex.

    The step is found by backtracking from ``inner_step`` (in units of the
    mean squared gradient norm); momentum restarts whenever F goes up.
    Returns (best weights, best objective, converged flag).
    """
    g0, gram, lin, sqrt_phi = _objective_parts(grads, cfg.c)
    m = gram.shape[0]
    unit = max(float(np.trace(gram)) / m, np.finfo(float).tiny)

    def F(w):
        return float(w @ lin + sqrt_phi * math.sqrt(max(float(w @ gram @ w), 0.0) + NORM_SMOOTHING))

    def dF(w):
        return lin + sqrt_phi * (gram @ w) / math.sqrt(max(float(w @ gram @ w), 0.0) + NORM_SMOOTHING)

    w = np.full(m, 1.0 / m)
    f_w = F(w)
    best_w, best_f = w, f_w
    y, momentum = w, 1.0
    lip = unit / cfg.inner_step
    converged = False
    for _ in range(cfg.inner_iters):
        fy, gy = F(y), dF(y)
        for _ in range(60):
            w_new = project_simplex(y - gy / lip)
            diff = w_new - y
            f_new = F(w_new)
            if f_new <= fy + gy @ diff + 0.5 * lip * (diff @ diff) + 1e-15 * abs(fy):
                break
            lip *= 2.0
        if f_new < best_f:
            best_w, best_f = w_new, f_new
        moved = float(np.linalg.norm(w_new - w))
        nxt = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
        if f_new > f_w:
            y, nxt = w_new, 1.0
        else:
            y = w_new + ((momentum - 1.0) / nxt) * (w_new - w)
        w, f_w, momentum = w_new, f_new, nxt
        lip *= 0.9
        if moved < cfg.inner_tol:
            converged = True
            break
    return best_w, best_f, converged


def cagrad_direction(grads, cfg: CAGradConfig) -> CAGradOutput:
    grads = np.asarray(grads, dtype=float)
    g0 = grads.mean(axis=0)
    m = grads.shape[0]
    if cfg.c == 0.0:
        return CAGradOutput(g0, np.full(m, 1.0 / m), float(g0 @ g0), True, False)
    sqrt_phi = cfg.c * math.sqrt(float(g0 @ g0))
    w, f, converged = solve_weights(grads, cfg)
    gw = w @ grads
    norm_gw = float(np.linalg.norm(gw))
    if norm_gw <= cfg.norm_guard or sqrt_phi == 0.0:
        return CAGradOutput(g0, w, f, converged, True)
    return CAGradOutput(g0 + (sqrt_phi / norm_gw) * gw, w, f, converged, False)


def cagrad_combine(pairs: PairGradientSet, cfg: CAGradConfig) -> CAGradOutput:
    return cagrad_direction(pairs.grads, cfg)
