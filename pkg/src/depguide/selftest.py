"""Oracle checks run by ``depguide selftest`` and reused by the test suite.

Each group returns a list of CheckResult items. Instances are drawn from a
fixed seed so the report is reproducible.
"""
from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from .condition import KINDS, ConditionEnergy, cond_grad, cond_hvp, cond_grad_field
from .diagnostics import pca_project
from .guidance import dependent_pair_grad, independent_combine
from .mtl import CAGradConfig, cagrad_direction, inner_objective, project_simplex
from .oracles import (eig2x2_symmetric, fd_gradient, fd_hvp, gaussian_posterior_mean,
                      project_simplex_active_set, rel_err, simplex_grid_min)
from .rng import NoiseStream
from .schedule import SingleStep, linear_schedule
from .score import GaussianMixture, predict_clean
from .sampler import SamplerConfig, sample

GRAD_TOL = 1e-6
HVP_TOL = 1e-4
TRICK_TOL = 1e-8
CAGRAD_TOL = 1e-4


class CheckResult(NamedTuple):
    group: str
    item: str
    passed: bool
    detail: str


class Instance(NamedTuple):
    cond: ConditionEnergy
    mixture: GaussianMixture
    schedule: object
    t: int
    x: np.ndarray
    v: np.ndarray


def random_mixture(rng: np.random.Generator, d: int) -> GaussianMixture:
    k = int(rng.integers(1, 4))
    w = rng.uniform(0.2, 1.0, k)
    return GaussianMixture(w / w.sum(), rng.normal(0.0, 1.5, (k, d)), rng.uniform(0.3, 2.0, k))


def random_condition(rng: np.random.Generator, kind: str, d: int, mode: str = "direct") -> ConditionEnergy:
    if kind == "quadratic_target":
        params = {"target": rng.normal(0.0, 2.0, d)}
    elif kind == "logistic_classifier":
        params = {"normal": rng.normal(size=d), "bias": float(rng.normal()),
                  "label": int(rng.choice([-1, 1]))}
    elif kind == "ring":
        params = {"center": rng.normal(size=d), "radius": float(rng.uniform(0.5, 3.0))}
    else:
        u = rng.normal(size=d)
        params = {"direction": u / np.linalg.norm(u)}
    return ConditionEnergy(kind, params, float(rng.uniform(0.2, 3.0)), mode, kind)


def random_instances(n: int, seed: int = 0, dims=(2, 4, 8, 16), n_steps: int = 100):
    """Cycles over dimensions, kinds and both evaluation modes."""
    rng = np.random.default_rng(seed)
    sched = linear_schedule(n_steps)
    combos = [(d, k, m) for d in dims for k in KINDS for m in ("direct", "denoised")]
    out = []
    for i in range(n):
        d, kind, mode = combos[i % len(combos)]
        mixture = random_mixture(rng, d)
        cond = random_condition(rng, kind, d, mode)
        t = int(rng.integers(1, n_steps + 1))
        x = rng.normal(0.0, 1.5, d)
        v = rng.normal(size=d)
        out.append(Instance(cond, mixture, sched, t, x, v))
    return out


def _log_prob(inst: Instance):
    return inst.cond.log_prob_fn(inst.mixture, inst.schedule.alpha_bar(inst.t))


def _grad(inst: Instance):
    return lambda y: cond_grad(inst.cond, y, inst.t, inst.mixture, inst.schedule)


def _label(inst: Instance) -> str:
    return f"{inst.cond.kind}/{inst.cond.mode}/d{inst.x.size}/t{inst.t}"


def check_fd_gradient(instances) -> list:
    out = []
    for inst in instances:
        fn = _log_prob(inst)
        err = rel_err(_grad(inst)(inst.x), fd_gradient(fn.value, inst.x))
        out.append(CheckResult("fd_gradient", _label(inst), err <= GRAD_TOL, f"rel err {err:.2e}"))
    return out


def check_fd_hvp(instances) -> list:
    out = []
    for inst in instances:
        h = cond_hvp(inst.cond, inst.x, inst.t, inst.v, inst.mixture, inst.schedule)
        err = rel_err(h, fd_hvp(_grad(inst), inst.x, inst.v))
        out.append(CheckResult("fd_hvp", _label(inst), err <= HVP_TOL, f"rel err {err:.2e}"))
    return out


def explicit_hessian(inst: Instance) -> np.ndarray:
    d = inst.x.size
    cols = [cond_hvp(inst.cond, inst.x, inst.t, e, inst.mixture, inst.schedule) for e in np.eye(d)]
    return np.stack(cols, axis=1)


def check_scalar_trick(instances, fault: bool = False, max_explicit_dim: int = 8) -> list:
    """HVP against the scalar trick, and hessian_part against an explicit Hessian."""
    out = []
    for k, inst in enumerate(instances):
        field = cond_grad_field(inst.cond, inst.t, inst.mixture, inst.schedule)
        trick = ad.scalar_trick_grad(field, inst.x, inst.v)
        dual = cond_hvp(inst.cond, inst.x, inst.t, inst.v, inst.mixture, inst.schedule)
        err = rel_err(trick, dual)
        out.append(CheckResult("scalar_trick", "hvp " + _label(inst), err <= TRICK_TOL, f"rel err {err:.2e}"))
        if inst.x.size > max_explicit_dim:
            continue
        rng = np.random.default_rng(1000 + k)
        other = random_condition(rng, "quadratic_target", inst.x.size, inst.cond.mode)
        z = rng.normal(size=inst.x.size)
        bd = dependent_pair_grad(inst.x, inst.t, inst.mixture, inst.cond, other, z, inst.schedule,
                                 flip_hessian_sign=fault)
        beta = inst.schedule.beta(inst.t)
        expected = beta * (explicit_hessian(inst) @ bd.g_hat)
        err = rel_err(bd.hessian_part, expected)
        out.append(CheckResult("scalar_trick", "hessian_part " + _label(inst), err <= TRICK_TOL,
                               f"rel err {err:.2e}"))
    return out


def check_degenerate(seed: int = 0) -> list:
    """beta = 0 and z = 0 make the dependent gradient the independent sum."""
    rng = np.random.default_rng(seed)
    out = []
    sched = SingleStep(0.0)
    for kind in KINDS:
        d = 4
        mixture = random_mixture(rng, d)
        c1 = random_condition(rng, kind, d)
        c2 = random_condition(rng, "ring", d)
        x = rng.normal(size=d)
        bd = dependent_pair_grad(x, 1, mixture, c1, c2, np.zeros(d), sched)
        ind = independent_combine([c1, c2], x, 1, mixture, sched)
        err = float(np.max(np.abs(bd.combined - ind)))
        out.append(CheckResult("degenerate", f"beta0 {kind}", err <= 1e-12, f"max abs diff {err:.2e}"))
    return out


def random_grad_set(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    """Gradient rows with a shared component so conflicts are mixed."""
    base = rng.normal(size=d)
    return base * rng.uniform(-0.5, 1.0) + rng.normal(size=(m, d)) * rng.uniform(0.2, 2.0, (m, 1))


def check_cagrad(n: int = 20, seed: int = 0, max_m: int = 6) -> list:
    rng = np.random.default_rng(seed)
    cfg = CAGradConfig()
    out = []
    g = rng.normal(size=5)
    same = cagrad_direction(np.stack([g, g, g]), cfg).direction
    err = float(np.max(np.abs(same - (1 + cfg.c) * g)))
    out.append(CheckResult("cagrad", "identical entries", err <= 1e-12, f"max abs diff {err:.2e}"))
    grads = rng.normal(size=(4, 5))
    zero = cagrad_direction(grads, CAGradConfig(c=0.0)).direction
    out.append(CheckResult("cagrad", "c = 0 returns g0", bool(np.array_equal(zero, grads.mean(axis=0))), ""))
    for i in range(n):
        m = 2 + i % (max_m - 1)
        grads = random_grad_set(rng, m, int(rng.integers(2, 9)))
        res = cagrad_direction(grads, cfg)
        grid_f, _ = simplex_grid_min(grads, cfg.c)
        solver_f = inner_objective(res.weights, grads, cfg.c)
        gap = solver_f - grid_f
        out.append(CheckResult("cagrad", f"grid oracle m={m} #{i}", gap <= CAGRAD_TOL, f"gap {gap:.2e}"))
        if not res.guarded:
            g0 = grads.mean(axis=0)
            corr = float(np.linalg.norm(res.direction - g0))
            want = cfg.c * float(np.linalg.norm(g0))
            out.append(CheckResult("cagrad", f"correction norm #{i}", abs(corr - want) <= 1e-10,
                                   f"|diff| {abs(corr - want):.2e}"))
    return out


def check_simplex(n: int = 50, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        y = rng.normal(0.0, 2.0, int(rng.integers(1, 9)))
        err = float(np.max(np.abs(project_simplex(y) - project_simplex_active_set(y))))
        out.append(CheckResult("simplex_projection", f"#{i} m={y.size}", err <= 1e-12, f"max abs diff {err:.2e}"))
    return out


def check_pca(n: int = 10, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        a = rng.normal(size=(2, 2))
        pts = rng.normal(size=(500, 2)) @ a + rng.normal(size=2)
        vals, vecs = eig2x2_symmetric(np.cov(pts.T))
        grid = pca_project(pts, 2, seed=i)
        align = min(abs(float(grid.directions[k] @ vecs[k])) for k in range(2))
        explained = vals / vals.sum()
        err = float(np.max(np.abs(grid.explained - explained)))
        ok = align >= 1 - 1e-6 and err <= 1e-6
        out.append(CheckResult("pca_2x2", f"#{i}", ok, f"|cos| {align:.8f}, explained err {err:.2e}"))
    return out


def check_posterior_mean(n: int = 10, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    sched = linear_schedule(100)
    out = []
    for i in range(n):
        d = int(rng.integers(1, 6))
        mu, var0 = rng.normal(size=d), float(rng.uniform(0.3, 2.0))
        t = int(rng.integers(1, 101))
        x = rng.normal(size=d)
        got = predict_clean(GaussianMixture([1.0], [mu], [var0]), sched, t, x)
        want = gaussian_posterior_mean(mu, var0, sched.alpha_bar(t), x)
        err = rel_err(got, want)
        out.append(CheckResult("posterior_mean", f"#{i} t={t}", err <= 1e-10, f"rel err {err:.2e}"))
    return out


def check_sampler_mc(n_seeds: int = 400) -> list:
    """Unconditional sampling of N(0, I) in d = 2; loose bounds for a quick check."""
    sched = linear_schedule(100)
    mixture = GaussianMixture.standard_normal(2)
    xs = np.array([sample(SamplerConfig(sched, seed=s, record_every=1000), mixture).x0 for s in range(n_seeds)])
    mean_err = float(np.max(np.abs(xs.mean(axis=0))))
    var_err = float(np.max(np.abs(xs.var(axis=0) - 1.0)))
    return [CheckResult("sampler_mc", "mean", mean_err <= 0.2, f"max |mean| {mean_err:.3f}"),
            CheckResult("sampler_mc", "variance", var_err <= 0.25, f"max |var - 1| {var_err:.3f}")]


def check_noise(seed: int = 7) -> list:
    a = NoiseStream(seed).normal(1001)
    b = NoiseStream(seed).normal(1001)
    c = NoiseStream(seed, stream=1).normal(1001)
    return [CheckResult("noise", "replay", bool(np.array_equal(a, b)), ""),
            CheckResult("noise", "streams differ", not np.array_equal(a, c), "")]


def run_all(fault: bool = False, quick: bool = True) -> list:
    instances = random_instances(64 if quick else 200)
    groups: list[Callable[[], list]] = [
        lambda: check_fd_gradient(instances),
        lambda: check_fd_hvp(instances),
        lambda: check_scalar_trick(instances, fault=fault),
        check_degenerate,
        check_cagrad,
        check_simplex,
        check_pca,
        check_posterior_mean,
        check_sampler_mc,
        check_noise,
    ]
    out = []
    for g in groups:
        out.extend(g())
    return out


def summarize(results) -> list[tuple[str, int, int]]:
    """(group, passed, total) in first-seen order."""
    order, counts = [], {}
    for r in results:
        if r.group not in counts:
            order.append(r.group)
            counts[r.group] = [0, 0]
        counts[r.group][0] += r.passed
        counts[r.group][1] += 1
    return [(g, counts[g][0], counts[g][1]) for g in order]

