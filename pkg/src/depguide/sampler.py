"""Conditional ancestral sampling over the discrete VP schedule.

One reverse step is

    x_{t-1} = r_t x_t + beta_t (score(x_t) + guidance(x_t)) + sigma_t z,

with r_t = 2 - sqrt(1 - beta_t), sigma_t = sqrt(beta_t). The guidance term
depends on the mode: zero, the independent sum, the dependent pair
gradient, or the CAGrad multi-condition approximation. In dependent modes
the same z enters the look-ahead state and the update.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .condition import ConditionEnergy, cond_grad, energy_value
from .diagnostics import COSINE_SENTINEL, StepRecord, cosine
from .guidance import GuidanceError, sequenced_combine
from .mtl import CAGradConfig, cagrad_combine, pairwise_gradients
from .rng import NoiseStream
from .schedule import NoiseSchedule
from .score import GaussianMixture, score_at

MODES = ("unconditional", "independent", "dependent_pair", "cagrad_multi")


class SamplerError(RuntimeError):
    def __init__(self, t: int, cause: Exception):
        self.t = t
        self.cause = cause
        super().__init__(f"step t={t}: {cause}")


@dataclass(frozen=True)
class SamplerConfig:
    schedule: NoiseSchedule
    mode: str = "unconditional"
    order: tuple = (0, 1)
    seed: int = 0
    record_every: int = 1
    guidance_stop_t: int = 0
    suppress_final_noise: bool = True
    fresh_noise: bool = False
    cagrad: CAGradConfig = field(default_factory=CAGradConfig)
    hessian: str = "trick"
    keep_states: bool = False
    run_id: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown guidance mode {self.mode!r}; expected one of {MODES}")
        if not 0 <= self.guidance_stop_t < self.schedule.n_steps:
            raise ValueError(f"guidance_stop_t must lie in [0, {self.schedule.n_steps}), "
                             f"got {self.guidance_stop_t}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")
        if sorted(self.order) != [0, 1]:
            raise ValueError(f"order must be a permutation of (0, 1), got {self.order}")


@dataclass
class RunTrace:
    records: list
    x0: np.ndarray
    final_energies: tuple
    warnings: list
    states: list = None       # [(t, x_t)] when keep_states, t = N..0

    @property
    def final_total(self) -> float:
        return float(sum(self.final_energies))


def _check_conditions(cfg: SamplerConfig, mixture: GaussianMixture, conds: Sequence[ConditionEnergy]):
    for c in conds:
        if c.dim != mixture.dim:
            raise ValueError(f"condition {c.name!r} has dimension {c.dim}, score model has {mixture.dim}")
    n = len(conds)
    if cfg.mode == "dependent_pair" and n != 2:
        raise ValueError(f"mode 'dependent_pair' needs exactly 2 conditions, got {n}")
    if cfg.mode == "cagrad_multi" and n < 2:
        raise ValueError(f"mode 'cagrad_multi' needs at least 2 conditions, got {n}")


def step(x, t: int, cfg: SamplerConfig, mixture: GaussianMixture, conds: Sequence[ConditionEnergy],
         z, z_final=None, record: bool = True, fault: bool = False):
    """One reverse step. Returns (x_{t-1}, StepRecord or None, guidance vector, warning flag)."""
    sched = cfg.schedule
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    r, beta, sigma = sched.step_coefficients(t)
    try:
        score = score_at(mixture, sched, t, x)
    except (ad.EvaluationError, ValueError) as exc:
        raise SamplerError(t, GuidanceError("score", exc)) from exc
    active = t >= cfg.guidance_stop_t
    grads = [None] * len(conds)
    breakdown = None
    warn = False
    guidance = np.zeros_like(x)
    try:
        if active and cfg.mode == "independent":
            for i, c in enumerate(conds):
                grads[i] = cond_grad(c, x, t, mixture, sched)
                guidance = guidance + grads[i]
        elif active and cfg.mode == "dependent_pair":
            breakdown = sequenced_combine(conds, cfg.order, x, t, mixture, z, sched, score=score,
                                          hessian=cfg.hessian, flip_hessian_sign=fault)
            guidance = breakdown.combined
            grads[cfg.order[0]] = breakdown.term_I
        elif active and cfg.mode == "cagrad_multi":
            pairs = pairwise_gradients(conds, x, t, mixture, z, sched, score=score, hessian=cfg.hessian)
            out = cagrad_combine(pairs, cfg.cagrad)
            guidance = out.direction
            warn = not out.converged
    except (GuidanceError, ad.EvaluationError, ValueError) as exc:
        raise SamplerError(t, exc) from exc

    noise_vec = z_final if (cfg.fresh_noise and z_final is not None) else z
    if t == 1 and cfg.suppress_final_noise:
        x_prev = r * x + beta * (score + guidance)
    else:
        x_prev = r * x + beta * (score + guidance) + sigma * noise_vec

    rec = None
    if record:
        try:
            energies = tuple(energy_value(c, x, t, mixture, sched) for c in conds)
            for i, c in enumerate(conds):
                if grads[i] is None:
                    grads[i] = cond_grad(c, x, t, mixture, sched)
        except (ad.EvaluationError, ValueError) as exc:
            raise SamplerError(t, exc) from exc
        cos_raw = cosine(grads[0], grads[1]) if len(conds) >= 2 else COSINE_SENTINEL
        cos_terms = breakdown.cos_terms if breakdown is not None else COSINE_SENTINEL
        rec = StepRecord(run_id=cfg.run_id, seed=cfg.seed, mode=cfg.mode, t=t, beta_t=beta,
                         energies=energies,
                         grad_norms=tuple(float(np.linalg.norm(g)) for g in grads),
                         cos_raw=cos_raw, cos_terms=cos_terms,
                         combined_norm=float(np.linalg.norm(guidance)),
                         state_norm=float(np.linalg.norm(x)), cagrad_warning=warn)
    return x_prev, rec, guidance, warn


def sample(cfg: SamplerConfig, mixture: GaussianMixture, conds: Sequence[ConditionEnergy] = (),
           x_init=None, fault: bool = False) -> RunTrace:
    """Run the reverse loop t = N..1 from x_N ~ N(0, I) drawn from the seeded stream."""
    _check_conditions(cfg, mixture, conds)
    d = mixture.dim
    n_steps = cfg.schedule.n_steps
    stream = NoiseStream(cfg.seed)
    fresh = NoiseStream(cfg.seed, stream=1) if cfg.fresh_noise else None
    x = stream.normal(d)
    if x_init is not None:
        x = np.asarray(x_init, dtype=float).copy()
    records, warnings = [], []
    states = [(n_steps, x.copy())] if cfg.keep_states else None
    for t in range(n_steps, 0, -1):
        z = stream.normal(d)
        z_final = fresh.normal(d) if fresh is not None else None
        want = (n_steps - t) % cfg.record_every == 0
        x, rec, _, warn = step(x, t, cfg, mixture, conds, z, z_final, record=want, fault=fault)
        if rec is not None:
            records.append(rec)
        if warn:
            warnings.append(f"t={t}: CAGrad inner solver hit the iteration limit")
        if states is not None:
            states.append((t - 1, x.copy()))
        if not np.all(np.isfinite(x)):
            raise SamplerError(t, ad.EvaluationError("update", "non-finite state"))
    final = tuple(energy_value(c, x, 0, mixture, cfg.schedule) for c in conds)
    return RunTrace(records, x, final, warnings, states)
