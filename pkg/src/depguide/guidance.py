"""Combining per-condition gradients into one guidance term.

``independent_combine`` is the plain sum of per-condition gradients.
``dependent_pair_grad`` conditions the second attribute on the first: it
evaluates the second gradient at the one-step look-ahead state x_hat and
pulls it back through the Jacobian of x_hat with respect to x_t. Both
Jacobian pieces (score Jacobian and the first condition's Hessian) are
applied as gradients of scalars, so no d x d matrix is formed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .condition import ConditionEnergy, cond_grad, cond_grad_field, cond_hvp
from .diagnostics import cosine
from .score import GaussianMixture, score_at, score_jvp


class GuidanceError(RuntimeError):
    def __init__(self, part: str, cause: Exception):
        self.part = part
        super().__init__(f"guidance sub-term '{part}' failed: {cause}")


@dataclass(frozen=True, eq=False)
class GuidanceBreakdown:
    term_I: np.ndarray
    g_hat: np.ndarray
    retreat_part: np.ndarray
    score_jvp_part: np.ndarray
    hessian_part: np.ndarray
    term_II: np.ndarray
    combined: np.ndarray
    cos_terms: float
    cos_raw: float
    x_hat: np.ndarray = None


def _part(name, fn, *args):
    try:
        return fn(*args)
    except (ad.EvaluationError, ValueError, ArithmeticError) as exc:
        raise GuidanceError(name, exc) from exc


def independent_combine(conds: Sequence[ConditionEnergy], x, t: int, mixture: GaussianMixture,
                        schedule) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    for cond in conds:
        total = total + _part(f"grad[{cond.name}]", cond_grad, cond, x, t, mixture, schedule)
    return total


def intermediate_state(x, t: int, mixture: GaussianMixture, cond1: ConditionEnergy, z, schedule,
                       score=None, g1=None) -> np.ndarray:
    """x_hat = r_t x + beta_t (score + grad log p(c1|x)) + sigma_t z."""
    x = np.asarray(x, dtype=float)
    r, beta, sigma = schedule.step_coefficients(t)
    if score is None:
        score = score_at(mixture, schedule, t, x)
    if g1 is None:
        g1 = cond_grad(cond1, x, t, mixture, schedule)
    return r * x + beta * (score + g1) + sigma * np.asarray(z, dtype=float)


def dependent_pair_grad(x, t: int, mixture: GaussianMixture, cond1: ConditionEnergy,
                        cond2: ConditionEnergy, z, schedule, *, score=None,
                        hessian: str = "trick", flip_hessian_sign: bool = False) -> GuidanceBreakdown:
    """grad log p(c1, c2 | x_t) = term I + term II, with term II chained through x_hat.

    ``hessian`` selects how H g_hat is applied: "trick" differentiates the
    scalar grad(x) . g_hat (reverse over reverse), "dual" uses the
    forward-over-reverse HVP. ``flip_hessian_sign`` exists only for fault
    injection in the self-test.
    """
    x = np.asarray(x, dtype=float)
    r, beta, _ = schedule.step_coefficients(t)
    if score is None:
        score = _part("score", score_at, mixture, schedule, t, x)
    g1 = _part("term_I", cond_grad, cond1, x, t, mixture, schedule)
    x_hat = intermediate_state(x, t, mixture, cond1, z, schedule, score=score, g1=g1)
    g_hat = _part("g_hat", cond_grad, cond2, x_hat, t, mixture, schedule)

    retreat = r * g_hat
    jvp = _part("score_jvp", score_jvp, mixture, schedule, t, x, g_hat)
    if hessian == "trick":
        field = cond_grad_field(cond1, t, mixture, schedule)
        hv = _part("hessian", ad.scalar_trick_grad, field, x, g_hat)
    elif hessian == "dual":
        hv = _part("hessian", cond_hvp, cond1, x, t, g_hat, mixture, schedule)
    else:
        raise ValueError(f"unknown hessian method {hessian!r}")
    if flip_hessian_sign:
        hv = -hv
    score_jvp_part = beta * jvp
    hessian_part = beta * hv
    term_II = retreat + score_jvp_part + hessian_part
    combined = g1 + term_II

    g2_raw = _part("raw_grad", cond_grad, cond2, x, t, mixture, schedule)
    return GuidanceBreakdown(term_I=g1, g_hat=g_hat, retreat_part=retreat,
                             score_jvp_part=score_jvp_part, hessian_part=hessian_part,
                             term_II=term_II, combined=combined,
                             cos_terms=cosine(g1, term_II), cos_raw=cosine(g1, g2_raw),
                             x_hat=x_hat)


def sequenced_combine(conds: Sequence[ConditionEnergy], order: Sequence[int], x, t: int,
                      mixture: GaussianMixture, z, schedule, **kwargs) -> GuidanceBreakdown:
    """Dependent pair gradient with ``order`` choosing which condition goes first."""
    if len(conds) != 2:
        raise ValueError(f"sequenced guidance needs exactly two conditions, got {len(conds)}")
    if sorted(order) != [0, 1]:
        raise ValueError(f"order must be a permutation of (0, 1), got {list(order)}")
    first, second = conds[order[0]], conds[order[1]]
    return dependent_pair_grad(x, t, mixture, first, second, z, schedule, **kwargs)
