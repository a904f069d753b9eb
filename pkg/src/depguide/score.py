"""Exact scores of a diffused isotropic Gaussian mixture.

Under the VP forward kernel x_t = sqrt(abar) x_0 + sqrt(1 - abar) eps, a
mixture component N(mu, s2 I) becomes N(sqrt(abar) mu, (abar s2 + 1 - abar) I),
so the marginal score is available in closed form and stands in for a
trained score network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        mu = np.array(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu.reshape(1, -1)
        var = np.array(self.variances, dtype=float).reshape(-1)
        if not (len(w) == mu.shape[0] == len(var)) or len(w) == 0:
            raise ValueError(f"mixture needs matching component counts: "
                             f"{len(w)} weights, {mu.shape[0]} means, {len(var)} variances")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise ValueError("mixture parameters must be finite")
        if np.any(w <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must sum to 1, got {w.sum()!r}")
        if np.any(var <= 0):
            raise ValueError("mixture variances must be positive")
        for a in (w, mu, var):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @classmethod
    def standard_normal(cls, dim: int) -> "GaussianMixture":
        return cls([1.0], np.zeros((1, dim)), [1.0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def n_components(self) -> int:
        return int(self.weights.size)

    def diffused(self, alpha_bar: float) -> "GaussianMixture":
        if not 0.0 <= alpha_bar <= 1.0:
            raise ValueError(f"alpha_bar must lie in [0, 1], got {alpha_bar}")
        return GaussianMixture(self.weights,
                               math.sqrt(alpha_bar) * self.means,
                               alpha_bar * self.variances + (1.0 - alpha_bar))

    def translated(self, shift) -> "GaussianMixture":
        return GaussianMixture(self.weights, self.means + np.asarray(shift, dtype=float), self.variances)

    # -- numpy fast paths ------------------------------------------------

    def _logits(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        diff = self.means - x
        sq = np.einsum("kd,kd->k", diff, diff)
        logits = (np.log(self.weights) - 0.5 * self.dim * np.log(2.0 * np.pi * self.variances)
                  - 0.5 * sq / self.variances)
        return logits, diff

    def log_density(self, x) -> float:
        x = _check_x(self, x)
        logits, _ = self._logits(x)
        return float(ad.logsumexp(logits))

    def score(self, x) -> np.ndarray:
        x = _check_x(self, x)
        logits, diff = self._logits(x)
        resp = np.exp(logits - ad.logsumexp(logits))
        return (resp / self.variances) @ diff

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp])[:, None] * noise

    # -- generic expressions (numpy, Dual or tape) ------------------------

    def log_density_expr(self, x):
        logits = []
        for k in range(self.n_components):
            diff = ad.sub(x, self.means[k])
            const = math.log(self.weights[k]) - 0.5 * self.dim * math.log(2.0 * math.pi * self.variances[k])
            logits.append(ad.sub(const, ad.mul(0.5 / self.variances[k], ad.dot(diff, diff))))
        return ad.logsumexp(ad.stack(logits))

    def responsibilities_expr(self, x):
        """Posterior component probabilities r_k(x) on any value type."""
        logits = []
        for k in range(self.n_components):
            diff = ad.sub(self.means[k], x)
            const = math.log(self.weights[k]) - 0.5 * self.dim * math.log(2.0 * math.pi * self.variances[k])
            logits.append(ad.sub(const, ad.mul(0.5 / self.variances[k], ad.dot(diff, diff))))
        logits = ad.stack(logits)
        return ad.exp(ad.sub(logits, ad.logsumexp(logits)))

    def score_expr(self, x):
        """Closed-form score sum_k r_k(x) (mu_k - x) / v_k on any value type."""
        if self.n_components == 1:
            return ad.mul(1.0 / self.variances[0], ad.sub(self.means[0], x))
        resp = self.responsibilities_expr(x)
        out = None
        for k in range(self.n_components):
            diff = ad.sub(self.means[k], x)
            term = ad.mul(ad.mul(ad.take(resp, k), 1.0 / self.variances[k]), diff)
            out = term if out is None else ad.add(out, term)
        return out


def _check_x(m: GaussianMixture, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dim,):
        raise ValueError(f"state has shape {x.shape}, mixture dimension is {m.dim}")
    if not np.all(np.isfinite(x)):
        raise ad.EvaluationError("score", "non-finite input state")
    return x


def marginal_at(m: GaussianMixture, schedule, t: int) -> GaussianMixture:
    return m.diffused(schedule.alpha_bar(t))


def log_density_at(m: GaussianMixture, schedule, t: int, x) -> float:
    return marginal_at(m, schedule, t).log_density(x)


def score_at(m: GaussianMixture, schedule, t: int, x) -> np.ndarray:
    return marginal_at(m, schedule, t).score(x)


def score_jvp(m: GaussianMixture, schedule, t: int, x, v) -> np.ndarray:
    """(d score / dx) v, via the gradient of the scalar score(x) . v."""
    mt = marginal_at(m, schedule, t)
    _check_x(mt, x)
    field = mt.score_expr
    return ad.scalar_trick_grad(field, x, v)


def predict_clean_expr(m: GaussianMixture, alpha_bar: float, x):
    """Posterior mean E[x_0 | x_t] for the clean mixture ``m`` at noise level ``alpha_bar``.

    Equal to (x + (1 - abar) score) / sqrt(abar), but evaluated as the
    responsibility-weighted component posterior means
    (sqrt(abar) s2_k x + (1 - abar) mu_k) / v_k, which avoids the
    cancellation between x and the score when abar is small.
    """
    if alpha_bar <= 0.0:
        raise ValueError("clean-state estimate undefined at alpha_bar = 0")
    if alpha_bar == 1.0:
        return x
    v = alpha_bar * m.variances + (1.0 - alpha_bar)
    gain = math.sqrt(alpha_bar) * m.variances / v
    shift = (1.0 - alpha_bar) / v[:, None] * m.means

    def component(k):
        return ad.add(ad.mul(gain[k], x), shift[k])

    if m.n_components == 1:
        return component(0)
    resp = m.diffused(alpha_bar).responsibilities_expr(x)
    out = None
    for k in range(m.n_components):
        term = ad.mul(ad.take(resp, k), component(k))
        out = term if out is None else ad.add(out, term)
    return out


def predict_clean(m: GaussianMixture, schedule, t: int, x) -> np.ndarray:
    ab = schedule.alpha_bar(t)
    x = _check_x(m, x)
    return np.asarray(predict_clean_expr(m, ab, x), dtype=float)
