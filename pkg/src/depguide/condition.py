"""Attribute conditions as differentiable energies, log p(c | x_t) ~ -scale * E(z).

``z`` is either the noisy state itself (direct mode) or the clean-state
estimate x_{0|t} (denoised mode). Every energy is written with the autodiff
primitives, so the same definition yields values, gradients and
Hessian-vector products.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import autodiff as ad
from .score import GaussianMixture, predict_clean_expr

KINDS = ("quadratic_target", "logistic_classifier", "ring", "alignment")
MODES = ("direct", "denoised")
ALIGN_EPS = 1e-8

# required vector / scalar params per kind
_PARAM_SPEC = {
    "quadratic_target": {"target": "vector"},
    "logistic_classifier": {"normal": "vector", "bias": "scalar", "label": "label"},
    "ring": {"center": "vector", "radius": "scalar"},
    "alignment": {"direction": "vector"},
}


class ConditionError(ValueError):
    pass


def _softplus(a):
    return ad.logsumexp(ad.stack([0.0, a]))


@dataclass(frozen=True, eq=False)
class ConditionEnergy:
    kind: str
    params: dict = field(hash=False)
    scale: float = 1.0
    mode: str = "direct"
    name: str = ""
    support: Any = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConditionError(f"unknown condition kind {self.kind!r}; expected one of {KINDS}")
        if self.mode not in MODES:
            raise ConditionError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        scale = float(self.scale)
        # scale 0 is admitted as the "switched off" limit
        if not np.isfinite(scale) or scale < 0:
            raise ConditionError(f"scale must be finite and non-negative, got {self.scale!r}")
        object.__setattr__(self, "scale", scale)
        spec = _PARAM_SPEC[self.kind]
        extra = set(self.params) - set(spec)
        missing = set(spec) - set(self.params)
        if extra or missing:
            raise ConditionError(f"{self.kind} params: missing {sorted(missing)}, unexpected {sorted(extra)}")
        params = {}
        for key, kind in spec.items():
            val = self.params[key]
            if kind == "vector":
                arr = np.array(val, dtype=float).reshape(-1)
                if not np.all(np.isfinite(arr)):
                    raise ConditionError(f"{self.kind}.{key} must be finite")
                arr.setflags(write=False)
                params[key] = arr
            elif kind == "label":
                if val not in (-1, 1):
                    raise ConditionError(f"logistic label must be -1 or +1, got {val!r}")
                params[key] = float(val)
            else:
                params[key] = float(val)
        dims = {p.size for p in params.values() if isinstance(p, np.ndarray)}
        if len(dims) != 1:
            raise ConditionError(f"{self.kind}: vector params disagree in length")
        if self.kind == "ring" and params["radius"] < 0:
            raise ConditionError("ring radius must be non-negative")
        if self.kind == "alignment" and abs(np.linalg.norm(params["direction"]) - 1.0) > 1e-12:
            raise ConditionError("alignment direction must be a unit vector")
        object.__setattr__(self, "params", params)
        if self.support is not None:
            sup = np.array(self.support, dtype=int).reshape(-1)
            if sup.size == 0 or len(set(sup.tolist())) != sup.size or sup.min() < 0 or sup.max() >= self.dim:
                raise ConditionError(f"support must be distinct indices in [0, {self.dim})")
            sup.setflags(write=False)
            object.__setattr__(self, "support", sup)
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    @property
    def dim(self) -> int:
        return next(p.size for p in self.params.values() if isinstance(p, np.ndarray))

    def with_scale(self, scale: float) -> "ConditionEnergy":
        return ConditionEnergy(self.kind, dict(self.params), scale, self.mode, self.name, self.support)

    def translated(self, shift) -> "ConditionEnergy":
        """Same condition moved by ``shift`` (only location parameters move)."""
        shift = np.asarray(shift, dtype=float)
        p = dict(self.params)
        if self.kind == "quadratic_target":
            p["target"] = p["target"] + shift
        elif self.kind == "ring":
            p["center"] = p["center"] + shift
        elif self.kind == "logistic_classifier":
            p["bias"] = p["bias"] - float(np.dot(p["normal"], shift))
        else:
            raise ConditionError("alignment energies are not translation-equivariant")
        return ConditionEnergy(self.kind, p, self.scale, self.mode, self.name, self.support)

    # energy before scaling
    def raw_energy(self, z):
        p = self.params
        if self.support is not None:
            z = ad.take(z, self.support)
            p = {k: (v[self.support] if isinstance(v, np.ndarray) else v) for k, v in p.items()}
        if self.kind == "quadratic_target":
            diff = ad.sub(z, p["target"])
            return ad.mul(0.5, ad.dot(diff, diff))
        if self.kind == "logistic_classifier":
            margin = ad.add(ad.dot(p["normal"], z), p["bias"])
            return _softplus(ad.mul(-p["label"], margin))
        if self.kind == "ring":
            diff = ad.sub(z, p["center"])
            gap = ad.sub(ad.sqrt(ad.dot(diff, diff)), p["radius"])
            return ad.mul(0.5, ad.mul(gap, gap))
        # alignment
        cos = ad.div(ad.dot(z, p["direction"]), ad.add(ad.sqrt(ad.dot(z, z)), ALIGN_EPS))
        return ad.sub(1.0, cos)

    def log_prob_fn(self, mixture: GaussianMixture, alpha_bar: float) -> ad.ScalarFunction:
        """x -> -scale * E(z(x)) at noise level ``alpha_bar``."""
        if self.mode == "denoised":
            if alpha_bar <= 0:
                raise ConditionError(f"{self.name}: denoised mode undefined at alpha_bar = 0")
            def fn(x):
                return ad.mul(-self.scale, self.raw_energy(predict_clean_expr(mixture, alpha_bar, x)))
        else:
            def fn(x):
                return ad.mul(-self.scale, self.raw_energy(x))
        return ad.ScalarFunction(fn, self.dim, f"log p({self.name}|x)")


def from_spec(spec: dict, index: int = 0) -> ConditionEnergy:
    """Build a condition from its config object {kind, params, scale, mode, name}."""
    params = dict(spec.get("params", {}))
    support = params.pop("support", None)
    return ConditionEnergy(kind=spec["kind"], params=params, scale=spec.get("scale", 1.0),
                           mode=spec.get("mode", "direct"), name=spec.get("name") or f"cond{index}",
                           support=support)


def _setup(cond: ConditionEnergy, x, t, mixture, schedule):
    x = np.asarray(x, dtype=float)
    if x.shape != (cond.dim,):
        raise ConditionError(f"{cond.name}: state has shape {x.shape}, condition dimension is {cond.dim}")
    if not np.all(np.isfinite(x)):
        raise ad.EvaluationError(cond.name, "non-finite input state")
    return x, cond.log_prob_fn(mixture, schedule.alpha_bar(t))


def energy_value(cond: ConditionEnergy, x, t: int, mixture: GaussianMixture, schedule) -> float:
    """scale * E(z) at step ``t`` (t = 0 evaluates on the clean state)."""
    x, fn = _setup(cond, x, t, mixture, schedule)
    return -fn.value(x)


def cond_grad(cond: ConditionEnergy, x, t: int, mixture: GaussianMixture, schedule) -> np.ndarray:
    x, fn = _setup(cond, x, t, mixture, schedule)
    return ad.gradient(fn, x)


def cond_hvp(cond: ConditionEnergy, x, t: int, v, mixture: GaussianMixture, schedule) -> np.ndarray:
    """Hessian of log p(c | x_t) applied to ``v`` (forward-over-reverse)."""
    x, fn = _setup(cond, x, t, mixture, schedule)
    return ad.hvp(fn, x, v)


def cond_grad_field(cond: ConditionEnergy, t: int, mixture: GaussianMixture, schedule):
    """The gradient of log p(c | x_t) as a tape-traceable field."""
    return ad.gradient_field(cond.log_prob_fn(mixture, schedule.alpha_bar(t)))
