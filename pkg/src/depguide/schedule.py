"""Discrete VP noise schedule and the ancestral-update coefficients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Betas indexed t = 1..N; ``betas[t - 1]`` is beta_t.

    ``alpha_bar(0)`` is 1 by convention so energies can be evaluated on the
    final clean state with the same call.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.array(self.betas, dtype=float).reshape(-1)
        problems = []
        if betas.size == 0:
            problems.append("schedule needs at least one step")
        if not np.all(np.isfinite(betas)):
            problems.append("betas must be finite")
        elif np.any(betas <= 0.0) or np.any(betas >= 1.0):
            bad = np.flatnonzero((betas <= 0.0) | (betas >= 1.0)) + 1
            problems.append(f"betas must lie in (0, 1); violated at t={bad.tolist()[:5]}")
        if problems:
            raise ScheduleError("; ".join(problems))
        betas.setflags(write=False)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        alphas.setflags(write=False)
        alpha_bars.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def n_steps(self) -> int:
        return int(self.betas.size)

    def _check(self, t: int, allow_zero: bool = False) -> int:
        lo = 0 if allow_zero else 1
        if not (lo <= int(t) <= self.n_steps) or int(t) != t:
            raise IndexError(f"step index t={t} outside [{lo}, {self.n_steps}]")
        return int(t)

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t) - 1])

    def alpha_bar(self, t: int) -> float:
        t = self._check(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def step_coefficients(self, t: int) -> tuple[float, float, float]:
        """(r_t, beta_t, sigma_t) of x_{t-1} = r_t x_t + beta_t (...) + sigma_t z."""
        beta = self.beta(t)
        return 2.0 - math.sqrt(1.0 - beta), beta, math.sqrt(beta)


@dataclass(frozen=True)
class SingleStep:
    """A one-step stand-in schedule that admits beta = 0.

    Only used to probe degenerate limits of the guidance operators; real
    sampling always goes through :class:`NoiseSchedule`.
    """

    beta_value: float
    alpha_bar_value: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta_value < 1.0:
            raise ScheduleError(f"beta must lie in [0, 1), got {self.beta_value}")
        if not 0.0 <= self.alpha_bar_value <= 1.0:
            raise ScheduleError(f"alpha_bar must lie in [0, 1], got {self.alpha_bar_value}")

    n_steps = 1

    def beta(self, t: int) -> float:
        if t != 1:
            raise IndexError(f"step index t={t} outside [1, 1]")
        return float(self.beta_value)

    def alpha_bar(self, t: int) -> float:
        if t not in (0, 1):
            raise IndexError(f"step index t={t} outside [0, 1]")
        return 1.0 if t == 0 else float(self.alpha_bar_value)

    def step_coefficients(self, t: int) -> tuple[float, float, float]:
        beta = self.beta(t)
        return 2.0 - math.sqrt(1.0 - beta), beta, math.sqrt(beta)


def linear_schedule(n_steps: int = 100, beta_min: float = 1e-4, beta_max: float = 0.2) -> NoiseSchedule:
    problems = []
    if int(n_steps) != n_steps or n_steps < 1:
        problems.append(f"n_steps must be a positive integer, got {n_steps!r}")
    if not (0.0 < beta_min < 1.0):
        problems.append(f"beta_min must lie in (0, 1), got {beta_min!r}")
    if not (0.0 < beta_max < 1.0):
        problems.append(f"beta_max must lie in (0, 1), got {beta_max!r}")
    if not problems and beta_min > beta_max:
        problems.append(f"beta_min ({beta_min}) exceeds beta_max ({beta_max})")
    if problems:
        raise ScheduleError("invalid schedule: " + "; ".join(problems))
    if n_steps == 1:
        return NoiseSchedule(np.array([beta_min], dtype=float))
    return NoiseSchedule(np.linspace(beta_min, beta_max, int(n_steps)))


def step_coefficients(schedule, t: int) -> tuple[float, float, float]:
    return schedule.step_coefficients(t)
