"""Fixed noise schedule and the forward/reverse diffusion algebra.

Everything here is pure array math, independent of any network. Step indices
are 1-based at the interface: t runs over [1, T], with alpha_bar(0) defined
as 1 so the deterministic few-step sampler can target step 0. Operations
accept numpy arrays or torch tensors; coefficients are plain Python floats,
so dtype and device follow the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidRange, StepOutOfRange

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise intensities and their derived cumulative tables.

    beta[t-1] is the step-t noise intensity; alpha = 1 - beta;
    alpha_bar[t-1] = prod_{s<=t} alpha_s; sigma[t-1] = sqrt(beta_t) is the
    reverse-step noise scale.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    schedule_kind: str = "linear"
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END

    def _check_step(self, t: int, allow_zero: bool = False) -> None:
        low = 0 if allow_zero else 1
        if not (low <= t <= self.T):
            raise StepOutOfRange(f"step {t} outside [{low}, {self.T}]")

    def beta_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        self._check_step(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def sigma_at(self, t: int) -> float:
        self._check_step(t)
        return float(self.sigma[t - 1])

    def to_dict(self) -> dict:
        return {"kind": self.schedule_kind, "T": self.T,
                "beta_start": self.beta_start, "beta_end": self.beta_end}

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionSchedule":
        if d.get("kind", "linear") != "linear":
            raise InvalidRange(f"unsupported schedule kind {d.get('kind')!r}")
        return build_schedule(int(d["T"]), float(d["beta_start"]), float(d["beta_end"]))


def build_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                   beta_end: float = DEFAULT_BETA_END) -> DiffusionSchedule:
    """Linear beta schedule from beta_start to beta_end over T steps."""
    if T < 1:
        raise InvalidRange(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidRange(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt(beta)
    return DiffusionSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar,
                             sigma=sigma, beta_start=beta_start, beta_end=beta_end)


def q_sample(schedule: DiffusionSchedule, x0, t: int, eps):
    """Forward corruption: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    abar = schedule.alpha_bar_at(t)
    if t < 1:
        raise StepOutOfRange(f"q_sample step {t} outside [1, {schedule.T}]")
    return x0 * math.sqrt(abar) + eps * math.sqrt(1.0 - abar)


def invert_q_sample(schedule: DiffusionSchedule, x_t, t: int, eps):
    """Solve the forward corruption for x0, given the noise actually injected."""
    abar = schedule.alpha_bar_at(t)
    if t < 1:
        raise StepOutOfRange(f"invert_q_sample step {t} outside [1, {schedule.T}]")
    return (x_t - eps * math.sqrt(1.0 - abar)) / math.sqrt(abar)


def reverse_step(schedule: DiffusionSchedule, x_t, eps_hat, t: int, z):
    """One ancestral reverse update.

    x_{t-1} = (x_t - (1 - alpha_t)/sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
              + sigma_t * z

    Callers pass z = 0 at the final step (t = 1).
    """
    alpha = schedule.alpha_at(t)
    abar = schedule.alpha_bar_at(t)
    coef = (1.0 - alpha) / math.sqrt(1.0 - abar)
    return (x_t - eps_hat * coef) / math.sqrt(alpha) + z * schedule.sigma_at(t)


def ddim_step(schedule: DiffusionSchedule, x_t, eps_hat, t: int, t_prev: int):
    """Deterministic (eta = 0) jump from step t to an earlier step t_prev.

    Predicts x0 from the noise estimate, then re-noises to the target level:
    x_{t_prev} = sqrt(abar_{t_prev}) x0_hat + sqrt(1 - abar_{t_prev}) eps_hat.
    t_prev = 0 lands on the clean sample (alpha_bar(0) = 1).
    """
    if t_prev > t:
        raise StepOutOfRange(f"t_prev ({t_prev}) must not exceed t ({t})")
    if t_prev == t:
        return x_t
    abar_t = schedule.alpha_bar_at(t)
    if t < 1:
        raise StepOutOfRange(f"ddim_step t {t} outside [1, {schedule.T}]")
    abar_prev = schedule.alpha_bar_at(t_prev)
    x0_hat = (x_t - eps_hat * math.sqrt(1.0 - abar_t)) / math.sqrt(abar_t)
    return x0_hat * math.sqrt(abar_prev) + eps_hat * math.sqrt(1.0 - abar_prev)


def ddim_time_grid(T: int, substeps: int) -> list[int]:
    """Descending step sequence for few-step sampling, ending at 0.

    ``substeps`` points spread uniformly over [1, T] (always including T),
    plus the terminal 0.
    """
    if not (1 <= substeps <= T):
        raise StepOutOfRange(f"substeps {substeps} outside [1, {T}]")
    pts = np.unique(np.round(np.linspace(T / substeps, T, substeps)).astype(int))
    pts = pts[pts >= 1]
    return list(pts[::-1]) + [0]
