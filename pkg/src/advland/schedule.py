"""Adversarial-budget and learning-rate trajectories, plus period bookkeeping
for periodic (warmup + reset + snapshot) training.

Epoch indices are 0-based; values update once per epoch and are constant
within it. Inside a period of length L the schedule is evaluated at the
offset rescaled by nominal_length / L, so shorter periods replay the same
shape proportionally faster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class EpsScheduler:
    """kind in {constant, cosine, linear}; warmup is the period D in nominal
    epochs; raw values are clipped into [0, eps_target] and the warmup phase
    freezes at D (the budget never decreases after warmup)."""

    kind: str
    eps_target: float
    eps_min: float = 0.0
    eps_max: float = 0.0
    warmup: int = 0

    def __post_init__(self):
        if self.kind not in ("constant", "cosine", "linear"):
            raise ValueError(f"unknown eps scheduler kind {self.kind!r}")
        if self.eps_target < 0:
            raise ValueError("eps_target must be >= 0")


def constant_eps(eps_target: float) -> EpsScheduler:
    return EpsScheduler("constant", eps_target)


def cosine_eps(eps_min: float, eps_max: float, warmup: int, eps_target: float) -> EpsScheduler:
    return EpsScheduler("cosine", eps_target, eps_min, eps_max, warmup)


def linear_eps(eps_min: float, eps_max: float, warmup: int, eps_target: float) -> EpsScheduler:
    return EpsScheduler("linear", eps_target, eps_min, eps_max, warmup)


def _rescaled_offset(d: int, period: tuple[int, int] | None, nominal: int | None) -> float:
    if period is None:
        return float(d)
    start, length = period
    if length <= 0:
        raise ValueError("period length must be positive")
    if not start <= d < start + length:
        raise ValueError(f"epoch {d} outside period [{start}, {start + length})")
    if nominal is None:
        nominal = length
    return (d - start) * (nominal / length)


def eps_at(sched: EpsScheduler, d: int, period: tuple[int, int] | None = None,
           nominal: int | None = None) -> float:
    """Adversarial budget at epoch d (optionally within a period)."""
    if sched.kind == "constant":
        return sched.eps_target
    if sched.warmup <= 0:
        raise ValueError("cosine/linear schedulers need warmup D > 0")
    d_hat = _rescaled_offset(d, period, nominal)
    phase = min(d_hat, float(sched.warmup)) / sched.warmup
    if sched.kind == "cosine":
        raw = 0.5 * (1.0 - math.cos(math.pi * phase)) * (sched.eps_max - sched.eps_min) \
            + sched.eps_min
    else:
        raw = (sched.eps_max - sched.eps_min) * phase + sched.eps_min
    return min(max(raw, 0.0), sched.eps_target)


@dataclass(frozen=True)
class LrSchedule:
    """kind in {constant, step, exp_segment}.

    step: base divided by `divisor` after each boundary epoch.
    exp_segment: base until segment[0], log-linear decay to end_value across
    the segment, constant end_value after.
    """

    kind: str
    base: float
    boundaries: tuple[int, ...] = ()
    divisor: float = 10.0
    end_value: float = 0.0
    segment: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.kind not in ("constant", "step", "exp_segment"):
            raise ValueError(f"unknown lr schedule kind {self.kind!r}")
        if self.base <= 0:
            raise ValueError("lr base must be > 0")
        object.__setattr__(self, "boundaries", tuple(sorted(int(b) for b in self.boundaries)))
        if self.kind == "exp_segment":
            if self.end_value <= 0:
                raise ValueError("exp_segment needs end_value > 0")
            if self.segment[1] <= self.segment[0]:
                raise ValueError("exp_segment needs segment[1] > segment[0]")


def lr_at(plan: LrSchedule, d: int, period: tuple[int, int] | None = None,
          nominal: int | None = None) -> float:
    """Learning rate at epoch d; periodic use restarts the shape each period."""
    d_hat = _rescaled_offset(d, period, nominal)
    if plan.kind == "constant":
        return plan.base
    if plan.kind == "step":
        crossed = sum(1 for b in plan.boundaries if d_hat >= b)
        return plan.base / plan.divisor ** crossed
    s0, s1 = plan.segment
    if d_hat < s0:
        return plan.base
    if d_hat >= s1:
        return plan.end_value
    frac = (d_hat - s0) / (s1 - s0)
    return math.exp(math.log(plan.base) + frac * (math.log(plan.end_value) - math.log(plan.base)))


@dataclass(frozen=True)
class PeriodPlan:
    """Ordered period boundaries; the last boundary equals the total epochs.

    Schedules are defined on the total-epochs scale; each period replays the
    full shape compressed proportionally (pass nominal=total_epochs to
    eps_at/lr_at together with the period's (start, length)).
    """

    boundaries: tuple[int, ...]
    snapshot_at_period_end: bool = True

    def __post_init__(self):
        b = tuple(int(v) for v in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) == 0:
            raise ValueError("at least one period boundary required")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)) or b[0] <= 0:
            raise ValueError("boundaries must be strictly increasing and positive")

    @property
    def total_epochs(self) -> int:
        return self.boundaries[-1]

    @property
    def n_periods(self) -> int:
        return len(self.boundaries)

    def period_of(self, epoch: int) -> tuple[int, int]:
        """(start, length) of the period containing this epoch."""
        if not 0 <= epoch < self.total_epochs:
            raise ValueError(f"epoch {epoch} outside [0, {self.total_epochs})")
        start = 0
        for b in self.boundaries:
            if epoch < b:
                return start, b - start
            start = b
        raise AssertionError("unreachable")

    def is_period_end(self, epoch: int) -> bool:
        return epoch + 1 in self.boundaries


def single_period(epochs: int) -> PeriodPlan:
    return PeriodPlan((epochs,))
