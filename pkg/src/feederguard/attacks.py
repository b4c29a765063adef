"""Load-altering attack scenarios: step attacks and quasi-static oscillating attacks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BoundsError, PowerFlowError
from .netmodel import NetworkCase, scale_loads
from .powerflow import (
    DEFAULT_BAND,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
    PowerFlowSolution,
    RadialSweep,
    VoltageBand,
    solve,
    total_losses,
)

MULTIPLICATIVE = "multiplicative"
ADDITIVE = "additive"


def _check_targets(case: NetworkCase, targets) -> None:
    if case.slack_bus in targets:
        raise BoundsError("the slack bus cannot be an attack target")
    for b in targets:
        case.bus(b)


@dataclass(frozen=True)
class AttackSpec:
    targets: frozenset[int]
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "targets", frozenset(self.targets))
        if not self.targets:
            raise BoundsError("attack needs at least one target bus")
        if self.delta <= -1:
            raise BoundsError(f"delta {self.delta} would make target loads negative")


@dataclass(frozen=True)
class StepAttackResult:
    spec: AttackSpec
    baseline: PowerFlowSolution
    attacked: PowerFlowSolution

    @property
    def losses(self) -> tuple[float, float]:
        return total_losses(self.attacked)

    @property
    def baseline_losses(self) -> tuple[float, float]:
        return total_losses(self.baseline)

    @property
    def loss_increase(self) -> tuple[float, float]:
        (p, q), (p0, q0) = self.losses, self.baseline_losses
        return p - p0, q - q0

    @property
    def min_voltage(self) -> float:
        return self.attacked.min_voltage()[1]


def run_step_attack(
    case: NetworkCase,
    spec: AttackSpec,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> StepAttackResult:
    """Solve ``case`` with the target loads raised by ``spec.delta``, plus the unattacked baseline."""
    _check_targets(case, spec.targets)
    baseline = solve(case, tolerance, max_iterations)
    attacked = solve(scale_loads(case, spec.targets, spec.delta), tolerance, max_iterations)
    baseline.require_converged()
    attacked.require_converged()
    return StepAttackResult(spec, baseline, attacked)


@dataclass(frozen=True)
class DynamicAttackSpec:
    """Ramped, sinusoidally modulated load increase.

    With the default multiplicative mode the load multiplier is
    ``1 + A * r(t) * (1 + B * sin(2*pi*f*t))``, where ``A`` is
    ``peak_delta``, ``B`` is ``oscillation_ratio`` and ``r`` ramps linearly
    from 0 to 1 over ``ramp_duration``.  Additive mode lets the oscillation
    run independently of the ramp: ``1 + A * (r(t) + B * sin(2*pi*f*t))``.
    """

    targets: frozenset[int]
    peak_delta: float = 0.20
    oscillation_ratio: float = 0.5
    oscillation_frequency: float = 1.0 / 60.0
    ramp_duration: float = 300.0
    horizon: float = 900.0
    time_step: float = 1.0
    mode: str = MULTIPLICATIVE

    def __post_init__(self):
        object.__setattr__(self, "targets", frozenset(self.targets))
        if not self.targets:
            raise BoundsError("attack needs at least one target bus")
        if self.peak_delta <= -1:
            raise BoundsError("peak_delta must exceed -1")
        if self.oscillation_ratio < 0:
            raise BoundsError("oscillation_ratio must be non-negative")
        if not 0 < self.time_step <= self.horizon:
            raise BoundsError("time_step must satisfy 0 < time_step <= horizon")
        if not 0 <= self.ramp_duration <= self.horizon:
            raise BoundsError("ramp_duration must lie in [0, horizon]")
        if self.mode not in (MULTIPLICATIVE, ADDITIVE):
            raise BoundsError(f"unknown oscillation mode {self.mode!r}")

    def sample_times(self) -> np.ndarray:
        n = int(math.floor(self.horizon / self.time_step + 1e-9)) + 1
        return np.arange(n) * self.time_step


def multiplier_at(spec: DynamicAttackSpec, t: float) -> float:
    if not 0 <= t <= spec.horizon:
        raise ValueError(f"t={t} outside [0, {spec.horizon}]")
    ramp = 1.0 if spec.ramp_duration == 0 else min(t / spec.ramp_duration, 1.0)
    wave = math.sin(2.0 * math.pi * spec.oscillation_frequency * t)
    if spec.mode == ADDITIVE:
        return 1.0 + spec.peak_delta * (ramp + spec.oscillation_ratio * wave)
    return 1.0 + spec.peak_delta * ramp * (1.0 + spec.oscillation_ratio * wave)


@dataclass(frozen=True)
class TimeSample:
    t: float
    multiplier: float
    vm: np.ndarray
    p_loss_kw: float
    q_loss_kvar: float
    min_voltage: float
    min_bus: int
    breach: bool


@dataclass(frozen=True)
class TimeSeriesResult:
    bus_ids: tuple[int, ...]
    samples: tuple[TimeSample, ...]
    band: VoltageBand = field(default=DEFAULT_BAND)

    @property
    def min_voltage(self) -> float:
        return min(s.min_voltage for s in self.samples)

    @property
    def min_sample(self) -> TimeSample:
        return min(self.samples, key=lambda s: s.min_voltage)

    @property
    def first_breach(self) -> float | None:
        return next((s.t for s in self.samples if s.breach), None)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])


class TimeSeriesAbort(PowerFlowError):
    """A timestep failed to converge; ``partial`` holds the samples before it."""

    def __init__(self, t: float, partial: TimeSeriesResult):
        super().__init__(f"power flow did not converge at t={t} s")
        self.t = t
        self.partial = partial


def run_time_series(
    case: NetworkCase,
    spec: DynamicAttackSpec,
    band: VoltageBand = DEFAULT_BAND,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> TimeSeriesResult:
    """Quasi-static sweep: an independent steady-state solve at every sample time.

    Samples share no state, so they are solved together as one batch.
    """
    _check_targets(case, spec.targets)
    times = spec.sample_times()
    mults = [multiplier_at(spec, float(t)) for t in times]
    for t, m in zip(times, mults):
        if m <= 0:
            raise BoundsError(f"load multiplier {m:.4f} at t={t} s makes target loads negative")

    cases = [scale_loads(case, spec.targets, m - 1.0) for m in mults]
    sweep = RadialSweep(case)
    s = np.stack([sweep.load_vector(c) for c in cases], axis=1)
    result = sweep.run(s, case.slack_voltage, tolerance, max_iterations)

    samples = []
    for j, (t, m, c) in enumerate(zip(times, mults, cases)):
        sol = sweep.solution(c, result, j, tolerance)
        if not sol.converged:
            raise TimeSeriesAbort(float(t), TimeSeriesResult(case.bus_ids, tuple(samples), band))
        p, q = total_losses(sol)
        bus, vmin = sol.min_voltage()
        samples.append(TimeSample(float(t), m, sol.vm, p, q, vmin, bus, vmin < band.v_min))
    return TimeSeriesResult(case.bus_ids, tuple(samples), band)


def write_time_series_csv(result: TimeSeriesResult, summary_path: Path, voltages_path: Path) -> None:
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "min_v_pu", "p_loss_kw", "q_loss_kvar", "breach"])
        for s in result.samples:
            w.writerow([repr(s.t), repr(s.min_voltage), repr(s.p_loss_kw), repr(s.q_loss_kvar), int(s.breach)])
    with open(voltages_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s"] + [f"v_{b}" for b in result.bus_ids])
        for s in result.samples:
            w.writerow([repr(s.t)] + [repr(float(v)) for v in s.vm])
