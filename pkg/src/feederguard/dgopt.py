"""DG siting and sizing by particle swarm optimization.

The objective summed over non-slack buses is

    |V_i - v_ref|^2 + alpha * P_loss(i) + beta * Q_loss(i)

with P_loss(i), Q_loss(i) the losses (p.u. on the case power base) of the
branch feeding bus i, plus a quadratic penalty on voltage-band excursions.
A particle is a real vector: one bus coordinate per DG followed by one size
(kW) per DG; :func:`decode_particle` turns it into a valid placement.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError
from .netmodel import P_DG_MAX_KW, P_DG_MIN_KW, DgPlacement, NetworkCase, apply_dg
from .powerflow import (
    DEFAULT_BAND,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
    RadialSweep,
    VoltageBand,
    solve,
    total_losses,
)

# Objective assigned to a placement whose power flow diverges.
INFEASIBLE_OBJECTIVE = 1.0e6


@dataclass(frozen=True)
class ObjectiveWeights:
    v_ref: float = 1.0
    alpha: float = 5.0
    beta: float = 5.0
    band_penalty: float = 100.0
    band: VoltageBand = DEFAULT_BAND

    def __post_init__(self):
        if min(self.alpha, self.beta, self.band_penalty) < 0:
            raise BoundsError("objective weights must be non-negative")
        if not 0.9 <= self.v_ref <= 1.1:
            raise BoundsError(f"v_ref {self.v_ref} outside [0.9, 1.1]")


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 500
    iterations: int = 100
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    seed: int = 0
    velocity_clamp: float = 0.2
    n_dg: int = 3
    # When set, DG sizes snap to the nearest of these kW values.
    size_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.swarm_size < 1:
            raise BoundsError("swarm_size must be >= 1")
        if self.iterations < 0:
            raise BoundsError("iterations must be >= 0")
        if min(self.inertia, self.cognitive, self.social) < 0:
            raise BoundsError("PSO coefficients must be non-negative")
        if not self.velocity_clamp > 0:
            raise BoundsError("velocity_clamp must be positive")
        if self.n_dg < 1:
            raise BoundsError("n_dg must be >= 1")
        if self.size_grid is not None:
            grid = tuple(sorted(float(g) for g in self.size_grid))
            if not grid or grid[0] < P_DG_MIN_KW or grid[-1] > P_DG_MAX_KW:
                raise BoundsError("size_grid values must lie within the DG size bounds")
            object.__setattr__(self, "size_grid", grid)


class PlacementProblem:
    """Decoding and vectorized objective evaluation for one feeder.

    ``objective`` takes a (swarm, 2 * n_dg) array and evaluates every row in
    a single batched sweep; evaluation draws no randomness.
    """

    def __init__(
        self,
        case: NetworkCase,
        weights: ObjectiveWeights = ObjectiveWeights(),
        n_dg: int = 3,
        size_grid: tuple[float, ...] | None = None,
        tolerance: float = DEFAULT_TOLERANCE,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
    ):
        self.case = case
        self.weights = weights
        self.n_dg = n_dg
        self.size_grid = None if size_grid is None else np.asarray(sorted(size_grid), dtype=float)
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        slack = case.slack_bus
        self.valid_buses = sorted(b.id for b in case.buses if b.id != slack)
        if len(self.valid_buses) < n_dg:
            raise BoundsError(f"{n_dg} DG units need at least {n_dg} non-slack buses")
        self._valid_set = set(self.valid_buses)
        self.sweep = RadialSweep(case)
        self.base_load = self.sweep.load_vector(case)
        self.non_slack = np.array([i for i in range(self.sweep.n) if i != self.sweep.slack], dtype=np.intp)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.valid_buses[0]] * self.n_dg + [P_DG_MIN_KW] * self.n_dg, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.valid_buses[-1]] * self.n_dg + [P_DG_MAX_KW] * self.n_dg, dtype=float)

    def _next_bus(self, bus: int) -> int:
        lo, hi = self.valid_buses[0], self.valid_buses[-1]
        bus = bus + 1 if bus < hi else lo
        while bus not in self._valid_set:
            bus = bus + 1 if bus < hi else lo
        return bus

    def decode(self, position) -> tuple[list[int], list[float]]:
        position = np.asarray(position, dtype=float)
        if position.shape != (2 * self.n_dg,) or not np.all(np.isfinite(position)):
            raise ValueError(f"position must be {2 * self.n_dg} finite numbers")
        lo, hi = self.valid_buses[0], self.valid_buses[-1]
        buses: list[int] = []
        for coord in position[: self.n_dg]:
            bus = int(math.floor(min(max(coord, lo), hi) + 0.5))
            if bus not in self._valid_set:
                bus = self._next_bus(bus)
            while bus in buses:
                bus = self._next_bus(bus)
            buses.append(bus)
        sizes = np.clip(position[self.n_dg :], P_DG_MIN_KW, P_DG_MAX_KW)
        if self.size_grid is not None:
            nearest = np.abs(sizes[:, None] - self.size_grid[None, :]).argmin(axis=1)
            sizes = self.size_grid[nearest]
        return buses, [float(s) for s in sizes]

    def placement(self, position) -> DgPlacement:
        buses, sizes = self.decode(position)
        return DgPlacement.from_pairs(zip(buses, sizes))

    def objective(self, positions: np.ndarray) -> np.ndarray:
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        n_col = positions.shape[0]
        s = np.repeat(self.base_load[:, None], n_col, axis=1)
        idx = self.case.bus_index
        kva = self.sweep.kva
        for j, pos in enumerate(positions):
            buses, sizes = self.decode(pos)
            for b, p in zip(buses, sizes):
                s[idx[b], j] -= p / kva
        res = self.sweep.run(s, self.case.slack_voltage, self.tolerance, self.max_iterations)
        return self._score(res)

    def _score(self, res) -> np.ndarray:
        w = self.weights
        rows = self.non_slack
        vm = np.abs(res.voltages[rows])
        loss = self.sweep.z[rows, None] * np.abs(res.branch_currents[rows]) ** 2
        dev = (vm - w.v_ref) ** 2
        band = np.maximum(0.0, w.band.v_min - vm) ** 2 + np.maximum(0.0, vm - w.band.v_max) ** 2
        terms = dev + w.alpha * loss.real + w.beta * loss.imag + w.band_penalty * band
        with np.errstate(invalid="ignore"):
            total = terms.sum(axis=0)
        ok = res.converged & np.isfinite(total)
        return np.where(ok, total, INFEASIBLE_OBJECTIVE)


def decode_particle(
    position, case: NetworkCase, n_dg: int = 3, size_grid: tuple[float, ...] | None = None
) -> DgPlacement:
    """Map a real vector onto a valid placement.

    Bus coordinates are clamped to the non-slack id range and rounded half-up;
    an id already taken (or not a load bus) advances to the next free valid
    id, wrapping past the top.  Sizes are clamped to the DG bounds.
    """
    return PlacementProblem(case, n_dg=n_dg, size_grid=size_grid).placement(position)


def evaluate_objective(
    case: NetworkCase, placement: DgPlacement, weights: ObjectiveWeights = ObjectiveWeights()
) -> float:
    """Objective value of ``placement`` on ``case``, from a full power-flow solve."""
    sol = solve(apply_dg(case, placement))
    if not sol.converged:
        return INFEASIBLE_OBJECTIVE
    kva = case.s_base * 1000.0
    slack = case.slack_bus
    total = 0.0
    for b, v in zip(case.bus_ids, sol.vm):
        if b == slack:
            continue
        total += (v - weights.v_ref) ** 2
        total += weights.band_penalty * (
            max(0.0, weights.band.v_min - v) ** 2 + max(0.0, v - weights.band.v_max) ** 2
        )
    for p, q in zip(sol.p_loss_kw, sol.q_loss_kvar):
        total += weights.alpha * p / kva + weights.beta * q / kva
    return float(total)


@dataclass(frozen=True)
class OptimizationResult:
    best_placement: DgPlacement
    best_objective: float
    history: tuple[float, ...]
    evaluations: int
    config: PsoConfig
    weights: ObjectiveWeights
    best_position: tuple[float, ...] = field(repr=False, default=())

    @property
    def seed(self) -> int:
        return self.config.seed


def pso_optimize(
    case: NetworkCase, weights: ObjectiveWeights = ObjectiveWeights(), config: PsoConfig = PsoConfig()
) -> OptimizationResult:
    """Global-best PSO over DG buses and sizes.

    Each iteration updates every velocity with inertia plus random pulls
    toward the particle's own best and the swarm's best position, clamps it,
    moves and clamps the particle, then evaluates the whole swarm at once.
    The only random stream belongs to the update step, so results depend on
    ``config.seed`` alone.
    """
    problem = PlacementProblem(case, weights, config.n_dg, config.size_grid)
    rng = np.random.default_rng(config.seed)
    lo, hi = problem.lower, problem.upper
    dims = lo.size
    span = hi - lo
    vmax = config.velocity_clamp * span
    n = config.swarm_size

    x = lo + rng.random((n, dims)) * span
    v = (2.0 * rng.random((n, dims)) - 1.0) * vmax
    f = problem.objective(x)
    pbest, pbest_f = x.copy(), f.copy()
    j = int(np.argmin(pbest_f))
    gbest, gbest_f = pbest[j].copy(), float(pbest_f[j])
    history = [gbest_f]

    for _ in range(config.iterations):
        r1 = rng.random((n, dims))
        r2 = rng.random((n, dims))
        v = (
            config.inertia * v
            + config.cognitive * r1 * (pbest - x)
            + config.social * r2 * (gbest - x)
        )
        v = np.clip(v, -vmax, vmax)
        x = np.clip(x + v, lo, hi)
        f = problem.objective(x)
        better = f < pbest_f
        pbest[better] = x[better]
        pbest_f[better] = f[better]
        j = int(np.argmin(pbest_f))
        if pbest_f[j] < gbest_f:
            gbest, gbest_f = pbest[j].copy(), float(pbest_f[j])
        history.append(gbest_f)

    return OptimizationResult(
        best_placement=problem.placement(gbest),
        best_objective=gbest_f,
        history=tuple(history),
        evaluations=n * (config.iterations + 1),
        config=config,
        weights=weights,
        best_position=tuple(float(c) for c in gbest),
    )


def optimization_report(case: NetworkCase, result: OptimizationResult) -> dict:
    """JSON-ready report: config echo, best placement, history and post-placement flow summary."""
    sol = solve(apply_dg(case, result.best_placement))
    p, q = total_losses(sol)
    bus, vmin = sol.min_voltage()
    weights = dataclasses.asdict(result.weights)
    weights["band"] = [result.weights.band.v_min, result.weights.band.v_max]
    config = dataclasses.asdict(result.config)
    if config["size_grid"] is not None:
        config["size_grid"] = list(config["size_grid"])
    return {
        "case": case.name,
        "case_sha256": case.digest(),
        "slack_voltage_pu": case.slack_voltage,
        "seed": result.config.seed,
        "config": config,
        "weights": weights,
        "best_placement": [{"bus": u.bus, "p_dg_kw": u.p_dg} for u in result.best_placement.units],
        "best_objective": result.best_objective,
        "evaluations": result.evaluations,
        "history": list(result.history),
        "power_flow": {
            "p_loss_kw": p,
            "q_loss_kvar": q,
            "min_voltage_pu": vmin,
            "min_voltage_bus": bus,
            "iterations": sol.iterations,
        },
    }
