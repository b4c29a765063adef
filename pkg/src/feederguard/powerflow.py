"""Backward/forward sweep load flow for radial feeders.

Loads are constant-power.  The sweep engine (:class:`RadialSweep`) works on a
matrix of net-load vectors, one column per scenario, all sharing the same
tree.  Every operation is elementwise across columns and each column stops
iterating as soon as it converges, so a column solved inside a batch is
bitwise identical to the same case solved alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PowerFlowError
from .netmodel import Branch, NetworkCase

DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERATIONS = 100


@dataclass(frozen=True)
class VoltageBand:
    v_min: float = 0.917
    v_max: float = 1.042

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ValueError(f"empty voltage band [{self.v_min}, {self.v_max}]")


DEFAULT_BAND = VoltageBand()


@dataclass(frozen=True)
class SweepResult:
    """Raw batch output; arrays are (n_bus, n_columns) or (n_columns,)."""

    voltages: np.ndarray
    branch_currents: np.ndarray
    iterations: np.ndarray
    max_mismatch: np.ndarray
    converged: np.ndarray


class RadialSweep:
    """Precomputed tree ordering and per-unit branch impedances for one feeder.

    Row ``k`` of every array refers to ``case.buses[k]``; the branch current
    stored in row ``k`` flows through the parent branch of that bus, and the
    slack row holds the total current drawn from the source.
    """

    def __init__(self, case: NetworkCase):
        topo = case.topology
        idx = case.bus_index
        self.case = case
        self.n = len(case.buses)
        self.slack = idx[topo.slack]
        self.order = np.array([idx[b] for b in topo.order[1:]], dtype=np.intp)
        self.parent = np.full(self.n, -1, dtype=np.intp)
        self.z = np.zeros(self.n, dtype=complex)
        z_base = case.v_base**2 / case.s_base
        for bus_id, br in topo.parent.items():
            k = idx[bus_id]
            self.parent[k] = idx[br.other_end(bus_id)]
            self.z[k] = complex(br.r, br.x) / z_base
        self.kva = case.s_base * 1000.0

    def load_vector(self, case: NetworkCase) -> np.ndarray:
        """Net complex load per bus in p.u. (DG output subtracted)."""
        net = case.net_load()
        return np.array([complex(p, q) for p, q in net]) / self.kva

    def run(
        self,
        s_load: np.ndarray,
        v_slack: float,
        tolerance: float = DEFAULT_TOLERANCE,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
    ) -> SweepResult:
        if tolerance <= 0:
            raise ValueError("tolerance must be positive")
        s_load = np.asarray(s_load, dtype=complex)
        if s_load.ndim == 1:
            s_load = s_load[:, None]
        n_col = s_load.shape[1]
        order, parent, z, slack = self.order, self.parent, self.z, self.slack

        v = np.full((self.n, n_col), complex(v_slack))
        ib = np.zeros((self.n, n_col), dtype=complex)
        iterations = np.zeros(n_col, dtype=int)
        mismatch = np.full(n_col, np.inf)
        converged = np.zeros(n_col, dtype=bool)
        active = np.arange(n_col)

        with np.errstate(all="ignore"):
            for it in range(1, max_iterations + 1):
                v_old = v[:, active]
                # backward sweep: injections, then leaf-to-root accumulation
                # the slack row keeps its own load so it ends up holding the source current
                cur = np.conj(s_load[:, active] / v_old)
                for k in order[::-1]:
                    cur[parent[k]] += cur[k]
                # forward sweep: root-to-leaf voltage drops
                v_new = np.empty_like(v_old)
                v_new[slack] = v_slack
                for k in order:
                    v_new[k] = v_new[parent[k]] - z[k] * cur[k]

                delta = np.max(np.abs(v_new - v_old), axis=0)
                v[:, active] = v_new
                ib[:, active] = cur
                iterations[active] = it
                mismatch[active] = delta
                done = delta < tolerance
                converged[active[done]] = True
                active = active[~done]
                if active.size == 0:
                    break

        return SweepResult(v, ib, iterations, mismatch, converged)

    def solution(
        self, case: NetworkCase, result: SweepResult, column: int = 0, tolerance: float = DEFAULT_TOLERANCE
    ) -> PowerFlowSolution:
        v = result.voltages[:, column].copy()
        ib = result.branch_currents[:, column].copy()
        topo = case.topology
        idx = case.bus_index
        positions = {id(br): i for i, br in enumerate(case.branches)}

        buses, branches, branch_pos, flows, p_loss, q_loss = [], [], [], [], [], []
        for b in case.buses:
            if b.id == topo.slack:
                continue
            k = idx[b.id]
            br = topo.parent[b.id]
            loss = self.z[k] * abs(ib[k]) ** 2
            buses.append(b.id)
            branches.append(br)
            branch_pos.append(positions[id(br)])
            flows.append(v[self.parent[k]] * np.conj(ib[k]))
            p_loss.append(float(loss.real * self.kva))
            q_loss.append(float(loss.imag * self.kva))

        return PowerFlowSolution(
            case=case,
            voltages=_frozen(v),
            loss_buses=tuple(buses),
            branches=tuple(branches),
            branch_positions=tuple(branch_pos),
            branch_flows=_frozen(np.array(flows, dtype=complex)),
            p_loss_kw=tuple(p_loss),
            q_loss_kvar=tuple(q_loss),
            slack_power=complex(v[self.slack] * np.conj(ib[self.slack])),
            iterations=int(result.iterations[column]),
            max_mismatch=float(result.max_mismatch[column]),
            converged=bool(result.converged[column]),
            tolerance=tolerance,
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    """Converged (or flagged unconverged) state of one case.

    ``voltages`` is indexed like ``case.buses``.  Branch quantities are listed
    per non-slack bus in case order: entry ``i`` belongs to the branch feeding
    ``loss_buses[i]``.  Flows are sending-end complex power in p.u.; losses are
    kW and kVAr.
    """

    case: NetworkCase
    voltages: np.ndarray
    loss_buses: tuple[int, ...]
    branches: tuple[Branch, ...]
    branch_positions: tuple[int, ...]
    branch_flows: np.ndarray
    p_loss_kw: tuple[float, ...]
    q_loss_kvar: tuple[float, ...]
    slack_power: complex
    iterations: int
    max_mismatch: float
    converged: bool
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def vm(self) -> np.ndarray:
        return np.abs(self.voltages)

    @property
    def angle_deg(self) -> np.ndarray:
        return np.degrees(np.angle(self.voltages))

    def voltage_at(self, bus: int) -> complex:
        return complex(self.voltages[self.case.bus_index[bus]])

    def vm_at(self, bus: int) -> float:
        return abs(self.voltage_at(bus))

    def min_voltage(self) -> tuple[int, float]:
        vm = self.vm
        k = int(np.argmin(vm))
        return self.case.buses[k].id, float(vm[k])

    def power_balance_mismatch(self) -> complex:
        """slack + DG - loads - losses, in p.u.; ~0 for a converged solution."""
        kva = self.case.s_base * 1000.0
        p_load, q_load = self.case.total_load()
        dg = sum(complex(u.p_dg, u.q_dg) for u in self.case.dg_units)
        losses = complex(sum(self.p_loss_kw), sum(self.q_loss_kvar))
        return self.slack_power + (dg - complex(p_load, q_load) - losses) / kva

    def require_converged(self):
        if not self.converged:
            raise PowerFlowError(
                f"power flow did not converge after {self.iterations} iterations "
                f"(max mismatch {self.max_mismatch:.3e} p.u.)"
            )


def solve(
    case: NetworkCase,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> PowerFlowSolution:
    """Solve ``case`` from a flat start at its slack voltage.

    Iterates until the largest per-bus voltage change is below ``tolerance``
    p.u.  Non-convergence is reported through ``converged=False`` rather than
    an exception; a non-radial case raises :class:`TopologyError`.
    """
    sweep = RadialSweep(case)
    result = sweep.run(sweep.load_vector(case), case.slack_voltage, tolerance, max_iterations)
    return sweep.solution(case, result, 0, tolerance)


def total_losses(solution: PowerFlowSolution) -> tuple[float, float]:
    """Total (P kW, Q kVAr) losses, summed bus by bus in case order."""
    solution.require_converged()
    p = 0.0
    q = 0.0
    for pl, ql in zip(solution.p_loss_kw, solution.q_loss_kvar):
        p += pl
        q += ql
    return p, q


def branch_loss_at(solution: PowerFlowSolution, bus: int) -> tuple[float, float]:
    """Loss of the branch feeding ``bus`` in kW and kVAr."""
    solution.require_converged()
    if bus == solution.case.slack_bus:
        raise PowerFlowError("the slack bus has no parent branch")
    try:
        i = solution.loss_buses.index(bus)
    except ValueError:
        raise PowerFlowError(f"unknown bus {bus}") from None
    return solution.p_loss_kw[i], solution.q_loss_kvar[i]


# -- criticality -------------------------------------------------------------


@dataclass(frozen=True)
class RankEntry:
    bus: int
    vm: float
    rank: int


@dataclass(frozen=True)
class CriticalityRanking:
    entries: tuple[RankEntry, ...]

    @property
    def buses(self) -> list[int]:
        return [e.bus for e in self.entries]

    def __len__(self):
        return len(self.entries)


def rank_vm(solution: PowerFlowSolution) -> CriticalityRanking:
    """Rank non-slack buses by voltage magnitude, weakest first."""
    solution.require_converged()
    slack = solution.case.slack_bus
    vm = solution.vm
    pairs = sorted(
        ((float(vm[i]), b.id) for i, b in enumerate(solution.case.buses) if b.id != slack),
    )
    return CriticalityRanking(tuple(RankEntry(bus, v, r) for r, (v, bus) in enumerate(pairs, start=1)))


def select_critical(ranking: CriticalityRanking, k: int) -> list[int]:
    if not 1 <= k <= len(ranking):
        raise ValueError(f"k must be in [1, {len(ranking)}], got {k}")
    return ranking.buses[:k]


@dataclass(frozen=True)
class LimitReport:
    band: VoltageBand
    violations: tuple[tuple[int, float], ...]
    v_min: float
    v_max: float
    min_bus: int
    max_bus: int

    @property
    def breach(self) -> bool:
        return bool(self.violations)


def check_limits(solution: PowerFlowSolution, band: VoltageBand = DEFAULT_BAND) -> LimitReport:
    solution.require_converged()
    vm = solution.vm
    ids = solution.case.bus_ids
    violations = tuple(
        (bus, float(v)) for bus, v in zip(ids, vm) if v < band.v_min or v > band.v_max
    )
    lo, hi = int(np.argmin(vm)), int(np.argmax(vm))
    return LimitReport(band, violations, float(vm[lo]), float(vm[hi]), ids[lo], ids[hi])


# -- export ------------------------------------------------------------------


def write_solution_csv(solution: PowerFlowSolution, bus_path: Path, branch_path: Path) -> None:
    """Write the per-bus voltage CSV and the per-branch loss CSV."""
    with open(bus_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus_id", "v_pu", "angle_deg"])
        for bus, v, a in zip(solution.case.bus_ids, solution.vm, solution.angle_deg):
            w.writerow([bus, repr(float(v)), repr(float(a))])
    with open(branch_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["branch_id", "from", "to", "p_loss_kw", "q_loss_kvar"])
        rows = sorted(zip(solution.branch_positions, solution.branches, solution.p_loss_kw, solution.q_loss_kvar))
        for pos, br, p, q in rows:
            w.writerow([pos + 1, br.from_bus, br.to_bus, repr(p), repr(q)])
