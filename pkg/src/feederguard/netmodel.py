"""Radial feeder data model, case-file ingestion and case transformations.

Every case object is immutable: operations such as :func:`scale_loads` or
:func:`apply_dg` return a new :class:`NetworkCase` and leave their input
untouched, so cases can be shared freely between workers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from collections import deque
from collections.abc import Iterable
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

from .errors import BoundsError, CaseError, TopologyError

P_DG_MIN_KW = 100.0
P_DG_MAX_KW = 5000.0

DEFAULT_V_BASE_KV = 12.66
DEFAULT_S_BASE_MVA = 10.0

BUNDLED_CASES = ("ieee33",)


@dataclass(frozen=True)
class Bus:
    id: int
    p_load: float = 0.0  # kW
    q_load: float = 0.0  # kVAr
    is_slack: bool = False


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float  # ohm
    x: float  # ohm
    status: bool = True

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise CaseError(f"branch {self.from_bus}-{self.to_bus} connects a bus to itself")
        if self.r < 0 or self.x < 0:
            raise CaseError(f"branch {self.from_bus}-{self.to_bus} has negative impedance")

    @property
    def name(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"

    def other_end(self, bus: int) -> int:
        return self.to_bus if bus == self.from_bus else self.from_bus


@dataclass(frozen=True)
class DgUnit:
    """Fixed real-power injection at unity power factor."""

    bus: int
    p_dg: float  # kW
    q_dg: float = 0.0  # kVAr

    def __post_init__(self):
        if not (P_DG_MIN_KW <= self.p_dg <= P_DG_MAX_KW):
            raise BoundsError(
                f"DG at bus {self.bus}: {self.p_dg} kW outside "
                f"[{P_DG_MIN_KW:g}, {P_DG_MAX_KW:g}] kW"
            )
        if self.q_dg != 0.0:
            raise BoundsError(f"DG at bus {self.bus} must run at unity power factor (q_dg = 0)")


@dataclass(frozen=True)
class DgPlacement:
    """A set of DG units on pairwise distinct buses."""

    units: tuple[DgUnit, ...]

    def __post_init__(self):
        if not self.units:
            raise BoundsError("placement needs at least one DG unit")
        buses = [u.bus for u in self.units]
        if len(set(buses)) != len(buses):
            raise BoundsError(f"duplicate DG bus in placement {buses}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> DgPlacement:
        return cls(tuple(DgUnit(int(b), float(p)) for b, p in pairs))

    @property
    def buses(self) -> tuple[int, ...]:
        return tuple(u.bus for u in self.units)

    @property
    def sizes(self) -> tuple[float, ...]:
        return tuple(u.p_dg for u in self.units)

    def __len__(self):
        return len(self.units)

    def as_pairs(self) -> list[tuple[int, float]]:
        return [(u.bus, u.p_dg) for u in self.units]


@dataclass(frozen=True)
class RadialReport:
    """Result of :func:`validate_radial`.

    ``parent`` maps every non-slack bus id to the branch feeding it and
    ``order`` lists bus ids slack-first in breadth-first (depth) order, so a
    reversed walk visits children before parents.
    """

    slack: int
    parent: dict[int, Branch]
    order: tuple[int, ...]
    depth: dict[int, int]

    def parent_bus(self, bus: int) -> int:
        return self.parent[bus].other_end(bus)


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    v_base: float = DEFAULT_V_BASE_KV  # kV line-to-line
    s_base: float = DEFAULT_S_BASE_MVA  # MVA
    slack_voltage: float = 1.0  # p.u.
    dg_units: tuple[DgUnit, ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "dg_units", tuple(self.dg_units))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise CaseError(f"duplicate bus id(s): {dup}")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise CaseError(f"branch {br.name} references an unknown bus")
        if not (0.90 <= self.slack_voltage <= 1.10):
            raise CaseError(f"slack voltage {self.slack_voltage} p.u. outside [0.90, 1.10]")
        dg_buses = [u.bus for u in self.dg_units]
        if len(set(dg_buses)) != len(dg_buses):
            raise BoundsError(f"duplicate DG bus in case: {dg_buses}")
        for u in self.dg_units:
            if u.bus not in known:
                raise CaseError(f"DG references unknown bus {u.bus}")

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def topology(self) -> RadialReport:
        return validate_radial(self)

    @property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    @property
    def slack_bus(self) -> int:
        return self.topology.slack

    @property
    def in_service(self) -> tuple[Branch, ...]:
        return tuple(br for br in self.branches if br.status)

    def bus(self, bus_id: int) -> Bus:
        try:
            return self.buses[self.bus_index[bus_id]]
        except KeyError:
            raise CaseError(f"unknown bus {bus_id}") from None

    def total_load(self) -> tuple[float, float]:
        """Sum of (p_load kW, q_load kVAr) over all buses, excluding DG."""
        return (sum(b.p_load for b in self.buses), sum(b.q_load for b in self.buses))

    def total_dg(self) -> float:
        return sum(u.p_dg for u in self.dg_units)

    def net_load(self) -> list[tuple[float, float]]:
        """Per-bus (P, Q) demand in kW/kVAr with DG output netted off."""
        net = [[b.p_load, b.q_load] for b in self.buses]
        for u in self.dg_units:
            i = self.bus_index[u.bus]
            net[i][0] -= u.p_dg
            net[i][1] -= u.q_dg
        return [(p, q) for p, q in net]

    def with_slack_voltage(self, v: float) -> NetworkCase:
        return dataclasses.replace(self, slack_voltage=float(v))

    def digest(self) -> str:
        blob = json.dumps(case_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def validate_radial(case: NetworkCase) -> RadialReport:
    """Check that the in-service branches form a tree rooted at the slack bus.

    Raises:
        TopologyError: missing or multiple slack buses, a cycle among the
            in-service branches, or a bus unreachable from the slack.
    """
    slacks = [b.id for b in case.buses if b.is_slack]
    if not slacks:
        raise TopologyError("case has no slack bus")
    if len(slacks) > 1:
        raise TopologyError(f"multiple slack buses: {slacks}")
    slack = slacks[0]

    adjacency: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for k, br in enumerate(case.branches):
        if br.status:
            adjacency[br.from_bus].append(k)
            adjacency[br.to_bus].append(k)

    parent: dict[int, Branch] = {}
    parent_k: dict[int, int] = {}
    depth = {slack: 0}
    order = [slack]
    queue = deque([slack])
    while queue:
        u = queue.popleft()
        for k in adjacency[u]:
            if k == parent_k.get(u):
                continue
            br = case.branches[k]
            v = br.other_end(u)
            if v in depth:
                raise TopologyError(f"cycle detected through branch {br.name}")
            parent[v] = br
            parent_k[v] = k
            depth[v] = depth[u] + 1
            order.append(v)
            queue.append(v)

    missing = [b.id for b in case.buses if b.id not in depth]
    if missing:
        raise TopologyError(f"bus(es) {missing} not connected to slack bus {slack}")
    return RadialReport(slack=slack, parent=parent, order=tuple(order), depth=depth)


# -- transformations ---------------------------------------------------------


def scale_loads(case: NetworkCase, targets: Iterable[int], multiplier: float) -> NetworkCase:
    """Multiply P and Q demand at ``targets`` by ``1 + multiplier``."""
    targets = set(targets)
    if multiplier <= -1:
        raise BoundsError(f"multiplier {multiplier} would make loads negative")
    unknown = targets - set(case.bus_index)
    if unknown:
        raise CaseError(f"unknown target bus(es): {sorted(unknown)}")
    factor = 1.0 + multiplier
    buses = tuple(
        dataclasses.replace(b, p_load=b.p_load * factor, q_load=b.q_load * factor)
        if b.id in targets
        else b
        for b in case.buses
    )
    return dataclasses.replace(case, buses=buses)


def apply_dg(case: NetworkCase, placement: DgPlacement | Iterable[DgUnit]) -> NetworkCase:
    """Return ``case`` with the DG units of ``placement`` added as negative load."""
    units = placement.units if isinstance(placement, DgPlacement) else tuple(placement)
    slack = case.slack_bus
    for u in units:
        case.bus(u.bus)
        if u.bus == slack:
            raise BoundsError(f"DG cannot be placed on slack bus {slack}")
    return dataclasses.replace(case, dg_units=case.dg_units + tuple(units))


def remove_dg(case: NetworkCase, bus: int | None = None) -> NetworkCase:
    """Drop the DG unit at ``bus``, or every unit when ``bus`` is None."""
    if bus is None:
        return dataclasses.replace(case, dg_units=())
    kept = tuple(u for u in case.dg_units if u.bus != bus)
    if len(kept) == len(case.dg_units):
        raise CaseError(f"no DG unit at bus {bus}")
    return dataclasses.replace(case, dg_units=kept)


# -- per-unit view -----------------------------------------------------------


@dataclass(frozen=True)
class PerUnitCase:
    """Per-unit view of a case; powers on ``s_base``, impedances on ``z_base``."""

    source: NetworkCase = field(repr=False)
    z_base: float
    p_load: tuple[float, ...]
    q_load: tuple[float, ...]
    r: tuple[float, ...]
    x: tuple[float, ...]
    p_dg: tuple[float, ...]

    def to_physical(self) -> NetworkCase:
        src = self.source
        kva = src.s_base * 1000.0
        buses = tuple(
            dataclasses.replace(b, p_load=p * kva, q_load=q * kva)
            for b, p, q in zip(src.buses, self.p_load, self.q_load)
        )
        branches = tuple(
            dataclasses.replace(br, r=r * self.z_base, x=x * self.z_base)
            for br, r, x in zip(src.branches, self.r, self.x)
        )
        dgs = tuple(dataclasses.replace(u, p_dg=p * kva) for u, p in zip(src.dg_units, self.p_dg))
        return dataclasses.replace(src, buses=buses, branches=branches, dg_units=dgs)


def to_per_unit(case: NetworkCase) -> PerUnitCase:
    if case.v_base <= 0 or case.s_base <= 0:
        raise CaseError(f"bases must be positive (v_base={case.v_base}, s_base={case.s_base})")
    z_base = case.v_base**2 / case.s_base
    kva = case.s_base * 1000.0
    return PerUnitCase(
        source=case,
        z_base=z_base,
        p_load=tuple(b.p_load / kva for b in case.buses),
        q_load=tuple(b.q_load / kva for b in case.buses),
        r=tuple(br.r / z_base for br in case.branches),
        x=tuple(br.x / z_base for br in case.branches),
        p_dg=tuple(u.p_dg / kva for u in case.dg_units),
    )


# -- case files --------------------------------------------------------------


def _require(doc: dict, key: str, where: str):
    try:
        return doc[key]
    except (KeyError, TypeError):
        raise CaseError(f"{where}: missing required key {key!r}") from None


def case_from_dict(doc: dict, name: str = "") -> NetworkCase:
    """Build and validate a case from the JSON case-file structure."""
    if not isinstance(doc, dict):
        raise CaseError("case document must be a JSON object")
    try:
        buses = tuple(
            Bus(
                id=int(_require(b, "id", f"buses[{i}]")),
                p_load=float(b.get("p_load_kw", 0.0)),
                q_load=float(b.get("q_load_kvar", 0.0)),
                is_slack=bool(b.get("is_slack", False)),
            )
            for i, b in enumerate(_require(doc, "buses", "case"))
        )
        branches = tuple(
            Branch(
                from_bus=int(_require(br, "from", f"branches[{i}]")),
                to_bus=int(_require(br, "to", f"branches[{i}]")),
                r=float(_require(br, "r_ohm", f"branches[{i}]")),
                x=float(_require(br, "x_ohm", f"branches[{i}]")),
                status=bool(br.get("status", True)),
            )
            for i, br in enumerate(_require(doc, "branches", "case"))
        )
        dgs = tuple(
            DgUnit(bus=int(u["bus"]), p_dg=float(u["p_dg_kw"]), q_dg=float(u.get("q_dg_kvar", 0.0)))
            for u in doc.get("dg_units", [])
        )
        case = NetworkCase(
            buses=buses,
            branches=branches,
            v_base=float(doc.get("v_base_kv", DEFAULT_V_BASE_KV)),
            s_base=float(doc.get("s_base_mva", DEFAULT_S_BASE_MVA)),
            slack_voltage=float(doc.get("slack_voltage_pu", 1.0)),
            dg_units=dgs,
            name=str(doc.get("name", name)),
        )
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, CaseError):
            raise
        raise CaseError(f"malformed case data: {exc}") from exc
    validate_radial(case)
    for u in case.dg_units:
        if u.bus == case.slack_bus:
            raise BoundsError(f"DG cannot be placed on slack bus {u.bus}")
    return case


def case_to_dict(case: NetworkCase) -> dict:
    doc = {
        "name": case.name,
        "v_base_kv": case.v_base,
        "s_base_mva": case.s_base,
        "slack_voltage_pu": case.slack_voltage,
        "buses": [
            {"id": b.id, "p_load_kw": b.p_load, "q_load_kvar": b.q_load, "is_slack": b.is_slack}
            for b in case.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r_ohm": br.r, "x_ohm": br.x, "status": br.status}
            for br in case.branches
        ],
        "dg_units": [{"bus": u.bus, "p_dg_kw": u.p_dg, "q_dg_kvar": u.q_dg} for u in case.dg_units],
    }
    return doc


def load_case(path: str | Path) -> NetworkCase:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseError(f"cannot read case file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: invalid JSON ({exc})") from exc
    return case_from_dict(doc, name=path.stem)


def bundled_case_path(name: str) -> Path:
    if name not in BUNDLED_CASES:
        raise CaseError(f"no bundled case named {name!r}; available: {', '.join(BUNDLED_CASES)}")
    return Path(str(resources.files("feederguard") / "cases" / f"{name}.json"))


def resolve_case(ref: str | Path) -> NetworkCase:
    """Load a bundled case by name (e.g. ``"ieee33"``) or a case file by path."""
    if isinstance(ref, str) and ref in BUNDLED_CASES:
        return load_case(bundled_case_path(ref))
    return load_case(ref)
