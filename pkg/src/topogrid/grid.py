"""Static grid description, dynamic topology state and connectivity analysis."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

GEN_TYPES = ("solar", "wind", "hydro", "thermal", "nuclear")


class SpecError(ValueError):
    """Raised for malformed grid files or references to unknown elements."""


class Bus(IntEnum):
    DISCONNECTED = 0
    BUSBAR1 = 1
    BUSBAR2 = 2


# plain int for hot array comparisons (enum attribute access is slow)
OFF = 0


@dataclass(frozen=True)
class Substation:
    id: int
    name: str = ""


@dataclass(frozen=True)
class Generator:
    id: int
    substation: int
    p_min: float
    p_max: float
    max_ramp_up: float = 0.0
    max_ramp_down: float = 0.0
    min_uptime: int = 0
    min_downtime: int = 0
    cost_per_mw: float = 0.0
    startup_cost: float = 0.0
    shutdown_cost: float = 0.0
    gen_type: str = "thermal"


@dataclass(frozen=True)
class Load:
    id: int
    substation: int


@dataclass(frozen=True)
class Line:
    id: int
    from_substation: int
    to_substation: int
    reactance: float
    resistance: float
    thermal_limit: float


@dataclass(frozen=True)
class GridSpec:
    substations: tuple[Substation, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    lines: tuple[Line, ...]
    slack_generator: int
    base_power: float = 100.0

    @property
    def n_sub(self) -> int:
        return len(self.substations)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_load(self) -> int:
        return len(self.loads)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @cached_property
    def sub_index(self) -> dict[int, int]:
        return {s.id: i for i, s in enumerate(self.substations)}

    @cached_property
    def gen_index(self) -> dict[int, int]:
        return {g.id: i for i, g in enumerate(self.generators)}

    @cached_property
    def load_index(self) -> dict[int, int]:
        return {ld.id: i for i, ld in enumerate(self.loads)}

    @cached_property
    def line_index(self) -> dict[int, int]:
        return {ln.id: i for i, ln in enumerate(self.lines)}

    # Positional arrays used by the numerical code.  All substation references
    # are translated to positions in ``substations``.
    @cached_property
    def gen_sub(self) -> np.ndarray:
        return np.array([self.sub_index[g.substation] for g in self.generators], dtype=np.int64)

    @cached_property
    def load_sub(self) -> np.ndarray:
        return np.array([self.sub_index[ld.substation] for ld in self.loads], dtype=np.int64)

    @cached_property
    def line_or_sub(self) -> np.ndarray:
        return np.array([self.sub_index[ln.from_substation] for ln in self.lines], dtype=np.int64)

    @cached_property
    def line_ex_sub(self) -> np.ndarray:
        return np.array([self.sub_index[ln.to_substation] for ln in self.lines], dtype=np.int64)

    @cached_property
    def reactance(self) -> np.ndarray:
        return np.array([ln.reactance for ln in self.lines], dtype=float)

    @cached_property
    def resistance(self) -> np.ndarray:
        return np.array([ln.resistance for ln in self.lines], dtype=float)

    @cached_property
    def thermal_limit(self) -> np.ndarray:
        return np.array([ln.thermal_limit for ln in self.lines], dtype=float)

    @cached_property
    def gen_p_min(self) -> np.ndarray:
        return np.array([g.p_min for g in self.generators], dtype=float)

    @cached_property
    def gen_p_max(self) -> np.ndarray:
        return np.array([g.p_max for g in self.generators], dtype=float)

    @cached_property
    def slack_pos(self) -> int:
        return self.gen_index[self.slack_generator]

    def sub_elements(self, sub_pos: int) -> dict[str, list[int]]:
        """Positions of the elements attached to a substation, by class.

        Lines are listed under ``line_or`` / ``line_ex`` depending on which of
        their ends sits in the substation.
        """
        return {
            "gen": [i for i, s in enumerate(self.gen_sub) if s == sub_pos],
            "load": [i for i, s in enumerate(self.load_sub) if s == sub_pos],
            "line_or": [i for i, s in enumerate(self.line_or_sub) if s == sub_pos],
            "line_ex": [i for i, s in enumerate(self.line_ex_sub) if s == sub_pos],
        }

    def to_dict(self) -> dict:
        return {
            "substations": [vars(s).copy() for s in self.substations],
            "generators": [vars(g).copy() for g in self.generators],
            "loads": [vars(ld).copy() for ld in self.loads],
            "lines": [vars(ln).copy() for ln in self.lines],
            "slack_generator": self.slack_generator,
            "base_power": self.base_power,
        }

    @classmethod
    def from_dict(cls, data: dict) -> GridSpec:
        required = ("substations", "generators", "loads", "lines", "slack_generator")
        missing = [k for k in required if k not in data]
        if missing:
            raise SpecError(f"grid file is missing keys: {', '.join(missing)}")
        try:
            return cls(
                substations=tuple(Substation(**s) for s in data["substations"]),
                generators=tuple(Generator(**g) for g in data["generators"]),
                loads=tuple(Load(**ld) for ld in data["loads"]),
                lines=tuple(Line(**ln) for ln in data["lines"]),
                slack_generator=data["slack_generator"],
                base_power=float(data.get("base_power", 100.0)),
            )
        except TypeError as exc:
            raise SpecError(f"bad element record: {exc}") from exc


def load_spec(path: str | Path) -> GridSpec:
    path = Path(path)
    if not path.exists():
        raise SpecError(f"grid file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON ({exc})") from exc
    return GridSpec.from_dict(data)


def save_spec(spec: GridSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")


def validate_spec(spec: GridSpec) -> list[str]:
    """Return a list of human-readable violations; empty when the spec is sound."""
    report: list[str] = []
    sub_ids = {s.id for s in spec.substations}

    for cls_name, items in (
        ("substation", spec.substations),
        ("generator", spec.generators),
        ("load", spec.loads),
        ("line", spec.lines),
    ):
        seen: set[int] = set()
        for item in items:
            if item.id in seen:
                report.append(f"{cls_name} {item.id}: duplicate id")
            seen.add(item.id)

    for g in spec.generators:
        if g.substation not in sub_ids:
            report.append(f"generator {g.id}: unknown substation {g.substation}")
        if g.p_min > g.p_max:
            report.append(f"generator {g.id}: p_min > p_max")
        if g.gen_type not in GEN_TYPES:
            report.append(f"generator {g.id}: unknown gen_type {g.gen_type!r}")
    for ld in spec.loads:
        if ld.substation not in sub_ids:
            report.append(f"load {ld.id}: unknown substation {ld.substation}")
    for ln in spec.lines:
        for end in (ln.from_substation, ln.to_substation):
            if end not in sub_ids:
                report.append(f"line {ln.id}: unknown substation {end}")
        if not ln.reactance > 0:
            report.append(f"line {ln.id}: reactance must be > 0")
        if not ln.resistance >= 0:
            report.append(f"line {ln.id}: resistance must be >= 0")
        if not ln.thermal_limit > 0:
            report.append(f"line {ln.id}: thermal_limit must be > 0")

    slack_count = sum(1 for g in spec.generators if g.id == spec.slack_generator)
    if slack_count != 1:
        report.append(f"slack count: expected exactly one slack generator, found {slack_count}")
    if not spec.base_power > 0:
        report.append("base_power must be > 0")
    return report


@dataclass
class GridState:
    """Mutable per-episode topology and rule timers.

    Bus assignments hold :class:`Bus` codes.  All arrays are indexed by element
    position in the owning :class:`GridSpec`.
    """

    gen_bus: np.ndarray
    load_bus: np.ndarray
    line_or_bus: np.ndarray
    line_ex_bus: np.ndarray
    line_cooldown: np.ndarray
    sub_cooldown: np.ndarray
    overflow_counter: np.ndarray
    reconnection_timer: np.ndarray
    # steps until the next scheduled outage (-1: none) and its duration
    maintenance_next: np.ndarray
    maintenance_duration: np.ndarray
    # steps of an ongoing outage still to run
    maintenance_active: np.ndarray
    attack_timer: np.ndarray
    step_index: int = 0
    opponent_cooldown: int = 0
    terminal: bool = False

    @classmethod
    def default(cls, spec: GridSpec) -> GridState:
        """Every element on busbar 1, every line connected, all timers at zero."""
        nl = spec.n_line
        zeros = lambda n: np.zeros(n, dtype=np.int64)  # noqa: E731
        return cls(
            gen_bus=np.full(spec.n_gen, Bus.BUSBAR1, dtype=np.int64),
            load_bus=np.full(spec.n_load, Bus.BUSBAR1, dtype=np.int64),
            line_or_bus=np.full(nl, Bus.BUSBAR1, dtype=np.int64),
            line_ex_bus=np.full(nl, Bus.BUSBAR1, dtype=np.int64),
            line_cooldown=zeros(nl),
            sub_cooldown=zeros(spec.n_sub),
            overflow_counter=zeros(nl),
            reconnection_timer=zeros(nl),
            maintenance_next=np.full(nl, -1, dtype=np.int64),
            maintenance_duration=zeros(nl),
            maintenance_active=zeros(nl),
            attack_timer=zeros(nl),
        )

    def copy(self) -> GridState:
        return GridState(
            **{
                k: (v.copy() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()
            }
        )

    @property
    def line_connected(self) -> np.ndarray:
        return (self.line_or_bus != OFF) & (self.line_ex_bus != OFF)

    def disconnect_line(self, pos: int) -> None:
        self.line_or_bus[pos] = OFF
        self.line_ex_bus[pos] = OFF
        self.overflow_counter[pos] = 0

    def topology_key(self) -> tuple:
        return (
            tuple(self.gen_bus), tuple(self.load_bus),
            tuple(self.line_or_bus), tuple(self.line_ex_bus),
        )

    def check_invariants(self) -> list[str]:
        problems = []
        for name in ("line_cooldown", "sub_cooldown", "overflow_counter", "reconnection_timer",
                     "maintenance_duration", "maintenance_active", "attack_timer"):
            if np.any(getattr(self, name) < 0):
                problems.append(f"{name} has negative entries")
        locked = (self.reconnection_timer > 0) | (self.attack_timer > 0) | (self.maintenance_active > 0)
        live_end = (self.line_or_bus != Bus.DISCONNECTED) | (self.line_ex_bus != Bus.DISCONNECTED)
        if np.any(locked & live_end):
            problems.append("locked line has a connected endpoint")
        if np.any((self.overflow_counter > 0) & ~self.line_connected):
            problems.append("overflow counter set on a disconnected line")
        if not self.terminal and np.any(self.load_bus == Bus.DISCONNECTED):
            problems.append("load disconnected in a live state")
        return problems


Node = tuple[int, int]  # (substation position, busbar 1|2)


@dataclass(frozen=True)
class TopologyDelta:
    """Changed assignments only; each entry is (position, old, new)."""

    gen: tuple[tuple[int, int, int], ...] = ()
    load: tuple[tuple[int, int, int], ...] = ()
    line_or: tuple[tuple[int, int, int], ...] = ()
    line_ex: tuple[tuple[int, int, int], ...] = ()

    def is_empty(self) -> bool:
        return not (self.gen or self.load or self.line_or or self.line_ex)

    def inverse(self) -> TopologyDelta:
        flip = lambda entries: tuple((p, new, old) for p, old, new in entries)  # noqa: E731
        return TopologyDelta(flip(self.gen), flip(self.load), flip(self.line_or), flip(self.line_ex))

    def apply(self, state: GridState) -> None:
        for arr, entries in (
            (state.gen_bus, self.gen),
            (state.load_bus, self.load),
            (state.line_or_bus, self.line_or),
            (state.line_ex_bus, self.line_ex),
        ):
            for pos, _old, new in entries:
                arr[pos] = new


def _check_shapes(spec: GridSpec, state: GridState) -> None:
    if (
        len(state.gen_bus) != spec.n_gen
        or len(state.load_bus) != spec.n_load
        or len(state.line_or_bus) != spec.n_line
        or len(state.line_ex_bus) != spec.n_line
    ):
        raise SpecError("grid state does not match the grid specification")


def element_nodes(spec: GridSpec, state: GridState) -> dict[str, list[Node | None]]:
    """Node of every element endpoint (``None`` when disconnected)."""
    _check_shapes(spec, state)

    def nodes(subs: Iterable[int], buses: Iterable[int]) -> list[Node | None]:
        return [(int(s), int(b)) if b != Bus.DISCONNECTED else None for s, b in zip(subs, buses)]

    return {
        "gen": nodes(spec.gen_sub, state.gen_bus),
        "load": nodes(spec.load_sub, state.load_bus),
        "line_or": nodes(spec.line_or_sub, state.line_or_bus),
        "line_ex": nodes(spec.line_ex_sub, state.line_ex_bus),
    }


def electrical_nodes(spec: GridSpec, state: GridState) -> list[Node]:
    """Live (substation, busbar) pairs, sorted, each with at least one connected element."""
    live = set()
    for endpoints in element_nodes(spec, state).values():
        live.update(n for n in endpoints if n is not None)
    return sorted(live)


def islands(spec: GridSpec, state: GridState) -> list[list[Node]]:
    """Connected components of the live nodes, joined by fully connected lines.

    Components are returned sorted by their smallest node, nodes sorted within.
    """
    nodes = electrical_nodes(spec, state)
    parent = {n: n for n in nodes}

    def find(n: Node) -> Node:
        while parent[n] != n:
            parent[n] = parent[parent[n]]
            n = parent[n]
        return n

    ends = element_nodes(spec, state)
    for a, b in zip(ends["line_or"], ends["line_ex"]):
        if a is not None and b is not None:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    groups: dict[Node, list[Node]] = {}
    for n in nodes:
        groups.setdefault(find(n), []).append(n)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])
