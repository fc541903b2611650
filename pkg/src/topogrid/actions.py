"""Maskable topological action converter.

Every generator, load and line owns one categorical choice and all choices are
applied simultaneously.  Choice tables:

    generator: 0 disconnect, 1 do-nothing, 2 busbar1, 3 busbar2
    load:      0 do-nothing, 1 busbar1, 2 busbar2
    line:      0 disconnect, 1 do-nothing, 2 (1,1), 3 (1,2), 4 (2,1), 5 (2,2)

Line pairs are (origin busbar, extremity busbar).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from .grid import Bus, GridSpec, GridState, TopologyDelta

GEN, LOAD, LINE = "gen", "load", "line"
DIMS = {GEN: 4, LOAD: 3, LINE: 6}
NOOP = {GEN: 1, LOAD: 0, LINE: 1}
# choice that puts the element back on busbar 1 (reconnecting a line)
REFERENCE = {GEN: 2, LOAD: 1, LINE: 2}
MAX_DIM = 6

_GEN_TARGET = {0: Bus.DISCONNECTED, 2: Bus.BUSBAR1, 3: Bus.BUSBAR2}
_LOAD_TARGET = {1: Bus.BUSBAR1, 2: Bus.BUSBAR2}
_LINE_TARGET = {
    0: (Bus.DISCONNECTED, Bus.DISCONNECTED),
    2: (Bus.BUSBAR1, Bus.BUSBAR1),
    3: (Bus.BUSBAR1, Bus.BUSBAR2),
    4: (Bus.BUSBAR2, Bus.BUSBAR1),
    5: (Bus.BUSBAR2, Bus.BUSBAR2),
}


class ActionClass(Enum):
    LEGAL = "legal"
    ILLEGAL = "illegal"
    AMBIGUOUS = "ambiguous"
    ERRONEOUS = "erroneous"


class AmbiguousActionError(ValueError):
    """Raised when an action vector cannot be interpreted against the layout."""


@dataclass(frozen=True)
class ActionLayout:
    kinds: tuple[str, ...]
    positions: tuple[int, ...]  # element position within its class

    @cached_property
    def dims(self) -> tuple[int, ...]:
        return tuple(DIMS[k] for k in self.kinds)

    @property
    def n_elements(self) -> int:
        return len(self.kinds)

    @property
    def total(self) -> int:
        return sum(self.dims)

    @property
    def noop(self) -> np.ndarray:
        return np.array([NOOP[k] for k in self.kinds], dtype=np.int64)

    @property
    def reference(self) -> np.ndarray:
        return np.array([REFERENCE[k] for k in self.kinds], dtype=np.int64)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)[:-1]]).astype(np.int64)

    def valid_choices(self) -> np.ndarray:
        """Boolean [n_elements, MAX_DIM]: which padded slots exist at all."""
        return np.arange(MAX_DIM)[None, :] < np.asarray(self.dims)[:, None]

    def flat_index(self) -> np.ndarray:
        """Map padded slot (element, choice) to its flat logit index (0 for padding)."""
        idx = np.zeros((self.n_elements, MAX_DIM), dtype=np.int64)
        for e, (off, d) in enumerate(zip(self.offsets, self.dims)):
            idx[e, :d] = np.arange(off, off + d)
        return idx

    def schema(self) -> str:
        return ",".join(f"{k}{p}:{DIMS[k]}" for k, p in zip(self.kinds, self.positions))


def layout(spec: GridSpec) -> ActionLayout:
    cached = spec.__dict__.get("_action_layout")
    if cached is None:
        kinds = [GEN] * spec.n_gen + [LOAD] * spec.n_load + [LINE] * spec.n_line
        positions = list(range(spec.n_gen)) + list(range(spec.n_load)) + list(range(spec.n_line))
        cached = ActionLayout(tuple(kinds), tuple(positions))
        # GridSpec is frozen; the layout is a pure function of it, so memoise in place
        spec.__dict__["_action_layout"] = cached
    return cached


@dataclass(frozen=True)
class TopoAction:
    choices: np.ndarray

    @classmethod
    def build(cls, lay: ActionLayout, choices) -> TopoAction:
        arr = np.asarray(choices)
        if arr.shape != (lay.n_elements,) or not np.issubdtype(arr.dtype, np.integer):
            raise AmbiguousActionError(
                f"action must hold {lay.n_elements} integer choices, got shape {arr.shape}"
            )
        dims = np.asarray(lay.dims)
        bad = np.flatnonzero((arr < 0) | (arr >= dims))
        if len(bad):
            e = int(bad[0])
            raise AmbiguousActionError(
                f"choice {int(arr[e])} out of range for {lay.kinds[e]} {lay.positions[e]} (dimension {dims[e]})"
            )
        return cls(arr.astype(np.int64))

    @classmethod
    def do_nothing(cls, lay: ActionLayout) -> TopoAction:
        return cls(lay.noop)


@dataclass(frozen=True)
class ActionMask:
    """Padded boolean validity, shape [n_elements, MAX_DIM]; padding slots are False."""

    valid: np.ndarray

    def element(self, e: int, lay: ActionLayout) -> np.ndarray:
        return self.valid[e, : lay.dims[e]]

    def flat(self, lay: ActionLayout) -> np.ndarray:
        return np.concatenate([self.valid[e, :d] for e, d in enumerate(lay.dims)])


def locked_elements(spec: GridSpec, state: GridState) -> np.ndarray:
    """Boolean per layout element: True when only do-nothing is allowed."""
    lay = layout(spec)
    sub_locked = state.sub_cooldown > 0
    line_locked = (
        (state.line_cooldown > 0)
        | (state.reconnection_timer > 0)
        | (state.attack_timer > 0)
        | (state.maintenance_active > 0)
        | sub_locked[spec.line_or_sub]
        | sub_locked[spec.line_ex_sub]
    )
    return np.concatenate([
        sub_locked[spec.gen_sub],
        sub_locked[spec.load_sub],
        line_locked,
    ])[: lay.n_elements]


def compute_mask(spec: GridSpec, state: GridState) -> ActionMask:
    lay = layout(spec)
    valid = lay.valid_choices()
    locked = locked_elements(spec, state)
    noop = lay.noop
    rows = np.flatnonzero(locked)
    valid[rows] = False
    valid[rows, noop[rows]] = True
    return ActionMask(valid)


def masked_sample_support(mask: ActionMask, lay: ActionLayout) -> list[np.ndarray]:
    return [np.flatnonzero(mask.element(e, lay)) for e in range(lay.n_elements)]


def decode(spec: GridSpec, state: GridState, action: TopoAction) -> tuple[TopologyDelta, ActionClass]:
    lay = layout(spec)
    if action.choices.shape != (lay.n_elements,):
        raise AmbiguousActionError("action does not match the grid layout")
    gen, load, line_or, line_ex = [], [], [], []
    changed = np.zeros(lay.n_elements, dtype=bool)
    for e, (kind, pos, c) in enumerate(zip(lay.kinds, lay.positions, action.choices.tolist())):
        if c == NOOP[kind]:
            continue
        if kind == GEN:
            old, new = int(state.gen_bus[pos]), int(_GEN_TARGET[c])
            if old != new:
                gen.append((pos, old, new))
                changed[e] = True
        elif kind == LOAD:
            old, new = int(state.load_bus[pos]), int(_LOAD_TARGET[c])
            if old != new:
                load.append((pos, old, new))
                changed[e] = True
        else:
            new_or, new_ex = _LINE_TARGET[c]
            old_or, old_ex = int(state.line_or_bus[pos]), int(state.line_ex_bus[pos])
            if old_or != new_or:
                line_or.append((pos, old_or, int(new_or)))
                changed[e] = True
            if old_ex != new_ex:
                line_ex.append((pos, old_ex, int(new_ex)))
                changed[e] = True
    delta = TopologyDelta(tuple(gen), tuple(load), tuple(line_or), tuple(line_ex))
    if np.any(changed & locked_elements(spec, state)):
        return delta, ActionClass.ILLEGAL
    return delta, ActionClass.LEGAL
