"""Chronics: time series of generation, demand and price that drive episodes."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import GridSpec

STEPS_PER_DAY = 288
DEFAULT_LENGTH = 2016
DEFAULT_HORIZON = 864
N_OFFSETS = 5


class ChronicError(ValueError):
    pass


class MissingFileError(ChronicError):
    pass


class HeaderMismatchError(ChronicError):
    pass


class NonNumericError(ChronicError):
    pass


class NegativeLoadError(ChronicError):
    pass


class BoundsError(ChronicError):
    pass


class ScenarioRangeError(ChronicError):
    pass


@dataclass(frozen=True)
class Maintenance:
    line_id: int
    start: int
    duration: int


@dataclass(frozen=True)
class Chronic:
    id: int
    gen_p: np.ndarray
    load_p: np.ndarray
    price: np.ndarray
    maintenance: tuple[Maintenance, ...] = ()
    step_minutes: int = 5

    @property
    def length(self) -> int:
        return len(self.price)


@dataclass(frozen=True)
class Scenario:
    chronic_id: int
    start_offset_days: int = 0
    horizon: int = DEFAULT_HORIZON

    @property
    def start(self) -> int:
        return self.start_offset_days * STEPS_PER_DAY


@dataclass(frozen=True)
class ChronicView:
    """Window of a chronic; step ``t`` of the view is step ``offset + t`` of the source."""

    chronic_id: int
    offset: int
    gen_p: np.ndarray
    load_p: np.ndarray
    price: np.ndarray
    maintenance: tuple[Maintenance, ...] = field(default=())

    @property
    def length(self) -> int:
        return len(self.price)


def full_scenario(chronic: Chronic) -> Scenario:
    return Scenario(chronic.id, 0, chronic.length)


def slice_chronic(chronic: Chronic, scenario: Scenario) -> ChronicView:
    start = scenario.start
    stop = start + scenario.horizon
    if scenario.start_offset_days < 0 or scenario.horizon <= 0 or stop > chronic.length:
        raise ScenarioRangeError(
            f"scenario [{start}, {stop}) does not fit chronic {chronic.id} of length {chronic.length}"
        )
    # maintenance windows are re-expressed in view steps and clipped to the view
    shifted = []
    for m in chronic.maintenance:
        begin, end = m.start - start, m.start + m.duration - start
        if end <= 0 or begin >= scenario.horizon:
            continue
        begin = max(begin, 0)
        shifted.append(Maintenance(m.line_id, begin, end - begin))
    return ChronicView(
        chronic_id=chronic.id,
        offset=start,
        gen_p=chronic.gen_p[start:stop],
        load_p=chronic.load_p[start:stop],
        price=chronic.price[start:stop],
        maintenance=tuple(shifted),
    )


def sample_scenario(
    rng: np.random.Generator,
    train_chronics: Sequence[int],
    horizon: int = DEFAULT_HORIZON,
    n_offsets: int = N_OFFSETS,
) -> Scenario:
    """Draw uniformly over (chronic, start-day) pairs."""
    ids = sorted(set(train_chronics))
    if not ids:
        raise ValueError("no training chronics to sample from")
    k = int(rng.integers(len(ids) * n_offsets))
    return Scenario(ids[k // n_offsets], k % n_offsets, horizon)


# --------------------------------------------------------------------- I/O

def _read_matrix(path: Path, expected_ids: Sequence[int], what: str) -> np.ndarray:
    if not path.exists():
        raise MissingFileError(f"{path}: missing {what} file")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise HeaderMismatchError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    try:
        header_ids = [int(h) for h in header]
    except ValueError:
        raise HeaderMismatchError(f"{path}: header must list {what} ids, got {header}") from None
    unknown = sorted(set(header_ids) - set(expected_ids))
    if unknown:
        raise HeaderMismatchError(f"{path}: unknown {what} id(s) {unknown}")
    if sorted(header_ids) != sorted(expected_ids):
        missing = sorted(set(expected_ids) - set(header_ids))
        raise HeaderMismatchError(f"{path}: header is missing {what} id(s) {missing}")
    data = np.empty((len(rows) - 1, len(header_ids)))
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header_ids):
            raise NonNumericError(f"{path}: row {r + 1} has {len(row)} cells, expected {len(header_ids)}")
        for c, cell in enumerate(row):
            try:
                data[r, c] = float(cell)
            except ValueError:
                raise NonNumericError(
                    f"{path}: row {r + 1}, column {header[c]}: not a number ({cell!r})"
                ) from None
    if not np.all(np.isfinite(data)):
        r, c = np.argwhere(~np.isfinite(data))[0]
        raise NonNumericError(f"{path}: row {r + 1}, column {header[c]}: non-finite value")
    order = [header_ids.index(i) for i in expected_ids]
    return data[:, order]


def load_chronic(directory: str | Path, spec: GridSpec, chronic_id: int | None = None) -> Chronic:
    directory = Path(directory)
    if chronic_id is None:
        try:
            chronic_id = int(directory.name)
        except ValueError:
            chronic_id = 0
    gen_ids = [g.id for g in spec.generators]
    load_ids = [ld.id for ld in spec.loads]
    gen_p = _read_matrix(directory / "prod_p.csv", gen_ids, "generator")
    load_p = _read_matrix(directory / "load_p.csv", load_ids, "load")

    price_path = directory / "prices.csv"
    if not price_path.exists():
        raise MissingFileError(f"{price_path}: missing price file")
    with price_path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["price"]:
        raise HeaderMismatchError(f"{price_path}: header must be 'price'")
    try:
        price = np.array([float(row[0]) for row in rows[1:]])
    except (ValueError, IndexError):
        raise NonNumericError(f"{price_path}: non-numeric price") from None

    maintenance: list[Maintenance] = []
    maint_path = directory / "maintenance.csv"
    if maint_path.exists():
        with maint_path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["line_id", "start", "duration"]:
                raise HeaderMismatchError(f"{maint_path}: header must be line_id,start,duration")
            line_ids = {ln.id for ln in spec.lines}
            for r, row in enumerate(reader):
                try:
                    m = Maintenance(int(row["line_id"]), int(row["start"]), int(row["duration"]))
                except (TypeError, ValueError):
                    raise NonNumericError(f"{maint_path}: row {r + 1}: not an integer") from None
                if m.line_id not in line_ids:
                    raise HeaderMismatchError(f"{maint_path}: row {r + 1}: unknown line id {m.line_id}")
                if m.start < 0 or m.duration <= 0:
                    raise BoundsError(f"{maint_path}: row {r + 1}: start must be >= 0, duration > 0")
                maintenance.append(m)

    if not (len(gen_p) == len(load_p) == len(price)):
        raise ChronicError(
            f"{directory}: row counts differ (prod_p {len(gen_p)}, load_p {len(load_p)}, prices {len(price)})"
        )
    chronic = Chronic(chronic_id, gen_p, load_p, price, tuple(maintenance))
    check_chronic(chronic, spec, where=str(directory))
    return chronic


def check_chronic(chronic: Chronic, spec: GridSpec, where: str = "chronic") -> None:
    if chronic.gen_p.shape[1] != spec.n_gen or chronic.load_p.shape[1] != spec.n_load:
        raise HeaderMismatchError(f"{where}: matrix widths do not match the grid")
    neg = np.argwhere(chronic.load_p < 0)
    if len(neg):
        r, c = neg[0]
        raise NegativeLoadError(
            f"{where}: negative load {chronic.load_p[r, c]} at row {r + 1}, load {spec.loads[c].id}"
        )
    bad = np.argwhere((chronic.gen_p < 0) | (chronic.gen_p > spec.gen_p_max[None, :]))
    if len(bad):
        r, c = bad[0]
        raise BoundsError(
            f"{where}: generation {chronic.gen_p[r, c]} outside [0, p_max] at row {r + 1}, "
            f"generator {spec.generators[c].id}"
        )
    if np.any(chronic.price <= 0):
        r = int(np.argmax(chronic.price <= 0))
        raise BoundsError(f"{where}: non-positive price at row {r + 1}")


def save_chronic(chronic: Chronic, directory: str | Path, spec: GridSpec) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def write(name: str, header: Sequence, rows: np.ndarray) -> None:
        with (directory / name).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([f"{v:.6f}" for v in np.atleast_1d(row)])

    write("prod_p.csv", [g.id for g in spec.generators], chronic.gen_p)
    write("load_p.csv", [ld.id for ld in spec.loads], chronic.load_p)
    write("prices.csv", ["price"], chronic.price)
    if chronic.maintenance:
        with (directory / "maintenance.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["line_id", "start", "duration"])
            for m in chronic.maintenance:
                w.writerow([m.line_id, m.start, m.duration])


def load_chronics(root: str | Path, spec: GridSpec, ids: Sequence[int] | None = None) -> dict[int, Chronic]:
    root = Path(root)
    if ids is None:
        ids = sorted(int(p.name) for p in root.iterdir() if p.is_dir() and p.name.isdigit())
    return {i: load_chronic(root / str(i), spec, i) for i in ids}
