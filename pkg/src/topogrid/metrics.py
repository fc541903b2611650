"""Evaluation metrics: steps-to-completion, episode cost and the DoNothing-anchored score."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .actions import TopoAction, layout
from .chronics import Chronic, full_scenario, slice_chronic
from .env import EnvConfig, EpisodeTrace, GridEnv, run_episode
from .grid import GridSpec
from .observations import BUILDERS

# savings fraction that is worth a score of 100
FULL_MARKS_SAVING = 0.8


class MetricError(ValueError):
    pass


@dataclass
class EvalHistory:
    """Deterministic evaluation lengths per chronic over a training run."""

    total_steps: int
    chronic_lengths: dict[int, int] = field(default_factory=dict)
    evals: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    def add(self, chronic: int, step: int, length: int, chronic_length: int) -> None:
        known = self.chronic_lengths.setdefault(chronic, chronic_length)
        if known != chronic_length:
            raise MetricError(f"chronic {chronic}: length {chronic_length} != {known}")
        if not 0 <= length <= chronic_length:
            raise MetricError(f"chronic {chronic}: episode length {length} outside [0, {chronic_length}]")
        rows = self.evals.setdefault(chronic, [])
        if rows and step <= rows[-1][0]:
            raise MetricError(f"chronic {chronic}: evaluation steps must be strictly increasing")
        rows.append((int(step), int(length)))

    @classmethod
    def from_records(cls, records: Iterable, total_steps: int, opponent: bool | None = False) -> EvalHistory:
        """Build from evaluation rows (objects or dicts with step/chronic/length/chronic_length)."""
        hist = cls(total_steps)
        rows = [r if isinstance(r, Mapping) else vars(r) for r in records]
        if opponent is not None:
            rows = [r for r in rows if bool(r["opponent"]) == opponent]
        for r in sorted(rows, key=lambda r: (r["chronic"], r["step"])):
            hist.add(r["chronic"], r["step"], r["length"], r["chronic_length"])
        return hist


def s2c(history: EvalHistory, chronic: int) -> int:
    """First evaluated step from which every evaluation completes the chronic.

    Falls back to the total number of training steps when the last evaluation
    does not complete it.
    """
    rows = history.evals.get(chronic)
    if not rows:
        raise MetricError(f"no evaluations recorded for chronic {chronic}")
    full = history.chronic_lengths[chronic]
    result = history.total_steps
    for step, length in reversed(rows):
        if length != full:
            break
        result = step
    return result


@dataclass(frozen=True)
class ScoreConfig:
    beta: float = 2.0
    dt_hours: float = 1.0 / 12.0

    def __post_init__(self):
        if not self.beta > 1:
            raise MetricError("blackout penalty beta must be > 1")
        if not self.dt_hours > 0:
            raise MetricError("dt_hours must be > 0")


def episode_cost(trace: EpisodeTrace, chronic: Chronic, config: ScoreConfig = ScoreConfig()) -> float:
    """Operation cost over survived steps plus blackout cost for the rest of the window."""
    start, stop = trace.offset, trace.offset + trace.horizon
    if stop > chronic.length or trace.chronic_id != chronic.id:
        raise MetricError(f"trace window [{start}, {stop}) does not fit chronic {chronic.id}")
    if len(trace.records) > trace.horizon:
        raise MetricError("trace has more records than its horizon")
    t_end = trace.length
    survived = trace.records[:t_end]
    if any(r.step != i for i, r in enumerate(survived)):
        raise MetricError("trace records are not consecutive from step 0")
    if len(survived) < t_end:
        raise MetricError("trace ends before its horizon without a terminal record")
    price = chronic.price[start:stop]
    loss = np.array([r.total_loss for r in survived], dtype=np.float64)
    operation = float(np.sum(loss * price[:t_end])) * config.dt_hours
    demand = chronic.load_p[start:stop].sum(axis=1)
    blackout = config.beta * float(np.sum(demand[t_end:] * price[t_end:])) * config.dt_hours
    return operation + blackout


def l2rpn_score(cost_agent: float, cost_do_nothing: float) -> float:
    """0 at the DoNothing cost, 100 at 80% savings; linear and unclamped."""
    if not cost_do_nothing > 0:
        raise MetricError(f"DoNothing cost must be positive, got {cost_do_nothing}")
    return 100.0 * (cost_do_nothing - cost_agent) / (FULL_MARKS_SAVING * cost_do_nothing)


def do_nothing_baseline(spec: GridSpec, chronic: Chronic, config: ScoreConfig = ScoreConfig(),
                        env_config: EnvConfig | None = None, seed: int = 0) -> tuple[EpisodeTrace, float]:
    env = GridEnv(spec, env_config or EnvConfig(), BUILDERS["flat"])
    noop = TopoAction.do_nothing(layout(spec))
    trace = run_episode(env, slice_chronic(chronic, full_scenario(chronic)), lambda obs, mask: noop, seed=seed)
    return trace, episode_cost(trace, chronic, config)


# ----------------------------------------------------------------- reports

SCORE_COLUMNS = ("seed", "chronic", "opponent", "length", "chronic_length", "cost", "cost_do_nothing", "score")


def write_rows(rows: Sequence[Mapping], path: str | Path, columns: Sequence[str] | None = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else SCORE_COLUMNS))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def read_rows(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def summarize(rows: Iterable[Mapping], value: str = "score", by: Sequence[str] = ("chronic", "opponent")) -> list[dict]:
    """Mean and (population) std of ``value`` over seeds, per group."""
    groups: dict[tuple, list[float]] = defaultdict(list)
    for r in rows:
        groups[tuple(str(r[k]) for k in by)].append(float(r[value]))
    out = []
    for key in sorted(groups):
        vals = np.asarray(groups[key])
        out.append({**dict(zip(by, key)), "n": len(vals), "mean": float(vals.mean()), "std": float(vals.std())})
    return out


def write_summary(summary: Mapping, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
