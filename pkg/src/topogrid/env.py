"""Episode dynamics: rule timers, protections, opponent, termination and reward."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .actions import (
    ActionClass,
    ActionMask,
    TopoAction,
    compute_mask,
    decode,
    layout,
)
from .chronics import ChronicView
from .grid import Bus, GridSpec, GridState, TopologyDelta
from .powerflow import Injections, PowerFlowResult, apply_slack_limits, solve


class ScenarioInfeasibleError(RuntimeError):
    pass


class EpisodeOverError(RuntimeError):
    """Raised when ``step`` is called on a finished episode."""


@dataclass
class OpponentConfig:
    enabled: bool = False
    attack_probability: float = 0.02
    attack_duration: int = 12
    attack_cooldown: int = 144
    attackable_lines: tuple[int, ...] | None = None  # line positions; None = all


@dataclass
class EnvConfig:
    nb_timestep_overflow_allowed: int = 3
    nb_timestep_reconnection: int = 12
    nb_timestep_cooldown_line: int = 3
    nb_timestep_cooldown_sub: int = 3
    hard_overflow_threshold: float = 2.0
    max_sub_changed: int = 9999
    max_line_status_changed: int = 9999
    horizon: int | None = None  # None: the whole chronic view
    opponent: OpponentConfig = field(default_factory=OpponentConfig)

    def __post_init__(self):
        if isinstance(self.opponent, dict):
            self.opponent = OpponentConfig(**self.opponent)
        counts = (
            self.nb_timestep_overflow_allowed, self.nb_timestep_reconnection,
            self.nb_timestep_cooldown_line, self.nb_timestep_cooldown_sub,
        )
        if min(counts) < 0:
            raise ValueError("timestep counts must be >= 0")
        if not self.hard_overflow_threshold > 1:
            raise ValueError("hard_overflow_threshold must be > 1")


@dataclass
class StepOutcome:
    observation: object
    reward: float
    terminated: bool
    truncated: bool
    info: dict


def compute_reward(action_class: ActionClass, flow: PowerFlowResult, price: float) -> float:
    """Loss-based reward, bounded in [0, 1].

    max_loss = price * generation and loss = price * (generation - demand); the
    price is a positive common factor, so it is cancelled before dividing to
    keep the result independent of its value down to the last bit.
    """
    if action_class in (ActionClass.ERRONEOUS, ActionClass.ILLEGAL) or flow.diverged:
        return 0.0
    gen = flow.gen_total
    load = flow.load_total
    if price * gen == 0.0:
        return 1.0
    reward = (gen - (gen - load)) / gen
    return float(min(max(reward, 0.0), 1.0))


def opponent_step(
    spec: GridSpec, state: GridState, config: OpponentConfig, rng: np.random.Generator
) -> list[int]:
    """Possibly start an attack; returns the positions of newly attacked lines."""
    if not config.enabled:
        return []
    if np.any(state.attack_timer > 0) or state.opponent_cooldown > 0:
        return []
    if rng.random() >= config.attack_probability:
        return []
    pool = range(spec.n_line) if config.attackable_lines is None else config.attackable_lines
    candidates = [p for p in pool if state.line_connected[p]]
    if not candidates:
        return []
    target = candidates[int(rng.integers(len(candidates)))]
    state.disconnect_line(target)
    state.attack_timer[target] = config.attack_duration
    state.opponent_cooldown = config.attack_cooldown
    return [target]


def _start_cooldowns(spec: GridSpec, state: GridState, delta: TopologyDelta, config: EnvConfig) -> None:
    # line status flips start a line cooldown; busbar moves of an element
    # that stays connected, and generator (dis)connections, start a
    # substation cooldown
    status_changed: set[int] = set()
    sub_changed: set[int] = set()
    for pos, old, new in delta.gen:
        sub_changed.add(int(spec.gen_sub[pos]))
    for pos, old, new in delta.load:
        sub_changed.add(int(spec.load_sub[pos]))
    for entries, subs in ((delta.line_or, spec.line_or_sub), (delta.line_ex, spec.line_ex_sub)):
        for pos, old, new in entries:
            if (old == Bus.DISCONNECTED) != (new == Bus.DISCONNECTED):
                status_changed.add(pos)
            else:
                sub_changed.add(int(subs[pos]))
    for pos in status_changed:
        state.line_cooldown[pos] = config.nb_timestep_cooldown_line
    for s in sub_changed:
        state.sub_cooldown[s] = config.nb_timestep_cooldown_sub


ObsBuilder = Callable[[GridSpec, GridState, PowerFlowResult], object]


class GridEnv:
    """Single-owner episode runner over one chronic view at a time."""

    def __init__(self, spec: GridSpec, config: EnvConfig | None = None, obs_builder: ObsBuilder | None = None):
        from .observations import build_flat

        self.spec = spec
        self.config = config or EnvConfig()
        self.obs_builder = obs_builder or build_flat
        self.layout = layout(spec)
        self.state: GridState | None = None
        self.flow: PowerFlowResult | None = None
        self.view: ChronicView | None = None
        self.rng = np.random.default_rng()
        self.horizon = 0
        self.done = True
        self._maint: dict[int, list[tuple[int, int]]] = {}

    # ------------------------------------------------------------ helpers
    def injections(self, t: int) -> Injections:
        return Injections(self.view.gen_p[t], self.view.load_p[t])

    def mask(self) -> ActionMask:
        return compute_mask(self.spec, self.state)

    def observe(self):
        return self.obs_builder(self.spec, self.state, self.flow)

    def _schedule_next_maintenance(self, pos: int, earliest: int, now: int) -> None:
        # maintenance_next counts down to the step whose sub-step (3) starts the outage
        upcoming = [(s, d) for s, d in self._maint.get(pos, []) if s >= earliest]
        if upcoming:
            s, d = upcoming[0]
            self.state.maintenance_next[pos] = s - now
            self.state.maintenance_duration[pos] = d
        else:
            self.state.maintenance_next[pos] = -1
            self.state.maintenance_duration[pos] = 0

    # ------------------------------------------------------------ API
    def reset(self, view: ChronicView, seed: int | None = None):
        self.view = view
        self.rng = np.random.default_rng(seed)
        self.horizon = min(self.config.horizon or view.length, view.length)
        self.state = GridState.default(self.spec)
        self._maint = {}
        line_pos = self.spec.line_index
        for m in sorted(view.maintenance, key=lambda m: m.start):
            self._maint.setdefault(line_pos[m.line_id], []).append((m.start, m.duration))
        for pos in self._maint:
            self._schedule_next_maintenance(pos, 0, 0)
        self.flow = solve(self.spec, self.state, self.injections(0))
        if self.flow.diverged or self.flow.unserved or not apply_slack_limits(self.spec, self.flow):
            raise ScenarioInfeasibleError(
                f"chronic {view.chronic_id} (offset {view.offset}) is infeasible at its first step"
            )
        self.done = False
        return self.observe()

    def step(self, action: TopoAction) -> StepOutcome:
        if self.done:
            raise EpisodeOverError("step() called on a finished episode; call reset()")
        spec, cfg, state = self.spec, self.config, self.state
        t = state.step_index

        # (1) decode and classify
        delta, action_class = decode(spec, state, action)
        if action_class is ActionClass.ILLEGAL:
            delta = TopologyDelta()
        # (2) topology change and cooldowns
        delta.apply(state)
        _start_cooldowns(spec, state, delta, cfg)

        # (3) environment events: scheduled outages, then the opponent
        maintenance_started = []
        for pos in np.flatnonzero(state.maintenance_next == 0):
            state.disconnect_line(pos)
            state.maintenance_active[pos] = state.maintenance_duration[pos]
            self._schedule_next_maintenance(int(pos), t + 1, t)
            maintenance_started.append(int(pos))
        attacks = opponent_step(spec, state, cfg.opponent, self.rng)

        # (4)-(5) injections and physics
        inj = self.injections(t)
        flow = solve(spec, state, inj)

        # (6) hard overflow cascade
        tripped: list[int] = []
        for _ in range(spec.n_line):
            if flow.diverged:
                break
            hard = np.flatnonzero(state.line_connected & (flow.rho >= cfg.hard_overflow_threshold))
            if len(hard) == 0:
                break
            for pos in hard:
                state.disconnect_line(pos)
                state.reconnection_timer[pos] = cfg.nb_timestep_reconnection
            tripped.extend(int(p) for p in hard)
            flow = solve(spec, state, inj)

        # (7) soft overflow
        if not flow.diverged:
            over = state.line_connected & (flow.rho > 1.0)
            state.overflow_counter = np.where(over, state.overflow_counter + 1, 0)
            soft = np.flatnonzero(state.overflow_counter > cfg.nb_timestep_overflow_allowed)
            if len(soft):
                for pos in soft:
                    state.disconnect_line(pos)
                    state.reconnection_timer[pos] = cfg.nb_timestep_reconnection
                tripped.extend(int(p) for p in soft)
                flow = solve(spec, state, inj)

        # (8) termination
        if flow.diverged:
            action_class = ActionClass.ERRONEOUS
        terminated = bool(flow.diverged or flow.unserved or not apply_slack_limits(spec, flow))
        truncated = (not terminated) and t + 1 >= self.horizon

        # (9) reward
        price = float(self.view.price[t])
        reward = compute_reward(action_class, flow, price)

        # (10) timers
        for name in ("line_cooldown", "sub_cooldown", "reconnection_timer", "attack_timer", "maintenance_active"):
            arr = getattr(state, name)
            np.maximum(arr - 1, 0, out=arr)
        state.maintenance_next = np.where(state.maintenance_next > 0, state.maintenance_next - 1, state.maintenance_next)
        state.opponent_cooldown = max(state.opponent_cooldown - 1, 0)
        state.step_index = t + 1
        state.terminal = terminated

        self.flow = flow
        self.done = terminated or truncated
        info = {
            "step": t,
            "action_class": action_class,
            "rho": flow.rho,
            "total_loss": flow.total_loss,
            "slack_p": flow.slack_p,
            "gen_total": flow.gen_total,
            "load_total": flow.load_total,
            "price": price,
            "attacks": attacks,
            "maintenance": maintenance_started,
            "tripped": tripped,
            "unserved": flow.unserved,
        }
        return StepOutcome(self.observe(), reward, terminated, truncated, info)


# ------------------------------------------------------------------ traces

@dataclass
class StepRecord:
    step: int
    action: list[int]
    action_class: str
    reward: float
    rho: list[float]
    total_loss: float
    slack_p: float
    terminated: bool
    truncated: bool


@dataclass
class EpisodeTrace:
    chronic_id: int
    offset: int
    horizon: int
    opponent: bool
    records: list[StepRecord] = field(default_factory=list)
    seed: int | None = None

    @property
    def length(self) -> int:
        """Steps survived: the index of the blackout step, or the horizon."""
        if self.records and self.records[-1].terminated:
            return self.records[-1].step
        return len(self.records)

    @property
    def reward_sum(self) -> float:
        return float(sum(r.reward for r in self.records))

    def append(self, action: TopoAction, out: StepOutcome) -> None:
        info = out.info
        self.records.append(StepRecord(
            step=int(info["step"]),
            action=[int(c) for c in action.choices],
            action_class=info["action_class"].value,
            reward=float(out.reward),
            rho=[float(x) for x in np.nan_to_num(info["rho"], nan=-1.0)],
            total_loss=float(info["total_loss"]) if np.isfinite(info["total_loss"]) else float("nan"),
            slack_p=float(info["slack_p"]) if np.isfinite(info["slack_p"]) else float("nan"),
            terminated=bool(out.terminated),
            truncated=bool(out.truncated),
        ))

    def write(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            header = {"kind": "header", "chronic_id": self.chronic_id, "offset": self.offset,
                      "horizon": self.horizon, "opponent": self.opponent, "seed": self.seed}
            fh.write(json.dumps(header) + "\n")
            for rec in self.records:
                fh.write(json.dumps({"kind": "step", **asdict(rec)}) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> EpisodeTrace:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        head = json.loads(lines[0])
        if head.get("kind") != "header":
            raise ValueError(f"{path}: first record must be the episode header")
        trace = cls(head["chronic_id"], head["offset"], head["horizon"], head["opponent"], seed=head.get("seed"))
        for line in lines[1:]:
            rec = json.loads(line)
            rec.pop("kind", None)
            trace.records.append(StepRecord(**rec))
        return trace


def run_episode(
    env: GridEnv,
    view: ChronicView,
    policy: Callable[[object, ActionMask], TopoAction],
    seed: int | None = None,
) -> EpisodeTrace:
    obs = env.reset(view, seed=seed)
    trace = EpisodeTrace(view.chronic_id, view.offset, env.horizon, env.config.opponent.enabled, seed=seed)
    while not env.done:
        action = policy(obs, env.mask())
        out = env.step(action)
        trace.append(action, out)
        obs = out.observation
    return trace
