"""Per-island DC power flow with a single quadratic loss correction.

Angles are solved on the reduced nodal susceptance system of each island with
the island slack as angle reference.  Line losses ``r * f**2`` (per unit) from
the lossless pass are then placed as half-loads on both line ends, the island
slack picks up the total, and the system is solved once more.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import OFF, GridSpec, GridState, Node

SLACK_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Injections:
    gen_p: np.ndarray
    load_p: np.ndarray


@dataclass
class IslandBalance:
    nodes: list[Node]
    slack: int | None
    gen_total: float
    load_total: float
    loss_total: float


@dataclass
class PowerFlowResult:
    node_angle: dict[Node, float]
    line_flow: np.ndarray
    rho: np.ndarray
    line_loss: np.ndarray
    total_loss: float
    slack_p: float
    gen_p: np.ndarray
    load_p: np.ndarray
    unserved: tuple[int, ...]
    diverged: bool
    island_slack: dict[int, float] = field(default_factory=dict)
    balances: list[IslandBalance] = field(default_factory=list)

    @property
    def gen_total(self) -> float:
        return float(self.gen_p.sum())

    @property
    def load_total(self) -> float:
        return float(self.load_p.sum())


def _components(n_nodes: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    parent = list(range(n_nodes))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in zip(a.tolist(), b.tolist()):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    return np.array([find(i) for i in range(n_nodes)], dtype=np.int64)


def _node_codes(sub: np.ndarray, bus: np.ndarray) -> np.ndarray:
    # candidate node code = 2*substation + (busbar - 1); -1 when disconnected
    return np.where(bus != OFF, 2 * sub + bus - 1, -1)


@dataclass
class _Island:
    nodes: list[Node]
    members: np.ndarray
    gens: np.ndarray
    loads: np.ndarray
    slack: int | None
    others: np.ndarray
    other_local: np.ndarray
    load_local: np.ndarray
    lines: np.ndarray
    a: np.ndarray
    b: np.ndarray
    susc: np.ndarray
    keep: np.ndarray
    b_inv: np.ndarray | None


@dataclass
class _Plan:
    """Everything about a solve that depends on topology only."""

    live_codes: np.ndarray
    gen_live: np.ndarray
    load_live: np.ndarray
    islands: list[_Island]
    diverged: bool


_PLAN_CACHE_SIZE = 256


def _build_plan(spec: GridSpec, state: GridState) -> _Plan:
    gen_node = _node_codes(spec.gen_sub, state.gen_bus)
    load_node = _node_codes(spec.load_sub, state.load_bus)
    or_node = _node_codes(spec.line_or_sub, state.line_or_bus)
    ex_node = _node_codes(spec.line_ex_sub, state.line_ex_bus)
    closed = (or_node >= 0) & (ex_node >= 0)

    live_codes = np.unique(np.concatenate([gen_node, load_node, or_node, ex_node]))
    live_codes = live_codes[live_codes >= 0]
    n_nodes = len(live_codes)
    lookup = np.full(2 * spec.n_sub, -1, dtype=np.int64)
    lookup[live_codes] = np.arange(n_nodes)

    gen_idx = np.where(gen_node >= 0, lookup[np.maximum(gen_node, 0)], -1)
    load_idx = np.where(load_node >= 0, lookup[np.maximum(load_node, 0)], -1)
    lines = np.flatnonzero(closed)
    l_or = lookup[or_node[lines]]
    l_ex = lookup[ex_node[lines]]
    comp = _components(n_nodes, l_or, l_ex)

    islands: list[_Island] = []
    diverged = False
    for root in np.unique(comp):
        members = np.flatnonzero(comp == root)
        gens = np.flatnonzero(np.isin(gen_idx, members))
        loads = np.flatnonzero(np.isin(load_idx, members))
        nodes = [(int(live_codes[m] // 2), int(live_codes[m] % 2 + 1)) for m in members]
        local = np.full(n_nodes, -1, dtype=np.int64)
        local[members] = np.arange(len(members))
        empty = np.zeros(0, dtype=np.int64)
        if len(gens) == 0:
            islands.append(_Island(nodes, members, gens, loads, None, empty, empty, local[load_idx[loads]],
                                   empty, empty, empty, np.zeros(0), np.zeros(0, dtype=bool), None))
            continue
        slack = spec.slack_pos if spec.slack_pos in gens else int(gens.min())
        isl_lines = lines[np.isin(l_or, members)]
        a = local[lookup[or_node[isl_lines]]]
        b = local[lookup[ex_node[isl_lines]]]
        susc = 1.0 / spec.reactance[isl_lines]
        n = len(members)
        bmat = np.zeros((n, n))
        np.add.at(bmat, (a, a), susc)
        np.add.at(bmat, (b, b), susc)
        np.add.at(bmat, (a, b), -susc)
        np.add.at(bmat, (b, a), -susc)
        keep = np.arange(n) != local[gen_idx[slack]]
        b_inv = np.zeros((0, 0))
        if n > 1:
            try:
                b_inv = np.linalg.inv(bmat[np.ix_(keep, keep)])
            except np.linalg.LinAlgError:
                diverged = True
            else:
                diverged = diverged or not np.all(np.isfinite(b_inv))
        others = gens[gens != slack]
        islands.append(_Island(nodes, members, gens, loads, slack, others, local[gen_idx[others]],
                               local[load_idx[loads]], isl_lines, a, b, susc, keep, b_inv))
    return _Plan(live_codes, gen_idx >= 0, load_idx >= 0, islands, diverged)


def _plan(spec: GridSpec, state: GridState) -> _Plan:
    # topology-keyed memo stored on the (frozen) spec instance
    cache = spec.__dict__.setdefault("_flow_plans", {})
    key = b"".join(a.astype(np.int8).tobytes() for a in
                   (state.gen_bus, state.load_bus, state.line_or_bus, state.line_ex_bus))
    plan = cache.get(key)
    if plan is None:
        if len(cache) >= _PLAN_CACHE_SIZE:
            cache.pop(next(iter(cache)))
        plan = cache[key] = _build_plan(spec, state)
    return plan


def solve(spec: GridSpec, state: GridState, inj: Injections) -> PowerFlowResult:
    gen_set = np.asarray(inj.gen_p, dtype=float)
    load_set = np.asarray(inj.load_p, dtype=float)
    if gen_set.shape != (spec.n_gen,) or load_set.shape != (spec.n_load,):
        raise ValueError("injection vectors do not match the grid specification")
    if not (np.all(np.isfinite(gen_set)) and np.all(np.isfinite(load_set))):
        raise ValueError("non-finite injection")

    plan = _plan(spec, state)
    base = spec.base_power
    theta = np.zeros(len(plan.live_codes))
    flow = np.zeros(spec.n_line)
    loss = np.zeros(spec.n_line)
    gen_out = np.where(plan.gen_live, gen_set, 0.0)
    load_served = np.where(plan.load_live, load_set, 0.0)
    unserved = [i for i in range(spec.n_load) if not plan.load_live[i]]
    island_slack: dict[int, float] = {}
    balances: list[IslandBalance] = []
    diverged = plan.diverged

    for isl in plan.islands:
        if diverged:
            break
        if isl.slack is None:
            # no supply: attached demand is lost
            unserved.extend(int(i) for i in isl.loads)
            load_served[isl.loads] = 0.0
            balances.append(IslandBalance(isl.nodes, None, 0.0, 0.0, 0.0))
            continue
        n = len(isl.members)
        p_base = (np.bincount(isl.other_local, gen_set[isl.others], minlength=n)
                  - np.bincount(isl.load_local, load_set[isl.loads], minlength=n))
        load_sum = load_set[isl.loads].sum()
        other_sum = gen_set[isl.others].sum()

        th = np.zeros(n)
        if n > 1:
            th[isl.keep] = isl.b_inv @ (p_base[isl.keep] / base)
        f0 = (th[isl.a] - th[isl.b]) * isl.susc * base
        l0 = spec.resistance[isl.lines] * (f0 / base) ** 2 * base
        p_corr = p_base - 0.5 * (np.bincount(isl.a, l0, minlength=n) + np.bincount(isl.b, l0, minlength=n))
        if n > 1:
            th[isl.keep] = isl.b_inv @ (p_corr[isl.keep] / base)
        if not np.all(np.isfinite(th)):
            diverged = True
            break
        loss_sum = l0.sum()
        slack_out = load_sum + loss_sum - other_sum

        theta[isl.members] = th
        flow[isl.lines] = (th[isl.a] - th[isl.b]) * isl.susc * base
        loss[isl.lines] = l0
        gen_out[isl.slack] = slack_out
        island_slack[int(isl.slack)] = float(slack_out)
        balances.append(
            IslandBalance(isl.nodes, int(isl.slack), float(gen_out[isl.gens].sum()), float(load_sum), float(loss_sum))
        )

    if diverged:
        nan = np.full(spec.n_line, np.nan)
        return PowerFlowResult(
            node_angle={}, line_flow=nan, rho=nan, line_loss=nan.copy(), total_loss=float("nan"),
            slack_p=float("nan"), gen_p=gen_out, load_p=load_served,
            unserved=tuple(spec.loads[i].id for i in sorted(unserved)), diverged=True,
        )

    angle_map = {
        (int(code // 2), int(code % 2 + 1)): float(theta[k]) for k, code in enumerate(plan.live_codes)
    }
    return PowerFlowResult(
        node_angle=angle_map,
        line_flow=flow,
        rho=np.abs(flow) / spec.thermal_limit,
        line_loss=loss,
        total_loss=float(loss.sum()),
        slack_p=float(gen_out[spec.slack_pos]),
        gen_p=gen_out,
        load_p=load_served,
        unserved=tuple(spec.loads[i].id for i in sorted(unserved)),
        diverged=False,
        island_slack=island_slack,
        balances=balances,
    )


def apply_slack_limits(spec: GridSpec, result: PowerFlowResult) -> bool:
    """True when every island slack stays within its generator bounds (1e-6 MW slack)."""
    if result.diverged:
        return False
    slacks = dict(result.island_slack)
    if not slacks or spec.slack_pos in slacks:
        slacks[spec.slack_pos] = result.slack_p
    for pos, p in slacks.items():
        if p < spec.gen_p_min[pos] - SLACK_TOLERANCE or p > spec.gen_p_max[pos] + SLACK_TOLERANCE:
            return False
    return True
