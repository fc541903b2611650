"""Flat vector, substation graph and element graph views of a grid state.

The DC solver fixes voltage magnitudes at 1 p.u. and reactive power at 0, so
``|v|`` and ``q`` columns carry those constants for connected elements.
Disconnected elements report zero power and zero voltage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GEN_TYPES, OFF, Bus, GridSpec, GridState, Node, electrical_nodes
from .powerflow import PowerFlowResult

# element-graph node types; storage and shunt are reserved (no instances in
# grids without those devices)
BUS, GENERATOR, LOAD, LINE, STORAGE, SHUNT = range(6)
NODE_TYPE_NAMES = ("bus", "generator", "load", "line", "storage", "shunt")
BUS_KINDS = ("ground", "busbar1", "busbar2")

SUB_NODE_FEATURES = ("abs_p", "p", "q", "v", "sin_theta", "cos_theta")
SUB_EDGE_FEATURES = SUB_NODE_FEATURES + ("rho", "ts_overflow", "ts_cooldown", "maintenance", "n_lines")
COMMON_FEATURES = ("abs_p", "p", "q", "v", "cos_theta")
TYPE_FEATURES = {
    BUS: COMMON_FEATURES + ("is_ground", "is_busbar1", "is_busbar2", "cooldown"),
    GENERATOR: COMMON_FEATURES + (
        "g_norm", "max_ramp_up", "max_ramp_down", "min_uptime", "min_downtime",
        "cost_per_mw", "startup_cost", "shutdown_cost",
    ) + tuple(f"type_{t}" for t in GEN_TYPES),
    LOAD: COMMON_FEATURES,
    LINE: COMMON_FEATURES + ("rho", "ts_overflow", "ts_cooldown", "maintenance"),
    STORAGE: COMMON_FEATURES,
    SHUNT: COMMON_FEATURES,
}


def flat_length(spec: GridSpec) -> int:
    return spec.n_gen + 3 * (spec.n_gen + spec.n_load) + 2 * spec.n_line


def _maintenance_feature(state: GridState) -> np.ndarray:
    # ongoing outage: remaining steps; otherwise the next outage's duration
    return np.where(state.maintenance_active > 0, state.maintenance_active, state.maintenance_duration)


def build_flat(spec: GridSpec, state: GridState, flow: PowerFlowResult) -> np.ndarray:
    gen_on = state.gen_bus != OFF
    load_on = state.load_bus != OFF
    gen_p = np.where(gen_on, flow.gen_p, 0.0)
    load_p = np.where(load_on, flow.load_p, 0.0)
    status = state.line_connected.astype(float)
    rho = np.zeros(spec.n_line) if flow.diverged else np.where(status > 0, flow.rho, 0.0)
    gen_block = np.stack([np.abs(gen_p), gen_p, np.zeros_like(gen_p)], axis=1).ravel()
    load_block = np.stack([np.abs(load_p), load_p, np.zeros_like(load_p)], axis=1).ravel()
    return np.concatenate([gen_on.astype(float), gen_block, load_block, rho, status])


@dataclass
class SubGraphObs:
    nodes: list[Node]
    x: np.ndarray           # [N, 6]
    edges: np.ndarray       # [E, 2] node indices, i < j
    edge_attr: np.ndarray   # [E, 11]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def build_substation_graph(spec: GridSpec, state: GridState, flow: PowerFlowResult) -> SubGraphObs:
    nodes = electrical_nodes(spec, state)
    index = {n: i for i, n in enumerate(nodes)}
    x = np.zeros((len(nodes), len(SUB_NODE_FEATURES)))
    angle = np.array([flow.node_angle.get(n, 0.0) for n in nodes])
    for pos in range(spec.n_gen):
        if state.gen_bus[pos] != Bus.DISCONNECTED:
            x[index[(int(spec.gen_sub[pos]), int(state.gen_bus[pos]))], 1] += flow.gen_p[pos]
    for pos in range(spec.n_load):
        if state.load_bus[pos] != Bus.DISCONNECTED:
            x[index[(int(spec.load_sub[pos]), int(state.load_bus[pos]))], 1] -= flow.load_p[pos]
    if len(nodes):
        x[:, 0] = np.abs(x[:, 1])
        x[:, 3] = 1.0
        x[:, 4] = np.sin(angle)
        x[:, 5] = np.cos(angle)

    maint = _maintenance_feature(state)
    groups: dict[tuple[int, int], list[tuple[int, float]]] = {}
    for pos in np.flatnonzero(state.line_connected):
        a = index[(int(spec.line_or_sub[pos]), int(state.line_or_bus[pos]))]
        b = index[(int(spec.line_ex_sub[pos]), int(state.line_ex_bus[pos]))]
        if a == b:
            continue
        # orient every edge from the lower to the higher node index
        sign = 1.0 if a < b else -1.0
        groups.setdefault((min(a, b), max(a, b)), []).append((int(pos), sign))

    edges = np.array(sorted(groups), dtype=np.int64).reshape(-1, 2)
    attr = np.zeros((len(edges), len(SUB_EDGE_FEATURES)))
    for k, (i, j) in enumerate(edges.tolist()):
        members = groups[(i, j)]
        pos = [m for m, _ in members]
        p = sum(sign * flow.line_flow[m] for m, sign in members)
        dtheta = angle[i] - angle[j]
        attr[k] = (
            abs(p), p, 0.0, 1.0, np.sin(dtheta), np.cos(dtheta),
            np.max(flow.rho[pos]), np.max(state.overflow_counter[pos]),
            np.max(state.line_cooldown[pos]), np.max(maint[pos]), len(pos),
        )
    return SubGraphObs(nodes, x, edges, attr)


@dataclass
class ElemGraphObs:
    node_type: np.ndarray        # [N] type codes
    features: list[np.ndarray]   # per node, length depends on its type
    edges: np.ndarray            # [E, 2] (element node, bus node)
    edge_attr: np.ndarray        # [E, 1] connected flag

    @property
    def n_nodes(self) -> int:
        return len(self.node_type)

    def permute(self, perm: np.ndarray) -> ElemGraphObs:
        """Reorder nodes: new node ``k`` is old node ``perm[k]``."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return ElemGraphObs(
            node_type=self.node_type[perm],
            features=[self.features[i] for i in perm],
            edges=inv[self.edges],
            edge_attr=self.edge_attr.copy(),
        )


def element_graph_counts(spec: GridSpec) -> tuple[int, int]:
    n_nodes = 3 * spec.n_sub + spec.n_gen + spec.n_load + spec.n_line
    n_edges = 3 * (spec.n_gen + spec.n_load) + 6 * spec.n_line
    return n_nodes, n_edges


def build_element_graph(spec: GridSpec, state: GridState, flow: PowerFlowResult) -> ElemGraphObs:
    types: list[int] = []
    feats: list[np.ndarray] = []
    edges: list[tuple[int, int]] = []
    flags: list[float] = []

    node_p: dict[Node, float] = {}
    for pos in range(spec.n_gen):
        if state.gen_bus[pos] != Bus.DISCONNECTED:
            n = (int(spec.gen_sub[pos]), int(state.gen_bus[pos]))
            node_p[n] = node_p.get(n, 0.0) + flow.gen_p[pos]
    for pos in range(spec.n_load):
        if state.load_bus[pos] != Bus.DISCONNECTED:
            n = (int(spec.load_sub[pos]), int(state.load_bus[pos]))
            node_p[n] = node_p.get(n, 0.0) - flow.load_p[pos]
    live = set(electrical_nodes(spec, state))

    def bus_node(sub: int, bus: int) -> int:
        return 3 * sub + bus

    for sub in range(spec.n_sub):
        for bus in (0, 1, 2):
            onehot = [1.0 if k == bus else 0.0 for k in range(3)]
            if bus and (sub, bus) in live:
                p = node_p.get((sub, bus), 0.0)
                common = [abs(p), p, 0.0, 1.0, np.cos(flow.node_angle.get((sub, bus), 0.0))]
            else:
                common = [0.0] * 5
            types.append(BUS)
            feats.append(np.array(common + onehot + [float(state.sub_cooldown[sub])]))

    def common_for(p: float, connected: bool, theta: float) -> list[float]:
        if not connected:
            return [0.0] * 5
        return [abs(p), p, 0.0, 1.0, float(np.cos(theta))]

    def attach(node: int, sub: int, bus: int) -> None:
        for k in (0, 1, 2):
            edges.append((node, bus_node(sub, k)))
            flags.append(1.0 if k == bus else 0.0)

    for pos, g in enumerate(spec.generators):
        sub, bus = int(spec.gen_sub[pos]), int(state.gen_bus[pos])
        on = bus != Bus.DISCONNECTED
        p = float(flow.gen_p[pos]) if on else 0.0
        span = abs(g.p_max) - abs(g.p_min)
        g_norm = (abs(p) - abs(g.p_min)) / span if span > 0 else 0.0
        onehot = [1.0 if g.gen_type == t else 0.0 for t in GEN_TYPES]
        extras = [g_norm, g.max_ramp_up, g.max_ramp_down, g.min_uptime, g.min_downtime,
                  g.cost_per_mw, g.startup_cost, g.shutdown_cost]
        node = len(types)
        types.append(GENERATOR)
        feats.append(np.array(common_for(p, on, flow.node_angle.get((sub, bus), 0.0)) + extras + onehot))
        attach(node, sub, bus)

    for pos in range(spec.n_load):
        sub, bus = int(spec.load_sub[pos]), int(state.load_bus[pos])
        on = bus != Bus.DISCONNECTED
        p = float(flow.load_p[pos]) if on else 0.0
        node = len(types)
        types.append(LOAD)
        feats.append(np.array(common_for(p, on, flow.node_angle.get((sub, bus), 0.0))))
        attach(node, sub, bus)

    maint = _maintenance_feature(state)
    for pos in range(spec.n_line):
        or_sub, ex_sub = int(spec.line_or_sub[pos]), int(spec.line_ex_sub[pos])
        or_bus, ex_bus = int(state.line_or_bus[pos]), int(state.line_ex_bus[pos])
        on = bool(state.line_connected[pos])
        p = float(flow.line_flow[pos]) if on else 0.0
        dtheta = (flow.node_angle.get((or_sub, or_bus), 0.0) - flow.node_angle.get((ex_sub, ex_bus), 0.0)) if on else 0.0
        rho = float(flow.rho[pos]) if on else 0.0
        node = len(types)
        types.append(LINE)
        feats.append(np.array(common_for(p, on, dtheta) + [
            rho, float(state.overflow_counter[pos]), float(state.line_cooldown[pos]), float(maint[pos]),
        ]))
        attach(node, or_sub, or_bus)
        attach(node, ex_sub, ex_bus)

    return ElemGraphObs(
        node_type=np.array(types, dtype=np.int64),
        features=feats,
        edges=np.array(edges, dtype=np.int64),
        edge_attr=np.array(flags).reshape(-1, 1),
    )


BUILDERS = {
    "flat": build_flat,
    "substation-graph": build_substation_graph,
    "element-graph": build_element_graph,
}
