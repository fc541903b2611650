import dataclasses

import numpy as np
import pytest

from topogrid.actions import TopoAction, layout
from topogrid.chronics import Scenario, slice_chronic
from topogrid.env import EnvConfig, GridEnv, OpponentConfig
from topogrid.grid import Bus, GridState, electrical_nodes
from topogrid.observations import (
    BUS, GENERATOR, LINE, TYPE_FEATURES, build_element_graph, build_flat, build_substation_graph,
    element_graph_counts, flat_length,
)
from topogrid.powerflow import Injections, solve

from conftest import random_topology


def _solved(spec, chronics, state, t=0):
    c = chronics[0]
    return solve(spec, state, Injections(c.gen_p[t], c.load_p[t]))


def test_flat_layout(spec, chronics):
    state = GridState.default(spec)
    obs = build_flat(spec, state, _solved(spec, chronics, state))
    assert flat_length(spec) == 33 == obs.size
    assert np.all(obs[-8:] == 1.0)                     # line status
    blocks = obs[2:17].reshape(5, 3)
    assert np.all(blocks[:, 2] == 0.0)                  # q in DC mode
    assert np.allclose(blocks[:, 0], np.abs(blocks[:, 1]))


def test_flat_disconnected_powers_zero(spec, chronics):
    state = GridState.default(spec)
    state.gen_bus[1] = Bus.DISCONNECTED
    state.disconnect_line(3)
    obs = build_flat(spec, state, _solved(spec, chronics, state))
    assert obs[1] == 0.0 and np.all(obs[5:8] == 0.0)
    assert obs[2 + 15 + 3] == 0.0 and obs[2 + 15 + 8 + 3] == 0.0


def test_substation_graph_nodes(spec, chronics):
    state = GridState.default(spec)
    g = build_substation_graph(spec, state, _solved(spec, chronics, state))
    assert g.n_nodes == 5
    assert np.all(g.x[:, 3] == 1.0) and np.all(g.x[:, 2] == 0.0)
    # lines 6 and 7 both join substations 3 and 4
    k = [i for i, (a, b) in enumerate(g.edges.tolist()) if (a, b) == (3, 4)][0]
    assert g.edge_attr[k, -1] == 2
    assert len(g.edges) == 7

    state.gen_bus[0] = Bus.BUSBAR2
    state.line_or_bus[0] = Bus.BUSBAR2
    split = build_substation_graph(spec, state, _solved(spec, chronics, state))
    assert split.n_nodes == 6


def test_substation_graph_power_sums(spec, chronics):
    state = GridState.default(spec)
    flow = _solved(spec, chronics, state)
    g = build_substation_graph(spec, state, flow)
    assert g.x[:, 1].sum() == pytest.approx(flow.gen_total - flow.load_total, abs=1e-9)
    assert g.x[0, 1] == pytest.approx(flow.gen_p[0])


def test_element_graph_counts(spec, chronics):
    state = GridState.default(spec)
    g = build_element_graph(spec, state, _solved(spec, chronics, state))
    assert element_graph_counts(spec) == (28, 63)
    assert g.n_nodes == 28 and g.edges.shape == (63, 2)
    for t, f in zip(g.node_type.tolist(), g.features):
        assert len(f) == len(TYPE_FEATURES[t])


def test_generator_g_norm(spec, chronics):
    state = GridState.default(spec)
    flow = _solved(spec, chronics, state)
    flow.gen_p[1] = spec.generators[1].p_min
    g = build_element_graph(spec, state, flow)
    gens = [f for t, f in zip(g.node_type, g.features) if t == GENERATOR]
    assert gens[1][5] == 0.0
    assert 0.0 <= gens[0][5] <= 1.0


def test_disconnected_origin_ground_edge(spec, chronics):
    state = GridState.default(spec)
    state.line_or_bus[2] = Bus.DISCONNECTED
    g = build_element_graph(spec, state, _solved(spec, chronics, state))
    line_node = 15 + spec.n_gen + spec.n_load + 2
    or_sub = int(spec.line_or_sub[2])
    rows = [k for k, (a, b) in enumerate(g.edges.tolist()) if a == line_node and b // 3 == or_sub]
    flags = {g.edges[k, 1] % 3: g.edge_attr[k, 0] for k in rows}
    assert flags == {0: 1.0, 1: 0.0, 2: 0.0}


def test_one_hot_and_exclusivity(spec, chronics):
    rng = np.random.default_rng(3)
    for _ in range(50):
        state = random_topology(spec, GridState.default(spec), rng)
        flow = _solved(spec, chronics, state)
        g = build_element_graph(spec, state, flow)
        for t, f in zip(g.node_type.tolist(), g.features):
            if t == BUS:
                assert f[5:8].sum() == 1.0
            if t == GENERATOR:
                assert f[-5:].sum() == 1.0
        # three candidate edges per endpoint, exactly one flagged
        assert np.all(g.edge_attr.reshape(-1, 3).sum(axis=1) == 1.0)
        sub = build_substation_graph(spec, state, flow)
        assert 0 <= sub.n_nodes <= 2 * spec.n_sub
        assert sub.n_nodes == len(electrical_nodes(spec, state))


def test_schema_stable_over_episode(spec, chronics):
    cfg = EnvConfig(horizon=150, opponent=OpponentConfig(enabled=True, attack_probability=0.2))
    lay = layout(spec)
    rng = np.random.default_rng(0)
    for builder in (build_flat, build_element_graph):
        env = GridEnv(spec, cfg, builder)
        obs = env.reset(slice_chronic(chronics[5], Scenario(5, 0)), seed=2)
        shapes = set()
        while not env.done:
            shapes.add(obs.shape if builder is build_flat else (obs.n_nodes, len(obs.edges)))
            mask = env.mask()
            choice = [rng.choice(np.flatnonzero(mask.element(e, lay))) if rng.random() < 0.05 else lay.noop[e]
                      for e in range(lay.n_elements)]
            obs = env.step(TopoAction(np.array(choice))).observation
        assert len(shapes) == 1


def test_line_features(spec, chronics):
    state = GridState.default(spec)
    state.overflow_counter[4] = 2
    state.line_cooldown[4] = 1
    flow = _solved(spec, chronics, state)
    g = build_element_graph(spec, state, flow)
    lines = [f for t, f in zip(g.node_type, g.features) if t == LINE]
    assert lines[4][5] == pytest.approx(flow.rho[4])
    assert lines[4][6:8].tolist() == [2.0, 1.0]
