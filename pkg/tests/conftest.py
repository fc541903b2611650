import numpy as np
import pytest

from topogrid.chronics import load_chronics
from topogrid.fixtures import case5, data_dir
from topogrid.grid import Bus, Generator, GridSpec, Line, Load, Substation


@pytest.fixture(scope="session")
def spec():
    return case5()


@pytest.fixture(scope="session")
def chronics(spec):
    return load_chronics(data_dir() / "chronics", spec)


def line_grid(n_sub, lines, gens, loads, slack=0, base=100.0):
    """Small hand-built grid.

    lines: (from, to, x, r, limit); gens: (sub, p_min, p_max); loads: sub.
    """
    return GridSpec(
        substations=tuple(Substation(i) for i in range(n_sub)),
        generators=tuple(Generator(i, s, lo, hi) for i, (s, lo, hi) in enumerate(gens)),
        loads=tuple(Load(i, s) for i, s in enumerate(loads)),
        lines=tuple(Line(i, a, b, x, r, lim) for i, (a, b, x, r, lim) in enumerate(lines)),
        slack_generator=slack,
        base_power=base,
    )


def random_topology(spec, state, rng, p_move=0.3, p_off=0.15):
    """Random busbar assignment; loads stay connected, lines may be cut."""
    for arr in (state.gen_bus, state.load_bus):
        flip = rng.random(len(arr)) < p_move
        arr[flip] = Bus.BUSBAR2
    for arr in (state.line_or_bus, state.line_ex_bus):
        flip = rng.random(len(arr)) < p_move
        arr[flip] = Bus.BUSBAR2
    off = rng.random(spec.n_line) < p_off
    state.line_or_bus[off] = Bus.DISCONNECTED
    state.line_ex_bus[off] = Bus.DISCONNECTED
    return state


def fixture_injections(chronic, t):
    from topogrid.powerflow import Injections
    return Injections(chronic.gen_p[t].copy(), chronic.load_p[t].copy())


def rng(seed=0):
    return np.random.default_rng(seed)


def finite_difference_error(fn, params, h=1e-5):
    """Worst relative error between backprop and central differences.

    ``fn()`` builds a scalar Tensor from the current ``params`` data.
    """
    from topogrid.nn import autodiff as ad

    for p in params:
        p.grad = None
    ad.backward(fn())
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else np.array(p.grad)
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = float(fn().data)
            flat[i] = keep - h
            down = float(fn().data)
            flat[i] = keep
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
