"""Synthetic 5-substation grid and its 20 seeded chronics.

Chronics are daily sinusoidal demand profiles with seeded noise, a slowly
varying wind generator and a thermal slack unit.  Training chronics carry a
few short maintenance outages; the grid tolerates any single line outage at
an ordinary peak.  The held-out chronic 17 takes a critical line out at night
and then runs into a heat wave the grid only carries with that line back in
service; chronic 19 takes two lines out on consecutive nights.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .chronics import DEFAULT_LENGTH, STEPS_PER_DAY, Chronic, Maintenance, save_chronic
from .grid import Generator, GridSpec, Line, Load, Substation, save_spec

N_CHRONICS = 20
TEST_CHRONICS = (17, 19)
TRAIN_CHRONICS = tuple(i for i in range(N_CHRONICS) if i not in TEST_CHRONICS)
FIXTURE_SEED = 20240917

# (from, to, reactance p.u., thermal limit MW)
_LINES = (
    (0, 1, 0.06, 430.0),
    (0, 2, 0.08, 425.0),
    (1, 2, 0.05, 255.0),
    (1, 3, 0.10, 190.0),
    (2, 3, 0.07, 165.0),
    (2, 4, 0.12, 120.0),
    (3, 4, 0.09, 80.0),
    (3, 4, 0.09, 80.0),
)
_LOAD_BASE = np.array([100.0, 90.0, 110.0])
# limits carry every single-line outage through an ordinary peak with a few
# percent to spare; most double outages overload something
_CRITICAL_LINE = 1
_PAIRED_LINES = (3, 5)


def case5() -> GridSpec:
    subs = tuple(Substation(i, f"sub{i}") for i in range(5))
    gens = (
        Generator(0, 0, 0.0, 500.0, max_ramp_up=20.0, max_ramp_down=20.0, min_uptime=12,
                  min_downtime=12, cost_per_mw=40.0, startup_cost=500.0, shutdown_cost=100.0,
                  gen_type="thermal"),
        Generator(1, 1, 0.0, 150.0, max_ramp_up=150.0, max_ramp_down=150.0,
                  cost_per_mw=0.0, gen_type="wind"),
    )
    loads = tuple(Load(i, s) for i, s in enumerate((2, 3, 4)))
    lines = tuple(
        Line(i, a, b, x, round(x / 6.0, 6), limit) for i, (a, b, x, limit) in enumerate(_LINES)
    )
    return GridSpec(subs, gens, loads, lines, slack_generator=0, base_power=100.0)


def _smooth_noise(rng: np.random.Generator, n: int, scale: float, corr: float = 0.97) -> np.ndarray:
    # AR(1) noise with unit stationary variance, times ``scale``
    eps = rng.standard_normal(n) * np.sqrt(1 - corr**2)
    out = np.empty(n)
    acc = rng.standard_normal()
    for t in range(n):
        acc = corr * acc + eps[t]
        out[t] = acc
    return scale * out


def _peak_window(t: np.ndarray, day: int, height: float, width: float = 30.0) -> np.ndarray:
    # extra demand bump centred on the evening peak of ``day``
    centre = day * STEPS_PER_DAY + 0.75 * STEPS_PER_DAY
    return height * np.exp(-0.5 * ((t - centre) / width) ** 2)


def make_chronic(spec: GridSpec, chronic_id: int, seed: int = FIXTURE_SEED,
                 length: int = DEFAULT_LENGTH) -> Chronic:
    rng = np.random.default_rng([seed, chronic_id])
    t = np.arange(length, dtype=float)
    phase = 2 * np.pi * t / STEPS_PER_DAY
    level = rng.uniform(0.88, 1.0)
    # demand: evening peak at 0.75 of the day, trough before dawn
    daily = 1.0 + 0.18 * np.cos(phase - 1.5 * np.pi)
    weekly = 1.0 + 0.04 * np.sin(2 * np.pi * t / length + rng.uniform(0, 2 * np.pi))
    shares = _LOAD_BASE * rng.uniform(0.95, 1.05, size=3)
    load = np.empty((length, 3))
    for k in range(3):
        load[:, k] = shares[k] * level * daily * weekly * (1 + _smooth_noise(rng, length, 0.02))
    maintenance: list[Maintenance] = []

    night = int(0.15 * STEPS_PER_DAY)
    if chronic_id == 17:
        # critical line out for a night, then three days of heat
        maintenance.append(Maintenance(_CRITICAL_LINE, STEPS_PER_DAY + night, 36))
        for day in (1, 2, 3):
            load *= 1.0 + _peak_window(t, day, 0.15, 50.0)[:, None]
    elif chronic_id == 19:
        # two outages on consecutive nights; together they overload the grid
        for day, line in zip((2, 3), _PAIRED_LINES):
            maintenance.append(Maintenance(line, day * STEPS_PER_DAY + night, 36))
    else:
        for _ in range(int(rng.integers(0, 3))):
            line = int(rng.integers(spec.n_line))
            maintenance.append(Maintenance(line, int(rng.integers(0, length - 96)), int(rng.integers(12, 48))))
        maintenance.sort(key=lambda m: m.start)

    wind_cap = spec.generators[1].p_max
    wind = wind_cap * (0.45 + 0.25 * np.sin(2 * np.pi * t / (1.7 * STEPS_PER_DAY) + rng.uniform(0, 2 * np.pi)))
    wind = np.clip(wind + _smooth_noise(rng, length, 0.06 * wind_cap), 0.0, 0.95 * wind_cap)
    thermal = np.clip(load.sum(axis=1) * 1.02 - wind, spec.generators[0].p_min, spec.generators[0].p_max)
    gen = np.stack([thermal, wind], axis=1)
    price = 35.0 + 15.0 * np.cos(phase - 1.5 * np.pi) + _smooth_noise(rng, length, 2.0)
    price = np.maximum(price, 5.0)

    # round to the on-disk precision so generated and reloaded data coincide
    return Chronic(chronic_id, np.round(gen, 6), np.round(load, 6), np.round(price, 6), tuple(maintenance))


def make_chronics(spec: GridSpec, seed: int = FIXTURE_SEED) -> dict[int, Chronic]:
    return {i: make_chronic(spec, i, seed) for i in range(N_CHRONICS)}


def write_fixtures(out: str | Path, seed: int = FIXTURE_SEED) -> Path:
    """Write ``case5.json`` and ``chronics/<id>/`` under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    spec = case5()
    save_spec(spec, out / "case5.json")
    for cid, chronic in make_chronics(spec, seed).items():
        save_chronic(chronic, out / "chronics" / str(cid), spec)
    return out


def data_dir() -> Path:
    return Path(__file__).resolve().parent / "data"
