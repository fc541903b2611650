import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from topogrid.chronics import Chronic
from topogrid.env import EpisodeTrace, StepRecord
from topogrid.metrics import (
    EvalHistory, MetricError, ScoreConfig, do_nothing_baseline, episode_cost, l2rpn_score, read_rows, s2c, summarize,
    write_rows,
)


def s2c_oracle(rows, full, total):
    """Smallest evaluated step from which every later evaluation is full length."""
    for i, (step, _) in enumerate(rows):
        if all(length == full for _, length in rows[i:]):
            return step
    return total


def _history(lengths, full=100, total=1000, every=100):
    h = EvalHistory(total)
    for k, length in enumerate(lengths):
        h.add(0, (k + 1) * every, length, full)
    return h


def test_s2c_examples():
    assert s2c(_history([100, 100, 100]), 0) == 100
    assert s2c(_history([10, 50, 99]), 0) == 1000
    assert s2c(_history([100, 40, 100, 100]), 0) == 300


@settings(max_examples=500, deadline=None)
@given(lengths=st.lists(st.sampled_from([3, 7, 10]), min_size=1, max_size=12))
def test_s2c_reverse_scan_oracle(lengths):
    h = _history(lengths, full=10, total=5000)
    assert s2c(h, 0) == s2c_oracle(h.evals[0], 10, 5000)


def test_history_guards():
    h = EvalHistory(10)
    h.add(1, 5, 3, 4)
    with pytest.raises(MetricError):
        h.add(1, 5, 3, 4)
    with pytest.raises(MetricError):
        h.add(1, 6, 9, 4)
    with pytest.raises(MetricError):
        s2c(h, 2)


def test_history_from_records():
    recs = [{"step": s, "chronic": 17, "opponent": opp, "length": n, "chronic_length": 9}
            for s, opp, n in [(2, False, 9), (1, False, 4), (1, True, 9), (2, True, 1)]]
    assert s2c(EvalHistory.from_records(recs, 50, opponent=False), 17) == 2
    assert s2c(EvalHistory.from_records(recs, 50, opponent=True), 17) == 50


def _chronic(load, price):
    load = np.asarray(load, float).reshape(-1, 1)
    return Chronic(0, np.zeros((len(load), 1)), load, np.asarray(price, float))


def _trace(losses, horizon, blackout_at=None):
    recs = []
    for t, loss in enumerate(losses):
        recs.append(StepRecord(t, [1], "legal", 1.0, [0.5], loss, 0.0, False, t + 1 == horizon))
    if blackout_at is not None:
        recs.append(StepRecord(blackout_at, [1], "legal", 0.0, [0.5], 0.0, 0.0, True, False))
    return EpisodeTrace(0, 0, horizon, False, recs)


def test_cost_full_survival_zero_losses():
    c = _chronic([10, 20, 30], [40, 40, 40])
    assert episode_cost(_trace([0.0, 0.0, 0.0], 3), c) == 0.0


def test_cost_immediate_blackout():
    c = _chronic([10, 20, 30], [40, 50, 60])
    cfg = ScoreConfig(beta=3.0)
    expected = 3.0 * (10 * 40 + 20 * 50 + 30 * 60) / 12
    assert episode_cost(_trace([], 3, blackout_at=0), c, cfg) == pytest.approx(expected, rel=1e-15)


def test_cost_three_step_toy():
    # two survived steps, blackout at t = 2
    c = _chronic([10, 20, 30], [40, 50, 60])
    cost = episode_cost(_trace([1.0, 2.0], 3, blackout_at=2), c, ScoreConfig(beta=2.0, dt_hours=0.5))
    assert cost == pytest.approx((1.0 * 40 + 2.0 * 50) * 0.5 + 2.0 * 30 * 60 * 0.5)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), beta=st.floats(1.01, 10.0), extra=st.floats(0.0, 5.0),
       alpha=st.floats(0.1, 10.0))
def test_cost_monotone_and_price_scale(seed, beta, extra, alpha):
    rng = np.random.default_rng(seed)
    n = 12
    c = _chronic(rng.uniform(5, 50, n), rng.uniform(10, 60, n))
    t_end = int(rng.integers(0, n + 1))
    losses = rng.uniform(0, 3, t_end).tolist()
    tr = _trace(losses, n, blackout_at=t_end if t_end < n else None)
    base = episode_cost(tr, c, ScoreConfig(beta=beta))
    assert episode_cost(tr, c, ScoreConfig(beta=beta + 1.0)) >= base
    more = _trace([x + extra for x in losses], n, blackout_at=t_end if t_end < n else None)
    assert episode_cost(more, c, ScoreConfig(beta=beta)) >= base
    scaled = dataclasses.replace(c, price=alpha * c.price)
    assert episode_cost(tr, scaled, ScoreConfig(beta=beta)) == pytest.approx(alpha * base, rel=1e-12)


def test_cost_rejects_mismatch():
    c = _chronic([10, 20], [40, 40])
    with pytest.raises(MetricError):
        episode_cost(_trace([0.0, 0.0, 0.0], 3), c)


def test_score_anchors():
    assert l2rpn_score(80.0, 80.0) == 0.0
    assert l2rpn_score(0.2 * 80.0, 80.0) == pytest.approx(100.0, abs=1e-12)
    assert l2rpn_score(0.6 * 80.0, 80.0) == pytest.approx(50.0, abs=1e-12)
    assert l2rpn_score(0.0, 80.0) == 125.0
    assert l2rpn_score(160.0, 80.0) == -125.0
    with pytest.raises(MetricError):
        l2rpn_score(1.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0, 1e6), b=st.floats(0, 1e6), dn=st.floats(1e-3, 1e6), alpha=st.floats(0.01, 100))
def test_score_decreasing_and_scale_free(a, b, dn, alpha):
    if b - a > 1e-9 * dn:
        assert l2rpn_score(a, dn) > l2rpn_score(b, dn)
    assert l2rpn_score(alpha * a, alpha * dn) == pytest.approx(l2rpn_score(a, dn), rel=1e-9, abs=1e-9)


def test_do_nothing_baseline(spec, chronics):
    calm, cost = do_nothing_baseline(spec, chronics[0])
    assert calm.length == chronics[0].length
    assert l2rpn_score(cost, cost) == 0.0
    hard, _ = do_nothing_baseline(spec, chronics[17])
    assert hard.length < chronics[17].length
    again, cost2 = do_nothing_baseline(spec, chronics[0])
    assert again == calm and cost2 == cost


def test_do_nothing_survives_most_but_not_all(spec, chronics):
    lengths = {cid: do_nothing_baseline(spec, c)[0].length for cid, c in chronics.items()}
    survived = [cid for cid, n in lengths.items() if n == chronics[cid].length]
    assert len(chronics) // 2 < len(survived) < len(chronics)
    assert 17 not in survived and 19 not in survived


def test_rows_and_summary(tmp_path):
    rows = [{"seed": s, "chronic": 17, "opponent": 0, "score": v} for s, v in enumerate([10.0, 20.0, 30.0])]
    write_rows(rows, tmp_path / "s.csv")
    back = read_rows(tmp_path / "s.csv")
    assert len(back) == 3 and back[1]["score"] == "20.0"
    (summary,) = summarize(back)
    assert summary["n"] == 3 and summary["mean"] == 20.0
    assert summary["std"] == pytest.approx(np.std([10.0, 20.0, 30.0]))
