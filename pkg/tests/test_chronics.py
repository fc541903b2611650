import shutil

import numpy as np
import pytest

from topogrid.chronics import (
    DEFAULT_HORIZON, STEPS_PER_DAY, BoundsError, Chronic, HeaderMismatchError, Maintenance, MissingFileError,
    NegativeLoadError, NonNumericError, Scenario, ScenarioRangeError, full_scenario, load_chronic,
    sample_scenario, save_chronic, slice_chronic,
)
from topogrid.fixtures import TEST_CHRONICS, TRAIN_CHRONICS, data_dir, make_chronic


@pytest.fixture
def chronic_dir(tmp_path):
    dst = tmp_path / "3"
    shutil.copytree(data_dir() / "chronics" / "3", dst)
    return dst


def _rewrite(path, row, col, value):
    lines = path.read_text().splitlines()
    cells = lines[row].split(",")
    cells[col] = value
    lines[row] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")


def test_fixture_chronic_loads(spec, chronic_dir):
    chronic = load_chronic(chronic_dir, spec)
    assert chronic.id == 3
    assert chronic.length == 2016
    assert chronic.gen_p.shape == (2016, 2) and chronic.load_p.shape == (2016, 3)


def test_bundled_data_matches_generator(spec, chronics):
    for cid in (0, 17, 19):
        fresh = make_chronic(spec, cid)
        loaded = chronics[cid]
        assert np.array_equal(fresh.gen_p, loaded.gen_p)
        assert np.array_equal(fresh.load_p, loaded.load_p)
        assert np.array_equal(fresh.price, loaded.price)
        assert fresh.maintenance == loaded.maintenance


def test_split():
    assert TEST_CHRONICS == (17, 19)
    assert len(TRAIN_CHRONICS) == 18 and not set(TRAIN_CHRONICS) & set(TEST_CHRONICS)


def test_unknown_generator_header(spec, chronic_dir):
    _rewrite(chronic_dir / "prod_p.csv", 0, 1, "7")
    with pytest.raises(HeaderMismatchError, match="unknown generator"):
        load_chronic(chronic_dir, spec)


def test_negative_load_located(spec, chronic_dir):
    _rewrite(chronic_dir / "load_p.csv", 5, 2, "-1.0")
    with pytest.raises(NegativeLoadError, match="row 5, load 2"):
        load_chronic(chronic_dir, spec)


def test_non_numeric_cell(spec, chronic_dir):
    _rewrite(chronic_dir / "prod_p.csv", 10, 0, "abc")
    with pytest.raises(NonNumericError, match="row 10"):
        load_chronic(chronic_dir, spec)


def test_missing_file(spec, chronic_dir):
    (chronic_dir / "prices.csv").unlink()
    with pytest.raises(MissingFileError):
        load_chronic(chronic_dir, spec)


def test_generation_above_pmax(spec, chronic_dir):
    _rewrite(chronic_dir / "prod_p.csv", 3, 1, "999.0")
    with pytest.raises(BoundsError):
        load_chronic(chronic_dir, spec)


def test_error_classes_distinct():
    classes = {MissingFileError, HeaderMismatchError, NonNumericError, NegativeLoadError}
    assert len(classes) == 4


def test_save_load_roundtrip(spec, tmp_path):
    c = Chronic(4, np.array([[10.0, 1.5], [11.0, 2.5]]), np.array([[1.0, 2.0, 3.0]] * 2),
                np.array([30.0, 31.0]), (Maintenance(2, 0, 1),))
    save_chronic(c, tmp_path / "4", spec)
    back = load_chronic(tmp_path / "4", spec)
    assert np.array_equal(back.gen_p, c.gen_p) and back.maintenance == c.maintenance


def test_slice_offsets(chronics):
    c = chronics[0]
    v0 = slice_chronic(c, Scenario(0, 0))
    assert v0.offset == 0 and v0.length == DEFAULT_HORIZON
    v4 = slice_chronic(c, Scenario(0, 4))
    assert v4.offset == 1152 and v4.offset + v4.length == 2016
    assert np.array_equal(v4.load_p[7], c.load_p[1152 + 7])
    with pytest.raises(ScenarioRangeError):
        slice_chronic(c, Scenario(0, 5))


def test_slice_identity(chronics):
    c = chronics[2]
    v = slice_chronic(c, full_scenario(c))
    assert np.array_equal(v.gen_p, c.gen_p) and np.array_equal(v.price, c.price)
    assert v.maintenance == c.maintenance


def test_slice_shifts_maintenance(chronics):
    c = chronics[17]
    (m,) = c.maintenance
    v = slice_chronic(c, Scenario(17, 1))
    assert v.maintenance == (Maintenance(m.line_id, m.start - STEPS_PER_DAY, m.duration),)
    assert slice_chronic(c, Scenario(17, 3)).maintenance == ()


def test_sample_support_sizes():
    rng = np.random.default_rng(0)
    seen = {(s.chronic_id, s.start_offset_days) for s in (sample_scenario(rng, TRAIN_CHRONICS) for _ in range(5000))}
    assert len(seen) == 90
    seen = {(s.chronic_id, s.start_offset_days) for s in (sample_scenario(rng, [3]) for _ in range(200))}
    assert len(seen) == 5


def test_sample_reproducible():
    a = [sample_scenario(np.random.default_rng(7), TRAIN_CHRONICS) for _ in range(3)]
    b = [sample_scenario(np.random.default_rng(7), TRAIN_CHRONICS) for _ in range(3)]
    assert a == b
    ra, rb = np.random.default_rng(9), np.random.default_rng(9)
    assert [sample_scenario(ra, TRAIN_CHRONICS) for _ in range(50)] == [sample_scenario(rb, TRAIN_CHRONICS) for _ in range(50)]


def test_sample_empty_set():
    with pytest.raises(ValueError):
        sample_scenario(np.random.default_rng(0), [])
