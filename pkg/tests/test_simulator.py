import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warpdiff.analysis import analyze_matrix
from warpdiff.errors import IndexOutOfRange
from warpdiff.simulator import (
    InjectedAnomaly,
    SimProfile,
    case_ids,
    generate,
    inject,
    random_profile,
    runtime_ids,
    split_stages,
)

# max over seeds 0..199 (sigma=0.05, 120x7) of the angle between a case's
# unit vector and the unit speed vector; measured 0.1289 rad on the build host
MAX_NOISY_ANGLE = 0.15


def test_ids():
    assert runtime_ids(3) == ["rt01", "rt02", "rt03"]
    assert case_ids(2) == ["case001", "case002"]
    assert case_ids(1000)[-1] == "case1000"


def test_generate_is_deterministic():
    p = random_profile(42)
    a, b = generate(p), generate(p)
    assert a == b
    assert a.values.tobytes() == b.values.tobytes()
    assert generate(random_profile(43)) != a
    assert a.shape == (120, 7)


def test_random_profile_ranges():
    p = random_profile(5, 500, 9)
    assert all(1.0 <= s <= 10.0 for s in p.runtime_speeds)
    assert all(0.01 <= w <= 10.0 for w in p.case_workloads)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.1, 100), min_size=2, max_size=8), st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=10))
def test_noiseless_rows_parallel_to_speeds(speeds, workloads):
    m = generate(SimProfile(0, speeds, workloads, 0.0))
    s = np.asarray(speeds) / np.linalg.norm(speeds)
    u = m.values / np.linalg.norm(m.values, axis=1, keepdims=True)
    assert np.all(np.abs(u - s) < 1e-12)
    _, ranked = analyze_matrix(m)
    assert all(a.distance < 1e-12 for a in ranked)


def test_noisy_angle_regression_bound():
    worst = 0.0
    for seed in range(200):
        p = random_profile(seed, 120, 7, 0.05)
        s = np.asarray(p.runtime_speeds) / np.linalg.norm(p.runtime_speeds)
        v = generate(p).values
        u = v / np.linalg.norm(v, axis=1, keepdims=True)
        worst = max(worst, float(np.arccos(np.clip(u @ s, -1, 1)).max()))
    assert worst < MAX_NOISY_ANGLE


def test_profile_validation():
    with pytest.raises(ValueError):
        SimProfile(0, (1.0,), (1.0,))
    with pytest.raises(ValueError):
        SimProfile(0, (1.0, -1.0), (1.0,))
    with pytest.raises(ValueError):
        SimProfile(0, (1.0, 2.0), (1.0,), noise_sigma=-0.1)


@pytest.mark.parametrize("factor", [1.0, 0.5, -3.0])
def test_inject_rejects_non_slowdowns(factor):
    with pytest.raises(ValueError):
        InjectedAnomaly(0, 0, factor)


def test_inject_out_of_range():
    m = generate(random_profile(1, 4, 3))
    for i, j in [(4, 0), (0, 3), (-1, 0)]:
        with pytest.raises(IndexOutOfRange):
            inject(m, InjectedAnomaly(i, j, 2.0))


def test_injections_touch_only_their_cells():
    m = generate(random_profile(2, 10, 4))
    out = inject(inject(m, InjectedAnomaly(3, 1, 2.0)), InjectedAnomaly(7, 2, 5.0))
    changed = m.values != out.values
    assert changed.sum() == 2 and changed[3, 1] and changed[7, 2]
    assert out.values[3, 1] == m.values[3, 1] * 2.0
    assert out.values[7, 2] == m.values[7, 2] * 5.0
    mask = ~changed
    assert out.values[mask].tobytes() == m.values[mask].tobytes()


def test_split_stages():
    m = generate(random_profile(3, 5, 3))
    fr = np.array([[0.1, 0.2, 0.3], [0.2, 0.3, 0.0], [0.7, 0.5, 0.7]])
    parts = split_stages(m, fr)
    assert list(parts) == ["init", "load", "exec"]
    np.testing.assert_allclose(sum(p.values for p in parts.values()), m.values, rtol=1e-14)
    assert parts["load"].stage == "load"
    with pytest.raises(ValueError):
        split_stages(m, fr[:, :2])
    with pytest.raises(ValueError):
        split_stages(m, fr * 2)
