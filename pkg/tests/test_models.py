import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from kfcs.models import (
    BoundedPowerParams,
    NoiseSpec,
    RandomWalkParams,
    load_trajectory,
    measure,
    save_trajectory,
    simulate_bounded_power,
    simulate_no_removals,
    simulate_random_walk,
)


def walk(**kw):
    base = dict(m=256, S0=8, Sa=2, Sr=0, d=5, Smax=26, sigma_sys0=1.0, sigma_sys=1.0, horizon=60)
    base.update(kw)
    return RandomWalkParams(**base)


def power(**kw):
    base = dict(m=200, S0=20, Sa=2, ramp=0.2, plateau=1.0, d=8, r=3, horizon=24)
    base.update(kw)
    return BoundedPowerParams(**base)


def check_structure(traj, Sa, Sr):
    for t in range(traj.horizon + 1):
        N = traj.supports[t]
        off = np.setdiff1d(np.arange(traj.m), N)
        assert not traj.x[t, off].any()
        if t == 0:
            continue
        prev = traj.supports[t - 1]
        added = np.setdiff1d(N, prev).size
        removed = np.setdiff1d(prev, N).size
        assert added == (Sa if t in traj.addition_times else 0)
        assert removed == (Sr if t in traj.removal_times else 0)


def test_addition_schedule_and_final_size():
    traj = simulate_random_walk(walk(), 0)
    # nine events fill 8 -> 26
    assert traj.addition_times == [1, 6, 11, 16, 21, 26, 31, 36, 41]
    assert all(traj.supports[t].size == 26 for t in range(41, 61))
    check_structure(traj, 2, 0)


def test_supports_nested_without_removals():
    traj = simulate_no_removals(walk(), 5)
    for a, b in zip(traj.supports, traj.supports[1:]):
        assert np.isin(a, b).all()


def test_no_removals_event_count():
    traj = simulate_no_removals(walk(Sa=4, d=10, Smax=20, horizon=50), 1)
    assert traj.addition_times == [1, 11, 21]
    assert all(traj.supports[t].size == 20 for t in range(21, 51))


def test_no_removals_with_full_initial_support():
    traj = simulate_no_removals(walk(Smax=8), 2)
    assert traj.addition_times == []
    assert all(np.array_equal(s, traj.supports[0]) for s in traj.supports)


def test_no_removals_rejects_inconsistent_params():
    with pytest.raises(ValueError):
        simulate_no_removals(walk(Sa=5), 0)
    with pytest.raises(ValueError):
        simulate_no_removals(walk(Sr=1), 0)


def test_no_events_keeps_support():
    traj = simulate_random_walk(walk(Sa=0), 3)
    assert all(np.array_equal(s, traj.supports[0]) for s in traj.supports)


def test_zero_walk_variance_freezes_values():
    traj = simulate_random_walk(walk(sigma_sys=0.0), 4)
    N0 = traj.supports[0]
    assert np.all(traj.x[:, N0] == traj.x[0, N0])
    assert np.count_nonzero(traj.x[-1]) == N0.size


def test_new_entries_start_from_zero():
    p = walk(horizon=12)
    traj = simulate_random_walk(p, 9)
    new = np.setdiff1d(traj.supports[6], traj.supports[5])
    assert not traj.x[5, new].any()


def test_removals_take_smallest_magnitudes():
    traj = simulate_random_walk(walk(Sr=2, Sa=2, horizon=40), 6)
    assert traj.removal_times == [5, 10, 15, 20, 25, 30, 35, 40]
    check_structure(traj, 2, 2)
    for t in traj.removal_times:
        prev = traj.supports[t - 1]
        gone = np.setdiff1d(prev, traj.supports[t])
        stayed = np.intersect1d(prev, traj.supports[t])
        assert np.abs(traj.x[t - 1, gone]).max() <= np.abs(traj.x[t - 1, stayed]).min()


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    S0=st.integers(1, 10),
    Sa=st.integers(0, 3),
    Sr=st.integers(0, 1),
    d=st.integers(2, 6),
    extra=st.integers(0, 8),
)
def test_random_walk_invariants(seed, S0, Sa, Sr, d, extra):
    assume(Sr <= Sa)
    p = walk(m=40, S0=S0, Sa=Sa, Sr=Sr, d=d, Smax=S0 + extra, horizon=30)
    traj = simulate_random_walk(p, seed)
    check_structure(traj, Sa, Sr)
    assert max(s.size for s in traj.supports) <= p.Smax
    np.testing.assert_array_equal(traj.x, simulate_random_walk(p, seed).x)


def test_removal_underflow_is_an_error():
    with pytest.raises(ValueError):
        simulate_random_walk(walk(S0=1, Sa=0, Sr=1, Smax=1, d=2, horizon=10), 0)


def test_bounded_power_schedule():
    traj = simulate_bounded_power(power(), 0)
    assert traj.addition_times == [2, 10, 18]
    assert traj.removal_times == [9, 17]
    check_structure(traj, 2, 2)
    assert {s.size for s in traj.supports} <= {20, 22}


def test_bounded_power_ramps():
    traj = simulate_bounded_power(power(), 1)
    new = np.setdiff1d(traj.supports[2], traj.supports[1])
    np.testing.assert_allclose(np.abs(traj.x[2:7, new]).T, [[0.2, 0.4, 0.6, 0.8, 1.0]] * 2)
    gone = np.setdiff1d(traj.supports[8], traj.supports[9])
    # decrease starts at t = 7 and hits zero at the removal
    np.testing.assert_allclose(np.abs(traj.x[6:10, gone]).T, [[1.0, 2 / 3, 1 / 3, 0.0]] * 2)


def test_bounded_power_without_events_is_constant():
    traj = simulate_bounded_power(power(Sa=0), 2)
    assert np.all(traj.x == traj.x[0])
    assert np.all(np.abs(traj.x[0][traj.supports[0]]) == 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_bounded_power_energy_is_roughly_constant(seed):
    traj = simulate_bounded_power(power(horizon=60), seed)
    energy = np.sum(traj.x[1:] ** 2, axis=1)
    assert energy.max() / energy.min() < 2.0


def test_bounded_power_validation():
    with pytest.raises(ValueError):
        power(r=8)
    with pytest.raises(ValueError):
        power(S0=199)
    with pytest.raises(ValueError):
        # only three plateau entries when the first decrease starts
        simulate_bounded_power(power(S0=1, Sa=2, d=4, r=2, horizon=20), 0)


def test_uniform_noise_is_bounded():
    rng = np.random.default_rng(0)
    w = NoiseSpec("uniform", 0.1266).sample(100_000, rng)
    assert np.abs(w).max() <= 0.1266
    assert NoiseSpec("uniform", 0.3).variance() == pytest.approx(0.03)
    assert NoiseSpec("gaussian", 0.3).variance() == pytest.approx(0.09)


def test_measure_edge_cases():
    A = np.random.default_rng(1).standard_normal((5, 8))
    x = np.arange(8.0)
    np.testing.assert_array_equal(measure(x, A, NoiseSpec("gaussian", 0.0), 3), A @ x)
    w = measure(np.zeros(8), A, NoiseSpec("gaussian", 1.0), 3)
    np.testing.assert_array_equal(w, np.random.default_rng(3).standard_normal(5))
    with pytest.raises(ValueError):
        measure(np.zeros(7), A, NoiseSpec("gaussian", 1.0), 3)
    with pytest.raises(ValueError):
        NoiseSpec("laplace", 1.0)


def test_trajectory_round_trip(tmp_path):
    traj = simulate_random_walk(walk(Sr=2, horizon=20), 7)
    save_trajectory(traj, tmp_path / "traj.csv")
    back = load_trajectory(tmp_path / "traj.csv")
    np.testing.assert_array_equal(back.x, traj.x)
    assert all(np.array_equal(a, b) for a, b in zip(back.supports, traj.supports))
    assert back.addition_times == traj.addition_times and back.removal_times == traj.removal_times
