"""Workload suite: demand synthesis, structure, distinguishability."""

import itertools
import math

import numpy as np
import pytest

from powermask.analysis import change_points, fft_magnitude
from powermask.workloads import (PhaseSpec, WorkloadSpec, builtin_suite,
                                 demand_at, longest_loop_period,
                                 noise_free_demand, overall_mean, repeated,
                                 suite_by_id, validate_workload)

TDP = 95.0


def _flat(mean, duration, sigma=0.0):
    return PhaseSpec(mean_demand=mean, demand_sigma=sigma, loop_period=None,
                     loop_amp=0.0, duration=duration)


def test_constant_phase_is_exactly_constant():
    spec = WorkloadSpec(app_id=0, phases=(_flat(30.0, 200),))
    rng = np.random.default_rng(0)
    assert all(demand_at(spec, t, rng) == 30.0 for t in range(200))


def test_loop_phase_is_exactly_periodic():
    spec = WorkloadSpec(app_id=0, phases=(
        PhaseSpec(40.0, 0.0, 50.0, 5.0, 600),))
    rng = np.random.default_rng(0)
    vals = [demand_at(spec, t, rng) for t in range(600)]
    for t in range(550):
        assert vals[t] == pytest.approx(vals[t + 50], abs=1e-9)


def test_demand_at_range_check():
    spec = WorkloadSpec(app_id=0, phases=(_flat(30.0, 100),))
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        demand_at(spec, -1, rng)
    with pytest.raises(ValueError):
        demand_at(spec, 100, rng)


def test_demand_clamped_to_plant_limits():
    spec = WorkloadSpec(app_id=0, phases=(_flat(30.0, 100, sigma=40.0),))
    rng = np.random.default_rng(5)
    vals = [demand_at(spec, t, rng, max_demand=TDP) for t in range(100)]
    assert min(vals) >= 0.0 and max(vals) <= TDP
    # the wild sigma must actually hit both clamps for this test to mean much
    assert 0.0 in vals or TDP in vals


def test_noise_free_demand_matches_pointwise_formula():
    spec = WorkloadSpec(app_id=1, phases=(
        PhaseSpec(30.0, 2.0, 40.0, 6.0, 120),
        _flat(25.0, 80, sigma=1.0),
    ))
    d = noise_free_demand(spec)
    assert d.shape == (200,)
    for t in (0, 7, 119):
        assert d[t] == pytest.approx(
            30.0 + 6.0 * math.sin(2 * math.pi * t / 40.0))
    assert np.all(d[120:] == 25.0)


def test_same_seed_same_demand_signal():
    spec = suite_by_id()[2]

    def draw(seed):
        rng = np.random.default_rng(seed)
        return [demand_at(spec, t, rng) for t in range(400)]

    assert draw(3) == draw(3)
    assert draw(3) != draw(4)


def test_suite_shape_and_ids():
    apps, videos = builtin_suite()
    assert len(apps) == 8
    assert len(videos) == 3
    assert [w.app_id for w in apps] == list(range(8))
    assert [w.app_id for w in videos] == [8, 9, 10]
    assert all(w.total_duration == 2000 for w in apps + videos)


def test_suite_respects_plant_limits_on_both_profiles():
    apps, videos = builtin_suite()
    for w in apps + videos:
        validate_workload(w, TDP)
        assert 0.0 <= noise_free_demand(w).min()
        assert noise_free_demand(w).max() <= TDP


def test_suite_boundaries_frozen():
    want = {0: [904, 1200], 1: [1000, 1250], 2: [1100, 1400],
            3: [1200, 1500], 4: [1300, 1500], 5: [1400, 1600],
            6: [1440, 1680], 7: [1500, 1700],
            8: [1500], 9: [1489], 10: [1487]}
    assert {w.app_id: w.boundaries() for w in suite_by_id().values()} == want


def test_suite_pairwise_distinguishable():
    apps, videos = builtin_suite()
    for a, b in itertools.combinations(apps + videos, 2):
        dmean = abs(overall_mean(a) - overall_mean(b))
        pa = longest_loop_period(a) or 0.0
        pb = longest_loop_period(b) or 0.0
        assert dmean >= 2.0 or abs(pa - pb) >= 10.0, (a.app_id, b.app_id)


def test_app_spectra_peak_at_longest_loop():
    # dominant non-DC line must land on 1/loop_period, within a bin
    want_bin = {0: 205, 1: 171, 2: 146, 3: 128, 4: 114, 5: 102, 6: 93, 7: 85}
    apps, _ = builtin_suite()
    for w in apps:
        spec = fft_magnitude(noise_free_demand(w))
        assert spec.n_fft == 2048
        k = int(np.argmax(spec.magnitude[1:])) + 1
        assert k == want_bin[w.app_id]
        assert abs(k - spec.n_fft / longest_loop_period(w)) <= 1.0


def test_phase_edges_recoverable_from_noise_free_demand():
    for w in suite_by_id().values():
        rep = change_points(noise_free_demand(w))
        for edge in w.boundaries():
            err = min(abs(b - edge) for b in rep.boundaries)
            assert err <= 2, (w.app_id, edge, list(rep.boundaries))


def test_repeated_tiles_phases():
    base = suite_by_id()[4]
    tiled = repeated(base, 3)
    assert tiled.total_duration == 3 * base.total_duration
    assert len(tiled.phases) == 3 * len(base.phases)
    assert tiled.app_id == base.app_id
    d0 = noise_free_demand(base)
    d3 = noise_free_demand(tiled)
    # means tile exactly; the loop term stays phase-coherent in global time,
    # so only compare the phase-mean staircase
    assert np.array_equal(np.tile(_mean_track(base), 3), _mean_track(tiled))
    assert d3.shape == (3 * d0.shape[0],)


def _mean_track(spec):
    return np.concatenate([np.full(p.duration, p.mean_demand)
                           for p in spec.phases])


def test_repeated_rejects_nonpositive():
    with pytest.raises(ValueError):
        repeated(suite_by_id()[0], 0)


def test_validate_workload_errors():
    short = WorkloadSpec(app_id=0, phases=(_flat(30.0, 50),))
    with pytest.raises(ValueError):
        validate_workload(short, TDP)
    hot = WorkloadSpec(app_id=0, phases=(
        PhaseSpec(90.0, 0.0, 20.0, 10.0, 200),))
    with pytest.raises(ValueError):
        validate_workload(hot, TDP)


def test_suite_by_id_is_complete():
    table = suite_by_id()
    assert sorted(table) == list(range(11))
    assert all(table[k].app_id == k for k in table)
