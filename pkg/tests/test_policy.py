import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from complab.errors import ConfigError
from complab.policy import (DecaySchedule, MagnitudeProfile, ProfileEntry, decay_lookup, maximal_magnitude,
                            optimal_magnitude, schedule_from_optima)


def profile(pairs, baseline=None):
    return MagnitudeProfile([ProfileEntry(m, a, 1.0 - a) for m, a in pairs], baseline_accuracy=baseline)


def test_unimodal_peak():
    assert optimal_magnitude(profile([(0, .5), (5, .6), (10, .7), (15, .65)])) == 10


def test_tie_prefers_weaker():
    assert optimal_magnitude(profile([(8, .7), (4, .7), (0, .6)])) == 4


def test_maximal_magnitude():
    assert maximal_magnitude(profile([(0, .4), (10, .45)], baseline=.5)) == 0
    assert maximal_magnitude(profile([(0, .6), (10, .7), (20, .55)], baseline=.5)) == 20
    pairs = [(0, .52), (5, .55), (10, .49), (15, .51), (20, .47)]
    # linear scan oracle
    best = 0
    for m, a in pairs:
        if a >= .5:
            best = max(best, m)
    assert maximal_magnitude(profile(pairs, baseline=.5)) == best == 15


def test_profile_validation():
    with pytest.raises(ConfigError):
        profile([(4, .5), (4, .6)])
    with pytest.raises(ConfigError):
        profile([(31, .5)])
    with pytest.raises(ConfigError):
        optimal_magnitude(MagnitudeProfile())


pairs_st = st.lists(st.tuples(st.integers(0, 30), st.sampled_from([.1, .2, .3, .4])), min_size=1,
                    max_size=12, unique_by=lambda t: t[0])


@settings(max_examples=100, deadline=None)
@given(pairs_st, st.randoms(use_true_random=False))
def test_extraction_order_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a, b = profile(pairs, .25), profile(shuffled, .25)
    assert optimal_magnitude(a) == optimal_magnitude(b)
    assert maximal_magnitude(a) == maximal_magnitude(b)


def test_profile_csv_round_trip(tmp_path):
    p = MagnitudeProfile([ProfileEntry(5, 0.75, 0.6, 5), ProfileEntry(0, 0.7, 0.65, 0)], 0.69, 0.7, 0)
    p.write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "magnitude,val_accuracy,val_loss,seed" and lines[1].startswith("-1,")
    q = MagnitudeProfile.read_csv(tmp_path / "p.csv")
    assert q.baseline_accuracy == 0.69 and sorted(q.entries, key=lambda e: e.magnitude) == \
        sorted(p.entries, key=lambda e: e.magnitude)


PIVOTS = ((0, 14), (0.2, 12), (0.4, 8), (0.6, 4))


@pytest.mark.parametrize("p,m", [(0.4, 8), (0.0, 14), (0.55, 8), (0.1, 14), (0.9, 4), (0.2, 12)])
def test_decay_lookup(p, m):
    assert decay_lookup(DecaySchedule(PIVOTS), p) == m


def test_decay_interpolated():
    s = DecaySchedule(PIVOTS, interpolate=True)
    assert decay_lookup(s, 0.3) == 10 and decay_lookup(s, 0.6) == 4 and decay_lookup(s, 0.95) == 4


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 0.99), min_size=2, max_size=20), st.booleans())
def test_decay_non_increasing(ps, interp):
    s = DecaySchedule(PIVOTS, interpolate=interp)
    ps = sorted(ps)
    vals = [decay_lookup(s, p) for p in ps]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_schedule_validation_and_from_optima():
    with pytest.raises(ConfigError):
        DecaySchedule(((0, 4), (0.2, 8)))
    with pytest.raises(ConfigError):
        DecaySchedule(((0.2, 8), (0.2, 4)))
    s = schedule_from_optima({0.0: 10, 0.4: 12, 0.8: 0})
    assert s.pivots == ((0.0, 10), (0.4, 10), (0.8, 0))


class TestGridSearch:
    @pytest.fixture(scope="class")
    @classmethod
    def setup(cls):
        from complab.harness.data import load_dataset
        from complab.models import BlockSpec, ModelSpec
        from complab.training import AugSpec, LossSpec, TrainSpec
        data = load_dataset(format="synthetic", n_samples=60, image_size=8, seed=1, val_fraction=0.25)
        spec = ModelSpec((1, 8, 8), (BlockSpec(3),), 10)
        ts = TrainSpec(1, 20, 0.05, 0.9, AugSpec(), LossSpec(), seed=3)
        return spec, data, ts

    def test_single_candidate(self, setup):
        from complab.policy import grid_search_magnitude
        prof = grid_search_magnitude(*setup[:2], [7], setup[2], include_baseline=False)
        assert len(prof.entries) == 1 and optimal_magnitude(prof) == 7

    def test_bookkeeping_and_reproducible(self, setup):
        from complab.policy import grid_search_magnitude
        cands = list(range(0, 31, 6))
        a = grid_search_magnitude(*setup[:2], cands, setup[2], prune_ratio=0.3)
        b = grid_search_magnitude(*setup[:2], cands, setup[2], prune_ratio=0.3)
        assert a == b
        assert [e.seed for e in a.entries] == [3 ^ m for m in cands]
        best = max(a.entries, key=lambda e: (e.val_accuracy, -e.magnitude))
        assert optimal_magnitude(a) == best.magnitude
        assert a.baseline_accuracy is not None

    def test_errors(self, setup):
        from complab.policy import grid_search_magnitude
        with pytest.raises(ConfigError):
            grid_search_magnitude(*setup[:2], [], setup[2])
        with pytest.raises(ConfigError):
            grid_search_magnitude(*setup[:2], [3, 3], setup[2])

