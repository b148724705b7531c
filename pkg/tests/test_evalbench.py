"""EER, accuracy, compression reporting, timing, report serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttrnn.errors import EmptyScores, LengthMismatch, ZeroCount, ZeroReps
from ttrnn.evalbench import (
    ScoreSet,
    accuracy,
    compression_ratio,
    eer,
    eer_bruteforce,
    eer_grid_sweep,
    emit_report,
    parse_report,
    read_score_csv,
    time_step,
)


class TestEER:
    def test_perfectly_separated(self):
        s = ScoreSet([0.8, 0.7, 0.6], [0.5, 0.4, 0.3])
        assert eer(s) == 0.0

    def test_interleaved_half(self):
        assert eer(ScoreSet([0.9, 0.2], [0.8, 0.1])) == pytest.approx(0.5)

    def test_identical_distributions(self):
        s = ScoreSet([0.1, 0.5, 0.9], [0.1, 0.5, 0.9])
        assert eer(s) == pytest.approx(0.5, abs=1e-9)

    def test_empty_scores(self):
        with pytest.raises(EmptyScores):
            eer(ScoreSet([], [0.5]))

    def test_matches_bruteforce_1000_random_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            np_, nn = rng.integers(2, 30, size=2)
            sep = rng.uniform(0.0, 2.0)
            pos = rng.standard_normal(np_) + sep
            neg = rng.standard_normal(nn)
            s = ScoreSet(pos, neg)
            assert eer(s) == pytest.approx(eer_bruteforce(s), abs=1e-9)

    def test_near_grid_sweep(self):
        # the min-gap grid average converges to the interpolated
        # crossing at rate O(1/n); compare at the rate quantum
        rng = np.random.default_rng(1)
        for _ in range(50):
            s = ScoreSet(rng.standard_normal(200) + 1.0, rng.standard_normal(200))
            tol = 0.5 * (1 / 200 + 1 / 200) + 1e-4
            assert eer(s) == pytest.approx(eer_grid_sweep(s), abs=tol)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_invariant_under_monotone_transform(self, seed):
        rng = np.random.default_rng(seed)
        pos = rng.standard_normal(10) + 0.5
        neg = rng.standard_normal(12)
        base = eer(ScoreSet(pos, neg))
        warped = eer(ScoreSet(np.tanh(pos) * 3 + 1, np.tanh(neg) * 3 + 1))
        assert warped == pytest.approx(base, abs=1e-9)

    def test_adding_ordered_pair_never_hurts(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            pos = rng.standard_normal(10) + 0.5
            neg = rng.standard_normal(10)
            base = eer(ScoreSet(pos, neg))
            pos2 = np.append(pos, max(pos.max(), neg.max()) + 1.0)
            neg2 = np.append(neg, min(pos.min(), neg.min()) - 1.0)
            assert eer(ScoreSet(pos2, neg2)) <= base + 1e-12


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_all_wrong(self):
        assert accuracy([1, 2, 3], [0, 0, 0]) == 0.0

    def test_three_of_four(self):
        assert accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            accuracy([1, 2], [1, 2, 3])


class TestCompression:
    def test_paper_ratios(self):
        assert compression_ratio(266_762, 3_434).ratio_rounded == 78
        assert compression_ratio(266_762, 5_834).ratio_rounded == 46

    def test_equal_counts(self):
        assert compression_ratio(10, 10).ratio == 1.0

    def test_zero_count(self):
        with pytest.raises(ZeroCount):
            compression_ratio(0, 5)


class TestTiming:
    def test_zero_reps(self):
        with pytest.raises(ZeroReps):
            time_step(lambda: None, reps=0)

    def test_basic_stats(self):
        r = time_step(lambda: sum(range(100)), reps=5, warmup=1, label="t")
        assert r.mean_s > 0
        assert r.std_s >= 0
        assert r.reps == 5


class TestReports:
    def test_empty_json(self):
        assert parse_report(emit_report([], "json"), "json") == []

    def test_one_row_csv(self):
        text = emit_report([{"a": 1, "b": 2}], "csv")
        lines = text.strip().split("\n")
        assert lines[0] == "a,b"
        assert lines[1] == "1,2"

    def test_json_round_trip(self):
        rows = [{"model": "x", "mean_s": 0.5, "reps": 3}]
        assert parse_report(emit_report(rows, "json"), "json") == rows

    def test_score_csv(self):
        s = read_score_csv("label,score\npos,0.9\nneg,0.2\npos,0.7\n")
        assert np.array_equal(s.positive_scores, [0.9, 0.7])
        assert np.array_equal(s.negative_scores, [0.2])
