from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waxpad.dataset import Label
from waxpad.metrics import (
    ConfusionCounts,
    MetricsError,
    confusion,
    failure_overlap,
    iapmr,
    pad_rates,
    percent,
    roc_eer,
    try_pad_rates,
)

B, A = Label.BONA_FIDE, Label.ATTACK


def grid_eer(scores: list[tuple[float, Label]], points: int = 10_000) -> float:
    """Independent oracle: dense threshold grid, EER at the |apcer-bpcer| minimum."""
    attacks = np.array([s for s, t in scores if t is A])
    bonas = np.array([s for s, t in scores if t is B])
    lo = min(attacks.min(), bonas.min()) - 1e-6
    hi = max(attacks.max(), bonas.max()) + 1e-6
    grid = np.linspace(lo, hi, points)
    apcer = (attacks[:, None] <= grid[None, :]).mean(axis=0)
    bpcer = (bonas[:, None] > grid[None, :]).mean(axis=0)
    best = np.argmin(np.abs(apcer - bpcer))
    return float((apcer[best] + bpcer[best]) / 2)


class TestConfusion:
    def test_counting(self):
        decisions = [(B, A)] * 2 + [(A, A)] * 8 + [(B, B)] * 5
        counts = confusion(decisions)
        assert counts.attack_total == 10
        assert counts.attack_errors == 2
        assert counts.bona_total == 5
        assert counts.bona_errors == 0

    def test_all_correct(self):
        counts = confusion([(A, A), (B, B)])
        assert counts.attack_errors == 0 and counts.bona_errors == 0

    def test_empty_attack_set_flagged_partial(self):
        counts = confusion([(B, B), (A, B)])
        report = try_pad_rates(counts)
        assert report.partial
        assert report.apcer is None
        assert report.bpcer == Fraction(1, 2)

    def test_invalid_counts_rejected(self):
        with pytest.raises(MetricsError):
            ConfusionCounts(2, 3, 1, 0)


class TestPadRates:
    def test_published_protocol_one_operating_point(self):
        # 200-pair test set: 24 attack errors, 21 bona fide errors.
        report = pad_rates(ConfusionCounts(200, 24, 200, 21))
        assert report.apcer == Fraction(24, 200)
        assert report.bpcer == Fraction(21, 200)
        assert report.acer == Fraction(45, 400)
        assert percent(report.apcer) == "12.00"
        assert percent(report.bpcer) == "10.50"
        assert percent(report.acer) == "11.25"

    def test_zero_errors(self):
        report = pad_rates(ConfusionCounts(10, 0, 10, 0))
        assert report.apcer == report.bpcer == report.acer == 0

    def test_all_wrong(self):
        report = pad_rates(ConfusionCounts(10, 10, 10, 10))
        assert report.apcer == report.bpcer == report.acer == 1

    def test_zero_totals_rejected(self):
        with pytest.raises(MetricsError):
            pad_rates(ConfusionCounts(0, 0, 10, 1))

    @given(
        at=st.integers(1, 10_000),
        bt=st.integers(1, 10_000),
        data=st.data(),
    )
    @settings(max_examples=200, deadline=None)
    def test_acer_identity_exact(self, at, bt, data):
        ae = data.draw(st.integers(0, at))
        be = data.draw(st.integers(0, bt))
        report = pad_rates(ConfusionCounts(at, ae, bt, be))
        assert report.acer == (report.apcer + report.bpcer) / 2


class TestRocEer:
    def test_perfect_separation(self):
        scores = [(0.1, B), (0.2, B), (0.8, A), (0.9, A)]
        assert roc_eer(scores).eer == 0.0

    def test_indistinguishable(self):
        scores = [(0.5, B), (0.5, B), (0.5, A), (0.5, A)]
        assert roc_eer(scores).eer == pytest.approx(0.5)

    def test_monotone_curves(self):
        rng = np.random.default_rng(0)
        scores = [(float(s), A if i % 2 else B) for i, s in enumerate(rng.uniform(0, 1, 60))]
        curve = roc_eer(scores)
        assert (np.diff(curve.apcer) >= 0).all()
        assert (np.diff(curve.bpcer) <= 0).all()

    def test_against_grid_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(10):
            n = int(rng.integers(10, 60))
            scores = [
                (float(rng.uniform()), A if rng.uniform() < 0.5 else B) for _ in range(n)
            ]
            truths = {t for _, t in scores}
            if len(truths) < 2:
                scores.append((0.5, A if B in truths else B))
            n_att = sum(1 for _, t in scores if t is A)
            n_bon = len(scores) - n_att
            tolerance = 1 / (2 * min(n_att, n_bon))
            assert abs(roc_eer(scores).eer - grid_eer(scores)) <= tolerance

    def test_single_class_rejected(self):
        with pytest.raises(MetricsError):
            roc_eer([(0.3, A), (0.4, A)])

    def test_eer_in_unit_interval(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            scores = [(float(rng.normal()), A) for _ in range(7)] + [
                (float(rng.normal()), B) for _ in range(5)
            ]
            assert 0.0 <= roc_eer(scores).eer <= 1.0


class TestIapmr:
    def test_three_of_four(self):
        assert iapmr([True, True, True, False]) == Fraction(3, 4)

    def test_published_fraction(self):
        trials = [True] * 9526 + [False] * 474
        value = iapmr(trials)
        assert value == Fraction(9526, 10_000)
        assert percent(value) == "95.26"

    def test_none_matched(self):
        assert iapmr([False, False]) == 0

    def test_empty_rejected(self):
        with pytest.raises(MetricsError):
            iapmr([])


class TestFailureOverlap:
    def build(self, errors_a, errors_b, errors_c, face_ids, truths=None):
        truths = truths or {fid: A if i % 2 else B for i, fid in enumerate(face_ids)}
        decisions = []
        for errs in (errors_a, errors_b, errors_c):
            decisions.append(
                {
                    fid: (
                        (B if truths[fid] is A else A) if fid in errs else truths[fid]
                    )
                    for fid in face_ids
                }
            )
        return decisions, truths

    def test_identical_error_sets_concentrate_in_triple(self):
        face_ids = [f"f{i:03d}" for i in range(100)]
        errs = set(face_ids[:33])
        decisions, truths = self.build(errs, errs, errs, face_ids)
        overlap = failure_overlap(decisions, truths)
        assert overlap.regions["abc"].count == 33
        for name in ("a", "b", "c", "ab", "ac", "bc"):
            assert overlap.regions[name].count == 0

    def test_disjoint_sets(self):
        face_ids = [f"f{i:03d}" for i in range(30)]
        decisions, truths = self.build(
            set(face_ids[:5]), set(face_ids[5:10]), set(face_ids[10:15]), face_ids
        )
        overlap = failure_overlap(decisions, truths)
        assert overlap.regions["a"].count == 5
        assert overlap.regions["ab"].count == 0
        assert overlap.regions["abc"].count == 0

    def test_matches_set_algebra_oracle(self):
        rng = np.random.default_rng(3)
        face_ids = [f"f{i:03d}" for i in range(50)]
        for _ in range(10):
            sets = [set(rng.choice(face_ids, size=rng.integers(0, 25), replace=False))
                    for _ in range(3)]
            decisions, truths = self.build(*sets, face_ids)
            overlap = failure_overlap(decisions, truths)
            a, b, c = sets
            assert set(overlap.regions["a"].face_ids) == a - b - c
            assert set(overlap.regions["ab"].face_ids) == (a & b) - c
            assert set(overlap.regions["abc"].face_ids) == a & b & c
            assert overlap.union_size == len(a | b | c)

    def test_truth_split(self):
        face_ids = ["x", "y"]
        truths = {"x": A, "y": B}
        decisions, _ = self.build({"x", "y"}, set(), set(), face_ids, truths)
        overlap = failure_overlap(decisions, truths)
        assert overlap.regions["a"].attack_as_real == 1
        assert overlap.regions["a"].real_as_attack == 1

    def test_misaligned_rejected(self):
        decisions = [{"x": A}, {"x": A}, {"y": A}]
        with pytest.raises(MetricsError, match="aligned"):
            failure_overlap(decisions, {"x": A})
