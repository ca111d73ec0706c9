"""ISO/IEC 30107-3 style PAD metrics, ROC/EER, and failure-overlap analysis.

Rates are held as exact rationals internally and formatted to two decimals
only at render time, so ACER == (APCER + BPCER) / 2 holds as an identity
rather than up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Label


class MetricsError(Exception):
    pass


def percent(rate: Fraction | float | None, digits: int = 2) -> str:
    """Render a rate as a percentage string, e.g. Fraction(24, 200) -> '12.00'."""
    if rate is None:
        return "/"
    return f"{float(rate) * 100:.{digits}f}"


@dataclass(frozen=True)
class ConfusionCounts:
    attack_total: int
    attack_errors: int  # attacks classified bona fide
    bona_total: int
    bona_errors: int  # bona fide classified attack

    def __post_init__(self):
        for name in ("attack_total", "attack_errors", "bona_total", "bona_errors"):
            if getattr(self, name) < 0:
                raise MetricsError(f"{name} must be non-negative")
        if self.attack_errors > self.attack_total or self.bona_errors > self.bona_total:
            raise MetricsError("error counts cannot exceed their totals")

    def to_json_dict(self) -> dict:
        return {
            "attack_total": self.attack_total,
            "attack_errors": self.attack_errors,
            "bona_total": self.bona_total,
            "bona_errors": self.bona_errors,
        }


@dataclass
class PadReport:
    """APCER/BPCER/ACER with their underlying counts; rates are exact Fractions.

    A missing class (zero total) leaves the corresponding rate as None and
    marks the report partial.
    """

    counts: ConfusionCounts
    apcer: Fraction | None
    bpcer: Fraction | None
    acer: Fraction | None
    strategy: str = ""
    config: dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return self.apcer is None or self.bpcer is None

    def to_json_dict(self) -> dict:
        return {
            "counts": self.counts.to_json_dict(),
            "apcer": None if self.apcer is None else float(self.apcer),
            "bpcer": None if self.bpcer is None else float(self.bpcer),
            "acer": None if self.acer is None else float(self.acer),
            "apcer_pct": percent(self.apcer),
            "bpcer_pct": percent(self.bpcer),
            "acer_pct": percent(self.acer),
            "partial": self.partial,
            "strategy": self.strategy,
            "config": self.config,
        }


def confusion(decisions: Iterable[tuple[Label, Label]]) -> ConfusionCounts:
    """Exact error counts from (decided label, true label) pairs."""
    attack_total = attack_errors = bona_total = bona_errors = 0
    for decided, truth in decisions:
        if truth is Label.ATTACK:
            attack_total += 1
            if decided is Label.BONA_FIDE:
                attack_errors += 1
        else:
            bona_total += 1
            if decided is Label.ATTACK:
                bona_errors += 1
    return ConfusionCounts(attack_total, attack_errors, bona_total, bona_errors)


def pad_rates(counts: ConfusionCounts, strategy: str = "", config: dict | None = None) -> PadReport:
    """APCER/BPCER as exact fractions and ACER as their exact mean."""
    if counts.attack_total == 0 or counts.bona_total == 0:
        raise MetricsError("pad_rates requires presentations of both classes")
    apcer = Fraction(counts.attack_errors, counts.attack_total)
    bpcer = Fraction(counts.bona_errors, counts.bona_total)
    return PadReport(
        counts=counts,
        apcer=apcer,
        bpcer=bpcer,
        acer=(apcer + bpcer) / 2,
        strategy=strategy,
        config=dict(config or {}),
    )


def try_pad_rates(counts: ConfusionCounts, strategy: str = "", config: dict | None = None) -> PadReport:
    """Like pad_rates, but a missing class yields a partial report instead of an error."""
    apcer = Fraction(counts.attack_errors, counts.attack_total) if counts.attack_total else None
    bpcer = Fraction(counts.bona_errors, counts.bona_total) if counts.bona_total else None
    acer = (apcer + bpcer) / 2 if apcer is not None and bpcer is not None else None
    return PadReport(
        counts=counts, apcer=apcer, bpcer=bpcer, acer=acer,
        strategy=strategy, config=dict(config or {}),
    )


@dataclass
class RocCurve:
    """APCER/BPCER under the rule "attack iff p_attack > threshold".

    Thresholds ascend, so apcer is non-decreasing and bpcer non-increasing
    along the sweep; eer is the linearly interpolated crossing value.
    """

    thresholds: np.ndarray
    apcer: np.ndarray
    bpcer: np.ndarray
    eer: float

    def to_json_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.tolist(),
            "apcer": self.apcer.tolist(),
            "bpcer": self.bpcer.tolist(),
            "eer": self.eer,
            "eer_pct": percent(self.eer),
        }


def roc_eer(scores: Iterable[tuple[float, Label]]) -> RocCurve:
    """Sweep every distinct score as a threshold and interpolate the EER.

    Scores equal to the threshold count as bona fide (strict ">" decision
    rule, matching the classifier's tie handling).
    """
    pairs = list(scores)
    attacks = np.sort(np.array([s for s, t in pairs if t is Label.ATTACK], dtype=np.float64))
    bonas = np.sort(np.array([s for s, t in pairs if t is not Label.ATTACK], dtype=np.float64))
    if attacks.size == 0 or bonas.size == 0:
        raise MetricsError("roc_eer requires scores from both classes")

    distinct = np.unique(np.concatenate([attacks, bonas]))
    # A leading anchor below every score pins the (apcer=0, bpcer=1) endpoint.
    thresholds = np.concatenate([[distinct[0] - 1.0], distinct])
    apcer = np.searchsorted(attacks, thresholds, side="right") / attacks.size
    bpcer = (bonas.size - np.searchsorted(bonas, thresholds, side="right")) / bonas.size

    gap = apcer - bpcer  # runs from -1 up to +1 along the sweep
    cross = int(np.argmax(gap >= 0))
    if gap[cross] == 0:
        eer = float(apcer[cross])
    else:
        lam = -gap[cross - 1] / (gap[cross] - gap[cross - 1])
        eer = float(apcer[cross - 1] + lam * (apcer[cross] - apcer[cross - 1]))
    return RocCurve(thresholds=thresholds, apcer=apcer, bpcer=bpcer, eer=eer)


def iapmr(trials: Sequence[bool]) -> Fraction:
    """Fraction of impostor attack presentations that the matcher accepted."""
    trials = list(trials)
    if not trials:
        raise MetricsError("iapmr requires at least one trial")
    return Fraction(sum(1 for t in trials if t), len(trials))


_REGIONS = ("a", "b", "c", "ab", "ac", "bc", "abc")


@dataclass
class OverlapRegion:
    face_ids: list[str]
    attack_as_real: int  # wax faces mistaken for real
    real_as_attack: int  # real faces mistaken for wax

    @property
    def count(self) -> int:
        return len(self.face_ids)

    def to_json_dict(self) -> dict:
        return {
            "count": self.count,
            "face_ids": self.face_ids,
            "attack_as_real": self.attack_as_real,
            "real_as_attack": self.real_as_attack,
        }


@dataclass
class FailureOverlap:
    """Exclusive Venn regions of the three per-feature failure sets."""

    regions: dict[str, OverlapRegion]

    @property
    def union_size(self) -> int:
        return sum(r.count for r in self.regions.values())

    def to_json_dict(self) -> dict:
        return {name: region.to_json_dict() for name, region in self.regions.items()}


def failure_overlap(
    decisions: Sequence[Mapping[str, Label]],
    truths: Mapping[str, Label],
) -> FailureOverlap:
    """Venn decomposition of failures for exactly three aligned decision maps.

    Each exclusive region also splits its failures by ground truth: wax faces
    mistaken for real versus real faces mistaken for wax.
    """
    if len(decisions) != 3:
        raise MetricsError("failure_overlap expects exactly three decision lists")
    truth_ids = set(truths)
    for i, dec in enumerate(decisions):
        if set(dec) != truth_ids:
            raise MetricsError(f"decision list {i} is not aligned with the truth set")

    sets = [
        {fid for fid, label in dec.items() if label is not truths[fid]} for dec in decisions
    ]
    a, b, c = sets
    exclusive = {
        "a": a - b - c,
        "b": b - a - c,
        "c": c - a - b,
        "ab": (a & b) - c,
        "ac": (a & c) - b,
        "bc": (b & c) - a,
        "abc": a & b & c,
    }
    regions = {}
    for name in _REGIONS:
        ids = sorted(exclusive[name])
        attack_as_real = sum(1 for fid in ids if truths[fid] is Label.ATTACK)
        regions[name] = OverlapRegion(
            face_ids=ids,
            attack_as_real=attack_as_real,
            real_as_attack=len(ids) - attack_as_real,
        )
    return FailureOverlap(regions=regions)
