"""Face-recognition vulnerability harness: match wax probes against the paired
real references with a generic embedding matcher and report IAPMR next to the
genuine (real-to-real) match rate.

No concrete recognition system is embedded; any FeatureStore can serve as the
embedding source. Thresholds published for well-known systems are shipped as
documented presets, not defaults.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from .dataset import DatasetManifest, Label, Protocol, Scenario, protocol_view
from .features import FeatureStore, FeatureVector
from .metrics import iapmr, percent


class FrsError(Exception):
    pass


class MatcherMetric(str, Enum):
    COSINE_SIMILARITY = "cosine_similarity"
    SQUARED_L2_DISTANCE = "squared_l2_distance"


@dataclass(frozen=True)
class MatcherSpec:
    """Match polarity follows the metric: similarity >= threshold,
    distance <= threshold."""

    metric: MatcherMetric
    threshold: float

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise FrsError("matcher threshold must be finite")

    def accepts(self, score: float) -> bool:
        if self.metric is MatcherMetric.COSINE_SIMILARITY:
            return score >= self.threshold
        return score <= self.threshold

    def to_json_dict(self) -> dict:
        return {"metric": self.metric.value, "threshold": self.threshold}


# Operating points published for specific recognition systems, for users who
# plug in embeddings living on those score scales. The squared-L2 preset maps
# onto MatcherSpec directly; the proprietary match-score one is documentation.
PRESET_THRESHOLDS = {
    "openface": {"metric": "squared_l2_distance", "threshold": 0.99},
    "verilook": {"metric": "proprietary_match_score", "threshold": 36.0},
}


class TrialKind(str, Enum):
    IMPOSTOR_ATTACK = "impostor_attack"  # wax probe vs paired real reference
    GENUINE = "genuine"  # two real faces of the same subject


@dataclass(frozen=True)
class MatchTrial:
    probe_face_id: str
    reference_face_id: str
    subject_id: str
    kind: TrialKind
    scenario: Scenario
    score: float
    self_match: bool = False  # genuine trial degenerated to probe == reference


def match_score(a: FeatureVector, b: FeatureVector, metric: MatcherMetric) -> float:
    if a.dim != b.dim:
        raise FrsError(f"embedding dims differ: {a.dim} vs {b.dim}")
    va = a.values.astype(np.float64)
    vb = b.values.astype(np.float64)
    if metric is MatcherMetric.SQUARED_L2_DISTANCE:
        diff = va - vb
        return float(diff @ diff)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise FrsError("cosine similarity is undefined for a zero vector")
    return float(va @ vb / (na * nb))


def build_trials(
    manifest: DatasetManifest,
    store: FeatureStore,
    protocol: Protocol,
    metric: MatcherMetric = MatcherMetric.COSINE_SIMILARITY,
) -> list[MatchTrial]:
    """One impostor trial per pair plus genuine trials where subjects have at
    least two distinct real faces; deterministic order, all trials scored."""
    records = protocol_view(manifest, protocol)
    for rec in records:
        if store.get(rec.face_id) is None:
            raise FrsError(f"missing embedding for face {rec.face_id!r}")

    trials: list[MatchTrial] = []
    pairs: dict[str, dict[Label, list]] = {}
    for rec in records:
        pairs.setdefault(rec.pair_id, {}).setdefault(rec.label, []).append(rec)

    for pair_id in sorted(pairs):
        members = pairs[pair_id]
        reals = members.get(Label.BONA_FIDE, [])
        waxes = members.get(Label.ATTACK, [])
        if len(reals) != 1 or len(waxes) != 1:
            continue  # impostor trials are defined only for strict pairs
        probe, reference = waxes[0], reals[0]
        trials.append(
            MatchTrial(
                probe_face_id=probe.face_id,
                reference_face_id=reference.face_id,
                subject_id=reference.subject_id,
                kind=TrialKind.IMPOSTOR_ATTACK,
                scenario=reference.scenario,
                score=match_score(
                    store.require(probe.face_id), store.require(reference.face_id), metric
                ),
            )
        )

    by_subject: dict[str, list] = {}
    for rec in records:
        if rec.label is Label.BONA_FIDE:
            by_subject.setdefault(rec.subject_id, []).append(rec)
    for subject_id in sorted(by_subject):
        reals = sorted(by_subject[subject_id], key=lambda r: r.face_id)
        if len(reals) < 2:
            # A lone real face gives a flagged self-match; reports skip these.
            rec = reals[0]
            trials.append(
                MatchTrial(
                    probe_face_id=rec.face_id,
                    reference_face_id=rec.face_id,
                    subject_id=subject_id,
                    kind=TrialKind.GENUINE,
                    scenario=rec.scenario,
                    score=match_score(
                        store.require(rec.face_id), store.require(rec.face_id), metric
                    ),
                    self_match=True,
                )
            )
            continue
        for first, second in zip(reals, reals[1:]):
            trials.append(
                MatchTrial(
                    probe_face_id=second.face_id,
                    reference_face_id=first.face_id,
                    subject_id=subject_id,
                    kind=TrialKind.GENUINE,
                    scenario=first.scenario,
                    score=match_score(
                        store.require(second.face_id), store.require(first.face_id), metric
                    ),
                )
            )
    return trials


@dataclass
class VulnReport:
    matcher: MatcherSpec
    iapmr: Fraction
    genuine_match_rate: Fraction | None  # None when no genuine trials exist
    impostor_trials: int
    genuine_trials: int
    per_protocol: dict[str, dict]

    def to_json_dict(self) -> dict:
        return {
            "matcher": self.matcher.to_json_dict(),
            "iapmr": float(self.iapmr),
            "iapmr_pct": percent(self.iapmr),
            "genuine_match_rate": (
                None if self.genuine_match_rate is None else float(self.genuine_match_rate)
            ),
            "genuine_match_rate_pct": percent(self.genuine_match_rate),
            "impostor_trials": self.impostor_trials,
            "genuine_trials": self.genuine_trials,
            "per_protocol": self.per_protocol,
        }

    def render_text(self) -> str:
        lines = [f"matcher: {self.matcher.metric.value} @ {self.matcher.threshold}"]
        header = f"{'Protocol':<10}{'IAPMR':>10}{'genuine':>10}{'#imp':>7}{'#gen':>7}"
        lines.append(header)
        lines.append("-" * len(header))
        for name, row in self.per_protocol.items():
            lines.append(
                f"{name:<10}{percent(row['iapmr']) + '%':>10}"
                f"{(percent(row['genuine_match_rate']) + '%') if row['genuine_match_rate'] is not None else '/':>10}"
                f"{row['impostor_trials']:>7}{row['genuine_trials']:>7}"
            )
        return "\n".join(lines)


def _rates_for(trials: list[MatchTrial], matcher: MatcherSpec) -> dict:
    impostors = [t for t in trials if t.kind is TrialKind.IMPOSTOR_ATTACK]
    genuines = [t for t in trials if t.kind is TrialKind.GENUINE and not t.self_match]
    row = {
        "impostor_trials": len(impostors),
        "genuine_trials": len(genuines),
        "iapmr": None,
        "genuine_match_rate": None,
    }
    if impostors:
        row["iapmr"] = float(iapmr([matcher.accepts(t.score) for t in impostors]))
    if genuines:
        row["genuine_match_rate"] = float(iapmr([matcher.accepts(t.score) for t in genuines]))
    return row


def vuln_report(trials: list[MatchTrial], matcher: MatcherSpec) -> VulnReport:
    impostors = [t for t in trials if t.kind is TrialKind.IMPOSTOR_ATTACK]
    if not impostors:
        raise FrsError("vulnerability report requires at least one impostor trial")
    genuines = [t for t in trials if t.kind is TrialKind.GENUINE and not t.self_match]

    per_protocol = {}
    for proto in Protocol:
        subset = [t for t in trials if t.scenario in proto.scenarios]
        per_protocol[proto.value] = _rates_for(subset, matcher)

    return VulnReport(
        matcher=matcher,
        iapmr=iapmr([matcher.accepts(t.score) for t in impostors]),
        genuine_match_rate=(
            iapmr([matcher.accepts(t.score) for t in genuines]) if genuines else None
        ),
        impostor_trials=len(impostors),
        genuine_trials=len(genuines),
        per_protocol=per_protocol,
    )
