"""Fusion of per-extractor detectors: feature concatenation, score averaging,
eager majority voting, and two-stage lazy voting.

Lazy voting outputs the agreed label of the two primary detectors directly and
evaluates the third detector only on disagreement; for binary labels the
resulting label always equals an eager three-way majority vote, the two differ
only in whether the third model runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from .classifier import Prediction
from .dataset import Label
from .features import FeatureStore, FeatureVector


class FusionError(Exception):
    pass


class FusionStrategy(str, Enum):
    FEATURE_CONCAT = "feature_concat"
    SCORE_SUM = "score_sum"
    MAJORITY_EAGER = "majority_eager"
    MAJORITY_LAZY = "majority_lazy"


@dataclass(frozen=True)
class FusedOutcome:
    face_id: str
    label: Label
    strategy: FusionStrategy
    p_attack: float | None = None  # present for score-based strategies only
    third_consulted: bool = False

    def to_json_dict(self) -> dict:
        return {
            "face_id": self.face_id,
            "label": self.label.value,
            "p_attack": self.p_attack,
            "third_consulted": self.third_consulted,
            "strategy": self.strategy.value,
        }


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension z-score parameters estimated from training features."""

    extractor_id: str
    mean: np.ndarray
    scale: np.ndarray  # std with zero-variance dims pinned to 1

    @classmethod
    def fit(cls, store: FeatureStore, face_ids: Sequence[str]) -> "Standardizer":
        if not face_ids:
            raise FusionError("cannot fit a standardizer on an empty face set")
        x = store.matrix(list(face_ids))
        std = x.std(axis=0)
        return cls(
            extractor_id=store.spec.extractor_id,
            mean=x.mean(axis=0),
            scale=np.where(std > 0, std, 1.0),
        )

    def apply(self, vector: FeatureVector) -> np.ndarray:
        return (vector.values.astype(np.float64) - self.mean) / self.scale


def concat_features(
    vectors: Sequence[FeatureVector],
    standardizers: Mapping[str, Standardizer] | None = None,
) -> FeatureVector:
    """Concatenate constituents in the given order under a synthetic extractor id.

    Raw deep features and sum-to-one histograms live on incompatible scales,
    so constituents are z-scored with training statistics when standardizers
    are supplied.
    """
    if len(vectors) < 2:
        raise FusionError("feature-level fusion needs >= 2 constituent vectors")
    face_ids = {v.face_id for v in vectors}
    if len(face_ids) != 1:
        raise FusionError(f"constituent vectors disagree on face_id: {sorted(face_ids)}")
    parts = []
    for vec in vectors:
        if standardizers is not None:
            std = standardizers.get(vec.extractor_id)
            if std is None:
                raise FusionError(f"no standardizer for extractor {vec.extractor_id!r}")
            parts.append(std.apply(vec))
        else:
            parts.append(vec.values.astype(np.float64))
    return FeatureVector(
        face_id=vectors[0].face_id,
        extractor_id="+".join(v.extractor_id for v in vectors),
        values=np.concatenate(parts).astype(np.float32),
    )


def sum_scores(predictions: Sequence[Prediction]) -> Prediction:
    """Score-level sum rule, kept as the mean so the 0.5 threshold still applies."""
    if len(predictions) < 2:
        raise FusionError("score-level fusion needs >= 2 predictions")
    face_ids = {p.face_id for p in predictions}
    if len(face_ids) != 1:
        raise FusionError(f"predictions disagree on face_id: {sorted(face_ids)}")
    return Prediction(
        face_id=predictions[0].face_id,
        extractor_id="+".join(p.extractor_id for p in predictions),
        p_attack=float(np.mean([p.p_attack for p in predictions])),
    )


def majority_vote(labels: Sequence[Label]) -> Label:
    """The label held by at least 2 of exactly 3 binary voters."""
    if len(labels) != 3:
        raise FusionError(f"majority_vote takes exactly 3 labels, got {len(labels)}")
    attack_votes = sum(1 for label in labels if label is Label.ATTACK)
    return Label.ATTACK if attack_votes >= 2 else Label.BONA_FIDE


@dataclass
class DecisionTriple:
    """Two materialized primary predictions plus a deferred third detector."""

    d1: Prediction
    d2: Prediction
    d3_provider: Callable[[], Prediction]

    def __post_init__(self):
        if self.d1.face_id != self.d2.face_id:
            raise FusionError(
                f"primary predictions disagree on face_id: "
                f"{self.d1.face_id!r} vs {self.d2.face_id!r}"
            )


def lazy_vote(triple: DecisionTriple) -> FusedOutcome:
    """Two-stage vote: agreement short-circuits, disagreement consults the third.

    The third provider is not invoked at all when the primary labels agree.
    """
    if triple.d1.label is triple.d2.label:
        return FusedOutcome(
            face_id=triple.d1.face_id,
            label=triple.d1.label,
            strategy=FusionStrategy.MAJORITY_LAZY,
            third_consulted=False,
        )
    d3 = triple.d3_provider()
    if d3.face_id != triple.d1.face_id:
        raise FusionError(
            f"third prediction is for face {d3.face_id!r}, expected {triple.d1.face_id!r}"
        )
    return FusedOutcome(
        face_id=triple.d1.face_id,
        label=majority_vote([triple.d1.label, triple.d2.label, d3.label]),
        strategy=FusionStrategy.MAJORITY_LAZY,
        third_consulted=True,
    )


def eager_vote(d1: Prediction, d2: Prediction, d3: Prediction) -> FusedOutcome:
    """Plain three-way majority vote with all detectors always evaluated."""
    face_ids = {d1.face_id, d2.face_id, d3.face_id}
    if len(face_ids) != 1:
        raise FusionError(f"predictions disagree on face_id: {sorted(face_ids)}")
    return FusedOutcome(
        face_id=d1.face_id,
        label=majority_vote([d1.label, d2.label, d3.label]),
        strategy=FusionStrategy.MAJORITY_EAGER,
        third_consulted=True,
    )
