from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from waxpad.dataset import DatasetManifest, FaceRecord, Label, Scenario, Split
from waxpad.synth import SynthConfig, synth_generate


def make_record(
    face_id: str,
    pair_id: str,
    label: Label,
    scenario: Scenario = Scenario.HETEROGENEOUS,
    split: Split = Split.TRAIN,
    subject_id: str | None = None,
    meta: dict | None = None,
) -> FaceRecord:
    return FaceRecord(
        face_id=face_id,
        pair_id=pair_id,
        subject_id=subject_id or f"subj-{pair_id}",
        image_path=f"images/{face_id}.png",
        label=label,
        scenario=scenario,
        split=split,
        meta=meta or {},
    )


def make_pair(
    index: int,
    scenario: Scenario = Scenario.HETEROGENEOUS,
    split: Split = Split.TRAIN,
    subject_id: str | None = None,
) -> list[FaceRecord]:
    pair_id = f"p{index:05d}"
    return [
        make_record(f"f{index:05d}r", pair_id, Label.BONA_FIDE, scenario, split, subject_id),
        make_record(f"f{index:05d}w", pair_id, Label.ATTACK, scenario, split, subject_id),
    ]


def full_scale_manifest() -> DatasetManifest:
    """A manifest shaped like the published wax-figure corpus protocol table:

    heterogeneous: 1000 pairs (600/200/200) over 462 subjects
    homogeneous:   1300 pairs (780/260/260) over 409 subjects
    126 subjects appear in both scenarios, so the union has 745 subjects.
    """
    records: list[FaceRecord] = []

    def split_for(i: int, train: int, valid: int) -> Split:
        if i < train:
            return Split.TRAIN
        if i < train + valid:
            return Split.VALID
        return Split.TEST

    for i in range(1000):
        records.extend(
            make_pair(
                i,
                scenario=Scenario.HETEROGENEOUS,
                split=split_for(i, 600, 200),
                subject_id=f"subj-{i % 462:04d}",
            )
        )
    for i in range(1300):
        records.extend(
            make_pair(
                1000 + i,
                scenario=Scenario.HOMOGENEOUS,
                split=split_for(i, 780, 260),
                subject_id=f"subj-{336 + (i % 409):04d}",
            )
        )
    return DatasetManifest(root_dir=Path("."), records=records, strict_pairing=True)


@pytest.fixture(scope="session")
def table_manifest() -> DatasetManifest:
    return full_scale_manifest()


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> DatasetManifest:
    """A 50-pair synthetic corpus shared by the slower integration tests
    (test split: 10 pairs = 20 faces)."""
    out = tmp_path_factory.mktemp("corpus")
    return synth_generate(SynthConfig(n_pairs=50), seed=7, out_dir=out)


def write_png(path: Path, array: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(array, dtype=np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(path, format="PNG")
    return path
