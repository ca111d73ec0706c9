"""Manifest model for paired real/wax face datasets and their evaluation protocols.

A manifest is a JSONL file, one face record per line. Records belong to pairs
(one genuine face plus its wax counterpart), carry a capture scenario, and are
assigned to train/valid/test splits. Protocols select records by scenario:
protocol I covers heterogeneous captures, II homogeneous ones, and III their
union, so protocol III counts are additive by construction.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path

from .ioutil import canonical_json


class ManifestError(Exception):
    """Raised for unreadable or internally inconsistent manifest files."""


class Label(str, Enum):
    BONA_FIDE = "bona_fide"
    ATTACK = "attack"


class Scenario(str, Enum):
    HETEROGENEOUS = "heterogeneous"
    HOMOGENEOUS = "homogeneous"


class Split(str, Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


class Protocol(str, Enum):
    I = "I"
    II = "II"
    III = "III"

    @property
    def scenarios(self) -> frozenset[Scenario]:
        if self is Protocol.I:
            return frozenset({Scenario.HETEROGENEOUS})
        if self is Protocol.II:
            return frozenset({Scenario.HOMOGENEOUS})
        return frozenset({Scenario.HETEROGENEOUS, Scenario.HOMOGENEOUS})


_REQUIRED_FIELDS = ("face_id", "pair_id", "subject_id", "image_path", "label", "scenario", "split")


@dataclass(frozen=True)
class FaceRecord:
    """One labeled face: a genuine presentation or its wax-figure counterpart."""

    face_id: str
    pair_id: str
    subject_id: str
    image_path: str
    label: Label
    scenario: Scenario
    split: Split
    crop_box: tuple[int, int, int, int] | None = None
    meta: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        d = {
            "face_id": self.face_id,
            "pair_id": self.pair_id,
            "subject_id": self.subject_id,
            "image_path": self.image_path,
            "label": self.label.value,
            "scenario": self.scenario.value,
            "split": self.split.value,
        }
        if self.crop_box is not None:
            d["crop_box"] = list(self.crop_box)
        if self.meta:
            d["meta"] = self.meta
        return d


@dataclass
class DatasetManifest:
    root_dir: Path
    records: list[FaceRecord]
    strict_pairing: bool = True

    def __len__(self) -> int:
        return len(self.records)

    def by_face_id(self) -> dict[str, FaceRecord]:
        return {r.face_id: r for r in self.records}

    def pairs(self) -> dict[str, list[FaceRecord]]:
        grouped: dict[str, list[FaceRecord]] = defaultdict(list)
        for rec in self.records:
            grouped[rec.pair_id].append(rec)
        return dict(grouped)

    def image_path_for(self, record: FaceRecord) -> Path:
        return self.root_dir / record.image_path


def _parse_record(obj: dict, line_no: int) -> FaceRecord:
    for name in _REQUIRED_FIELDS:
        if name not in obj:
            raise ManifestError(f"line {line_no}: missing required field {name!r}")
    try:
        label = Label(obj["label"])
        scenario = Scenario(obj["scenario"])
        split = Split(obj["split"])
    except ValueError as exc:
        raise ManifestError(f"line {line_no}: {exc}") from exc
    crop_box = None
    if obj.get("crop_box") is not None:
        raw = obj["crop_box"]
        if not (isinstance(raw, (list, tuple)) and len(raw) == 4):
            raise ManifestError(f"line {line_no}: crop_box must be [x, y, width, height]")
        crop_box = tuple(int(v) for v in raw)
    meta = dict(obj.get("meta") or {})
    # Unknown top-level fields ride along in meta so round-trips lose nothing.
    known = set(_REQUIRED_FIELDS) | {"crop_box", "meta"}
    for key, value in obj.items():
        if key not in known:
            meta[key] = value
    return FaceRecord(
        face_id=str(obj["face_id"]),
        pair_id=str(obj["pair_id"]),
        subject_id=str(obj["subject_id"]),
        image_path=str(obj["image_path"]),
        label=label,
        scenario=scenario,
        split=split,
        crop_box=crop_box,
        meta=meta,
    )


def load_manifest(path: str | Path, strict_pairing: bool = True) -> DatasetManifest:
    """Load a JSONL manifest. Parse problems report the offending line number."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    records: list[FaceRecord] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ManifestError(f"line {line_no}: expected a JSON object")
            rec = _parse_record(obj, line_no)
            if rec.face_id in seen:
                raise ManifestError(
                    f"duplicate face_id {rec.face_id!r} on lines {seen[rec.face_id]} and {line_no}"
                )
            seen[rec.face_id] = line_no
            records.append(rec)
    return DatasetManifest(root_dir=path.parent, records=records, strict_pairing=strict_pairing)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(canonical_json(rec.to_json_dict()) + "\n")


@dataclass
class ProtocolCounts:
    """Image (= pair), face, and subject counts for one protocol, per split and total."""

    images: dict[str, int]
    faces: dict[str, int]
    subjects: dict[str, int]

    def to_json_dict(self) -> dict:
        return {"images": self.images, "faces": self.faces, "subjects": self.subjects}


@dataclass
class Violation:
    kind: str
    where: str
    detail: str

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "where": self.where, "detail": self.detail}


@dataclass
class ValidationReport:
    counts: dict[Protocol, ProtocolCounts]
    violations: list[Violation]
    notes: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json_dict(self) -> dict:
        return {
            "counts": {p.value: c.to_json_dict() for p, c in self.counts.items()},
            "violations": [v.to_json_dict() for v in self.violations],
            "notes": self.notes,
            "ok": self.ok,
        }

    def render_text(self) -> str:
        lines = []
        header = f"{'Protocol':<10}{'split':<8}{'images':>8}{'faces':>8}{'subjects':>10}"
        lines.append(header)
        lines.append("-" * len(header))
        for proto in Protocol:
            counts = self.counts[proto]
            for split in ("train", "valid", "test", "total"):
                lines.append(
                    f"{proto.value if split == 'train' else '':<10}{split:<8}"
                    f"{counts.images[split]:>8}{counts.faces[split]:>8}{counts.subjects[split]:>10}"
                )
        if self.violations:
            lines.append("")
            lines.append(f"violations ({len(self.violations)}):")
            for v in self.violations:
                lines.append(f"  [{v.kind}] {v.where}: {v.detail}")
        else:
            lines.append("")
            lines.append("violations: none")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def _counts_for(records: list[FaceRecord]) -> ProtocolCounts:
    images = {s.value: len({r.pair_id for r in records if r.split is s}) for s in Split}
    faces = {s.value: sum(1 for r in records if r.split is s) for s in Split}
    subjects = {s.value: len({r.subject_id for r in records if r.split is s}) for s in Split}
    images["total"] = len({r.pair_id for r in records})
    faces["total"] = len(records)
    subjects["total"] = len({r.subject_id for r in records})
    return ProtocolCounts(images=images, faces=faces, subjects=subjects)


def validate(manifest: DatasetManifest) -> ValidationReport:
    """Check manifest invariants; violations are reported as data, not raised."""
    violations: list[Violation] = []
    notes: list[str] = []

    seen_ids: Counter[str] = Counter(r.face_id for r in manifest.records)
    for face_id, n in sorted(seen_ids.items()):
        if n > 1:
            violations.append(Violation("duplicate_face_id", face_id, f"appears {n} times"))

    for pair_id, members in sorted(manifest.pairs().items()):
        if manifest.strict_pairing and len(members) != 2:
            violations.append(
                Violation("pair_size", pair_id, f"expected 2 records, found {len(members)}")
            )
        labels = Counter(r.label for r in members)
        if manifest.strict_pairing and len(members) == 2 and (
            labels[Label.BONA_FIDE] != 1 or labels[Label.ATTACK] != 1
        ):
            violations.append(
                Violation(
                    "pair_label_imbalance",
                    pair_id,
                    f"{labels[Label.BONA_FIDE]} bona_fide / {labels[Label.ATTACK]} attack",
                )
            )
        if len({r.subject_id for r in members}) > 1:
            violations.append(Violation("pair_subject_mismatch", pair_id, "subjects differ"))
        if len({r.scenario for r in members}) > 1:
            violations.append(Violation("pair_scenario_mismatch", pair_id, "scenarios differ"))
        splits = {r.split for r in members}
        if len(splits) > 1:
            violations.append(
                Violation(
                    "split_overlap",
                    pair_id,
                    "pair spans splits " + ", ".join(sorted(s.value for s in splits)),
                )
            )

    # Subject disjointness across splits is informational only: the published
    # protocol tables guarantee disjoint images/pairs, not disjoint subjects.
    subj_splits: dict[str, set[Split]] = defaultdict(set)
    for rec in manifest.records:
        subj_splits[rec.subject_id].add(rec.split)
    crossing = sorted(s for s, splits in subj_splits.items() if len(splits) > 1)
    if crossing:
        notes.append(
            f"{len(crossing)} subject(s) appear in more than one split (informational)"
        )

    counts = {
        proto: _counts_for([r for r in manifest.records if r.scenario in proto.scenarios])
        for proto in Protocol
    }
    return ValidationReport(counts=counts, violations=violations, notes=notes)


def protocol_view(
    manifest: DatasetManifest, protocol: Protocol, split: Split | None = None
) -> list[FaceRecord]:
    """Records of one protocol (and optionally one split), sorted by face_id.

    Protocol III selects the union of both scenarios, so its views equal the
    concatenation of the protocol I and II views with duplicates removed.
    """
    wanted = protocol.scenarios
    out = [
        r
        for r in manifest.records
        if r.scenario in wanted and (split is None or r.split is split)
    ]
    out.sort(key=lambda r: r.face_id)
    return out


@dataclass
class DatasetStats:
    """Per-protocol distributions over the meta attributes present in the manifest."""

    per_protocol: dict[Protocol, dict[str, dict[str, Fraction]]]
    faces: dict[Protocol, int]

    def to_json_dict(self) -> dict:
        return {
            "per_protocol": {
                p.value: {
                    key: {bucket: float(frac) for bucket, frac in sorted(hist.items())}
                    for key, hist in sorted(dists.items())
                }
                for p, dists in self.per_protocol.items()
            },
            "faces": {p.value: n for p, n in self.faces.items()},
        }


_STAT_KEYS = ("gender", "ethnicity", "age", "resolution")


def _bucket(key: str, value) -> str:
    if value is None:
        return "unknown"
    if key == "age" and isinstance(value, (int, float)):
        lo = int(value) // 10 * 10
        return f"{lo}-{lo + 9}"
    return str(value)


def stats(manifest: DatasetManifest) -> DatasetStats:
    """Histograms of gender/ethnicity/age/resolution per protocol.

    Records without a given attribute land in an "unknown" bucket, so the
    fractions of every histogram sum to 1 over all faces of the protocol.
    """
    per_protocol: dict[Protocol, dict[str, dict[str, Fraction]]] = {}
    faces: dict[Protocol, int] = {}
    for proto in Protocol:
        records = [r for r in manifest.records if r.scenario in proto.scenarios]
        faces[proto] = len(records)
        dists: dict[str, dict[str, Fraction]] = {}
        for key in _STAT_KEYS:
            hist: Counter[str] = Counter(_bucket(key, r.meta.get(key)) for r in records)
            total = sum(hist.values())
            dists[key] = (
                {bucket: Fraction(n, total) for bucket, n in hist.items()} if total else {}
            )
        per_protocol[proto] = dists
    return DatasetStats(per_protocol=per_protocol, faces=faces)
