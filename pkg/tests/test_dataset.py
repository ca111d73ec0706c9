from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

import pytest

from waxpad.dataset import (
    DatasetManifest,
    Label,
    ManifestError,
    Protocol,
    Scenario,
    Split,
    load_manifest,
    protocol_view,
    save_manifest,
    stats,
    validate,
)

from conftest import make_pair, make_record


def manifest_of(records, strict=True) -> DatasetManifest:
    return DatasetManifest(root_dir=Path("."), records=records, strict_pairing=strict)


class TestLoadManifest:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        assert len(load_manifest(path).records) == 0

    def test_minimal_pair(self, tmp_path):
        path = tmp_path / "m.jsonl"
        records = make_pair(0)
        save_manifest(manifest_of(records), path)
        loaded = load_manifest(path)
        assert len(loaded.records) == 2
        assert len(loaded.pairs()) == 1
        assert loaded.records[0] == records[0]

    def test_duplicate_face_id_names_both_lines(self, tmp_path):
        rec = make_record("dup", "p0", Label.BONA_FIDE)
        path = tmp_path / "m.jsonl"
        line = json.dumps(rec.to_json_dict())
        path.write_text(line + "\n" + line + "\n", encoding="utf-8")
        with pytest.raises(ManifestError, match=r"'dup'.*lines 1 and 2"):
            load_manifest(path)

    def test_missing_field_reports_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        obj = make_record("a", "p0", Label.ATTACK).to_json_dict()
        del obj["label"]
        path.write_text(json.dumps(obj) + "\n", encoding="utf-8")
        with pytest.raises(ManifestError, match="line 1.*label"):
            load_manifest(path)

    def test_bad_json_reports_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(make_record("a", "p0", Label.ATTACK).to_json_dict()) + "\n{oops\n")
        with pytest.raises(ManifestError, match="line 2"):
            load_manifest(path)

    def test_unknown_fields_preserved_in_meta(self, tmp_path):
        obj = make_record("a", "p0", Label.ATTACK).to_json_dict()
        obj["camera"] = "dslr"
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(obj) + "\n", encoding="utf-8")
        assert load_manifest(path).records[0].meta["camera"] == "dslr"

    def test_round_trip(self, tmp_path):
        records = make_pair(0) + make_pair(1, scenario=Scenario.HOMOGENEOUS, split=Split.TEST)
        path = tmp_path / "m.jsonl"
        save_manifest(manifest_of(records), path)
        assert load_manifest(path).records == records


class TestValidate:
    def test_full_scale_counts(self, table_manifest):
        report = validate(table_manifest)
        assert report.ok
        expected = {
            Protocol.I: (1000, 2000, 462),
            Protocol.II: (1300, 2600, 409),
            Protocol.III: (2300, 4600, 745),
        }
        for proto, (images, faces, subjects) in expected.items():
            counts = report.counts[proto]
            assert counts.images["total"] == images
            assert counts.faces["total"] == faces
            assert counts.subjects["total"] == subjects
        assert report.counts[Protocol.I].images["train"] == 600
        assert report.counts[Protocol.II].images["valid"] == 260

    def test_split_overlap_violation(self):
        a, b = make_pair(0)
        b = make_record(b.face_id, b.pair_id, b.label, split=Split.TEST)
        report = validate(manifest_of([a, b]))
        kinds = {v.kind for v in report.violations}
        assert "split_overlap" in kinds
        assert any(v.where == "p00000" for v in report.violations)

    def test_pair_label_imbalance(self):
        records = [
            make_record("x1", "p0", Label.ATTACK),
            make_record("x2", "p0", Label.ATTACK),
        ]
        report = validate(manifest_of(records))
        assert any(v.kind == "pair_label_imbalance" for v in report.violations)

    def test_relaxed_mode_lifts_pairing(self):
        records = [
            make_record("x1", "p0", Label.ATTACK),
            make_record("x2", "p0", Label.ATTACK),
        ]
        report = validate(manifest_of(records, strict=False))
        assert not any(
            v.kind in ("pair_label_imbalance", "pair_size") for v in report.violations
        )

    def test_subject_split_overlap_is_note_not_violation(self):
        records = make_pair(0, split=Split.TRAIN, subject_id="s") + make_pair(
            1, split=Split.TEST, subject_id="s"
        )
        report = validate(manifest_of(records))
        assert report.ok
        assert any("subject" in note for note in report.notes)

    def test_render_text_mentions_violations(self):
        a, b = make_pair(0)
        b = make_record(b.face_id, b.pair_id, b.label, split=Split.TEST)
        text = validate(manifest_of([a, b])).render_text()
        assert "split_overlap" in text


class TestProtocolView:
    def test_full_scale_train_counts(self, table_manifest):
        assert len(protocol_view(table_manifest, Protocol.I, Split.TRAIN)) == 1200
        assert len(protocol_view(table_manifest, Protocol.III, Split.TRAIN)) == 2760  # 1380 pairs

    def test_union_additivity(self, table_manifest):
        for split in Split:
            one = {r.face_id for r in protocol_view(table_manifest, Protocol.I, split)}
            two = {r.face_id for r in protocol_view(table_manifest, Protocol.II, split)}
            both = {r.face_id for r in protocol_view(table_manifest, Protocol.III, split)}
            assert both == one | two
            assert not one & two

    def test_sorted_by_face_id(self, table_manifest):
        view = protocol_view(table_manifest, Protocol.III, Split.VALID)
        assert [r.face_id for r in view] == sorted(r.face_id for r in view)

    def test_empty_manifest(self):
        assert protocol_view(manifest_of([]), Protocol.I, Split.TRAIN) == []


class TestStats:
    def test_gender_fractions(self):
        # 6 male / 4 female over 10 faces
        records = []
        for i in range(5):
            gender = "male" if i < 3 else "female"
            pair = make_pair(i)
            for rec in pair:
                records.append(
                    make_record(
                        rec.face_id, rec.pair_id, rec.label, meta={"gender": gender}
                    )
                )
        hist = stats(manifest_of(records)).per_protocol[Protocol.I]["gender"]
        assert hist["male"] == Fraction(6, 10)
        assert hist["female"] == Fraction(4, 10)

    def test_no_meta_all_unknown(self):
        dist = stats(manifest_of(make_pair(0))).per_protocol[Protocol.I]
        for key in ("gender", "ethnicity", "age", "resolution"):
            assert dist[key] == {"unknown": Fraction(1)}

    def test_totals_match_validate(self, table_manifest):
        st = stats(table_manifest)
        report = validate(table_manifest)
        for proto in Protocol:
            assert st.faces[proto] == report.counts[proto].faces["total"]
            for hist in st.per_protocol[proto].values():
                assert sum(hist.values()) == 1

    def test_age_bucketing(self):
        rec = make_record("a", "p0", Label.ATTACK, meta={"age": 37})
        hist = stats(manifest_of([rec])).per_protocol[Protocol.I]["age"]
        assert hist == {"30-39": Fraction(1)}
