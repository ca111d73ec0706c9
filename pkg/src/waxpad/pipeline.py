"""End-to-end pipeline: ingest manifest, extract features, train heads,
apply fusion strategies, and evaluate every (strategy, protocol) cell.

All randomness flows from one root seed split per stage by fixed labels, and
reports are canonical JSON, so identical inputs reproduce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import classifier, fusion, metrics
from .dataset import (
    DatasetManifest,
    Label,
    Protocol,
    Split,
    load_manifest,
    protocol_view,
    validate,
)
from .features import EmbeddingSpec, FeatureStore, run_provider, save_store
from .imaging import CropBox, crop, decode, encode_png
from .ioutil import atomic_write_text, canonical_json, derive_seed

log = logging.getLogger("waxpad.pipeline")

ROLES = ("deep_a", "deep_b", "texture")
SCORE_STRATEGIES = ("feature_concat", "score_sum")
VOTE_STRATEGIES = ("majority_eager", "majority_lazy")


class PipelineError(Exception):
    pass


class PipelineValidationError(PipelineError):
    """Raised when inputs fail validation before any work is done."""


def default_strategies(roles: tuple[str, ...] = ROLES) -> list[str]:
    return [f"single:{role}" for role in roles] + list(SCORE_STRATEGIES) + list(VOTE_STRATEGIES)


@dataclass
class PipelineConfig:
    manifest_path: Path
    out_dir: Path
    seed: int
    extractors: dict[str, EmbeddingSpec]  # keyed by role
    strategies: list[str] = field(default_factory=default_strategies)
    protocols: list[Protocol] = field(default_factory=lambda: list(Protocol))
    train: dict = field(default_factory=dict)  # TrainConfig overrides (seed derived)

    def __post_init__(self):
        self.manifest_path = Path(self.manifest_path)
        self.out_dir = Path(self.out_dir)
        unknown = set(self.extractors) - set(ROLES)
        if unknown:
            raise PipelineValidationError(f"unknown extractor roles: {sorted(unknown)}")
        for strategy in self.strategies:
            self._check_strategy(strategy)
        if len({spec.extractor_id for spec in self.extractors.values()}) != len(self.extractors):
            raise PipelineValidationError("extractor_id must be unique across roles")

    def _check_strategy(self, strategy: str) -> None:
        roles = set(self.extractors)
        if strategy.startswith("single:"):
            role = strategy.split(":", 1)[1]
            if role not in roles:
                raise PipelineValidationError(
                    f"strategy {strategy!r} needs extractor role {role!r}"
                )
            return
        if strategy in SCORE_STRATEGIES:
            if len(roles) < 2:
                raise PipelineValidationError(f"strategy {strategy!r} needs >= 2 extractors")
            return
        if strategy in VOTE_STRATEGIES:
            missing = set(ROLES) - roles
            if missing:
                raise PipelineValidationError(
                    f"strategy {strategy!r} needs roles {sorted(missing)} to be configured"
                )
            return
        raise PipelineValidationError(f"unknown strategy {strategy!r}")

    def to_json_dict(self) -> dict:
        return {
            "manifest": str(self.manifest_path),
            "out_dir": str(self.out_dir),
            "seed": self.seed,
            "extractors": {role: spec.to_json_dict() for role, spec in self.extractors.items()},
            "strategies": list(self.strategies),
            "protocols": [p.value for p in self.protocols],
            "train": dict(self.train),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "PipelineConfig":
        try:
            return cls(
                manifest_path=Path(obj["manifest"]),
                out_dir=Path(obj["out_dir"]),
                seed=int(obj["seed"]),
                extractors={
                    role: EmbeddingSpec.from_json_dict(spec)
                    for role, spec in obj["extractors"].items()
                },
                strategies=list(obj.get("strategies") or default_strategies()),
                protocols=[Protocol(p) for p in obj.get("protocols", ["I", "II", "III"])],
                train=dict(obj.get("train") or {}),
            )
        except KeyError as exc:
            raise PipelineValidationError(f"pipeline config missing key {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise PipelineValidationError(f"cannot read pipeline config {path}: {exc}") from exc
        return cls.from_json_dict(obj)


@dataclass
class StrategyReport:
    protocol: Protocol
    strategy: str
    pad: metrics.PadReport
    eer: float | None
    third_consulted: int | None
    split_sizes: dict[str, int]
    extractor_ids: dict[str, str]

    def to_json_dict(self) -> dict:
        doc = {
            "protocol": self.protocol.value,
            "strategy": self.strategy,
            "eer": self.eer,
            "eer_pct": metrics.percent(self.eer),
            "third_consulted": self.third_consulted,
            "split_sizes": self.split_sizes,
            "extractor_ids": self.extractor_ids,
        }
        doc.update(self.pad.to_json_dict())
        return doc


@dataclass
class PipelineResult:
    reports: list[StrategyReport]
    out_dir: Path

    def report(self, protocol: Protocol, strategy: str) -> StrategyReport:
        for rep in self.reports:
            if rep.protocol is protocol and rep.strategy == strategy:
                return rep
        raise KeyError(f"no report for ({protocol.value}, {strategy})")


def _labels_of(records) -> dict[str, Label]:
    return {r.face_id: r.label for r in records}


def _materialize_crops(manifest: DatasetManifest, out_dir: Path) -> list[tuple[str, Path]]:
    """Face list for providers; crop-boxed faces are pre-cropped to PNG files."""
    faces = []
    crop_dir = out_dir / "crops"
    for rec in sorted(manifest.records, key=lambda r: r.face_id):
        src = manifest.image_path_for(rec)
        if rec.crop_box is None:
            faces.append((rec.face_id, src))
            continue
        x, y, w, h = rec.crop_box
        target = crop_dir / f"{rec.face_id}.png"
        if not target.exists():
            cropped = crop(decode(src), CropBox(x, y, w, h))
            encode_png(cropped, target)
        faces.append((rec.face_id, target))
    return faces


def _standardized_store(
    raw: FeatureStore, standardizer: fusion.Standardizer, face_ids: list[str]
) -> FeatureStore:
    store = FeatureStore(spec=raw.spec)
    for fid in face_ids:
        store.add(fid, standardizer.apply(raw.require(fid)))
    return store


def _concat_store(
    raw_stores: dict[str, FeatureStore],
    standardizers: dict[str, fusion.Standardizer],
    roles: list[str],
    face_ids: list[str],
) -> FeatureStore:
    ids = [raw_stores[role].spec.extractor_id for role in roles]
    spec = EmbeddingSpec(
        extractor_id="+".join(ids),
        dim=sum(raw_stores[role].spec.dim for role in roles),
        input_size=0,
        source=raw_stores[roles[0]].spec.source,
    )
    store = FeatureStore(spec=spec)
    for fid in face_ids:
        vec = fusion.concat_features(
            [raw_stores[role].require(fid) for role in roles], standardizers
        )
        store.add(fid, vec.values)
    return store


def _train_config(config: PipelineConfig, protocol: Protocol, extractor_id: str) -> classifier.TrainConfig:
    seed = derive_seed(config.seed, f"train:{protocol.value}:{extractor_id}")
    return classifier.TrainConfig(seed=seed, **config.train)


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Execute every configured (strategy, protocol) cell and write artifacts.

    Artifacts land under out_dir: features/, models/, outcomes/ (per-face
    JSONL), and reports/ (canonical JSON plus summary tables).
    """
    manifest = load_manifest(config.manifest_path)
    validation = validate(manifest)
    if not validation.ok:
        first = validation.violations[0]
        raise PipelineValidationError(
            f"manifest has {len(validation.violations)} violation(s); "
            f"first: [{first.kind}] {first.where}: {first.detail}"
        )

    out_dir = config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    faces = _materialize_crops(manifest, out_dir)

    roles = sorted(config.extractors, key=ROLES.index)
    raw_stores: dict[str, FeatureStore] = {}
    for role in roles:
        spec = config.extractors[role]
        log.info("extracting %s features (%s)", role, spec.extractor_id)
        store = run_provider(spec, faces)
        save_store(store, out_dir / "features" / f"{spec.extractor_id}.feat")
        raw_stores[role] = store

    reports: list[StrategyReport] = []
    for protocol in config.protocols:
        reports.extend(_run_protocol(config, manifest, raw_stores, roles, protocol, out_dir))

    text, csv_text = render_table([r.to_json_dict() for r in reports])
    atomic_write_text(out_dir / "reports" / "summary.txt", text)
    atomic_write_text(out_dir / "reports" / "summary.csv", csv_text)
    return PipelineResult(reports=reports, out_dir=out_dir)


def _run_protocol(
    config: PipelineConfig,
    manifest: DatasetManifest,
    raw_stores: dict[str, FeatureStore],
    roles: list[str],
    protocol: Protocol,
    out_dir: Path,
) -> list[StrategyReport]:
    views = {split: protocol_view(manifest, protocol, split) for split in Split}
    face_ids = {split: [r.face_id for r in views[split]] for split in Split}
    labels = {split: _labels_of(views[split]) for split in Split}
    split_sizes = {split.value: len(face_ids[split]) for split in Split}
    test_ids = face_ids[Split.TEST]
    truths = labels[Split.TEST]
    extractor_ids = {role: raw_stores[role].spec.extractor_id for role in roles}

    standardizers = {
        raw_stores[role].spec.extractor_id: fusion.Standardizer.fit(
            raw_stores[role], face_ids[Split.TRAIN]
        )
        for role in roles
    }

    # One head per role, trained on standardized features, selected on valid.
    models: dict[str, classifier.SoftmaxModel] = {}
    predictions: dict[str, dict[str, classifier.Prediction]] = {}
    for role in roles:
        raw = raw_stores[role]
        std = standardizers[raw.spec.extractor_id]
        train_store = _standardized_store(raw, std, face_ids[Split.TRAIN])
        valid_store = _standardized_store(raw, std, face_ids[Split.VALID])
        test_store = _standardized_store(raw, std, test_ids)
        model = classifier.train(
            train_store,
            labels[Split.TRAIN],
            valid_store,
            labels[Split.VALID],
            _train_config(config, protocol, raw.spec.extractor_id),
        )
        classifier.save_model(
            model, out_dir / "models" / f"{protocol.value}_{raw.spec.extractor_id}.json"
        )
        models[role] = model
        predictions[role] = {
            p.face_id: p for p in classifier.predict_many(model, test_store, test_ids)
        }

    concat_predictions: dict[str, classifier.Prediction] = {}
    if "feature_concat" in config.strategies:
        train_cat = _concat_store(raw_stores, standardizers, roles, face_ids[Split.TRAIN])
        valid_cat = _concat_store(raw_stores, standardizers, roles, face_ids[Split.VALID])
        test_cat = _concat_store(raw_stores, standardizers, roles, test_ids)
        cat_model = classifier.train(
            train_cat,
            labels[Split.TRAIN],
            valid_cat,
            labels[Split.VALID],
            _train_config(config, protocol, train_cat.spec.extractor_id),
        )
        classifier.save_model(
            cat_model, out_dir / "models" / f"{protocol.value}_feature_concat.json"
        )
        concat_predictions = {
            p.face_id: p for p in classifier.predict_many(cat_model, test_cat, test_ids)
        }

    reports = []
    for strategy in config.strategies:
        outcomes, scores, third_count = _apply_strategy(
            strategy, roles, predictions, concat_predictions, test_ids
        )
        _write_outcomes(out_dir, protocol, strategy, outcomes, scores)
        counts = metrics.confusion(
            [(label, truths[fid]) for fid, label, _ in outcomes]
        )
        pad = metrics.pad_rates(
            counts,
            strategy=strategy,
            config={
                "seed": config.seed,
                "protocol": protocol.value,
                "extractors": extractor_ids,
                "train": dict(config.train),
                "operating_point": "argmax(p) with ties to bona_fide",
            },
        )
        eer = None
        if scores is not None:
            eer = metrics.roc_eer([(scores[fid], truths[fid]) for fid in test_ids]).eer
        reports.append(
            StrategyReport(
                protocol=protocol,
                strategy=strategy,
                pad=pad,
                eer=eer,
                third_consulted=third_count,
                split_sizes=split_sizes,
                extractor_ids=extractor_ids,
            )
        )
        _write_report(out_dir, reports[-1])
    return reports


def _apply_strategy(
    strategy: str,
    roles: list[str],
    predictions: dict[str, dict[str, classifier.Prediction]],
    concat_predictions: dict[str, classifier.Prediction],
    test_ids: list[str],
) -> tuple[list[tuple[str, Label, bool | None]], dict[str, float] | None, int | None]:
    """Per-face (face_id, label, third_consulted) plus scores when score-based."""
    if strategy.startswith("single:"):
        preds = predictions[strategy.split(":", 1)[1]]
        return (
            [(fid, preds[fid].label, None) for fid in test_ids],
            {fid: preds[fid].p_attack for fid in test_ids},
            None,
        )
    if strategy == "feature_concat":
        return (
            [(fid, concat_predictions[fid].label, None) for fid in test_ids],
            {fid: concat_predictions[fid].p_attack for fid in test_ids},
            None,
        )
    if strategy == "score_sum":
        fused = {
            fid: fusion.sum_scores([predictions[role][fid] for role in roles])
            for fid in test_ids
        }
        return (
            [(fid, fused[fid].label, None) for fid in test_ids],
            {fid: fused[fid].p_attack for fid in test_ids},
            None,
        )
    if strategy == "majority_eager":
        outcomes = []
        for fid in test_ids:
            out = fusion.eager_vote(
                predictions["deep_a"][fid], predictions["deep_b"][fid], predictions["texture"][fid]
            )
            outcomes.append((fid, out.label, out.third_consulted))
        return outcomes, None, len(test_ids)
    if strategy == "majority_lazy":
        outcomes = []
        consulted = 0
        for fid in test_ids:
            triple = fusion.DecisionTriple(
                d1=predictions["deep_a"][fid],
                d2=predictions["deep_b"][fid],
                d3_provider=lambda fid=fid: predictions["texture"][fid],
            )
            out = fusion.lazy_vote(triple)
            consulted += int(out.third_consulted)
            outcomes.append((fid, out.label, out.third_consulted))
        return outcomes, None, consulted
    raise PipelineError(f"unknown strategy {strategy!r}")


def _slug(strategy: str) -> str:
    return strategy.replace(":", "_")


def _write_outcomes(
    out_dir: Path,
    protocol: Protocol,
    strategy: str,
    outcomes: list[tuple[str, Label, bool | None]],
    scores: dict[str, float] | None,
) -> None:
    lines = []
    for fid, label, third in outcomes:
        doc = {"face_id": fid, "label": label.value}
        if scores is not None:
            doc["p_attack"] = scores[fid]
        if third is not None:
            doc["third_consulted"] = third
        lines.append(canonical_json(doc))
    atomic_write_text(
        out_dir / "outcomes" / f"{protocol.value}_{_slug(strategy)}.jsonl",
        "\n".join(lines) + "\n",
    )


def _write_report(out_dir: Path, report: StrategyReport) -> None:
    atomic_write_text(
        out_dir / "reports" / f"{report.protocol.value}_{_slug(report.strategy)}.json",
        canonical_json(report.to_json_dict()) + "\n",
    )


def render_table(report_dicts: list[dict]) -> tuple[str, str]:
    """Text table (strategies x protocol column groups) and its long-form CSV.

    Cells are percentages formatted to two decimals; strategies without a
    score sweep show "/" in the EER column.
    """
    if not report_dicts:
        raise PipelineError("render_table requires at least one report")
    protocols = sorted({d["protocol"] for d in report_dicts}, key=lambda v: Protocol(v).name)
    strategies = []
    for d in report_dicts:
        if d["strategy"] not in strategies:
            strategies.append(d["strategy"])
    cell: dict[tuple[str, str], dict] = {(d["strategy"], d["protocol"]): d for d in report_dicts}

    metric_names = ("EER", "APCER", "BPCER", "ACER")
    width = 8
    name_w = max(len("Strategy"), max(len(s) for s in strategies)) + 2
    group_w = width * len(metric_names)
    top = " " * name_w + "".join(f"{'Protocol ' + p:<{group_w}}" for p in protocols)
    sub = f"{'Strategy':<{name_w}}" + "".join(
        f"{m:>{width}}" for _ in protocols for m in metric_names
    )
    lines = [top.rstrip(), sub, "-" * len(sub)]
    for strategy in strategies:
        row = f"{strategy:<{name_w}}"
        for proto in protocols:
            d = cell.get((strategy, proto))
            if d is None:
                row += "".join(f"{'/':>{width}}" for _ in metric_names)
                continue
            row += f"{d['eer_pct']:>{width}}{d['apcer_pct']:>{width}}"
            row += f"{d['bpcer_pct']:>{width}}{d['acer_pct']:>{width}}"
        lines.append(row.rstrip())
    text = "\n".join(lines) + "\n"

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", "protocol", "eer", "apcer", "bpcer", "acer"])
    for strategy in strategies:
        for proto in protocols:
            d = cell.get((strategy, proto))
            if d is None:
                continue
            writer.writerow(
                [strategy, proto, d["eer_pct"], d["apcer_pct"], d["bpcer_pct"], d["acer_pct"]]
            )
    return text, buf.getvalue()
