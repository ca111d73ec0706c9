"""Command line interface.

Exit codes: 0 success, 1 validation failure (bad manifest/config), 2 runtime
error. Machine-readable outputs go under the chosen output directory; logs go
to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import classifier, frs, pipeline, synth
from .dataset import ManifestError, Protocol, Split, load_manifest, protocol_view, stats, validate
from .features import EmbeddingSpec, load_store, run_provider, save_store
from .ioutil import atomic_write_text, canonical_json

log = logging.getLogger("waxpad")


def _cmd_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    report = validate(manifest)
    if args.json:
        print(canonical_json(report.to_json_dict()))
    else:
        print(report.render_text())
        if args.stats:
            print()
            print(canonical_json(stats(manifest).to_json_dict()))
    return 0 if report.ok else 1


def _cmd_synth(args) -> int:
    config = synth.SynthConfig(
        n_pairs=args.pairs,
        image_size=args.image_size,
        blur_strength=args.blur,
        noise_level=args.noise,
    )
    manifest = synth.synth_generate(config, seed=args.seed, out_dir=args.out)
    log.info("wrote %d records under %s", len(manifest), args.out)
    print(str(Path(args.out) / "manifest.jsonl"))
    return 0


def _cmd_extract(args) -> int:
    spec = EmbeddingSpec.from_json_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
    manifest = load_manifest(args.manifest)
    faces = [
        (r.face_id, manifest.image_path_for(r))
        for r in sorted(manifest.records, key=lambda r: r.face_id)
    ]
    store = run_provider(spec, faces)
    save_store(store, args.out)
    log.info("wrote %d vectors to %s", len(store), args.out)
    return 0


def _cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    store = load_store(args.features)
    train_labels = {
        r.face_id: r.label
        for r in protocol_view(manifest, Protocol(args.protocol), Split.TRAIN)
    }
    valid_labels = {
        r.face_id: r.label
        for r in protocol_view(manifest, Protocol(args.protocol), Split.VALID)
    }
    config = classifier.TrainConfig(seed=args.seed)
    model = classifier.train(store, train_labels, store, valid_labels, config)
    classifier.save_model(model, args.out)
    log.info("wrote model to %s", args.out)
    return 0


def _cmd_eval(args) -> int:
    config = pipeline.PipelineConfig.load(args.config)
    result = pipeline.run_pipeline(config)
    log.info("wrote %d reports under %s", len(result.reports), result.out_dir / "reports")
    print((result.out_dir / "reports" / "summary.txt").read_text(encoding="utf-8"))
    return 0


def _cmd_frs(args) -> int:
    manifest = load_manifest(args.manifest)
    store = load_store(args.features)
    metric = frs.MatcherMetric(args.metric)
    trials = frs.build_trials(manifest, store, Protocol(args.protocol), metric)
    report = frs.vuln_report(trials, frs.MatcherSpec(metric=metric, threshold=args.threshold))
    if args.out:
        atomic_write_text(Path(args.out), canonical_json(report.to_json_dict()) + "\n")
    print(report.render_text())
    return 0


def _cmd_report(args) -> int:
    docs = []
    for path in args.reports:
        docs.append(json.loads(Path(path).read_text(encoding="utf-8")))
    text, csv_text = pipeline.render_table(docs)
    print(text)
    if args.csv:
        atomic_write_text(Path(args.csv), csv_text)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .study import StudyConfig, StudyService, create_app

    config = StudyConfig(
        manifest_path=Path(args.manifest),
        event_log=Path(args.events),
        protocol=Protocol(args.protocol),
        split=Split(args.split),
        subset_size=args.subset_size,
        subset_seed=args.subset_seed,
        static_dir=Path(args.static_dir) if args.static_dir else None,
    )
    app = create_app(StudyService(config))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="waxpad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest and print protocol counts")
    p.add_argument("manifest")
    p.add_argument("--json", action="store_true", help="emit the report as JSON")
    p.add_argument("--stats", action="store_true", help="also print meta distributions")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("synth", help="generate a synthetic paired corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--blur", type=float, default=1.5)
    p.add_argument("--noise", type=float, default=4.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("extract", help="run a feature provider over a manifest")
    p.add_argument("manifest")
    p.add_argument("--spec", required=True, help="JSON file with an embedding spec")
    p.add_argument("--out", required=True, help="output feature file")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("train", help="train one softmax head from a feature file")
    p.add_argument("manifest")
    p.add_argument("--features", required=True)
    p.add_argument("--protocol", choices=[pr.value for pr in Protocol], default="III")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="run the full pipeline from a config file")
    p.add_argument("config")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("frs", help="vulnerability report for an embedding matcher")
    p.add_argument("manifest")
    p.add_argument("--features", required=True)
    p.add_argument("--protocol", choices=[pr.value for pr in Protocol], default="III")
    p.add_argument(
        "--metric",
        choices=[m.value for m in frs.MatcherMetric],
        default=frs.MatcherMetric.COSINE_SIMILARITY.value,
    )
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(func=_cmd_frs)

    p = sub.add_parser("report", help="render report JSON files as a summary table")
    p.add_argument("reports", nargs="+")
    p.add_argument("--csv", help="also write the long-form CSV here")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("serve", help="run the human-study service")
    p.add_argument("manifest")
    p.add_argument("--events", required=True, help="append-only event log (JSONL)")
    p.add_argument("--protocol", choices=[pr.value for pr in Protocol], default="III")
    p.add_argument("--split", choices=[s.value for s in Split], default="test")
    p.add_argument("--subset-size", type=int, default=20)
    p.add_argument("--subset-seed", type=int, default=0)
    p.add_argument("--static-dir", help="built UI bundle to serve at /")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


_VALIDATION_ERRORS = (
    pipeline.PipelineValidationError,
    synth.SynthError,
    ManifestError,
)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
