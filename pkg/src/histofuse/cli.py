"""Command-line interface.

Every stage works on a workspace directory (``--out``).  The first stage
that sees ``--data`` ingests the dataset and stores ``manifest.csv`` and
``config.ini`` there; later stages pick both up again.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import PipelineConfig, load_config
from .data import CorpusSpec, DatasetManifest, generate_synthetic_corpus, ingest_dataset
from .errors import HistofuseError
from .pipeline import (
    Workspace,
    build_heatmaps,
    evaluate_predictions,
    extract_patches,
    fit_targets,
    normalize_slides,
    predict,
    prepare,
    run_pipeline,
    train_baselines,
    train_fusion,
    train_refinement_stage,
)

log = logging.getLogger("histofuse")

METHOD_CHOICES = ("macenko", "vahadane", "both")


def _common(p: argparse.ArgumentParser, workspace: bool = True) -> None:
    p.add_argument("--config", type=Path, help="INI config file (default: workspace config.ini)")
    p.add_argument("--seed", type=int, help="root seed; overrides the config")
    p.add_argument("--method", choices=METHOD_CHOICES, help="normalisation method(s); default from config")
    if workspace:
        p.add_argument("--out", type=Path, required=True, help="workspace directory")
        p.add_argument("--data", type=Path, help="dataset root with one sub-directory per class")
        p.add_argument("--manifest", type=Path, help="explicit dataset manifest CSV")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="histofuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-fixtures", help="write a synthetic H&E corpus")
    _common(p, workspace=False)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--height", type=int, default=768)

    p = sub.add_parser("fit-target", help="fit target stain profiles")
    _common(p)
    p.add_argument("--target", help="slide id or image path of the target (default from config)")

    for name, text in [
        ("normalize", "normalise every slide to the target profiles"),
        ("extract-patches", "write training and inference patch manifests"),
        ("train-baseline", "train the baseline patch classifier"),
        ("train-fusion", "train the histogram LR and GBM fusers"),
        ("train-refinement", "train the benign/normal refinement models"),
        ("predict", "predict image labels for the evaluation splits"),
    ]:
        _common(sub.add_parser(name, help=text))

    p = sub.add_parser("build-heatmaps", help="classify every tile in all 8 orientations")
    _common(p)
    p.add_argument("--classifier", choices=("baseline", "oracle", "random"))
    p.add_argument(
        "--external-probs", action="append", default=[], metavar="[METHOD=]FILE",
        help="probability exchange file; prefix with METHOD= when both methods run",
    )

    p = sub.add_parser("evaluate", help="write report.txt and report.json")
    _common(p)
    p.add_argument("--predictions", type=Path, help="predictions CSV (default: workspace)")

    p = sub.add_parser("run", help="every stage end to end")
    _common(p)
    p.add_argument("--classifier", choices=("baseline", "oracle", "random"))
    p.add_argument("--external-probs", action="append", default=[], metavar="[METHOD=]FILE")
    return parser


def resolve_config(args, ws: Workspace | None) -> PipelineConfig:
    if args.config is not None:
        config = load_config(args.config)
    elif ws is not None and ws.config.exists():
        config = load_config(ws.config)
    else:
        config = PipelineConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.method:
        methods = ("macenko", "vahadane") if args.method == "both" else (args.method,)
        config = replace(config, run=replace(config.run, methods=methods))
    if getattr(args, "classifier", None):
        config = replace(config, run=replace(config.run, classifier=args.classifier))
    if getattr(args, "target", None):
        config = replace(config, run=replace(config.run, target=args.target))
    return config


def resolve_manifest(args, ws: Workspace, config: PipelineConfig) -> DatasetManifest:
    if args.manifest is not None:
        manifest = DatasetManifest.load(args.manifest)
    elif args.data is not None:
        manifest = ingest_dataset(args.data, config.run.seed, config.data.fractions)
    elif ws.manifest.exists():
        return DatasetManifest.load(ws.manifest)
    else:
        raise HistofuseError(f"{ws.root} has no manifest yet; pass --data or --manifest")
    prepare(ws, manifest, config)
    return manifest


def parse_external(specs, methods) -> dict[str, Path]:
    out = {}
    for spec in specs:
        method, sep, path = spec.partition("=")
        if not sep:
            if len(methods) != 1:
                raise HistofuseError("with two methods, write --external-probs METHOD=FILE")
            method, path = methods[0], spec
        if method not in methods:
            raise HistofuseError(f"--external-probs names method {method!r}, which is not selected")
        out[method] = Path(path)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return _dispatch(args)
    except HistofuseError as exc:
        print(f"histofuse: error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "make-fixtures":
        config = resolve_config(args, None)
        spec = CorpusSpec(per_class=args.per_class, width=args.width, height=args.height)
        slides = generate_synthetic_corpus(args.out, spec, config.run.seed)
        print(f"wrote {len(slides)} images to {args.out}")
        return 0

    ws = Workspace(args.out)
    config = resolve_config(args, ws)
    if args.command == "run":
        manifest = resolve_manifest(args, ws, config)
        external = parse_external(args.external_probs, config.run.methods) or None
        _, report = run_pipeline(manifest, config, ws.root, external_probs=external)
        print(report.to_text(), end="")
        return 0

    manifest = resolve_manifest(args, ws, config)
    overrides = (args.config, args.seed, args.method, getattr(args, "classifier", None), getattr(args, "target", None))
    if any(v is not None for v in overrides):
        config.save(ws.config)
    methods = config.run.methods
    cmd = args.command
    if cmd == "fit-target":
        for method in fit_targets(ws, manifest, config, methods):
            print(f"{method}: {ws.profile(method)}")
    elif cmd == "normalize":
        normalize_slides(ws, manifest, config, methods)
    elif cmd == "extract-patches":
        extract_patches(ws, manifest, config)
    elif cmd == "train-baseline":
        train_baselines(ws, config, methods)
    elif cmd == "build-heatmaps":
        external = parse_external(args.external_probs, methods)
        build_heatmaps(ws, manifest, config, methods, external_probs=external)
    elif cmd == "train-fusion":
        train_fusion(ws, manifest, config, methods)
    elif cmd == "train-refinement":
        train_refinement_stage(ws, manifest, config)
    elif cmd == "predict":
        for r in predict(ws, manifest, config):
            print(f"{r.slide_id},{r.final.label.slug}")
    elif cmd == "evaluate":
        print(evaluate_predictions(ws, args.predictions).to_text(), end="")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
