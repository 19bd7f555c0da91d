#!/usr/bin/env python3
"""Generate a synthetic corpus, run the whole pipeline and print the report.

    python3 scripts/run_synthetic_experiment.py --out runs/demo --per-class 14 --train 10
"""
import argparse
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from histofuse.config import PipelineConfig, load_config
from histofuse.data import CorpusSpec, DatasetManifest, generate_synthetic_corpus, ingest_dataset
from histofuse.labels import ClassLabel
from histofuse.pipeline import run_pipeline


def explicit_split(slides, n_train):
    out = []
    for label in ClassLabel:
        mine = [s for s in slides if s.label == label]
        out += [replace(s, split="train" if i < n_train else "test") for i, s in enumerate(mine)]
    return DatasetManifest(out)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--per-class", type=int, default=14)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--height", type=int, default=768)
    p.add_argument("--train", type=int, help="train images per class; default is the 70/20/10 split")
    p.add_argument("--classifier", choices=("baseline", "oracle", "random"), default="baseline")
    p.add_argument("--patches-per-slide", type=int, default=12)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    config = load_config(args.config) if args.config else PipelineConfig()
    config = config.with_seed(args.seed)
    config = replace(
        config,
        run=replace(config.run, classifier=args.classifier),
        patching=replace(config.patching, patches_per_slide=args.patches_per_slide),
    )
    start = time.perf_counter()
    spec = CorpusSpec(per_class=args.per_class, width=args.width, height=args.height)
    slides = generate_synthetic_corpus(args.out / "data", spec, seed=args.seed)
    if args.train is None:
        manifest = ingest_dataset(args.out / "data", seed=args.seed)
    else:
        manifest = explicit_split(slides, args.train)
    results, report = run_pipeline(manifest, config, args.out / "workspace")
    elapsed = time.perf_counter() - start

    print(report.to_text(), end="")
    ensemble = float(np.mean([r.ensemble.label == r.truth for r in results]))
    routed = sum(r.routed for r in results)
    print(f"ensemble accuracy before refinement: {ensemble:.4f}")
    print(f"routed to refinement: {routed} of {len(results)}")
    print(f"elapsed: {elapsed:.1f}s")
    summary = dict(report.to_dict(), ensemble_accuracy=ensemble, routed=routed, seconds=round(elapsed, 1))
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
