#!/usr/bin/env python3
"""Angular stain-recovery error of both estimators on synthetic two-stain mixtures."""
import argparse

import numpy as np

from histofuse.stain import (
    StainMatrix,
    column_angles_deg,
    estimate_stains_macenko,
    estimate_stains_vahadane,
    render,
)


def random_stains(rng):
    h = np.array([0.65, 0.70, 0.29]) + rng.normal(0, 0.08, 3)
    e = np.array([0.07, 0.99, 0.11]) + rng.normal(0, 0.08, 3)
    W = np.maximum(np.stack([h, e], axis=1), 0.01)
    W /= np.linalg.norm(W, axis=0)
    return StainMatrix(W if W[0, 0] >= W[0, 1] else W[:, ::-1])


def mixture(rng, stains, side=100, pure=0.15, background=0.1):
    C = rng.uniform(0, 1.5, (side * side, 2))
    kind = rng.uniform(size=len(C))
    C[kind < pure, 1] = 0.0
    C[(kind >= pure) & (kind < 2 * pure), 0] = 0.0
    C[kind > 1 - background] = 0.0
    return render(C.reshape(side, side, 2), stains)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--images", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sparsity", type=float, nargs="+", default=[0.1, 0.03, 0.01])
    args = p.parse_args()
    errors = {"macenko": []} | {f"vahadane {s:g}": [] for s in args.sparsity}
    for i in range(args.images):
        rng = np.random.default_rng([args.seed, i])
        W = random_stains(rng)
        img = mixture(rng, W)
        errors["macenko"].append(column_angles_deg(estimate_stains_macenko(img), W).max())
        for s in args.sparsity:
            errors[f"vahadane {s:g}"].append(column_angles_deg(estimate_stains_vahadane(img, sparsity=s), W).max())
    print(f"{'estimator':<18}{'median':>8}{'p90':>8}{'worst':>8}   (degrees, {args.images} images)")
    for name, e in errors.items():
        e = np.array(e)
        print(f"{name:<18}{np.median(e):>8.2f}{np.percentile(e, 90):>8.2f}{e.max():>8.2f}")


if __name__ == "__main__":
    main()
