"""Synthetic two-stain mixtures with known ground truth."""
import numpy as np

from histofuse.stain import StainMatrix, render


def random_stains(rng) -> StainMatrix:
    h = np.array([0.65, 0.70, 0.29]) + rng.normal(0, 0.08, 3)
    e = np.array([0.07, 0.99, 0.11]) + rng.normal(0, 0.08, 3)
    W = np.maximum(np.stack([h, e], axis=1), 0.01)
    W /= np.linalg.norm(W, axis=0)
    if W[0, 0] < W[0, 1]:
        W = W[:, ::-1]
    return StainMatrix(W)


def mixture_concentrations(rng, n, pure_fraction=0.15, background_fraction=0.1, high=1.5):
    """Random concentrations where each stain appears alone in ``pure_fraction`` of pixels."""
    C = rng.uniform(0, high, (n, 2))
    kind = rng.uniform(size=n)
    C[kind < pure_fraction, 1] = 0.0
    C[(kind >= pure_fraction) & (kind < 2 * pure_fraction), 0] = 0.0
    C[kind > 1 - background_fraction] = 0.0
    return C


def mixture_image(rng, stains, h=100, w=100, **kw):
    C = mixture_concentrations(rng, h * w, **kw)
    return render(C.reshape(h, w, 2), stains), C.reshape(h, w, 2)
