"""Optical-density colour math and H&E stain normalisation.

Two stain-matrix estimators are provided: the SVD plane / extreme-angle
method of Macenko and the sparse NMF method of Vahadane.  Both return a
:class:`StainMatrix` whose first column is hematoxylin and second eosin.
Images are ``(height, width, 3)`` uint8 arrays throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateStainError,
    InvalidArgumentError,
    ModelFormatError,
    NoTissueError,
)

BACKGROUND = 255.0
MIN_TISSUE_PIXELS = 100
MIN_STAIN_ANGLE_DEG = 1.0
METHODS = ("macenko", "vahadane")

PROFILE_FORMAT = "histofuse-stain-profile"
PROFILE_VERSION = 1


def as_rgb(image) -> np.ndarray:
    """Validate and return ``image`` as a ``(h, w, 3)`` uint8 array."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidArgumentError(f"expected an (h, w, 3) RGB image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgumentError("image must be at least 1x1")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise InvalidArgumentError("RGB channel values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def rgb_to_od(image, background: float = BACKGROUND) -> np.ndarray:
    """Beer-Lambert optical density, ``-log10(max(I, 1) / background)``, floored at 0."""
    if not background > 0:
        raise InvalidArgumentError(f"background must be positive, got {background}")
    rgb = np.asarray(image, dtype=np.float64)
    od = -np.log10(np.maximum(rgb, 1.0) / float(background))
    return np.maximum(od, 0.0)


def od_to_rgb(od, background: float = BACKGROUND) -> np.ndarray:
    """Inverse of :func:`rgb_to_od`; rounds half up and clamps to [0, 255]."""
    intensity = float(background) * np.power(10.0, -np.asarray(od, dtype=np.float64))
    return np.clip(np.floor(intensity + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class StainMatrix:
    """3x2 OD-space stain basis; column 0 hematoxylin, column 1 eosin."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64).reshape(3, 2)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def hematoxylin(self) -> np.ndarray:
        return self.matrix[:, 0]

    @property
    def eosin(self) -> np.ndarray:
        return self.matrix[:, 1]

    def angle_deg(self) -> float:
        return float(np.degrees(_angle(self.matrix[:, 0], self.matrix[:, 1])))

    def is_valid(self, atol: float = 1e-9) -> bool:
        norms = np.linalg.norm(self.matrix, axis=0)
        return (
            bool(np.all(np.isfinite(self.matrix)))
            and bool(np.all(self.matrix >= 0))
            and bool(np.allclose(norms, 1.0, atol=atol))
            and self.angle_deg() >= MIN_STAIN_ANGLE_DEG
        )

    def __eq__(self, other):
        return isinstance(other, StainMatrix) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())


def _angle(a: np.ndarray, b: np.ndarray) -> float:
    cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def column_angles_deg(estimated: StainMatrix, reference: StainMatrix) -> np.ndarray:
    """Angular distance of each estimated column to the matching reference column."""
    return np.array(
        [np.degrees(_angle(estimated.matrix[:, k], reference.matrix[:, k])) for k in range(2)]
    )


def _finalize_columns(v1: np.ndarray, v2: np.ndarray) -> StainMatrix:
    cols = []
    for v in (v1, v2):
        if v.sum() < 0:
            v = -v
        v = np.maximum(v, 0.0)
        n = np.linalg.norm(v)
        if not n > 0:
            raise DegenerateStainError("estimated stain direction vanished after projection")
        cols.append(v / n)
    if np.degrees(_angle(cols[0], cols[1])) < MIN_STAIN_ANGLE_DEG:
        raise DegenerateStainError(
            f"stain directions closer than {MIN_STAIN_ANGLE_DEG} degree; single-stain input?"
        )
    # Hematoxylin absorbs red more strongly than eosin.
    if cols[0][0] < cols[1][0]:
        cols = cols[::-1]
    return StainMatrix(np.stack(cols, axis=1))


def tissue_mask(od: np.ndarray, od_threshold: float = 0.15) -> np.ndarray:
    return np.linalg.norm(od, axis=-1) > od_threshold


def _tissue_od(image, od_threshold: float, background: float) -> np.ndarray:
    od = rgb_to_od(as_rgb(image), background).reshape(-1, 3)
    tissue = od[tissue_mask(od, od_threshold)]
    if len(tissue) < MIN_TISSUE_PIXELS:
        raise NoTissueError(
            f"only {len(tissue)} pixels exceed OD threshold {od_threshold}; "
            f"need at least {MIN_TISSUE_PIXELS}"
        )
    return tissue


def estimate_stains_macenko(
    image,
    od_threshold: float = 0.15,
    angle_percentile: float = 1.0,
    background: float = BACKGROUND,
) -> StainMatrix:
    tissue = _tissue_od(image, od_threshold, background)
    # Right singular vectors of the pixel matrix are the eigenvectors of its Gram matrix.
    _, vecs = np.linalg.eigh(tissue.T @ tissue)
    plane = vecs[:, [2, 1]].copy()
    for k in range(2):
        if plane[:, k].sum() < 0:
            plane[:, k] = -plane[:, k]
    proj = tissue @ plane
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    lo, hi = np.percentile(phi, [angle_percentile, 100.0 - angle_percentile])
    v_lo = plane @ np.array([np.cos(lo), np.sin(lo)])
    v_hi = plane @ np.array([np.cos(hi), np.sin(hi)])
    if np.degrees(hi - lo) < MIN_STAIN_ANGLE_DEG:
        raise DegenerateStainError("extreme projected angles coincide; single-stain input?")
    return _finalize_columns(v_lo, v_hi)


# Reference H&E OD vectors (Ruifrok & Johnston), used to seed the SNMF solver.
REFERENCE_STAINS = StainMatrix(
    np.array([[0.650, 0.072], [0.704, 0.990], [0.286, 0.105]])
    / np.linalg.norm(np.array([[0.650, 0.072], [0.704, 0.990], [0.286, 0.105]]), axis=0)
)


@dataclass
class SnmfResult:
    W: np.ndarray
    H: np.ndarray
    objective: list[float] = field(default_factory=list)
    converged: bool = False


def snmf_objective(V: np.ndarray, W: np.ndarray, H: np.ndarray, sparsity: float) -> float:
    """Per-pixel mean of ``0.5 ||V - WH||_F^2 + sparsity ||H||_1``."""
    r = V - W @ H
    return float((0.5 * np.sum(r * r) + sparsity * np.sum(np.abs(H))) / V.shape[1])


def _lasso_h_step(V, W, H, sparsity, sweeps):
    """Nonnegative lasso on each pixel's concentrations.

    Two stains are solved exactly by enumerating the active sets; other
    sizes fall back to coordinate minimisation.
    """
    G = W.T @ W
    B = W.T @ V - sparsity
    if W.shape[1] == 2 and np.linalg.det(G) > 1e-12:
        return _lasso_two(G, B)
    H = H.copy()
    for _ in range(sweeps):
        for k in range(W.shape[1]):
            if G[k, k] <= 0:
                H[k] = 0.0
                continue
            others = B[k] - G[k] @ H + G[k, k] * H[k]
            H[k] = np.maximum(0.0, others / G[k, k])
    return H


def _lasso_two(G, B):
    """Exact minimiser of ``0.5 h'Gh - B'h`` over ``h >= 0`` for every column of ``B``."""
    cands = [
        np.linalg.solve(G, B),
        np.stack([np.maximum(B[0] / G[0, 0], 0.0), np.zeros(B.shape[1])]),
        np.stack([np.zeros(B.shape[1]), np.maximum(B[1] / G[1, 1], 0.0)]),
    ]
    best = np.zeros_like(B)
    best_f = np.zeros(B.shape[1])
    for h in cands:
        f = 0.5 * np.einsum("in,ij,jn->n", h, G, h) - np.sum(B * h, axis=0)
        ok = np.all(h >= 0, axis=0) & (f < best_f)
        best[:, ok] = h[:, ok]
        best_f[ok] = f[ok]
    return best


def _w_step(V, W, H, sparsity, f_current, max_halvings=40):
    """Projected gradient with column renormalisation; accepts only decreasing steps."""
    n = V.shape[1]
    grad = -(V - W @ H) @ H.T / n
    step = 1.0
    for _ in range(max_halvings):
        cand = np.maximum(W - step * grad, 0.0)
        norms = np.linalg.norm(cand, axis=0)
        if np.all(norms > 0):
            cand = cand / norms
            f_cand = snmf_objective(V, cand, H, sparsity)
            if f_cand < f_current:
                return cand, f_cand
        step *= 0.5
    return W, f_current


def snmf(
    V: np.ndarray,
    W0: np.ndarray,
    sparsity: float = 0.1,
    max_outer_iters: int = 50,
    tol: float = 1e-4,
    h_sweeps: int = 5,
    w_steps: int = 10,
) -> SnmfResult:
    """Alternating minimisation of the sparse NMF objective with unit-norm columns of W.

    ``V`` is ``(3, n)`` nonnegative; the recorded objective sequence is
    non-increasing because each half-step only ever accepts improvements.
    """
    V = np.asarray(V, dtype=np.float64)
    W = np.asarray(W0, dtype=np.float64)
    W = W / np.linalg.norm(W, axis=0)
    H = np.zeros((W.shape[1], V.shape[1]))
    history = [snmf_objective(V, W, H, sparsity)]
    converged = False
    for _ in range(max_outer_iters):
        H = _lasso_h_step(V, W, H, sparsity, h_sweeps)
        f = snmf_objective(V, W, H, sparsity)
        for _ in range(w_steps):
            W, f_new = _w_step(V, W, H, sparsity, f)
            if f_new == f:
                break
            f = f_new
        prev = history[-1]
        history.append(f)
        if prev > 0 and (prev - f) / prev < tol:
            converged = True
            break
    return SnmfResult(W=W, H=H, objective=history, converged=converged)


def estimate_stains_vahadane(
    image,
    sparsity: float = 0.1,
    max_outer_iters: int = 50,
    tol: float = 1e-4,
    od_threshold: float = 0.15,
    max_pixels: int = 20000,
    background: float = BACKGROUND,
    return_result: bool = False,
):
    tissue = _tissue_od(image, od_threshold, background)
    if len(tissue) > max_pixels:
        idx = np.linspace(0, len(tissue) - 1, max_pixels).astype(np.int64)
        tissue = tissue[idx]
    result = snmf(tissue.T, REFERENCE_STAINS.matrix, sparsity, max_outer_iters, tol)
    usage = result.H.sum(axis=1)
    if usage.min() <= 1e-3 * usage.sum():
        raise DegenerateStainError("one stain carries no concentration; single-stain input?")
    stains = _finalize_columns(result.W[:, 0], result.W[:, 1])
    return (stains, result) if return_result else stains


def estimate_stains(image, method: str, **kwargs) -> StainMatrix:
    if method == "macenko":
        return estimate_stains_macenko(image, **kwargs)
    if method == "vahadane":
        return estimate_stains_vahadane(image, **kwargs)
    raise InvalidArgumentError(f"unknown stain method {method!r}; expected one of {METHODS}")


def nnls_concentrations(
    od: np.ndarray, stains: StainMatrix, tol: float = 1e-8, max_iter: int = 100
) -> np.ndarray:
    """Per-pixel ``min ||od - W c||, c >= 0`` by two-variable coordinate descent.

    ``od`` has shape ``(..., 3)``; returns ``(..., 2)``.  Iteration starts
    from the clipped unconstrained solution and stops once no coordinate
    moves by more than ``tol``.
    """
    W = stains.matrix
    shape = od.shape[:-1]
    b = np.asarray(od, dtype=np.float64).reshape(-1, 3) @ W
    G = W.T @ W
    c = np.maximum(b @ np.linalg.inv(G), 0.0)
    c0, c1 = c[:, 0].copy(), c[:, 1].copy()
    active = np.arange(len(b))
    for _ in range(max_iter):
        b0, b1 = b[active, 0], b[active, 1]
        old0, old1 = c0[active], c1[active]
        new0 = np.maximum(0.0, (b0 - G[0, 1] * old1) / G[0, 0])
        new1 = np.maximum(0.0, (b1 - G[0, 1] * new0) / G[1, 1])
        c0[active], c1[active] = new0, new1
        moved = np.maximum(np.abs(new0 - old0), np.abs(new1 - old1)) > tol
        active = active[moved]
        if active.size == 0:
            break
    return np.stack([c0, c1], axis=-1).reshape(*shape, 2)


def compute_concentrations(image, stains: StainMatrix, background: float = BACKGROUND) -> np.ndarray:
    """Concentration map ``(h, w, 2)`` of an RGB image under ``stains``."""
    return nnls_concentrations(rgb_to_od(as_rgb(image), background), stains)


def render(concentrations: np.ndarray, stains: StainMatrix, background: float = BACKGROUND) -> np.ndarray:
    """RGB image from a concentration map: ``od = W c``."""
    return od_to_rgb(np.asarray(concentrations) @ stains.matrix.T, background)


@dataclass(frozen=True)
class StainProfile:
    stain_matrix: StainMatrix
    conc_scale: np.ndarray
    background: float = BACKGROUND
    method: str = "macenko"

    def __post_init__(self):
        scale = np.array(self.conc_scale, dtype=np.float64).reshape(2)
        if not np.all(scale > 0):
            raise DegenerateStainError(f"concentration scale must be positive, got {scale}")
        scale.setflags(write=False)
        object.__setattr__(self, "conc_scale", scale)

    def __eq__(self, other):
        return (
            isinstance(other, StainProfile)
            and self.stain_matrix == other.stain_matrix
            and np.array_equal(self.conc_scale, other.conc_scale)
            and self.background == other.background
            and self.method == other.method
        )

    def to_text(self) -> str:
        m = self.stain_matrix.matrix
        lines = [
            f"format = {PROFILE_FORMAT}",
            f"version = {PROFILE_VERSION}",
            f"method = {self.method}",
            f"background = {self.background!r}",
        ]
        for i, channel in enumerate("rgb"):
            for k, stain in enumerate("he"):
                lines.append(f"w_{channel}_{stain} = {float(m[i, k])!r}")
        lines.append(f"scale_h = {float(self.conc_scale[0])!r}")
        lines.append(f"scale_e = {float(self.conc_scale[1])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "StainProfile":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ModelFormatError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        if values.get("format") != PROFILE_FORMAT:
            raise ModelFormatError("not a stain profile file")
        if values.get("version") != str(PROFILE_VERSION):
            raise ModelFormatError(f"unsupported profile version {values.get('version')!r}")
        try:
            m = np.array(
                [[float(values[f"w_{c}_{s}"]) for s in "he"] for c in "rgb"]
            )
            scale = [float(values["scale_h"]), float(values["scale_e"])]
            background = float(values["background"])
            method = values["method"]
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"malformed stain profile: {exc}") from None
        return cls(StainMatrix(m), np.array(scale), background, method)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "StainProfile":
        with open(path) as fh:
            return cls.from_text(fh.read())


def concentration_scale(
    concentrations: np.ndarray, od: np.ndarray, od_threshold: float = 0.15, percentile: float = 99.0
) -> np.ndarray:
    """99th percentile of each stain's concentration over tissue pixels."""
    mask = tissue_mask(od, od_threshold)
    return np.percentile(concentrations[mask], percentile, axis=0)


def _estimator_kwargs(kwargs: dict, method: str) -> dict:
    allowed = {
        "macenko": {"od_threshold", "angle_percentile"},
        "vahadane": {"sparsity", "max_outer_iters", "tol", "od_threshold", "max_pixels"},
    }[method]
    return {k: v for k, v in kwargs.items() if k in allowed}


def fit_target_profile(
    target, method: str = "macenko", background: float = BACKGROUND, **estimator_kwargs
) -> StainProfile:
    target = as_rgb(target)
    stains = estimate_stains(target, method, **_estimator_kwargs(estimator_kwargs, method))
    od = rgb_to_od(target, background)
    conc = nnls_concentrations(od, stains)
    thr = estimator_kwargs.get("od_threshold", 0.15)
    return StainProfile(stains, concentration_scale(conc, od, thr), background, method)


def normalize(
    source, source_method: str, target: StainProfile, **estimator_kwargs
) -> np.ndarray:
    """Map ``source`` onto the stain basis and concentration scale of ``target``."""
    source = as_rgb(source)
    stains = estimate_stains(source, source_method, **_estimator_kwargs(estimator_kwargs, source_method))
    od = rgb_to_od(source, target.background)
    conc = nnls_concentrations(od, stains)
    thr = estimator_kwargs.get("od_threshold", 0.15)
    src_scale = concentration_scale(conc, od, thr)
    if not np.all(src_scale > 0):
        raise DegenerateStainError(f"source concentration scale not positive: {src_scale}")
    scaled = conc * (target.conc_scale / src_scale)
    return render(scaled, target.stain_matrix, target.background)
