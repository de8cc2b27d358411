"""Stain-normalized patch extraction from RGB histology region images.

The flow is: RGB -> optical density (Beer-Lambert), robust two-stain basis
estimation from the OD point cloud (SVD plane + percentile angular
extremes), least-squares concentration transfer onto a reference stain
basis, then tiling into non-overlapping 224 x 224 patches filtered by
tissue fraction. Everything operates on plain uint8 numpy arrays; WSI
container parsing happens upstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    DegenerateCloud,
    ImageTooSmall,
    InsufficientTissue,
    ShapeMismatch,
)

PATCH_SIZE = 224
DEFAULT_ALPHA = 1.0           # percentile for angular extremes
DEFAULT_BETA = 0.15           # OD magnitude floor for tissue pixels
DEFAULT_TISSUE_THRESHOLD = 0.5
BACKGROUND_LUMINANCE = 220.0  # pixels at least this bright count as background

_OD_SCALE = 256.0


def rgb_to_od(image: np.ndarray) -> np.ndarray:
    """Per-channel optical density: -log10((intensity + 1) / 256).

    The +1 offset keeps OD finite at intensity 0; white (255) maps to 0.
    """
    arr = np.asarray(image, dtype=np.float64)
    return -np.log10((arr + 1.0) / _OD_SCALE)


def od_to_rgb(od: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_od`, rounded and clipped to 8-bit range."""
    arr = _OD_SCALE * np.power(10.0, -np.asarray(od, dtype=np.float64)) - 1.0
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


@dataclass
class StainProfile:
    """Two unit stain directions in OD space plus per-stain scale.

    ``stain_vectors`` is 3 x 2 with the hematoxylin direction in column 0
    and eosin in column 1; ``max_concentrations`` holds the 99th-percentile
    concentration per stain, used to match intensity ranges when
    transferring an image onto another profile.
    """

    stain_vectors: np.ndarray      # (3, 2), unit columns
    max_concentrations: np.ndarray  # (2,), >= 0

    def __post_init__(self):
        self.stain_vectors = np.asarray(self.stain_vectors, dtype=np.float64)
        self.max_concentrations = np.asarray(self.max_concentrations, dtype=np.float64)
        if self.stain_vectors.shape != (3, 2):
            raise ShapeMismatch("stain_vectors must be 3x2")
        norms = np.linalg.norm(self.stain_vectors, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError(f"stain vectors must be unit columns, norms {norms}")
        cross = np.linalg.norm(np.cross(self.stain_vectors[:, 0], self.stain_vectors[:, 1]))
        if cross < 1e-9:
            raise ValueError("stain vectors are colinear")
        if np.any(self.max_concentrations < 0):
            raise ValueError("max_concentrations must be non-negative")

    def to_json(self) -> str:
        payload = {
            "hematoxylin": [float(v) for v in self.stain_vectors[:, 0]],
            "eosin": [float(v) for v in self.stain_vectors[:, 1]],
            "max_concentrations": [float(v) for v in self.max_concentrations],
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "StainProfile":
        raw = json.loads(text)
        vectors = np.stack([raw["hematoxylin"], raw["eosin"]], axis=1)
        return cls(vectors, np.asarray(raw["max_concentrations"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "StainProfile":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _clamped_concentrations(od_pixels: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    # least-squares decomposition onto the stain basis, negatives clamped to 0
    conc, *_ = np.linalg.lstsq(vectors, od_pixels.T, rcond=None)
    return np.maximum(conc, 0.0)


def estimate_stains(od_pixels: np.ndarray,
                    alpha: float = DEFAULT_ALPHA,
                    beta: float = DEFAULT_BETA) -> StainProfile:
    """Recover the two dominant stain directions from an OD pixel cloud.

    Pixels with OD magnitude at or below ``beta`` are discarded as
    background; the remainder is projected onto its top-2 singular plane
    and the ``alpha``/``100-alpha`` percentile angular extremes become the
    stain directions. Hematoxylin is the column with the larger
    blue-channel OD component.
    """
    od_pixels = np.asarray(od_pixels, dtype=np.float64).reshape(-1, 3)
    if not 0 < alpha < 50:
        raise ValueError("alpha must lie in (0, 50)")
    tissue = od_pixels[np.linalg.norm(od_pixels, axis=1) > beta]
    if tissue.shape[0] < 100:
        raise InsufficientTissue(
            f"only {tissue.shape[0]} pixels above OD magnitude {beta}"
        )

    _, svals, vt = np.linalg.svd(tissue, full_matrices=False)
    if svals[1] < 1e-9 * svals[0]:
        raise DegenerateCloud("OD cloud is effectively one-dimensional")
    plane = vt[:2].T  # (3, 2), orthonormal columns

    proj = tissue @ plane
    mean_dir = proj.mean(axis=0)
    mean_norm = np.linalg.norm(mean_dir)
    if mean_norm < 1e-12:
        raise DegenerateCloud("OD cloud has no mean direction in the stain plane")
    e1 = mean_dir / mean_norm
    e2 = np.array([-e1[1], e1[0]])
    # angles measured from the mean direction, so percentiles cannot wrap
    angles = np.arctan2(proj @ e2, proj @ e1)
    lo = np.percentile(angles, alpha)
    hi = np.percentile(angles, 100.0 - alpha)

    def direction(theta: float) -> np.ndarray:
        v = plane @ (np.cos(theta) * e1 + np.sin(theta) * e2)
        if v.sum() < 0:
            v = -v
        return v / np.linalg.norm(v)

    v_lo = direction(lo)
    v_hi = direction(hi)
    if v_lo[2] >= v_hi[2]:
        hema, eos = v_lo, v_hi
    else:
        hema, eos = v_hi, v_lo
    vectors = np.stack([hema, eos], axis=1)

    conc = _clamped_concentrations(od_pixels, vectors)
    max_conc = np.percentile(conc, 99, axis=1)
    return StainProfile(vectors, max_conc)


def estimate_stains_from_image(image: np.ndarray,
                               alpha: float = DEFAULT_ALPHA,
                               beta: float = DEFAULT_BETA) -> StainProfile:
    return estimate_stains(rgb_to_od(image).reshape(-1, 3), alpha=alpha, beta=beta)


def normalize_to_reference(image: np.ndarray,
                           source: StainProfile,
                           reference: StainProfile) -> np.ndarray:
    """Re-express an image's stain content in a reference stain basis.

    Concentrations under the source basis are rescaled so each stain's
    99th percentile matches the reference, then recomposed with the
    reference vectors.
    """
    image = np.asarray(image)
    od = rgb_to_od(image).reshape(-1, 3)
    conc = _clamped_concentrations(od, source.stain_vectors)
    scale = np.ones(2)
    for s in range(2):
        if source.max_concentrations[s] > 0:
            scale[s] = reference.max_concentrations[s] / source.max_concentrations[s]
    od_new = (reference.stain_vectors @ (conc * scale[:, None])).T
    return od_to_rgb(od_new).reshape(image.shape)


@dataclass
class PatchGrid:
    """Origins of the retained 224 x 224 patches of one image."""

    patch_size: int
    origins: list[tuple[int, int]]  # (row, col) offsets, row-major order
    tissue_fraction_threshold: float
    total_cells: int                # patches the grid could hold before filtering


def tile(image: np.ndarray,
         mask: np.ndarray | None = None,
         threshold: float = DEFAULT_TISSUE_THRESHOLD,
         patch_size: int = PATCH_SIZE) -> tuple[PatchGrid, list[np.ndarray]]:
    """Cut an image into grid-aligned non-overlapping patches.

    A patch is kept when the fraction of tissue pixels inside it reaches
    ``threshold``. Tissue is mask-positive pixels when a mask is supplied,
    otherwise pixels darker than the background luminance heuristic.
    Right/bottom remainders smaller than a patch are dropped.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    if h < patch_size or w < patch_size:
        raise ImageTooSmall(f"image {w}x{h} smaller than patch size {patch_size}")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape[:2] != (h, w):
            raise ShapeMismatch(f"mask shape {mask.shape} vs image {(h, w)}")
        tissue = mask != 0
    else:
        rgb = image.astype(np.float64)
        luminance = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
        tissue = luminance < BACKGROUND_LUMINANCE

    origins: list[tuple[int, int]] = []
    patches: list[np.ndarray] = []
    n_rows = h // patch_size
    n_cols = w // patch_size
    for r in range(n_rows):
        for c in range(n_cols):
            top, left = r * patch_size, c * patch_size
            frac = tissue[top:top + patch_size, left:left + patch_size].mean()
            if frac >= threshold:
                origins.append((top, left))
                patches.append(image[top:top + patch_size, left:left + patch_size].copy())
    grid = PatchGrid(patch_size, origins, threshold, n_rows * n_cols)
    return grid, patches


# --- image file helpers (PNG and 8-bit binary PPM via Pillow) ---

def load_rgb_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) != 0


def save_png(image: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")
