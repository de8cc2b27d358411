"""Patch-feature interchange format and slide-level aggregation.

A patient's patches arrive as an N x F matrix of feature vectors; the
slide-level representation is their arithmetic mean, one F-vector per
patient. Patch matrices travel between processes as ``.h2rf`` files, a
fixed little-endian binary layout (see :func:`write_features`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DuplicatePatient,
    EmptyFeatureSet,
    EmptyIntersection,
    NonFiniteValue,
    ShapeMismatch,
    UnsupportedVersion,
)

H2RF_MAGIC = b"H2RF"
H2RF_VERSION = 1


@dataclass
class PatchFeatureSet:
    """Per-patient stack of patch feature vectors (one row per patch)."""

    patient_id: str
    values: np.ndarray  # (N, F) float32
    extractor_tag: str = ""

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ShapeMismatch(f"expected an N x F matrix, got ndim={self.values.ndim}")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteValue(f"patch features for {self.patient_id!r} contain NaN/Inf")

    @property
    def n_patches(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


@dataclass
class SlideFeature:
    """Aggregated slide-level feature vector for one patient."""

    patient_id: str
    z: np.ndarray  # (F,) float64

    def __post_init__(self):
        self.z = np.ascontiguousarray(self.z, dtype=np.float64)
        if self.z.ndim != 1:
            raise ShapeMismatch("slide feature must be a vector")
        if not np.all(np.isfinite(self.z)):
            raise NonFiniteValue(f"slide feature for {self.patient_id!r} contains NaN/Inf")


def aggregate(p: PatchFeatureSet) -> SlideFeature:
    """Mean-pool patch features into one slide-level vector.

    Accumulates in float64, row by row in storage order, so the result is
    reproducible bit-for-bit for a given row order.
    """
    n = p.n_patches
    if n == 0:
        raise EmptyFeatureSet(f"no patches for {p.patient_id!r}")
    acc = np.zeros(p.n_features, dtype=np.float64)
    for i in range(n):
        acc += p.values[i]
    return SlideFeature(p.patient_id, acc / n)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_features(p: PatchFeatureSet, path) -> None:
    """Serialize a patch feature set to the ``.h2rf`` binary layout.

    Layout: magic ``H2RF``, u32 version, length-prefixed UTF-8 patient id
    and extractor tag (u32 byte length each), u32 N, u32 F, then N*F
    little-endian float32 values in row-major order.
    """
    blob = bytearray()
    blob += H2RF_MAGIC
    blob += struct.pack("<I", H2RF_VERSION)
    blob += _pack_str(p.patient_id)
    blob += _pack_str(p.extractor_tag)
    blob += struct.pack("<II", p.n_patches, p.n_features)
    blob += p.values.astype("<f4", copy=False).tobytes()
    Path(path).write_bytes(bytes(blob))


def read_features(path) -> PatchFeatureSet:
    """Read and validate an ``.h2rf`` file written by :func:`write_features`."""
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ShapeMismatch(f"{path}: truncated header")
    if data[:4] != H2RF_MAGIC:
        raise BadMagic(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != H2RF_VERSION:
        raise UnsupportedVersion(f"{path}: version {version}, expected {H2RF_VERSION}")

    pos = 8

    def take_str():
        nonlocal pos
        if pos + 4 > len(data):
            raise ShapeMismatch(f"{path}: truncated string length")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise ShapeMismatch(f"{path}: truncated string")
        s = data[pos:pos + n].decode("utf-8")
        pos += n
        return s

    patient_id = take_str()
    tag = take_str()
    if pos + 8 > len(data):
        raise ShapeMismatch(f"{path}: truncated shape fields")
    n, f = struct.unpack_from("<II", data, pos)
    pos += 8
    expected = pos + 4 * n * f
    if len(data) != expected:
        raise ShapeMismatch(
            f"{path}: payload is {len(data) - pos} bytes, expected {4 * n * f} for {n}x{f}"
        )
    values = np.frombuffer(data, dtype="<f4", count=n * f, offset=pos).reshape(n, f)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{path}: non-finite feature value")
    return PatchFeatureSet(patient_id, values.copy(), extractor_tag=tag)


@dataclass
class AlignedDataset:
    """Slide features joined with expression targets on patient id."""

    patient_ids: list[str]
    features: np.ndarray  # (P, F) float64
    targets: np.ndarray   # (P, G) float64
    dropped_features: list[str] = field(default_factory=list)
    dropped_expression: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.patient_ids)


def assemble_dataset(features: list[SlideFeature], expr) -> AlignedDataset:
    """Inner-join slide features with an ExpressionMatrix on patient id.

    Output rows are sorted by patient id; patients present on only one side
    are reported in the ``dropped_*`` lists.
    """
    by_id: dict[str, SlideFeature] = {}
    for sf in features:
        if sf.patient_id in by_id:
            raise DuplicatePatient(f"duplicate slide feature for {sf.patient_id!r}")
        by_id[sf.patient_id] = sf

    expr_ids = set(expr.patient_ids)
    common = sorted(by_id.keys() & expr_ids)
    if not common:
        raise EmptyIntersection("no patient ids shared between features and expression")

    expr_row = {pid: i for i, pid in enumerate(expr.patient_ids)}
    z = np.stack([by_id[pid].z for pid in common])
    y = np.stack([expr.values[expr_row[pid]] for pid in common]).astype(np.float64)
    return AlignedDataset(
        patient_ids=common,
        features=z,
        targets=y,
        dropped_features=sorted(set(by_id) - expr_ids),
        dropped_expression=sorted(expr_ids - set(by_id)),
    )


def align_patch_sets(sets: list[PatchFeatureSet], expr) -> (
        tuple)[list[PatchFeatureSet], np.ndarray, list[str], list[str], list[str]]:
    """Patch-level counterpart of :func:`assemble_dataset`.

    Returns the retained patch sets (sorted by patient id), their target
    matrix, the common ids, and the dropped ids from each side.
    """
    by_id: dict[str, PatchFeatureSet] = {}
    for ps in sets:
        if ps.patient_id in by_id:
            raise DuplicatePatient(f"duplicate patch set for {ps.patient_id!r}")
        by_id[ps.patient_id] = ps
    expr_ids = set(expr.patient_ids)
    common = sorted(by_id.keys() & expr_ids)
    if not common:
        raise EmptyIntersection("no patient ids shared between features and expression")
    expr_row = {pid: i for i, pid in enumerate(expr.patient_ids)}
    aligned = [by_id[pid] for pid in common]
    y = np.stack([expr.values[expr_row[pid]] for pid in common]).astype(np.float64)
    dropped_f = sorted(set(by_id) - expr_ids)
    dropped_e = sorted(expr_ids - set(by_id))
    return aligned, y, common, dropped_f, dropped_e
