"""Gene panel configuration and expression-target handling.

Targets arrive as a patients x genes CSV of raw (RSEM-style) counts, get
reordered to panel order, and are trained on after a log2(1+x) transform.
The panel itself is data: a JSON list fixing symbol order (and thereby the
output-neuron index of every gene), assay provenance tags, and PAM50 flags.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    DuplicatePatient,
    MissingGene,
    NegativeExpression,
    ParseError,
)

_MISSING_TOKENS = {"", "na", "nan", "null", "none"}


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash, used to fingerprint panel order in model files."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class PanelGene:
    symbol: str
    assays: tuple[str, ...] = ()
    pam50: bool = False


@dataclass(frozen=True)
class GenePanel:
    """Ordered gene list; the order is load-bearing and persisted."""

    genes: tuple[PanelGene, ...]

    def __post_init__(self):
        symbols = [g.symbol for g in self.genes]
        if len(set(symbols)) != len(symbols):
            dup = sorted({s for s in symbols if symbols.count(s) > 1})
            raise ValueError(f"duplicate panel symbols: {dup}")
        if sum(g.pam50 for g in self.genes) > 50:
            raise ValueError("more than 50 genes flagged pam50")

    def __len__(self) -> int:
        return len(self.genes)

    @property
    def symbols(self) -> list[str]:
        return [g.symbol for g in self.genes]

    @property
    def pam50_symbols(self) -> list[str]:
        return [g.symbol for g in self.genes if g.pam50]

    def pam50_indices(self) -> list[int]:
        return [i for i, g in enumerate(self.genes) if g.pam50]

    def content_hash(self) -> int:
        return fnv1a64(",".join(self.symbols).encode("utf-8"))


def load_panel(path) -> GenePanel:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    genes = tuple(
        PanelGene(
            symbol=entry["symbol"],
            assays=tuple(entry.get("assays", ())),
            pam50=bool(entry.get("pam50", False)),
        )
        for entry in raw
    )
    return GenePanel(genes)


def save_panel(panel: GenePanel, path) -> None:
    payload = [
        {"symbol": g.symbol, "assays": list(g.assays), "pam50": g.pam50}
        for g in panel.genes
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def default_panel() -> GenePanel:
    """The panel shipped with the package (PAM50 symbols plus open slots)."""
    with resources.files("histexpr.data").joinpath("panel_default.json").open(
        "r", encoding="utf-8"
    ) as fh:
        raw = json.load(fh)
    return GenePanel(tuple(
        PanelGene(e["symbol"], tuple(e.get("assays", ())), bool(e.get("pam50", False)))
        for e in raw
    ))


@dataclass
class ExpressionMatrix:
    """Patients x genes expression values in panel column order."""

    patient_ids: list[str]
    values: np.ndarray  # (P, G) float64
    transformed: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.patient_ids):
            raise ValueError("values must be a patients x genes matrix")
        if len(set(self.patient_ids)) != len(self.patient_ids):
            raise DuplicatePatient("duplicate patient ids in expression matrix")

    def transform(self) -> "ExpressionMatrix":
        if self.transformed:
            return self
        return replace(self, values=log_transform(self.values), transformed=True)


def log_transform(raw: np.ndarray) -> np.ndarray:
    """log2(1 + x), entrywise; rejects negative input."""
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw < 0):
        r, c = np.argwhere(raw < 0)[0]
        raise NegativeExpression(int(r), int(c))
    return np.log2(1.0 + raw)


def inverse_transform(t: np.ndarray) -> np.ndarray:
    """2**t - 1, entrywise; inverse of :func:`log_transform`."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        r, c = np.argwhere(t < 0)[0]
        raise NegativeExpression(int(r), int(c))
    return np.exp2(t) - 1.0


def load_expression(path, panel: GenePanel) -> tuple[ExpressionMatrix, list[tuple[str, str]]]:
    """Load an expression CSV and reorder its columns to panel order.

    The CSV header is ``patient_id,GENE1,...``; columns may appear in any
    order and extra non-panel columns are ignored. Patients missing a value
    for any panel gene are rejected and returned in the report list as
    ``(patient_id, reason)`` pairs.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if not header or header[0] != "patient_id":
            raise ParseError("first header column must be 'patient_id'", 1)
        col_of = {}
        for i, name in enumerate(header[1:], start=1):
            if name in col_of:
                raise ParseError(f"duplicate gene column {name!r}", 1)
            col_of[name] = i
        missing = [s for s in panel.symbols if s not in col_of]
        if missing:
            raise MissingGene(f"panel genes absent from header: {missing}")
        panel_cols = [col_of[s] for s in panel.symbols]

        ids: list[str] = []
        seen: set[str] = set()
        rows: list[list[float]] = []
        rejected: list[tuple[str, str]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(row)}", lineno
                )
            pid = row[0]
            if pid in seen:
                raise DuplicatePatient(f"patient {pid!r} appears twice (line {lineno})")
            seen.add(pid)
            vals = []
            bad = None
            for col in panel_cols:
                cell = row[col].strip()
                if cell.lower() in _MISSING_TOKENS:
                    bad = f"missing value for {header[col]}"
                    break
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"cannot parse {cell!r} in column {header[col]!r}", lineno
                    ) from None
            if bad is not None:
                rejected.append((pid, bad))
                continue
            ids.append(pid)
            rows.append(vals)

    values = np.array(rows, dtype=np.float64).reshape(len(ids), len(panel))
    return ExpressionMatrix(ids, values, transformed=False), rejected


def save_expression(matrix: ExpressionMatrix, panel: GenePanel, path) -> None:
    """Write a matrix back out in the same CSV layout (panel column order)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient_id"] + panel.symbols)
        for pid, row in zip(matrix.patient_ids, matrix.values):
            writer.writerow([pid] + [repr(float(v)) for v in row])
