"""Dataset bookkeeping: manifests, splits, quality lists, summary statistics,
and the scale-invariant log-depth error metric."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError
from .geometry import CameraPose
from .render import PRODUCT_SUFFIXES

SPLIT_NAMES = ("train", "valid", "test")
DEFAULT_SPATIAL_CELL = 200.0  # m; larger than typical co-visibility baselines


@dataclass
class ViewpointRecord:
    pano_id: str
    pose: CameraPose
    capture_date: str = ""
    indoor: bool = False
    n_annotations: int = 0
    quality_ok: bool = True

    def to_dict(self) -> dict:
        return {
            "pano_id": self.pano_id,
            "pose": self.pose.to_dict(),
            "capture_date": self.capture_date,
            "indoor": self.indoor,
            "n_annotations": self.n_annotations,
            "quality_ok": self.quality_ok,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ViewpointRecord":
        return cls(
            pano_id=d["pano_id"],
            pose=CameraPose.from_dict(d["pose"]),
            capture_date=d.get("capture_date", ""),
            indoor=bool(d.get("indoor", False)),
            n_annotations=int(d.get("n_annotations", 0)),
            quality_ok=bool(d.get("quality_ok", True)),
        )


@dataclass(frozen=True)
class SplitSpec:
    kind: str
    seed: int
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    spatial_cell: float = DEFAULT_SPATIAL_CELL

    def __post_init__(self):
        if self.kind not in ("random", "spatial"):
            raise DomainError("split kind must be 'random' or 'spatial'")
        f = self.fractions
        if len(f) != 3 or any(x <= 0 for x in f) or abs(sum(f) - 1.0) > 1e-9:
            raise DomainError("fractions must be 3 positive numbers summing to 1")
        if self.kind == "spatial" and self.spatial_cell <= 0:
            raise DomainError("spatial_cell must be positive")


def _partition_sizes(n: int, fractions) -> list[int]:
    """Floor each split size, hand remainders to train, then valid, then test."""
    base = [int(np.floor(n * f)) for f in fractions]
    rem = n - sum(base)
    for i in range(rem):
        base[i % 3] += 1
    return base


def _eligible(records) -> list[ViewpointRecord]:
    out = [r for r in records if not r.indoor]
    if not out:
        raise DomainError("no eligible (non-indoor) records to split")
    return out


def split_random(records, spec: SplitSpec) -> dict[str, str]:
    """Deterministic seeded shuffle, then partition by fractions.

    Indoor records are never labeled. Returns {pano_id: split name}.
    """
    if spec.kind != "random":
        raise DomainError("split_random needs a spec with kind='random'")
    recs = _eligible(records)
    order = np.random.default_rng(spec.seed).permutation(len(recs))
    sizes = _partition_sizes(len(recs), spec.fractions)
    labels: dict[str, str] = {}
    pos = 0
    for name, size in zip(SPLIT_NAMES, sizes):
        for k in order[pos : pos + size]:
            labels[recs[int(k)].pano_id] = name
        pos += size
    return labels


def spatial_cell_of(record: ViewpointRecord, cell: float) -> tuple[int, int]:
    x, y = record.pose.location[0], record.pose.location[1]
    return (int(np.floor(x / cell)), int(np.floor(y / cell)))


def split_spatial(records, spec: SplitSpec) -> dict[str, str]:
    """Assign whole spatial cells to splits so no cell is divided."""
    if spec.kind != "spatial":
        raise DomainError("split_spatial needs a spec with kind='spatial'")
    recs = _eligible(records)
    cells = sorted({spatial_cell_of(r, spec.spatial_cell) for r in recs})
    order = np.random.default_rng(spec.seed).permutation(len(cells))
    sizes = _partition_sizes(len(cells), spec.fractions)
    cell_label: dict[tuple[int, int], str] = {}
    pos = 0
    for name, size in zip(SPLIT_NAMES, sizes):
        for k in order[pos : pos + size]:
            cell_label[cells[int(k)]] = name
        pos += size
    return {r.pano_id: cell_label[spatial_cell_of(r, spec.spatial_cell)] for r in recs}


def build_manifest(records, products_dir, labels=None, quality_ids=None) -> dict:
    """Manifest of every rendered view product with split and quality flags.

    A view counts as an entry when all five product files exist; otherwise it
    is listed under "missing". The quality-pass ratio is computed over the
    present entries.
    """
    root = Path(products_dir)
    entries = []
    missing = []
    n_quality = 0
    for rec in records:
        for k in range(8):
            view_id = f"{rec.pano_id}_{k}"
            paths = {s: root / f"{view_id}_{s}" for s in PRODUCT_SUFFIXES}
            absent = [s for s, p in paths.items() if not p.exists()]
            if absent:
                missing.append({"view_id": view_id, "absent": absent})
                continue
            if quality_ids is not None:
                ok = view_id in quality_ids
            else:
                ok = rec.quality_ok
            n_quality += int(ok)
            entries.append(
                {
                    "view_id": view_id,
                    "pano_id": rec.pano_id,
                    "view_index": k,
                    "yaw_deg": 45.0 * k,
                    "split": labels.get(rec.pano_id) if labels else None,
                    "quality_ok": ok,
                    "products": {s: str(p) for s, p in paths.items()},
                }
            )
    ratio = n_quality / len(entries) if entries else 0.0
    return {
        "entries": entries,
        "missing": missing,
        "quality_pass_ratio": ratio,
        "n_entries": len(entries),
    }


def load_quality_list(path) -> set[str]:
    """Newline-delimited view ids, human curated."""
    with open(path, "r", encoding="utf-8") as fh:
        return {line.strip() for line in fh if line.strip()}


def annotation_count_stats(records) -> dict:
    counts = [r.n_annotations for r in records]
    hist: dict[int, int] = {}
    for c in counts:
        hist[c] = hist.get(c, 0) + 1
    if not counts:
        return {"histogram": {}, "min": None, "median": None, "max": None}
    v = np.sort(np.asarray(counts))
    median = int(v[max(int(np.ceil(0.5 * v.size)), 1) - 1])
    return {"histogram": hist, "min": int(v[0]), "median": median, "max": int(v[-1])}


def compute_sil(pred_depth, gt_depth, mask=None) -> float:
    """Scale-invariant log error: var of (log pred - log gt) over valid pixels."""
    pred = np.asarray(pred_depth, dtype=float)
    gt = np.asarray(gt_depth, dtype=float)
    valid = np.isfinite(pred) & np.isfinite(gt) & (pred > 0) & (gt > 0)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    if not valid.any():
        raise DomainError("no valid pixels for the scale-invariant error")
    d = np.log(pred[valid]) - np.log(gt[valid])
    return float(np.mean(d**2) - np.mean(d) ** 2)


def save_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in records], fh, indent=1)


def load_records(path) -> list[ViewpointRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return [ViewpointRecord.from_dict(d) for d in json.load(fh)]
