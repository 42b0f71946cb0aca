"""Convert detector exports (per-view feature arrays + proposal metadata) to RFD1.

The adapter only reshapes and writes; it never touches a model. Feature arrays
arrive as .npy files (row-major float32 with the shape in the header), proposal
metadata as a CSV table, and annotations as detection-annotation JSON whose
categories define the known-class vocabulary. Output is a directory holding
manifest.json, proposals.jsonl, features_view{1,2}.bin and a copy of the
annotations, exactly as the discovery engine reads them.
"""

import csv
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CORNER_COLUMNS = ("x1", "y1", "x2", "y2")
XYWH_COLUMNS = ("x", "y", "w", "h")
BASE_COLUMNS = ("image_id", "objectness", "gt_class", "labeled_image")


class ExportError(ValueError):
    pass


@dataclass(frozen=True)
class ExportJob:
    features_view1: str
    features_view2: str
    metadata: str
    annotations: str
    out_dir: str
    xywh: bool = False


def export(job: ExportJob) -> Path:
    """Run the conversion; returns the output directory path."""
    v1 = _load_features(job.features_view1)
    v2 = _load_features(job.features_view2)
    if v1.shape != v2.shape:
        raise ExportError(f"view shapes differ: {v1.shape} vs {v2.shape}")

    categories = _load_categories(job.annotations)
    known_names = [name for _, name in categories]
    cat_index = {cat_id: i for i, (cat_id, _) in enumerate(categories)}
    rows = _load_metadata(job.metadata, job.xywh, cat_index)
    if len(rows) != v1.shape[0]:
        raise ExportError(f"metadata has {len(rows)} rows, feature arrays have {v1.shape[0]}")

    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image_ids = []
    seen = set()
    for row in rows:
        if row["image_id"] not in seen:
            seen.add(row["image_id"])
            image_ids.append(row["image_id"])

    manifest = {
        "format_version": "RFD1",
        "feature_dim": int(v1.shape[1]),
        "num_proposals": int(v1.shape[0]),
        "num_images": len(image_ids),
        "known_class_names": known_names,
        "byte_order": "little-endian",
        "features_view1": "features_view1.bin",
        "features_view2": "features_view2.bin",
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(out / "proposals.jsonl", "w", encoding="utf-8") as fh:
        for i, row in enumerate(rows):
            fh.write(json.dumps({**row, "row": i}) + "\n")
    with open(out / "features_view1.bin", "wb") as fh:
        fh.write(v1.astype("<f4", copy=False).tobytes(order="C"))
    with open(out / "features_view2.bin", "wb") as fh:
        fh.write(v2.astype("<f4", copy=False).tobytes(order="C"))
    shutil.copyfile(job.annotations, out / "ground_truth.json")
    return out


def _load_features(path) -> np.ndarray:
    try:
        arr = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise ExportError(f"{path}: cannot read feature array ({exc})") from exc
    if arr.ndim != 2:
        raise ExportError(f"{path}: expected a 2-d array, got shape {arr.shape}")
    return np.ascontiguousarray(arr, dtype=np.float32)


def _load_categories(path) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except Exception as exc:
        raise ExportError(f"{path}: cannot read annotations ({exc})") from exc
    cats = sorted((int(c["id"]), c["name"]) for c in doc.get("categories", []))
    if not cats:
        raise ExportError(f"{path}: annotation JSON declares no categories")
    image_ids = {str(img["id"]) for img in doc.get("images", [])}
    for ann in doc.get("annotations", []):
        if str(ann["image_id"]) not in image_ids:
            raise ExportError(f"annotation {ann.get('id')} references unknown image {ann['image_id']!r}")
    return cats


def _load_metadata(path, xywh: bool, cat_index: dict) -> list:
    box_cols = XYWH_COLUMNS if xywh else CORNER_COLUMNS
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in (*BASE_COLUMNS, *box_cols) if c not in (reader.fieldnames or [])]
        if missing:
            raise ExportError(f"{path}: missing metadata columns {missing} (xywh={xywh})")
        for line_no, rec in enumerate(reader, start=2):
            try:
                coords = [float(rec[c]) for c in box_cols]
                if xywh:
                    x, y, w, h = coords
                    box = [x, y, x + w, y + h]
                else:
                    box = coords
                gt_raw = (rec["gt_class"] or "").strip()
                if gt_raw:
                    gt_id = int(gt_raw)
                    if gt_id not in cat_index:
                        raise ExportError(
                            f"{path}:{line_no}: gt_class {gt_id} is not an annotation category id"
                        )
                    gt = cat_index[gt_id]
                else:
                    gt = None
                labeled = rec["labeled_image"].strip().lower() in ("1", "true", "yes")
                rows.append(
                    {
                        "image_id": rec["image_id"],
                        "box": box,
                        "objectness": float(rec["objectness"]),
                        "gt_class": gt,
                        "labeled_image": labeled,
                    }
                )
            except ExportError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise ExportError(f"{path}:{line_no}: unparseable metadata row ({exc})") from exc
    return rows
