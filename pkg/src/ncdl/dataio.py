"""On-disk formats: RFD1 feature datasets, annotation JSON, checkpoints, reports."""

import json
from pathlib import Path

import numpy as np

from .data_model import (
    FeatureDataset,
    GroundTruthBox,
    GroundTruthSet,
    HeadParameters,
    ProposalRecord,
    area_group_of,
    box_area,
)

FORMAT_VERSION = "RFD1"
MANIFEST_NAME = "manifest.json"
PROPOSALS_NAME = "proposals.jsonl"
FEATURES_V1_NAME = "features_view1.bin"
FEATURES_V2_NAME = "features_view2.bin"


class DatasetFormatError(ValueError):
    """Raised when an on-disk dataset is malformed or unsupported."""


def write_dataset(dataset: FeatureDataset, directory) -> None:
    """Write manifest.json, proposals.jsonl and the two raw f32 feature files."""
    v1 = np.ascontiguousarray(dataset.features_view1, dtype=np.float32)
    v2 = np.ascontiguousarray(dataset.features_view2, dtype=np.float32)
    n = len(dataset.proposals)
    if v1.shape != v2.shape:
        raise DatasetFormatError(f"view shapes differ: {v1.shape} vs {v2.shape}")
    if v1.shape[0] != n:
        raise DatasetFormatError(f"{v1.shape[0]} feature rows for {n} proposals")

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    feature_dim = int(v1.shape[1]) if v1.ndim == 2 else 0
    manifest = {
        "format_version": FORMAT_VERSION,
        "feature_dim": feature_dim,
        "num_proposals": n,
        "num_images": len(dataset.image_ids),
        "known_class_names": list(dataset.known_class_names),
        "byte_order": "little-endian",
        "features_view1": FEATURES_V1_NAME,
        "features_view2": FEATURES_V2_NAME,
    }
    write_json(manifest, directory / MANIFEST_NAME)
    with open(directory / PROPOSALS_NAME, "w", encoding="utf-8") as fh:
        for row, rec in enumerate(dataset.proposals):
            obj = {
                "image_id": rec.image_id,
                "box": [float(c) for c in rec.box],
                "objectness": float(rec.objectness),
                "gt_class": rec.gt_class,
                "labeled_image": rec.labeled_image,
                "row": row,
            }
            fh.write(json.dumps(obj) + "\n")
    _write_f32(v1, directory / FEATURES_V1_NAME)
    _write_f32(v2, directory / FEATURES_V2_NAME)


def read_dataset(directory) -> FeatureDataset:
    """Load an RFD1 directory; rejects unknown versions and truncated feature files."""
    directory = Path(directory)
    manifest = read_json(directory / MANIFEST_NAME)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version!r} (expected {FORMAT_VERSION!r})")
    n = int(manifest["num_proposals"])
    feature_dim = int(manifest["feature_dim"])

    proposals = []
    with open(directory / PROPOSALS_NAME, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            proposals.append(
                ProposalRecord(
                    image_id=obj["image_id"],
                    box=tuple(obj["box"]),
                    objectness=obj["objectness"],
                    gt_class=obj["gt_class"],
                    labeled_image=obj["labeled_image"],
                )
            )
    if len(proposals) != n:
        raise DatasetFormatError(f"manifest declares {n} proposals, found {len(proposals)}")

    v1 = _read_f32(directory / manifest["features_view1"], n, feature_dim)
    v2 = _read_f32(directory / manifest["features_view2"], n, feature_dim)
    return FeatureDataset(
        known_class_names=list(manifest["known_class_names"]),
        proposals=proposals,
        features_view1=v1,
        features_view2=v2,
    )


def _write_f32(array: np.ndarray, path: Path) -> None:
    with open(path, "wb") as fh:
        fh.write(array.astype("<f4", copy=False).tobytes(order="C"))


def _read_f32(path: Path, rows: int, dim: int) -> np.ndarray:
    expected = rows * dim * 4
    data = Path(path).read_bytes()
    if len(data) != expected:
        raise DatasetFormatError(
            f"{path}: expected {expected} bytes ({rows} x {dim} f32), found {len(data)}"
        )
    return np.frombuffer(data, dtype="<f4").reshape(rows, dim).copy()


def read_ground_truth(path) -> GroundTruthSet:
    """Load detection-annotation JSON (images/annotations/categories, bbox = x,y,w,h)."""
    doc = read_json(path)
    image_ids = {str(img["id"]) for img in doc.get("images", [])}
    categories = {int(c["id"]): c["name"] for c in doc.get("categories", [])}
    by_image = {img_id: [] for img_id in image_ids}
    for ann in doc.get("annotations", []):
        img_id = str(ann["image_id"])
        if img_id not in image_ids:
            raise DatasetFormatError(
                f"annotation {ann.get('id')} references unknown image {img_id!r}"
            )
        x, y, w, h = ann["bbox"]
        box = (float(x), float(y), float(x + w), float(y + h))
        if "category_id" in ann:
            name = categories[int(ann["category_id"])]
        else:
            name = ann["category_name"]
        by_image[img_id].append(
            GroundTruthBox(box=box, class_name=name, area_group=area_group_of(box_area(box)))
        )
    class_names = [categories[k] for k in sorted(categories)]
    if not class_names:
        # fall back to names seen in annotations
        seen = []
        for boxes in by_image.values():
            for b in boxes:
                if b.class_name not in seen:
                    seen.append(b.class_name)
        class_names = seen
    return GroundTruthSet(by_image=by_image, class_names=class_names)


def write_ground_truth(gt: GroundTruthSet, path) -> None:
    """Emit annotations in the detection-annotation JSON layout read back above."""
    categories = [{"id": i, "name": name} for i, name in enumerate(gt.class_names)]
    cat_id = {name: i for i, name in enumerate(gt.class_names)}
    images = [{"id": image_id} for image_id in sorted(gt.by_image)]
    annotations = []
    ann_id = 0
    for image_id in sorted(gt.by_image):
        for box in gt.by_image[image_id]:
            x1, y1, x2, y2 = box.box
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "bbox": [x1, y1, x2 - x1, y2 - y1],
                    "category_id": cat_id[box.class_name],
                }
            )
            ann_id += 1
    write_json({"images": images, "annotations": annotations, "categories": categories}, path)


# -- checkpoints: manifest JSON + one little-endian f64 tensor blob --

CHECKPOINT_MANIFEST = "checkpoint.json"
CHECKPOINT_TENSORS = "tensors.bin"


def save_checkpoint(params: HeadParameters, directory, extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = [("known_weights", params.known_weights)]
    for i, (w, b) in enumerate(params.projector_layers):
        tensors.append((f"projector.{i}.weight", w))
        tensors.append((f"projector.{i}.bias", b))
    tensors.append(("novel_prototypes", params.novel_prototypes))

    entries, blobs, offset = [], [], 0
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        blobs.append(arr.tobytes(order="C"))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += len(blobs[-1])
    manifest = {
        "cosine_temperature": params.cosine_temperature,
        "num_projector_layers": len(params.projector_layers),
        "tensors": entries,
        "total_bytes": offset,
    }
    if extra:
        manifest["extra"] = extra
    write_json(manifest, directory / CHECKPOINT_MANIFEST)
    with open(directory / CHECKPOINT_TENSORS, "wb") as fh:
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(directory) -> tuple[HeadParameters, dict]:
    directory = Path(directory)
    manifest = read_json(directory / CHECKPOINT_MANIFEST)
    data = (directory / CHECKPOINT_TENSORS).read_bytes()
    if len(data) != manifest["total_bytes"]:
        raise DatasetFormatError(
            f"checkpoint tensors: expected {manifest['total_bytes']} bytes, found {len(data)}"
        )
    arrays = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=start).reshape(shape).copy()
        arrays[entry["name"]] = arr
    layers = []
    for i in range(manifest["num_projector_layers"]):
        layers.append((arrays[f"projector.{i}.weight"], arrays[f"projector.{i}.bias"]))
    params = HeadParameters(
        known_weights=arrays["known_weights"],
        projector_layers=layers,
        novel_prototypes=arrays["novel_prototypes"],
        cosine_temperature=manifest["cosine_temperature"],
    )
    return params, manifest.get("extra", {})


def write_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_jsonl(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def read_jsonl(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
