"""Cluster-to-class mapping and detection scoring: Hungarian, NMS, mAP@[.5:.95]."""

from dataclasses import dataclass, field

import numpy as np

from .data_model import AREA_GROUPS, Detection, DetectionSet, area_group_of, box_area
from .heads import forward_heads

IOU_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.96, 0.05), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
DEFAULT_CONF_CUTOFF = 1e-4
DEFAULT_NMS_IOU = 0.5
DEFAULT_MAX_PER_IMAGE = 300
GT_MATCH_IOU = 0.5


def iou(box_a, box_b) -> float:
    """Intersection-over-union of two corner-format boxes."""
    ax1, ay1, ax2, ay2 = box_a
    bx1, by1, bx2, by2 = box_b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return float(inter / union)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """(len(a), len(b)) IoU table for corner-format box arrays."""
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    x1 = np.maximum(boxes_a[:, None, 0], boxes_b[None, :, 0])
    y1 = np.maximum(boxes_a[:, None, 1], boxes_b[None, :, 1])
    x2 = np.minimum(boxes_a[:, None, 2], boxes_b[None, :, 2])
    y2 = np.minimum(boxes_a[:, None, 3], boxes_b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def nms(detections: list, iou_threshold: float = DEFAULT_NMS_IOU) -> list:
    """Greedy suppression of same-class overlaps within one image.

    detections: list of (box, confidence) or objects with .box/.confidence.
    Keeps the highest-confidence box, drops others with IoU strictly above
    the threshold; ties in confidence keep the earlier input index.
    """

    def _box(d):
        return d.box if hasattr(d, "box") else d[0]

    def _conf(d):
        return d.confidence if hasattr(d, "confidence") else d[1]

    order = sorted(range(len(detections)), key=lambda i: (-_conf(detections[i]), i))
    kept, suppressed = [], set()
    for i in order:
        if i in suppressed:
            continue
        kept.append(detections[i])
        for j in order:
            if j == i or j in suppressed:
                continue
            if iou(_box(detections[i]), _box(detections[j])) > iou_threshold:
                suppressed.add(j)
    return kept


def hungarian(cost: np.ndarray) -> tuple[list, float]:
    """Minimum-cost one-to-one assignment over an n x m matrix.

    Shortest-augmenting-path formulation with row/column potentials, O(n^2 m).
    Returns (pairs, total_cost) with min(n, m) (row, col) pairs; ties between
    equally cheap assignments resolve deterministically by ascending scan
    order over rows then columns.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost must be a non-empty 2-d matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    n, m = cost.shape
    if n > m:
        pairs, total = hungarian(cost.T)
        return sorted((r, c) for c, r in pairs), total

    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    match = np.zeros(m + 1, dtype=np.int64)  # match[j] = row assigned to column j (1-based)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta, j1 = INF, -1
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    pairs = sorted((int(match[j]) - 1, j - 1) for j in range(1, m + 1) if match[j])
    total = float(sum(cost[r, c] for r, c in pairs))
    return pairs, total


@dataclass
class ClassMapping:
    """Partial one-to-one map from predicted slot to ground-truth class name."""

    num_classes: int
    assignments: dict = field(default_factory=dict)  # slot -> name

    def __post_init__(self):
        names = list(self.assignments.values())
        if len(set(names)) != len(names):
            raise ValueError("mapping must be injective")

    def name_of(self, slot: int):
        return self.assignments.get(slot)

    def mapped_slots(self) -> list:
        return sorted(self.assignments)

    def to_json(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "assignments": {str(k): v for k, v in sorted(self.assignments.items())},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ClassMapping":
        return cls(
            num_classes=int(doc["num_classes"]),
            assignments={int(k): v for k, v in doc["assignments"].items()},
        )


def classify_gt_boxes(params, dataset, gt) -> tuple[list, int]:
    """Predict a class slot for every annotation via its best-IoU proposal.

    Annotations with no proposal at IoU >= 0.5 are skipped and counted.
    Returns ([(gt_class_name, predicted_slot)], skipped_count).
    """
    rows_by_image: dict = {}
    for row, rec in enumerate(dataset.proposals):
        rows_by_image.setdefault(rec.image_id, []).append(row)

    feat_rows, names = [], []
    skipped = 0
    for image_id, boxes in gt.by_image.items():
        if not boxes:
            continue
        rows = rows_by_image.get(image_id, [])
        if not rows:
            skipped += len(boxes)
            continue
        prop_boxes = np.array([dataset.proposals[r].box for r in rows])
        gt_boxes = np.array([b.box for b in boxes])
        table = iou_matrix(gt_boxes, prop_boxes)
        for g, ann in enumerate(boxes):
            best = int(np.argmax(table[g]))
            if table[g, best] < GT_MATCH_IOU:
                skipped += 1
                continue
            feat_rows.append(rows[best])
            names.append(ann.class_name)
    if not feat_rows:
        return [], skipped
    features = dataset.features_view1[np.array(feat_rows)].astype(np.float64)
    logits, _ = forward_heads(features, params, keep_cache=False)
    slots = np.argmax(logits, axis=1)
    return list(zip(names, (int(s) for s in slots))), skipped


def count_matrix(pairs: list, num_classes: int, gt_class_names: list) -> np.ndarray:
    """Slot-vs-class co-occurrence counts from classify_gt_boxes output."""
    index = {name: i for i, name in enumerate(gt_class_names)}
    counts = np.zeros((num_classes, len(gt_class_names)), dtype=np.int64)
    for name, slot in pairs:
        counts[slot, index[name]] += 1
    return counts


def build_mapping(counts: np.ndarray, gt_class_names: list, known_names: list) -> ClassMapping:
    """Hungarian assignment of novel slots to non-known classes, maximizing counts.

    Known slots keep their own names by construction; novel slots that never
    co-occur with any class stay unmapped (their detections are ignored).
    """
    num_classes = counts.shape[0]
    num_known = len(known_names)
    assignments = {k: name for k, name in enumerate(known_names)}

    novel_slots = list(range(num_known, num_classes))
    candidate_classes = [i for i, n in enumerate(gt_class_names) if n not in set(known_names)]
    if novel_slots and candidate_classes:
        sub = counts[np.ix_(novel_slots, candidate_classes)].astype(np.float64)
        pairs, _ = hungarian(-sub)
        for r, c in pairs:
            if sub[r, c] > 0:
                assignments[novel_slots[r]] = gt_class_names[candidate_classes[c]]
    return ClassMapping(num_classes=num_classes, assignments=assignments)


def postprocess(
    probs: np.ndarray,
    boxes: list,
    image_ids: list,
    mapping: ClassMapping,
    conf_cutoff: float = DEFAULT_CONF_CUTOFF,
    nms_iou: float = DEFAULT_NMS_IOU,
    max_per_image: int = DEFAULT_MAX_PER_IMAGE,
) -> DetectionSet:
    """Turn per-proposal class distributions into a pruned DetectionSet.

    One candidate per (proposal, mapped class); unmapped slots and confidences
    below the cutoff are dropped, then class-wise NMS and a per-image top-k.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[0] != len(boxes) or len(boxes) != len(image_ids):
        raise ValueError("probs, boxes and image_ids must align")
    mapped = mapping.mapped_slots()

    by_image: dict = {}
    for i, image_id in enumerate(image_ids):
        by_image.setdefault(image_id, []).append(i)

    out = DetectionSet()
    for image_id, rows in by_image.items():
        candidates: dict = {}
        for i in rows:
            for slot in mapped:
                conf = float(probs[i, slot])
                if conf < conf_cutoff:
                    continue
                det = Detection(
                    box=tuple(boxes[i]),
                    class_index=slot,
                    class_name=mapping.name_of(slot),
                    confidence=conf,
                )
                candidates.setdefault(slot, []).append(det)
        survivors = []
        for slot in sorted(candidates):
            survivors.extend(nms(candidates[slot], nms_iou))
        survivors.sort(key=lambda d: -d.confidence)
        out.by_image[image_id] = survivors[:max_per_image]
    return out


def evaluate_map(detections: DetectionSet, gt, known_names: list) -> dict:
    """COCO-style mAP@[.5:.95] with 101-point interpolation, split known/novel/all.

    Per class and IoU threshold, detections are greedily matched in descending
    confidence to unmatched same-class ground truth. Area-group scores use
    ignore semantics: out-of-group ground truth never counts, and unmatched
    detections outside the group are excluded rather than penalized.
    """
    known_set = set(known_names)
    gt_classes = sorted({b.class_name for boxes in gt.by_image.values() for b in boxes})
    for dets in detections.by_image.values():
        for d in dets:
            if d.class_name not in gt_classes and d.class_name not in known_set:
                raise ValueError(f"detection class {d.class_name!r} not in the evaluation vocabulary")

    # per (class, image): detections in canonical confidence order, gt boxes, IoU table
    def _canonical(dets):
        return sorted(dets, key=lambda d: (-d.confidence, d.box))

    per_class = {name: {} for name in gt_classes}
    for image_id, boxes in gt.by_image.items():
        for name in gt_classes:
            cls_gt = [b for b in boxes if b.class_name == name]
            cls_dt = _canonical(d for d in detections.by_image.get(image_id, []) if d.class_name == name)
            if not cls_gt and not cls_dt:
                continue
            table = (
                iou_matrix([d.box for d in cls_dt], [b.box for b in cls_gt])
                if cls_gt and cls_dt
                else np.zeros((len(cls_dt), len(cls_gt)))
            )
            per_class[name][image_id] = (cls_dt, cls_gt, table)
    for image_id, dets in detections.by_image.items():
        for d in dets:
            if d.class_name in per_class and image_id not in per_class[d.class_name]:
                cls_dt = _canonical(x for x in detections.by_image[image_id] if x.class_name == d.class_name)
                per_class[d.class_name][image_id] = (cls_dt, [], np.zeros((len(cls_dt), 0)))

    area_filters = {"all": None, "small": "small", "medium": "medium", "large": "large"}
    ap = {
        name: {a: np.full(len(IOU_THRESHOLDS), np.nan) for a in area_filters}
        for name in gt_classes
    }
    for name in gt_classes:
        for area_key, area in area_filters.items():
            for t_idx, thr in enumerate(IOU_THRESHOLDS):
                ap[name][area_key][t_idx] = _class_ap(per_class[name], thr, area)

    def finite_mean(values) -> float:
        vals = [v for v in values if not np.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def group_scores(class_list):
        scores = {}
        for area_key in area_filters:
            scores[area_key] = finite_mean(finite_mean(ap[n][area_key]) for n in class_list)
        t50 = IOU_THRESHOLDS.index(0.50)
        t75 = IOU_THRESHOLDS.index(0.75)
        for label, t_idx in (("mAP50", t50), ("mAP75", t75)):
            scores[label] = finite_mean(ap[n]["all"][t_idx] for n in class_list)
        return {
            "mAP": scores["all"],
            "mAP50": scores["mAP50"],
            "mAP75": scores["mAP75"],
            "mAP_s": scores["small"],
            "mAP_m": scores["medium"],
            "mAP_l": scores["large"],
            "per_class": {n: finite_mean(ap[n]["all"]) for n in class_list},
        }

    known_classes = [n for n in gt_classes if n in known_set]
    novel_classes = [n for n in gt_classes if n not in known_set]
    return {
        "all": group_scores(gt_classes),
        "known": group_scores(known_classes),
        "novel": group_scores(novel_classes),
    }


def _class_ap(images: dict, thr: float, area) -> float:
    """AP for one class at one IoU threshold, optionally restricted to an area group."""
    records = []  # (confidence, order, is_tp)
    npig = 0
    order = 0
    for image_id in sorted(images):
        cls_dt, cls_gt, table = images[image_id]
        gt_ignored = [area is not None and b.area_group != area for b in cls_gt]
        npig += sum(1 for ig in gt_ignored if not ig)
        # consider real ground truth before ignored ground truth
        gt_order = sorted(range(len(cls_gt)), key=lambda g: gt_ignored[g])
        matched = [False] * len(cls_gt)
        for d_idx, det in enumerate(cls_dt):
            best, best_iou = -1, thr
            for g in gt_order:
                if matched[g]:
                    continue
                if best >= 0 and not gt_ignored[best] and gt_ignored[g]:
                    break  # a real match exists; do not trade it for an ignored one
                if table[d_idx, g] >= best_iou:
                    best_iou = table[d_idx, g]
                    best = g
            order += 1
            if best >= 0:
                matched[best] = True
                if gt_ignored[best]:
                    continue  # matched an out-of-group gt: excluded
                records.append((det.confidence, order, True))
            else:
                if area is not None and area_group_of(box_area(det.box)) != area:
                    continue  # unmatched detection outside the group: excluded
                records.append((det.confidence, order, False))
    if npig == 0:
        return float("nan")
    if not records:
        return 0.0
    records.sort(key=lambda r: (-r[0], r[1]))
    tp = np.cumsum([1 if r[2] else 0 for r in records])
    fp = np.cumsum([0 if r[2] else 1 for r in records])
    recall = tp / npig
    precision = tp / np.maximum(tp + fp, 1)
    # precision envelope sampled at 101 recall points
    interp = np.zeros_like(RECALL_POINTS)
    for i, r in enumerate(RECALL_POINTS):
        mask = recall >= r - 1e-12
        interp[i] = precision[mask].max() if mask.any() else 0.0
    return float(interp.mean())


def predict_slots(params, features: np.ndarray) -> np.ndarray:
    """Argmax class slot of the concatenated softmax for each feature row."""
    logits, _ = forward_heads(np.asarray(features, dtype=np.float64), params, keep_cache=False)
    return np.argmax(logits, axis=1)


def cluster_accuracy(pred_slots: np.ndarray, true_labels: dict, mapping: ClassMapping, known_names: list) -> dict:
    """Fraction of class-bearing proposals whose mapped slot names their true class."""
    names = true_labels["class_names"]
    labels = true_labels["labels"]
    known_set = set(known_names)
    hits = {"known": 0, "novel": 0}
    totals = {"known": 0, "novel": 0}
    for slot, label in zip(pred_slots, labels):
        if label < 0:
            continue
        true_name = names[label]
        group = "known" if true_name in known_set else "novel"
        totals[group] += 1
        if mapping.name_of(int(slot)) == true_name:
            hits[group] += 1
    out = {}
    for group in ("known", "novel"):
        out[group] = hits[group] / totals[group] if totals[group] else float("nan")
        out[f"{group}_count"] = totals[group]
    return out
