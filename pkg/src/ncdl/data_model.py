"""Core records shared across the engine: datasets, boxes, heads, labels."""

from dataclasses import dataclass, field

import numpy as np

# COCO-style area-group thresholds (pixels^2).
AREA_SMALL_MAX = 32.0 ** 2
AREA_MEDIUM_MAX = 96.0 ** 2

AREA_GROUPS = ("small", "medium", "large")


def area_group_of(area: float) -> str:
    if area < AREA_SMALL_MAX:
        return "small"
    if area < AREA_MEDIUM_MAX:
        return "medium"
    return "large"


def box_area(box) -> float:
    x1, y1, x2, y2 = box
    return max(0.0, x2 - x1) * max(0.0, y2 - y1)


@dataclass(frozen=True)
class ClassVocabulary:
    """Known class names plus the number of novel slots to discover."""

    known_names: tuple
    num_novel: int

    def __post_init__(self):
        if len(self.known_names) < 1:
            raise ValueError("need at least one known class")
        if self.num_novel < 1:
            raise ValueError("need at least one novel slot")
        if len(set(self.known_names)) != len(self.known_names):
            raise ValueError("known class names must be unique")
        object.__setattr__(self, "known_names", tuple(self.known_names))

    @property
    def num_known(self) -> int:
        return len(self.known_names)

    @property
    def num_classes(self) -> int:
        return self.num_known + self.num_novel

    @property
    def background_index(self) -> int:
        # Extra slot appended during the supervised bootstrap only.
        return self.num_known


@dataclass(frozen=True)
class ProposalRecord:
    """One region proposal; features live in the owning dataset's arrays."""

    image_id: str
    box: tuple  # (x1, y1, x2, y2) in pixels
    objectness: float
    gt_class: int | None = None  # known-class index, only on labeled images
    labeled_image: bool = False


@dataclass
class FeatureDataset:
    """Proposals plus their two per-view feature matrices (row i = proposal i)."""

    known_class_names: list
    proposals: list  # list[ProposalRecord]
    features_view1: np.ndarray  # (P, F) float32
    features_view2: np.ndarray  # (P, F) float32

    @property
    def num_proposals(self) -> int:
        return len(self.proposals)

    @property
    def feature_dim(self) -> int:
        return int(self.features_view1.shape[1]) if self.features_view1.ndim == 2 else 0

    @property
    def image_ids(self) -> list:
        seen, out = set(), []
        for rec in self.proposals:
            if rec.image_id not in seen:
                seen.add(rec.image_id)
                out.append(rec.image_id)
        return out


@dataclass(frozen=True)
class GroundTruthBox:
    box: tuple  # (x1, y1, x2, y2)
    class_name: str
    area_group: str


@dataclass
class GroundTruthSet:
    """Evaluation annotations grouped by image; vocabulary is a superset of the known names."""

    by_image: dict  # image_id -> list[GroundTruthBox]
    class_names: list

    def num_annotations(self) -> int:
        return sum(len(v) for v in self.by_image.values())


@dataclass(frozen=True)
class Detection:
    box: tuple
    class_index: int  # slot in [0, C)
    class_name: str  # ground-truth name after mapping
    confidence: float


@dataclass
class DetectionSet:
    by_image: dict = field(default_factory=dict)  # image_id -> list[Detection]

    def num_detections(self) -> int:
        return sum(len(v) for v in self.by_image.values())


@dataclass
class HeadParameters:
    """Weights of the known linear head and the novel projector + cosine classifier.

    known_weights is (K, F) after the background row is dropped; (K+1, F)
    during the supervised bootstrap. projector_layers chains F -> hidden... -> D
    with ReLU between affine layers; empty list means the cosine classifier
    acts on raw features (D = F).
    """

    known_weights: np.ndarray
    projector_layers: list  # list[(weight (out, in), bias (out,))]
    novel_prototypes: np.ndarray  # (N, D)
    cosine_temperature: float

    def __post_init__(self):
        if self.cosine_temperature <= 0:
            raise ValueError("cosine_temperature must be positive")
        dim = self.known_weights.shape[1]
        for w, b in self.projector_layers:
            if w.shape[1] != dim:
                raise ValueError(f"projector layer expects input dim {w.shape[1]}, got {dim}")
            if b.shape != (w.shape[0],):
                raise ValueError("bias shape must match layer output")
            dim = w.shape[0]
        if self.novel_prototypes.shape[1] != dim:
            raise ValueError(
                f"prototype dim {self.novel_prototypes.shape[1]} does not match projector output {dim}"
            )

    @property
    def num_known(self) -> int:
        return int(self.known_weights.shape[0])

    @property
    def num_novel(self) -> int:
        return int(self.novel_prototypes.shape[0])

    def copy(self) -> "HeadParameters":
        return HeadParameters(
            known_weights=self.known_weights.copy(),
            projector_layers=[(w.copy(), b.copy()) for w, b in self.projector_layers],
            novel_prototypes=self.novel_prototypes.copy(),
            cosine_temperature=self.cosine_temperature,
        )


@dataclass
class PseudoLabelBatch:
    """Soft target distributions over all C classes for one batch of proposals."""

    labels: np.ndarray  # (B, C), rows sum to 1

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError("labels must be a 2-d matrix")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("pseudo-labels must be non-negative")
        if self.labels.size:
            rowsums = self.labels.sum(axis=1)
            if np.abs(rowsums - 1.0).max() > 1e-6:
                raise ValueError("pseudo-label rows must sum to 1")


def validate_dataset(dataset: FeatureDataset) -> list:
    """Return a list of human-readable invariant violations (empty = valid)."""
    violations = []
    v1, v2 = dataset.features_view1, dataset.features_view2
    if v1.ndim != 2 or v2.ndim != 2:
        violations.append("feature arrays must be 2-d (proposals x dim)")
        return violations
    if v1.shape[1] != v2.shape[1]:
        violations.append(
            f"view feature dims differ: view1 has {v1.shape[1]}, view2 has {v2.shape[1]}"
        )
    n = len(dataset.proposals)
    if v1.shape[0] != n:
        violations.append(f"view1 has {v1.shape[0]} rows for {n} proposals")
    if v2.shape[0] != n:
        violations.append(f"view2 has {v2.shape[0]} rows for {n} proposals")
    num_known = len(dataset.known_class_names)
    for i, rec in enumerate(dataset.proposals):
        x1, y1, x2, y2 = rec.box
        if not (x2 > x1 and y2 > y1):
            violations.append(f"proposal {i} ({rec.image_id}): degenerate box {rec.box}")
        if not (0.0 <= rec.objectness <= 1.0):
            violations.append(f"proposal {i} ({rec.image_id}): objectness {rec.objectness} outside [0, 1]")
        if rec.gt_class is not None:
            if not rec.labeled_image:
                violations.append(f"proposal {i} ({rec.image_id}): gt_class set on unlabeled image")
            if not (0 <= rec.gt_class < num_known):
                violations.append(
                    f"proposal {i} ({rec.image_id}): gt_class {rec.gt_class} outside [0, {num_known})"
                )
    return violations
