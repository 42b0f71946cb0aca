"""Synthetic long-tail feature datasets with Gaussian class clusters.

Desk-scale stand-in for detector exports: known + novel classes drawn around
well-separated centers, two noisy views per proposal, and background-like
distractor proposals with no class.
"""

import math
from dataclasses import dataclass

import numpy as np

from .data_model import (
    FeatureDataset,
    GroundTruthBox,
    GroundTruthSet,
    ProposalRecord,
    area_group_of,
    box_area,
)

# box-side ranges per area group; cells on a 6x6 grid of a 1000px canvas
_SIDE_RANGES = ((10, 30), (40, 90), (100, 140))
_GRID_CELL = 150.0
_GRID_COLS = 6


@dataclass(frozen=True)
class SynthSpec:
    feature_dim: int = 20
    num_known: int = 5
    num_novel_true: int = 15
    samples_per_class: int = 200  # head-class size; class c gets ceil(s0 * tail_ratio**c)
    tail_ratio: float = 0.8
    cluster_center_scale: float = 5.0
    within_cluster_stddev: float = 0.3
    view_noise_stddev: float = 0.1
    distractor_fraction: float = 0.15  # relative to the class-sample count
    labeled_fraction: float = 0.5
    proposals_per_image: int = 30
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.tail_ratio <= 1.0):
            raise ValueError("tail_ratio must be in (0, 1]")
        if self.within_cluster_stddev < 0 or self.view_noise_stddev < 0:
            raise ValueError("stddevs must be >= 0")
        if not (0.0 <= self.distractor_fraction <= 1.0):
            raise ValueError("distractor_fraction must be in [0, 1]")
        if not (0.0 <= self.labeled_fraction <= 1.0):
            raise ValueError("labeled_fraction must be in [0, 1]")
        if self.feature_dim < 1 or self.num_known < 1 or self.num_novel_true < 1:
            raise ValueError("feature_dim, num_known and num_novel_true must be >= 1")
        if self.proposals_per_image < 1:
            raise ValueError("proposals_per_image must be >= 1")


def class_sizes(spec: SynthSpec) -> list:
    total = spec.num_known + spec.num_novel_true
    return [int(math.ceil(spec.samples_per_class * spec.tail_ratio**c)) for c in range(total)]


def class_names(spec: SynthSpec) -> list:
    known = [f"known_{i:02d}" for i in range(spec.num_known)]
    novel = [f"novel_{i:02d}" for i in range(spec.num_novel_true)]
    return known + novel


def generate(spec: SynthSpec):
    """Build (FeatureDataset, GroundTruthSet, true_labels); deterministic per seed.

    true_labels maps each proposal row to its class index in class_names
    (-1 for distractors).
    """
    rng = np.random.default_rng(spec.seed)
    names = class_names(spec)
    sizes = class_sizes(spec)

    centers = rng.standard_normal((len(names), spec.feature_dim))
    centers *= spec.cluster_center_scale / np.linalg.norm(centers, axis=1, keepdims=True)

    labels = []
    for c, n in enumerate(sizes):
        labels.extend([c] * n)
    num_class_samples = len(labels)
    num_distractors = int(round(spec.distractor_fraction * num_class_samples))
    labels.extend([-1] * num_distractors)
    labels = np.array(labels, dtype=np.int64)
    total = len(labels)

    view1 = np.empty((total, spec.feature_dim))
    class_part = centers[labels[:num_class_samples]] + spec.within_cluster_stddev * rng.standard_normal(
        (num_class_samples, spec.feature_dim)
    )
    view1[:num_class_samples] = class_part
    if num_distractors:
        view1[num_class_samples:] = rng.uniform(
            -spec.cluster_center_scale, spec.cluster_center_scale, size=(num_distractors, spec.feature_dim)
        )
    view2 = view1 + spec.view_noise_stddev * rng.standard_normal((total, spec.feature_dim))

    # scatter proposals over images; the first labeled_fraction of images carry annotations
    order = rng.permutation(total)
    num_images = max(1, math.ceil(total / spec.proposals_per_image))
    num_labeled = int(round(spec.labeled_fraction * num_images))

    proposals: list = [None] * total
    gt_by_image: dict = {}
    for img in range(num_images):
        image_id = f"img_{img:04d}"
        gt_by_image[image_id] = []
        rows = order[img * spec.proposals_per_image : (img + 1) * spec.proposals_per_image]
        labeled = img < num_labeled
        for slot, row in enumerate(rows):
            box = _place_box(slot, rng)
            label = int(labels[row])
            is_class = label >= 0
            objectness = float(rng.uniform(0.5, 1.0)) if is_class else float(rng.uniform(0.0, 1.0))
            gt_class = label if (is_class and label < spec.num_known and labeled) else None
            proposals[row] = ProposalRecord(
                image_id=image_id,
                box=box,
                objectness=objectness,
                gt_class=gt_class,
                labeled_image=labeled,
            )
            if is_class:
                gt_by_image[image_id].append(
                    GroundTruthBox(box=box, class_name=names[label], area_group=area_group_of(box_area(box)))
                )

    present = {int(c) for c in labels if c >= 0}
    gt_names = [n for i, n in enumerate(names) if i in present]
    dataset = FeatureDataset(
        known_class_names=names[: spec.num_known],
        proposals=proposals,
        features_view1=view1.astype(np.float32),
        features_view2=view2.astype(np.float32),
    )
    gt = GroundTruthSet(by_image=gt_by_image, class_names=gt_names)
    true_labels = {"class_names": names, "labels": [int(c) for c in labels]}
    return dataset, gt, true_labels


def _place_box(slot: int, rng) -> tuple:
    # one grid cell per proposal keeps boxes in an image disjoint
    r, c = divmod(slot, _GRID_COLS)
    lo, hi = _SIDE_RANGES[int(rng.integers(len(_SIDE_RANGES)))]
    w = float(rng.uniform(lo, hi))
    h = float(rng.uniform(lo, hi))
    x0 = c * _GRID_CELL + float(rng.uniform(0, _GRID_CELL - w))
    y0 = r * _GRID_CELL + float(rng.uniform(0, _GRID_CELL - h))
    return (x0, y0, x0 + w, y0 + h)
