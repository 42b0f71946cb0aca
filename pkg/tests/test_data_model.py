import numpy as np
import pytest

from ncdl.data_model import (
    ClassVocabulary,
    FeatureDataset,
    HeadParameters,
    ProposalRecord,
    PseudoLabelBatch,
    area_group_of,
    validate_dataset,
)


def make_dataset(n=4, dim=8, **overrides):
    rng = np.random.default_rng(0)
    proposals = [
        ProposalRecord(
            image_id=f"img_{i % 2}",
            box=(0.0, 0.0, 10.0 + i, 12.0),
            objectness=0.5,
            gt_class=0 if i == 0 else None,
            labeled_image=i == 0,
        )
        for i in range(n)
    ]
    fields = dict(
        known_class_names=["cat", "dog"],
        proposals=proposals,
        features_view1=rng.standard_normal((n, dim)).astype(np.float32),
        features_view2=rng.standard_normal((n, dim)).astype(np.float32),
    )
    fields.update(overrides)
    return FeatureDataset(**fields)


def test_vocabulary_counts():
    vocab = ClassVocabulary(known_names=("a", "b", "c"), num_novel=5)
    assert vocab.num_known == 3
    assert vocab.num_classes == 8
    assert vocab.background_index == 3


def test_vocabulary_rejects_duplicates():
    with pytest.raises(ValueError):
        ClassVocabulary(known_names=("a", "a"), num_novel=1)
    with pytest.raises(ValueError):
        ClassVocabulary(known_names=("a",), num_novel=0)


def test_area_groups():
    assert area_group_of(900) == "small"  # 900 < 32^2 = 1024
    assert area_group_of(1024) == "medium"
    assert area_group_of(96 * 96) == "large"


def test_validate_wellformed():
    assert validate_dataset(make_dataset()) == []


def test_validate_degenerate_box():
    ds = make_dataset()
    ds.proposals[2] = ProposalRecord(image_id="img_0", box=(5.0, 0.0, 5.0, 12.0), objectness=0.5)
    violations = validate_dataset(ds)
    assert len(violations) == 1
    assert "proposal 2" in violations[0] and "degenerate" in violations[0]


def test_validate_view_dim_mismatch():
    ds = make_dataset()
    ds.features_view2 = np.zeros((4, 16), dtype=np.float32)
    violations = validate_dataset(ds)
    assert any("view feature dims differ" in v for v in violations)


def test_validate_gt_on_unlabeled_image():
    ds = make_dataset()
    ds.proposals[1] = ProposalRecord(
        image_id="img_1", box=(0.0, 0.0, 5.0, 5.0), objectness=0.5, gt_class=1, labeled_image=False
    )
    assert any("unlabeled image" in v for v in validate_dataset(ds))


def test_pseudo_label_rows_must_normalize():
    PseudoLabelBatch(labels=np.full((3, 4), 0.25))
    with pytest.raises(ValueError):
        PseudoLabelBatch(labels=np.full((3, 4), 0.3))
    with pytest.raises(ValueError):
        PseudoLabelBatch(labels=np.array([[1.5, -0.5]]))


def test_head_parameters_shape_chain():
    params = HeadParameters(
        known_weights=np.zeros((2, 8)),
        projector_layers=[(np.zeros((6, 8)), np.zeros(6)), (np.zeros((4, 6)), np.zeros(4))],
        novel_prototypes=np.zeros((3, 4)),
        cosine_temperature=0.1,
    )
    assert params.num_known == 2 and params.num_novel == 3
    with pytest.raises(ValueError):
        HeadParameters(
            known_weights=np.zeros((2, 8)),
            projector_layers=[(np.zeros((6, 8)), np.zeros(6))],
            novel_prototypes=np.zeros((3, 4)),  # projector output is 6, not 4
            cosine_temperature=0.1,
        )
    with pytest.raises(ValueError):
        HeadParameters(
            known_weights=np.zeros((2, 8)),
            projector_layers=[],
            novel_prototypes=np.zeros((3, 8)),
            cosine_temperature=0.0,
        )
