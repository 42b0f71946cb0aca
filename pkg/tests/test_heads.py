import numpy as np
import pytest

from ncdl.data_model import HeadParameters
from ncdl.heads import (
    OptimizerState,
    backward,
    forward_heads,
    forward_known,
    forward_novel,
    init_novel_head,
    sgd_step,
)


def random_params(rng, dim=6, k=3, n=4, widths=(5,), embed=4, tau=0.5):
    layers, protos = init_novel_head(dim, n, widths, embed, rng)
    return HeadParameters(
        known_weights=rng.standard_normal((k, dim)),
        projector_layers=layers,
        novel_prototypes=protos,
        cosine_temperature=tau,
    )


def test_forward_known_identity_rows():
    weights = np.eye(3, 5)
    feats = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
    np.testing.assert_array_equal(forward_known(feats, weights), [[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(forward_known(np.zeros((2, 5)), weights), np.zeros((2, 3)))


def test_forward_known_matches_matmul_oracle():
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((2, 3))
    weights = rng.standard_normal((4, 3))
    expected = np.array([[sum(feats[i, t] * weights[j, t] for t in range(3)) for j in range(4)] for i in range(2)])
    np.testing.assert_allclose(forward_known(feats, weights), expected, rtol=1e-12)


def test_forward_novel_aligned_and_orthogonal():
    protos = np.array([[1.0, 0.0], [0.0, 2.0]])
    params = HeadParameters(
        known_weights=np.zeros((1, 2)),
        projector_layers=[],
        novel_prototypes=protos,
        cosine_temperature=1.0,
    )
    logits, _ = forward_novel(np.array([[3.0, 0.0]]), params)
    assert logits[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert logits[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_prototype_scale_invariance():
    rng = np.random.default_rng(1)
    params = random_params(rng)
    feats = rng.standard_normal((5, 6))
    base, _ = forward_novel(feats, params)
    params.novel_prototypes[2] *= 7.0
    scaled, _ = forward_novel(feats, params)
    np.testing.assert_allclose(scaled[:, 2], base[:, 2], atol=1e-9)


def test_cosine_range():
    rng = np.random.default_rng(2)
    for tau in (0.1, 0.5, 2.0):
        params = random_params(rng, tau=tau)
        logits, _ = forward_novel(rng.standard_normal((30, 6)) * 10, params)
        assert logits.max() <= 1 / tau + 1e-12
        assert logits.min() >= -1 / tau - 1e-12


def test_zero_upstream_gradient():
    rng = np.random.default_rng(3)
    params = random_params(rng)
    feats = rng.standard_normal((4, 6))
    _, cache = forward_novel(feats, params)
    grads = backward(np.zeros((4, 3)), np.zeros((4, 4)), cache, params)
    assert not grads.known_weights.any()
    assert not grads.novel_prototypes.any()
    for gw, gb in grads.projector_layers:
        assert not gw.any() and not gb.any()


def flatten_params(params):
    tensors = [params.known_weights]
    for w, b in params.projector_layers:
        tensors.extend([w, b])
    tensors.append(params.novel_prototypes)
    return tensors


def flatten_grads(grads):
    tensors = [grads.known_weights]
    for w, b in grads.projector_layers:
        tensors.extend([w, b])
    tensors.append(grads.novel_prototypes)
    return tensors


def finite_difference_check(params, feats, rng, step=1e-5, rtol=1e-4):
    """Central differences on L = sum(G * logits) for a fixed random G."""
    b = feats.shape[0]
    c = params.num_known + params.num_novel
    upstream = rng.standard_normal((b, c))

    def loss():
        logits, _ = forward_heads(feats, params, keep_cache=False)
        return float(np.sum(upstream * logits))

    _, cache = forward_novel(feats, params)
    grads = backward(
        upstream[:, : params.num_known], upstream[:, params.num_known :], cache, params
    )
    for tensor, grad in zip(flatten_params(params), flatten_grads(grads)):
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = tensor[idx]
            tensor[idx] = orig + step
            hi = loss()
            tensor[idx] = orig - step
            lo = loss()
            tensor[idx] = orig
            numeric = (hi - lo) / (2 * step)
            denom = max(abs(numeric), abs(grad[idx]), 1e-8)
            assert abs(numeric - grad[idx]) / denom < rtol, (
                f"grad mismatch at {idx}: analytic {grad[idx]}, numeric {numeric}"
            )
            it.iternext()


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    params = random_params(rng, dim=5, k=2, n=3, widths=(4,), embed=3)
    feats = rng.standard_normal((6, 5))
    # keep the instance away from the epsilon guard of the row normalization,
    # where the true derivative is steeper than finite differences can see
    _, cache = forward_novel(feats, params)
    assert cache.embed_norm.min() > 1e-3
    finite_difference_check(params, feats, rng)


def test_backward_without_projector():
    rng = np.random.default_rng(5)
    params = HeadParameters(
        known_weights=rng.standard_normal((2, 4)),
        projector_layers=[],
        novel_prototypes=rng.standard_normal((3, 4)),
        cosine_temperature=0.3,
    )
    finite_difference_check(params, rng.standard_normal((5, 4)), rng)


def test_prototype_gradient_orthogonal_to_row():
    rng = np.random.default_rng(6)
    params = random_params(rng, tau=1.0)
    feats = rng.standard_normal((8, 6))
    _, cache = forward_novel(feats, params)
    grads = backward(np.zeros((8, 3)), rng.standard_normal((8, 4)), cache, params)
    for j in range(params.num_novel):
        dot = float(np.dot(grads.novel_prototypes[j], params.novel_prototypes[j]))
        assert abs(dot) < 1e-8


def test_sgd_zero_lr_keeps_params():
    rng = np.random.default_rng(7)
    params = random_params(rng)
    before = params.copy()
    state = OptimizerState.for_params(params)
    _, cache = forward_novel(rng.standard_normal((3, 6)), params)
    grads = backward(rng.standard_normal((3, 3)), rng.standard_normal((3, 4)), cache, params)
    sgd_step(params, grads, state, lr=0.0)
    np.testing.assert_array_equal(params.known_weights, before.known_weights)
    np.testing.assert_array_equal(params.novel_prototypes, before.novel_prototypes)


def test_sgd_plain_step():
    rng = np.random.default_rng(8)
    params = random_params(rng)
    before = params.copy()
    state = OptimizerState.for_params(params, momentum=0.0, weight_decay=0.0)
    _, cache = forward_novel(rng.standard_normal((3, 6)), params)
    grads = backward(rng.standard_normal((3, 3)), rng.standard_normal((3, 4)), cache, params)
    sgd_step(params, grads, state, lr=0.01)
    np.testing.assert_allclose(
        params.known_weights, before.known_weights - 0.01 * grads.known_weights, rtol=1e-12
    )


def test_sgd_momentum_matches_scalar_unroll():
    params = HeadParameters(
        known_weights=np.array([[1.0]]),
        projector_layers=[],
        novel_prototypes=np.array([[1.0]]),
        cosine_temperature=1.0,
    )
    state = OptimizerState.for_params(params, momentum=0.9)
    from ncdl.heads import HeadGradients

    g1, g2, lr = 0.5, -0.25, 0.1
    for g in (g1, g2):
        grads = HeadGradients(
            known_weights=np.array([[g]]),
            projector_layers=[],
            novel_prototypes=np.array([[0.0]]),
        )
        sgd_step(params, grads, state, lr)
    # hand-unrolled: v1 = g1; p1 = 1 - lr*g1; v2 = 0.9*g1 + g2; p2 = p1 - lr*v2
    v1 = g1
    p1 = 1.0 - lr * v1
    v2 = 0.9 * v1 + g2
    p2 = p1 - lr * v2
    assert params.known_weights[0, 0] == pytest.approx(p2, rel=1e-15)


def test_frozen_known_head_bit_identical():
    rng = np.random.default_rng(9)
    params = random_params(rng)
    frozen = params.known_weights.copy()
    state = OptimizerState.for_params(params)
    for _ in range(5):
        feats = rng.standard_normal((4, 6))
        _, cache = forward_novel(feats, params)
        grads = backward(
            rng.standard_normal((4, 3)),
            rng.standard_normal((4, 4)),
            cache,
            params,
            freeze_known=True,
        )
        assert grads.known_weights is None
        sgd_step(params, grads, state, lr=0.05)
    np.testing.assert_array_equal(params.known_weights, frozen)
