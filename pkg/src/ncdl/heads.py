"""Forward/backward passes for the known linear head and the novel cosine head."""

from dataclasses import dataclass, field

import numpy as np

from .data_model import HeadParameters

NORM_EPS = 1e-8


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


@dataclass
class ForwardCache:
    """Intermediates retained by forward_novel for exact backpropagation."""

    features: np.ndarray
    layer_inputs: list  # input activation of each projector layer
    preacts: list  # pre-activation of each projector layer
    embed: np.ndarray  # raw projector output, before normalization
    unit_embed: np.ndarray
    embed_norm: np.ndarray
    embed_denom: np.ndarray
    unit_prototypes: np.ndarray
    proto_norm: np.ndarray
    proto_denom: np.ndarray


@dataclass
class HeadGradients:
    known_weights: np.ndarray | None
    projector_layers: list  # [(dW, db)] aligned with params.projector_layers
    novel_prototypes: np.ndarray


@dataclass
class OptimizerState:
    """SGD momentum buffers mirroring every parameter tensor."""

    momentum: float
    weight_decay: float
    vel_known: np.ndarray
    vel_layers: list
    vel_prototypes: np.ndarray

    @classmethod
    def for_params(cls, params: HeadParameters, momentum: float = 0.9, weight_decay: float = 0.0):
        return cls(
            momentum=momentum,
            weight_decay=weight_decay,
            vel_known=np.zeros_like(params.known_weights),
            vel_layers=[(np.zeros_like(w), np.zeros_like(b)) for w, b in params.projector_layers],
            vel_prototypes=np.zeros_like(params.novel_prototypes),
        )


def forward_known(features: np.ndarray, known_weights: np.ndarray) -> np.ndarray:
    """Plain linear map (no bias): one row of K logits per feature row."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != known_weights.shape[1]:
        raise ValueError(
            f"feature dim {features.shape[1]} does not match head dim {known_weights.shape[1]}"
        )
    return features @ known_weights.T


def forward_novel(features: np.ndarray, params: HeadParameters, keep_cache: bool = True):
    """Project features through the MLP, then score against unit prototypes.

    logits[i, j] = cos(projected_i, prototype_j) / temperature, with a small
    epsilon added to both norms. Returns (logits, cache); cache is None when
    keep_cache is False (inference / memory rows).
    """
    features = np.asarray(features, dtype=np.float64)
    for w, b in params.projector_layers:
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite projector parameters")
    if not np.all(np.isfinite(params.novel_prototypes)):
        raise ValueError("non-finite prototypes")

    layer_inputs, preacts = [], []
    a = features
    n_layers = len(params.projector_layers)
    for i, (w, b) in enumerate(params.projector_layers):
        layer_inputs.append(a)
        z = a @ w.T + b
        preacts.append(z)
        a = np.maximum(z, 0.0) if i < n_layers - 1 else z
    embed = a

    embed_norm = np.linalg.norm(embed, axis=1)
    embed_denom = np.maximum(embed_norm, NORM_EPS)  # zero-guard; exact for nonzero rows
    unit_embed = embed / embed_denom[:, None]
    proto_norm = np.linalg.norm(params.novel_prototypes, axis=1)
    proto_denom = np.maximum(proto_norm, NORM_EPS)
    unit_prototypes = params.novel_prototypes / proto_denom[:, None]
    logits = (unit_embed @ unit_prototypes.T) / params.cosine_temperature

    if not keep_cache:
        return logits, None
    cache = ForwardCache(
        features=features,
        layer_inputs=layer_inputs,
        preacts=preacts,
        embed=embed,
        unit_embed=unit_embed,
        embed_norm=embed_norm,
        embed_denom=embed_denom,
        unit_prototypes=unit_prototypes,
        proto_norm=proto_norm,
        proto_denom=proto_denom,
    )
    return logits, cache


def forward_heads(features: np.ndarray, params: HeadParameters, keep_cache: bool = True):
    """Concatenated [known, novel] logits plus the novel-path cache."""
    known = forward_known(features, params.known_weights)
    novel, cache = forward_novel(features, params, keep_cache=keep_cache)
    return np.hstack([known, novel]), cache


def backward(
    d_known: np.ndarray | None,
    d_novel: np.ndarray,
    cache: ForwardCache,
    params: HeadParameters,
    freeze_known: bool = False,
) -> HeadGradients:
    """Exact gradients of the upstream logit gradients w.r.t. every head tensor."""
    features = cache.features
    if freeze_known or d_known is None:
        g_known = None
    else:
        g_known = d_known.T @ features

    tau = params.cosine_temperature
    # cosine layer: logits = (E/|E|) @ (W/|W|).T / tau
    d_unit_embed = (d_novel @ cache.unit_prototypes) / tau
    d_unit_proto = (d_novel.T @ cache.unit_embed) / tau
    d_embed = _normalize_backward(cache.embed, cache.embed_norm, cache.embed_denom, d_unit_embed)
    g_prototypes = _normalize_backward(
        params.novel_prototypes, cache.proto_norm, cache.proto_denom, d_unit_proto
    )

    g_layers = [None] * len(params.projector_layers)
    dz = d_embed
    for i in range(len(params.projector_layers) - 1, -1, -1):
        w, _ = params.projector_layers[i]
        if i < len(params.projector_layers) - 1:
            dz = dz * (cache.preacts[i] > 0)  # ReLU mask on hidden layers
        g_layers[i] = (dz.T @ cache.layer_inputs[i], dz.sum(axis=0))
        if i > 0:
            dz = dz @ w
    return HeadGradients(known_weights=g_known, projector_layers=g_layers, novel_prototypes=g_prototypes)


def _normalize_backward(raw: np.ndarray, norm: np.ndarray, denom: np.ndarray, d_unit: np.ndarray) -> np.ndarray:
    # d/dx of x / max(|x|, eps), applied row-wise; below the guard the
    # denominator is constant, so only the first term survives.
    inner = np.sum(raw * d_unit, axis=1)
    correction = np.where(norm > NORM_EPS, inner / denom**3, 0.0)
    return d_unit / denom[:, None] - raw * correction[:, None]


def sgd_step(params: HeadParameters, grads: HeadGradients, state: OptimizerState, lr: float) -> HeadParameters:
    """In-place SGD with momentum: v <- m*v + g + wd*p; p <- p - lr*v."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    if grads.known_weights is not None:
        _apply_sgd(params.known_weights, grads.known_weights, state.vel_known, state, lr)
    for (w, b), (gw, gb), (vw, vb) in zip(params.projector_layers, grads.projector_layers, state.vel_layers):
        _apply_sgd(w, gw, vw, state, lr)
        _apply_sgd(b, gb, vb, state, lr)
    _apply_sgd(params.novel_prototypes, grads.novel_prototypes, state.vel_prototypes, state, lr)
    return params


def _apply_sgd(param: np.ndarray, grad: np.ndarray, vel: np.ndarray, state: OptimizerState, lr: float) -> None:
    if grad.shape != param.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameter {param.shape}")
    vel *= state.momentum
    vel += grad
    if state.weight_decay:
        vel += state.weight_decay * param
    param -= lr * vel


def init_novel_head(
    feature_dim: int,
    num_novel: int,
    projector_widths,
    embed_dim: int,
    rng: np.random.Generator,
    use_projector: bool = True,
) -> tuple[list, np.ndarray]:
    """He-uniform affine layers plus unit-normalized Gaussian prototype rows.

    With use_projector False the cosine classifier acts on raw features
    (no layers, prototypes of width feature_dim).
    """
    layers = []
    if use_projector:
        dims = [feature_dim] + list(projector_widths) + [embed_dim]
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = np.zeros(fan_out)
            layers.append((w, b))
        out_dim = dims[-1]
    else:
        out_dim = feature_dim
    protos = rng.standard_normal((num_novel, out_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return layers, protos
