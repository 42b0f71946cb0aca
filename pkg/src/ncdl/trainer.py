"""Two-phase training: supervised bootstrap, then joint discovery of novel classes.

The discovery phase runs online constrained clustering over two feature views:
per step, each view's batch (plus its feature memory) is pseudo-labeled under
the class-marginal prior, targets are swapped between views, and both heads
are updated by SGD on the combined self-supervised + downscaled supervised
cross-entropy.
"""

import math
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from .data_model import ClassVocabulary, FeatureDataset, HeadParameters
from .heads import (
    OptimizerState,
    backward,
    forward_known,
    forward_novel,
    init_novel_head,
    log_softmax,
    sgd_step,
    softmax,
)
from .memory import FeatureMemory
from .priors import build_prior
from .pseudolabel import SinkhornConfig, kmeans_labels, sinkhorn_labels


@dataclass(frozen=True)
class PriorConfig:
    kind: str = "lognormal"  # "lognormal" | "uniform"
    mu: float = 1.0
    sigma: float = 0.5

    def __post_init__(self):
        if self.kind not in ("lognormal", "uniform"):
            raise ValueError(f"unknown prior kind {self.kind!r}")


@dataclass(frozen=True)
class MemoryConfig:
    capacity_batches: int = 100
    warmup_iters: int = 150

    def __post_init__(self):
        if self.capacity_batches < 0 or self.warmup_iters < 0:
            raise ValueError("memory sizes must be >= 0")


@dataclass(frozen=True)
class HeadConfig:
    num_novel: int = 3000
    projector_widths: tuple = (512, 512)
    embed_dim: int = 256
    tau: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.num_novel < 1:
            raise ValueError("num_novel must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class BootstrapConfig:
    epochs: int = 40
    lr: float = 0.05
    batch_size: int = 256
    momentum: float = 0.9
    weight_decay: float = 0.0


@dataclass(frozen=True)
class DiscoveryConfig:
    alpha: float = 0.5
    total_iters: int = 15000
    batch_images: int = 16
    proposals_per_image: int = 50
    lr_start: float = 1e-5
    lr_peak: float = 1e-2
    lr_end: float = 1e-3
    ramp_iters: int = 3000
    swap_views: bool = True
    use_projector: bool = True
    pseudo_labeler: str = "sinkhorn"  # "sinkhorn" | "kmeans"
    kmeans_iters: int = 5
    freeze_known_head: bool = False
    multi_head_sizes: tuple | None = None  # replaces heads.num_novel when set
    checkpoint_every: int = 0
    seed: int = 0
    prior: PriorConfig = field(default_factory=PriorConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not (0 <= self.ramp_iters <= max(self.total_iters, 1)):
            raise ValueError("ramp_iters must not exceed total_iters")
        if self.pseudo_labeler not in ("sinkhorn", "kmeans"):
            raise ValueError(f"unknown pseudo_labeler {self.pseudo_labeler!r}")


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class Batch:
    features_v1: np.ndarray  # (B, F) float64
    features_v2: np.ndarray
    gt_rows: np.ndarray  # indices into the batch with an annotation match
    gt_classes: np.ndarray  # known-class index per matched row

    @property
    def size(self) -> int:
        return int(self.features_v1.shape[0])


@dataclass
class TrainerState:
    vocab: ClassVocabulary
    heads: list  # HeadParameters per novel head; known_weights shared
    opt_states: list
    memories: tuple  # one FeatureMemory per view
    config: DiscoveryConfig
    iteration: int = 0
    batches_pushed: int = 0


def bootstrap_data(dataset: FeatureDataset):
    """Training rows for the supervised phase: labeled-image proposals, view 1.

    Annotation-matched proposals carry their class index; the rest of the
    labeled images' proposals become background (index K).
    """
    num_known = len(dataset.known_class_names)
    rows, labels = [], []
    for row, rec in enumerate(dataset.proposals):
        if not rec.labeled_image:
            continue
        rows.append(row)
        labels.append(rec.gt_class if rec.gt_class is not None else num_known)
    features = dataset.features_view1[np.array(rows, dtype=np.int64)].astype(np.float64)
    return features, np.array(labels, dtype=np.int64)


def bootstrap_known_head(
    features: np.ndarray,
    labels: np.ndarray,
    num_known: int,
    config: BootstrapConfig = BootstrapConfig(),
    seed: int = 0,
):
    """Train the (K+1)-way linear head by softmax cross-entropy SGD.

    Returns (weights (K+1, F), final training accuracy). Classes without a
    single sample make training ill-posed and raise immediately.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    missing = [c for c in range(num_known) if not np.any(labels == c)]
    if missing:
        raise ValueError(f"no training samples for known classes {missing}")

    n, dim = features.shape
    weights = np.zeros((num_known + 1, dim))
    velocity = np.zeros_like(weights)
    rng = np.random.default_rng(seed)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x, y = features[idx], labels[idx]
            probs = softmax(x @ weights.T)
            probs[np.arange(len(idx)), y] -= 1.0
            grad = probs.T @ x / len(idx)
            velocity *= config.momentum
            velocity += grad
            if config.weight_decay:
                velocity += config.weight_decay * weights
            weights -= config.lr * velocity
    accuracy = float(np.mean(np.argmax(features @ weights.T, axis=1) == labels))
    return weights, accuracy


def start_discovery(boot_weights: np.ndarray, known_names: list, config: DiscoveryConfig) -> TrainerState:
    """Drop the bootstrap background row and attach freshly initialized novel heads."""
    num_known = len(known_names)
    if boot_weights.shape[0] != num_known + 1:
        raise ValueError(
            f"bootstrap head has {boot_weights.shape[0]} rows, expected {num_known + 1}"
        )
    feature_dim = boot_weights.shape[1]
    known = boot_weights[:num_known].copy()  # background row (index K) removed

    rng = np.random.default_rng(config.seed)
    sizes = list(config.multi_head_sizes) if config.multi_head_sizes else [config.heads.num_novel]
    heads, opt_states = [], []
    for size in sizes:
        layers, protos = init_novel_head(
            feature_dim,
            size,
            config.heads.projector_widths,
            config.heads.embed_dim,
            rng,
            use_projector=config.use_projector,
        )
        params = HeadParameters(
            known_weights=known,
            projector_layers=layers,
            novel_prototypes=protos,
            cosine_temperature=config.heads.tau,
        )
        heads.append(params)
        opt_states.append(
            OptimizerState.for_params(params, config.heads.momentum, config.heads.weight_decay)
        )
    for state in opt_states[1:]:
        state.vel_known = opt_states[0].vel_known  # single shared buffer

    capacity = config.memory.capacity_batches * config.batch_images * config.proposals_per_image
    memories = (FeatureMemory(capacity, feature_dim), FeatureMemory(capacity, feature_dim))
    vocab = ClassVocabulary(known_names=tuple(known_names), num_novel=sizes[0])
    return TrainerState(
        vocab=vocab,
        heads=heads,
        opt_states=opt_states,
        memories=memories,
        config=config,
    )


def lr_at(iteration: int, config: DiscoveryConfig) -> float:
    """Linear ramp lr_start -> lr_peak, then cosine decay to lr_end."""
    if iteration < config.ramp_iters:
        frac = iteration / config.ramp_iters
        return config.lr_start + (config.lr_peak - config.lr_start) * frac
    tail = config.total_iters - config.ramp_iters
    if tail <= 0:
        return config.lr_peak
    t = (iteration - config.ramp_iters) / tail
    return config.lr_end + (config.lr_peak - config.lr_end) * (1.0 + math.cos(math.pi * t)) / 2.0


def discovery_step(state: TrainerState, batch: Batch) -> dict:
    """One joint update; returns the per-step report."""
    config = state.config
    if batch.size == 0:
        raise ValueError("batch must be non-empty")
    lr = lr_at(state.iteration, config)
    warm = state.batches_pushed < config.memory.warmup_iters
    b = batch.size

    # one stacked matrix [view1 batch; view1 memory; view2 batch; view2 memory]
    # so the heavy forward/backward passes run once per head
    if warm:
        stacked = np.vstack([batch.features_v1, batch.features_v2])
        m_sz = 0
    else:
        mem1 = state.memories[0].snapshot()
        mem2 = state.memories[1].snapshot()
        stacked = np.vstack([batch.features_v1, mem1, batch.features_v2, mem2])
        m_sz = mem1.shape[0]
    per_view = b + m_sz
    batch_rows = np.concatenate([np.arange(b), per_view + np.arange(b)])

    m = len(batch.gt_rows)
    gt_rows_both = np.concatenate([batch.gt_rows, b + batch.gt_rows])
    gt_classes_both = np.concatenate([batch.gt_classes, batch.gt_classes])

    num_heads = len(state.heads)
    head_scale = 1.0 / num_heads
    loss_ss_total, loss_cls_total = 0.0, 0.0
    q_max_sum, q_ent_sum, q_count = 0.0, 0.0, 0
    known_grad = None
    known_logits = forward_known(stacked, state.heads[0].known_weights)

    for h, params in enumerate(state.heads):
        num_classes = params.num_known + params.num_novel
        novel_logits, cache = forward_novel(stacked, params, keep_cache=True)
        logits = np.hstack([known_logits, novel_logits])
        batch_logits = logits[batch_rows]  # (2B, C), view1 rows then view2 rows
        logp = log_softmax(batch_logits)
        probs = np.exp(logp)

        targets = None
        if not warm:
            q = []
            for v in range(2):
                lo = v * per_view
                if config.pseudo_labeler == "kmeans":
                    seed = config.seed * 1000003 + state.iteration * 2 + v
                    labels = kmeans_labels(
                        stacked[lo : lo + per_view], num_classes, iters=config.kmeans_iters, seed=seed
                    )
                    q.append(labels[:b])
                else:
                    prior = build_prior(
                        config.prior.kind,
                        num_classes,
                        float(per_view),
                        mu=config.prior.mu,
                        sigma=config.prior.sigma,
                    )
                    q.append(sinkhorn_labels(logits[lo : lo + per_view], prior, config.sinkhorn)[:b])
            if config.swap_views:
                targets = np.vstack([q[1], q[0]])
            else:
                targets = np.vstack([q[0], q[1]])
            q_max_sum += float(q[0].max(axis=1).mean() + q[1].max(axis=1).mean())
            with np.errstate(divide="ignore", invalid="ignore"):
                ent = [-np.sum(np.where(x > 0, x * np.log(x), 0.0), axis=1).mean() for x in q]
            q_ent_sum += float(ent[0] + ent[1])
            q_count += 2

        loss_ss = 0.0 if warm else -float(np.sum(targets * logp)) / (2.0 * b)
        loss_cls = (
            -float(np.sum(logp[gt_rows_both, gt_classes_both])) / (2.0 * m) if m else 0.0
        )
        loss_ss_total += head_scale * loss_ss
        loss_cls_total += head_scale * loss_cls

        # gradient at the concatenated logits; memory rows carry none and are
        # sliced out of the cache before backpropagation
        d_batch = np.zeros_like(probs)
        if not warm:
            d_batch += (probs - targets) / (2.0 * b)
        if m and config.alpha:
            d_cls = probs[gt_rows_both].copy()
            d_cls[np.arange(2 * m), gt_classes_both] -= 1.0
            d_batch[gt_rows_both] += config.alpha * d_cls / (2.0 * m)
        d_batch *= head_scale
        head_grad = backward(
            d_batch[:, : params.num_known],
            d_batch[:, params.num_known :],
            _take_cache_rows(cache, batch_rows),
            params,
            freeze_known=config.freeze_known_head,
        )
        if head_grad.known_weights is not None:
            known_grad = (
                head_grad.known_weights if known_grad is None else known_grad + head_grad.known_weights
            )
        if h == 0:
            first_head_grad = head_grad
        else:
            sgd_step(params, replace(head_grad, known_weights=None), state.opt_states[h], lr)

    sgd_step(
        state.heads[0],
        replace(first_head_grad, known_weights=known_grad),
        state.opt_states[0],
        lr,
    )

    total = loss_ss_total + config.alpha * loss_cls_total
    if not np.isfinite(total):
        dump = tempfile.NamedTemporaryFile(prefix="ncdl_step_", suffix=".npz", delete=False)
        np.savez(dump, features_v1=batch.features_v1, features_v2=batch.features_v2)
        raise NonFiniteLossError(
            f"non-finite loss at iteration {state.iteration} "
            f"(ss={loss_ss_total}, cls={loss_cls_total}); step inputs dumped to {dump.name}"
        )

    state.memories[0].push_batch(batch.features_v1)
    state.memories[1].push_batch(batch.features_v2)
    state.batches_pushed += 1
    state.iteration += 1
    return {
        "iter": state.iteration - 1,
        "lr": lr,
        "loss": total,
        "loss_ss": loss_ss_total,
        "loss_cls": loss_cls_total,
        "warmup": warm,
        "batch_size": b,
        "memory_size": m_sz,
        "q_mean_max": q_max_sum / q_count if q_count else None,
        "q_mean_entropy": q_ent_sum / q_count if q_count else None,
    }


def run_discovery(state: TrainerState, dataset: FeatureDataset, on_checkpoint=None):
    """Drive discovery_step for config.total_iters batches of shuffled images.

    Returns (head-0 parameters, per-step report list). on_checkpoint, when
    given, is called as on_checkpoint(state) every config.checkpoint_every
    iterations.
    """
    config = state.config
    image_rows = _capped_image_rows(dataset, config.proposals_per_image)
    image_ids = list(image_rows)
    f1 = dataset.features_view1.astype(np.float64)
    f2 = dataset.features_view2.astype(np.float64)
    gt_class = np.array(
        [-1 if rec.gt_class is None else rec.gt_class for rec in dataset.proposals], dtype=np.int64
    )

    rng = np.random.default_rng(config.seed + 1)
    log = []
    while state.iteration < config.total_iters:
        order = rng.permutation(len(image_ids))
        for start in range(0, len(order), config.batch_images):
            if state.iteration >= config.total_iters:
                break
            chunk = order[start : start + config.batch_images]
            rows = np.concatenate([image_rows[image_ids[i]] for i in chunk])
            classes = gt_class[rows]
            gt_rows = np.nonzero(classes >= 0)[0]
            batch = Batch(
                features_v1=f1[rows],
                features_v2=f2[rows],
                gt_rows=gt_rows,
                gt_classes=classes[gt_rows],
            )
            log.append(discovery_step(state, batch))
            if on_checkpoint and config.checkpoint_every and state.iteration % config.checkpoint_every == 0:
                on_checkpoint(state)
    return state.heads[0], log


def _take_cache_rows(cache, rows):
    cache.features = cache.features[rows]
    cache.layer_inputs = [a[rows] for a in cache.layer_inputs]
    cache.preacts = [z[rows] for z in cache.preacts]
    cache.embed = cache.embed[rows]
    cache.unit_embed = cache.unit_embed[rows]
    cache.embed_norm = cache.embed_norm[rows]
    cache.embed_denom = cache.embed_denom[rows]
    return cache


def energy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean cross-entropy -1/B sum_i sum_y q[i,y] log p[i,y] with q fixed."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    mask = targets > 0
    terms = np.zeros_like(probs)
    with np.errstate(divide="ignore"):
        terms[mask] = targets[mask] * np.log(probs[mask])
    return -float(terms.sum()) / probs.shape[0]


def _capped_image_rows(dataset: FeatureDataset, cap: int) -> dict:
    by_image: dict = {}
    for row, rec in enumerate(dataset.proposals):
        by_image.setdefault(rec.image_id, []).append(row)
    out = {}
    for image_id, rows in by_image.items():
        ranked = sorted(rows, key=lambda r: (-dataset.proposals[r].objectness, r))
        out[image_id] = np.array(ranked[:cap], dtype=np.int64)
    return out


