"""Soft pseudo-labels via marginal-constrained entropic scaling, plus the k-means fallback."""

from dataclasses import dataclass

import numpy as np

from .data_model import PseudoLabelBatch
from .priors import PriorMarginals


@dataclass(frozen=True)
class SinkhornConfig:
    lam: float = 20.0  # sharpness of exp(lam * logits); config key "lambda"
    num_iters: int = 3
    log_domain: bool = True

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.num_iters < 1:
            raise ValueError("num_iters must be >= 1")


def sinkhorn_labels(logits: np.ndarray, prior: PriorMarginals, config: SinkhornConfig = SinkhornConfig()) -> np.ndarray:
    """Assign each row a distribution over classes matching the prior column masses.

    Starts from Q proportional to exp(lam * logits) and alternately rescales
    columns to the prior masses and rows to mass 1, for num_iters full cycles;
    the closing row rescale makes every output row a probability distribution.

    The log_domain path (default) is the numerically stable one: the kernel is
    exponentiated after factoring out per-row maxima (an equivalent diagonal
    rescaling, absorbed by the row constraint), so no row can underflow to
    zero at large lam; if a column scaling still overflows on a degenerate
    kernel, the solve reruns with full log-space updates.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError("logits must be 2-d")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits contain non-finite values")
    rows, cols = logits.shape
    if cols != prior.num_classes:
        raise ValueError(f"prior has {prior.num_classes} classes, logits have {cols}")
    if abs(prior.total_mass - rows) > 1e-6 * max(rows, 1):
        raise ValueError(f"prior total mass {prior.total_mass} does not match {rows} rows")

    if config.log_domain:
        scaled = config.lam * logits
        kernel = np.exp(scaled - scaled.max(axis=1, keepdims=True))
        r = np.ones(rows)
        for _ in range(config.num_iters):
            c = prior.masses / (kernel.T @ r)
            r = 1.0 / (kernel @ c)
        labels = kernel * r[:, None] * c[None, :]
        if not np.all(np.isfinite(labels)):
            labels = _log_domain_labels(scaled, prior.masses, config.num_iters)
    else:
        q = config.lam * logits
        q = np.exp(q - q.max())
        for _ in range(config.num_iters):
            q *= prior.masses / q.sum(axis=0)
            q /= q.sum(axis=1, keepdims=True)
        labels = q
    return labels


def _log_domain_labels(log_kernel: np.ndarray, col_masses: np.ndarray, num_iters: int) -> np.ndarray:
    log_kernel = log_kernel - log_kernel.max()
    log_col = np.log(col_masses)
    u = np.zeros(log_kernel.shape[0])
    for _ in range(num_iters):
        v = log_col - _logsumexp(log_kernel + u[:, None], axis=0)
        u = -_logsumexp(log_kernel + v[None, :], axis=1)
    return np.exp(log_kernel + u[:, None] + v[None, :])


def batch_pseudolabels(
    batch_logits: np.ndarray,
    memory_logits: np.ndarray,
    prior: PriorMarginals,
    config: SinkhornConfig = SinkhornConfig(),
) -> PseudoLabelBatch:
    """Solve over batch + memory rows jointly, keep only the batch rows."""
    batch_logits = np.asarray(batch_logits, dtype=np.float64)
    memory_logits = np.asarray(memory_logits, dtype=np.float64)
    if memory_logits.size == 0:
        memory_logits = memory_logits.reshape(0, batch_logits.shape[1])
    stacked = np.vstack([batch_logits, memory_logits])
    labels = sinkhorn_labels(stacked, prior, config)
    return PseudoLabelBatch(labels=labels[: batch_logits.shape[0]])


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    peak = a.max(axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - peak), axis=axis)) + np.squeeze(peak, axis=axis)
    return out


def kmeans_labels(features: np.ndarray, num_classes: int, iters: int = 10, seed: int = 0) -> np.ndarray:
    """Hard one-hot labels from Lloyd's algorithm with k-means++ seeding.

    An empty cluster is reseeded to the point currently farthest from its
    assigned centroid, so the result stays deterministic for a given seed.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n < num_classes:
        raise ValueError(f"need at least {num_classes} rows, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(features, num_classes, rng)

    assign = _nearest(features, centroids)
    for _ in range(iters):
        for c in range(num_classes):
            members = features[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                dists = np.linalg.norm(features - centroids[assign], axis=1)
                centroids[c] = features[int(np.argmax(dists))]
        new_assign = _nearest(features, centroids)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    labels = np.zeros((n, num_classes))
    labels[np.arange(n), assign] = 1.0
    return labels


def _kmeans_pp_init(features: np.ndarray, k: int, rng) -> np.ndarray:
    n = features.shape[0]
    centroids = [features[int(rng.integers(n))]]
    for _ in range(k - 1):
        d2 = np.min(
            [np.sum((features - c) ** 2, axis=1) for c in centroids], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centroids.append(features[int(rng.integers(n))])
            continue
        probs = d2 / total
        centroids.append(features[int(rng.choice(n, p=probs))])
    return np.array(centroids)


def _nearest(features: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(features**2, axis=1)[:, None]
        - 2.0 * features @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def kmeans_inertia(features: np.ndarray, labels: np.ndarray) -> float:
    """Sum of squared distances to the centroid of each one-hot-assigned cluster."""
    assign = labels.argmax(axis=1)
    total = 0.0
    for c in range(labels.shape[1]):
        members = features[assign == c]
        if len(members):
            total += float(np.sum((members - members.mean(axis=0)) ** 2))
    return total
