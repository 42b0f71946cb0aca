"""Shared pipeline driver for the synthetic discovery benchmark and its ablations."""

import time
from dataclasses import replace

import numpy as np

from ncdl import evalkit
from ncdl.pseudolabel import SinkhornConfig
from ncdl.synth import SynthSpec, generate
from ncdl.trainer import (
    BootstrapConfig,
    DiscoveryConfig,
    HeadConfig,
    MemoryConfig,
    PriorConfig,
    bootstrap_data,
    bootstrap_known_head,
    run_discovery,
    start_discovery,
)

BENCHMARK_SPEC = SynthSpec(
    feature_dim=20,
    num_known=5,
    num_novel_true=15,
    samples_per_class=200,
    tail_ratio=0.8,
    cluster_center_scale=5.0,
    within_cluster_stddev=0.3,
    view_noise_stddev=0.1,
    distractor_fraction=0.15,
    proposals_per_image=30,
    seed=0,
)

BOOTSTRAP = BootstrapConfig(epochs=30, lr=0.1)


def benchmark_config(seed: int, total_iters: int = 15000, **overrides) -> DiscoveryConfig:
    fields = dict(
        alpha=0.5,
        total_iters=total_iters,
        batch_images=4,
        proposals_per_image=50,
        ramp_iters=max(1, total_iters // 5),
        lr_start=1e-5,
        lr_peak=1e-2,
        lr_end=1e-3,
        seed=seed,
        prior=PriorConfig(kind="lognormal", mu=1.0, sigma=1.0),
        sinkhorn=SinkhornConfig(),
        memory=MemoryConfig(capacity_batches=10, warmup_iters=30),
        heads=HeadConfig(num_novel=15, projector_widths=(32,), embed_dim=16, tau=0.1),
    )
    fields.update(overrides)
    return DiscoveryConfig(**fields)


def run_benchmark(seed: int, config: DiscoveryConfig | None = None, spec: SynthSpec | None = None) -> dict:
    """bootstrap -> discover -> map -> score cluster accuracy, end to end."""
    spec = replace(spec or BENCHMARK_SPEC, seed=seed)
    config = config or benchmark_config(seed)
    t0 = time.time()
    dataset, gt, true_labels = generate(spec)
    feats, labels = bootstrap_data(dataset)
    boot, boot_acc = bootstrap_known_head(
        feats, labels, spec.num_known, BOOTSTRAP, seed=seed
    )
    state = start_discovery(boot, dataset.known_class_names, config)
    params, log = run_discovery(state, dataset)

    num_classes = params.num_known + params.num_novel
    pairs, skipped = evalkit.classify_gt_boxes(params, dataset, gt)
    counts = evalkit.count_matrix(pairs, num_classes, gt.class_names)
    mapping = evalkit.build_mapping(counts, gt.class_names, dataset.known_class_names)
    slots = evalkit.predict_slots(params, dataset.features_view1.astype(np.float64))
    accuracy = evalkit.cluster_accuracy(slots, true_labels, mapping, dataset.known_class_names)
    return {
        "seed": seed,
        "known": accuracy["known"],
        "novel": accuracy["novel"],
        "boot_accuracy": boot_acc,
        "skipped": skipped,
        "elapsed": time.time() - t0,
        "params": params,
        "state": state,
        "log": log,
        "mapping": mapping,
        "dataset": dataset,
        "gt": gt,
        "true_labels": true_labels,
    }


def ablation_config(seed: int, variant: str, total_iters: int = 15000) -> DiscoveryConfig:
    base = benchmark_config(seed, total_iters=total_iters)
    if variant == "base":
        return base
    if variant == "no_memory":
        return replace(base, memory=MemoryConfig(capacity_batches=0, warmup_iters=base.memory.warmup_iters))
    if variant == "uniform_prior":
        return replace(base, prior=PriorConfig(kind="uniform"))
    if variant == "kmeans":
        return replace(base, pseudo_labeler="kmeans", kmeans_iters=5)
    if variant == "alpha_0":
        return replace(base, alpha=0.0)
    if variant == "alpha_1":
        return replace(base, alpha=1.0)
    if variant == "no_swap":
        return replace(base, swap_views=False)
    if variant == "no_projector":
        return replace(base, use_projector=False)
    raise ValueError(f"unknown variant {variant!r}")
