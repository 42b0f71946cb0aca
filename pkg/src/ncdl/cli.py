"""Command-line entry point: reproducible experiments wired from one JSON config."""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dataio, evalkit, reporting, synth, trainer
from .config import ConfigError, ExperimentConfig
from .data_model import HeadParameters, validate_dataset
from .heads import forward_heads, softmax


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, dataio.DatasetFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser():
    parser = argparse.ArgumentParser(prog="ncdl", description=__doc__)
    sub = parser.add_subparsers(required=True)

    def add(name, func, help_text, config_required=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=config_required, help="experiment config JSON")
        p.add_argument("--out", default=None, help="output directory (default: ./<command>_out)")
        p.set_defaults(func=func, command=name)
        return p

    add("synth", cmd_synth, "generate a synthetic feature dataset with ground truth")
    add("bootstrap", cmd_bootstrap, "train the supervised (K+1)-way head")
    add("discover", cmd_discover, "run the joint discovery phase")
    add("map", cmd_map, "map discovered slots to ground-truth classes")
    add("evaluate", cmd_evaluate, "score detections with COCO-style mAP")
    add("infer", cmd_infer, "emit post-processed detections")
    p = add("report", cmd_report, "aggregate evaluation reports into tables and figures", config_required=False)
    p.add_argument("inputs", nargs="*", help="evaluation-report JSON and/or training-log JSONL files")
    return parser


def _setup(args) -> tuple[ExperimentConfig, Path]:
    if args.config:
        cfg = config_mod.from_dict(dataio.read_json(args.config))
    else:
        cfg = config_mod.from_dict({})
    out = Path(args.out) if args.out else Path(f"{args.command}_out")
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_json(config_mod.to_dict(cfg), out / "config.json")
    return cfg, out


def _load_dataset(path):
    dataset = dataio.read_dataset(path)
    violations = validate_dataset(dataset)
    if violations:
        raise ValueError(f"dataset {path} is invalid: " + "; ".join(violations[:5]))
    return dataset


def cmd_synth(args) -> int:
    cfg, out = _setup(args)
    dataset, gt, true_labels = synth.generate(cfg.synth)
    dataio.write_dataset(dataset, out)
    dataio.write_ground_truth(gt, out / "ground_truth.json")
    dataio.write_json(true_labels, out / "true_labels.json")
    print(f"wrote {dataset.num_proposals} proposals over {len(dataset.image_ids)} images to {out}")
    return 0


def cmd_bootstrap(args) -> int:
    cfg, out = _setup(args)
    dataset = _load_dataset(cfg.require_path("dataset"))
    features, labels = trainer.bootstrap_data(dataset)
    num_known = len(dataset.known_class_names)
    weights, accuracy = trainer.bootstrap_known_head(
        features, labels, num_known, cfg.bootstrap, seed=cfg.seed
    )
    params = HeadParameters(
        known_weights=weights,
        projector_layers=[],
        novel_prototypes=np.zeros((0, weights.shape[1])),
        cosine_temperature=1.0,
    )
    dataio.save_checkpoint(
        params,
        out / "checkpoint",
        extra={
            "phase": "bootstrap",
            "known_names": list(dataset.known_class_names),
            "train_accuracy": accuracy,
        },
    )
    dataio.write_json({"train_accuracy": accuracy, "num_samples": int(len(labels))}, out / "bootstrap_report.json")
    print(f"bootstrap accuracy {accuracy:.4f} on {len(labels)} samples -> {out / 'checkpoint'}")
    return 0


def cmd_discover(args) -> int:
    cfg, out = _setup(args)
    dataset = _load_dataset(cfg.require_path("dataset"))
    boot_params, extra = dataio.load_checkpoint(cfg.require_path("checkpoint"))
    known_names = extra.get("known_names", list(dataset.known_class_names))
    if list(known_names) != list(dataset.known_class_names):
        raise ValueError("checkpoint known classes do not match the dataset")

    state = trainer.start_discovery(boot_params.known_weights, known_names, cfg.discovery)

    def on_checkpoint(s):
        _save_discovery_checkpoint(s, out / f"checkpoint_iter{s.iteration:06d}", known_names)

    params, log = trainer.run_discovery(state, dataset, on_checkpoint=on_checkpoint)
    _save_discovery_checkpoint(state, out / "checkpoint", known_names)
    dataio.write_jsonl(log, out / "log.jsonl")
    final = log[-1] if log else {}
    print(
        f"discovery finished at iter {state.iteration} "
        f"(loss {final.get('loss', float('nan')):.4f}) -> {out / 'checkpoint'}"
    )
    return 0


def _save_discovery_checkpoint(state, directory, known_names) -> None:
    for h, params in enumerate(state.heads):
        target = Path(directory) if h == 0 else Path(directory) / f"head_{h}"
        dataio.save_checkpoint(
            params,
            target,
            extra={
                "phase": "discovery",
                "known_names": list(known_names),
                "num_novel": params.num_novel,
                "iteration": state.iteration,
                "head_index": h,
            },
        )


def _load_discovery_checkpoint(cfg) -> tuple[HeadParameters, list]:
    path = Path(cfg.require_path("checkpoint"))
    if cfg.eval.head_index:
        path = path / f"head_{cfg.eval.head_index}"
    params, extra = dataio.load_checkpoint(path)
    if extra.get("phase") != "discovery":
        raise ValueError(f"{path} is not a discovery checkpoint")
    return params, list(extra["known_names"])


def cmd_map(args) -> int:
    cfg, out = _setup(args)
    dataset = _load_dataset(cfg.require_path("dataset"))
    params, known_names = _load_discovery_checkpoint(cfg)
    gt = dataio.read_ground_truth(cfg.require_path("ground_truth"))
    pairs, skipped = evalkit.classify_gt_boxes(params, dataset, gt)
    num_classes = params.num_known + params.num_novel
    counts = evalkit.count_matrix(pairs, num_classes, gt.class_names)
    mapping = evalkit.build_mapping(counts, gt.class_names, known_names)
    doc = mapping.to_json()
    doc["skipped_annotations"] = skipped
    dataio.write_json(doc, out / "mapping.json")
    print(f"mapped {len(mapping.assignments)} of {num_classes} slots ({skipped} annotations skipped)")
    return 0


def _detections(cfg, dataset, params, mapping):
    features = dataset.features_view1.astype(np.float64)
    logits, _ = forward_heads(features, params, keep_cache=False)
    probs = softmax(logits)
    boxes = [rec.box for rec in dataset.proposals]
    image_ids = [rec.image_id for rec in dataset.proposals]
    return evalkit.postprocess(
        probs,
        boxes,
        image_ids,
        mapping,
        conf_cutoff=cfg.eval.conf_cutoff,
        nms_iou=cfg.eval.nms_iou,
        max_per_image=cfg.eval.max_per_image,
    )


def cmd_infer(args) -> int:
    cfg, out = _setup(args)
    dataset = _load_dataset(cfg.require_path("dataset"))
    params, _ = _load_discovery_checkpoint(cfg)
    mapping = evalkit.ClassMapping.from_json(dataio.read_json(cfg.require_path("mapping")))
    detections = _detections(cfg, dataset, params, mapping)
    dataio.write_json(_detections_json(detections), out / "detections.json")
    print(f"wrote {detections.num_detections()} detections for {len(detections.by_image)} images")
    return 0


def _detections_json(detections) -> dict:
    doc = {}
    for image_id in sorted(detections.by_image):
        doc[image_id] = [
            {
                "box": list(d.box),
                "slot": d.class_index,
                "class": d.class_name,
                "confidence": d.confidence,
            }
            for d in detections.by_image[image_id]
        ]
    return {"detections": doc}


def cmd_evaluate(args) -> int:
    cfg, out = _setup(args)
    dataset = _load_dataset(cfg.require_path("dataset"))
    params, known_names = _load_discovery_checkpoint(cfg)
    gt = dataio.read_ground_truth(cfg.require_path("ground_truth"))
    mapping = evalkit.ClassMapping.from_json(dataio.read_json(cfg.require_path("mapping")))
    detections = _detections(cfg, dataset, params, mapping)
    groups = evalkit.evaluate_map(detections, gt, known_names)
    report = {"groups": groups, "mapping": mapping.to_json(), "cluster_accuracy": None}
    if cfg.paths.true_labels:
        true_labels = dataio.read_json(cfg.paths.true_labels)
        slots = evalkit.predict_slots(params, dataset.features_view1.astype(np.float64))
        report["cluster_accuracy"] = evalkit.cluster_accuracy(slots, true_labels, mapping, known_names)
    dataio.write_json(report, out / "map_report.json")
    line = ", ".join(f"{g}={groups[g]['mAP']:.4f}" for g in ("all", "known", "novel"))
    print(f"mAP@[.5:.95]: {line}")
    return 0


def cmd_report(args) -> int:
    cfg, out = _setup(args)
    inputs = list(cfg.paths.reports) + list(args.inputs)
    if cfg.paths.log:
        inputs.append(cfg.paths.log)
    if not inputs:
        raise ValueError("report needs at least one evaluation report or training log")
    named_reports, named_logs = [], []
    for item in inputs:
        path = Path(item)
        if not path.exists():
            raise ValueError(f"report input not found: {path}")
        if path.suffix == ".jsonl":
            named_logs.append((path.stem, dataio.read_jsonl(path)))
        else:
            named_reports.append((path.stem, dataio.read_json(path)))

    table = reporting.aggregate(named_reports)
    dataio.write_json(table, out / "report.json")
    text = reporting.render_text(table)
    (out / "report.txt").write_text(text, encoding="utf-8")
    reporting.write_csv(table, out / "report.csv")
    figures = []
    if named_reports:
        reporting.plot_metrics(table, out / "figures" / "map_comparison.png")
        figures.append("figures/map_comparison.png")
    if named_logs:
        reporting.plot_training_log(named_logs, out / "figures" / "training_loss.png")
        figures.append("figures/training_loss.png")
    print(text, end="")
    print(f"wrote report.json, report.txt, report.csv{', ' if figures else ''}{', '.join(figures)} to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
