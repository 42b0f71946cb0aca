"""Aggregate comparison tables and figures for evaluation reports and training logs."""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRIC_COLUMNS = (
    "mAP_all",
    "mAP_known",
    "mAP_novel",
    "mAP50_all",
    "mAP75_all",
    "acc_known",
    "acc_novel",
)


def flatten_metrics(report: dict) -> dict:
    """One flat row of headline numbers from an evaluation-report document."""
    groups = report.get("groups", {})
    row = {}
    for group in ("all", "known", "novel"):
        scores = groups.get(group, {})
        row[f"mAP_{group}"] = scores.get("mAP")
    row["mAP50_all"] = groups.get("all", {}).get("mAP50")
    row["mAP75_all"] = groups.get("all", {}).get("mAP75")
    acc = report.get("cluster_accuracy") or {}
    row["acc_known"] = acc.get("known")
    row["acc_novel"] = acc.get("novel")
    return row


def aggregate(named_reports: list) -> dict:
    """Comparison table over runs; deltas are relative to the first run."""
    rows = []
    for name, report in named_reports:
        row = {"run": name}
        row.update(flatten_metrics(report))
        rows.append(row)
    deltas = []
    if len(rows) > 1:
        base = rows[0]
        for row in rows[1:]:
            delta = {"run": f"{row['run']} - {base['run']}"}
            for col in METRIC_COLUMNS:
                a, b = row.get(col), base.get(col)
                delta[col] = None if a is None or b is None else a - b
            deltas.append(delta)
    return {"columns": ["run", *METRIC_COLUMNS], "rows": rows, "deltas": deltas}


def render_text(table: dict) -> str:
    columns = table["columns"]
    all_rows = table["rows"] + table["deltas"]
    cells = [[_fmt(row.get(c)) for c in columns] for row in all_rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) if cells else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row_cells in cells[: len(table["rows"])]:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row_cells, widths)))
    if table["deltas"]:
        lines.append("  ".join("-" * w for w in widths))
        for row_cells in cells[len(table["rows"]) :]:
            lines.append("  ".join(c.ljust(w) for c, w in zip(row_cells, widths)))
    return "\n".join(lines) + "\n"


def write_csv(table: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(table["columns"])
        for row in table["rows"] + table["deltas"]:
            writer.writerow([_csv_cell(row.get(c)) for c in table["columns"]])


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _csv_cell(value):
    return "" if value is None else value


def plot_metrics(table: dict, path) -> None:
    """Grouped bars of mAP all/known/novel per run."""
    runs = [row["run"] for row in table["rows"]]
    metrics = ("mAP_all", "mAP_known", "mAP_novel")
    fig, ax = plt.subplots(figsize=(max(6, 1.8 * len(runs)), 4))
    width = 0.25
    for i, metric in enumerate(metrics):
        values = [row.get(metric) or 0.0 for row in table["rows"]]
        ax.bar([x + (i - 1) * width for x in range(len(runs))], values, width, label=metric)
    ax.set_xticks(range(len(runs)))
    ax.set_xticklabels(runs, rotation=20, ha="right")
    ax.set_ylabel("mAP@[.5:.95]")
    ax.legend()
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_log(named_logs: list, path) -> None:
    """Loss curves (total / self-supervised / supervised) per training log."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, rows in named_logs:
        iters = [r["iter"] for r in rows]
        ax.plot(iters, [r["loss"] for r in rows], label=f"{name} total")
        if any(r.get("loss_ss") for r in rows):
            ax.plot(iters, [r["loss_ss"] for r in rows], alpha=0.6, label=f"{name} self-sup")
        if any(r.get("loss_cls") for r in rows):
            ax.plot(iters, [r["loss_cls"] for r in rows], alpha=0.6, label=f"{name} supervised")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
