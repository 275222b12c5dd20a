"""Run-directory reports: JSONL metric streams, delimited tables, figures.

Run directories are append-only: a name collision gets a numeric suffix
rather than an overwrite. The metric stream carries no wall-clock times, so
two runs of the same config and seed produce byte-identical streams.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ..checkpoint import save_checkpoint
from .experiments import AblationCell, KFoldResult, SweepPoint
from .loop import RunRecord, RunResult
from .metrics import MetricsReport


def allocate_run_dir(out_dir, stem: str) -> Path:
    """Fresh directory ``out_dir/stem`` (suffix -1, -2, ... on collision)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    candidate = out_dir / stem
    idx = 0
    while candidate.exists():
        idx += 1
        candidate = out_dir / f"{stem}-{idx}"
    candidate.mkdir()
    return candidate


def write_effective_config(run_dir: Path, doc: dict) -> None:
    (Path(run_dir) / "config.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def write_metrics_stream(run_dir: Path, record: RunRecord) -> Path:
    """One JSON line per epoch: run id, epoch, every loss term, validation metrics."""
    path = Path(run_dir) / "metrics.jsonl"
    with open(path, "a") as fh:
        for ep in record.epochs:
            row = {"run_id": record.run_id, "epoch": ep.epoch}
            row.update(ep.losses)
            row.update({"val_wap": ep.val_wap, "val_ua": ep.val_ua, "val_weighted_f1": ep.val_weighted_f1})
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path


def write_confusion_csv(run_dir: Path, report: MetricsReport, name: str = "confusion.csv") -> Path:
    path = Path(run_dir) / name
    k = report.confusion.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + [f"pred_{j}" for j in range(k)])
        for i in range(k):
            writer.writerow([f"true_{i}"] + report.confusion[i].tolist())
    return path


def write_summary_csv(run_dir: Path, rows: list[dict], name: str = "metrics_summary.csv") -> Path:
    path = Path(run_dir) / name
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return path


def write_record_json(run_dir: Path, record: RunRecord, name: str = "record.json") -> Path:
    path = Path(run_dir) / name
    path.write_text(json.dumps(record.as_dict(), indent=1, sort_keys=True))
    return path


def save_run_checkpoint(run_dir: Path, result: RunResult) -> Path:
    path = Path(run_dir) / "checkpoint.bin"
    meta = {
        "modalities": list(result.bundle.modalities),
        "n_classes": result.bundle.n_classes,
        "dae": result.bundle.dae_config.to_dict(),
        "train": result.record.config,
    }
    save_checkpoint(path, result.best_state, meta)
    return path


# ---------------------------------------------------------------------------
# figures


def _fig_dir(run_dir: Path) -> Path:
    d = Path(run_dir) / "figures"
    d.mkdir(exist_ok=True)
    return d


def plot_loss_curves(run_dir: Path, record: RunRecord) -> Path:
    epochs = [ep.epoch for ep in record.epochs]
    series = {
        "classification": [ep.losses.get("l_cls", 0.0) for ep in record.epochs],
        "reconstruction": [ep.losses.get("l_rec", 0.0) for ep in record.epochs],
        "paired matching": [ep.losses.get("l_pair", 0.0) for ep in record.epochs],
        "unpaired matching (raw)": [ep.losses.get("l_unpair_raw", 0.0) for ep in record.epochs],
    }
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, values in series.items():
        ax.plot(epochs, values, label=label, linewidth=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss value")
    ax.legend(fontsize=8)
    ax.set_title(f"loss curves ({record.run_id})")
    fig.tight_layout()
    path = _fig_dir(run_dir) / "loss_curves.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_confusion(run_dir: Path, report: MetricsReport, class_names=None,
                   name: str = "confusion_matrix.png") -> Path:
    cm = report.confusion
    k = cm.shape[0]
    labels = class_names if class_names else [str(i) for i in range(k)]
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(cm, cmap="Blues")
    for i in range(k):
        for j in range(k):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=8)
    ax.set_xticks(range(k), labels, rotation=45, ha="right")
    ax.set_yticks(range(k), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    path = _fig_dir(run_dir) / name
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_validation_curve(run_dir: Path, record: RunRecord) -> Path:
    epochs = [ep.epoch for ep in record.epochs]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [ep.val_ua for ep in record.epochs], label="val UA")
    ax.plot(epochs, [ep.val_wap for ep in record.epochs], label="val WAP")
    ax.axvline(record.best_epoch, color="grey", linestyle=":", label="best epoch")
    ax.set_xlabel("epoch")
    ax.set_ylabel("metric")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = _fig_dir(run_dir) / "validation_curve.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_train_reports(run_dir: Path, result: RunResult, class_names=None) -> None:
    record = result.record
    write_metrics_stream(run_dir, record)
    write_record_json(run_dir, record)
    write_confusion_csv(run_dir, record.test)
    write_summary_csv(run_dir, [{
        "run_id": record.run_id,
        "best_epoch": record.best_epoch,
        "best_val_ua": record.best_val_ua,
        "test_wap": record.test.wap,
        "test_ua": record.test.ua,
        "test_weighted_f1": record.test.weighted_f1,
        "aborted": record.aborted,
    }])
    save_run_checkpoint(run_dir, result)
    plot_loss_curves(run_dir, record)
    plot_validation_curve(run_dir, record)
    plot_confusion(run_dir, record.test, class_names)


# ---------------------------------------------------------------------------
# experiment-level tables


def write_kfold_reports(run_dir: Path, result: KFoldResult, class_names=None) -> None:
    rows = []
    for fold, res in enumerate(result.fold_results):
        rec = res.record
        write_metrics_stream(run_dir, rec)
        rows.append({
            "fold": fold,
            "selected": int(fold == result.selected_fold),
            "best_epoch": rec.best_epoch,
            "best_val_ua": rec.best_val_ua,
        })
    write_summary_csv(run_dir, rows, name="kfold.csv")
    write_confusion_csv(run_dir, result.test)
    write_summary_csv(run_dir, [{
        "selected_fold": result.selected_fold,
        "test_wap": result.test.wap,
        "test_ua": result.test.ua,
        "test_weighted_f1": result.test.weighted_f1,
    }], name="metrics_summary.csv")
    (Path(run_dir) / "kfold.json").write_text(json.dumps(result.as_dict(), indent=1, sort_keys=True))
    plot_confusion(run_dir, result.test, class_names)


def write_ablation_reports(run_dir: Path, cells: list[AblationCell]) -> None:
    rows = []
    for cell in cells:
        for res in cell.runs:
            write_metrics_stream(run_dir, res.record)
        rows.append({
            "setting": cell.setting,
            "reconstruction": int(cell.reconstruction),
            "mmd": int(cell.mmd),
            "seeds": len(cell.runs),
            "mean_wap": cell.mean_wap,
            "mean_ua": cell.mean_ua,
            "mean_weighted_f1": cell.mean_weighted_f1,
        })
    write_summary_csv(run_dir, rows, name="ablation.csv")

    fig, ax = plt.subplots(figsize=(7, 4))
    names = [f"{c.setting}\nrec={'on' if c.reconstruction else 'off'} mmd={'on' if c.mmd else 'off'}" for c in cells]
    ax.bar(range(len(cells)), [c.mean_ua for c in cells], color="steelblue")
    ax.set_xticks(range(len(cells)), names, fontsize=7)
    ax.set_ylabel("mean test UA")
    ax.set_title("component contribution")
    fig.tight_layout()
    fig.savefig(_fig_dir(run_dir) / "ablation.png", dpi=120)
    plt.close(fig)


def write_sweep_reports(run_dir: Path, points: list[SweepPoint]) -> None:
    rows = []
    for point in points:
        for res in point.runs:
            write_metrics_stream(run_dir, res.record)
        for res in point.runs:
            rows.append({
                "quota": point.quota,
                "seed": res.record.seed,
                "wap": res.record.test.wap,
                "ua": res.record.test.ua,
            })
    write_summary_csv(run_dir, rows, name="sweep.csv")
    write_summary_csv(
        run_dir,
        [{"quota": p.quota, "mean_wap": p.mean_wap, "mean_ua": p.mean_ua} for p in points],
        name="sweep_mean.csv",
    )

    fig, ax = plt.subplots(figsize=(6, 4))
    quotas = [p.quota for p in points]
    ax.plot(quotas, [p.mean_ua for p in points], marker="o", label="mean test UA")
    ax.plot(quotas, [p.mean_wap for p in points], marker="s", label="mean test WAP")
    for p in points:
        ax.scatter([p.quota] * len(p.runs), [r.record.test.ua for r in p.runs],
                   color="grey", s=10, alpha=0.5)
    ax.set_xlabel("unlabeled samples used")
    ax.set_ylabel("metric")
    ax.legend(fontsize=8)
    ax.set_title("influence of unlabeled data quantity")
    fig.tight_layout()
    fig.savefig(_fig_dir(run_dir) / "sweep.png", dpi=120)
    plt.close(fig)
