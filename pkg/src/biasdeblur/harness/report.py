"""Render a finalized run into one metrics CSV and a set of PNG figures."""

from __future__ import annotations

import csv
import io
import json
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..imaging import read_float_container  # noqa: E402
from .runs import ExperimentRun, row_key  # noqa: E402

METRICS_CSV = "metrics.csv"


class ReportWarning(UserWarning):
    pass


def cell_columns(rows: list[dict]) -> list[str]:
    cols: list[str] = []
    for r in rows:
        for k in r.get("cell", {}):
            if k not in cols:
                cols.append(k)
    return cols


def metrics_csv_text(run: ExperimentRun) -> str:
    """Long-format table: one line per (cell, seed, scene)."""
    rows = sorted(run.rows, key=row_key)
    cols = cell_columns(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_id", *cols, "seed", "scene", "psnr", "ssim"])
    for r in rows:
        cell = r.get("cell", {})
        w.writerow([run.run_id, *[_fmt(cell.get(c, "")) for c in cols], r["seed"], r["scene"], f"{r['psnr']:.6f}", f"{r['ssim']:.6f}"])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _read_trace(path: Path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return np.zeros(0), np.zeros(0)
    return data[:, 0], data[:, 1]


def plot_loss_curves(run: ExperimentRun, path: Path) -> Path | None:
    if not run.traces:
        warnings.warn(f"run {run.run_id} has no loss traces; skipping loss figure", ReportWarning, stacklevel=2)
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(run.traces):
        steps, loss = _read_trace(run.path(run.traces[name]))
        if len(loss):
            ax.semilogy(steps, np.maximum(loss, 1e-30), label=name, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_metric_bars(run: ExperimentRun, path: Path) -> Path | None:
    if not run.rows:
        warnings.warn(f"run {run.run_id} has no metric rows; skipping bar figure", ReportWarning, stacklevel=2)
        return None
    groups: dict[str, list[float]] = {}
    for r in sorted(run.rows, key=row_key):
        label = ",".join(f"{k}={_fmt(v)}" for k, v in r.get("cell", {}).items()) or "all"
        groups.setdefault(label, []).append(r["psnr"])
    labels = list(groups)
    means = [np.mean(groups[k]) for k in labels]
    errs = [np.std(groups[k]) for k in labels]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(labels) + 2), 4))
    ax.bar(range(len(labels)), means, yerr=errs, color="0.6", edgecolor="k")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=6)
    ax.set_ylabel("PSNR (dB)")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_bias_fields(run: ExperimentRun, path: Path) -> Path | None:
    learned = sorted(k for k in run.artifacts if k.startswith("bias_"))
    if not learned or "true_bias" not in run.artifacts:
        return None
    truth = read_float_container(run.path(run.artifacts["true_bias"]))
    panels = [("true bias", truth)] + [(k, read_float_container(run.path(run.artifacts[k]))) for k in learned]
    lo = min(float(p.min()) for _, p in panels)
    hi = max(float(p.max()) for _, p in panels)
    fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3), squeeze=False)
    for ax, (title, img) in zip(axes[0], panels):
        im = ax.imshow(img, cmap="magma", vmin=lo, vmax=hi)
        ax.set_title(f"{title}\nmean {img.mean():.4f}", fontsize=7)
        ax.axis("off")
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_stagnation(record: dict, path: Path) -> Path:
    """Both descent traces on a log axis with the residual floor as a line."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, style in (("biased", "-"), ("corrected", "--")):
        c = record[key]
        ax.semilogy(c["step"], np.maximum(c["loss"], 1e-30), style, label=key)
    floor = record["residual_floor"]
    ax.axhline(max(floor, 1e-30), color="r", lw=1, label="residual floor")
    ax.set_xlabel("step")
    ax.set_ylabel("||Hx - y||^2")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def emit_report(run: ExperimentRun) -> dict:
    """Write metrics.csv and every applicable figure; paths go into the run."""
    if not run.finalized:
        raise ValueError(f"run {run.run_id} is not finalized")
    out = run.directory / "report"
    out.mkdir(exist_ok=True)
    csv_path = out / METRICS_CSV
    csv_path.write_text(metrics_csv_text(run), encoding="utf-8")
    figures = []
    for name, fn in (("loss_curves.png", plot_loss_curves), ("metrics.png", plot_metric_bars), ("bias_fields.png", plot_bias_fields)):
        p = fn(run, out / name)
        if p is not None:
            figures.append(p)
    if run.stagnation:
        figures.append(plot_stagnation(run.stagnation, out / "stagnation.png"))
    run.tables = [str(csv_path.relative_to(run.directory))]
    run.figures = [str(p.relative_to(run.directory)) for p in figures]
    run.save()
    return {"tables": run.tables, "figures": run.figures}


def report_json(run: ExperimentRun) -> str:
    return json.dumps({"run_id": run.run_id, "tables": run.tables, "figures": run.figures}, indent=2)
