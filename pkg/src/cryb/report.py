"""Collate experiment outputs into a markdown report with rendered figures.

The report command scans an experiment directory tree for the delimited
artifacts the other commands leave behind (summary.csv, history CSVs, sweep
CSVs, PCA CSVs), renders matplotlib figures next to them, and writes a
single markdown document linking everything. Nothing here recomputes
results; missing pieces are simply omitted, and a directory with no
recognizable artifacts at all is an error.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import MissingArtifacts  # noqa: E402
from .evaluation import SweepCurve, load_sweep_csv  # noqa: E402

_SWEEP_HEADER = ",".join(SweepCurve.CSV_HEADER)


def _read_summary(path: Path) -> dict:
    """summary.csv -> {"rows": per-seed dicts, "mean": ..., "se": ...}."""
    out = {"rows": [], "mean": None, "se": None}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            slot = row.pop("seed")
            parsed = {k: (float(v) if v not in ("", "None") else None)
                      for k, v in row.items()}
            if slot == "mean":
                out["mean"] = parsed
            elif slot == "se":
                out["se"] = parsed
            else:
                out["rows"].append({"seed": slot, **parsed})
    return out


def _is_sweep_csv(path: Path) -> bool:
    try:
        with open(path, newline="") as f:
            return f.readline().strip() == _SWEEP_HEADER
    except OSError:
        return False


def _fmt(value, digits=1) -> str:
    if value is None:
        return "-"
    return f"{100.0 * value:.{digits}f}"


def _axis_for_plot(kind: str, axis_values):
    """Noise axes contain an inf (clean) point; plot those categorically."""
    if kind.startswith("noise"):
        labels = ["clean" if math.isinf(a) else f"{a:g}" for a in axis_values]
        return list(range(len(axis_values))), labels
    return list(axis_values), None


def _plot_sweep_family(kind: str, curves: list, fig_path: Path, xlabel: str):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for tag, rows in sorted(curves):
        axis = [r["axis"] for r in rows]
        x, labels = _axis_for_plot(kind, axis)
        ax.plot(x, [r["uar"] for r in rows], marker="o", label=tag)
        if labels is not None:
            ax.set_xticks(x, labels)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("UAR")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    ax.set_title(kind.replace("_", " "))
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def _plot_histories(histories: list, fig_path: Path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, rows in sorted(histories):
        ax.plot([r["epoch"] for r in rows], [r["val_uar"] for r in rows],
                label=name, linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation UAR")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    ax.set_title("training trajectories")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def _plot_pca(cumulative_path: Path | None, projection_path: Path | None,
              fig_dir: Path) -> list:
    written = []
    if cumulative_path is not None:
        with open(cumulative_path, newline="") as f:
            rows = list(csv.DictReader(f))
        fig, ax = plt.subplots(figsize=(5.0, 3.5))
        ax.plot([int(r["component"]) for r in rows],
                [float(r["cumulative_ratio"]) for r in rows], marker=".")
        ax.set_xlabel("principal component")
        ax.set_ylabel("cumulative explained variance")
        ax.set_ylim(0.0, 1.02)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        out = fig_dir / "pca_cumulative.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    if projection_path is not None:
        with open(projection_path, newline="") as f:
            rows = list(csv.DictReader(f))
        fig, ax = plt.subplots(figsize=(5.0, 4.0))
        labels = sorted({r["label"] for r in rows})
        for label in labels:
            xs = [float(r["pc1"]) for r in rows if r["label"] == label]
            ys = [float(r["pc2"]) for r in rows if r["label"] == label]
            ax.scatter(xs, ys, s=12, label=label, alpha=0.7)
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        out = fig_dir / "pca_projection.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written


_SWEEP_XLABEL = {"length": "kept duration (s)",
                 "filterbank": "ablated band center (Hz)"}


def render_report(experiment_dir, out_name: str = "report.md") -> Path:
    """Write {experiment_dir}/{out_name} plus figures/; returns the md path."""
    exp = Path(experiment_dir)
    if not exp.is_dir():
        raise MissingArtifacts(f"{exp} is not a directory")

    summaries = {p.parent.name: _read_summary(p)
                 for p in sorted(exp.rglob("summary.csv"))}
    history_files = sorted(exp.rglob("history_seed*.csv"))
    sweep_files = [p for p in sorted(exp.rglob("*.csv"))
                   if "__" in p.stem and _is_sweep_csv(p)]
    cumulative = sorted(exp.rglob("*_cumulative.csv"))
    projection = sorted(exp.rglob("*_projection.csv"))

    if not (summaries or history_files or sweep_files or cumulative):
        raise MissingArtifacts(f"no experiment outputs found under {exp}")

    fig_dir = exp / "figures"
    fig_dir.mkdir(exist_ok=True)
    figures = []

    sweeps_by_kind: dict = {}
    for path in sweep_files:
        tag, sweep_id = path.stem.split("__", 1)
        sweeps_by_kind.setdefault(sweep_id, []).append(
            (f"{path.parent.name}/{tag}" if path.parent != exp else tag,
             load_sweep_csv(path)))
    for sweep_id, curves in sorted(sweeps_by_kind.items()):
        out = fig_dir / f"{sweep_id}.png"
        xlabel = _SWEEP_XLABEL.get(sweep_id, "target SNR (dB)")
        _plot_sweep_family(sweep_id, curves, out, xlabel)
        figures.append(out)

    if history_files:
        from .training import read_history
        histories = [(f"{p.parent.name}/{p.stem.removeprefix('history_')}",
                      read_history(p)) for p in history_files]
        out = fig_dir / "histories.png"
        _plot_histories(histories, out)
        figures.append(out)

    figures.extend(_plot_pca(cumulative[0] if cumulative else None,
                             projection[0] if projection else None, fig_dir))

    lines = ["# Infant-cry classification report", ""]
    if summaries:
        lines += ["## Test-set results", "",
                  "| model | UAR % (SE) | sensitivity % | specificity % | seeds |",
                  "|---|---|---|---|---|"]
        for tag in sorted(summaries):
            s = summaries[tag]
            mean, se = s["mean"], s["se"]
            if mean is None:
                continue
            uar = _fmt(mean.get("uar"))
            se_txt = _fmt(se.get("uar")) if se else "0.0"
            lines.append(f"| {tag} | {uar} ({se_txt}) | "
                         f"{_fmt(mean.get('sensitivity'))} | "
                         f"{_fmt(mean.get('specificity'))} | {len(s['rows'])} |")
        lines.append("")
    if figures:
        lines += ["## Figures", ""]
        for fig in figures:
            rel = fig.relative_to(exp)
            lines.append(f"![{fig.stem}]({rel.as_posix()})")
            lines.append("")
    index_files = (sorted(exp.rglob("summary.csv"))
                   + history_files + sweep_files + cumulative + projection)
    if index_files:
        lines += ["## Artifact index", ""]
        for path in sorted(set(index_files)):
            lines.append(f"- `{path.relative_to(exp).as_posix()}`")
        lines.append("")

    out_path = exp / out_name
    out_path.write_text("\n".join(lines))
    return out_path
