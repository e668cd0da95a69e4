"""Delimited outputs, summaries, and rendered figures for a lifecycle run.

CSV files keep full round-trip precision (shortest repr), so re-reading a
report reproduces every float bitwise. Readers exist for each writer so the
figure/summary path can work from files alone, without rerunning anything.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .entropy import EntropyReport, gibbs_probabilities
from .errors import StorageError, ValidationError
from .fnn import ConfigSnapshot

MSE_CURVES_CSV = "mse_curves.csv"
SUCCESS_CSV = "success_ratio.csv"
BOXPLOT_CSV = "boxplot.csv"
ENTROPY_JSON = "entropy.json"
SUMMARY_TXT = "summary.txt"
CONFIG_RESOLVED = "config.resolved"


def _fmt(value: float) -> str:
    return repr(float(value))


def write_mse_curves_csv(path, curves: list[ev.MseCurve]) -> Path:
    """One row per (update step, future stage, source)."""
    path = Path(path)
    rows = []
    for curve in curves:
        for stage, value in curve.as_pairs():
            rows.append((curve.update_step, stage, curve.source, value))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["update_step", "future_stage", "source", "mse"])
        for step, stage, source, value in rows:
            writer.writerow([step, stage, source, _fmt(value)])
    return path


def read_mse_curves_csv(path) -> list[ev.MseCurve]:
    path = Path(path)
    if not path.is_file():
        raise StorageError(f"curve file not found: {path}")
    grouped: dict[tuple[int, str], list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["update_step", "future_stage", "source", "mse"]:
            raise StorageError(f"{path} has unexpected header {header}")
        for row in reader:
            if not row:
                continue
            step, stage, source, value = int(row[0]), int(row[1]), row[2], float(row[3])
            grouped.setdefault((step, source), []).append((stage, value))
    curves = []
    for (step, source), pairs in sorted(grouped.items()):
        pairs.sort()
        curves.append(
            ev.MseCurve(
                update_step=step,
                source=source,
                stages=tuple(p[0] for p in pairs),
                values=tuple(p[1] for p in pairs),
            )
        )
    return curves


def write_success_csv(path, ratios: list[ev.SuccessRatio]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["update_step", "n_better", "n_all", "ratio"])
        for r in sorted(ratios, key=lambda r: r.update_step):
            writer.writerow([r.update_step, r.n_better, r.n_total, _fmt(r.ratio)])
    return path


def read_success_csv(path) -> list[ev.SuccessRatio]:
    path = Path(path)
    if not path.is_file():
        raise StorageError(f"success ratio file not found: {path}")
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["update_step", "n_better", "n_all", "ratio"]:
            raise StorageError(f"{path} has unexpected header {header}")
        for row in reader:
            if not row:
                continue
            out.append(
                ev.SuccessRatio(
                    update_step=int(row[0]), n_better=int(row[1]), n_total=int(row[2])
                )
            )
    return out


def write_boxplot_csv(path, matrix: dict[str, dict[int, list[float]]]) -> Path:
    """Ragged rows: future_stage, source, then every collected MSE in step order."""
    path = Path(path)
    rows = []
    for source in ev.SOURCES:
        for stage, values in matrix.get(source, {}).items():
            if values:
                rows.append((stage, source, values))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["future_stage", "source", "values"])
        for stage, source, values in rows:
            writer.writerow([stage, source] + [_fmt(v) for v in values])
    return path


def read_boxplot_csv(path) -> dict[str, dict[int, list[float]]]:
    path = Path(path)
    if not path.is_file():
        raise StorageError(f"boxplot file not found: {path}")
    matrix: dict[str, dict[int, list[float]]] = {src: {} for src in ev.SOURCES}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["future_stage", "source"]:
            raise StorageError(f"{path} has unexpected header {header}")
        for row in reader:
            if not row:
                continue
            stage, source = int(row[0]), row[1]
            if source not in matrix:
                raise StorageError(f"{path}: unknown source {source!r}")
            matrix[source][stage] = [float(v) for v in row[2:]]
    return matrix


def entropy_payload(snapshot: ConfigSnapshot, report: EntropyReport) -> dict:
    """Report fields plus the stage-0 occupancy distribution itself."""
    probs = gibbs_probabilities(snapshot, beta=report.beta)
    payload = report.to_dict()
    payload["probabilities"] = [float(p) for p in probs]
    return payload


def write_entropy_json(path, payload: dict) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_entropy_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise StorageError(f"entropy file not found: {path}")
    with open(path) as fh:
        return json.load(fh)


def summary_text(
    meta: dict[str, object],
    ratios: list[ev.SuccessRatio],
    matrix: dict[str, dict[int, list[float]]],
    warmup_m: int,
    burn_in: int,
    notes: list[str] = (),
) -> str:
    """Human-oriented digest; every number is formatted deterministically."""
    lines = ["lifecycle run summary", "====================="]
    for key, value in meta.items():
        lines.append(f"{key}: {value}")
    lines.append("")

    if ratios:
        steps = [r.update_step for r in ratios]
        lines.append(f"success ratio over update steps {min(steps)}..{max(steps)}:")
        for r in sorted(ratios, key=lambda r: r.update_step):
            lines.append(
                f"  step {r.update_step}: {r.n_better}/{r.n_total} = {r.ratio:.3f}"
            )
        try:
            mean = ev.mean_success(ratios, warmup_m, burn_in)
            lines.append(
                f"mean success ratio from step {warmup_m + burn_in} on: {mean:.4f}"
            )
        except ValidationError:
            lines.append(f"no update steps at or past {warmup_m + burn_in}; mean undefined")
    else:
        lines.append("no update steps were scored")
    lines.append("")

    shared = sorted(
        set(matrix.get(ev.FINE_TUNED, {})) & set(matrix.get(ev.GENERATED, {}))
    )
    if shared:
        lines.append(f"per-stage MSE medians (steps {warmup_m + burn_in} on):")
        lines.append("  stage      n   fine_tuned    generated   winner")
        for stage in shared:
            ft = ev.box_stats(matrix[ev.FINE_TUNED][stage])
            gen = ev.box_stats(matrix[ev.GENERATED][stage])
            winner = "generated" if gen.median <= ft.median else "fine_tuned"
            lines.append(
                f"  {stage:5d}  {ft.n:5d}   {ft.median:.4e}   {gen.median:.4e}   {winner}"
            )
        frac = ev.median_win_fraction(matrix)
        lines.append(f"generated median at or below fine-tuned: {frac:.3f} of stages")
    else:
        lines.append("no box-plot stages past the burn-in")

    if notes:
        lines.append("")
        lines.append("notes:")
        for note in notes:
            lines.append(f"  - {note}")
    return "\n".join(lines) + "\n"


def write_summary(path, text: str) -> Path:
    path = Path(path)
    path.write_text(text)
    return path


def render_figures(
    out_dir,
    curves: list[ev.MseCurve],
    ratios: list[ev.SuccessRatio],
    matrix: dict[str, dict[int, list[float]]],
    warmup_m: int,
    burn_in: int,
) -> list[Path]:
    """Render the standard three figures as PNG files next to the CSVs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if ratios:
        fig, ax = plt.subplots(figsize=(7, 4))
        ordered = sorted(ratios, key=lambda r: r.update_step)
        ax.plot(
            [r.update_step for r in ordered],
            [r.ratio for r in ordered],
            marker="o",
            color="tab:blue",
        )
        ax.axvline(warmup_m + burn_in, color="tab:gray", linestyle=":", label="burn-in end")
        ax.set_xlabel("update step")
        ax.set_ylabel("success ratio")
        ax.set_ylim(-0.05, 1.05)
        ax.legend(loc="lower right")
        fig.tight_layout()
        p = out / "success_ratio.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)

    if curves:
        steps = sorted({c.update_step for c in curves})
        picks = sorted({steps[0], steps[len(steps) // 2], steps[-1]})
        by_key = {(c.update_step, c.source): c for c in curves}
        fig, ax = plt.subplots(figsize=(7, 4))
        colors = ["tab:blue", "tab:orange", "tab:green"]
        for color, step in zip(colors, picks):
            for source, style in ((ev.FINE_TUNED, "--"), (ev.GENERATED, "-")):
                curve = by_key.get((step, source))
                if curve is None:
                    continue
                ax.plot(
                    curve.stages,
                    curve.values,
                    style,
                    color=color,
                    label=f"step {step} {source}",
                )
        ax.set_xlabel("future stage")
        ax.set_ylabel("MSE")
        ax.set_yscale("log")
        ax.legend(fontsize=8)
        fig.tight_layout()
        p = out / "mse_curves.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)

    shared = sorted(
        set(matrix.get(ev.FINE_TUNED, {})) & set(matrix.get(ev.GENERATED, {}))
    )
    if shared:
        fig, ax = plt.subplots(figsize=(max(7, 0.4 * len(shared)), 4))
        for source, offset, color in (
            (ev.FINE_TUNED, -0.18, "tab:orange"),
            (ev.GENERATED, 0.18, "tab:blue"),
        ):
            data = [matrix[source][s] for s in shared]
            bp = ax.boxplot(
                data,
                positions=[s + offset for s in shared],
                widths=0.3,
                patch_artist=True,
                manage_ticks=False,
            )
            for box in bp["boxes"]:
                box.set_facecolor(color)
                box.set_alpha(0.6)
        ax.set_xticks(shared)
        ax.set_xticklabels([str(s) for s in shared], fontsize=8)
        ax.set_xlabel("future stage")
        ax.set_ylabel("MSE")
        ax.set_yscale("log")
        handles = [
            plt.Line2D([0], [0], color="tab:orange", lw=6, alpha=0.6, label=ev.FINE_TUNED),
            plt.Line2D([0], [0], color="tab:blue", lw=6, alpha=0.6, label=ev.GENERATED),
        ]
        ax.legend(handles=handles, fontsize=8)
        fig.tight_layout()
        p = out / "boxplot.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)

    return written
