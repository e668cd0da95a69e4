"""Accuracy metrics comparing generated future models against frozen ones.

At update step i the twin has been trained on stages 0..i. Two model
families are scored on every future stage j > i:

* "fine_tuned": the stage-i model applied unchanged to stage j, the
  degradation-unaware reference;
* "generated": the model forecast for stage j from the latent trajectory.

The success ratio per step counts future stages where the generated model
is strictly better; ties count against it. Box-plot collation groups MSE
values by future stage over all update steps past a burn-in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import StageDataset
from .errors import ValidationError
from .fnn import ConfigSnapshot, apply_fnn

FINE_TUNED = "fine_tuned"
GENERATED = "generated"
SOURCES = (FINE_TUNED, GENERATED)


def stage_mse(snapshot: ConfigSnapshot, dataset: StageDataset) -> float:
    """Mean squared error of the model response over one stage dataset."""
    pred = apply_fnn(snapshot, dataset.inputs)
    return float(np.mean((pred - dataset.outputs) ** 2))


@dataclass(frozen=True)
class MseCurve:
    """MSE per future stage for one model source at one update step."""

    update_step: int
    source: str
    stages: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValidationError(f"unknown curve source {self.source!r}")
        if len(self.stages) != len(self.values):
            raise ValidationError("stage list and value list differ in length")
        if len(self.stages) == 0:
            raise ValidationError(f"update step {self.update_step}: empty curve")
        if any(s <= self.update_step for s in self.stages):
            raise ValidationError(f"update step {self.update_step}: curve includes non-future stages")

    def as_pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.stages, self.values))


def evaluate_update_step(
    update_step: int,
    current: ConfigSnapshot,
    predicted: list[ConfigSnapshot],
    future: list[StageDataset],
) -> tuple[MseCurve, MseCurve]:
    """Score the frozen current model and the forecast models on future stages.

    predicted[k] must carry the stage index of future[k]; every future stage
    after the update step, including any held-out tail, is scored.
    """
    if not future:
        raise ValidationError(f"update step {update_step}: no future stages to evaluate")
    if len(predicted) != len(future):
        raise ValidationError(
            f"update step {update_step}: {len(predicted)} predictions for {len(future)} future stages"
        )
    stages = tuple(d.stage_index for d in future)
    for snap, d in zip(predicted, future):
        if snap.stage_index != d.stage_index:
            raise ValidationError(
                f"update step {update_step}: prediction for stage {snap.stage_index} "
                f"paired with dataset for stage {d.stage_index}"
            )
    ft = MseCurve(
        update_step=update_step,
        source=FINE_TUNED,
        stages=stages,
        values=tuple(stage_mse(current, d) for d in future),
    )
    gen = MseCurve(
        update_step=update_step,
        source=GENERATED,
        stages=stages,
        values=tuple(stage_mse(snap, d) for snap, d in zip(predicted, future)),
    )
    return ft, gen


@dataclass(frozen=True)
class SuccessRatio:
    """Fraction of future stages where the generated model wins strictly."""

    update_step: int
    n_better: int
    n_total: int

    @property
    def ratio(self) -> float:
        return self.n_better / self.n_total


def success_ratio(fine_tuned: MseCurve, generated: MseCurve) -> SuccessRatio:
    """Strictly smaller generated MSE counts as a win; ties do not."""
    if fine_tuned.update_step != generated.update_step:
        raise ValidationError("curves come from different update steps")
    if fine_tuned.stages != generated.stages:
        raise ValidationError(
            f"update step {fine_tuned.update_step}: curves cover different stages"
        )
    wins = sum(1 for g, f in zip(generated.values, fine_tuned.values) if g < f)
    return SuccessRatio(
        update_step=fine_tuned.update_step,
        n_better=wins,
        n_total=len(fine_tuned.stages),
    )


def mean_success(ratios: list[SuccessRatio], warmup_m: int, burn_in: int = 10) -> float:
    """Mean success ratio over update steps at or past warmup_m + burn_in."""
    kept = [r.ratio for r in ratios if r.update_step >= warmup_m + burn_in]
    if not kept:
        raise ValidationError(
            f"no update steps at or past {warmup_m} + {burn_in}; cannot average"
        )
    return float(np.mean(kept))


def boxplot_matrix(
    curves: list[MseCurve], warmup_m: int, burn_in: int = 10
) -> dict[str, dict[int, list[float]]]:
    """Group MSE values per (source, future stage) over post-burn-in steps.

    Stage j collects one value from each update step i with
    warmup_m + burn_in <= i < j, ordered by step; stages with no
    contributing step are omitted.
    """
    matrix: dict[str, dict[int, list[float]]] = {src: {} for src in SOURCES}
    for curve in sorted(curves, key=lambda c: c.update_step):
        if curve.update_step < warmup_m + burn_in:
            continue
        per_stage = matrix[curve.source]
        for stage, value in curve.as_pairs():
            per_stage.setdefault(stage, []).append(value)
    return matrix


@dataclass(frozen=True)
class BoxStats:
    """Five-number summary with linearly interpolated quartiles."""

    n: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


def box_stats(values: list[float]) -> BoxStats:
    if not values:
        raise ValidationError("cannot summarize an empty value list")
    arr = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    return BoxStats(
        n=arr.size,
        minimum=float(arr.min()),
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        maximum=float(arr.max()),
    )


def median_win_fraction(matrix: dict[str, dict[int, list[float]]]) -> float:
    """Fraction of shared box-plot stages where the generated median is
    at or below the fine-tuned median."""
    ft, gen = matrix[FINE_TUNED], matrix[GENERATED]
    shared = sorted(set(ft) & set(gen))
    if not shared:
        raise ValidationError("no future stage has box-plot data for both sources")
    wins = sum(
        1
        for stage in shared
        if box_stats(gen[stage]).median <= box_stats(ft[stage]).median
    )
    return wins / len(shared)
