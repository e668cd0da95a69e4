"""Per-stage datasets, preprocessing recipes, and synthetic degradation runs.

A run is an ordered list of stage datasets sharing column structure. On disk
it is a directory with a JSON manifest plus one CSV per stage, every number
rendered with full round-trip precision so load(write(run)) is bitwise
exact.

Two synthetic generators emulate the shapes of real degradation data:

* battery: saturating charge curves v(t) = v_min + (v_max - v_min)
  (1 - exp(-t/tau_i)) whose time constant grows and charge duration shrinks
  with the stage index;
* engine: smooth random-walk operating conditions driving a fixed tanh
  feature function whose output decays by a per-stage factor, then block
  smoothing/downsampling and joint min-max scaling, mirroring how flight
  recordings are prepared.

Generators draw each stage from a derived substream, so a K-stage run is a
bitwise prefix of a longer run with the same seed.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng
from .errors import StorageError, ValidationError

BATTERY_KIND = "battery"
ENGINE_KIND = "engine"
SYNTH_KINDS = (BATTERY_KIND, ENGINE_KIND)

# Top-level sub-stream channel for data synthesis. Training code derives its
# streams under channels 0 and 1, so sharing one seed between data and
# training never reuses a stream.
_SYNTH_STREAM = 2


@dataclass(frozen=True)
class StageDataset:
    """Inputs and outputs collected at one degradation stage."""

    stage_index: int
    inputs: np.ndarray = field(repr=False)
    outputs: np.ndarray = field(repr=False)
    input_columns: tuple[str, ...]
    output_columns: tuple[str, ...]
    units: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.stage_index < 0:
            raise ValidationError(f"stage index must be >= 0, got {self.stage_index}")
        x = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        y = np.atleast_2d(np.asarray(self.outputs, dtype=np.float64))
        if y.shape[0] == 1 and x.shape[0] > 1 and np.asarray(self.outputs).ndim == 1:
            y = y.T
        if x.shape[0] != y.shape[0]:
            raise ValidationError(
                f"stage {self.stage_index}: inputs have {x.shape[0]} rows, outputs {y.shape[0]}"
            )
        if x.shape[0] < 1:
            raise ValidationError(f"stage {self.stage_index}: empty dataset")
        if x.shape[1] != len(self.input_columns) or y.shape[1] != len(self.output_columns):
            raise ValidationError(f"stage {self.stage_index}: column names do not match data width")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError(f"stage {self.stage_index}: non-finite values")
        for arr in (x, y):
            arr.flags.writeable = False
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)
        object.__setattr__(self, "units", dict(self.units))

    @property
    def n_rows(self) -> int:
        return self.inputs.shape[0]


def _check_run(datasets: list[StageDataset]) -> None:
    if not datasets:
        raise ValidationError("a run needs at least one stage")
    first = datasets[0]
    for k, d in enumerate(datasets):
        if d.stage_index != k:
            raise ValidationError(f"stage indices must be contiguous from 0; position {k} has {d.stage_index}")
        if d.input_columns != first.input_columns or d.output_columns != first.output_columns:
            raise ValidationError(f"stage {k}: column structure differs from stage 0")


def even_indices(length: int, n: int) -> np.ndarray:
    """n indices spread evenly over 0..length-1, endpoints always included."""
    if n < 2:
        raise ValidationError(f"need n >= 2 samples, got {n}")
    if length < n:
        raise ValidationError(f"series of length {length} cannot yield {n} samples")
    k = np.arange(n, dtype=np.float64)
    return np.rint(k * (length - 1) / (n - 1)).astype(np.int64)


def sample_evenly(series: np.ndarray, n: int = 200) -> np.ndarray:
    """Rows of the series at evenly spread indices (first and last kept)."""
    series = np.asarray(series, dtype=np.float64)
    return series[even_indices(series.shape[0], n)]


def smooth_downsample(series: np.ndarray, window: int = 50) -> np.ndarray:
    """Means of consecutive non-overlapping blocks; the partial tail is dropped.

    Averaging aligned blocks is one pass of a moving-average filter followed
    by same-stride decimation.
    """
    if window < 1:
        raise ValidationError(f"window must be >= 1, got {window}")
    series = np.asarray(series, dtype=np.float64)
    length = series.shape[0]
    if length < window:
        raise ValidationError(f"series of length {length} is shorter than window {window}")
    blocks = length // window
    trimmed = series[: blocks * window]
    shaped = trimmed.reshape((blocks, window) + series.shape[1:])
    return shaped.mean(axis=1)


@dataclass(frozen=True)
class ScalerParams:
    """Per-column bounds fitted jointly over all stages of a run."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64).ravel()
        maxs = np.asarray(self.maxs, dtype=np.float64).ravel()
        if mins.shape != maxs.shape:
            raise ValidationError("mins and maxs must have the same length")
        if np.any(maxs < mins):
            raise ValidationError("max below min in scaler parameters")
        for arr in (mins, maxs):
            arr.flags.writeable = False
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def constant_mask(self) -> np.ndarray:
        return self.maxs == self.mins


def minmax_fit(blocks: list[np.ndarray]) -> ScalerParams:
    """Pool every block's rows per column; constant columns trigger a warning."""
    if not blocks:
        raise ValidationError("minmax_fit needs at least one block")
    stacked = np.vstack([np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in blocks])
    if not np.all(np.isfinite(stacked)):
        raise ValidationError("non-finite values in scaler input")
    params = ScalerParams(mins=stacked.min(axis=0), maxs=stacked.max(axis=0))
    if np.any(params.constant_mask):
        cols = np.flatnonzero(params.constant_mask).tolist()
        warnings.warn(f"constant column(s) {cols} map to 0 under min-max scaling", stacklevel=2)
    return params


def minmax_apply(params: ScalerParams, x: np.ndarray) -> np.ndarray:
    """(x - min) / (max - min) per column; constant columns map to 0."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    span = np.where(params.constant_mask, 1.0, params.maxs - params.mins)
    out = (x - params.mins) / span
    out[:, params.constant_mask] = 0.0
    return out


def minmax_invert(params: ScalerParams, scaled: np.ndarray) -> np.ndarray:
    """Inverse of minmax_apply; constant columns recover their fitted value."""
    scaled = np.atleast_2d(np.asarray(scaled, dtype=np.float64))
    span = np.where(params.constant_mask, 0.0, params.maxs - params.mins)
    return scaled * span + params.mins


@dataclass(frozen=True)
class BatterySynthParams:
    """Saturating charge-curve family with stage-dependent time constants."""

    stages: int
    seed: int = 0
    noise: float = 0.0
    points: int = 200
    v_min: float = 2.7
    v_max: float = 4.2
    current: float = 0.74
    tau0: float = 0.3
    tau_growth: float = 0.015
    t_end0: float = 1.0
    duration_fade: float = 0.01

    def __post_init__(self):
        if self.stages < 1:
            raise ValidationError(f"stage count must be >= 1, got {self.stages}")
        if self.noise < 0:
            raise ValidationError(f"noise must be >= 0, got {self.noise}")
        if self.points < 2:
            raise ValidationError(f"points must be >= 2, got {self.points}")
        if not (0 <= self.duration_fade < 1):
            raise ValidationError(f"duration fade must lie in [0, 1), got {self.duration_fade}")
        if self.tau_growth < 0 or self.tau0 <= 0 or self.t_end0 <= 0:
            raise ValidationError("time constants must be positive, growth rate >= 0")
        if self.v_max <= self.v_min:
            raise ValidationError("v_max must exceed v_min")


def synth_battery(params: BatterySynthParams) -> list[StageDataset]:
    """Charging curves sampled at evenly spaced times over a shrinking span."""
    rng = Rng(params.seed)
    datasets = []
    for i in range(params.stages):
        t_end = params.t_end0 * (1.0 - params.duration_fade) ** i
        tau = params.tau0 * (1.0 + params.tau_growth * i)
        t = np.linspace(0.0, t_end, params.points)
        v = params.v_min + (params.v_max - params.v_min) * (1.0 - np.exp(-t / tau))
        if params.noise > 0:
            v = v + rng.derive(_SYNTH_STREAM, i).normal(0.0, params.noise, params.points)
        inputs = np.column_stack([np.full(params.points, params.current), t])
        datasets.append(
            StageDataset(
                stage_index=i,
                inputs=inputs,
                outputs=v.reshape(-1, 1),
                input_columns=("current", "time"),
                output_columns=("voltage",),
                units={"current": "A", "time": "h", "voltage": "V"},
            )
        )
    return datasets


@dataclass(frozen=True)
class EngineSynthParams:
    """Random-walk operating conditions driving a decaying response function."""

    stages: int
    seed: int = 0
    noise: float = 0.0
    raw_points: int = 5000
    window: int = 50
    degradation: float = 0.004

    def __post_init__(self):
        if self.stages < 1:
            raise ValidationError(f"stage count must be >= 1, got {self.stages}")
        if self.noise < 0:
            raise ValidationError(f"noise must be >= 0, got {self.noise}")
        if not (0 <= self.degradation < 1):
            raise ValidationError(f"degradation rate must lie in [0, 1), got {self.degradation}")
        if self.degradation * (self.stages - 1) >= 1:
            raise ValidationError("degradation reaches zero response before the last stage")
        if self.raw_points < self.window:
            raise ValidationError("raw series shorter than the smoothing window")


def _smooth_walk(rng: Rng, n: int, scale: float) -> np.ndarray:
    # Leaky accumulation keeps the walk bounded without losing smoothness.
    steps = rng.normal(0.0, scale, n)
    out = np.empty(n)
    level = 0.0
    for k in range(n):
        level = 0.995 * level + steps[k]
        out[k] = level
    return out


def engine_response(alt, mach, tra, t2, t) -> np.ndarray:
    """Fixed smooth map from operating conditions to the monitored response."""
    return (
        0.8 * np.tanh(0.9 * alt - 0.4 * mach + 0.3 * tra)
        + 0.6 * np.tanh(0.5 * t2 + 0.7 * mach - 0.2)
        + 0.5 * np.tanh(0.3 * alt + 0.4 * t2 + 0.6 * t)
        + 0.2 * t
    )


def synth_engine(params: EngineSynthParams) -> list[StageDataset]:
    """Per-stage walks -> decayed response -> block smoothing -> joint scaling."""
    rng = Rng(params.seed)
    raw_inputs = []
    raw_outputs = []
    for i in range(params.stages):
        stage_rng = rng.derive(_SYNTH_STREAM, i)
        walks = [_smooth_walk(stage_rng.derive(k), params.raw_points, 0.03) for k in range(4)]
        t = np.linspace(0.0, 1.0, params.raw_points)
        alt, mach, tra, t2 = walks
        response = engine_response(alt, mach, tra, t2, t) * (1.0 - params.degradation * i)
        if params.noise > 0:
            response = response + stage_rng.derive(4).normal(0.0, params.noise, params.raw_points)
        raw_inputs.append(np.column_stack([alt, mach, tra, t2, t]))
        raw_outputs.append(response.reshape(-1, 1))

    smooth_x = [smooth_downsample(x, params.window) for x in raw_inputs]
    smooth_y = [smooth_downsample(y, params.window) for y in raw_outputs]
    scaler_x = minmax_fit(smooth_x)
    scaler_y = minmax_fit(smooth_y)
    datasets = []
    for i in range(params.stages):
        datasets.append(
            StageDataset(
                stage_index=i,
                inputs=minmax_apply(scaler_x, smooth_x[i]),
                outputs=minmax_apply(scaler_y, smooth_y[i]),
                input_columns=("alt", "mach", "tra", "t2", "time"),
                output_columns=("response",),
                units={c: "scaled" for c in ("alt", "mach", "tra", "t2", "time", "response")},
            )
        )
    return datasets


def _format(value: float) -> str:
    return repr(float(value))


def write_run(
    datasets: list[StageDataset],
    out_dir,
    name: str,
    fnn_spec_tag: str | None = None,
    preprocessing: tuple[str, ...] = (),
    seed: int | None = None,
):
    """Write a manifest plus one CSV per stage; values keep full precision."""
    from pathlib import Path

    _check_run(datasets)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    first = datasets[0]
    stage_entries = []
    for d in datasets:
        fname = f"stage_{d.stage_index:03d}.csv"
        with open(out / fname, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(d.input_columns) + list(d.output_columns))
            for xr, yr in zip(d.inputs, d.outputs):
                writer.writerow([_format(v) for v in xr] + [_format(v) for v in yr])
        stage_entries.append({"index": d.stage_index, "file": fname})
    manifest = {
        "name": name,
        "fnn_spec": fnn_spec_tag,
        "input_columns": list(first.input_columns),
        "output_columns": list(first.output_columns),
        "units": first.units,
        "preprocessing": list(preprocessing),
        "seed": seed,
        "stages": stage_entries,
    }
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_run(manifest_path) -> tuple[list[StageDataset], dict]:
    """Load stages in index order; gaps are closed by re-indexing with a warning.

    Accepts either the manifest file or the directory containing it.
    """
    from pathlib import Path

    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise StorageError(f"run manifest not found: {path}")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as e:
        raise StorageError(f"malformed run manifest {path}: {e}") from e
    stages = manifest.get("stages", [])
    if not stages:
        raise StorageError(f"run manifest {path} lists no stages")
    input_columns = tuple(manifest["input_columns"])
    output_columns = tuple(manifest["output_columns"])
    units = dict(manifest.get("units", {}))
    entries = sorted(stages, key=lambda e: int(e["index"]))
    indices = [int(e["index"]) for e in entries]
    if indices != list(range(len(entries))):
        warnings.warn(
            f"non-contiguous stage indices {indices} re-indexed to 0..{len(entries) - 1}",
            stacklevel=2,
        )
    datasets = []
    for new_index, entry in enumerate(entries):
        fpath = path.parent / entry["file"]
        if not fpath.is_file():
            raise StorageError(f"stage {entry['index']}: data file missing: {fpath}")
        with open(fpath, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise StorageError(f"stage {entry['index']}: empty data file {fpath}")
            expected = list(input_columns) + list(output_columns)
            if header != expected:
                raise ValidationError(
                    f"stage {entry['index']}: header {header} does not match manifest columns {expected}"
                )
            try:
                rows = [[float(cell) for cell in row] for row in reader if row]
            except ValueError as e:
                raise ValidationError(f"stage {entry['index']}: non-numeric cell: {e}") from e
        if not rows:
            raise ValidationError(f"stage {entry['index']}: no data rows")
        table = np.asarray(rows, dtype=np.float64)
        if table.shape[1] != len(expected):
            raise ValidationError(f"stage {entry['index']}: inconsistent column count")
        n_in = len(input_columns)
        datasets.append(
            StageDataset(
                stage_index=new_index,
                inputs=table[:, :n_in],
                outputs=table[:, n_in:],
                input_columns=input_columns,
                output_columns=output_columns,
                units=units,
            )
        )
    _check_run(datasets)
    return datasets, manifest
