"""Lifelong model updating over a sequence of degradation stages.

The flow tracked here:

1. init: train the stage-0 model from scratch, then freeze the latent
   dimension from the entropy of its parameters;
2. warm-up: fine-tune stage by stage for m stages, collecting one parameter
   snapshot per stage, then fit the dynamic model (autoencoder plus
   forecaster) on the snapshot trajectory;
3. update loop: for every later stage, fine-tune, retrain the dynamic model
   from a fresh seeded init on the grown trajectory, and forecast parameter
   snapshots for all remaining stages.

Every random draw comes from a stream derived from the config seed and the
stage index, so re-running a lifecycle reproduces it bitwise and the
baseline fine-tuning sequence matches the snapshots stored by the full run.

A snapshot database persists as a manifest plus one raw little-endian
float64 vector per stage, which keeps round-trips exact.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .autodiff import Rng
from .autoencoder import (
    Autoencoder,
    PerLayerAutoencoder,
    per_layer_latents,
    train_autoencoder,
    train_per_layer_autoencoder,
)
from .data import StageDataset
from .entropy import EntropyConfig, EntropyReport, entropy_report
from .errors import StorageError, TrainingError, ValidationError
from .fnn import ConfigSnapshot, FnnSpec, TrainConfig, init_config, train_fnn
from .forecaster import FORECASTER_KINDS, LSTM_KIND, progressive_rollout, train_forecaster

AE_JOINT = "joint"
AE_PER_LAYER = "per-layer"
AE_MODES = (AE_JOINT, AE_PER_LAYER)

# Sub-stream labels under the master seed.
_INIT_STREAM = 0
_DYNAMIC_STREAM = 1
_AE_ROLE = 0
_FORECASTER_ROLE = 1


def _default_init() -> TrainConfig:
    return TrainConfig(epochs=1000, learning_rate=5e-3)


def _default_fine_tune() -> TrainConfig:
    return TrainConfig(epochs=10, learning_rate=1e-3, l2_weight=1e-5)


def _default_dynamic() -> TrainConfig:
    return TrainConfig(epochs=1000, learning_rate=1e-4, l2_weight=1e-4)


@dataclass(frozen=True)
class LifecycleConfig:
    """Everything that fixes a lifecycle run apart from the data itself."""

    warmup_m: int
    window_w: int
    holdout_tail: int = 5
    forecaster: str = LSTM_KIND
    ae_mode: str = AE_JOINT
    seed: int = 0
    burn_in: int = 10
    entropy: EntropyConfig = field(default_factory=EntropyConfig)
    train_init: TrainConfig = field(default_factory=_default_init)
    train_fine_tune: TrainConfig = field(default_factory=_default_fine_tune)
    train_dynamic: TrainConfig = field(default_factory=_default_dynamic)

    def __post_init__(self):
        if self.window_w < 1:
            raise ValidationError(f"window must be >= 1, got {self.window_w}")
        if self.warmup_m < self.window_w:
            raise ValidationError(
                f"warm-up length {self.warmup_m} is shorter than the forecast window {self.window_w}"
            )
        if self.holdout_tail < 0:
            raise ValidationError(f"holdout tail must be >= 0, got {self.holdout_tail}")
        if self.burn_in < 0:
            raise ValidationError(f"burn-in must be >= 0, got {self.burn_in}")
        if self.forecaster not in FORECASTER_KINDS:
            raise ValidationError(
                f"unknown forecaster {self.forecaster!r}; choose one of {FORECASTER_KINDS}"
            )
        if self.ae_mode not in AE_MODES:
            raise ValidationError(f"unknown ae mode {self.ae_mode!r}; choose one of {AE_MODES}")


class ConfigDatabase:
    """Contiguous per-stage parameter snapshots for one network spec."""

    def __init__(self, spec: FnnSpec, snapshots: list[ConfigSnapshot] | None = None):
        self.spec = spec
        self._snapshots: list[ConfigSnapshot] = []
        for snap in snapshots or []:
            self.append(snap)

    def append(self, snapshot: ConfigSnapshot) -> None:
        if snapshot.spec != self.spec:
            raise ValidationError(
                f"snapshot spec {snapshot.spec.tag()} does not match database spec {self.spec.tag()}"
            )
        expected = len(self._snapshots)
        if snapshot.stage_index != expected:
            raise ValidationError(
                f"expected snapshot for stage {expected}, got stage {snapshot.stage_index}"
            )
        self._snapshots.append(snapshot)

    def __len__(self) -> int:
        return len(self._snapshots)

    def __getitem__(self, stage: int) -> ConfigSnapshot:
        return self._snapshots[stage]

    @property
    def snapshots(self) -> list[ConfigSnapshot]:
        return list(self._snapshots)

    @property
    def latest(self) -> ConfigSnapshot:
        if not self._snapshots:
            raise ValidationError("database holds no snapshots yet")
        return self._snapshots[-1]


def _write_vector(path: Path, vec: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(vec, dtype="<f8").tobytes())


def _read_vector(path: Path, expected: int) -> np.ndarray:
    if not path.is_file():
        raise StorageError(f"snapshot file missing: {path}")
    raw = path.read_bytes()
    if len(raw) != expected * 8:
        raise StorageError(
            f"{path} holds {len(raw)} bytes, expected {expected * 8} ({expected} float64 values)"
        )
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def save_database(db: ConfigDatabase, dir_path, meta: dict | None = None) -> Path:
    """Manifest plus one binary vector per stage; returns the manifest path."""
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for snap in db.snapshots:
        fname = f"theta_{snap.stage_index:03d}.bin"
        _write_vector(out / fname, snap.concat())
        entries.append({"index": snap.stage_index, "file": fname})
    manifest = {
        "fnn_spec": db.spec.tag(),
        "count": len(db),
        "stages": entries,
        "meta": dict(meta or {}),
    }
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_database(dir_path, spec: FnnSpec | None = None) -> tuple[ConfigDatabase, dict]:
    """Rebuild a database; a spec argument is checked against the manifest."""
    path = Path(dir_path) / "manifest.json"
    if not path.is_file():
        raise StorageError(f"database manifest not found: {path}")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as e:
        raise StorageError(f"malformed database manifest {path}: {e}") from e
    stored_spec = FnnSpec.from_tag(manifest["fnn_spec"])
    if spec is not None and spec != stored_spec:
        raise StorageError(
            f"database was built for spec {stored_spec.tag()}, caller expects {spec.tag()}"
        )
    db = ConfigDatabase(stored_spec)
    for entry in sorted(manifest["stages"], key=lambda e: int(e["index"])):
        vec = _read_vector(path.parent / entry["file"], stored_spec.total_params)
        db.append(ConfigSnapshot.from_concat(stored_spec, int(entry["index"]), vec))
    if len(db) != int(manifest.get("count", len(db))):
        raise StorageError(f"database manifest count disagrees with stage list in {path}")
    return db, dict(manifest.get("meta", {}))


@dataclass
class DynamicModel:
    """Joint autoencoder over the full parameter vector plus one forecaster."""

    ae: Autoencoder
    forecaster: object
    window: int

    def predict(self, snapshots: list[ConfigSnapshot], horizon: int) -> list[ConfigSnapshot]:
        if len(snapshots) < self.window:
            raise ValidationError(
                f"need at least {self.window} stored snapshots to forecast, have {len(snapshots)}"
            )
        recent = snapshots[-self.window :]
        feats = self.ae.encode_snapshots(recent)
        rows = progressive_rollout(self.forecaster, feats, horizon)
        spec = snapshots[-1].spec
        start = snapshots[-1].stage_index + 1
        return [self.ae.decode_to_snapshot(rows[k], spec, start + k) for k in range(horizon)]


@dataclass
class PerLayerDynamicModel:
    """One autoencoder and one forecaster per network layer."""

    ae: PerLayerAutoencoder
    forecasters: list[object]
    window: int

    def predict(self, snapshots: list[ConfigSnapshot], horizon: int) -> list[ConfigSnapshot]:
        if len(snapshots) < self.window:
            raise ValidationError(
                f"need at least {self.window} stored snapshots to forecast, have {len(snapshots)}"
            )
        recent = snapshots[-self.window :]
        streams = self.ae.encode_layers(recent)
        rolled = [
            progressive_rollout(f, s, horizon) for f, s in zip(self.forecasters, streams)
        ]
        start = snapshots[-1].stage_index + 1
        return [
            self.ae.decode_to_snapshot([r[k] for r in rolled], start + k)
            for k in range(horizon)
        ]


@dataclass
class StepRecord:
    """Losses logged for one stage; dynamic losses stay None during warm-up."""

    stage: int
    fine_tune_loss: float | None = None
    ae_loss: float | None = None
    forecaster_loss: float | None = None


@dataclass
class LifecycleState:
    cfg: LifecycleConfig
    spec: FnnSpec
    db: ConfigDatabase
    entropy: EntropyReport
    latent: int
    layer_latents: tuple[int, ...] | None
    init_loss: float
    dynamic: DynamicModel | PerLayerDynamicModel | None = None
    records: list[StepRecord] = field(default_factory=list)

    @property
    def current(self) -> ConfigSnapshot:
        return self.db.latest

    @property
    def stage(self) -> int:
        return len(self.db) - 1


def _check_stage_data(dataset: StageDataset, spec: FnnSpec) -> None:
    if dataset.inputs.shape[1] != spec.n_in or dataset.outputs.shape[1] != spec.n_out:
        raise ValidationError(
            f"stage {dataset.stage_index}: data is "
            f"{dataset.inputs.shape[1]} -> {dataset.outputs.shape[1]} but the network is "
            f"{spec.n_in} -> {spec.n_out}"
        )


def init_phase(dataset: StageDataset, spec: FnnSpec, cfg: LifecycleConfig) -> LifecycleState:
    """Train the stage-0 model and freeze the latent dimensionality."""
    if dataset.stage_index != 0:
        raise ValidationError(f"initial training expects stage 0, got {dataset.stage_index}")
    _check_stage_data(dataset, spec)
    rng = Rng(cfg.seed).derive(_INIT_STREAM)
    start = init_config(spec, rng, stage_index=0)
    try:
        result = train_fnn(start, dataset.inputs, dataset.outputs, cfg.train_init)
    except TrainingError as e:
        raise TrainingError(f"initial training: {e}", step=e.step) from e
    report = entropy_report(result.snapshot, cfg.entropy)
    layer_latents = (
        per_layer_latents(result.snapshot, cfg.entropy) if cfg.ae_mode == AE_PER_LAYER else None
    )
    db = ConfigDatabase(spec)
    db.append(result.snapshot)
    return LifecycleState(
        cfg=cfg,
        spec=spec,
        db=db,
        entropy=report,
        latent=report.latent,
        layer_latents=layer_latents,
        init_loss=result.final_loss,
    )


def fine_tune_step(state: LifecycleState, dataset: StageDataset) -> StepRecord:
    """Adapt the previous stage's model to the new stage's data."""
    expected = len(state.db)
    if dataset.stage_index != expected:
        raise ValidationError(
            f"expected data for stage {expected}, got stage {dataset.stage_index}"
        )
    _check_stage_data(dataset, state.spec)
    start = state.current.with_stage(dataset.stage_index)
    try:
        result = train_fnn(start, dataset.inputs, dataset.outputs, state.cfg.train_fine_tune)
    except TrainingError as e:
        raise TrainingError(
            f"fine-tune at stage {dataset.stage_index}: {e}", step=e.step
        ) from e
    state.db.append(result.snapshot)
    record = StepRecord(stage=dataset.stage_index, fine_tune_loss=result.final_loss)
    state.records.append(record)
    return record


def train_dynamic(state: LifecycleState) -> StepRecord:
    """Refit autoencoder and forecaster on all snapshots collected so far.

    Initial weights come from a fresh stream derived from (seed, stage), so
    each retrain is independent of the previous model yet reproducible.
    """
    cfg = state.cfg
    stage = state.stage
    snapshots = state.db.snapshots
    if len(snapshots) < cfg.window_w + 1:
        raise ValidationError(
            f"forecaster training needs at least {cfg.window_w + 1} snapshots, have {len(snapshots)}"
        )
    base = Rng(cfg.seed).derive(_DYNAMIC_STREAM, stage)
    try:
        if cfg.ae_mode == AE_JOINT:
            ae_res = train_autoencoder(
                snapshots, state.latent, cfg.train_dynamic, base.derive(_AE_ROLE)
            )
            feats = ae_res.ae.encode_snapshots(snapshots)
            f_res = train_forecaster(
                feats, cfg.window_w, cfg.train_dynamic, base.derive(_FORECASTER_ROLE),
                kind=cfg.forecaster,
            )
            state.dynamic = DynamicModel(ae=ae_res.ae, forecaster=f_res.model, window=cfg.window_w)
            ae_loss, f_loss = ae_res.final_loss, f_res.final_loss
        else:
            ae_res = train_per_layer_autoencoder(
                snapshots, state.layer_latents, cfg.train_dynamic, base.derive(_AE_ROLE)
            )
            streams = ae_res.ae.encode_layers(snapshots)
            forecasters = []
            f_loss = 0.0
            for i, feats in enumerate(streams):
                r = train_forecaster(
                    feats, cfg.window_w, cfg.train_dynamic,
                    base.derive(_FORECASTER_ROLE, i), kind=cfg.forecaster,
                )
                forecasters.append(r.model)
                f_loss += r.final_loss
            state.dynamic = PerLayerDynamicModel(
                ae=ae_res.ae, forecasters=forecasters, window=cfg.window_w
            )
            ae_loss = ae_res.final_loss
    except TrainingError as e:
        raise TrainingError(f"dynamic model at stage {stage}: {e}", step=e.step) from e

    if state.records and state.records[-1].stage == stage:
        record = state.records[-1]
    else:
        record = StepRecord(stage=stage)
        state.records.append(record)
    record.ae_loss = ae_loss
    record.forecaster_loss = f_loss
    return record


def warmup_phase(state: LifecycleState, datasets: list[StageDataset]) -> None:
    """Fine-tune through exactly m stages, then fit the first dynamic model."""
    if len(datasets) != state.cfg.warmup_m:
        raise ValidationError(
            f"warm-up needs exactly {state.cfg.warmup_m} stage datasets, got {len(datasets)}"
        )
    for d in datasets:
        fine_tune_step(state, d)
    train_dynamic(state)


def predict_future_configs(state: LifecycleState, horizon: int) -> list[ConfigSnapshot]:
    """Forecast snapshots for the next `horizon` stages; read-only on state."""
    if state.dynamic is None:
        raise ValidationError("no dynamic model yet; complete the warm-up phase first")
    return state.dynamic.predict(state.db.snapshots, horizon)


def lifelong_update_step(state: LifecycleState, dataset: StageDataset) -> StepRecord:
    """One full update: fine-tune on the new stage, then refit the dynamic model."""
    fine_tune_step(state, dataset)
    return train_dynamic(state)


def baseline_fine_tune_run(
    datasets: list[StageDataset], spec: FnnSpec, cfg: LifecycleConfig
) -> LifecycleState:
    """Stage-by-stage fine-tuning only; no dynamic model is ever built.

    Uses the same derived seeds as the full lifecycle, so the stored
    snapshots match the full run's database exactly.
    """
    if not datasets:
        raise ValidationError("baseline run needs at least one stage")
    state = init_phase(datasets[0], spec, cfg)
    for d in datasets[1:]:
        fine_tune_step(state, d)
    return state


@dataclass
class RunResult:
    state: LifecycleState
    curves: list[ev.MseCurve]
    ratios: list[ev.SuccessRatio]
    predictions: dict[int, list[ConfigSnapshot]]
    notes: list[str]


def run_lifecycle(
    datasets: list[StageDataset],
    spec: FnnSpec,
    cfg: LifecycleConfig,
    progress=None,
) -> RunResult:
    """Drive init, warm-up, and the update loop over a full stage sequence.

    The final holdout_tail stages are never trained on; they are still
    scored by every update step's forecast. On a divergence the partial
    result is attached to the raised error as `partial`.
    """
    say = progress if progress is not None else (lambda msg: None)
    for k, d in enumerate(datasets):
        if d.stage_index != k:
            raise ValidationError(f"stage indices must run 0..{len(datasets) - 1} in order")
    last_trained = len(datasets) - 1 - cfg.holdout_tail
    if last_trained < cfg.warmup_m:
        raise ValidationError(
            f"{len(datasets)} stages with holdout {cfg.holdout_tail} leave no room for "
            f"warm-up m={cfg.warmup_m}; need at least {cfg.warmup_m + cfg.holdout_tail + 1}"
        )

    t0 = time.perf_counter()
    state = init_phase(datasets[0], spec, cfg)
    say(
        f"init: loss={state.init_loss:.6e} entropy={state.entropy.entropy_bits:.3f} bits "
        f"latent={state.latent} ({time.perf_counter() - t0:.1f} s)"
    )

    curves: list[ev.MseCurve] = []
    ratios: list[ev.SuccessRatio] = []
    predictions: dict[int, list[ConfigSnapshot]] = {}
    notes: list[str] = []
    try:
        for d in datasets[1 : cfg.warmup_m + 1]:
            t = time.perf_counter()
            rec = fine_tune_step(state, d)
            say(
                f"warm-up stage {rec.stage}: fine_tune_loss={rec.fine_tune_loss:.6e} "
                f"({time.perf_counter() - t:.1f} s)"
            )
        t = time.perf_counter()
        rec = train_dynamic(state)
        say(
            f"dynamic model at stage {rec.stage}: ae_loss={rec.ae_loss:.6e} "
            f"forecaster_loss={rec.forecaster_loss:.6e} ({time.perf_counter() - t:.1f} s)"
        )

        for i in range(cfg.warmup_m, last_trained + 1):
            t = time.perf_counter()
            if i > cfg.warmup_m:
                rec = lifelong_update_step(state, datasets[i])
                say(
                    f"update step {i}: fine_tune_loss={rec.fine_tune_loss:.6e} "
                    f"ae_loss={rec.ae_loss:.6e} forecaster_loss={rec.forecaster_loss:.6e} "
                    f"({time.perf_counter() - t:.1f} s)"
                )
            future = datasets[i + 1 :]
            if not future:
                notes.append(f"update step {i}: no future stages, success ratio undefined")
                say(f"update step {i}: no future stages to score")
                continue
            preds = predict_future_configs(state, len(future))
            ft, gen = ev.evaluate_update_step(i, state.current, preds, future)
            sc = ev.success_ratio(ft, gen)
            curves.extend([ft, gen])
            ratios.append(sc)
            predictions[i] = preds
            say(
                f"update step {i}: sc={sc.ratio:.3f} ({sc.n_better}/{sc.n_total} future stages)"
            )
    except TrainingError as e:
        e.partial = RunResult(
            state=state, curves=curves, ratios=ratios, predictions=predictions, notes=notes
        )
        raise
    return RunResult(state=state, curves=curves, ratios=ratios, predictions=predictions, notes=notes)


def save_predictions(
    predictions: dict[int, list[ConfigSnapshot]], dir_path, spec: FnnSpec
) -> Path:
    """Forecast snapshots per update step, same binary layout as the database."""
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    steps = []
    for step in sorted(predictions):
        entry = {"update_step": step, "stages": [], "files": []}
        for snap in predictions[step]:
            fname = f"pred_{step:03d}_{snap.stage_index:03d}.bin"
            _write_vector(out / fname, snap.concat())
            entry["stages"].append(snap.stage_index)
            entry["files"].append(fname)
        steps.append(entry)
    manifest = {"fnn_spec": spec.tag(), "steps": steps}
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_predictions(dir_path, spec: FnnSpec | None = None) -> dict[int, list[ConfigSnapshot]]:
    path = Path(dir_path) / "manifest.json"
    if not path.is_file():
        raise StorageError(f"predictions manifest not found: {path}")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as e:
        raise StorageError(f"malformed predictions manifest {path}: {e}") from e
    stored_spec = FnnSpec.from_tag(manifest["fnn_spec"])
    if spec is not None and spec != stored_spec:
        raise StorageError(
            f"predictions were built for spec {stored_spec.tag()}, caller expects {spec.tag()}"
        )
    out: dict[int, list[ConfigSnapshot]] = {}
    for entry in manifest["steps"]:
        step = int(entry["update_step"])
        snaps = []
        for stage, fname in zip(entry["stages"], entry["files"]):
            vec = _read_vector(path.parent / fname, stored_spec.total_params)
            snaps.append(ConfigSnapshot.from_concat(stored_spec, int(stage), vec))
        out[step] = snaps
    return out
