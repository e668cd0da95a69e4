"""Lifelong updating of network-based digital twin models.

The package tracks a simulation model through a degradation lifecycle:
per-stage fine-tuning produces a trajectory of parameter snapshots, an
autoencoder compresses that trajectory, and a sequence model forecasts the
compressed trajectory forward so future-stage models can be generated
before their data arrives.
"""

from .autodiff import Adam, Rng, Tape, Tensor, derive_seed
from .autoencoder import Autoencoder, AutoencoderSpec, train_autoencoder
from .data import (
    BatterySynthParams,
    EngineSynthParams,
    StageDataset,
    load_run,
    synth_battery,
    synth_engine,
    write_run,
)
from .entropy import EntropyConfig, EntropyReport, entropy_report, latent_dim
from .errors import StorageError, TrainingError, TwincastError, ValidationError
from .evaluation import MseCurve, SuccessRatio, evaluate_update_step, stage_mse, success_ratio
from .fnn import ConfigSnapshot, FnnSpec, TrainConfig, apply_fnn, init_config, train_fnn
from .forecaster import LstmForecaster, TransformerForecaster, progressive_rollout, train_forecaster
from .lifecycle import (
    ConfigDatabase,
    LifecycleConfig,
    LifecycleState,
    RunResult,
    baseline_fine_tune_run,
    init_phase,
    lifelong_update_step,
    load_database,
    predict_future_configs,
    run_lifecycle,
    save_database,
    warmup_phase,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Autoencoder",
    "AutoencoderSpec",
    "BatterySynthParams",
    "ConfigDatabase",
    "ConfigSnapshot",
    "EngineSynthParams",
    "EntropyConfig",
    "EntropyReport",
    "FnnSpec",
    "LifecycleConfig",
    "LifecycleState",
    "LstmForecaster",
    "MseCurve",
    "Rng",
    "RunResult",
    "StageDataset",
    "StorageError",
    "SuccessRatio",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainingError",
    "TransformerForecaster",
    "TwincastError",
    "ValidationError",
    "apply_fnn",
    "baseline_fine_tune_run",
    "derive_seed",
    "entropy_report",
    "evaluate_update_step",
    "init_config",
    "init_phase",
    "latent_dim",
    "lifelong_update_step",
    "load_database",
    "load_run",
    "predict_future_configs",
    "progressive_rollout",
    "run_lifecycle",
    "save_database",
    "stage_mse",
    "success_ratio",
    "synth_battery",
    "synth_engine",
    "train_autoencoder",
    "train_fnn",
    "train_forecaster",
    "warmup_phase",
    "write_run",
]
