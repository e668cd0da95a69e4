"""Fully connected twin models and their flat-parameter snapshots.

A model is specified by its layer widths; its parameters at a given stage
are stored as one flat vector per affine layer (weights row-major, then
biases). Those vectors are the unit of persistence, of compression, and of
forecasting: everything downstream treats a trained model as a point in
parameter space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import TrainingError, ValidationError


@dataclass(frozen=True)
class FnnSpec:
    """Layer widths of a tanh-hidden, linear-output dense network."""

    layer_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ValidationError("a network needs at least an input and an output width")
        if any(d < 1 for d in dims):
            raise ValidationError(f"layer widths must be >= 1, got {dims}")

    @property
    def n_in(self) -> int:
        return self.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        """Number of affine layers (each contributes one flat vector)."""
        return len(self.layer_dims) - 1

    @property
    def layer_shapes(self) -> tuple[tuple[int, int], ...]:
        """Weight shapes (n_out, n_in) per affine layer."""
        d = self.layer_dims
        return tuple((d[i + 1], d[i]) for i in range(self.n_layers))

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        """Flat-vector length per affine layer: n_out * n_in + n_out."""
        return tuple(o * i + o for (o, i) in self.layer_shapes)

    @property
    def total_params(self) -> int:
        return sum(self.layer_sizes)

    def tag(self) -> str:
        """Stable text form, e.g. '2-6-6-6-6-1'; used in stored manifests."""
        return "-".join(str(d) for d in self.layer_dims)

    @classmethod
    def from_tag(cls, tag: str) -> "FnnSpec":
        try:
            dims = tuple(int(part) for part in tag.split("-"))
        except ValueError as e:
            raise ValidationError(f"bad spec tag {tag!r}") from e
        return cls(dims)


def flatten_layer(weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Row-major weights followed by biases, as one 1-D float64 vector."""
    w = np.asarray(weight, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64).ravel()
    if w.ndim != 2 or b.shape[0] != w.shape[0]:
        raise ValidationError(f"layer mismatch: weight {w.shape} vs bias {b.shape}")
    return np.concatenate([w.ravel(order="C"), b])


def unflatten_layer(vector: np.ndarray, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of flatten_layer for a weight of the given (n_out, n_in) shape."""
    n_out, n_in = shape
    vec = np.asarray(vector, dtype=np.float64).ravel()
    if vec.shape[0] != n_out * n_in + n_out:
        raise ValidationError(f"vector of length {vec.shape[0]} does not fit shape {shape}")
    weight = vec[: n_out * n_in].reshape(n_out, n_in)
    bias = vec[n_out * n_in :]
    return weight, bias


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ConfigSnapshot:
    """All parameters of one model at one stage, one flat vector per layer."""

    spec: FnnSpec
    stage_index: int
    vectors: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        if self.stage_index < 0:
            raise ValidationError(f"stage index must be >= 0, got {self.stage_index}")
        vectors = tuple(_frozen(v) for v in self.vectors)
        if len(vectors) != self.spec.n_layers:
            raise ValidationError(
                f"expected {self.spec.n_layers} layer vectors, got {len(vectors)}"
            )
        for vec, size in zip(vectors, self.spec.layer_sizes):
            if vec.ndim != 1 or vec.shape[0] != size:
                raise ValidationError(f"layer vector has length {vec.size}, expected {size}")
            if not np.all(np.isfinite(vec)):
                raise ValidationError("layer vector contains non-finite values")
        object.__setattr__(self, "vectors", vectors)

    def concat(self) -> np.ndarray:
        """Every parameter in one vector, layers in order."""
        return np.concatenate(self.vectors)

    @classmethod
    def from_concat(cls, spec: FnnSpec, stage_index: int, flat: np.ndarray) -> "ConfigSnapshot":
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.shape[0] != spec.total_params:
            raise ValidationError(
                f"flat vector has length {flat.shape[0]}, expected {spec.total_params}"
            )
        vectors = []
        offset = 0
        for size in spec.layer_sizes:
            vectors.append(flat[offset : offset + size])
            offset += size
        return cls(spec=spec, stage_index=stage_index, vectors=tuple(vectors))

    def with_stage(self, stage_index: int) -> "ConfigSnapshot":
        return ConfigSnapshot(spec=self.spec, stage_index=stage_index, vectors=self.vectors)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weight, bias) pairs reconstructed from the flat vectors."""
        return [
            unflatten_layer(vec, shape)
            for vec, shape in zip(self.vectors, self.spec.layer_shapes)
        ]


def init_config(spec: FnnSpec, rng: ad.Rng, stage_index: int = 0) -> ConfigSnapshot:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer, biases too.

    Draw order is fixed (weights then bias, layer by layer) so a given Rng
    stream always produces the same snapshot.
    """
    vectors = []
    for n_out, n_in in spec.layer_shapes:
        bound = 1.0 / np.sqrt(n_in)
        weight = rng.uniform(-bound, bound, (n_out, n_in))
        bias = rng.uniform(-bound, bound, n_out)
        vectors.append(flatten_layer(weight, bias))
    return ConfigSnapshot(spec=spec, stage_index=stage_index, vectors=tuple(vectors))


def apply_fnn(snapshot: ConfigSnapshot, inputs: np.ndarray) -> np.ndarray:
    """Plain numpy forward pass: tanh on hidden layers, linear output."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != snapshot.spec.n_in:
        raise ValidationError(f"inputs have {x.shape[1]} columns, expected {snapshot.spec.n_in}")
    layers = snapshot.layers()
    for k, (weight, bias) in enumerate(layers):
        x = x @ weight.T + bias
        if k < len(layers) - 1:
            x = np.tanh(x)
    return x


def build_tensors(snapshot: ConfigSnapshot) -> list[tuple[ad.Tensor, ad.Tensor]]:
    """Trainable (weight, bias) tensor pairs, copied out of the snapshot."""
    pairs = []
    for weight, bias in snapshot.layers():
        pairs.append(
            (ad.parameter(weight.copy()), ad.parameter(bias.reshape(1, -1).copy()))
        )
    return pairs


def forward_tensors(layers: list[tuple[ad.Tensor, ad.Tensor]], x: ad.Tensor) -> ad.Tensor:
    for k, (weight, bias) in enumerate(layers):
        x = ad.affine(x, weight, bias)
        if k < len(layers) - 1:
            x = ad.tanh(x)
    return x


def snapshot_from_tensors(
    spec: FnnSpec, stage_index: int, layers: list[tuple[ad.Tensor, ad.Tensor]]
) -> ConfigSnapshot:
    vectors = tuple(flatten_layer(w.data, b.data) for w, b in layers)
    return ConfigSnapshot(spec=spec, stage_index=stage_index, vectors=vectors)


@dataclass(frozen=True)
class TrainConfig:
    """Full-batch Adam settings; l2_weight scales a sum-of-squares penalty."""

    epochs: int
    learning_rate: float
    l2_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.l2_weight < 0:
            raise ValidationError(f"l2 weight must be >= 0, got {self.l2_weight}")


@dataclass(frozen=True)
class TrainResult:
    snapshot: ConfigSnapshot
    final_loss: float


def run_training(loss_fn, params: list[ad.Tensor], cfg: TrainConfig) -> tuple[float, float]:
    """Full-batch Adam over a loss closure; returns (initial, final) loss.

    The closure is invoked once per epoch under a fresh tape, plus once
    before and once after the loop (untaped) for the reported losses.
    Non-finite losses abort with the epoch index.
    """
    opt = ad.Adam(params, lr=cfg.learning_rate)
    initial = loss_fn().item()
    if not np.isfinite(initial):
        raise TrainingError("initial loss is non-finite", step=0)
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        with ad.Tape() as tape:
            loss = loss_fn()
        if not np.isfinite(loss.item()):
            raise TrainingError("training loss became non-finite", step=epoch)
        tape.backward(loss)
        opt.step()
    final = loss_fn().item()
    if not np.isfinite(final):
        raise TrainingError("final loss is non-finite", step=cfg.epochs)
    return initial, final


def _training_loss(
    layers: list[tuple[ad.Tensor, ad.Tensor]],
    x: ad.Tensor,
    y: ad.Tensor,
    l2_weight: float,
) -> ad.Tensor:
    loss = ad.mse(forward_tensors(layers, x), y)
    if l2_weight != 0.0:
        flat = [t for pair in layers for t in pair]
        loss = ad.add(loss, ad.mul(ad.l2_norm_sq(flat), l2_weight))
    return loss


def train_fnn(
    init: ConfigSnapshot,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
) -> TrainResult:
    """Full-batch Adam on MSE plus optional l2 penalty, fixed epoch count.

    Returns the trained snapshot (same stage index as init) and the loss
    evaluated at the final parameters. epochs=0 leaves init untouched.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if x.shape[0] != y.shape[0]:
        raise ValidationError(f"inputs ({x.shape[0]} rows) and targets ({y.shape[0]}) disagree")

    layers = build_tensors(init)
    flat_params = [t for pair in layers for t in pair]
    xt, yt = ad.constant(x), ad.constant(y)

    def loss_fn():
        return _training_loss(layers, xt, yt, cfg.l2_weight)

    _, final_loss = run_training(loss_fn, flat_params, cfg)
    return TrainResult(
        snapshot=snapshot_from_tensors(init.spec, init.stage_index, layers),
        final_loss=final_loss,
    )
