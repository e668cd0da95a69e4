"""Autoencoders that compress flat model-parameter snapshots to latent rows.

Two variants:

* ``Autoencoder`` (joint): each layer's parameter vector is compressed by its
  own branch to a fixed width, the branches are concatenated and funneled
  through a shared trunk to the latent row; the decoder mirrors the trunk and
  splits back into per-layer linear reconstruction heads. For N branches the
  trunk widths are 64N -> 32N -> 16N -> 8N -> L and the mirror.
* ``PerLayerAutoencoder``: one small independent autoencoder per layer with a
  geometric taper a -> [a/2] -> [a/4] -> L_i, each latent width derived from
  that layer's own entropy.

Inputs are normalized by a fixed reference vector and scalar scale
(typically the earliest snapshot and the RMS spread around it). Encoding
maps (x - center) / scale, decoding inverts exactly. Training losses are
computed in the normalized space; without normalization the snapshot
spread is orders of magnitude below the weight penalty and the encoder
collapses to a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .entropy import EntropyConfig, config_entropy, gibbs_probabilities, latent_dim
from .errors import ValidationError
from .fnn import ConfigSnapshot, FnnSpec, TrainConfig, run_training

BRANCH_WIDTH = 64

# Normalized deviations are divided by this extra factor so the tanh units
# operate in their near-linear range. Snapshots ahead of the training set
# then decode by smooth extension instead of saturating back onto the seen
# trajectory, which is what forecasting future configurations relies on.
NORMALIZATION_HEADROOM = 4.0


@dataclass(frozen=True)
class AutoencoderSpec:
    """Shape of a joint autoencoder over per-layer parameter vectors."""

    layer_sizes: tuple[int, ...]
    latent: int
    branch_width: int = BRANCH_WIDTH

    def __post_init__(self):
        if not self.layer_sizes:
            raise ValidationError("autoencoder needs at least one layer vector")
        if any(s < 1 for s in self.layer_sizes):
            raise ValidationError(f"layer sizes must be >= 1, got {self.layer_sizes}")
        if self.latent < 1:
            raise ValidationError(f"latent width must be >= 1, got {self.latent}")
        if self.branch_width % 8 != 0:
            raise ValidationError("branch width must be divisible by 8")

    @property
    def n_branches(self) -> int:
        return len(self.layer_sizes)

    @property
    def total_params(self) -> int:
        return sum(self.layer_sizes)

    @property
    def concat_width(self) -> int:
        return self.branch_width * self.n_branches

    @property
    def trunk_widths(self) -> tuple[int, int, int]:
        """Hidden widths between the concatenation and the latent layer."""
        n = self.n_branches
        return (self.branch_width // 2 * n, self.branch_width // 4 * n, self.branch_width // 8 * n)

    @classmethod
    def for_fnn(cls, fnn_spec: FnnSpec, latent: int) -> "AutoencoderSpec":
        return cls(layer_sizes=fnn_spec.layer_sizes, latent=latent)


def _init_affine(rng: ad.Rng, n_out: int, n_in: int) -> tuple[ad.Tensor, ad.Tensor]:
    bound = 1.0 / np.sqrt(n_in)
    w = ad.parameter(rng.uniform(-bound, bound, (n_out, n_in)))
    b = ad.parameter(rng.uniform(-bound, bound, (1, n_out)))
    return w, b


def _check_normalization(center: np.ndarray | None, scale: float, width: int) -> tuple[np.ndarray, float]:
    if center is None:
        center = np.zeros(width)
    center = np.asarray(center, dtype=np.float64).ravel().copy()
    if center.shape[0] != width:
        raise ValidationError(f"center has length {center.shape[0]}, expected {width}")
    scale = float(scale)
    if not np.isfinite(scale) or scale <= 0:
        raise ValidationError(f"scale must be a positive finite number, got {scale}")
    return center, scale


def normalization_from(
    targets: np.ndarray, headroom: float = NORMALIZATION_HEADROOM
) -> tuple[np.ndarray, float]:
    """First row as the reference, RMS spread times headroom as the scale.

    A constant snapshot set has zero spread; the scale then falls back to 1
    so encoding maps everything to the origin instead of dividing by zero.
    """
    center = targets[0].copy()
    spread = float(np.sqrt(np.mean((targets - center) ** 2)))
    return center, (spread * headroom if spread > 0 else 1.0)


class Autoencoder:
    """Joint autoencoder; all parameters live in trainable tensors.

    Parameter creation order is fixed (branches, encoder trunk, latent
    layer, decoder trunk, heads) so seeded initialization is reproducible
    and optimizers see a stable ordering.
    """

    def __init__(
        self,
        spec: AutoencoderSpec,
        rng: ad.Rng,
        center: np.ndarray | None = None,
        scale: float = 1.0,
    ):
        self.spec = spec
        bw, cw = spec.branch_width, spec.concat_width
        t1, t2, t3 = spec.trunk_widths
        self.branches = [_init_affine(rng, bw, size) for size in spec.layer_sizes]
        self.enc_trunk = [
            _init_affine(rng, t1, cw),
            _init_affine(rng, t2, t1),
            _init_affine(rng, t3, t2),
        ]
        self.latent_layer = _init_affine(rng, spec.latent, t3)
        self.dec_trunk = [
            _init_affine(rng, t3, spec.latent),
            _init_affine(rng, t2, t3),
            _init_affine(rng, t1, t2),
            _init_affine(rng, cw, t1),
        ]
        self.heads = [_init_affine(rng, size, bw) for size in spec.layer_sizes]
        self.center, self.scale = _check_normalization(center, scale, spec.total_params)

    def param_tensors(self) -> list[ad.Tensor]:
        pairs = (
            self.branches
            + self.enc_trunk
            + [self.latent_layer]
            + self.dec_trunk
            + self.heads
        )
        return [t for pair in pairs for t in pair]

    def _encode_normalized(self, x: ad.Tensor) -> ad.Tensor:
        parts = ad.split_cols(x, self.spec.layer_sizes)
        compressed = [
            ad.tanh(ad.affine(part, w, b)) for part, (w, b) in zip(parts, self.branches)
        ]
        h = ad.concat_cols(compressed)
        for w, b in self.enc_trunk:
            h = ad.tanh(ad.affine(h, w, b))
        w, b = self.latent_layer
        return ad.affine(h, w, b)

    def _decode_normalized(self, latents: ad.Tensor) -> ad.Tensor:
        h = latents
        for w, b in self.dec_trunk:
            h = ad.tanh(ad.affine(h, w, b))
        pieces = ad.split_cols(h, [self.spec.branch_width] * self.spec.n_branches)
        outs = [ad.affine(piece, w, b) for piece, (w, b) in zip(pieces, self.heads)]
        return ad.concat_cols(outs)

    def _normalize(self, thetas: ad.Tensor) -> ad.Tensor:
        x = ad.sub(thetas, ad.constant(self.center.reshape(1, -1)))
        return ad.mul(x, 1.0 / self.scale)

    def encode_tensor(self, thetas: ad.Tensor) -> ad.Tensor:
        """(n, total_params) -> (n, latent); tanh branches and trunk, linear latent."""
        if thetas.shape[1] != self.spec.total_params:
            raise ValidationError(
                f"expected {self.spec.total_params} parameter columns, got {thetas.shape[1]}"
            )
        return self._encode_normalized(self._normalize(thetas))

    def decode_tensor(self, latents: ad.Tensor) -> ad.Tensor:
        """(n, latent) -> (n, total_params); tanh trunk, linear per-layer heads."""
        if latents.shape[1] != self.spec.latent:
            raise ValidationError(
                f"expected {self.spec.latent} latent columns, got {latents.shape[1]}"
            )
        out = self._decode_normalized(latents)
        return ad.add(ad.mul(out, self.scale), ad.constant(self.center.reshape(1, -1)))

    def reconstruct_tensor(self, thetas: ad.Tensor) -> ad.Tensor:
        return self.decode_tensor(self.encode_tensor(thetas))

    # numpy conveniences (no tape)
    def encode(self, thetas: np.ndarray) -> np.ndarray:
        return self.encode_tensor(ad.constant(thetas)).data

    def decode(self, latents: np.ndarray) -> np.ndarray:
        return self.decode_tensor(ad.constant(latents)).data

    def encode_snapshots(self, snapshots: list[ConfigSnapshot]) -> np.ndarray:
        return self.encode(np.stack([s.concat() for s in snapshots]))

    def decode_to_snapshot(self, latent_row: np.ndarray, spec: FnnSpec, stage_index: int) -> ConfigSnapshot:
        flat = self.decode(np.asarray(latent_row).reshape(1, -1))[0]
        return ConfigSnapshot.from_concat(spec, stage_index, flat)


@dataclass(frozen=True)
class AeTrainResult:
    ae: Autoencoder
    initial_loss: float
    final_loss: float


def _snapshot_matrix(snapshots: list[ConfigSnapshot]) -> np.ndarray:
    if len(snapshots) < 2:
        raise ValidationError("autoencoder training needs at least 2 snapshots")
    spec = snapshots[0].spec
    for s in snapshots:
        if s.spec != spec:
            raise ValidationError("snapshots come from different network specs")
    return np.stack([s.concat() for s in snapshots])


def train_autoencoder(
    snapshots: list[ConfigSnapshot],
    latent: int,
    cfg: TrainConfig,
    rng: ad.Rng,
    normalize: bool = True,
) -> AeTrainResult:
    """Fit reconstruction MSE plus l2 penalty over all snapshots jointly.

    With normalize the earliest snapshot and the RMS spread around it fix
    the input normalization, and the loss is computed on normalized values;
    otherwise parameters are used raw.
    """
    targets = _snapshot_matrix(snapshots)
    spec = AutoencoderSpec.for_fnn(snapshots[0].spec, latent)
    if normalize:
        center, scale = normalization_from(targets)
    else:
        center, scale = None, 1.0
    ae = Autoencoder(spec, rng, center=center, scale=scale)
    params = ae.param_tensors()
    xn = ad.constant((targets - ae.center) / ae.scale)

    def loss_fn():
        recon = ae._decode_normalized(ae._encode_normalized(xn))
        loss = ad.mse(recon, xn)
        if cfg.l2_weight != 0.0:
            loss = ad.add(loss, ad.mul(ad.l2_norm_sq(params), cfg.l2_weight))
        return loss

    initial, final = run_training(loss_fn, params, cfg)
    return AeTrainResult(ae=ae, initial_loss=initial, final_loss=final)


def taper_widths(size: int) -> tuple[int, int]:
    """Nearest-integer half and quarter widths, floored at 1."""
    return (max(1, int(np.rint(size / 2))), max(1, int(np.rint(size / 4))))


class LayerAutoencoder:
    """Single-vector autoencoder with a geometric taper to its own latent."""

    def __init__(
        self,
        size: int,
        latent: int,
        rng: ad.Rng,
        center: np.ndarray | None = None,
        scale: float = 1.0,
    ):
        if size < 1 or latent < 1:
            raise ValidationError("size and latent must be >= 1")
        self.size = size
        self.latent = latent
        h1, h2 = taper_widths(size)
        self.widths = (size, h1, h2, latent)
        self.enc = [
            _init_affine(rng, h1, size),
            _init_affine(rng, h2, h1),
            _init_affine(rng, latent, h2),
        ]
        self.dec = [
            _init_affine(rng, h2, latent),
            _init_affine(rng, h1, h2),
            _init_affine(rng, size, h1),
        ]
        self.center, self.scale = _check_normalization(center, scale, size)

    def param_tensors(self) -> list[ad.Tensor]:
        return [t for pair in self.enc + self.dec for t in pair]

    def _encode_normalized(self, h: ad.Tensor) -> ad.Tensor:
        for k, (w, b) in enumerate(self.enc):
            h = ad.affine(h, w, b)
            if k < len(self.enc) - 1:
                h = ad.tanh(h)
        return h

    def _decode_normalized(self, h: ad.Tensor) -> ad.Tensor:
        for k, (w, b) in enumerate(self.dec):
            h = ad.affine(h, w, b)
            if k < len(self.dec) - 1:
                h = ad.tanh(h)
        return h

    def encode_tensor(self, x: ad.Tensor) -> ad.Tensor:
        h = ad.mul(ad.sub(x, ad.constant(self.center.reshape(1, -1))), 1.0 / self.scale)
        return self._encode_normalized(h)

    def decode_tensor(self, s: ad.Tensor) -> ad.Tensor:
        out = self._decode_normalized(s)
        return ad.add(ad.mul(out, self.scale), ad.constant(self.center.reshape(1, -1)))

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self.encode_tensor(ad.constant(x)).data

    def decode(self, s: np.ndarray) -> np.ndarray:
        return self.decode_tensor(ad.constant(s)).data


@dataclass
class PerLayerAutoencoder:
    """Independent autoencoders, one per layer vector of the network spec."""

    fnn_spec: FnnSpec
    aes: list[LayerAutoencoder]

    @property
    def latents(self) -> tuple[int, ...]:
        return tuple(ae.latent for ae in self.aes)

    def encode_layers(self, snapshots: list[ConfigSnapshot]) -> list[np.ndarray]:
        """Per-layer latent matrices, each (n_snapshots, L_i)."""
        out = []
        for i, ae in enumerate(self.aes):
            x = np.stack([s.vectors[i] for s in snapshots])
            out.append(ae.encode(x))
        return out

    def decode_to_snapshot(self, latent_rows: list[np.ndarray], stage_index: int) -> ConfigSnapshot:
        vectors = tuple(
            ae.decode(np.asarray(row).reshape(1, -1))[0] for ae, row in zip(self.aes, latent_rows)
        )
        return ConfigSnapshot(spec=self.fnn_spec, stage_index=stage_index, vectors=vectors)


def per_layer_latents(snapshot: ConfigSnapshot, entropy_cfg: EntropyConfig) -> tuple[int, ...]:
    """Latent width per layer from that layer's own parameter entropy."""
    out = []
    for vec in snapshot.vectors:
        h = config_entropy(gibbs_probabilities(vec, entropy_cfg.beta))
        out.append(latent_dim(h, entropy_cfg.ratio))
    return tuple(out)


@dataclass(frozen=True)
class PerLayerAeTrainResult:
    ae: PerLayerAutoencoder
    initial_loss: float
    final_loss: float


def train_per_layer_autoencoder(
    snapshots: list[ConfigSnapshot],
    latents: tuple[int, ...],
    cfg: TrainConfig,
    rng: ad.Rng,
    normalize: bool = True,
) -> PerLayerAeTrainResult:
    """Train one autoencoder per layer; losses are summed for reporting."""
    _snapshot_matrix(snapshots)  # validates count and spec agreement
    fnn_spec = snapshots[0].spec
    if len(latents) != fnn_spec.n_layers:
        raise ValidationError(
            f"need {fnn_spec.n_layers} latent widths, got {len(latents)}"
        )
    aes = []
    initial_total = 0.0
    final_total = 0.0
    for i, (size, latent) in enumerate(zip(fnn_spec.layer_sizes, latents)):
        targets = np.stack([s.vectors[i] for s in snapshots])
        if normalize:
            center, scale = normalization_from(targets)
        else:
            center, scale = None, 1.0
        ae = LayerAutoencoder(size, latent, rng.derive(i), center=center, scale=scale)
        params = ae.param_tensors()
        xn = ad.constant((targets - ae.center) / ae.scale)

        def loss_fn(ae=ae, params=params, xn=xn):
            loss = ad.mse(ae._decode_normalized(ae._encode_normalized(xn)), xn)
            if cfg.l2_weight != 0.0:
                loss = ad.add(loss, ad.mul(ad.l2_norm_sq(params), cfg.l2_weight))
            return loss

        initial, final = run_training(loss_fn, params, cfg)
        initial_total += initial
        final_total += final
        aes.append(ae)
    return PerLayerAeTrainResult(
        ae=PerLayerAutoencoder(fnn_spec=fnn_spec, aes=aes),
        initial_loss=initial_total,
        final_loss=final_total,
    )
