"""Sequence models that predict the next latent feature row from a window.

Two interchangeable families sharing the same prediction head:

* ``LstmForecaster``: two stacked LSTM layers of hidden width 2L; the top
  layer's final hidden state feeds the head.
* ``TransformerForecaster``: six post-norm encoder layers (single-head
  scaled dot-product attention, feed-forward width 2L, no dropout, no
  positional encoding), summed over the window positions, then the head.

The head runs widths [2L, 2L, 4L, 3L, 2L, L] with tanh everywhere except
the final linear layer; for the transformer the first head layer takes the
L-wide pooled vector instead of a 2L-wide hidden state.

Multi-step forecasts use a progressive rollout: each prediction is appended
to the sliding window to produce the next one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ValidationError
from .fnn import TrainConfig, run_training

LSTM_KIND = "lstm"
TRANSFORMER_KIND = "transformer"
FORECASTER_KINDS = (LSTM_KIND, TRANSFORMER_KIND)


def _init_affine(rng: ad.Rng, n_out: int, n_in: int) -> tuple[ad.Tensor, ad.Tensor]:
    bound = 1.0 / np.sqrt(n_in)
    w = ad.parameter(rng.uniform(-bound, bound, (n_out, n_in)))
    b = ad.parameter(rng.uniform(-bound, bound, (1, n_out)))
    return w, b


def _head_widths(latent: int, first: int) -> list[int]:
    return [first, 2 * latent, 4 * latent, 3 * latent, 2 * latent, latent]


def _build_head(rng: ad.Rng, widths: list[int]) -> list[tuple[ad.Tensor, ad.Tensor]]:
    return [_init_affine(rng, widths[k + 1], widths[k]) for k in range(len(widths) - 1)]


def _run_head(head: list[tuple[ad.Tensor, ad.Tensor]], x: ad.Tensor) -> ad.Tensor:
    for k, (w, b) in enumerate(head):
        x = ad.affine(x, w, b)
        if k < len(head) - 1:
            x = ad.tanh(x)
    return x


def _check_window(window, expected: int) -> None:
    if len(window) != expected:
        raise ValidationError(f"window has {len(window)} positions, expected {expected}")


class LstmForecaster:
    """Two stacked LSTM layers (hidden 2L) plus the shared prediction head.

    Gate layout inside the fused pre-activation is [input, forget, cell
    candidate, output]; gates use sigmoid, the candidate and the cell output
    use tanh. Initial hidden and cell states are zero, and gate biases start
    at zero. Recurrent weights are stored as (hidden, 4*hidden) so the
    recurrence is a plain right-multiplication.
    """

    n_layers = 2

    def __init__(self, latent: int, window: int, rng: ad.Rng):
        if latent < 1 or window < 1:
            raise ValidationError("latent and window must be >= 1")
        self.latent = latent
        self.window = window
        self.hidden = 2 * latent
        h = self.hidden
        self.cells = []
        for layer in range(self.n_layers):
            n_in = latent if layer == 0 else h
            bound_x = 1.0 / np.sqrt(n_in)
            bound_h = 1.0 / np.sqrt(h)
            wx = ad.parameter(rng.uniform(-bound_x, bound_x, (4 * h, n_in)))
            wh = ad.parameter(rng.uniform(-bound_h, bound_h, (h, 4 * h)))
            b = ad.parameter(np.zeros((1, 4 * h)))
            self.cells.append((wx, wh, b))
        self.head = _build_head(rng, _head_widths(latent, first=h))

    def param_tensors(self) -> list[ad.Tensor]:
        out = [t for cell in self.cells for t in cell]
        out.extend(t for pair in self.head for t in pair)
        return out

    def forward_tensor(self, window: list[ad.Tensor]) -> ad.Tensor:
        """window: w tensors of shape (n, L) -> prediction (n, L)."""
        _check_window(window, self.window)
        n = window[0].shape[0]
        h = self.hidden
        seq = list(window)
        for wx, wh, b in self.cells:
            h_prev = ad.constant(np.zeros((n, h)))
            c_prev = ad.constant(np.zeros((n, h)))
            outs = []
            for x_t in seq:
                z = ad.add(ad.affine(x_t, wx, b), ad.matmul(h_prev, wh))
                zi, zf, zg, zo = ad.split_cols(z, [h, h, h, h])
                gate_i = ad.sigmoid(zi)
                gate_f = ad.sigmoid(zf)
                cand = ad.tanh(zg)
                gate_o = ad.sigmoid(zo)
                c_prev = ad.add(ad.mul(gate_f, c_prev), ad.mul(gate_i, cand))
                h_prev = ad.mul(gate_o, ad.tanh(c_prev))
                outs.append(h_prev)
            seq = outs
        return _run_head(self.head, seq[-1])

    def predict(self, window: np.ndarray) -> np.ndarray:
        """(w, L) array of latent rows -> (L,) prediction; no recording."""
        window = np.asarray(window, dtype=np.float64)
        if window.shape != (self.window, self.latent):
            raise ValidationError(
                f"window must be ({self.window}, {self.latent}), got {window.shape}"
            )
        rows = [ad.constant(window[t].reshape(1, -1)) for t in range(self.window)]
        return self.forward_tensor(rows).data[0]


def _layer_norm(x: ad.Tensor, gamma: ad.Tensor, beta: ad.Tensor, eps: float = 1e-5) -> ad.Tensor:
    mu = ad.reduce_mean(x, axis=1)
    centered = ad.sub(x, mu)
    var = ad.reduce_mean(ad.mul(centered, centered), axis=1)
    std = ad.sqrt(ad.add(var, eps))
    return ad.add(ad.mul(ad.div(centered, std), gamma), beta)


class TransformerForecaster:
    """Six post-norm encoder layers with one attention head, then sum pooling.

    Each layer: scaled dot-product self-attention over the w positions,
    residual add, layer normalization, a tanh feed-forward of width 2L,
    residual add, layer normalization. Dropout is zero throughout and no
    positional encoding is added, so the forward pass is deterministic and
    the pooled representation depends on position order only through the
    attention content itself.
    """

    n_layers = 6

    def __init__(self, latent: int, window: int, rng: ad.Rng):
        if latent < 1 or window < 1:
            raise ValidationError("latent and window must be >= 1")
        self.latent = latent
        self.window = window
        self.ff = 2 * latent
        self.layers = []
        for _ in range(self.n_layers):
            layer = {
                "wq": _init_affine(rng, latent, latent),
                "wk": _init_affine(rng, latent, latent),
                "wv": _init_affine(rng, latent, latent),
                "wo": _init_affine(rng, latent, latent),
                "ln1": (
                    ad.parameter(np.ones((1, latent))),
                    ad.parameter(np.zeros((1, latent))),
                ),
                "ff1": _init_affine(rng, self.ff, latent),
                "ff2": _init_affine(rng, latent, self.ff),
                "ln2": (
                    ad.parameter(np.ones((1, latent))),
                    ad.parameter(np.zeros((1, latent))),
                ),
            }
            self.layers.append(layer)
        self.head = _build_head(rng, _head_widths(latent, first=latent))

    def param_tensors(self) -> list[ad.Tensor]:
        out = []
        for layer in self.layers:
            for key in ("wq", "wk", "wv", "wo", "ln1", "ff1", "ff2", "ln2"):
                out.extend(layer[key])
        out.extend(t for pair in self.head for t in pair)
        return out

    def _encoder_layer(self, layer: dict, positions: list[ad.Tensor]) -> list[ad.Tensor]:
        w = len(positions)
        scale = 1.0 / np.sqrt(self.latent)
        q = [ad.affine(x, *layer["wq"]) for x in positions]
        k = [ad.affine(x, *layer["wk"]) for x in positions]
        v = [ad.affine(x, *layer["wv"]) for x in positions]
        out = []
        for t in range(w):
            scores = ad.concat_cols(
                [ad.reduce_sum(ad.mul(q[t], k[u]), axis=1) for u in range(w)]
            )
            scores = ad.mul(scores, scale)
            # Detached max-shift: exact for softmax since the shift cancels.
            shift = ad.constant(scores.data.max(axis=1, keepdims=True))
            e = ad.exp(ad.sub(scores, shift))
            weights = ad.div(e, ad.reduce_sum(e, axis=1))
            cols = ad.split_cols(weights, [1] * w)
            attn = None
            for u in range(w):
                term = ad.mul(cols[u], v[u])
                attn = term if attn is None else ad.add(attn, term)
            res1 = ad.add(positions[t], ad.affine(attn, *layer["wo"]))
            n1 = _layer_norm(res1, *layer["ln1"])
            f = ad.affine(ad.tanh(ad.affine(n1, *layer["ff1"])), *layer["ff2"])
            out.append(_layer_norm(ad.add(n1, f), *layer["ln2"]))
        return out

    def forward_tensor(self, window: list[ad.Tensor]) -> ad.Tensor:
        _check_window(window, self.window)
        positions = list(window)
        for layer in self.layers:
            positions = self._encoder_layer(layer, positions)
        pooled = positions[0]
        for x in positions[1:]:
            pooled = ad.add(pooled, x)
        return _run_head(self.head, pooled)

    def predict(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=np.float64)
        if window.shape != (self.window, self.latent):
            raise ValidationError(
                f"window must be ({self.window}, {self.latent}), got {window.shape}"
            )
        rows = [ad.constant(window[t].reshape(1, -1)) for t in range(self.window)]
        return self.forward_tensor(rows).data[0]


def build_forecaster(kind: str, latent: int, window: int, rng: ad.Rng):
    if kind == LSTM_KIND:
        return LstmForecaster(latent, window, rng)
    if kind == TRANSFORMER_KIND:
        return TransformerForecaster(latent, window, rng)
    raise ValidationError(f"unknown forecaster kind {kind!r}; expected one of {FORECASTER_KINDS}")


@dataclass(frozen=True)
class ForecasterTrainResult:
    model: object
    initial_loss: float
    final_loss: float


def train_forecaster(
    features: np.ndarray,
    window: int,
    cfg: TrainConfig,
    rng: ad.Rng,
    kind: str = LSTM_KIND,
) -> ForecasterTrainResult:
    """Fit next-row prediction on every sliding window of the feature matrix.

    features is (T, L) in stage order; training pairs are (rows j-w..j-1 ->
    row j) for j = w..T-1, all trained in one batch with MSE plus the l2
    penalty of cfg.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValidationError(f"features must be (T, L), got shape {features.shape}")
    t_total, latent = features.shape
    if t_total < window + 1:
        raise ValidationError(
            f"need at least window+1 = {window + 1} feature rows, got {t_total}"
        )
    model = build_forecaster(kind, latent, window, rng)
    n_pairs = t_total - window
    inputs = [ad.constant(features[t : t + n_pairs]) for t in range(window)]
    targets = ad.constant(features[window:])
    params = model.param_tensors()

    def loss_fn():
        loss = ad.mse(model.forward_tensor(inputs), targets)
        if cfg.l2_weight != 0.0:
            loss = ad.add(loss, ad.mul(ad.l2_norm_sq(params), cfg.l2_weight))
        return loss

    initial, final = run_training(loss_fn, params, cfg)
    return ForecasterTrainResult(model=model, initial_loss=initial, final_loss=final)


def progressive_rollout(model, recent: np.ndarray, horizon: int) -> np.ndarray:
    """Forecast `horizon` rows ahead, feeding predictions back into the window.

    recent must be the last w actual feature rows; the returned array is
    (horizon, L). The input is never modified.
    """
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    recent = np.asarray(recent, dtype=np.float64)
    if recent.shape != (model.window, model.latent):
        raise ValidationError(
            f"recent window must be ({model.window}, {model.latent}), got {recent.shape}"
        )
    window = recent.copy()
    rows = []
    for _ in range(horizon):
        pred = model.predict(window)
        rows.append(pred)
        window = np.vstack([window[1:], pred.reshape(1, -1)])
    return np.stack(rows)
