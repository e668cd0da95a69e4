"""Finite-difference gradient checking for every network family.

Analytic gradients come from a taped backward pass. The finite differences
are taken through plain-numpy mirror forwards that repeat the tensor-op
arithmetic operation for operation, so probing thousands of parameters stays
fast. Each instance first asserts that the mirror and the tensor path agree
bitwise at the unperturbed parameters; after that, any mismatch between
analytic and numeric gradients points at the backward pass alone.

Every instance adds a seeded per-parameter linear probe (coefficients of
magnitude 0.5..1 with random sign) on top of MSE + l2, which keeps all
gradients O(1) so finite-difference noise cannot dominate the relative
error at near-zero coordinates.
"""

import numpy as np

from twincast import autodiff as ad
from twincast.autoencoder import Autoencoder, AutoencoderSpec, LayerAutoencoder
from twincast.fnn import FnnSpec, build_tensors, forward_tensors, init_config
from twincast.forecaster import LstmForecaster, TransformerForecaster

STEP = 1e-5
TOL = 1e-4
ALPHA = 1e-4

FAMILIES = ("fnn", "autoencoder", "lstm", "transformer")


def probe_coeffs(nprng, params):
    out = []
    for p in params:
        mag = nprng.uniform(0.5, 1.0, p.data.shape)
        sign = np.where(nprng.integers(0, 2, p.data.shape) == 1, 1.0, -1.0)
        out.append(mag * sign)
    return out


def _ad_total(pred, target, params, coeffs, alpha):
    loss = ad.mse(pred, target)
    if alpha:
        loss = ad.add(loss, ad.mul(ad.l2_norm_sq(params), alpha))
    probe = None
    for p, c in zip(params, coeffs):
        term = ad.reduce_sum(ad.mul(p, ad.constant(c)))
        probe = term if probe is None else ad.add(probe, term)
    return ad.add(loss, probe)


def _np_total(pred, target, arrays, coeffs, alpha):
    d = pred - target
    loss = (d * d).mean()
    if alpha:
        acc = None
        for a in arrays:
            term = (a * a).sum()
            acc = term if acc is None else acc + term
        loss = loss + acc * alpha
    probe = None
    for a, c in zip(arrays, coeffs):
        term = (a * c).sum()
        probe = term if probe is None else probe + term
    return loss + probe


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.abs(a - b) / denom


def check_case(params, ad_loss_fn, np_loss_fn, step=STEP):
    """Max relative error between analytic and central-FD gradients."""
    assert ad_loss_fn().item() == float(np_loss_fn()), "mirror forward drifted"
    for p in params:
        p.grad = None
    with ad.Tape() as tape:
        loss = ad_loss_fn()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad_array().ravel().copy()
        flat = p.data.ravel()  # view into p.data; perturbed in place
        numeric = np.empty(flat.shape[0])
        for idx in range(flat.shape[0]):
            orig = flat[idx]
            flat[idx] = orig + step
            up = np_loss_fn()
            flat[idx] = orig - step
            down = np_loss_fn()
            flat[idx] = orig
            numeric[idx] = (up - down) / (2.0 * step)
        worst = max(worst, float(rel_err(analytic, numeric).max()))
    return worst


# mirror forwards ------------------------------------------------------------


def _np_head(head, x):
    for k, (w, b) in enumerate(head):
        x = x @ w.data.T + b.data
        if k < len(head) - 1:
            x = np.tanh(x)
    return x


def _np_fnn(layers, x):
    for k, (w, b) in enumerate(layers):
        x = x @ w.data.T + b.data
        if k < len(layers) - 1:
            x = np.tanh(x)
    return x


def _np_joint_ae(ae, x):
    xn = (x - ae.center.reshape(1, -1)) * (1.0 / ae.scale)
    parts = []
    off = 0
    for size, (w, b) in zip(ae.spec.layer_sizes, ae.branches):
        parts.append(np.tanh(xn[:, off : off + size] @ w.data.T + b.data))
        off += size
    h = np.concatenate(parts, axis=1)
    for w, b in ae.enc_trunk:
        h = np.tanh(h @ w.data.T + b.data)
    w, b = ae.latent_layer
    h = h @ w.data.T + b.data
    for w, b in ae.dec_trunk:
        h = np.tanh(h @ w.data.T + b.data)
    outs = []
    off = 0
    for w, b in ae.heads:
        outs.append(h[:, off : off + ae.spec.branch_width] @ w.data.T + b.data)
        off += ae.spec.branch_width
    out = np.concatenate(outs, axis=1)
    return out * ae.scale + ae.center.reshape(1, -1)


def _np_layer_ae(lae, x):
    h = (x - lae.center.reshape(1, -1)) * (1.0 / lae.scale)
    for k, (w, b) in enumerate(lae.enc):
        h = h @ w.data.T + b.data
        if k < len(lae.enc) - 1:
            h = np.tanh(h)
    for k, (w, b) in enumerate(lae.dec):
        h = h @ w.data.T + b.data
        if k < len(lae.dec) - 1:
            h = np.tanh(h)
    return h * lae.scale + lae.center.reshape(1, -1)


def _sigmoid(z):
    # Matches the tensor op: sigma(z) = (1 + tanh(z/2)) / 2.
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _np_lstm(model, rows):
    n = rows[0].shape[0]
    h = model.hidden
    seq = list(rows)
    for wx, wh, b in model.cells:
        h_prev = np.zeros((n, h))
        c_prev = np.zeros((n, h))
        outs = []
        for x_t in seq:
            z = (x_t @ wx.data.T + b.data) + (h_prev @ wh.data)
            gate_i = _sigmoid(z[:, 0:h])
            gate_f = _sigmoid(z[:, h : 2 * h])
            cand = np.tanh(z[:, 2 * h : 3 * h])
            gate_o = _sigmoid(z[:, 3 * h : 4 * h])
            c_prev = (gate_f * c_prev) + (gate_i * cand)
            h_prev = gate_o * np.tanh(c_prev)
            outs.append(h_prev)
        seq = outs
    return _np_head(model.head, seq[-1])


def _np_layer_norm(x, pair, eps=1e-5):
    gamma, beta = pair
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    std = np.sqrt(var + eps)
    return (centered / std) * gamma.data + beta.data


def _np_transformer(model, rows):
    scale = 1.0 / np.sqrt(model.latent)
    positions = list(rows)
    for layer in model.layers:
        wq, bq = layer["wq"]
        wk, bk = layer["wk"]
        wv, bv = layer["wv"]
        wo, bo = layer["wo"]
        w1, b1 = layer["ff1"]
        w2, b2 = layer["ff2"]
        q = [x @ wq.data.T + bq.data for x in positions]
        k = [x @ wk.data.T + bk.data for x in positions]
        v = [x @ wv.data.T + bv.data for x in positions]
        w = len(positions)
        out = []
        for t in range(w):
            scores = np.concatenate(
                [(q[t] * k[u]).sum(axis=1, keepdims=True) for u in range(w)], axis=1
            )
            scores = scores * scale
            shift = scores.max(axis=1, keepdims=True)
            e = np.exp(scores - shift)
            weights = e / e.sum(axis=1, keepdims=True)
            attn = None
            for u in range(w):
                term = weights[:, u : u + 1] * v[u]
                attn = term if attn is None else attn + term
            res1 = positions[t] + (attn @ wo.data.T + bo.data)
            n1 = _np_layer_norm(res1, layer["ln1"])
            f = np.tanh(n1 @ w1.data.T + b1.data) @ w2.data.T + b2.data
            out.append(_np_layer_norm(n1 + f, layer["ln2"]))
        positions = out
    pooled = positions[0]
    for x in positions[1:]:
        pooled = pooled + x
    return _np_head(model.head, pooled)


# case builders --------------------------------------------------------------


def fnn_case(seed):
    nprng = np.random.default_rng(seed)
    n_hidden = int(nprng.integers(1, 4))
    dims = (
        [int(nprng.integers(2, 6))]
        + [int(nprng.integers(2, 9)) for _ in range(n_hidden)]
        + [int(nprng.integers(1, 4))]
    )
    spec = FnnSpec(tuple(dims))
    layers = build_tensors(init_config(spec, ad.Rng(seed).derive(0)))
    params = [t for pair in layers for t in pair]
    x = nprng.uniform(-1.0, 1.0, (8, spec.n_in))
    y = nprng.uniform(-1.0, 1.0, (8, spec.n_out))
    coeffs = probe_coeffs(nprng, params)
    xt, yt = ad.constant(x), ad.constant(y)

    def ad_loss():
        return _ad_total(forward_tensors(layers, xt), yt, params, coeffs, ALPHA)

    def np_loss():
        return _np_total(_np_fnn(layers, x), y, [p.data for p in params], coeffs, ALPHA)

    return f"fnn {spec.tag()} seed {seed}", params, ad_loss, np_loss


def joint_ae_case(seed, n_layers, branch_width, latent):
    nprng = np.random.default_rng(seed)
    dims = tuple(int(nprng.integers(1, 4)) for _ in range(n_layers + 1))
    spec = AutoencoderSpec(
        layer_sizes=FnnSpec(dims).layer_sizes, latent=latent, branch_width=branch_width
    )
    center = nprng.normal(0.0, 0.5, spec.total_params)
    scale = float(nprng.uniform(0.5, 2.0))
    ae = Autoencoder(spec, ad.Rng(seed).derive(1), center=center, scale=scale)
    params = ae.param_tensors()
    targets = center + nprng.normal(0.0, 0.5, (3, spec.total_params))
    coeffs = probe_coeffs(nprng, params)
    xt = ad.constant(targets)

    def ad_loss():
        return _ad_total(ae.reconstruct_tensor(xt), xt, params, coeffs, ALPHA)

    def np_loss():
        recon = _np_joint_ae(ae, targets)
        return _np_total(recon, targets, [p.data for p in params], coeffs, ALPHA)

    label = f"ae N={n_layers} bw={branch_width} L={latent} seed {seed}"
    return label, params, ad_loss, np_loss


def layer_ae_case(seed, size, latent):
    nprng = np.random.default_rng(seed)
    center = nprng.normal(0.0, 0.5, size)
    scale = float(nprng.uniform(0.5, 2.0))
    lae = LayerAutoencoder(size, latent, ad.Rng(seed).derive(2), center=center, scale=scale)
    params = lae.param_tensors()
    x = center + nprng.normal(0.0, 0.5, (3, size))
    coeffs = probe_coeffs(nprng, params)
    xt = ad.constant(x)

    def ad_loss():
        return _ad_total(lae.decode_tensor(lae.encode_tensor(xt)), xt, params, coeffs, ALPHA)

    def np_loss():
        return _np_total(_np_layer_ae(lae, x), x, [p.data for p in params], coeffs, ALPHA)

    return f"layer-ae size={size} L={latent} seed {seed}", params, ad_loss, np_loss


def lstm_case(seed, latent, window, batch=2):
    nprng = np.random.default_rng(seed)
    model = LstmForecaster(latent, window, ad.Rng(seed).derive(3))
    params = model.param_tensors()
    rows = [nprng.uniform(-1.0, 1.0, (batch, latent)) for _ in range(window)]
    target = nprng.uniform(-1.0, 1.0, (batch, latent))
    coeffs = probe_coeffs(nprng, params)
    row_ts = [ad.constant(r) for r in rows]
    yt = ad.constant(target)

    def ad_loss():
        return _ad_total(model.forward_tensor(row_ts), yt, params, coeffs, ALPHA)

    def np_loss():
        return _np_total(_np_lstm(model, rows), target, [p.data for p in params], coeffs, ALPHA)

    return f"lstm L={latent} w={window} seed {seed}", params, ad_loss, np_loss


def transformer_case(seed, latent, window, batch=1):
    nprng = np.random.default_rng(seed)
    model = TransformerForecaster(latent, window, ad.Rng(seed).derive(4))
    params = model.param_tensors()
    rows = [nprng.uniform(-1.0, 1.0, (batch, latent)) for _ in range(window)]
    target = nprng.uniform(-1.0, 1.0, (batch, latent))
    coeffs = probe_coeffs(nprng, params)
    row_ts = [ad.constant(r) for r in rows]
    yt = ad.constant(target)

    def ad_loss():
        return _ad_total(model.forward_tensor(row_ts), yt, params, coeffs, ALPHA)

    def np_loss():
        return _np_total(
            _np_transformer(model, rows), target, [p.data for p in params], coeffs, ALPHA
        )

    return f"transformer L={latent} w={window} seed {seed}", params, ad_loss, np_loss


def family_cases(name):
    """The seeded instance mix for one family; >= 20 instances each."""
    if name == "fnn":
        return [fnn_case(100 + i) for i in range(20)]
    if name == "autoencoder":
        cases = []
        # Full differencing of a width-64 trunk is slow, so most instances
        # shrink the (free) branch width; one keeps the default.
        for i, latent in enumerate([1, 2, 3, 4, 5, 6, 3, 5]):
            cases.append(joint_ae_case(200 + i, 1, 8, latent))
        for i, latent in enumerate([2, 3, 4, 6]):
            cases.append(joint_ae_case(210 + i, 2, 8, latent))
        for i, latent in enumerate([2, 4]):
            cases.append(joint_ae_case(220 + i, 3, 8, latent))
        for i, n_layers in enumerate([1, 2, 3]):
            cases.append(joint_ae_case(230 + i, n_layers, 16, 3))
        cases.append(joint_ae_case(240, 1, 64, 4))
        cases.append(layer_ae_case(250, 6, 2))
        cases.append(layer_ae_case(251, 9, 3))
        return cases
    if name == "lstm":
        return [
            lstm_case(300 + i, latent=[2, 3, 4][i % 3], window=2 if i % 2 == 0 else 3)
            for i in range(20)
        ]
    if name == "transformer":
        cases = [transformer_case(400 + i, 2, 2) for i in range(14)]
        cases += [transformer_case(420 + i, 3, 2) for i in range(3)]
        cases += [transformer_case(430 + i, 2, 3) for i in range(2)]
        cases.append(transformer_case(440, 4, 2))
        return cases
    raise ValueError(f"unknown family {name!r}")


def run_family(name):
    """Check every instance of a family; returns [(label, max_rel_err)]."""
    return [
        (label, check_case(params, ad_loss, np_loss))
        for label, params, ad_loss, np_loss in family_cases(name)
    ]
