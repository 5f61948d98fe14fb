"""Differentiable landscape model: bidirectional GCN trunk + scalar heads.

The trunk propagates node features in both edge directions, fuses the two
streams by concatenation + linear projection, and layer-normalizes:

    V' = LN(Linear(concat(GeLU(A V W_fwd), GeLU(A^T V W_bwd))))

A node-mean readout feeds each head, a one-hidden-layer MLP emitting one
scalar. All gradients -- with respect to every weight and with respect to
the inputs (node features and adjacency) -- are computed by hand in
reverse mode; the test suite verifies them against central finite
differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, NumericalFailure

WEIGHTS_FORMAT = "optiproxy-weights/1"

_LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_CUBIC = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    """Tanh-form GeLU (the shape used throughout the model)."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_CUBIC * x**3)))


def dgelu(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_CUBIC * x**3))
    return _dgelu_from_tanh(x, t)


def _gelu_tanh(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(gelu(x), cached tanh) so the backward pass stays transcendental-free."""
    t = np.tanh(_GELU_C * (x + _GELU_CUBIC * x * x * x))
    return 0.5 * x * (1.0 + t), t


def _dgelu_from_tanh(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    inner_grad = _GELU_C * (1.0 + 3.0 * _GELU_CUBIC * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * inner_grad


@dataclass
class ProxyModel:
    """Weight container; immutable by convention once fitting is done.

    ``weights`` maps layer names to views into one contiguous ``flat``
    buffer, so an optimizer can update everything with single vector ops.
    """

    in_dim: int
    gcn_hidden: int
    gcn_layers: int
    linear_size: int
    head_names: tuple[str, ...]
    weights: dict[str, np.ndarray] = field(repr=False)
    flat: np.ndarray = field(repr=False, default=None)

    def num_params(self) -> int:
        return int(sum(w.size for w in self.weights.values()))

    def copy_weights(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.weights.items()}

    def set_weights(self, values: dict[str, np.ndarray]) -> None:
        """Copy values into the existing buffers (views stay intact)."""
        if set(values) != set(self.weights):
            raise InvalidInput("weight names do not match the model")
        for name, arr in values.items():
            self.weights[name][...] = arr

    def flatten_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate(
            [np.asarray(grads[name]).ravel() for name in self.weights]
        )


def _pack_weights(weights: dict[str, np.ndarray]):
    """Repack arrays as views into one flat buffer (insertion order)."""
    flat = np.concatenate([w.ravel() for w in weights.values()]) \
        if weights else np.zeros(0)
    views = {}
    offset = 0
    for name, w in weights.items():
        views[name] = flat[offset : offset + w.size].reshape(w.shape)
        offset += w.size
    return flat, views


def init_model(
    in_dim: int,
    gcn_hidden: int = 144,
    gcn_layers: int = 2,
    linear_size: int = 144,
    head_names: tuple[str, ...] = ("accuracy",),
    rng=None,
) -> ProxyModel:
    """Kaiming-uniform (fan-in) initialization, deterministic given rng."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    def uniform(fan_in, shape):
        bound = np.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    weights: dict[str, np.ndarray] = {}
    d_in = in_dim
    for layer in range(gcn_layers):
        h = gcn_hidden
        weights[f"gcn{layer}.fwd_w"] = uniform(d_in, (d_in, h))
        weights[f"gcn{layer}.bwd_w"] = uniform(d_in, (d_in, h))
        weights[f"gcn{layer}.fuse_w"] = uniform(2 * h, (2 * h, h))
        weights[f"gcn{layer}.fuse_b"] = uniform(2 * h, (h,))
        weights[f"gcn{layer}.ln_scale"] = np.ones(h)
        weights[f"gcn{layer}.ln_shift"] = np.zeros(h)
        d_in = h
    for head in head_names:
        weights[f"head.{head}.w1"] = uniform(d_in, (d_in, linear_size))
        weights[f"head.{head}.b1"] = uniform(d_in, (linear_size,))
        weights[f"head.{head}.w2"] = uniform(linear_size, (linear_size, 1))
        weights[f"head.{head}.b2"] = uniform(linear_size, (1,))
    flat, views = _pack_weights(weights)
    return ProxyModel(
        in_dim=in_dim,
        gcn_hidden=gcn_hidden,
        gcn_layers=gcn_layers,
        linear_size=linear_size,
        head_names=tuple(head_names),
        weights=views,
        flat=flat,
    )


def _as_batch(feats, adj):
    feats = np.asarray(feats, dtype=np.float64)
    adj = np.asarray(adj, dtype=np.float64)
    squeezed = feats.ndim == 2
    if squeezed:
        feats = feats[None]
    if adj.ndim == 2:
        adj = np.broadcast_to(adj, (feats.shape[0],) + adj.shape)
    if feats.ndim != 3 or adj.ndim != 3:
        raise InvalidInput("features must be (batch, N, M), adjacency (batch, N, N)")
    if feats.shape[0] != adj.shape[0] or feats.shape[1] != adj.shape[1] \
            or adj.shape[1] != adj.shape[2]:
        raise InvalidInput(
            f"inconsistent shapes: features {feats.shape}, adjacency {adj.shape}"
        )
    return feats, adj, squeezed


def forward(model: ProxyModel, feats, adj) -> dict[str, np.ndarray]:
    """Head outputs for a batch; accepts a single (N, M)/(N, N) pair too."""
    outs, _ = forward_cached(model, feats, adj)
    return outs


def forward_cached(model: ProxyModel, feats, adj):
    feats, adj, squeezed = _as_batch(feats, adj)
    if feats.shape[2] != model.in_dim:
        raise InvalidInput(
            f"feature width {feats.shape[2]} != model input width {model.in_dim}"
        )
    w = model.weights
    batch, n, _ = feats.shape
    # Self-augmented propagation: each node keeps its own features in both
    # directions, the standard trick for this trunk family.
    adj = adj + np.eye(n)
    adj_t = np.transpose(adj, (0, 2, 1))
    v = feats
    layers = []
    for layer in range(model.gcn_layers):
        p_fwd = np.matmul(adj, v)
        p_bwd = np.matmul(adj_t, v)
        d_in = v.shape[-1]
        hidden = w[f"gcn{layer}.fwd_w"].shape[1]
        z_fwd = (p_fwd.reshape(-1, d_in) @ w[f"gcn{layer}.fwd_w"]).reshape(
            batch, n, hidden
        )
        z_bwd = (p_bwd.reshape(-1, d_in) @ w[f"gcn{layer}.bwd_w"]).reshape(
            batch, n, hidden
        )
        b_fwd, t_fwd = _gelu_tanh(z_fwd)
        b_bwd, t_bwd = _gelu_tanh(z_bwd)
        cat = np.concatenate([b_fwd, b_bwd], axis=-1)
        pre = (cat.reshape(-1, 2 * hidden) @ w[f"gcn{layer}.fuse_w"]).reshape(
            batch, n, hidden
        ) + w[f"gcn{layer}.fuse_b"]
        mean = pre.mean(axis=-1, keepdims=True)
        var = pre.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + _LN_EPS)
        x_hat = (pre - mean) * inv
        v_next = x_hat * w[f"gcn{layer}.ln_scale"] + w[f"gcn{layer}.ln_shift"]
        if not np.all(np.isfinite(v_next)):
            raise NumericalFailure(f"non-finite activations in gcn{layer}")
        layers.append(
            dict(v_in=v, p_fwd=p_fwd, p_bwd=p_bwd, z_fwd=z_fwd, z_bwd=z_bwd,
                 t_fwd=t_fwd, t_bwd=t_bwd, cat=cat, x_hat=x_hat, inv=inv)
        )
        v = v_next

    readout = v.mean(axis=1)  # (batch, hidden)
    outs = {}
    heads = []
    for head in model.head_names:
        h1 = readout @ w[f"head.{head}.w1"] + w[f"head.{head}.b1"]
        a1, t1 = _gelu_tanh(h1)
        out = (a1 @ w[f"head.{head}.w2"] + w[f"head.{head}.b2"])[:, 0]
        if not np.all(np.isfinite(out)):
            raise NumericalFailure(f"non-finite output in head {head}")
        outs[head] = out
        heads.append(dict(h1=h1, a1=a1, t1=t1))
    cache = dict(adj=adj, adj_t=adj_t, layers=layers, readout=readout,
                 heads=heads, v_last=v, squeezed=squeezed)
    return outs, cache


def backward(model: ProxyModel, cache, dout: dict[str, np.ndarray],
             with_weights: bool = True, with_inputs: bool = True):
    """Reverse pass from per-head output cotangents.

    Returns (weight gradients, d features, d adjacency); the array
    gradients keep the batch dimension. ``with_weights=False`` skips the
    weight-gradient accumulation (input gradients only); ``with_inputs=
    False`` skips the input gradients (fitting only). Either flag roughly
    halves the cost.
    """
    w = model.weights
    grads: dict[str, np.ndarray] = {}

    def accumulate(name, value):
        # Each tensor is touched exactly once per pass, so assignment is safe.
        if with_weights:
            grads[name] = value
    adj, adj_t = cache["adj"], cache["adj_t"]
    batch, n, _ = adj.shape

    d_readout = np.zeros_like(cache["readout"])
    for head, head_cache in zip(model.head_names, cache["heads"]):
        d = dout.get(head)
        if d is None:
            continue
        d = np.asarray(d, dtype=np.float64).reshape(batch, 1)
        a1, h1 = head_cache["a1"], head_cache["h1"]
        accumulate(f"head.{head}.w2", a1.T @ d)
        accumulate(f"head.{head}.b2", d.sum(axis=0))
        da1 = d @ w[f"head.{head}.w2"].T
        dh1 = da1 * _dgelu_from_tanh(h1, head_cache["t1"])
        accumulate(f"head.{head}.w1", cache["readout"].T @ dh1)
        accumulate(f"head.{head}.b1", dh1.sum(axis=0))
        d_readout += dh1 @ w[f"head.{head}.w1"].T

    dv = np.repeat(d_readout[:, None, :], n, axis=1) / n
    d_adj = np.zeros_like(adj) if with_inputs else None
    for layer in reversed(range(model.gcn_layers)):
        c = cache["layers"][layer]
        scale = w[f"gcn{layer}.ln_scale"]
        if with_weights:
            accumulate(f"gcn{layer}.ln_scale", (dv * c["x_hat"]).sum(axis=(0, 1)))
            accumulate(f"gcn{layer}.ln_shift", dv.sum(axis=(0, 1)))
        dx_hat = dv * scale
        inv, x_hat = c["inv"], c["x_hat"]
        dpre = inv * (
            dx_hat
            - dx_hat.mean(axis=-1, keepdims=True)
            - x_hat * (dx_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        cat = c["cat"]
        hidden = c["z_fwd"].shape[-1]
        flat_dpre = dpre.reshape(-1, hidden)
        if with_weights:
            accumulate(f"gcn{layer}.fuse_w",
                       cat.reshape(-1, 2 * hidden).T @ flat_dpre)
            accumulate(f"gcn{layer}.fuse_b", flat_dpre.sum(axis=0))
        dcat = (flat_dpre @ w[f"gcn{layer}.fuse_w"].T).reshape(batch, n, 2 * hidden)
        dz_fwd = dcat[..., :hidden] * _dgelu_from_tanh(c["z_fwd"], c["t_fwd"])
        dz_bwd = dcat[..., hidden:] * _dgelu_from_tanh(c["z_bwd"], c["t_bwd"])
        d_in = c["v_in"].shape[-1]
        flat_dz_fwd = dz_fwd.reshape(-1, hidden)
        flat_dz_bwd = dz_bwd.reshape(-1, hidden)
        if with_weights:
            accumulate(f"gcn{layer}.fwd_w",
                       c["p_fwd"].reshape(-1, d_in).T @ flat_dz_fwd)
            accumulate(f"gcn{layer}.bwd_w",
                       c["p_bwd"].reshape(-1, d_in).T @ flat_dz_bwd)
        if layer == 0 and not with_inputs:
            break
        dp_fwd = (flat_dz_fwd @ w[f"gcn{layer}.fwd_w"].T).reshape(batch, n, d_in)
        dp_bwd = (flat_dz_bwd @ w[f"gcn{layer}.bwd_w"].T).reshape(batch, n, d_in)
        v_in = c["v_in"]
        if with_inputs:
            v_in_t = np.transpose(v_in, (0, 2, 1))
            # p_fwd = A @ v, p_bwd = A^T @ v
            d_adj += np.matmul(dp_fwd, v_in_t)
            d_adj += np.transpose(np.matmul(dp_bwd, v_in_t), (0, 2, 1))
        dv = np.matmul(adj_t, dp_fwd) + np.matmul(adj, dp_bwd)
    if not with_inputs:
        return grads, None, None
    d_feats = dv
    if not np.all(np.isfinite(d_feats)) or not np.all(np.isfinite(d_adj)):
        raise NumericalFailure("non-finite input gradients")
    if cache["squeezed"]:
        d_feats, d_adj = d_feats[0], d_adj[0]
    return grads, d_feats, d_adj


# -- fitting loss -------------------------------------------------------------


def mse_loss(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise InvalidInput("predictions and targets must have equal length")
    return float(np.mean((preds - targets) ** 2))


def rank_loss(preds, targets, margin: float) -> float:
    """Pairwise hinge over ordered pairs with a higher-target first element."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise InvalidInput("predictions and targets must have equal length")
    ordered = targets[:, None] > targets[None, :]
    hinge = np.maximum(0.0, margin - (preds[:, None] - preds[None, :]))
    return float(np.sum(hinge * ordered))


def fit_loss(preds, targets, ranking_coe: float, margin: float) -> float:
    return mse_loss(preds, targets) + ranking_coe * rank_loss(preds, targets, margin)


def fit_loss_grad(preds, targets, ranking_coe: float, margin: float):
    """Loss value and its gradient with respect to the predictions."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise InvalidInput("predictions and targets must have equal length")
    n = preds.size
    dpred = 2.0 * (preds - targets) / n
    loss = float(np.mean((preds - targets) ** 2))
    if ranking_coe > 0 and n > 1:
        ordered = targets[:, None] > targets[None, :]
        slack = margin - (preds[:, None] - preds[None, :])
        active = ordered & (slack > 0)
        loss += ranking_coe * float(np.sum(np.maximum(0.0, slack) * ordered))
        dpred += ranking_coe * (active.sum(axis=0) - active.sum(axis=1))
    return loss, dpred


# -- checkpoint io -------------------------------------------------------------


def save_weights(model: ProxyModel, path) -> None:
    doc = {
        "format": WEIGHTS_FORMAT,
        "config": {
            "in_dim": model.in_dim,
            "gcn_hidden": model.gcn_hidden,
            "gcn_layers": model.gcn_layers,
            "linear_size": model.linear_size,
            "head_names": list(model.head_names),
        },
        "weights": {k: v.tolist() for k, v in model.weights.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_weights(path) -> ProxyModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != WEIGHTS_FORMAT:
        raise InvalidInput(f"unsupported checkpoint format {doc.get('format')!r}")
    cfg = doc["config"]
    weights = {k: np.asarray(v, dtype=np.float64) for k, v in doc["weights"].items()}
    flat, views = _pack_weights(weights)
    return ProxyModel(
        in_dim=cfg["in_dim"],
        gcn_hidden=cfg["gcn_hidden"],
        gcn_layers=cfg["gcn_layers"],
        linear_size=cfg["linear_size"],
        head_names=tuple(cfg["head_names"]),
        weights=views,
        flat=flat,
    )
