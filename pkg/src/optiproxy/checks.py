"""Built-in verification suite: sampling-limit statistics and gradient checks.

These are runnable on demand (CLI) and reused by the test suite. The
sampling checks measure the low-temperature behaviour of the soft
samplers against the exact discrete distributions; the gradient checks
compare every hand-written derivative against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import proxy
from .relaxation import concrete_gate, gumbel_softmax, sigmoid, softmax
from .validation import ensure_rng

GRAD_REL_TOL = 1e-4
FD_STEP = 1e-5
STAT_TOL = 0.01


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


# -- sampling limit statistics -------------------------------------------------


def check_op_sampling_limit(
    logits=(0.0, np.log(2.0), np.log(3.0)),
    tau: float = 0.05,
    samples: int = 200_000,
    tol: float = STAT_TOL,
    seed: int = 0,
) -> CheckResult:
    """At tiny temperature, argmax frequencies match the softmax probabilities."""
    rng = ensure_rng(seed)
    logits = np.asarray(logits, dtype=np.float64)
    u = rng.random((samples, logits.size))
    noise = -np.log(-np.log(u + 1e-20) + 1e-20)
    soft = gumbel_softmax(logits[None, :], tau, noise)
    counts = np.bincount(np.argmax(soft, axis=1), minlength=logits.size)
    freq = counts / samples
    expected = softmax(logits)
    gap = float(np.max(np.abs(freq - expected)))
    detail = (
        f"max |freq - softmax| = {gap:.4f} (tol {tol}), "
        f"freq={np.round(freq, 4).tolist()}"
    )
    return CheckResult("op-sampling-limit", gap <= tol, detail)


def check_edge_sampling_limit(
    log_odds=(0.0, np.log(3.0)),
    tau: float = 0.05,
    samples: int = 200_000,
    tol: float = STAT_TOL,
    seed: int = 1,
) -> CheckResult:
    """At tiny temperature, P(gate > 1/2) matches sigmoid(log-odds)."""
    rng = ensure_rng(seed)
    gaps = []
    observed = []
    for value in log_odds:
        u = rng.random((samples, 2))
        g = -np.log(-np.log(u + 1e-20) + 1e-20)
        noise = g[:, 0] - g[:, 1]
        gates = concrete_gate(np.full(samples, value), tau, noise)
        p = float(np.mean(gates > 0.5))
        observed.append(p)
        gaps.append(abs(p - float(sigmoid(np.array([value]))[0])))
    gap = max(gaps)
    detail = (
        f"max |P(gate>0.5) - sigmoid| = {gap:.4f} (tol {tol}), "
        f"observed={np.round(observed, 4).tolist()}"
    )
    return CheckResult("edge-sampling-limit", gap <= tol, detail)


# -- gradient checks -----------------------------------------------------------


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def _central_diff(f, arr: np.ndarray, index, h: float = FD_STEP) -> float:
    original = arr[index]
    arr[index] = original + h
    up = f()
    arr[index] = original - h
    down = f()
    arr[index] = original
    return (up - down) / (2.0 * h)


def _directional_diff(f, arr: np.ndarray, direction: np.ndarray, h: float = FD_STEP) -> float:
    backup = arr.copy()
    arr += h * direction
    up = f()
    arr[...] = backup - h * direction
    down = f()
    arr[...] = backup
    return (up - down) / (2.0 * h)


def _random_instance(rng, n=7, m=5, batch=3, gcn_hidden=144, linear_size=144):
    model = proxy.init_model(
        in_dim=m, gcn_hidden=gcn_hidden, gcn_layers=2,
        linear_size=linear_size, rng=rng,
    )
    feats = rng.random((batch, n, m))
    feats /= feats.sum(axis=2, keepdims=True)
    adj = rng.random((batch, n, n))
    targets = rng.random(batch)
    return model, feats, adj, targets


def weight_gradient_check(
    rng,
    n: int = 7,
    m: int = 5,
    gcn_hidden: int = 144,
    linear_size: int = 144,
    ranking_coe: float = 0.2,
    margin: float = 0.1,
    coords_per_matrix: int = 8,
    dense: bool = False,
    h: float = FD_STEP,
) -> float:
    """Max relative error of the loss gradient over the model weights.

    Every tensor is checked with a random directional derivative; vectors
    (and, with ``dense=True``, all matrices) additionally get dense
    per-coordinate checks, otherwise a random subsample of coordinates.
    """
    rng = ensure_rng(rng)
    model, feats, adj, targets = _random_instance(
        rng, n=n, m=m, gcn_hidden=gcn_hidden, linear_size=linear_size
    )

    def loss_value() -> float:
        outs = proxy.forward(model, feats, adj)
        return proxy.fit_loss(outs["accuracy"], targets, ranking_coe, margin)

    outs, cache = proxy.forward_cached(model, feats, adj)
    value, dpred = proxy.fit_loss_grad(outs["accuracy"], targets, ranking_coe, margin)
    # Keep the hinge terms away from their kinks so the finite differences
    # see a locally smooth function.
    slack = margin - (outs["accuracy"][:, None] - outs["accuracy"][None, :])
    if np.min(np.abs(slack)) < 10 * h:
        return weight_gradient_check(
            rng, n=n, m=m, gcn_hidden=gcn_hidden, linear_size=linear_size,
            ranking_coe=ranking_coe, margin=margin,
            coords_per_matrix=coords_per_matrix, dense=dense, h=h,
        )
    grads, _, _ = proxy.backward(model, cache, {"accuracy": dpred})

    worst = 0.0
    for name, arr in model.weights.items():
        grad = grads[name]
        direction = rng.standard_normal(arr.shape)
        direction /= np.linalg.norm(direction)
        numeric = _directional_diff(loss_value, arr, direction, h=h)
        worst = max(worst, _rel_err(float((grad * direction).sum()), numeric))

        if dense or arr.ndim == 1:
            indices = list(np.ndindex(arr.shape))
        else:
            flat = rng.choice(arr.size, size=min(coords_per_matrix, arr.size),
                              replace=False)
            indices = [np.unravel_index(int(i), arr.shape) for i in flat]
        for index in indices:
            numeric = _central_diff(loss_value, arr, index, h=h)
            worst = max(worst, _rel_err(float(grad[index]), numeric))
    return worst


def input_gradient_check(
    rng,
    n: int = 7,
    m: int = 5,
    gcn_hidden: int = 144,
    linear_size: int = 144,
    h: float = FD_STEP,
) -> float:
    """Max relative error of the raw-output gradient over both inputs (dense)."""
    rng = ensure_rng(rng)
    model, feats, adj, _ = _random_instance(
        rng, n=n, m=m, batch=1, gcn_hidden=gcn_hidden, linear_size=linear_size
    )
    feats, adj = feats[0], adj[0]

    def out_value() -> float:
        return float(proxy.forward(model, feats, adj)["accuracy"][0])

    _, cache = proxy.forward_cached(model, feats, adj)
    _, d_feats, d_adj = proxy.backward(
        model, cache, {"accuracy": np.ones(1)}, with_weights=False
    )
    worst = 0.0
    for arr, grad in ((feats, d_feats), (adj, d_adj)):
        for index in np.ndindex(arr.shape):
            numeric = _central_diff(out_value, arr, index, h=h)
            worst = max(worst, _rel_err(float(grad[index]), numeric))
    return worst


def gradient_suite(
    instances: int = 20,
    seed: int = 0,
    gcn_hidden: int = 144,
    linear_size: int = 144,
    tol: float = GRAD_REL_TOL,
) -> CheckResult:
    """Run weight + input gradient checks over several random instances."""
    root = np.random.SeedSequence(seed)
    worst = 0.0
    for child in root.spawn(instances):
        rng = np.random.default_rng(child)
        worst = max(
            worst,
            weight_gradient_check(rng, gcn_hidden=gcn_hidden, linear_size=linear_size),
            input_gradient_check(rng, gcn_hidden=gcn_hidden, linear_size=linear_size),
        )
    detail = f"max rel-err {worst:.3e} over {instances} instances (tol {tol:.0e})"
    return CheckResult("gradient-suite", worst <= tol, detail)


def run_all(quick: bool = False) -> list[CheckResult]:
    samples = 20_000 if quick else 200_000
    tol = 0.03 if quick else STAT_TOL
    instances = 3 if quick else 20
    return [
        check_op_sampling_limit(samples=samples, tol=tol),
        check_edge_sampling_limit(samples=samples, tol=tol),
        gradient_suite(instances=instances),
    ]
