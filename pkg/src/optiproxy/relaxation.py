"""Continuous relaxation of a discrete space and the two sampling routes.

A parameter group carries unconstrained operation logits (one row per
searchable position) and edge log-odds (one entry per searchable edge).
``sample_discrete`` draws a hard architecture from the implied categorical
/ Bernoulli distributions; ``sample_soft`` draws the differentiable
embedding through the reparameterization trick. At temperature -> 0 the
soft route's argmax statistics reproduce the discrete route's
probabilities, which the test suite checks empirically.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidConfig, SamplingExhausted
from .space import (
    Architecture,
    SpaceDescriptor,
    TopologyMode,
    group_scores,
    grouped_adjacency,
    make_architecture,
    validate,
)
from .validation import ensure_rng

_EPS = 1e-20

FREE_SAMPLING_RETRIES = 100


@dataclass
class ParamGroup:
    """One relaxed point of the search space.

    ``op_logits`` has shape (positions, num_ops); ``edge_logits`` has shape
    (num_nodes, num_nodes) with only the space's searchable edges read (it
    is empty for fixed topologies). Both are unconstrained reals.
    """

    op_logits: np.ndarray
    edge_logits: np.ndarray
    group_id: int = 0

    def copy(self) -> "ParamGroup":
        return ParamGroup(
            op_logits=self.op_logits.copy(),
            edge_logits=self.edge_logits.copy(),
            group_id=self.group_id,
        )


@dataclass
class SoftEmbedding:
    """Differentiable architecture embedding.

    ``op_probs`` rows live on the probability simplex; ``edge_probs``
    entries on searchable edges are strictly inside (0, 1) and zero
    elsewhere (fixed topologies carry their hard adjacency instead).
    """

    op_probs: np.ndarray
    edge_probs: np.ndarray


class GumbelNoise:
    """Seedable noise source for the reparameterized samplers.

    Operation logits receive standard Gumbel draws, g = -log(-log(u)).
    Edge log-odds receive the difference of two Gumbel draws (a standard
    logistic), which is the two-outcome case of the same construction:
    sigmoid((beta + g1 - g2)/tau) is exactly the binary softmax over
    {edge, no-edge} with per-outcome Gumbel noise.
    """

    def __init__(self, rng):
        self.rng = ensure_rng(rng)

    def _gumbel(self, shape) -> np.ndarray:
        u = self.rng.random(shape)
        return -np.log(-np.log(u + _EPS) + _EPS)

    def op_noise(self, shape) -> np.ndarray:
        return self._gumbel(shape)

    def edge_noise(self, shape) -> np.ndarray:
        return self._gumbel(shape) - self._gumbel(shape)


class ZeroNoise:
    """Noise source that always returns zeros (for deterministic tests)."""

    def op_noise(self, shape) -> np.ndarray:
        return np.zeros(shape)

    def edge_noise(self, shape) -> np.ndarray:
        return np.zeros(shape)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    expx = np.exp(x[~pos])
    out[~pos] = expx / (1.0 + expx)
    return out


def gumbel_softmax(logits: np.ndarray, tau: float, noise: np.ndarray) -> np.ndarray:
    """Rows of softmax((logits + noise) / tau)."""
    if tau <= 0:
        raise InvalidConfig(f"temperature must be positive, got {tau}")
    return softmax((logits + noise) / tau, axis=-1)


def concrete_gate(logits: np.ndarray, tau: float, noise: np.ndarray) -> np.ndarray:
    """sigmoid((logits + noise) / tau), the binary counterpart."""
    if tau <= 0:
        raise InvalidConfig(f"temperature must be positive, got {tau}")
    return sigmoid((np.asarray(logits, dtype=np.float64) + noise) / tau)


# -- temperature schedule ----------------------------------------------------


class ScheduleMode(str, Enum):
    EXPONENTIAL = "exponential"
    LINEAR = "linear"


@dataclass(frozen=True)
class TemperatureSchedule:
    base_temp: float = 0.7
    min_temp: float = 0.2
    total_epochs: int = 300
    mode: ScheduleMode = ScheduleMode.EXPONENTIAL

    def __post_init__(self):
        if self.base_temp <= 0 or self.min_temp <= 0:
            raise InvalidConfig("temperatures must be positive")
        if self.min_temp > self.base_temp:
            raise InvalidConfig("min_temp must not exceed base_temp")
        if self.total_epochs < 1:
            raise InvalidConfig("total_epochs must be >= 1")


def temperature_at(schedule: TemperatureSchedule, epoch: int) -> float:
    """Nonincreasing decay from base_temp at epoch 0 to min_temp at the end."""
    if epoch < 0 or epoch >= schedule.total_epochs:
        raise InvalidConfig(
            f"epoch {epoch} outside [0, {schedule.total_epochs})"
        )
    if schedule.total_epochs == 1:
        return schedule.base_temp
    frac = epoch / (schedule.total_epochs - 1)
    if schedule.mode is ScheduleMode.LINEAR:
        return schedule.base_temp + (schedule.min_temp - schedule.base_temp) * frac
    ratio = schedule.min_temp / schedule.base_temp
    return schedule.base_temp * ratio**frac


# -- initialization ----------------------------------------------------------


def init_params_lhs(
    k: int,
    space: SpaceDescriptor,
    lhs_lower: float = 0.9,
    lhs_range: float = 0.1,
    rng=None,
) -> list[ParamGroup]:
    """Latin-Hypercube initialize K parameter groups.

    Every scalar dimension (each op logit and each searchable edge logit)
    is stratified independently: the K groups receive values from the K
    disjoint sub-intervals of [lhs_lower, lhs_lower + lhs_range], in a
    per-dimension random stratum order.
    """
    if k < 1:
        raise InvalidConfig(f"need at least one parameter group, got {k}")
    if lhs_range <= 0:
        raise InvalidConfig("lhs_range must be positive")
    rng = ensure_rng(rng)
    p, m = space.num_positions, space.num_ops
    mask = space.edge_mask()
    n_edges = int(mask.sum())
    dims = p * m + n_edges

    width = lhs_range / k
    strata = np.argsort(rng.random((dims, k)), axis=1)  # random permutation per dim
    offsets = rng.random((dims, k))
    values = lhs_lower + (strata + offsets) * width  # (dims, k)

    groups = []
    for g in range(k):
        flat = values[:, g]
        op_logits = flat[: p * m].reshape(p, m).copy()
        edge_logits = np.zeros((space.num_nodes, space.num_nodes))
        if n_edges:
            edge_logits[mask] = flat[p * m :]
        if space.topology_mode is TopologyMode.FIXED:
            edge_logits = np.zeros((0, 0))
        groups.append(ParamGroup(op_logits=op_logits, edge_logits=edge_logits, group_id=g))
    return groups


def uniform_params(space: SpaceDescriptor) -> ParamGroup:
    """All-zero logits: uniform operations, fair-coin edges, equal groups."""
    edge = (
        np.zeros((0, 0))
        if space.topology_mode is TopologyMode.FIXED
        else np.zeros((space.num_nodes, space.num_nodes))
    )
    return ParamGroup(
        op_logits=np.zeros((space.num_positions, space.num_ops)),
        edge_logits=edge,
    )


# -- discrete sampling -------------------------------------------------------


def _repair_free(adj: np.ndarray, probs: np.ndarray, space: SpaceDescriptor) -> np.ndarray:
    """Greedy edge add/remove toward feasibility for free topologies."""
    adj = adj.copy()
    n = space.num_nodes
    upper = np.triu_indices(n, k=1)
    if adj[0, :].sum() == 0:
        j = int(np.argmax(probs[0, 1:])) + 1
        adj[0, j] = 1
    if adj[:, n - 1].sum() == 0:
        i = int(np.argmax(probs[: n - 1, n - 1]))
        adj[i, n - 1] = 1
    budget = space.max_edges
    if budget is not None and adj.sum() > budget:
        # Drop the least likely edges first, but never the last remaining
        # input-side or output-side edge.
        order = sorted(zip(*upper), key=lambda ij: probs[ij])
        for i, j in order:
            if adj.sum() <= budget:
                break
            if not adj[i, j]:
                continue
            if i == 0 and adj[0, :].sum() == 1:
                continue
            if j == n - 1 and adj[:, n - 1].sum() == 1:
                continue
            adj[i, j] = 0
    return adj


def sample_discrete(
    params: ParamGroup,
    space: SpaceDescriptor,
    rng=None,
    max_retries: int = FREE_SAMPLING_RETRIES,
) -> Architecture:
    """Draw one hard architecture from the distributions implied by params."""
    rng = ensure_rng(rng)
    p, m = space.num_positions, space.num_ops
    if params.op_logits.shape != (p, m):
        raise InvalidConfig("op_logits shape does not match the space")
    op_p = softmax(params.op_logits, axis=1)
    ops = [int(rng.choice(m, p=op_p[i])) for i in range(p)]

    mode = space.topology_mode
    if mode is TopologyMode.FIXED:
        return make_architecture(space, ops)

    if mode is TopologyMode.GROUPED:
        probs = sigmoid(params.edge_logits)
        scores = group_scores(probs, space.groups)
        selection = {}
        for node, s in scores.items():
            weights = s / s.sum()
            selection[node] = int(rng.choice(len(s), p=weights))
        return make_architecture(space, ops, grouped_adjacency(space, selection))

    mask = space.edge_mask()
    probs = np.where(mask, sigmoid(params.edge_logits), 0.0)
    for attempt in range(max_retries):
        adj = (rng.random(probs.shape) < probs).astype(np.uint8)
        adj &= mask.astype(np.uint8)
        arch = make_architecture(space, ops, adj)
        if not validate(arch, space):
            return arch
    adj = _repair_free(adj, probs, space)
    arch = make_architecture(space, ops, adj)
    if validate(arch, space):
        raise SamplingExhausted(
            f"no valid topology after {max_retries} attempts plus repair"
        )
    return arch


# -- soft (proxy) sampling ---------------------------------------------------


def sample_soft(
    params: ParamGroup,
    space: SpaceDescriptor,
    tau: float,
    noise: GumbelNoise | ZeroNoise,
) -> SoftEmbedding:
    """Draw the differentiable soft embedding at temperature ``tau``.

    Also returns, via the embedding, everything the search step needs to
    chain gradients back to the logits.
    """
    if tau <= 0:
        raise InvalidConfig(f"temperature must be positive, got {tau}")
    g_op = noise.op_noise(params.op_logits.shape)
    op_probs = gumbel_softmax(params.op_logits, tau, g_op)

    if space.topology_mode is TopologyMode.FIXED:
        edge_probs = space.fixed_adj.astype(np.float64)
    else:
        mask = space.edge_mask()
        g_edge = noise.edge_noise(params.edge_logits.shape)
        gates = concrete_gate(params.edge_logits, tau, g_edge)
        edge_probs = np.where(mask, gates, 0.0)
    return SoftEmbedding(op_probs=op_probs, edge_probs=edge_probs)
