"""Gradient ascent on a frozen proxy over the relaxed parameters.

Each epoch draws one soft sample per parameter group at the scheduled
temperature, evaluates the frozen model on the whole stack at once, and
ascends the objective by chaining the model's input gradients through the
reparameterized samplers back to the operation logits and edge log-odds.
Updates alternate between the two parameter blocks on fixed-length
intervals; fixed topologies update operation logits only. After
optimization, discrete candidates are drawn from each group and
deduplicated.

Groups are mathematically independent (per-group noise streams, and the
adaptive-moment updates are elementwise), so optimizing them as one stack
is exactly equivalent to optimizing them one at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure
from .optim import AdamW
from .relaxation import (
    ParamGroup,
    TemperatureSchedule,
    concrete_gate,
    gumbel_softmax,
    sample_discrete,
    temperature_at,
)
from .space import Architecture, SpaceDescriptor, TopologyMode, canonical_hash
from .validation import check_positive, ensure_rng


@dataclass(frozen=True)
class SearchConfig:
    search_epochs: int = 300
    o_epochs: int = 15
    t_epochs: int = 15
    lr_alpha: float = 0.02
    lr_beta: float = 0.001
    base_temp: float = 0.7
    min_temp: float = 0.2
    samples_per_group: int = 20

    def __post_init__(self):
        for name in ("search_epochs", "o_epochs", "t_epochs", "lr_alpha",
                     "lr_beta", "samples_per_group"):
            check_positive(name, getattr(self, name))

    def schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule(
            base_temp=self.base_temp,
            min_temp=self.min_temp,
            total_epochs=self.search_epochs,
        )


@dataclass
class SearchTrace:
    """Instrumentation: per-epoch objective values and update-block counts."""

    objective_values: list[np.ndarray] = field(default_factory=list)
    alpha_blocks: int = 0
    beta_blocks: int = 0

    def group_values(self, index: int = 0) -> np.ndarray:
        return np.array([v[index] for v in self.objective_values])


def proxy_ascent_target(regressor, space: SpaceDescriptor, objective=None):
    """Adapt a fitted regressor to the stacked (value, gradients) interface.

    The returned callable maps a stack of soft embeddings
    (op_probs: (k, P, M), edge_probs: (k, N, N)) to per-group objective
    values and gradients in the same coordinates.
    """
    positions = list(space.position_nodes)

    def target(op_probs: np.ndarray, edge_probs: np.ndarray):
        k = op_probs.shape[0]
        feats = np.zeros((k, space.num_nodes, space.num_ops))
        feats[:, positions, :] = op_probs
        values, d_feats, d_adj = regressor.value_and_input_grads(
            feats, edge_probs, objective
        )
        return values, d_feats[:, positions, :], d_adj

    return target


def optimize_groups(
    groups: list[ParamGroup],
    target,
    space: SpaceDescriptor,
    cfg: SearchConfig,
    noises,
    trace: SearchTrace | None = None,
) -> list[ParamGroup]:
    """Maximize ``target`` over a stack of parameter groups.

    ``noises`` supplies one independent noise source per group; model
    weights behind ``target`` are never touched. Returns new groups in the
    input order.
    """
    k = len(groups)
    if len(noises) != k:
        raise ValueError("need one noise source per group")
    schedule = cfg.schedule()
    topology_searched = space.topology_mode is not TopologyMode.FIXED
    mask = space.edge_mask()

    op_stack = np.stack([g.op_logits for g in groups]).astype(np.float64)
    if topology_searched:
        edge_stack = np.stack([g.edge_logits for g in groups]).astype(np.float64)
    else:
        edge_stack = None
        fixed_adj = np.broadcast_to(
            space.fixed_adj.astype(np.float64),
            (k, space.num_nodes, space.num_nodes),
        )

    opt_op = AdamW({"op": op_stack}, lr=cfg.lr_alpha, weight_decay=0.0)
    opt_edge = (
        AdamW({"edge": edge_stack}, lr=cfg.lr_beta, weight_decay=0.0)
        if topology_searched
        else None
    )

    cycle = cfg.o_epochs + cfg.t_epochs
    previous_phase = None
    for epoch in range(cfg.search_epochs):
        tau = temperature_at(schedule, epoch)
        op_noise = np.stack([nz.op_noise(op_stack.shape[1:]) for nz in noises])
        op_probs = gumbel_softmax(op_stack, tau, op_noise)
        if topology_searched:
            edge_noise = np.stack(
                [nz.edge_noise(edge_stack.shape[1:]) for nz in noises]
            )
            gates = concrete_gate(edge_stack, tau, edge_noise)
            edge_probs = np.where(mask, gates, 0.0)
        else:
            edge_probs = fixed_adj

        values, d_op, d_edge = target(op_probs, edge_probs)
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise NumericalFailure(f"non-finite objective at search epoch {epoch}")
        if trace is not None:
            trace.objective_values.append(values.copy())

        update_op = (not topology_searched) or (epoch % cycle) < cfg.o_epochs
        phase = "op" if update_op else "edge"
        if trace is not None and phase != previous_phase:
            if phase == "op":
                trace.alpha_blocks += 1
            else:
                trace.beta_blocks += 1
        previous_phase = phase

        if update_op:
            row_dot = np.sum(d_op * op_probs, axis=-1, keepdims=True)
            d_logits = op_probs * (d_op - row_dot) / tau
            opt_op.step({"op": -d_logits})
        else:
            d_logits = np.where(mask, d_edge * gates * (1.0 - gates) / tau, 0.0)
            opt_edge.step({"edge": -d_logits})

    out = []
    for i, group in enumerate(groups):
        edge = edge_stack[i].copy() if topology_searched else group.edge_logits.copy()
        out.append(ParamGroup(op_logits=op_stack[i].copy(), edge_logits=edge,
                              group_id=group.group_id))
    return out


def optimize_params(
    params: ParamGroup,
    target,
    space: SpaceDescriptor,
    cfg: SearchConfig,
    noise,
    trace: SearchTrace | None = None,
) -> ParamGroup:
    """Single-group convenience wrapper around :func:`optimize_groups`."""
    return optimize_groups([params], target, space, cfg, [noise], trace=trace)[0]


def propose_candidates(
    groups: list[ParamGroup],
    space: SpaceDescriptor,
    q: int,
    rngs,
) -> list[Architecture]:
    """Draw ~q/K discrete candidates per group, deduplicated within the batch.

    ``rngs`` is either one generator (shared sequentially) or one per
    group. A remainder of q modulo K is distributed round-robin starting
    from the first group.
    """
    k = len(groups)
    if isinstance(rngs, (list, tuple)):
        if len(rngs) != k:
            raise ValueError("need one rng per group")
        group_rngs = [ensure_rng(r) for r in rngs]
    else:
        shared = ensure_rng(rngs)
        group_rngs = [shared] * k
    base, remainder = divmod(q, k)

    out: list[Architecture] = []
    seen: set[str] = set()
    for index, (group, rng) in enumerate(zip(groups, group_rngs)):
        count = base + (1 if index < remainder else 0)
        for _ in range(count):
            arch = sample_discrete(group, space, rng)
            identity = canonical_hash(arch, space)
            if identity not in seen:
                seen.add(identity)
                out.append(arch)
    return out
