"""Search spaces and discrete architecture representations.

A space is a DAG over ``num_nodes`` graph nodes. Node 0 acts as the input
hub and node ``num_nodes - 1`` as the output hub (grouped spaces instead
mark their leading nodes as inputs); the nodes in between are the
searchable operation positions. Three topology modes are supported:

* ``fixed``   -- one shared adjacency matrix, only operations are searched;
* ``free``    -- every strictly-upper edge is searched under connectivity
  and edge-budget constraints;
* ``grouped`` -- each position picks exactly one group of preceding nodes
  from a per-node candidate table.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

from .errors import (
    EnumerationRefused,
    InvalidArchitecture,
    InvalidInput,
    InvalidLayout,
    InvalidMode,
)
from .validation import check_binary, check_strict_upper

ENUMERATION_CAP = 10_000_000

VIOLATION_MAX_EDGES = "max_edges"
VIOLATION_INPUT = "input-connectivity"
VIOLATION_OUTPUT = "output-connectivity"


class TopologyMode(str, Enum):
    FIXED = "fixed"
    FREE = "free"
    GROUPED = "grouped"


@dataclass(frozen=True)
class GroupLayout:
    """Per-node candidate preceding-node groups for grouped topology.

    ``node_groups`` maps a node index to an ordered tuple of groups; each
    group is a tuple of strictly smaller node indices. Exactly one group is
    selected per node when sampling.
    """

    node_groups: dict[int, tuple[tuple[int, ...], ...]]

    def __post_init__(self):
        for node, groups in self.node_groups.items():
            if not groups:
                raise InvalidLayout(f"node {node} has no candidate groups")
            for group in groups:
                if not group:
                    raise InvalidLayout(f"node {node} has an empty group")
                if any(member >= node for member in group):
                    raise InvalidLayout(
                        f"node {node} group {group} references a node with "
                        "index >= its own (DAG order violated)"
                    )

    @property
    def nodes(self) -> tuple[int, ...]:
        return tuple(sorted(self.node_groups))

    def edges(self) -> list[tuple[int, int]]:
        """All (predecessor, node) pairs appearing in any group."""
        seen = set()
        for node in self.nodes:
            for group in self.node_groups[node]:
                for member in group:
                    seen.add((member, node))
        return sorted(seen)


@dataclass(frozen=True)
class SpaceDescriptor:
    name: str
    num_nodes: int
    num_ops: int
    op_names: tuple[str, ...]
    topology_mode: TopologyMode
    fixed_adj: np.ndarray | None = None
    max_edges: int | None = None
    groups: GroupLayout | None = None

    def __post_init__(self):
        if self.num_nodes < 2:
            raise InvalidInput("a space needs at least 2 nodes")
        if self.num_ops < 1:
            raise InvalidInput("a space needs at least 1 candidate operation")
        if len(self.op_names) != self.num_ops:
            raise InvalidInput("op_names length must equal num_ops")
        mode = self.topology_mode
        if mode is TopologyMode.FIXED:
            if self.fixed_adj is None:
                raise InvalidInput("fixed mode requires an adjacency matrix")
            adj = np.ascontiguousarray(self.fixed_adj, dtype=np.uint8)
            if adj.shape != (self.num_nodes, self.num_nodes):
                raise InvalidInput("fixed adjacency has the wrong shape")
            check_binary("fixed_adj", adj)
            check_strict_upper("fixed_adj", adj)
            adj.setflags(write=False)
            object.__setattr__(self, "fixed_adj", adj)
        elif mode is TopologyMode.FREE:
            if self.max_edges is None or self.max_edges < 0:
                raise InvalidInput("free mode requires a max_edges budget >= 0")
        elif mode is TopologyMode.GROUPED:
            if self.groups is None:
                raise InvalidInput("grouped mode requires a group table")
            if max(self.groups.nodes) >= self.num_nodes:
                raise InvalidInput("group table references nodes outside the space")

    # -- structural helpers ------------------------------------------------

    @property
    def position_nodes(self) -> tuple[int, ...]:
        """Graph node indices that carry a searchable operation."""
        if self.topology_mode is TopologyMode.GROUPED:
            return self.groups.nodes
        return tuple(range(1, self.num_nodes - 1))

    @property
    def num_positions(self) -> int:
        return len(self.position_nodes)

    def edge_mask(self) -> np.ndarray:
        """Boolean N x N mask of searchable (parameterized) edges."""
        n = self.num_nodes
        mask = np.zeros((n, n), dtype=bool)
        if self.topology_mode is TopologyMode.FREE:
            mask[np.triu_indices(n, k=1)] = True
        elif self.topology_mode is TopologyMode.GROUPED:
            for pred, node in self.groups.edges():
                mask[pred, node] = True
        return mask

    def node_features(self, op_matrix: np.ndarray) -> np.ndarray:
        """Embed a P x M operation matrix into the N x M node-feature matrix.

        Structural (input/output) nodes get all-zero feature rows.
        """
        op_matrix = np.asarray(op_matrix, dtype=np.float64)
        if op_matrix.shape != (self.num_positions, self.num_ops):
            raise InvalidInput(
                f"operation matrix must be {self.num_positions} x {self.num_ops}"
            )
        feats = np.zeros((self.num_nodes, self.num_ops))
        feats[list(self.position_nodes)] = op_matrix
        return feats

    def size_bound(self) -> int:
        """Upper bound on the number of (possibly invalid) architectures."""
        m, p = self.num_ops, self.num_positions
        ops = m**p
        if self.topology_mode is TopologyMode.FIXED:
            return ops
        if self.topology_mode is TopologyMode.GROUPED:
            choices = 1
            for node in self.groups.nodes:
                choices *= len(self.groups.node_groups[node])
            return ops * choices
        pairs = self.num_nodes * (self.num_nodes - 1) // 2
        return ops * 2**pairs


@dataclass(frozen=True, eq=False)
class Architecture:
    """One discrete point: an op index per position plus a DAG adjacency."""

    ops: tuple[int, ...]
    adj: np.ndarray
    key: str

    def __eq__(self, other):
        return isinstance(other, Architecture) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def one_hot_ops(self, num_ops: int) -> np.ndarray:
        mat = np.zeros((len(self.ops), num_ops))
        mat[np.arange(len(self.ops)), list(self.ops)] = 1.0
        return mat


def make_architecture(
    space: SpaceDescriptor, ops, adj: np.ndarray | None = None
) -> Architecture:
    """Build an architecture, checking dimensions against the space."""
    ops = tuple(int(o) for o in ops)
    if len(ops) != space.num_positions:
        raise InvalidArchitecture(
            f"expected {space.num_positions} operations, got {len(ops)}"
        )
    if any(o < 0 or o >= space.num_ops for o in ops):
        raise InvalidArchitecture("operation index out of range")
    if space.topology_mode is TopologyMode.FIXED:
        adj = space.fixed_adj
    else:
        if adj is None:
            raise InvalidArchitecture("non-fixed spaces need an adjacency matrix")
        adj = np.ascontiguousarray(adj, dtype=np.uint8)
        if adj.shape != (space.num_nodes, space.num_nodes):
            raise InvalidArchitecture("adjacency matrix has the wrong shape")
        check_binary("adj", adj)
        check_strict_upper("adj", adj)
        adj.setflags(write=False)
    key = _encode_parts(ops, adj, space)
    return Architecture(ops=ops, adj=adj, key=key)


# -- canonical key (serialization) ----------------------------------------


def _encode_parts(ops, adj, space: SpaceDescriptor) -> str:
    ops_part = "-".join(str(o) for o in ops)
    if space.topology_mode is TopologyMode.FIXED:
        adj_part = "fixed"
    else:
        adj_part = "".join(str(int(v)) for v in np.asarray(adj).ravel())
    return f"ops:{ops_part}|adj:{adj_part}"


def encode_arch(arch: Architecture, space: SpaceDescriptor) -> str:
    """Serialize an architecture to its deterministic key string."""
    if len(arch.ops) != space.num_positions:
        raise InvalidArchitecture("architecture does not match the space dimensions")
    if arch.adj.shape != (space.num_nodes, space.num_nodes):
        raise InvalidArchitecture("adjacency does not match the space dimensions")
    return _encode_parts(arch.ops, arch.adj, space)


def decode_arch(key: str, space: SpaceDescriptor) -> Architecture:
    """Inverse of :func:`encode_arch`."""
    try:
        ops_part, adj_part = key.split("|adj:")
        ops = tuple(int(v) for v in ops_part.removeprefix("ops:").split("-")) \
            if ops_part != "ops:" else ()
    except ValueError as exc:
        raise InvalidArchitecture(f"malformed key {key!r}") from exc
    n = space.num_nodes
    if adj_part == "fixed":
        if space.topology_mode is not TopologyMode.FIXED:
            raise InvalidArchitecture("'fixed' adjacency key in a non-fixed space")
        adj = None
    else:
        if len(adj_part) != n * n or set(adj_part) - {"0", "1"}:
            raise InvalidArchitecture(f"malformed adjacency bits in key {key!r}")
        adj = np.frombuffer(adj_part.encode(), dtype=np.uint8).reshape(n, n) - ord("0")
    return make_architecture(space, ops, adj)


# -- validity --------------------------------------------------------------


def validate(arch: Architecture, space: SpaceDescriptor) -> list[str]:
    """Return the list of violated constraints (empty means valid)."""
    if space.topology_mode is not TopologyMode.FREE:
        return []
    violations = []
    n = space.num_nodes
    edge_count = int(arch.adj.sum())
    if space.max_edges is not None and edge_count > space.max_edges:
        violations.append(VIOLATION_MAX_EDGES)
    if arch.adj[0, :].sum() == 0:
        violations.append(VIOLATION_INPUT)
    if arch.adj[:, n - 1].sum() == 0:
        violations.append(VIOLATION_OUTPUT)
    return violations


# -- isomorphism canonicalization ------------------------------------------


def _on_path_nodes(adj: np.ndarray) -> list[int]:
    """Nodes lying on some input->output path (input/output always kept)."""
    n = adj.shape[0]
    fwd = [set(np.nonzero(adj[i])[0].tolist()) for i in range(n)]
    bwd = [set(np.nonzero(adj[:, i])[0].tolist()) for i in range(n)]

    def reach(start, nbrs):
        seen = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for w in nbrs[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return seen

    from_in = reach(0, fwd)
    to_out = reach(n - 1, bwd)
    keep = (from_in & to_out) | {0, n - 1}
    return sorted(keep)


def canonical_hash(arch: Architecture, space: SpaceDescriptor) -> str:
    """Hash equal for computationally equivalent architectures.

    Free-topology graphs are pruned to the nodes on an input->output path,
    then relabeled by iterative neighborhood hashing (own label, sorted
    predecessor labels, sorted successor labels) for 2N rounds; the hash
    covers every round's label multiset. Fixed and grouped topologies have
    positional semantics, so their hash is simply a digest of the key.
    """
    if space.topology_mode is not TopologyMode.FREE:
        return hashlib.sha256(arch.key.encode()).hexdigest()[:16]

    n = space.num_nodes
    op_of_node = {node: arch.ops[i] for i, node in enumerate(space.position_nodes)}
    keep = _on_path_nodes(arch.adj)
    sub = {v: i for i, v in enumerate(keep)}
    k = len(keep)
    adj = np.zeros((k, k), dtype=np.uint8)
    for a in keep:
        for b in np.nonzero(arch.adj[a])[0]:
            if int(b) in sub:
                adj[sub[a], sub[int(b)]] = 1

    def base_label(v: int) -> str:
        if v == 0:
            return "in"
        if v == n - 1:
            return "out"
        return f"op{op_of_node[v]}"

    labels = [base_label(v) for v in keep]
    preds = [np.nonzero(adj[:, i])[0].tolist() for i in range(k)]
    succs = [np.nonzero(adj[i])[0].tolist() for i in range(k)]
    digest = hashlib.sha256()
    for _ in range(2 * max(k, 1)):
        digest.update("|".join(sorted(labels)).encode())
        labels = [
            hashlib.sha256(
                (
                    labels[i]
                    + "<" + ",".join(sorted(labels[p] for p in preds[i]))
                    + ">" + ",".join(sorted(labels[s] for s in succs[i]))
                ).encode()
            ).hexdigest()
            for i in range(k)
        ]
    digest.update("|".join(sorted(labels)).encode())
    return digest.hexdigest()[:16]


# -- enumeration -----------------------------------------------------------


def enumerate_space(
    space: SpaceDescriptor, cap: int = ENUMERATION_CAP
) -> Iterator[Architecture]:
    """Yield every valid architecture exactly once (canonically deduplicated)."""
    if space.size_bound() > cap:
        raise EnumerationRefused(
            f"space bound {space.size_bound()} exceeds the cap {cap}"
        )
    mode = space.topology_mode
    op_choices = itertools.product(range(space.num_ops), repeat=space.num_positions)
    if mode is TopologyMode.FIXED:
        for ops in op_choices:
            yield make_architecture(space, ops)
        return
    if mode is TopologyMode.GROUPED:
        seen: set[str] = set()
        nodes = space.groups.nodes
        for ops in op_choices:
            all_selections = itertools.product(
                *(range(len(space.groups.node_groups[v])) for v in nodes)
            )
            for selection in all_selections:
                adj = grouped_adjacency(space, dict(zip(nodes, selection)))
                arch = make_architecture(space, ops, adj)
                if arch.key not in seen:
                    seen.add(arch.key)
                    yield arch
        return

    n = space.num_nodes
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    seen = set()
    for bits in itertools.product((0, 1), repeat=len(pairs)):
        adj = np.zeros((n, n), dtype=np.uint8)
        for (i, j), b in zip(pairs, bits):
            adj[i, j] = b
        for ops in itertools.product(range(space.num_ops), repeat=space.num_positions):
            arch = make_architecture(space, ops, adj)
            if validate(arch, space):
                continue
            canon = canonical_hash(arch, space)
            if canon not in seen:
                seen.add(canon)
                yield arch


# -- grouped topology helpers ----------------------------------------------


def grouped_layout(space: SpaceDescriptor) -> GroupLayout:
    if space.topology_mode is not TopologyMode.GROUPED:
        raise InvalidMode(f"space {space.name!r} is not in grouped mode")
    return space.groups


def grouped_adjacency(
    space: SpaceDescriptor, selection: dict[int, int]
) -> np.ndarray:
    """Adjacency produced by selecting one candidate group per node."""
    adj = np.zeros((space.num_nodes, space.num_nodes), dtype=np.uint8)
    for node, group_index in selection.items():
        for member in space.groups.node_groups[node][group_index]:
            adj[member, node] = 1
    return adj


def group_scores(
    sigmoid_beta: np.ndarray, layout: GroupLayout
) -> dict[int, np.ndarray]:
    """Collapse per-edge probabilities to per-(node, group) mean scores."""
    sigmoid_beta = np.asarray(sigmoid_beta, dtype=np.float64)
    scores: dict[int, np.ndarray] = {}
    for node in layout.nodes:
        groups = layout.node_groups[node]
        scores[node] = np.array(
            [float(np.mean([sigmoid_beta[m, node] for m in g])) for g in groups]
        )
    return scores


# -- stock spaces ------------------------------------------------------------

NB201_OPS = ("none", "skip_connect", "conv_1x1", "conv_3x3", "avg_pool_3x3")
NB101_OPS = ("conv3x3-bn-relu", "conv1x1-bn-relu", "maxpool3x3")
NB301_OPS = (
    "skip_connect",
    "max_pool_3x3",
    "avg_pool_3x3",
    "sep_conv_3x3",
    "sep_conv_5x5",
    "dil_conv_3x3",
    "dil_conv_5x5",
)

# Cell wiring of the 6-position fixed space, op-per-edge rewritten as
# op-as-node. Node order: input hub, the six positions (source-ordered),
# output hub.
_CELL_EDGES = (
    (0, 1), (0, 2), (0, 4),
    (1, 3), (1, 5),
    (2, 6), (3, 6),
    (4, 7), (5, 7), (6, 7),
)


def nb201_like_space(name: str = "nb201") -> SpaceDescriptor:
    adj = np.zeros((8, 8), dtype=np.uint8)
    for i, j in _CELL_EDGES:
        adj[i, j] = 1
    return SpaceDescriptor(
        name=name,
        num_nodes=8,
        num_ops=5,
        op_names=NB201_OPS,
        topology_mode=TopologyMode.FIXED,
        fixed_adj=adj,
    )


def nb101_like_space(name: str = "nb101") -> SpaceDescriptor:
    return SpaceDescriptor(
        name=name,
        num_nodes=7,
        num_ops=3,
        op_names=NB101_OPS,
        topology_mode=TopologyMode.FREE,
        max_edges=9,
    )


def nb301_like_space(name: str = "nb301-cell") -> SpaceDescriptor:
    """Grouped preceding-node table of the 10-node cell transform."""
    table = {
        2: ((0,),),
        3: ((1,),),
        4: ((0,), (1,)),
        5: ((1,), (2, 3)),
        6: ((0,), (1,), (2, 3)),
        7: ((1,), (2, 3), (4, 5)),
        8: ((0,), (1,), (2, 3), (4, 5)),
        9: ((1,), (2, 3), (4, 5), (6, 7)),
    }
    return SpaceDescriptor(
        name=name,
        num_nodes=10,
        num_ops=7,
        op_names=NB301_OPS,
        topology_mode=TopologyMode.GROUPED,
        groups=GroupLayout(node_groups=table),
    )


def chain_space(
    positions: int, num_ops: int, name: str | None = None
) -> SpaceDescriptor:
    """Generic fixed-topology space: hub-to-all, chain, all-to-hub wiring."""
    n = positions + 2
    adj = np.zeros((n, n), dtype=np.uint8)
    for p in range(1, positions + 1):
        adj[0, p] = 1
        adj[p, n - 1] = 1
        if p + 1 <= positions:
            adj[p, p + 1] = 1
    return SpaceDescriptor(
        name=name or f"chain-p{positions}-m{num_ops}",
        num_nodes=n,
        num_ops=num_ops,
        op_names=tuple(f"op{i}" for i in range(num_ops)),
        topology_mode=TopologyMode.FIXED,
        fixed_adj=adj,
    )


# -- JSON interface ----------------------------------------------------------


def space_to_dict(space: SpaceDescriptor) -> dict:
    doc = {
        "name": space.name,
        "num_nodes": space.num_nodes,
        "num_ops": space.num_ops,
        "op_names": list(space.op_names),
        "topology_mode": space.topology_mode.value,
    }
    if space.topology_mode is TopologyMode.FIXED:
        doc["fixed_adj"] = "".join(str(int(v)) for v in space.fixed_adj.ravel())
    if space.topology_mode is TopologyMode.FREE:
        doc["max_edges"] = space.max_edges
    if space.topology_mode is TopologyMode.GROUPED:
        doc["groups"] = {
            str(node): [list(g) for g in groups]
            for node, groups in space.groups.node_groups.items()
        }
    return doc


def space_from_dict(doc: dict) -> SpaceDescriptor:
    mode = TopologyMode(doc["topology_mode"])
    n = int(doc["num_nodes"])
    fixed_adj = None
    groups = None
    if mode is TopologyMode.FIXED:
        raw = doc["fixed_adj"]
        if isinstance(raw, str):
            if len(raw) != n * n:
                raise InvalidInput("fixed_adj bit string has the wrong length")
            fixed_adj = np.array([int(c) for c in raw], dtype=np.uint8).reshape(n, n)
        else:
            fixed_adj = np.asarray(raw, dtype=np.uint8)
    if mode is TopologyMode.GROUPED:
        groups = GroupLayout(
            node_groups={
                int(node): tuple(tuple(int(m) for m in g) for g in gs)
                for node, gs in doc["groups"].items()
            }
        )
    return SpaceDescriptor(
        name=doc["name"],
        num_nodes=n,
        num_ops=int(doc["num_ops"]),
        op_names=tuple(doc["op_names"]),
        topology_mode=mode,
        fixed_adj=fixed_adj,
        max_edges=doc.get("max_edges"),
        groups=groups,
    )


def load_space(path) -> SpaceDescriptor:
    with open(path, "r", encoding="utf-8") as fh:
        return space_from_dict(json.load(fh))


def save_space(space: SpaceDescriptor, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(space_to_dict(space), fh, indent=2, sort_keys=False)
        fh.write("\n")
