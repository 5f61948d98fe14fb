"""Evaluation oracles: tabular lookups and synthetic landscapes.

Both oracle kinds answer ``query(arch, fidelity)`` deterministically and
may expose per-device latency. Synthetic landscapes are built by exhaustive
construction, so their global optimum is known exactly and a correlated
low-fidelity variant can be calibrated against the full metric.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .errors import (
    EnumerationRefused,
    InvalidBenchmark,
    MissingFidelity,
    UnknownArchitecture,
    UnknownDevice,
)
from .space import (
    ENUMERATION_CAP,
    Architecture,
    SpaceDescriptor,
    canonical_hash,
    chain_space,
    enumerate_space,
    make_architecture,
    validate,
)

FULL_FIDELITY = "full"
LOW_FIDELITY = "lo"
SIM_DEVICE = "sim"

PENALTY_WEIGHT_FLOOR = 1e-3
PENALTY_WEIGHT_CEIL = 1e3


# -- hardware-aware constraint aggregation -----------------------------------


@dataclass(frozen=True)
class ConstraintSpec:
    """Latency constraint and the penalty used to fold it into one score."""

    device: str
    bound: float
    weight: float = 1.0
    adapt_rate: float = 0.5
    target_infeasible: float = 0.2

    def __post_init__(self):
        if self.bound <= 0:
            raise ValueError("latency bound must be positive")
        if self.weight <= 0:
            raise ValueError("penalty weight must be positive")
        if not 0 <= self.target_infeasible < 1:
            raise ValueError("target infeasible fraction must be in [0, 1)")


def constrained_objective(acc_pred: float, lat_pred: float, spec: ConstraintSpec) -> float:
    """Accuracy minus a weighted hinge on the latency bound."""
    return float(acc_pred) - spec.weight * max(0.0, float(lat_pred) - spec.bound)


def adapt_penalty(spec: ConstraintSpec, latencies) -> ConstraintSpec:
    """Multiplicative penalty-weight update from recent latency statistics.

    The weight grows when the batch's infeasible fraction exceeds the
    target and shrinks when it falls below, clamped to a fixed range.
    """
    latencies = np.asarray(latencies, dtype=np.float64)
    if latencies.size == 0:
        raise ValueError("need at least one latency observation")
    infeasible = float(np.mean(latencies > spec.bound))
    weight = spec.weight * np.exp(spec.adapt_rate * (infeasible - spec.target_infeasible))
    weight = float(np.clip(weight, PENALTY_WEIGHT_FLOOR, PENALTY_WEIGHT_CEIL))
    return dataclasses.replace(spec, weight=weight)


# -- synthetic landscapes -----------------------------------------------------


@dataclass
class SyntheticLandscape:
    """Deterministic rugged landscape with a planted, spiked optimum.

    Values live in [0, 100]; the planted configuration beats the runner-up
    by at least the spike margin. A low-fidelity variant is the full metric
    plus seeded noise scaled to land in the requested Spearman band
    (skipped for spaces too small for a meaningful rank correlation).
    """

    space: SpaceDescriptor
    values: np.ndarray
    lo_values: np.ndarray
    latencies: np.ndarray
    optimum_index: int
    seed: int
    spearman_lo: float

    devices = (SIM_DEVICE,)
    fidelities = (FULL_FIDELITY, LOW_FIDELITY)
    full_fidelity = FULL_FIDELITY

    def index_of(self, arch: Architecture) -> int:
        m = self.space.num_ops
        idx = 0
        for op in arch.ops:
            idx = idx * m + op
        return idx

    def arch_at(self, index: int) -> Architecture:
        m, p = self.space.num_ops, self.space.num_positions
        digits = []
        for _ in range(p):
            digits.append(index % m)
            index //= m
        return make_architecture(self.space, tuple(reversed(digits)))

    @property
    def optimum(self) -> Architecture:
        return self.arch_at(self.optimum_index)

    def query(self, arch: Architecture, fidelity: str | None = None) -> float:
        if fidelity is None or fidelity == FULL_FIDELITY:
            return float(self.values[self.index_of(arch)])
        if fidelity == LOW_FIDELITY:
            return float(self.lo_values[self.index_of(arch)])
        raise MissingFidelity(f"unknown fidelity {fidelity!r}")

    def latency(self, arch: Architecture, device: str = SIM_DEVICE) -> float:
        if device != SIM_DEVICE:
            raise UnknownDevice(f"unknown device {device!r}")
        return float(self.latencies[self.index_of(arch)])


def gen_synthetic(
    positions: int,
    num_ops: int,
    seed: int,
    interaction_scale: float = 0.3,
    spike_margin: float = 1.0,
    rho_band: tuple[float, float] = (0.75, 0.85),
    cap: int = ENUMERATION_CAP,
) -> SyntheticLandscape:
    """Construct a landscape over every ops assignment of a fixed-topology space.

    Raw scores combine per-position utilities (uniform in [0, 1]) with
    pairwise interactions (uniform in [0, interaction_scale]); they are
    normalized to [0, 99] and the planted optimum is then lifted to exceed
    the runner-up by at least ``spike_margin``.
    """
    space = chain_space(positions, num_ops)
    total = num_ops**positions
    if total > cap:
        raise EnumerationRefused(f"{total} architectures exceed the cap {cap}")
    rng = np.random.default_rng(seed)

    unary = rng.random((positions, num_ops))
    pair = rng.uniform(0.0, interaction_scale, (positions, positions, num_ops, num_ops))

    digits = np.array(
        list(itertools.product(range(num_ops), repeat=positions)), dtype=np.int64
    ).reshape(total, positions)
    raw = unary[np.arange(positions), digits].sum(axis=1)
    for p in range(positions):
        for q in range(p + 1, positions):
            raw += pair[p, q, digits[:, p], digits[:, q]]

    spread = raw.max() - raw.min()
    values = (raw - raw.min()) * (99.0 / spread) if spread > 0 else np.zeros(total)

    planted = rng.integers(0, num_ops, size=positions)
    optimum_index = int(np.ravel_multi_index(planted, (num_ops,) * positions))
    runner_up = float(np.max(np.delete(values, optimum_index))) if total > 1 else 0.0
    values[optimum_index] = max(values[optimum_index], runner_up + spike_margin)

    noise = rng.standard_normal(total)
    lo_values, rho = _calibrate_low_fidelity(values, noise, rho_band)

    latencies = rng.uniform(0.5, 8.0, total)

    return SyntheticLandscape(
        space=space,
        values=values,
        lo_values=lo_values,
        latencies=latencies,
        optimum_index=optimum_index,
        seed=seed,
        spearman_lo=rho,
    )


def _calibrate_low_fidelity(values, noise, rho_band, max_iter=80):
    total = values.size
    if total < 16:
        return values.copy(), 1.0
    lo_target, hi_target = rho_band
    sigma = float(values.std()) or 1.0

    def rho_at(scale):
        return float(spearmanr(values, values + scale * sigma * noise).statistic)

    lo_scale, hi_scale = 0.0, 1.0
    while rho_at(hi_scale) > lo_target:
        hi_scale *= 2.0
        if hi_scale > 1e6:
            raise EnumerationRefused("could not decorrelate the low-fidelity metric")
    for _ in range(max_iter):
        mid = 0.5 * (lo_scale + hi_scale)
        rho = rho_at(mid)
        if lo_target <= rho <= hi_target:
            return values + mid * sigma * noise, rho
        if rho > hi_target:
            lo_scale = mid
        else:
            hi_scale = mid
    raise EnumerationRefused("low-fidelity correlation calibration did not converge")


# -- exhaustive argmax ---------------------------------------------------------


def brute_force_optimum(
    oracle,
    space: SpaceDescriptor,
    fidelity: str | None = None,
    constraint: ConstraintSpec | None = None,
    cap: int = ENUMERATION_CAP,
) -> tuple[Architecture, float]:
    """Exhaustive argmax (ties broken by smaller key), optionally constrained."""
    best_arch = None
    best_value = -np.inf
    for arch in enumerate_space(space, cap=cap):
        if constraint is not None:
            if oracle.latency(arch, constraint.device) > constraint.bound:
                continue
        value = oracle.query(arch, fidelity)
        if value > best_value or (value == best_value and best_arch is not None
                                  and arch.key < best_arch.key):
            best_arch, best_value = arch, value
    if best_arch is None:
        raise UnknownArchitecture("no feasible architecture in the space")
    return best_arch, float(best_value)


# -- tabular benchmarks --------------------------------------------------------


def _fidelity_sort_key(name: str):
    try:
        return (0, int(name))
    except ValueError:
        return (1, name)


class TabularBenchmark:
    """Lookup oracle backed by one JSONL record per architecture.

    Records are indexed both by exact key and by canonical hash, so
    computationally equivalent free-topology architectures resolve to the
    same entry. The loader enforces the key contract (stored key must equal
    the encoding of the stored ops/adjacency) and rejects invalid
    architectures.
    """

    def __init__(self, space: SpaceDescriptor, entries: dict[str, dict]):
        self.space = space
        self.entries = entries
        self._by_canon = {}
        fidelity_sets = set()
        devices: set[str] = set()
        for key, entry in entries.items():
            self._by_canon[entry["canon"]] = entry
            fidelity_sets.add(tuple(sorted(entry["val"])))
            if entry.get("latency"):
                devices.update(entry["latency"])
        self.devices = tuple(sorted(devices))
        if len(fidelity_sets) > 1:
            raise InvalidBenchmark("records disagree on fidelity columns")
        names = fidelity_sets.pop() if fidelity_sets else ()
        self.fidelities = tuple(sorted(names, key=_fidelity_sort_key))
        if not self.fidelities:
            raise InvalidBenchmark("benchmark has no validation metrics")
        self.full_fidelity = (
            FULL_FIDELITY if FULL_FIDELITY in self.fidelities else self.fidelities[-1]
        )

    def __len__(self):
        return len(self.entries)

    def _entry(self, arch: Architecture) -> dict:
        entry = self.entries.get(arch.key)
        if entry is None:
            entry = self._by_canon.get(canonical_hash(arch, self.space))
        if entry is None:
            raise UnknownArchitecture(f"key {arch.key!r} not in the benchmark")
        return entry

    def query(self, arch: Architecture, fidelity: str | None = None) -> float:
        entry = self._entry(arch)
        name = self.full_fidelity if fidelity is None else fidelity
        if name not in entry["val"]:
            raise MissingFidelity(f"fidelity {name!r} not recorded")
        return float(entry["val"][name])

    def test_metric(self, arch: Architecture) -> float | None:
        return self._entry(arch)["test"]

    def latency(self, arch: Architecture, device: str) -> float:
        entry = self._entry(arch)
        table = entry.get("latency") or {}
        if device not in table:
            raise UnknownDevice(f"device {device!r} not recorded")
        return float(table[device])

    @classmethod
    def from_jsonl(cls, path, space: SpaceDescriptor, check_coverage: bool | None = None,
                   cap: int = ENUMERATION_CAP) -> "TabularBenchmark":
        entries: dict[str, dict] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InvalidBenchmark(f"line {line_no}: not valid JSON") from exc
                entries[_load_record(doc, space, line_no)] = _entry_from(doc, space)
        if not entries:
            raise InvalidBenchmark("benchmark file is empty")
        bench = cls(space, entries)
        if check_coverage is None:
            check_coverage = space.size_bound() <= 200_000
        if check_coverage:
            bench.check_coverage(cap=cap)
        return bench

    def check_coverage(self, cap: int = ENUMERATION_CAP) -> None:
        for arch in enumerate_space(self.space, cap=cap):
            if arch.key not in self.entries and \
                    canonical_hash(arch, self.space) not in self._by_canon:
                raise InvalidBenchmark(f"space not covered: missing {arch.key!r}")


def _load_record(doc: dict, space: SpaceDescriptor, line_no: int) -> str:
    for field in ("key", "ops", "metrics"):
        if field not in doc:
            raise InvalidBenchmark(f"line {line_no}: missing field {field!r}")
    adj_bits = doc.get("adj")
    adj = None
    if adj_bits is not None:
        n = space.num_nodes
        if len(adj_bits) != n * n or set(adj_bits) - {"0", "1"}:
            raise InvalidBenchmark(f"line {line_no}: malformed adjacency bits")
        adj = np.array([int(c) for c in adj_bits], dtype=np.uint8).reshape(n, n)
    try:
        arch = make_architecture(space, doc["ops"], adj)
    except Exception as exc:
        raise InvalidBenchmark(f"line {line_no}: {exc}") from exc
    if arch.key != doc["key"]:
        raise InvalidBenchmark(
            f"line {line_no}: key {doc['key']!r} does not match the encoding "
            f"{arch.key!r}"
        )
    if validate(arch, space):
        raise InvalidBenchmark(f"line {line_no}: architecture violates the space")
    metrics = doc["metrics"]
    if "val" not in metrics or not isinstance(metrics["val"], dict) or not metrics["val"]:
        raise InvalidBenchmark(f"line {line_no}: metrics.val must be a non-empty map")
    for value in metrics["val"].values():
        if not np.isfinite(value):
            raise InvalidBenchmark(f"line {line_no}: non-finite metric")
    return arch.key


def _entry_from(doc: dict, space: SpaceDescriptor) -> dict:
    adj_bits = doc.get("adj")
    adj = None
    if adj_bits is not None:
        n = space.num_nodes
        adj = np.array([int(c) for c in adj_bits], dtype=np.uint8).reshape(n, n)
    arch = make_architecture(space, doc["ops"], adj)
    return {
        "arch": arch,
        "canon": canonical_hash(arch, space),
        "val": {str(k): float(v) for k, v in doc["metrics"]["val"].items()},
        "test": doc["metrics"].get("test"),
        "latency": doc.get("latency"),
    }


# -- JSONL writers -------------------------------------------------------------


def benchmark_record(arch: Architecture, space: SpaceDescriptor,
                     val: dict[str, float], test: float | None = None,
                     latency: dict[str, float] | None = None) -> dict:
    from .space import TopologyMode  # local import to avoid cycle noise

    adj_bits = (
        None
        if space.topology_mode is TopologyMode.FIXED
        else "".join(str(int(v)) for v in arch.adj.ravel())
    )
    return {
        "key": arch.key,
        "ops": list(arch.ops),
        "adj": adj_bits,
        "metrics": {"val": val, "test": test},
        "latency": latency,
    }


def write_benchmark_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def landscape_records(landscape: SyntheticLandscape):
    """Benchmark records for the full enumeration of a synthetic landscape."""
    for arch in enumerate_space(landscape.space):
        idx = landscape.index_of(arch)
        yield benchmark_record(
            arch,
            landscape.space,
            val={
                FULL_FIDELITY: float(landscape.values[idx]),
                LOW_FIDELITY: float(landscape.lo_values[idx]),
            },
            test=None,
            latency={SIM_DEVICE: float(landscape.latencies[idx])},
        )
