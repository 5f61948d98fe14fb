"""Sequential model-based outer loop driving the whole search.

One step = fit the proxy on everything evaluated so far, gradient-search
K freshly initialized parameter groups against the frozen proxy, propose
discrete candidates, select the most promising unseen batch, query the
oracle, extend the dataset. The loop never re-queries a canonical
architecture and stops exactly at the query budget.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, clone

from .errors import InvalidConfig, OracleFailure, SpaceExhausted
from .oracles import ConstraintSpec, adapt_penalty, constrained_objective
from .regressor import ProxyRegressor
from .relaxation import GumbelNoise, init_params_lhs, sample_discrete, uniform_params
from .search import SearchConfig, optimize_groups, propose_candidates, proxy_ascent_target
from .space import (
    Architecture,
    SpaceDescriptor,
    canonical_hash,
    enumerate_space,
    space_to_dict,
)
from .validation import ensure_rng

HISTORY_FIELDS = ("step", "i", "key", "pred", "metric", "fidelity", "best")


@dataclass
class RunConfig:
    max_queries: int = 100
    num_sample_init: int = 10
    num_sample: int = 10  # architectures evaluated per step
    search_steps: int = 9
    parallel_batch: int = 5  # parameter groups optimized per step
    use_selection: bool = True
    multi_group: bool = True
    use_proxy_search: bool = True
    seed: int = 0
    fidelity: str | None = None
    constraint: ConstraintSpec | None = None
    warm_start: bool = False
    lhs_lower: float = 0.9
    lhs_range: float = 0.1

    def __post_init__(self):
        if self.max_queries < 1:
            raise InvalidConfig("max_queries must be >= 1")
        if self.num_sample_init < 1 or self.num_sample < 1:
            raise InvalidConfig("sample counts must be >= 1")
        if self.parallel_batch < 1:
            raise InvalidConfig("parallel_batch must be >= 1")
        if self.search_steps < 0:
            raise InvalidConfig("search_steps must be >= 0")


@dataclass
class HistoryRecord:
    step: int
    i: int
    key: str
    pred: float | None
    metric: float
    fidelity: str
    best: float | None
    latency: float | None = None
    arch: Architecture | None = field(default=None, repr=False, compare=False)

    def to_json_dict(self) -> dict:
        doc = {
            "step": self.step,
            "i": self.i,
            "key": self.key,
            "pred": self.pred,
            "metric": self.metric,
            "fidelity": self.fidelity,
            "best": self.best,
        }
        if self.latency is not None:
            doc["latency"] = self.latency
        return doc


class History:
    """Ordered evaluation log with dedup identities and best-so-far tracking."""

    def __init__(self):
        self.records: list[HistoryRecord] = []
        self.seen_ids: set[str] = set()
        self._best: float | None = None

    def __len__(self):
        return len(self.records)

    @property
    def best_metric(self) -> float | None:
        return self._best

    def best_record(self) -> HistoryRecord | None:
        best = None
        for rec in self.records:
            if rec.best is None or rec.metric != rec.best:
                continue
            if best is None or rec.metric > best.metric:
                best = rec
        return best

    def add(
        self,
        step: int,
        arch: Architecture,
        canon: str,
        metric: float,
        fidelity: str,
        pred: float | None = None,
        latency: float | None = None,
        feasible: bool = True,
    ) -> HistoryRecord:
        if canon in self.seen_ids:
            raise InvalidConfig(f"architecture {arch.key!r} already queried")
        self.seen_ids.add(canon)
        if feasible and (self._best is None or metric > self._best):
            self._best = metric
        rec = HistoryRecord(
            step=step,
            i=len(self.records),
            key=arch.key,
            pred=None if pred is None else float(pred),
            metric=float(metric),
            fidelity=fidelity,
            best=self._best,
            latency=None if latency is None else float(latency),
            arch=arch,
        )
        self.records.append(rec)
        return rec

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_json_dict(), separators=(",", ":")) + "\n")

    @staticmethod
    def read_jsonl(path) -> list[dict]:
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        return rows


@dataclass
class RunResult:
    history: History
    best_arch: Architecture | None
    best_metric: float | None
    seconds_total: float
    seconds_oracle: float
    proxy_num_params: int | None
    config_digest: str

    @property
    def seconds_overhead(self) -> float:
        return self.seconds_total - self.seconds_oracle

    def summary(self, seed: int, extra: dict | None = None) -> dict:
        doc = {
            "best_key": None if self.best_arch is None else self.best_arch.key,
            "best_metric": self.best_metric,
            "queries": len(self.history),
            "seed": seed,
            "config_digest": self.config_digest,
        }
        if extra:
            doc.update(extra)
        return doc


def config_digest(run_cfg: RunConfig, regressor, search_cfg: SearchConfig) -> str:
    payload = {
        "run": dataclasses.asdict(run_cfg),
        "search": dataclasses.asdict(search_cfg),
        "regressor": {
            k: v for k, v in sorted(regressor.get_params().items()) if k != "space"
        },
        "space": None if regressor.space is None else space_to_dict(regressor.space),
    }
    blob = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- random draws -------------------------------------------------------------


def random_unseen(
    space: SpaceDescriptor,
    seen_ids: set[str],
    count: int,
    rng,
    max_attempts: int | None = None,
) -> list[Architecture]:
    """Uniformly draw valid architectures whose canonical id is unseen.

    Falls back to enumerating the remaining space when rejection sampling
    stalls; raises SpaceExhausted when nothing is left.
    """
    rng = ensure_rng(rng)
    uniform = uniform_params(space)
    taken = set(seen_ids)
    out: list[Architecture] = []
    attempts = 0
    budget = max_attempts if max_attempts is not None else 200 + 500 * count
    while len(out) < count and attempts < budget:
        attempts += 1
        arch = sample_discrete(uniform, space, rng)
        canon = canonical_hash(arch, space)
        if canon in taken:
            continue
        taken.add(canon)
        out.append(arch)
    if len(out) < count:
        if space.size_bound() > 200_000:
            raise SpaceExhausted(
                "rejection sampling stalled and the space is too large to enumerate"
            )
        remaining = [
            a for a in enumerate_space(space)
            if canonical_hash(a, space) not in taken
        ]
        remaining.sort(key=lambda a: a.key)
        need = count - len(out)
        if len(remaining) < need:
            raise SpaceExhausted("no unseen architectures left")
        picks = rng.choice(len(remaining), size=need, replace=False)
        out.extend(remaining[int(p)] for p in sorted(picks))
    return out


# -- selection -----------------------------------------------------------------


def select_top_b(
    candidates: list[Architecture],
    model,
    history: History,
    b: int,
    *,
    space: SpaceDescriptor,
    rng,
    use_selection: bool = True,
    constraint: ConstraintSpec | None = None,
) -> list[tuple[Architecture, float | None]]:
    """Pick B unseen architectures from the proposal batch.

    With selection on, candidates are ranked by the model's predicted
    metric (or by the constrained aggregate when a latency constraint is
    active), ties broken by key. With selection off, B unseen candidates
    are drawn uniformly. Too-small proposal batches are topped up with
    random unseen architectures.
    """
    rng = ensure_rng(rng)
    fresh: list[Architecture] = []
    ids = set()
    for arch in candidates:
        canon = canonical_hash(arch, space)
        if canon in history.seen_ids or canon in ids:
            continue
        ids.add(canon)
        fresh.append(arch)

    chosen: list[tuple[Architecture, float | None]] = []
    if fresh:
        if use_selection:
            if constraint is not None:
                heads = model.predict_heads(fresh)
                scores = np.array([
                    constrained_objective(a, l, constraint)
                    for a, l in zip(heads["accuracy"], heads["latency"])
                ])
            else:
                scores = np.asarray(model.predict(fresh), dtype=np.float64)
            order = sorted(
                range(len(fresh)), key=lambda j: (-scores[j], fresh[j].key)
            )
            chosen = [(fresh[j], float(scores[j])) for j in order[:b]]
        else:
            picks = rng.permutation(len(fresh))[:b]
            chosen = [(fresh[int(j)], None) for j in picks]

    if len(chosen) < b:
        exclude = set(history.seen_ids)
        exclude.update(canonical_hash(a, space) for a, _ in chosen)
        fill = random_unseen(space, exclude, b - len(chosen), rng)
        chosen.extend((arch, None) for arch in fill)
    return chosen


# -- the outer loop ------------------------------------------------------------


def _hw_objective(spec: ConstraintSpec):
    def objective(outs: dict[str, np.ndarray]):
        acc = np.asarray(outs["accuracy"], dtype=np.float64)
        lat = np.asarray(outs["latency"], dtype=np.float64)
        over = lat > spec.bound
        values = acc - spec.weight * np.where(over, lat - spec.bound, 0.0)
        d_lat = np.where(over, -spec.weight, 0.0)
        return values, {"accuracy": np.ones_like(acc), "latency": d_lat}

    return objective


def run(
    oracle,
    space: SpaceDescriptor,
    run_cfg: RunConfig | None = None,
    regressor: ProxyRegressor | None = None,
    search_cfg: SearchConfig | None = None,
) -> RunResult:
    """Execute the full search loop; returns the history and the best point."""
    run_cfg = run_cfg or RunConfig()
    search_cfg = search_cfg or SearchConfig()
    hw = run_cfg.constraint is not None
    if regressor is None:
        regressor = ProxyRegressor(space=space)
    regressor = clone(regressor)
    regressor.set_params(
        space=space,
        heads=("accuracy", "latency") if hw else ("accuracy",),
    )
    digest = config_digest(run_cfg, regressor, search_cfg)

    began = time.perf_counter()
    oracle_seconds = 0.0
    history = History()
    spec = run_cfg.constraint
    fidelity_name = run_cfg.fidelity or getattr(oracle, "full_fidelity", "full")

    def timed_query(arch):
        nonlocal oracle_seconds
        t = time.perf_counter()
        try:
            metric = oracle.query(arch, run_cfg.fidelity)
            latency = oracle.latency(arch, spec.device) if hw else None
        except Exception as exc:
            oracle_seconds += time.perf_counter() - t
            raise OracleFailure(str(exc), history=history) from exc
        oracle_seconds += time.perf_counter() - t
        return metric, latency

    def finish(last_model_params):
        best_rec, best_arch = None, None
        for rec in history.records:
            if hw and (rec.latency is None or rec.latency > spec.bound):
                continue
            if best_rec is None or rec.metric > best_rec.metric or (
                rec.metric == best_rec.metric and rec.key < best_rec.key
            ):
                best_rec = rec
        if best_rec is not None:
            best_arch = best_rec.arch
        return RunResult(
            history=history,
            best_arch=best_arch,
            best_metric=None if best_rec is None else best_rec.metric,
            seconds_total=time.perf_counter() - began,
            seconds_oracle=oracle_seconds,
            proxy_num_params=last_model_params,
            config_digest=digest,
        )

    seed_root = np.random.SeedSequence(run_cfg.seed)
    init_seed, *step_seeds = seed_root.spawn(1 + run_cfg.search_steps)
    init_rng = np.random.default_rng(init_seed)

    init_count = min(run_cfg.num_sample_init, run_cfg.max_queries)
    for arch in random_unseen(space, set(), init_count, init_rng):
        metric, latency = timed_query(arch)
        feasible = not hw or latency <= spec.bound
        history.add(
            step=0,
            arch=arch,
            canon=canonical_hash(arch, space),
            metric=metric,
            fidelity=fidelity_name,
            latency=latency,
            feasible=feasible,
        )

    k = run_cfg.parallel_batch if run_cfg.multi_group else 1
    last_model_params = None
    prev_model = None
    step = 0
    while step < run_cfg.search_steps and len(history) < run_cfg.max_queries:
        step += 1
        batch_size = min(run_cfg.num_sample, run_cfg.max_queries - len(history))
        sub = step_seeds[step - 1].spawn(5)
        fit_seed = int(sub[0].generate_state(1)[0])
        lhs_rng = np.random.default_rng(sub[1])
        noise_seeds = sub[2].spawn(k)
        proposal_seeds = sub[3].spawn(k)
        select_rng = np.random.default_rng(sub[4])

        reg = clone(regressor)
        reg.set_params(random_state=fit_seed)
        archs = [rec.arch for rec in history.records]
        if hw:
            targets = {
                "accuracy": np.array([rec.metric for rec in history.records]),
                "latency": np.array([rec.latency for rec in history.records]),
            }
        else:
            targets = np.array([rec.metric for rec in history.records])
        reg.fit(archs, targets, init_model=prev_model if run_cfg.warm_start else None)
        if run_cfg.warm_start:
            prev_model = reg.model_
        last_model_params = reg.num_params()

        q = search_cfg.samples_per_group * k
        if run_cfg.use_proxy_search:
            objective = _hw_objective(spec) if hw else None
            target = proxy_ascent_target(reg, space, objective)
            groups = init_params_lhs(
                k, space, run_cfg.lhs_lower, run_cfg.lhs_range, lhs_rng
            )
            noises = [GumbelNoise(np.random.default_rng(s)) for s in noise_seeds]
            optimized = optimize_groups(groups, target, space, search_cfg, noises)
            proposal_rngs = [np.random.default_rng(s) for s in proposal_seeds]
            candidates = propose_candidates(optimized, space, q, proposal_rngs)
        else:
            candidates = []
            cand_rng = np.random.default_rng(proposal_seeds[0])
            seen_batch: set[str] = set()
            uniform = uniform_params(space)
            for _ in range(q):
                arch = sample_discrete(uniform, space, cand_rng)
                canon = canonical_hash(arch, space)
                if canon not in seen_batch:
                    seen_batch.add(canon)
                    candidates.append(arch)

        batch = select_top_b(
            candidates,
            reg,
            history,
            batch_size,
            space=space,
            rng=select_rng,
            use_selection=run_cfg.use_selection,
            constraint=spec,
        )
        latencies = []
        for arch, pred in batch:
            metric, latency = timed_query(arch)
            if latency is not None:
                latencies.append(latency)
            feasible = not hw or latency <= spec.bound
            history.add(
                step=step,
                arch=arch,
                canon=canonical_hash(arch, space),
                metric=metric,
                fidelity=fidelity_name,
                pred=pred,
                latency=latency,
                feasible=feasible,
            )
        if hw and latencies:
            spec = adapt_penalty(spec, latencies)

    return finish(last_model_params)


# -- baselines and refinement ---------------------------------------------------


def random_search_baseline(
    oracle,
    space: SpaceDescriptor,
    max_queries: int,
    seed: int = 0,
    fidelity: str | None = None,
) -> History:
    """Uniform random search under the identical budget and dedup contract."""
    if max_queries < 1:
        raise InvalidConfig("max_queries must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    history = History()
    fidelity_name = fidelity or getattr(oracle, "full_fidelity", "full")
    for i in range(max_queries):
        arch = random_unseen(space, history.seen_ids, 1, rng)[0]
        metric = oracle.query(arch, fidelity)
        history.add(
            step=i,
            arch=arch,
            canon=canonical_hash(arch, space),
            metric=metric,
            fidelity=fidelity_name,
        )
    return history


@dataclass
class FinalizeResult:
    best_arch: Architecture
    best_metric: float
    records: list[dict]


def finalize_low_fidelity(
    history: History,
    oracle,
    top_n: int = 10,
    full_fidelity: str | None = None,
) -> FinalizeResult:
    """Re-evaluate the low-fidelity top-n at full fidelity; return the argmax.

    The extra queries are returned for separate logging and are not added
    to the search history.
    """
    if not history.records:
        raise InvalidConfig("history is empty")
    fidelity = full_fidelity or getattr(oracle, "full_fidelity", "full")
    ranked = sorted(history.records, key=lambda rec: (-rec.metric, rec.key))
    best_arch, best_metric = None, -np.inf
    records = []
    for rec in ranked[:top_n]:
        value = oracle.query(rec.arch, fidelity)
        records.append({"key": rec.key, "metric": float(value), "fidelity": fidelity})
        if value > best_metric or (value == best_metric and best_arch is not None
                                   and rec.key < best_arch.key):
            best_arch, best_metric = rec.arch, float(value)
    return FinalizeResult(best_arch=best_arch, best_metric=best_metric, records=records)


# -- estimator facade ------------------------------------------------------------


class OptiProxySearch(BaseEstimator):
    """sklearn-style facade: configure in the constructor, ``fit`` an oracle.

    After ``fit``, the search outcome is available as ``best_architecture_``,
    ``best_score_``, ``history_`` and ``result_``.
    """

    def __init__(
        self,
        space: SpaceDescriptor | None = None,
        run_config: RunConfig | None = None,
        search_config: SearchConfig | None = None,
        regressor: ProxyRegressor | None = None,
    ):
        self.space = space
        self.run_config = run_config
        self.search_config = search_config
        self.regressor = regressor

    def fit(self, oracle, y=None):
        if self.space is None:
            raise InvalidConfig("OptiProxySearch needs a space descriptor")
        result = run(
            oracle,
            self.space,
            run_cfg=self.run_config,
            regressor=self.regressor,
            search_cfg=self.search_config,
        )
        self.result_ = result
        self.history_ = result.history
        self.best_architecture_ = result.best_arch
        self.best_score_ = result.best_metric
        return self
