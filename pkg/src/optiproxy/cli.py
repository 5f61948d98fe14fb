"""Command-line entry point.

Exit codes: 0 success, 1 verification-check failure, 2 usage/input error,
3 runtime/oracle failure.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path

import click

from . import checks, config
from .errors import OptiProxyError, OracleFailure
from .oracles import (
    ConstraintSpec,
    TabularBenchmark,
    brute_force_optimum,
    gen_synthetic,
    landscape_records,
    write_benchmark_jsonl,
)
from .smbo import finalize_low_fidelity, random_search_baseline, run
from .space import load_space, save_space, space_to_dict

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_RUNTIME = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


@click.group()
def main():
    """Gradient-guided architecture search over relaxed parameter spaces."""


@main.command("search")
@click.option("--space", "space_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bench", "bench_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--queries", type=int, default=100, show_default=True,
              help="Total oracle budget.")
@click.option("--seed", type=int, envvar="OPTIPROXY_SEED", default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON file overriding the stock hyperparameter table.")
@click.option("--baseline", type=click.Choice(["random"]), default=None,
              help="Run a comparison baseline instead of the full method.")
@click.option("--no-selection", is_flag=True, help="Pick query batches at random from the proposals.")
@click.option("--single-group", is_flag=True, help="Optimize one parameter group instead of K.")
@click.option("--no-proxy-search", is_flag=True, help="Propose random candidates (no gradient search).")
@click.option("--fidelity", default=None, help="Search on this fidelity column instead of the full one.")
@click.option("--finalize-top-n", type=int, default=None,
              help="Re-evaluate this many low-fidelity leaders at full fidelity (default: batch size).")
@click.option("--device", default=None, help="Latency device for constrained search.")
@click.option("--latency-bound", type=float, default=None, help="Latency bound in ms.")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Cap on internal numeric worker threads.")
def cmd_search(space_path, bench_path, out_path, queries, seed, config_path, baseline,
               no_selection, single_group, no_proxy_search, fidelity, finalize_top_n,
               device, latency_bound, jobs):
    """Run a search against a tabular benchmark and write history + summary."""
    if queries < 1:
        _fail(EXIT_INPUT, "--queries must be >= 1")
    if jobs and jobs > 0:
        try:
            from threadpoolctl import threadpool_limits

            threadpool_limits(limits=jobs)
        except ImportError:
            pass
    try:
        space = load_space(space_path)
        table = config.load_config(config_path)
        bench = TabularBenchmark.from_jsonl(bench_path, space)
    except (OptiProxyError, OSError, json.JSONDecodeError, ValueError) as exc:
        _fail(EXIT_INPUT, str(exc))

    out = Path(out_path)
    summary_path = _sidecar(out, ".summary.json")

    if baseline == "random":
        try:
            history = random_search_baseline(bench, space, queries, seed=seed,
                                             fidelity=fidelity)
        except OptiProxyError as exc:
            _fail(EXIT_RUNTIME, str(exc))
        history.to_jsonl(out)
        best = history.best_record()
        _write_json(summary_path, {
            "best_key": best.key if best else None,
            "best_metric": best.metric if best else None,
            "queries": len(history),
            "seed": seed,
            "config_digest": "baseline-random",
        })
        click.echo(f"baseline=random best={history.best_metric} queries={len(history)}")
        return

    constraint = None
    if device is not None or latency_bound is not None:
        if device is None or latency_bound is None:
            _fail(EXIT_INPUT, "--device and --latency-bound must be given together")
        constraint = ConstraintSpec(device=device, bound=latency_bound)

    init = int(table["num_sample_init"])
    batch = int(table["num_sample"])
    steps = max(0, math.ceil((queries - init) / batch))
    run_cfg = config.run_config_from(
        table,
        max_queries=queries,
        search_steps=steps,
        seed=seed,
        fidelity=fidelity,
        constraint=constraint,
        use_selection=not no_selection,
        multi_group=not single_group,
        use_proxy_search=not no_proxy_search,
    )
    regressor = config.regressor_from(table, space=space)
    search_cfg = config.search_config_from(table)

    try:
        result = run(bench, space, run_cfg=run_cfg, regressor=regressor,
                     search_cfg=search_cfg)
    except OracleFailure as exc:
        if exc.history is not None:
            exc.history.to_jsonl(out)
        _fail(EXIT_RUNTIME, f"oracle failure after {len(exc.history or [])} queries: {exc}")
    except OptiProxyError as exc:
        _fail(EXIT_RUNTIME, str(exc))

    result.history.to_jsonl(out)
    extra = {}
    if fidelity is not None:
        top_n = finalize_top_n if finalize_top_n is not None else batch
        try:
            final = finalize_low_fidelity(result.history, bench, top_n=top_n)
        except OptiProxyError as exc:
            _fail(EXIT_RUNTIME, str(exc))
        finalize_path = _sidecar(out, ".finalize.jsonl")
        with open(finalize_path, "w", encoding="utf-8") as fh:
            for rec in final.records:
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        extra["finalize"] = {
            "best_key": final.best_arch.key,
            "best_metric": final.best_metric,
            "queries": len(final.records),
        }
    _write_json(summary_path, result.summary(seed, extra=extra))
    click.echo(
        f"best={result.best_metric} key={result.best_arch.key if result.best_arch else None} "
        f"queries={len(result.history)} overhead_s={result.seconds_overhead:.2f} "
        f"proxy_params={result.proxy_num_params}"
    )


@main.command("synth")
@click.option("--positions", type=int, required=True)
@click.option("--ops", type=int, required=True)
@click.option("--seed", type=int, envvar="OPTIPROXY_SEED", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_synth(positions, ops, seed, out_path):
    """Generate a synthetic benchmark JSONL plus space and optimum sidecars."""
    try:
        landscape = gen_synthetic(positions, ops, seed)
    except OptiProxyError as exc:
        _fail(EXIT_INPUT, str(exc))
    out = Path(out_path)
    write_benchmark_jsonl(landscape_records(landscape), out)
    save_space(landscape.space, _sidecar(out, ".space.json"))
    optimum = landscape.optimum
    _write_json(_sidecar(out, ".optimum.json"), {
        "key": optimum.key,
        "ops": list(optimum.ops),
        "metric": float(landscape.values[landscape.optimum_index]),
        "spearman_lo": landscape.spearman_lo,
        "seed": seed,
        "space": space_to_dict(landscape.space),
    })
    click.echo(
        f"wrote {landscape.values.size} records, optimum {optimum.key} "
        f"= {landscape.values[landscape.optimum_index]:.3f}"
    )


@main.command("check")
@click.option("--quick", is_flag=True, help="Smaller sample sizes (< 10 s).")
def cmd_check(quick):
    """Run the sampling-limit and gradient verification suite."""
    results = checks.run_all(quick=quick)
    all_ok = True
    for res in results:
        status = "PASS" if res.ok else "FAIL"
        all_ok &= res.ok
        click.echo(f"{status} {res.name}: {res.detail}")
    sys.exit(EXIT_OK if all_ok else EXIT_CHECK_FAILED)


@main.command("curve")
@click.argument("histories", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_curve(histories, out_path):
    """Aggregate best-so-far columns of history files into a CSV."""
    from .smbo import History

    series = []
    for path in histories:
        try:
            rows = History.read_jsonl(path)
        except (OSError, json.JSONDecodeError) as exc:
            _fail(EXIT_INPUT, f"{path}: {exc}")
        bests = [row.get("best") for row in rows if row.get("best") is not None]
        if not bests:
            _fail(EXIT_INPUT, f"{path}: no best-so-far values")
        if any(b2 < b1 for b1, b2 in zip(bests, bests[1:])):
            _fail(EXIT_CHECK_FAILED, f"{path}: best column is not monotone (corrupt history)")
        series.append(bests)
    length = min(len(s) for s in series)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", "mean_best", "stderr"])
        for i in range(length):
            column = [s[i] for s in series]
            mean = sum(column) / len(column)
            if len(column) > 1:
                var = sum((v - mean) ** 2 for v in column) / (len(column) - 1)
                stderr = math.sqrt(var / len(column))
            else:
                stderr = 0.0
            writer.writerow([i + 1, f"{mean:.6f}", f"{stderr:.6f}"])
    click.echo(f"wrote {length} rows over {len(series)} histories")


@main.command("validate")
@click.option("--space", "space_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bench", "bench_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--coverage/--no-coverage", default=None,
              help="Force or skip the space-coverage check.")
@click.option("--optimum", is_flag=True, help="Also report the exhaustive optimum.")
def cmd_validate(space_path, bench_path, coverage, optimum):
    """Validate a benchmark JSONL against a space (key contract + schema)."""
    try:
        space = load_space(space_path)
        bench = TabularBenchmark.from_jsonl(bench_path, space, check_coverage=coverage)
    except (OptiProxyError, OSError, json.JSONDecodeError, ValueError) as exc:
        _fail(EXIT_INPUT, str(exc))
    message = f"ok: {len(bench)} records, fidelities={list(bench.fidelities)}"
    if bench.devices:
        message += f", devices={list(bench.devices)}"
    click.echo(message)
    if optimum:
        arch, value = brute_force_optimum(bench, space)
        click.echo(f"optimum {arch.key} = {value}")


if __name__ == "__main__":
    main()
