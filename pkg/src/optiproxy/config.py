"""Stock hyperparameter tables and the JSON config-file override layer.

The key names below are the external configuration vocabulary; a config
file is a flat JSON object using exactly these names, and anything not
present falls back to the stock value.
"""

from __future__ import annotations

import json

from .errors import InvalidConfig
from .regressor import ProxyRegressor
from .search import SearchConfig
from .smbo import RunConfig

MODEL_FIT_DEFAULTS = {
    "gcn_hidden": 144,
    "gcn_layers": 2,
    "linear_size": 144,
    "batch_size": 7,
    "optimizer": "adamw",
    "lr": 0.001,
    "model_epochs": 100,
    "ranking_coe": 0.2,
    "m": 0.1,
    "lr_scheduler": "exponential",
    "lr_gamma": 0.9,
    "lr_step": 10,
}

SEARCH_DEFAULTS = {
    "base_temp": 0.7,
    "min_temp": 0.2,
    "lr_alpha": 0.02,
    "lr_beta": 0.001,
    "search_epochs": 300,
    "o_epochs": 15,
    "t_epochs": 15,
    "optimizer1": "adamw",
    "optimizer2": "adamw",
    "parallel_batch": 5,
    "num_sample": 10,
    "num_sample_init": 10,
    "search_steps": 9,
    "lhs_lower": 0.9,
    "lhs_range": 0.1,
    "verify_ratio": 20,
}


def defaults() -> dict:
    table = dict(MODEL_FIT_DEFAULTS)
    table.update(SEARCH_DEFAULTS)
    return table


def load_config(path=None) -> dict:
    """Stock table overridden by a flat JSON config file, if given."""
    table = defaults()
    if path is None:
        return table
    with open(path, "r", encoding="utf-8") as fh:
        overrides = json.load(fh)
    if not isinstance(overrides, dict):
        raise InvalidConfig("config file must hold a JSON object")
    unknown = set(overrides) - set(table)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    table.update(overrides)
    return table


def regressor_from(table: dict, space=None, random_state: int = 0) -> ProxyRegressor:
    return ProxyRegressor(
        space=space,
        gcn_hidden=int(table["gcn_hidden"]),
        gcn_layers=int(table["gcn_layers"]),
        linear_size=int(table["linear_size"]),
        batch_size=int(table["batch_size"]),
        lr=float(table["lr"]),
        model_epochs=int(table["model_epochs"]),
        ranking_coe=float(table["ranking_coe"]),
        margin=float(table["m"]),
        lr_gamma=float(table["lr_gamma"]),
        lr_step=int(table["lr_step"]),
        random_state=random_state,
    )


def search_config_from(table: dict) -> SearchConfig:
    return SearchConfig(
        search_epochs=int(table["search_epochs"]),
        o_epochs=int(table["o_epochs"]),
        t_epochs=int(table["t_epochs"]),
        lr_alpha=float(table["lr_alpha"]),
        lr_beta=float(table["lr_beta"]),
        base_temp=float(table["base_temp"]),
        min_temp=float(table["min_temp"]),
        samples_per_group=int(table["verify_ratio"]),
    )


def run_config_from(table: dict, **overrides) -> RunConfig:
    cfg = dict(
        num_sample_init=int(table["num_sample_init"]),
        num_sample=int(table["num_sample"]),
        search_steps=int(table["search_steps"]),
        parallel_batch=int(table["parallel_batch"]),
        lhs_lower=float(table["lhs_lower"]),
        lhs_range=float(table["lhs_range"]),
    )
    cfg.update(overrides)
    return RunConfig(**cfg)
