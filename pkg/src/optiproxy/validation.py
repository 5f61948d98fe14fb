"""Input validation helpers used by the public entry points."""

from __future__ import annotations

import numpy as np

from .errors import InvalidConfig, InvalidInput


def ensure_rng(seed_or_rng) -> np.random.Generator:
    """Return a numpy Generator from a seed, a Generator, or None."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def check_positive(name: str, value) -> None:
    if not value > 0:
        raise InvalidConfig(f"{name} must be positive, got {value!r}")


def check_nonnegative(name: str, value) -> None:
    if value < 0:
        raise InvalidConfig(f"{name} must be >= 0, got {value!r}")


def check_matrix(name: str, arr, shape: tuple[int, int]) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != shape:
        raise InvalidInput(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


def check_finite(name: str, arr) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return arr


def check_strict_upper(name: str, mat: np.ndarray) -> None:
    if np.any(np.tril(mat) != 0):
        raise InvalidInput(f"{name} must be strictly upper-triangular")


def check_binary(name: str, mat: np.ndarray) -> None:
    if not np.all((mat == 0) | (mat == 1)):
        raise InvalidInput(f"{name} must contain only 0/1 entries")


def check_same_length(name_a: str, a, name_b: str, b) -> None:
    if len(a) != len(b):
        raise InvalidInput(
            f"{name_a} and {name_b} must have equal length "
            f"({len(a)} vs {len(b)})"
        )
