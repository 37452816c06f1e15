"""Small shared helpers: seeded RNG derivation, binning, worker pools."""

from __future__ import annotations

import hashlib
import os
import random
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .errors import ValidationError

T = TypeVar("T")
R = TypeVar("R")

WORKERS_ENV = "RARETAIL_WORKERS"


def derive_seed(master_seed: int, *labels) -> int:
    """Derive a substream seed from a master seed and a label path.

    Stable across runs, platforms and worker counts, so every chain,
    bootstrap replica, etc. gets its own reproducible stream.
    """
    text = ":".join([str(int(master_seed))] + [str(x) for x in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derived_rng(master_seed: int, *labels) -> random.Random:
    return random.Random(derive_seed(master_seed, *labels))


def derived_np_rng(master_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *labels))


def validate_edges(edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise ValidationError("bin edges must be a 1-d array with at least 2 entries")
    if not np.all(np.diff(edges) > 0):
        raise ValidationError("bin edges must be strictly increasing")
    return edges


def bin_index(edges: np.ndarray, values) -> np.ndarray:
    """Map values to bin indices for half-open bins [a_l, a_{l+1}).

    The last bin also includes its right edge (np.histogram convention),
    so a set of edges spanning the observed range captures every sample.
    Out-of-range values map to -1.
    """
    values = np.asarray(values, dtype=float)
    idx = np.searchsorted(edges, values, side="right") - 1
    idx[values == edges[-1]] = len(edges) - 2
    idx[(values < edges[0]) | (values > edges[-1])] = -1
    return idx


def resolve_workers(requested: int | None = None) -> int:
    """Worker count bounded by the RARETAIL_WORKERS environment variable."""
    env = os.environ.get(WORKERS_ENV)
    bound = int(env) if env else (os.cpu_count() or 1)
    if bound < 1:
        raise ValidationError(f"{WORKERS_ENV} must be >= 1")
    if requested is None:
        return bound
    return max(1, min(requested, bound))


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    """Map fn over items on a bounded process pool; order of results matches items."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
