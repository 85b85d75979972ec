"""Holdout schemes: random k-fold, contiguous blocks and nearest-neighbour discs."""

import logging
from collections import defaultdict

import numpy as np

from partkrige.errors import DataError
from partkrige.models import HoldoutScheme
from partkrige.rng import stream

logger = logging.getLogger(__name__)


def make_kfold(n: int, k: int, seed: int = 0) -> HoldoutScheme:
    """Random permutation cut into k folds whose sizes differ by at most one."""
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    perm = stream(seed, "kfold").permutation(n)
    folds = tuple(tuple(sorted(int(i) for i in part)) for part in np.array_split(perm, k))
    return HoldoutScheme(kind="kfold", folds=folds)


def make_block_holdouts(coords: np.ndarray, dlon: float, dlat: float, min_size: int = 1) -> HoldoutScheme:
    """Tile the bounding box with dlon x dlat cells from its lower-left corner.

    Cells are half-open, so every point lands in exactly one. Cells with fewer
    than ``min_size`` points are dropped.
    """
    if dlon <= 0 or dlat <= 0:
        raise ValueError("Block dimensions must be positive")
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    origin = coords.min(axis=0)
    ix = np.floor((coords[:, 0] - origin[0]) / dlon).astype(int)
    iy = np.floor((coords[:, 1] - origin[1]) / dlat).astype(int)

    cells: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i, key in enumerate(zip(iy.tolist(), ix.tolist())):
        cells[key].append(i)
    kept = [tuple(cells[key]) for key in sorted(cells) if len(cells[key]) >= min_size]
    if not kept:
        largest = max(len(v) for v in cells.values())
        raise DataError(f"No {dlon}x{dlat} block holds {min_size} points (largest holds {largest})")
    logger.info("Kept %d of %d blocks (sizes %d-%d)", len(kept), len(cells), min(map(len, kept)), max(map(len, kept)))
    return HoldoutScheme(kind="block", folds=tuple(kept))


def nearest_neighbors(coords: np.ndarray, center: int, m: int) -> np.ndarray:
    """The center plus its m nearest points, ties broken by index."""
    d2 = np.sum((coords - coords[center]) ** 2, axis=1)
    order = np.lexsort((np.arange(coords.shape[0]), d2))
    return order[: m + 1]


def make_circular_holdouts(coords: np.ndarray, m_neighbors: int, n_sets: int, seed: int = 0) -> HoldoutScheme:
    """Random distinct centers, each with its m nearest neighbours.

    Sets may overlap; only the centers are distinct.
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    n = coords.shape[0]
    if m_neighbors + 1 > n:
        raise ValueError(f"{m_neighbors} neighbours plus the center exceed {n} points")
    if n_sets > n:
        raise ValueError(f"Cannot draw {n_sets} distinct centers from {n} points")
    centers = stream(seed, "circular").choice(n, size=n_sets, replace=False)
    folds = tuple(tuple(sorted(int(i) for i in nearest_neighbors(coords, int(c), m_neighbors))) for c in centers)
    return HoldoutScheme(kind="circular", folds=folds)
