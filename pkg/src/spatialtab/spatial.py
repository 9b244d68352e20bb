"""Bucketed spatial embedding tables for bounding-box features.

Six lookup tables (x_min, y_min, x_max, y_max, width, height), one row per
coordinate bucket 0..1000, concatenated into a single d-dimensional vector
that is added to the token text embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_BUCKETS = 1001
FEATURES = ("x_min", "y_min", "x_max", "y_max", "width", "height")
INIT_STD = 0.02


def bbox_buckets(bbox) -> tuple[int, int, int, int, int, int]:
    """Bucket indices in the fixed concatenation order."""
    return (bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max, bbox.width, bbox.height)


@dataclass
class SpatialTables:
    """Stack of the six feature tables, shape (6, 1001, d/6)."""

    tables: np.ndarray
    init_scheme: str

    @property
    def d(self) -> int:
        return 6 * self.tables.shape[2]

    @property
    def part_dim(self) -> int:
        return self.tables.shape[2]


def init_spatial(d: int, scheme: str = "random_normal", seed: int = 0) -> SpatialTables:
    """Create the six tables; `scheme` is random_normal or sinusoidal."""
    if d % 6 != 0:
        raise ValueError(f"model dimension {d} not divisible by 6")
    m = d // 6
    if scheme == "random_normal":
        rng = np.random.default_rng(seed)
        tables = rng.normal(0.0, INIT_STD, size=(6, N_BUCKETS, m)).astype(np.float32)
    elif scheme == "sinusoidal":
        pos = np.arange(N_BUCKETS, dtype=np.float64)[:, None]
        chan = np.arange(m, dtype=np.float64)[None, :]
        angle = pos / np.power(10000.0, 2.0 * np.floor(chan / 2.0) / m)
        table = np.where(chan % 2 == 0, np.sin(angle), np.cos(angle)).astype(np.float32)
        tables = np.repeat(table[None, :, :], 6, axis=0)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return SpatialTables(tables=tables, init_scheme=scheme)


def spatial_embed(bbox, tables: SpatialTables) -> np.ndarray:
    """Concatenated lookup for one box, length d."""
    buckets = bbox_buckets(bbox)
    return np.concatenate([tables.tables[f, b] for f, b in enumerate(buckets)])


def spatial_embed_batch(buckets: np.ndarray, tables: np.ndarray) -> np.ndarray:
    """Vectorized lookup.

    buckets: integer array (..., 6); tables: (6, 1001, m).
    Returns (..., 6*m) with parts in the fixed feature order.
    """
    parts = [tables[f][buckets[..., f]] for f in range(6)]
    return np.concatenate(parts, axis=-1)


def spatial_embed_grad(upstream: np.ndarray, bbox, tables: SpatialTables) -> np.ndarray:
    """Gradient of one lookup: each d/6 slice of upstream lands on its row.

    Returns a dense zeros-like array of the tables with at most six nonzero
    rows (fewer when buckets coincide, where slices accumulate).
    """
    m = tables.part_dim
    if upstream.shape != (6 * m,):
        raise ValueError(f"upstream must have length {6 * m}")
    grad = np.zeros_like(tables.tables)
    for f, b in enumerate(bbox_buckets(bbox)):
        grad[f, b] += upstream[f * m : (f + 1) * m]
    return grad


def scatter_spatial_grad(grad_tables: np.ndarray, buckets: np.ndarray, upstream: np.ndarray) -> None:
    """Accumulate batched upstream slices into grad_tables in place.

    buckets: (n, 6) int; upstream: (n, 6*m); grad_tables: (6, 1001, m).
    """
    m = grad_tables.shape[2]
    for f in range(6):
        np.add.at(grad_tables[f], buckets[:, f], upstream[:, f * m : (f + 1) * m])
