"""Density-proportional query workloads.

The region is cut into coarse blocks; each query picks a block with
probability proportional to the number of data points in it and a center
uniformly inside that block.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..core import KnnQuery, ObjectQuery, QueryBody, RangeCountQuery, Rect


@dataclass(frozen=True)
class QueryMix:
    """Type ratios and parameters.

    ``area_ratios`` are fractions of the full region's area; a range query
    is a rectangle with the region's aspect ratio and that area.
    """

    range_fraction: float = 0.5
    knn_fraction: float = 0.5
    object_fraction: float = 0.0
    area_ratios: tuple[float, ...] = (0.0016,)
    k_values: tuple[int, ...] = (10,)
    n_object_ids: int = 1

    def __post_init__(self):
        fr = (self.range_fraction, self.knn_fraction, self.object_fraction)
        if min(fr) < 0 or sum(fr) <= 0:
            raise ValueError("type fractions must be non-negative and not all zero")
        if any(not 0 < a <= 1 for a in self.area_ratios) or any(k < 1 for k in self.k_values):
            raise ValueError("area ratios must lie in (0, 1] and k >= 1")


def block_counts(points: np.ndarray, bounds: Rect, blocks: int = 32) -> np.ndarray:
    """Point counts per block, shape (blocks, blocks) indexed [col, row]."""
    x0, y0, x1, y1 = bounds
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    h, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=blocks, range=[[x0, x1], [y0, y1]])
    return h


def query_centers(points, bounds: Rect, n: int, rng: np.random.Generator,
                  blocks: int = 32) -> np.ndarray:
    x0, y0, x1, y1 = bounds
    h = block_counts(points, bounds, blocks)
    total = h.sum()
    p = (h / total).ravel() if total > 0 else np.full(h.size, 1.0 / h.size)
    idx = rng.choice(h.size, size=n, p=p)
    col, row = np.divmod(idx, blocks)
    bw, bh = (x1 - x0) / blocks, (y1 - y0) / blocks
    cx = x0 + (col + rng.uniform(0, 1, n)) * bw
    cy = y0 + (row + rng.uniform(0, 1, n)) * bh
    return np.column_stack([np.minimum(cx, x1), np.minimum(cy, y1)])


def generate_queries(points, bounds: Rect, mix: QueryMix, n: int, seed: int = 0,
                     blocks: int = 32) -> list[QueryBody]:
    rng = np.random.default_rng(seed)
    centers = query_centers(points, bounds, n, rng, blocks)
    fr = np.array([mix.range_fraction, mix.knn_fraction, mix.object_fraction])
    kinds = rng.choice(3, size=n, p=fr / fr.sum())
    areas = rng.choice(np.asarray(mix.area_ratios), size=n)
    ks = rng.choice(np.asarray(mix.k_values), size=n)
    oids = rng.integers(0, max(1, mix.n_object_ids), size=n)
    w, h = bounds[2] - bounds[0], bounds[3] - bounds[1]
    out: list[QueryBody] = []
    for i in range(n):
        cx, cy = float(centers[i, 0]), float(centers[i, 1])
        if kinds[i] == 0:
            s = float(np.sqrt(areas[i]))
            hw, hh = s * w / 2, s * h / 2
            out.append(RangeCountQuery((cx - hw, cy - hh, cx + hw, cy + hh)))
        elif kinds[i] == 1:
            out.append(KnnQuery((cx, cy), int(ks[i])))
        else:
            out.append(ObjectQuery(int(oids[i])))
    return out


def write_queries(path, queries):
    """One query per line: ``range,x0,y0,x1,y1`` / ``knn,x,y,k`` / ``object,id``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for q in queries:
            if isinstance(q, RangeCountQuery):
                w.writerow(("range", *map(repr, q.rect)))
            elif isinstance(q, KnnQuery):
                w.writerow(("knn", repr(q.q[0]), repr(q.q[1]), q.k))
            elif isinstance(q, ObjectQuery):
                w.writerow(("object", q.object_id))
            else:
                raise TypeError(f"cannot serialize {q!r}")


def read_queries(path) -> list[QueryBody]:
    out: list[QueryBody] = []
    with open(path, newline="") as fh:
        for n, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            kind = row[0].strip().lower()
            try:
                if kind == "range":
                    out.append(RangeCountQuery(tuple(float(v) for v in row[1:5])))
                elif kind == "knn":
                    out.append(KnnQuery((float(row[1]), float(row[2])), int(row[3])))
                elif kind == "object":
                    out.append(ObjectQuery(int(row[1])))
                else:
                    raise ValueError(f"unknown query type {kind!r}")
            except (ValueError, IndexError) as e:
                raise ValueError(f"{path}:{n}: {e}") from None
    return out
