"""Domain types and pure grid arithmetic shared by every module."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

Point = tuple[float, float]
Rect = tuple[float, float, float, float]

MAX_CELL_ID = 2**64 - 1


class GridStreamError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GridStreamError):
    """Raised for an invalid deployment or grid configuration."""


class OutOfBoundsError(GridStreamError, ValueError):
    """Raised when a point lies outside the configured region."""


@dataclass(frozen=True)
class ObjectUpdate:
    object_id: int
    timestamp: int
    lon: float
    lat: float


@dataclass(frozen=True)
class GridConfig:
    """Equal-cell partition of a rectangular region.

    Cells are half-open ``[lo, hi)`` on both axes, except that points on
    the region's max edges clamp into the last row/column.
    """

    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float
    cell_width: float
    cell_height: float
    n_cols: int = field(init=False)
    n_rows: int = field(init=False)

    def __post_init__(self):
        if not (self.max_lon > self.min_lon and self.max_lat > self.min_lat):
            raise ConfigurationError("region bounds must satisfy max > min")
        if not (self.cell_width > 0 and self.cell_height > 0):
            raise ConfigurationError("cell dimensions must be positive")
        n_cols = math.ceil((self.max_lon - self.min_lon) / self.cell_width)
        n_rows = math.ceil((self.max_lat - self.min_lat) / self.cell_height)
        if n_cols * n_rows > MAX_CELL_ID:
            raise ConfigurationError("cell count does not fit a 64-bit id")
        object.__setattr__(self, "n_cols", n_cols)
        object.__setattr__(self, "n_rows", n_rows)

    @classmethod
    def square(cls, n: int, size: float = 1.0) -> "GridConfig":
        """An ``n`` x ``n`` grid over ``[0, size)^2``."""
        return cls(0.0, 0.0, size, size, size / n, size / n)

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    @property
    def bounds(self) -> Rect:
        return (self.min_lon, self.min_lat, self.max_lon, self.max_lat)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.max_lon - self.min_lon, self.max_lat - self.min_lat)

    def contains(self, p: Point) -> bool:
        return (self.min_lon <= p[0] <= self.max_lon
                and self.min_lat <= p[1] <= self.max_lat)

    def col_row(self, cell: int) -> tuple[int, int]:
        return cell % self.n_cols, cell // self.n_cols

    def cell_id(self, col: int, row: int) -> int:
        return row * self.n_cols + col

    def cell_rect(self, cell: int) -> Rect:
        """Geometric extent of a cell (the last column/row may overhang the region)."""
        col, row = self.col_row(cell)
        return (self.min_lon + col * self.cell_width,
                self.min_lat + row * self.cell_height,
                self.min_lon + (col + 1) * self.cell_width,
                self.min_lat + (row + 1) * self.cell_height)

    def cell_extent(self, cell: int) -> Rect:
        """Cell rectangle clipped to the region."""
        r = self.cell_rect(cell)
        return (r[0], r[1], min(r[2], self.max_lon), min(r[3], self.max_lat))

    def _col(self, lon: float) -> int:
        return _axis_index(lon, self.min_lon, self.cell_width, self.n_cols)

    def _row(self, lat: float) -> int:
        return _axis_index(lat, self.min_lat, self.cell_height, self.n_rows)


def _axis_index(v: float, origin: float, size: float, n: int) -> int:
    # floor division, then nudged so that origin + i*size <= v < origin + (i+1)*size
    # holds with the same float expressions cell_rect uses
    i = min(max(int(math.floor((v - origin) / size)), 0), n - 1)
    if i > 0 and v < origin + i * size:
        i -= 1
    elif i < n - 1 and v >= origin + (i + 1) * size:
        i += 1
    return i


@dataclass(frozen=True)
class Movement:
    object_id: int
    old_cell: Optional[int]
    new_cell: int
    new_point: Point
    timestamp: int


@dataclass(frozen=True)
class ObjectQuery:
    object_id: int


@dataclass(frozen=True)
class RangeCountQuery:
    rect: Rect


@dataclass(frozen=True)
class KnnQuery:
    q: Point
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class ContinuousRegistration:
    inner: Union[RangeCountQuery, KnnQuery]
    refresh_interval_ms: int

    def __post_init__(self):
        if self.refresh_interval_ms <= 0:
            raise ValueError("refresh_interval_ms must be positive")


QueryBody = Union[ObjectQuery, RangeCountQuery, KnnQuery, ContinuousRegistration]


@dataclass(frozen=True)
class Query:
    query_id: int
    body: QueryBody


@dataclass(frozen=True)
class Location:
    point: Point
    timestamp: int


@dataclass(frozen=True)
class Count:
    value: int


@dataclass(frozen=True)
class Neighbor:
    object_id: int
    lon: float
    lat: float
    distance: float


@dataclass(frozen=True)
class Neighbors:
    items: tuple[Neighbor, ...]

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(n.object_id for n in self.items)


@dataclass(frozen=True)
class NotFound:
    pass


ResultPayload = Union[Location, Count, Neighbors, NotFound]


@dataclass(frozen=True)
class QueryResult:
    query_id: int
    payload: ResultPayload
    refresh: int = 0


def query_type(body: QueryBody) -> str:
    if isinstance(body, ObjectQuery):
        return "object"
    if isinstance(body, RangeCountQuery):
        return "range"
    if isinstance(body, KnnQuery):
        return "knn"
    if isinstance(body, ContinuousRegistration):
        return "continuous-" + query_type(body.inner)
    raise TypeError(f"unknown query body {body!r}")


def distance(a: Point, b: Point) -> float:
    """Planar Euclidean distance."""
    return math.hypot(a[0] - b[0], a[1] - b[1])


def knn_order(item: Neighbor) -> tuple[float, int]:
    """Sort key for kNN results: distance, then smaller object id."""
    return (item.distance, item.object_id)


def cell_of(p: Point, g: GridConfig) -> int:
    if not g.contains(p):
        raise OutOfBoundsError(f"point {p} outside region {g.bounds}")
    return g._row(p[1]) * g.n_cols + g._col(p[0])


def clamp_rect(rect: Rect, g: GridConfig) -> Optional[Rect]:
    """Intersect ``rect`` with the region; None when nothing is left."""
    x0 = max(rect[0], g.min_lon)
    y0 = max(rect[1], g.min_lat)
    x1 = min(rect[2], g.max_lon)
    y1 = min(rect[3], g.max_lat)
    if x0 > x1 or y0 > y1:
        return None
    return (x0, y0, x1, y1)


def point_in_rect(p: Point, rect: Rect) -> bool:
    return rect[0] <= p[0] <= rect[2] and rect[1] <= p[1] <= rect[3]


def cells_intersecting_rect(rect: Rect, g: GridConfig) -> list[int]:
    """Cells whose closed extent overlaps the (clamped) closed rectangle.

    A rectangle edge lying exactly on a cell boundary touches both cells.
    Returned in ascending cell id order.
    """
    r = clamp_rect(rect, g)
    if r is None:
        return []
    c0 = _first_touching(r[0], g.min_lon, g.cell_width, g.n_cols)
    c1 = _axis_index(r[2], g.min_lon, g.cell_width, g.n_cols)
    r0 = _first_touching(r[1], g.min_lat, g.cell_height, g.n_rows)
    r1 = _axis_index(r[3], g.min_lat, g.cell_height, g.n_rows)
    return [row * g.n_cols + col
            for row in range(r0, r1 + 1)
            for col in range(c0, c1 + 1)]


def _first_touching(lo: float, origin: float, size: float, n: int) -> int:
    # lowest index whose closed interval [i*size, (i+1)*size] contains lo
    i = _axis_index(lo, origin, size, n)
    if i > 0 and origin + i * size == lo:
        i -= 1
    return i


def min_dist_to_rect(p: Point, rect: Rect) -> float:
    dx = max(rect[0] - p[0], 0.0, p[0] - rect[2])
    dy = max(rect[1] - p[1], 0.0, p[1] - rect[3])
    return math.hypot(dx, dy)


def max_dist_to_rect(p: Point, rect: Rect) -> float:
    dx = max(abs(p[0] - rect[0]), abs(p[0] - rect[2]))
    dy = max(abs(p[1] - rect[1]), abs(p[1] - rect[3]))
    return math.hypot(dx, dy)


def cells_intersecting_circle(center: Point, radius: float, g: GridConfig) -> list[int]:
    """Cells whose minimum distance from ``center`` is at most ``radius``."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if g.contains(center):
        home = cell_of(center, g)
    else:
        home = None
    box = (center[0] - radius, center[1] - radius, center[0] + radius, center[1] + radius)
    out = [c for c in cells_intersecting_rect(box, g)
           if min_dist_to_rect(center, g.cell_rect(c)) <= radius]
    if home is not None and home not in out:
        # half-open cells: a center on an interior boundary is "in" the upper cell,
        # which is always at distance 0 and therefore already listed
        out.append(home)
        out.sort()
    return out


def stable_hash(key: int, salt: int = 0) -> int:
    """Process-independent 64-bit mix of an integer key (splitmix64 finalizer)."""
    z = (key + salt * 0x9E3779B97F4A7C15 + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)
