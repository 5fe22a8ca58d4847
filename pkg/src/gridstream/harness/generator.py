"""Seeded random-walk trajectories with optional hotspots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import ObjectUpdate, Rect


@dataclass(frozen=True)
class Hotspot:
    center: tuple[float, float]
    radius: float
    fraction: float


@dataclass
class GeneratorConfig:
    """Objects walk with Gaussian steps of ``step_stddev`` per tick.

    A hotspot's share of the objects starts uniformly inside its disc and
    never leaves it; the rest start uniformly over the region. Timestamps are
    tick indices, tick 0 being the initial positions.
    """

    n_objects: int
    bounds: Rect = (0.0, 0.0, 1.0, 1.0)
    step_stddev: float = 0.01
    hotspots: list[Hotspot] = field(default_factory=list)
    n_ticks: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_objects < 0 or self.n_ticks < 1 or self.step_stddev < 0:
            raise ValueError("n_objects >= 0, n_ticks >= 1 and step_stddev >= 0 are required")
        if sum(h.fraction for h in self.hotspots) > 1 + 1e-12:
            raise ValueError("hotspot fractions must sum to at most 1")
        x0, y0, x1, y1 = self.bounds
        if not (x1 > x0 and y1 > y0):
            raise ValueError("empty region")
        for h in self.hotspots:
            if h.radius <= 0 or not 0 <= h.fraction <= 1:
                raise ValueError(f"invalid hotspot {h}")


def _reflect(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo
    t = np.mod(v - lo, 2 * span)
    return lo + np.where(t > span, 2 * span - t, t)


def _in_disc(x, y, h: Hotspot):
    return (x - h.center[0]) ** 2 + (y - h.center[1]) ** 2 <= h.radius ** 2


def generate_arrays(cfg: GeneratorConfig) -> np.ndarray:
    """Positions of shape (n_ticks, n_objects, 2)."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_objects
    x0, y0, x1, y1 = cfg.bounds
    group = np.full(n, -1)
    start = 0
    for i, h in enumerate(cfg.hotspots):
        m = int(round(h.fraction * n))
        group[start:start + m] = i
        start += m
    group = rng.permutation(group)

    x = rng.uniform(x0, x1, n)
    y = rng.uniform(y0, y1, n)
    for i, h in enumerate(cfg.hotspots):
        idx = np.flatnonzero(group == i)
        todo = idx
        # rejection sampling keeps the start points inside both disc and region
        while todo.size:
            r = h.radius * np.sqrt(rng.uniform(0, 1, todo.size))
            a = rng.uniform(0, 2 * np.pi, todo.size)
            px = h.center[0] + r * np.cos(a)
            py = h.center[1] + r * np.sin(a)
            ok = (px >= x0) & (px <= x1) & (py >= y0) & (py <= y1)
            x[todo[ok]] = px[ok]
            y[todo[ok]] = py[ok]
            todo = todo[~ok]

    out = np.empty((cfg.n_ticks, n, 2))
    out[0, :, 0], out[0, :, 1] = x, y
    for t in range(1, cfg.n_ticks):
        dx = rng.normal(0, cfg.step_stddev, n)
        dy = rng.normal(0, cfg.step_stddev, n)
        nx = _reflect(x + dx, x0, x1)
        ny = _reflect(y + dy, y0, y1)
        for i, h in enumerate(cfg.hotspots):
            idx = group == i
            out_disc = idx & ~_in_disc(nx, ny, h)
            # mirror the step back into the disc, else stay put
            mx = _reflect(x - dx, x0, x1)
            my = _reflect(y - dy, y0, y1)
            mirror_ok = out_disc & _in_disc(mx, my, h)
            nx = np.where(mirror_ok, mx, nx)
            ny = np.where(mirror_ok, my, ny)
            stay = out_disc & ~mirror_ok
            nx = np.where(stay, x, nx)
            ny = np.where(stay, y, ny)
        x, y = nx, ny
        out[t, :, 0], out[t, :, 1] = x, y
    return out


def generate(cfg: GeneratorConfig) -> list[ObjectUpdate]:
    """Update stream ordered by tick, then object id."""
    pos = generate_arrays(cfg)
    return [ObjectUpdate(i, t, float(pos[t, i, 0]), float(pos[t, i, 1]))
            for t in range(pos.shape[0]) for i in range(pos.shape[1])]


def final_positions(updates) -> dict[int, tuple[float, float]]:
    """Latest position per object under last-writer-wins on timestamps."""
    last: dict[int, tuple[int, float, float]] = {}
    for u in updates:
        cur = last.get(u.object_id)
        if cur is None or u.timestamp > cur[0]:
            last[u.object_id] = (u.timestamp, u.lon, u.lat)
    return {oid: (lon, lat) for oid, (_, lon, lat) in last.items()}
