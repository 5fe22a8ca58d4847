"""Indexer: the replicated grid index that routes movements and plans queries."""

from __future__ import annotations

import heapq
import math
import random
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

from .core import (Count, GridConfig, KnnQuery, Movement, QueryResult, RangeCountQuery,
                   cell_of, cells_intersecting_circle, cells_intersecting_rect,
                   max_dist_to_rect, stable_hash)
from .messages import (DELETE, INSERT, UPDATE, CellOp, CellOps, HandoffMarker, MetaBroadcast,
                       MovementBatch, OwnerBroadcast, ResultRecord, SubQuery, Submit)
from .runtime import Actor, ActorAddress, Context, Kind

MODES = ("cheetah", "cheetah-minus", "broadcast")


def assign_cells(grid: GridConfig, n_lps: int, strategy: str = "tiles",
                 seed: int = 0) -> list[int]:
    """Initial cell -> local processor map.

    ``tiles`` gives each processor one contiguous rectangular block of cells,
    ``random`` a seeded balanced shuffle, ``round_robin`` cell id modulo count.
    """
    n = grid.n_cells
    if strategy == "round_robin":
        return [c % n_lps for c in range(n)]
    if strategy == "random":
        cells = list(range(n))
        random.Random(seed).shuffle(cells)
        owner = [0] * n
        for i, c in enumerate(cells):
            owner[c] = i % n_lps
        return owner
    if strategy == "tiles":
        tx, ty = _tile_shape(n_lps, grid.n_cols, grid.n_rows)
        owner = []
        for c in range(n):
            col, row = grid.col_row(c)
            bx = col * tx // grid.n_cols
            by = row * ty // grid.n_rows
            owner.append((by * tx + bx) % n_lps)
        return owner
    raise ValueError(f"unknown assignment strategy {strategy!r}")


def _tile_shape(n: int, n_cols: int, n_rows: int) -> tuple[int, int]:
    best = None
    for tx in range(1, n + 1):
        if n % tx:
            continue
        ty = n // tx
        if tx > n_cols or ty > n_rows:
            continue
        # prefer square-ish tiles
        aspect = abs(math.log((n_cols / tx) / (n_rows / ty)))
        if best is None or aspect < best[0]:
            best = (aspect, tx, ty)
    if best is None:
        tx = min(n, n_cols)
        return tx, min(math.ceil(n / tx), n_rows)
    return best[1], best[2]


def aggregator_for(query_id: int, n_aggregators: int, salt: int = 0) -> int:
    return stable_hash(query_id, salt + 1) % n_aggregators


@dataclass
class CellMetadata:
    count: int = 0
    last_sync_ms: float = -1.0
    epoch: int = 0


class GlobalIndex:
    """Grid, cell owners and per-cell metadata, plus the pruning logic."""

    def __init__(self, grid: GridConfig, owner: list[int], n_lps: int):
        if len(owner) != grid.n_cells:
            raise ValueError("owner map must cover every cell")
        self.grid = grid
        self.owner = list(owner)
        self.n_lps = n_lps
        self.meta = [CellMetadata() for _ in range(grid.n_cells)]
        self.has_meta = False
        self.unknown_cell_updates = 0

    # ---------------------------------------------------------------- routing
    def route_movement(self, m: Movement) -> dict[int, list[CellOp]]:
        out: dict[int, list[CellOp]] = defaultdict(list)
        if m.old_cell is None:
            out[self.owner[m.new_cell]].append(
                CellOp(INSERT, m.new_cell, m.object_id, m.new_point, m.timestamp))
        elif m.old_cell == m.new_cell:
            out[self.owner[m.new_cell]].append(
                CellOp(UPDATE, m.new_cell, m.object_id, m.new_point, m.timestamp))
        else:
            out[self.owner[m.old_cell]].append(
                CellOp(DELETE, m.old_cell, m.object_id, None, m.timestamp))
            out[self.owner[m.new_cell]].append(
                CellOp(INSERT, m.new_cell, m.object_id, m.new_point, m.timestamp))
        return dict(out)

    def group_by_owner(self, cells) -> dict[int, tuple[int, ...]]:
        groups: dict[int, list[int]] = defaultdict(list)
        for c in cells:
            groups[self.owner[c]].append(c)
        return {lp: tuple(cs) for lp, cs in sorted(groups.items())}

    # --------------------------------------------------------------- planning
    def plan_range(self, q: RangeCountQuery) -> dict[int, tuple[int, ...]]:
        """Owner -> candidate cells. Cells with a zero count are kept."""
        return self.group_by_owner(cells_intersecting_rect(q.rect, self.grid))

    def knn_radius(self, q: KnnQuery, margin: int = 0) -> Optional[float]:
        """Smallest radius whose circle encloses cells guaranteed to hold >= k objects.

        Cells are visited in Chebyshev rings around the query cell and
        consumed in order of their farthest-point distance; a cell contributes
        ``max(0, count - margin)`` guaranteed objects. Returns None when the
        whole grid cannot guarantee k objects.
        """
        g = self.grid
        col, row = g.col_row(cell_of(q.q, g))
        unit = min(g.cell_width, g.cell_height)
        max_ring = max(col, g.n_cols - 1 - col, row, g.n_rows - 1 - row)
        heap: list[tuple[float, int]] = []
        acc = 0
        ring = 0
        while True:
            bound = ring * unit if ring <= max_ring else math.inf
            while heap and heap[0][0] <= bound:
                md, cell = heapq.heappop(heap)
                acc += max(0, self.meta[cell].count - margin)
                if acc >= q.k:
                    return md
            if ring > max_ring:
                return None
            for cell in _ring_cells(col, row, ring, g.n_cols, g.n_rows):
                heapq.heappush(heap, (max_dist_to_rect(q.q, g.cell_extent(cell)), cell))
            ring += 1

    def plan_knn(self, q: KnnQuery, margin: int = 0, min_radius: Optional[float] = None,
                 use_metadata: bool = True) -> tuple[dict[int, tuple[int, ...]], Optional[float]]:
        """Owner -> candidate cells, and the candidate radius (None: all cells)."""
        radius = min_radius
        if radius is None and use_metadata and self.has_meta:
            radius = self.knn_radius(q, margin)
        if radius is None:
            return self.group_by_owner(range(self.grid.n_cells)), None
        return self.group_by_owner(cells_intersecting_circle(q.q, radius, self.grid)), radius

    # ----------------------------------------------------------- replication
    def apply_meta(self, entries, now_ms: float):
        for cell, count, epoch in entries:
            if not 0 <= cell < self.grid.n_cells:
                self.unknown_cell_updates += 1
                continue
            m = self.meta[cell]
            if epoch < m.epoch:
                continue
            m.count, m.epoch, m.last_sync_ms = count, epoch, now_ms
        self.has_meta = True

    def apply_owners(self, moves):
        for cell, _old, new in moves:
            self.owner[cell] = new


def _ring_cells(col: int, row: int, ring: int, n_cols: int, n_rows: int):
    if ring == 0:
        yield row * n_cols + col
        return
    for dc in range(-ring, ring + 1):
        for dr in (-ring, ring):
            c, r = col + dc, row + dr
            if 0 <= c < n_cols and 0 <= r < n_rows:
                yield r * n_cols + c
    for dr in range(-ring + 1, ring):
        for dc in (-ring, ring):
            c, r = col + dc, row + dr
            if 0 <= c < n_cols and 0 <= r < n_rows:
                yield r * n_cols + c


class Indexer(Actor):
    def __init__(self, instance: int, grid: GridConfig, owner: list[int], n_lps: int,
                 n_aggregators: int, mode: str = "cheetah", knn_margin: int = 0, salt: int = 0):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.instance = instance
        self.index = GlobalIndex(grid, owner, n_lps)
        self.n_aggregators = n_aggregators
        self.mode = mode
        self.knn_margin = knn_margin
        self.salt = salt
        self.movements_routed = 0
        self.queries_planned = 0

    def receive(self, ctx: Context, sender: ActorAddress, msg):
        if isinstance(msg, Movement):
            ctx.charge(1)
            self.movements_routed += 1
            for lp, ops in self.index.route_movement(msg).items():
                ctx.send(ActorAddress(Kind.LOCAL_PROCESSOR, lp), CellOps(tuple(ops)))
        elif isinstance(msg, MovementBatch):
            ctx.charge(len(msg.movements))
            self.movements_routed += len(msg.movements)
            out: dict[int, list[CellOp]] = defaultdict(list)
            for m in msg.movements:
                for lp, ops in self.index.route_movement(m).items():
                    out[lp].extend(ops)
            for lp, ops in sorted(out.items()):
                ctx.send(ActorAddress(Kind.LOCAL_PROCESSOR, lp), CellOps(tuple(ops)))
        elif isinstance(msg, Submit):
            self._plan(ctx, msg, continuous=sender.kind == Kind.AGGREGATOR)
        elif isinstance(msg, MetaBroadcast):
            ctx.charge(len(msg.entries))
            self.index.apply_meta(msg.entries, ctx.now_ms)
            ctx.trace("meta_apply", indexer=self.instance, entries=msg.entries)
        elif isinstance(msg, OwnerBroadcast):
            self.index.apply_owners(msg.moves)
            for cell, old, _new in msg.moves:
                ctx.send(ActorAddress(Kind.LOCAL_PROCESSOR, old),
                         HandoffMarker(msg.plan_id, cell, self.instance))
            ctx.trace("owner_apply", indexer=self.instance, plan=msg.plan_id)
        else:
            raise TypeError(f"Indexer cannot handle {msg!r}")

    def _plan(self, ctx: Context, sub: Submit, continuous: bool = False):
        q = sub.query
        body = q.body
        key = (q.query_id, sub.refresh, sub.attempt)
        agg = ActorAddress(Kind.AGGREGATOR, aggregator_for(q.query_id, self.n_aggregators, self.salt))
        self.queries_planned += 1
        radius = None
        if self.mode == "broadcast":
            groups = {lp: None for lp in range(self.index.n_lps)}
            ctx.charge(self.index.n_lps)
        elif isinstance(body, RangeCountQuery):
            groups = self.index.plan_range(body)
            ctx.charge(sum(len(c) for c in groups.values()))
            if not groups:
                # a range query that reaches us from an aggregator is a continuous refresh
                kind = "continuous-range" if continuous else "range"
                ctx.emit(ResultRecord(q.query_id, kind, QueryResult(q.query_id, Count(0), sub.refresh),
                                      ctx.now_ms - sub.issue_ms, sub.issue_ms, ctx.now_ms))
                return
        elif isinstance(body, KnnQuery):
            if sub.all_cells or self.mode == "cheetah-minus":
                groups = {lp: None for lp in range(self.index.n_lps)}
                ctx.charge(self.index.n_lps)
            else:
                groups, radius = self.index.plan_knn(body, self.knn_margin, sub.min_radius)
                if radius is None:
                    groups = {lp: None for lp in sorted(groups)}
                ctx.charge(sum(len(c) for c in groups.values() if c) + 4)
        else:
            raise TypeError(f"Indexer cannot plan {body!r}")
        ctx.trace("plan", key=key, indexer=self.instance, movements=self.movements_routed,
                  fanout=len(groups), radius=radius, groups=groups)
        for lp, cells in groups.items():
            ctx.send(ActorAddress(Kind.LOCAL_PROCESSOR, lp),
                     SubQuery(key, body, cells, len(groups), sub.issue_ms, agg, lp, radius))
