"""Transformer: turns raw location reports into movements."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import (GridConfig, Location, Movement, NotFound, ObjectQuery, ObjectUpdate,
                   QueryResult, cell_of, stable_hash)
from .messages import MovementBatch, ResultRecord, Submit, UpdateBatch
from .runtime import Actor, ActorAddress, Context, Kind


@dataclass
class LatestPositionTable:
    """object id -> (lon, lat, timestamp, cell)."""

    rows: dict[int, tuple[float, float, int, int]] = field(default_factory=dict)
    stale_dropped: int = 0
    out_of_bounds: int = 0

    def __len__(self):
        return len(self.rows)

    def apply(self, u: ObjectUpdate, g: GridConfig) -> Optional[Movement]:
        """Record ``u``; return the movement, or None if the update is rejected."""
        if not g.contains((u.lon, u.lat)):
            self.out_of_bounds += 1
            return None
        prev = self.rows.get(u.object_id)
        if prev is not None and u.timestamp <= prev[2]:
            self.stale_dropped += 1
            return None
        cell = cell_of((u.lon, u.lat), g)
        self.rows[u.object_id] = (u.lon, u.lat, u.timestamp, cell)
        return Movement(u.object_id, None if prev is None else prev[3], cell,
                        (u.lon, u.lat), u.timestamp)

    def lookup(self, q: ObjectQuery):
        row = self.rows.get(q.object_id)
        if row is None:
            return NotFound()
        return Location((row[0], row[1]), row[2])


def indexer_for(object_id: int, n_indexers: int, salt: int = 0) -> int:
    """Indexer instance that carries every movement of ``object_id``."""
    return stable_hash(object_id, salt) % n_indexers


class Transformer(Actor):
    def __init__(self, grid: GridConfig, n_indexers: int, salt: int = 0):
        self.grid = grid
        self.n_indexers = n_indexers
        self.salt = salt
        self.table = LatestPositionTable()

    def receive(self, ctx: Context, sender: ActorAddress, msg):
        if isinstance(msg, ObjectUpdate):
            ctx.charge(1)
            m = self.table.apply(msg, self.grid)
            if m is not None:
                target = indexer_for(m.object_id, self.n_indexers, self.salt)
                ctx.send(ActorAddress(Kind.INDEXER, target), m)
        elif isinstance(msg, UpdateBatch):
            ctx.charge(len(msg.updates))
            groups: dict[int, list[Movement]] = {}
            for u in msg.updates:
                m = self.table.apply(u, self.grid)
                if m is not None:
                    groups.setdefault(indexer_for(m.object_id, self.n_indexers, self.salt), []).append(m)
            for ix, ms in sorted(groups.items()):
                ctx.send(ActorAddress(Kind.INDEXER, ix), MovementBatch(tuple(ms)))
        elif isinstance(msg, Submit) and isinstance(msg.query.body, ObjectQuery):
            ctx.charge(1)
            payload = self.table.lookup(msg.query.body)
            ctx.emit(ResultRecord(msg.query.query_id, "object",
                                  QueryResult(msg.query.query_id, payload),
                                  ctx.now_ms - msg.issue_ms, msg.issue_ms, ctx.now_ms))
        else:
            raise TypeError(f"Transformer cannot handle {msg!r}")
