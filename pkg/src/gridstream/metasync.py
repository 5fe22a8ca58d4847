"""MetaSync: collects per-cell counts from processors and replicates them to indexers."""

from __future__ import annotations

from dataclasses import dataclass, field

from .messages import MetaBroadcast, MetaSyncReport, Tick
from .runtime import Actor, ActorAddress, Context, Kind


@dataclass
class SyncConfig:
    period_ms: float = 1000.0
    acc_threshold: int = 32
    broadcast_period_ms: float = 250.0

    def __post_init__(self):
        if self.period_ms <= 0 or self.acc_threshold <= 0 or self.broadcast_period_ms <= 0:
            raise ValueError("sync parameters must be positive")


@dataclass
class MetaTable:
    """cell -> (count, epoch) plus the cells changed since the last broadcast."""

    rows: dict[int, tuple[int, int]] = field(default_factory=dict)
    dirty: set[int] = field(default_factory=set)

    def update(self, cell: int, count: int, epoch: int) -> bool:
        cur = self.rows.get(cell)
        if cur is not None and epoch < cur[1]:
            return False  # a report from a processor that no longer owns the cell
        self.rows[cell] = (count, epoch)
        return True

    def entries(self, cells) -> tuple[tuple[int, int, int], ...]:
        return tuple((c, *self.rows[c]) for c in sorted(cells))


class MetaSync(Actor):
    def __init__(self, config: SyncConfig, n_indexers: int):
        self.config = config
        self.n_indexers = n_indexers
        self.table = MetaTable()
        self.received = {"periodic": 0, "accumulative": 0, "stale": 0}
        self.broadcasts = 0

    def on_start(self, ctx: Context):
        ctx.schedule(self.config.broadcast_period_ms, Tick("broadcast"))

    def _broadcast(self, ctx: Context, cells):
        entries = self.table.entries(cells)
        ctx.charge(len(entries))
        self.broadcasts += 1
        msg = MetaBroadcast(entries)
        for i in range(self.n_indexers):
            ctx.send(ActorAddress(Kind.INDEXER, i), msg)

    def receive(self, ctx: Context, sender: ActorAddress, msg):
        if isinstance(msg, MetaSyncReport):
            if not self.table.update(msg.cell, msg.count, msg.epoch):
                self.received["stale"] += 1
                return
            if msg.accumulative:
                self.received["accumulative"] += 1
                self.table.dirty.discard(msg.cell)
                self._broadcast(ctx, (msg.cell,))
            else:
                self.received["periodic"] += 1
                self.table.dirty.add(msg.cell)
        elif isinstance(msg, Tick):
            if self.table.dirty:
                self._broadcast(ctx, self.table.dirty)
                self.table.dirty.clear()
            ctx.schedule(self.config.broadcast_period_ms, Tick("broadcast"))
        else:
            raise TypeError(f"MetaSync cannot handle {msg!r}")
