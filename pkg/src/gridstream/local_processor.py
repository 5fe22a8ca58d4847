"""Local processor: exact object storage for a group of cells.

Besides answering sub-queries it keeps the per-cell workload counters, runs
the processor side of metadata synchronization, and implements both ends of
cell migration.

Migration, for one cell moving from a source to a target processor:

1. the balancer tells the target to expect the cell; the target answers
   before the source is told anything, so packages never reach a target that
   does not expect them;
2. the source keeps serving the cell, ships its contents in fixed-size
   packages and forwards every later insert/delete on the cell to the target;
3. after the final package the balancer broadcasts the new owner; each
   indexer sends a handoff marker to the source behind everything it routed
   there, and the source relays the marker to the target;
4. the target holds back messages from an indexer that touch the cell until
   that indexer's marker arrives, which keeps every indexer's stream in FIFO
   order across the switch; the source drops the cell once every indexer's
   marker has passed through.
"""

from __future__ import annotations

import heapq
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Optional

from .core import GridConfig, KnnQuery, Neighbor, RangeCountQuery, distance
from .messages import (DELETE, INSERT, UPDATE, AbortMigration, CellOp, CellOps, ContinuePackaging,
                       ExpectAck, ExpectCell, HandoffDone, HandoffMarker, MetaSyncReport,
                       MigrateOut, MigrationDone, MigrationError, MigrationPackage, OwnerBroadcast,
                       Partial, SubQuery, SyncDeadline, Tick, WorkloadReport)
from .metasync import SyncConfig
from .runtime import Actor, ActorAddress, Context, Kind

OWNED = "owned"
MIGRATING = "migrating"
INCOMING = "incoming"

BALANCER = ActorAddress(Kind.BALANCER, 0)
METASYNC = ActorAddress(Kind.METASYNC, 0)


@dataclass
class WorkloadCounters:
    updates: int = 0
    visited: int = 0


@dataclass
class _Outgoing:
    plan_id: int
    target: int
    package_size: int
    pending_ids: deque = field(default_factory=deque)
    seq: int = 0
    n_objects: int = 0
    handed_off: set = field(default_factory=set)
    done: bool = False


@dataclass
class _Incoming:
    plan_id: int
    source: int
    closed: set = field(default_factory=set)  # indexers whose marker is still due
    packages: int = 0
    final_seen: bool = False


class CellStore:
    """Per-cell hash tables with last-writer-wins timestamps.

    A delete for an object that is not present leaves a tombstone so that a
    late insert carrying an older timestamp cannot resurrect it. Tombstones
    live for one to two calls of :meth:`gc`.
    """

    def __init__(self):
        self.cells: dict[int, dict[int, tuple[float, float, int]]] = {}
        self.tombs: dict[int, dict[int, int]] = defaultdict(dict)
        self._old_tombs: dict[int, dict[int, int]] = {}
        self.absent_deletes = 0
        self.stale_ops = 0

    def add_cell(self, cell: int):
        self.cells.setdefault(cell, {})

    def drop_cell(self, cell: int):
        self.cells.pop(cell, None)
        self.tombs.pop(cell, None)
        self._old_tombs.pop(cell, None)

    def gc(self):
        self._old_tombs = dict(self.tombs)
        self.tombs = defaultdict(dict)

    def n_tombstones(self) -> int:
        return sum(map(len, self.tombs.values())) + sum(map(len, self._old_tombs.values()))

    def _tomb(self, cell: int, oid: int) -> Optional[int]:
        t = self.tombs.get(cell, {}).get(oid)
        if t is None:
            t = self._old_tombs.get(cell, {}).get(oid)
        return t

    def insert(self, cell: int, oid: int, lon: float, lat: float, ts: int) -> int:
        """Returns the membership delta (+1 or 0)."""
        objs = self.cells[cell]
        tomb = self._tomb(cell, oid)
        if tomb is not None and ts <= tomb:
            self.stale_ops += 1
            return 0
        cur = objs.get(oid)
        if cur is not None and cur[2] >= ts:
            self.stale_ops += 1
            return 0
        objs[oid] = (lon, lat, ts)
        return 0 if cur is not None else 1

    def delete(self, cell: int, oid: int, ts: int) -> int:
        """Returns the membership delta (-1 or 0)."""
        objs = self.cells[cell]
        cur = objs.get(oid)
        if cur is None:
            self.absent_deletes += 1
            tombs = self.tombs[cell]
            tombs[oid] = max(ts, tombs.get(oid, ts))
            return 0
        if cur[2] >= ts:
            self.stale_ops += 1
            return 0
        del objs[oid]
        return -1

    def count(self, cell: int) -> int:
        return len(self.cells.get(cell, ()))


class LocalProcessor(Actor):
    def __init__(self, instance: int, grid: GridConfig, owner: list[int], n_indexers: int,
                 sync: Optional[SyncConfig] = None, window_ms: float = 10_000.0,
                 report_workload: bool = True):
        self.instance = instance
        self.grid = grid
        self.owner = list(owner)
        self.n_indexers = n_indexers
        self.sync = sync or SyncConfig()
        self.window_ms = window_ms
        self.report_workload = report_workload
        self.store = CellStore()
        self.status: dict[int, str] = {}
        for c, o in enumerate(owner):
            if o == instance:
                self.store.add_cell(c)
                self.status[c] = OWNED
        self.out: dict[int, _Outgoing] = {}
        self.inc: dict[int, _Incoming] = {}
        self.buffers: dict[int, deque] = defaultdict(deque)  # indexer -> held messages
        self.counters: dict[int, WorkloadCounters] = defaultdict(WorkloadCounters)
        self.window_start_ms = 0.0
        self.epoch: dict[int, int] = defaultdict(int)
        self.last_sent_count: dict[int, Optional[int]] = defaultdict(int)
        self.last_sent_ms: dict[int, float] = defaultdict(float)
        self.deadline_pending: set[int] = set()
        self.sync_messages = {"periodic": 0, "accumulative": 0}
        self.forwarded = 0
        self.protocol_errors = 0

    # ---------------------------------------------------------------- helpers
    def held_cells(self):
        return self.store.cells.keys()

    def object_count(self) -> int:
        """Objects in cells this processor is authoritative for."""
        return sum(len(objs) for c, objs in self.store.cells.items()
                   if self.status.get(c) != INCOMING)

    def workload(self) -> tuple[float, dict[int, float]]:
        """W(p) and per-cell W(c) for the current window, per second."""
        secs = self.window_ms / 1000.0
        per_cell = {c: (w.updates + w.visited) / secs
                    for c, w in sorted(self.counters.items()) if w.updates or w.visited}
        return sum(per_cell.values()), per_cell

    def _authoritative_for(self, cell: int, indexer: Optional[int]) -> bool:
        st = self.status.get(cell)
        if st == OWNED:
            return True
        if st == MIGRATING:
            return indexer is None or indexer not in self.out[cell].handed_off
        if st == INCOMING:
            return indexer is not None and indexer not in self.inc[cell].closed
        return False

    def _touches_closed(self, indexer: int, msg) -> bool:
        if not self.inc:
            return False
        closed = {c for c, st in self.inc.items() if indexer in st.closed}
        if not closed:
            return False
        if isinstance(msg, CellOps):
            return any(op.cell in closed for op in msg.ops)
        if isinstance(msg, SubQuery):
            return msg.cells is None or any(c in closed for c in msg.cells)
        return False

    # ---------------------------------------------------------------- dispatch
    def on_start(self, ctx: Context):
        ctx.schedule(self.window_ms, Tick("window"))

    def receive(self, ctx: Context, sender: ActorAddress, msg):
        from_indexer = sender.instance_id if sender.kind == Kind.INDEXER else None
        if from_indexer is not None and isinstance(msg, (CellOps, SubQuery)):
            buf = self.buffers[from_indexer]
            if buf or self._touches_closed(from_indexer, msg):
                buf.append(msg)
                return
        self._handle(ctx, sender, from_indexer, msg)

    def _handle(self, ctx: Context, sender: ActorAddress, from_indexer: Optional[int], msg):
        if isinstance(msg, CellOps):
            self._on_ops(ctx, sender, from_indexer, msg)
        elif isinstance(msg, SubQuery):
            self._on_subquery(ctx, from_indexer, msg)
        elif isinstance(msg, SyncDeadline):
            self._on_deadline(ctx, msg.cell)
        elif isinstance(msg, Tick):
            self._on_window(ctx)
        elif isinstance(msg, ContinuePackaging):
            self._package_next(ctx, msg.cell)
        elif isinstance(msg, HandoffMarker):
            self._on_marker(ctx, sender, msg)
        elif isinstance(msg, ExpectCell):
            self._on_expect(ctx, msg)
        elif isinstance(msg, MigrateOut):
            self._on_migrate_out(ctx, msg)
        elif isinstance(msg, MigrationPackage):
            self._on_package(ctx, msg)
        elif isinstance(msg, OwnerBroadcast):
            for cell, _old, new in msg.moves:
                self.owner[cell] = new
        elif isinstance(msg, AbortMigration):
            self._on_abort(ctx, msg)
        else:
            raise TypeError(f"LocalProcessor cannot handle {msg!r}")

    # ----------------------------------------------------------------- updates
    def apply_op(self, ctx: Context, op: CellOp, counted: bool = True, trace: bool = True) -> int:
        cell = op.cell
        if op.kind == INSERT:
            delta = self.store.insert(cell, op.object_id, op.point[0], op.point[1], op.timestamp)
            n_ops = 1
        elif op.kind == DELETE:
            delta = self.store.delete(cell, op.object_id, op.timestamp)
            n_ops = 1
        elif op.kind == UPDATE:
            delta = self.store.insert(cell, op.object_id, op.point[0], op.point[1], op.timestamp)
            n_ops = 2
        else:
            raise ValueError(op.kind)
        ctx.charge(n_ops)
        if counted:
            self.counters[cell].updates += n_ops
        if trace and delta:
            ctx.trace("truth", cell=cell, delta=delta, lp=self.instance)
        return delta

    def _on_ops(self, ctx: Context, sender: ActorAddress, from_indexer: Optional[int], msg: CellOps):
        forward: dict[int, list[CellOp]] = defaultdict(list)
        dual: dict[int, list[CellOp]] = defaultdict(list)
        from_lp = sender.kind == Kind.LOCAL_PROCESSOR
        for op in msg.ops:
            st = self.status.get(op.cell)
            if st is None:
                self.forwarded += 1
                forward[self.owner[op.cell]].append(op)
                continue
            if st == INCOMING and from_lp and sender.instance_id == self.inc[op.cell].source:
                # relayed copy of an op the source already applied and accounted
                self.apply_op(ctx, op, counted=False, trace=False)
                continue
            self.apply_op(ctx, op)
            if st == MIGRATING:
                dual[self.out[op.cell].target].append(op)
            self._sync_check(ctx, op.cell)
        for lp, ops in forward.items():
            if lp != self.instance:
                ctx.send(ActorAddress(Kind.LOCAL_PROCESSOR, lp), CellOps(tuple(ops)))
        for lp, ops in dual.items():
            ctx.send(ActorAddress(Kind.LOCAL_PROCESSOR, lp), CellOps(tuple(ops)))

    # ------------------------------------------------------------------ queries
    def _on_subquery(self, ctx: Context, from_indexer: Optional[int], sub: SubQuery):
        if sub.cells is None:
            cells = [c for c in self.held_cells() if self._authoritative_for(c, from_indexer)]
            missing = []
        else:
            cells, missing = [], []
            for c in sub.cells:
                if c in self.store.cells and (self._authoritative_for(c, from_indexer)
                                              or sub.is_forward):
                    cells.append(c)
                else:
                    missing.append(c)
        forwards = 0
        if missing and not sub.is_forward:
            groups: dict[int, list[int]] = defaultdict(list)
            for c in missing:
                groups[self.owner[c]].append(c)
            for lp, cs in groups.items():
                if lp == self.instance:
                    continue
                forwards += 1
                self.forwarded += 1
                ctx.send(ActorAddress(Kind.LOCAL_PROCESSOR, lp),
                         SubQuery(sub.key, sub.body, tuple(cs), sub.fanout, sub.issue_ms,
                                  sub.aggregator, sub.origin, sub.radius, is_forward=True))
        body = sub.body
        if isinstance(body, RangeCountQuery):
            count = self.exec_range_count(ctx, body, cells)
            partial = Partial(sub.key, body, sub.origin, self.instance, sub.fanout, sub.issue_ms,
                              count=count, forwards=forwards, is_forward=sub.is_forward)
        else:
            found = self.exec_knn(ctx, body, cells)
            partial = Partial(sub.key, body, sub.origin, self.instance, sub.fanout, sub.issue_ms,
                              neighbors=tuple(found), radius=sub.radius, forwards=forwards,
                              is_forward=sub.is_forward)
        ctx.send(sub.aggregator, partial)

    def exec_range_count(self, ctx: Optional[Context], q: RangeCountQuery, cells) -> int:
        rect = q.rect
        total = 0
        visited = 0
        for c in cells:
            objs = self.store.cells[c]
            n = 0
            for lon, lat, _ in objs.values():
                if rect[0] <= lon <= rect[2] and rect[1] <= lat <= rect[3]:
                    n += 1
            total += n
            self.counters[c].visited += len(objs)
            visited += len(objs)
        if ctx is not None:
            ctx.charge(visited + 2 * len(cells))
        return total

    def exec_knn(self, ctx: Optional[Context], q: KnnQuery, cells) -> list[Neighbor]:
        qx, qy = q.q
        cand = []
        visited = 0
        for c in cells:
            objs = self.store.cells[c]
            for oid, (lon, lat, _) in objs.items():
                cand.append((distance((qx, qy), (lon, lat)), oid, lon, lat))
            self.counters[c].visited += len(objs)
            visited += len(objs)
        if ctx is not None:
            ctx.charge(visited + 2 * len(cells))
        best = heapq.nsmallest(q.k, cand, key=lambda t: (t[0], t[1]))
        return [Neighbor(oid, lon, lat, d) for d, oid, lon, lat in best]

    # ----------------------------------------------------------- metadata sync
    def _sync_check(self, ctx: Context, cell: int):
        if not self._authoritative_for(cell, None):
            return
        count = self.store.count(cell)
        last = self.last_sent_count[cell]
        if last is None or abs(count - last) >= self.sync.acc_threshold:
            self._send_sync(ctx, cell, count, accumulative=last is not None)
        elif count != last and cell not in self.deadline_pending:
            self.deadline_pending.add(cell)
            wait = max(0.0, self.last_sent_ms[cell] + self.sync.period_ms - ctx.now_ms)
            ctx.schedule(wait, SyncDeadline(cell))

    def _on_deadline(self, ctx: Context, cell: int):
        self.deadline_pending.discard(cell)
        if not self._authoritative_for(cell, None):
            return
        count = self.store.count(cell)
        if count == self.last_sent_count[cell]:
            return
        wait = self.last_sent_ms[cell] + self.sync.period_ms - ctx.now_ms
        if wait > 0:
            self.deadline_pending.add(cell)
            ctx.schedule(wait, SyncDeadline(cell))
            return
        self._send_sync(ctx, cell, count, accumulative=False)

    def _send_sync(self, ctx: Context, cell: int, count: int, accumulative: bool):
        self.last_sent_count[cell] = count
        self.last_sent_ms[cell] = ctx.now_ms
        self.sync_messages["accumulative" if accumulative else "periodic"] += 1
        ctx.trace("sync_send", cell=cell, count=count, epoch=self.epoch[cell],
                  accumulative=accumulative, lp=self.instance)
        ctx.send(METASYNC, MetaSyncReport(cell, count, self.epoch[cell], accumulative, ctx.now_ms))

    # ----------------------------------------------------------------- workload
    def _on_window(self, ctx: Context):
        if self.report_workload:
            total, per_cell = self.workload()
            ctx.send(BALANCER, WorkloadReport(self.instance, ctx.now_ms, total,
                                              tuple(per_cell.items())))
        self.counters.clear()
        self.store.gc()
        self.window_start_ms = ctx.now_ms
        ctx.schedule(self.window_ms, Tick("window"))

    # ---------------------------------------------------------------- migration
    def _on_expect(self, ctx: Context, msg: ExpectCell):
        if msg.cell in self.status:
            self.protocol_errors += 1
            ctx.send(BALANCER, MigrationError(msg.plan_id, msg.cell, self.instance,
                                              "target already holds the cell"))
            return
        self.store.add_cell(msg.cell)
        self.status[msg.cell] = INCOMING
        self.inc[msg.cell] = _Incoming(msg.plan_id, msg.source, set(range(self.n_indexers)))
        ctx.send(BALANCER, ExpectAck(msg.plan_id, msg.cell, self.instance))

    def _on_migrate_out(self, ctx: Context, msg: MigrateOut):
        if self.status.get(msg.cell) != OWNED:
            self.protocol_errors += 1
            ctx.send(BALANCER, MigrationError(msg.plan_id, msg.cell, self.instance,
                                              "source does not own the cell"))
            return
        self.status[msg.cell] = MIGRATING
        ids = deque(sorted(self.store.cells[msg.cell]))
        self.out[msg.cell] = _Outgoing(msg.plan_id, msg.target, msg.package_size, ids)
        self._package_next(ctx, msg.cell)

    def _package_next(self, ctx: Context, cell: int):
        st = self.out.get(cell)
        if st is None or st.done:
            return
        objs = self.store.cells[cell]
        batch = []
        while st.pending_ids and len(batch) < st.package_size:
            oid = st.pending_ids.popleft()
            row = objs.get(oid)
            if row is not None:
                batch.append((oid, row[0], row[1], row[2]))
        final = not st.pending_ids
        ctx.charge(len(batch))
        target = ActorAddress(Kind.LOCAL_PROCESSOR, st.target)
        ctx.send(target, MigrationPackage(st.plan_id, cell, st.seq, tuple(batch), final))
        st.seq += 1
        st.n_objects += len(batch)
        if final:
            st.done = True
            ctx.send(BALANCER, MigrationDone(st.plan_id, cell, self.instance, st.n_objects, st.seq))
        else:
            ctx.send(self.address, ContinuePackaging(st.plan_id, cell))

    def _on_package(self, ctx: Context, msg: MigrationPackage):
        st = self.inc.get(msg.cell)
        if st is None or st.plan_id != msg.plan_id:
            self.protocol_errors += 1
            ctx.send(BALANCER, MigrationError(msg.plan_id, msg.cell, self.instance,
                                              "package for a cell this processor does not expect"))
            return
        ctx.charge(len(msg.objects))
        for oid, lon, lat, ts in msg.objects:
            self.store.insert(msg.cell, oid, lon, lat, ts)
        st.packages += 1
        st.final_seen = st.final_seen or msg.final

    def _on_marker(self, ctx: Context, sender: ActorAddress, msg: HandoffMarker):
        cell = msg.cell
        if sender.kind == Kind.INDEXER:
            st = self.out.get(cell)
            if st is None:
                self.protocol_errors += 1
                return
            st.handed_off.add(msg.indexer)
            ctx.send(ActorAddress(Kind.LOCAL_PROCESSOR, st.target), msg)
            if len(st.handed_off) == self.n_indexers:
                self.store.drop_cell(cell)
                del self.status[cell]
                del self.out[cell]
                self.deadline_pending.discard(cell)
                self.owner[cell] = st.target
                ctx.send(BALANCER, HandoffDone(msg.plan_id, cell, self.instance))
            return
        st = self.inc.get(cell)
        if st is None:
            self.protocol_errors += 1
            return
        st.closed.discard(msg.indexer)
        if not st.closed:
            self.status[cell] = OWNED
            del self.inc[cell]
            self.owner[cell] = self.instance
            self.epoch[cell] = msg.plan_id
            self.last_sent_count[cell] = None
            self._sync_check(ctx, cell)
        self._drain(ctx, msg.indexer)

    def _drain(self, ctx: Context, indexer: int):
        buf = self.buffers[indexer]
        sender = ActorAddress(Kind.INDEXER, indexer)
        while buf and not self._touches_closed(indexer, buf[0]):
            self._handle(ctx, sender, indexer, buf.popleft())

    def _on_abort(self, ctx: Context, msg: AbortMigration):
        st = self.out.get(msg.cell)
        if st is not None and st.plan_id == msg.plan_id:
            self.status[msg.cell] = OWNED
            del self.out[msg.cell]
        inc = self.inc.get(msg.cell)
        if inc is not None and inc.plan_id == msg.plan_id:
            del self.inc[msg.cell]
            del self.status[msg.cell]
            self.store.drop_cell(msg.cell)
            for ix in list(self.buffers):
                self._drain(ctx, ix)
