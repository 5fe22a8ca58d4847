"""Workload balancing: imbalance degree, greedy remedy planning and plan execution."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .messages import (AbortMigration, ExpectAck, ExpectCell, HandoffDone, MigrateOut,
                       MigrationDone, MigrationError, OwnerBroadcast, RunPlan, Tick,
                       WorkloadReport)
from .runtime import Actor, ActorAddress, Context, Kind

BYTES_PER_OBJECT = 32
DEFAULT_PACKAGE_SIZE = 10_000


@dataclass
class WorkloadSnapshot:
    """instance -> (W(p), {cell: W(c)})."""

    loads: dict[int, tuple[float, dict[int, float]]]
    window_ms: float = 0.0

    @classmethod
    def from_cells(cls, cells: Mapping[int, Mapping[int, float]]) -> "WorkloadSnapshot":
        return cls({p: (float(sum(cs.values())), dict(cs)) for p, cs in cells.items()})

    def totals(self) -> dict[int, float]:
        return {p: w for p, (w, _) in self.loads.items()}


@dataclass
class RemedyPlan:
    moves: list[tuple[int, int, int]] = field(default_factory=list)  # (cell, from, to)
    degree_before: float = 0.0
    predicted_degree: float = 0.0
    source: Optional[int] = None

    @property
    def reduction(self) -> float:
        return self.degree_before - self.predicted_degree


def degree(loads: Sequence[float] | Mapping[int, float]) -> float:
    """Population variance of instance workloads."""
    values = list(loads.values()) if isinstance(loads, Mapping) else list(loads)
    if not values:
        raise ValueError("degree of an empty instance set")
    mean = sum(values) / len(values)
    return sum((v - mean) ** 2 for v in values) / len(values)


def default_theta(loads: Mapping[int, float], factor: float = 0.25) -> float:
    values = list(loads.values())
    mean = sum(values) / len(values)
    return factor * mean * mean


def _redistribute(snap: WorkloadSnapshot, p: int, targets: set[int]):
    """Greedy reassignment of every cell of ``p``; returns (moves, new loads)."""
    loads = snap.totals()
    loads[p] = 0.0
    # on equal load the drained instance wins, then the lower id
    heap = [(loads[q], 0 if q == p else 1, q) for q in sorted(targets | {p})]
    heapq.heapify(heap)
    cells = sorted(snap.loads[p][1].items(), key=lambda cw: (-cw[1], cw[0]))
    moves = []
    for cell, w in cells:
        load, tie, q = heapq.heappop(heap)
        moves.append((cell, p, q))
        load += w
        loads[q] = load
        heapq.heappush(heap, (load, tie, q))
    return moves, loads


def imbalance_remedy(snap: WorkloadSnapshot, targets: Optional[set[int]] = None) -> RemedyPlan:
    """Greedy remedy plan: try draining each instance in turn, keep the best.

    Instances are examined by descending W(p) (ties by id) and the cells of
    the drained instance by descending W(c) (ties by cell id). A plan is only
    adopted when it strictly lowers the degree. Moves that leave a cell where
    it was are dropped from the returned plan.
    """
    totals = snap.totals()
    before = degree(totals)
    best = RemedyPlan([], before, before)
    if len(totals) < 2:
        return best
    allowed = set(totals) if targets is None else set(targets) & set(totals)
    for p in sorted(totals, key=lambda q: (-totals[q], q)):
        moves, loads = _redistribute(snap, p, allowed - {p})
        after = degree(loads)
        if before - after > best.reduction:
            best = RemedyPlan([m for m in moves if m[1] != m[2]], before, after, p)
    return best


def apply_plan(snap: WorkloadSnapshot, plan: RemedyPlan) -> dict[int, float]:
    """Instance loads after executing ``plan`` on ``snap``."""
    loads = snap.totals()
    cell_w = {c: w for _, (_, cs) in snap.loads.items() for c, w in cs.items()}
    for cell, src, dst in plan.moves:
        loads[src] -= cell_w[cell]
        loads[dst] += cell_w[cell]
    return loads


def exhaustive_optimum(snap: WorkloadSnapshot) -> float:
    """Lowest degree reachable by reassigning the cells of any single instance."""
    totals = snap.totals()
    ids = sorted(totals)
    best = degree(totals)
    for p in ids:
        cells = list(snap.loads[p][1].values())
        base = dict(totals)
        base[p] = 0.0
        for assign in itertools.product(ids, repeat=len(cells)):
            loads = dict(base)
            for w, q in zip(cells, assign):
                loads[q] += w
            best = min(best, degree(loads))
    return best


@dataclass
class BalanceEvent:
    ts_ms: float
    degree_before: float
    degree_predicted: float
    n_moves: int
    bytes_migrated: int
    done_ms: Optional[float] = None
    aborted: bool = False

    def as_tuple(self):
        return (self.ts_ms, self.degree_before, self.degree_predicted, self.n_moves,
                self.bytes_migrated)


@dataclass
class _PlanState:
    plan_id: int
    moves: list[tuple[int, int, int]]
    event: BalanceEvent
    acked: set = field(default_factory=set)
    migrated: set = field(default_factory=set)
    handed_off: set = field(default_factory=set)
    broadcast_sent: bool = False


class Balancer(Actor):
    """Periodically plans and executes cell migrations.

    ``theta`` None means the relative default of :func:`default_theta`.
    """

    def __init__(self, n_lps: int, n_indexers: int, period_ms: float = 30_000.0,
                 window_ms: float = 10_000.0, theta: Optional[float] = None,
                 package_size: int = DEFAULT_PACKAGE_SIZE, enabled: bool = True):
        self.n_lps = n_lps
        self.n_indexers = n_indexers
        self.period_ms = period_ms
        self.window_ms = window_ms
        self.theta = theta
        self.package_size = package_size
        self.enabled = enabled
        self.reports: dict[int, WorkloadReport] = {}
        self.report_mismatches = 0
        self.plan: Optional[_PlanState] = None
        self.next_plan_id = 1
        self.events: list[BalanceEvent] = []
        self.alarms = 0
        self.completed_plans = 0

    def on_start(self, ctx: Context):
        if self.enabled:
            ctx.schedule(self.period_ms, Tick("balance"))

    def receive(self, ctx: Context, sender: ActorAddress, msg):
        if isinstance(msg, WorkloadReport):
            total = sum(w for _, w in msg.cells)
            if abs(total - msg.total) > 1e-6 * max(1.0, abs(total)):
                self.report_mismatches += 1
            self.reports[msg.instance] = msg
        elif isinstance(msg, Tick):
            ctx.schedule(self.period_ms, Tick("balance"))
            self.balance(ctx)
        elif isinstance(msg, RunPlan):
            try:
                if self.plan is not None:
                    raise ValueError("a plan is already in flight")
                self.execute_plan(ctx, list(msg.moves), 0.0, 0.0)
            except ValueError:
                self.alarms += 1
        elif isinstance(msg, ExpectAck):
            self._on_ack(ctx, msg)
        elif isinstance(msg, MigrationDone):
            self._on_done(ctx, msg)
        elif isinstance(msg, HandoffDone):
            self._on_handoff(ctx, msg)
        elif isinstance(msg, MigrationError):
            self._on_error(ctx, msg)
        else:
            raise TypeError(f"Balancer cannot handle {msg!r}")

    # ----------------------------------------------------------------- planning
    def snapshot(self, now_ms: float) -> tuple[WorkloadSnapshot, set[int]]:
        loads = {}
        fresh = set()
        for p in range(self.n_lps):
            r = self.reports.get(p)
            if r is None:
                loads[p] = (0.0, {})
                continue
            loads[p] = (r.total, dict(r.cells))
            if now_ms - r.window_end_ms <= 2 * self.window_ms:
                fresh.add(p)
        return WorkloadSnapshot(loads, self.window_ms), fresh

    def balance(self, ctx: Context) -> Optional[RemedyPlan]:
        if self.plan is not None or not self.reports:
            return None
        snap, fresh = self.snapshot(ctx.now_ms)
        totals = snap.totals()
        theta = self.theta if self.theta is not None else default_theta(totals)
        d = degree(totals)
        ctx.charge(sum(len(cs) for _, cs in snap.loads.values()) + len(totals))
        if d <= theta:
            return None
        plan = imbalance_remedy(snap, fresh)
        # zero-workload cells change nothing in the load model; moving them is pure cost
        cell_w = {c: w for _, (_, cs) in snap.loads.items() for c, w in cs.items()}
        plan.moves = [m for m in plan.moves if cell_w.get(m[0], 0.0) > 0]
        if plan.moves:
            self.execute_plan(ctx, plan.moves, d, plan.predicted_degree)
        return plan

    # ---------------------------------------------------------------- execution
    def execute_plan(self, ctx: Context, moves, degree_before: float, predicted: float):
        cells = [m[0] for m in moves]
        if len(set(cells)) != len(cells) or any(s == t for _, s, t in moves):
            raise ValueError("a plan moves every cell at most once and never onto its owner")
        event = BalanceEvent(ctx.now_ms, degree_before, predicted, len(moves), 0)
        self.events.append(event)
        if not moves:
            event.done_ms = ctx.now_ms
            return
        plan_id = self.next_plan_id
        self.next_plan_id += 1
        self.plan = _PlanState(plan_id, list(moves), event)
        for cell, src, dst in moves:
            ctx.send(_lp(dst), ExpectCell(plan_id, cell, src))

    def _move(self, cell: int):
        for m in self.plan.moves:
            if m[0] == cell:
                return m
        return None

    def _current(self, plan_id: int, cell: int) -> bool:
        return self.plan is not None and self.plan.plan_id == plan_id and self._move(cell) is not None

    def _on_ack(self, ctx: Context, msg: ExpectAck):
        if not self._current(msg.plan_id, msg.cell):
            return
        cell, src, dst = self._move(msg.cell)
        self.plan.acked.add(cell)
        ctx.send(_lp(src), MigrateOut(msg.plan_id, cell, dst, self.package_size))

    def _on_done(self, ctx: Context, msg: MigrationDone):
        if not self._current(msg.plan_id, msg.cell):
            return
        st = self.plan
        st.migrated.add(msg.cell)
        st.event.bytes_migrated += msg.n_objects * BYTES_PER_OBJECT
        if len(st.migrated) == len(st.moves) and not st.broadcast_sent:
            st.broadcast_sent = True
            bc = OwnerBroadcast(st.plan_id, tuple(st.moves))
            for i in range(self.n_indexers):
                ctx.send(ActorAddress(Kind.INDEXER, i), bc)
            for i in range(self.n_lps):
                ctx.send(_lp(i), bc)

    def _on_handoff(self, ctx: Context, msg: HandoffDone):
        if not self._current(msg.plan_id, msg.cell):
            return
        st = self.plan
        st.handed_off.add(msg.cell)
        if len(st.handed_off) == len(st.moves):
            st.event.done_ms = ctx.now_ms
            self.completed_plans += 1
            self.plan = None

    def _on_error(self, ctx: Context, msg: MigrationError):
        self.alarms += 1
        st = self.plan
        if st is None or st.plan_id != msg.plan_id or st.broadcast_sent:
            return
        for cell, src, dst in st.moves:
            abort = AbortMigration(st.plan_id, cell)
            ctx.send(_lp(src), abort)
            ctx.send(_lp(dst), abort)
        st.event.aborted = True
        st.event.done_ms = ctx.now_ms
        self.plan = None


def _lp(i: int) -> ActorAddress:
    return ActorAddress(Kind.LOCAL_PROCESSOR, i)
