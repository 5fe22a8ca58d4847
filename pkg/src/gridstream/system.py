"""Wiring of a complete deployment and helpers to drive and inspect it."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .aggregator import Aggregator
from .balancer import DEFAULT_PACKAGE_SIZE, Balancer
from .core import (ConfigurationError, ContinuousRegistration, GridConfig, KnnQuery,
                   ObjectQuery, ObjectUpdate, Query, QueryBody, RangeCountQuery, stable_hash)
from .indexer import Indexer, aggregator_for, assign_cells
from .local_processor import INCOMING, LocalProcessor
from .messages import Deregister, ResultRecord, RunPlan, Submit, UpdateBatch
from .metasync import MetaSync, SyncConfig
from .runtime import DEFAULT_MAILBOX_BOUND, ActorAddress, CostModel, Kind, SlotPolicy, deploy
from .transformer import Transformer


@dataclass
class SystemConfig:
    """Everything needed to build one deployment.

    ``knn_margin`` None means the accumulative sync threshold. ``theta`` None
    means the relative default of the balancer.
    """

    grid: GridConfig = field(default_factory=lambda: GridConfig.square(32, 1.0))
    n_transformers: int = 1
    n_indexers: int = 2
    n_lps: int = 4
    n_aggregators: int = 2
    n_slots: int = 4
    pin_singletons: bool = True
    sync: SyncConfig = field(default_factory=SyncConfig)
    window_ms: float = 10_000.0
    balance_period_ms: float = 30_000.0
    theta: Optional[float] = None
    package_size: int = DEFAULT_PACKAGE_SIZE
    balancer_enabled: bool = True
    mode: str = "cheetah"
    knn_margin: Optional[int] = None
    assignment: str = "tiles"
    owner: Optional[tuple[int, ...]] = None  # explicit cell -> processor map, overrides assignment
    mailbox_bound: int = DEFAULT_MAILBOX_BOUND
    cost: CostModel = field(default_factory=CostModel)
    salt: int = 0

    def topology(self) -> dict[Kind, int]:
        return {Kind.TRANSFORMER: self.n_transformers, Kind.INDEXER: self.n_indexers,
                Kind.LOCAL_PROCESSOR: self.n_lps, Kind.AGGREGATOR: self.n_aggregators,
                Kind.METASYNC: 1, Kind.BALANCER: 1}

    def slot_policy(self) -> SlotPolicy:
        pinned = {}
        if self.pin_singletons and self.n_slots >= 3:
            pinned = {ActorAddress(Kind.METASYNC, 0): 0, ActorAddress(Kind.BALANCER, 0): 1}
        return SlotPolicy(self.n_slots, pinned)

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


class Cluster:
    """A running deployment plus a driver.

    With a ``seed`` everything runs in virtual time and is reproducible; the
    ``run_*`` methods advance the simulation. Without one, actors run on
    threads and the same methods wait in wall-clock time.
    """

    def __init__(self, config: SystemConfig, seed: Optional[int] = None, tracing: bool = False,
                 record_events: bool = True, policy: Optional[SlotPolicy] = None):
        self.config = config
        cfg = config
        if cfg.n_lps < 1 or cfg.n_indexers < 1:
            raise ConfigurationError("need at least one indexer and one local processor")
        if cfg.owner is not None:
            if len(cfg.owner) != cfg.grid.n_cells or not all(0 <= o < cfg.n_lps for o in cfg.owner):
                raise ConfigurationError("owner map must name a valid processor for every cell")
            self.owner = list(cfg.owner)
        else:
            self.owner = assign_cells(cfg.grid, cfg.n_lps, cfg.assignment, seed or 0)
        margin = cfg.sync.acc_threshold if cfg.knn_margin is None else cfg.knn_margin
        factories = {
            Kind.TRANSFORMER: lambda i: Transformer(cfg.grid, cfg.n_indexers, cfg.salt),
            Kind.INDEXER: lambda i: Indexer(i, cfg.grid, self.owner, cfg.n_lps, cfg.n_aggregators,
                                            cfg.mode, margin, cfg.salt),
            Kind.LOCAL_PROCESSOR: lambda i: LocalProcessor(i, cfg.grid, self.owner, cfg.n_indexers,
                                                           cfg.sync, cfg.window_ms),
            Kind.AGGREGATOR: lambda i: Aggregator(i, cfg.n_indexers, cfg.salt),
            Kind.METASYNC: lambda i: MetaSync(cfg.sync, cfg.n_indexers),
            Kind.BALANCER: lambda i: Balancer(cfg.n_lps, cfg.n_indexers, cfg.balance_period_ms,
                                              cfg.window_ms, cfg.theta, cfg.package_size,
                                              cfg.balancer_enabled),
        }
        self.results: list[ResultRecord] = []
        self._by_id: dict[int, list[ResultRecord]] = {}
        self._next_qid = 1
        self.issued: Counter = Counter()
        self.runtime = deploy(cfg.topology(), policy or cfg.slot_policy(), factories, seed=seed,
                              cost_model=cfg.cost, mailbox_bound=cfg.mailbox_bound,
                              record_events=record_events, tracing=tracing)
        self.runtime.add_sink(self._collect)

    # ------------------------------------------------------------------ driver
    def _collect(self, rec: ResultRecord):
        self.results.append(rec)
        self._by_id.setdefault(rec.query_id, []).append(rec)

    def ingest(self, updates: Iterable[ObjectUpdate], batch: int = 1):
        """Feed updates to their transformers, optionally ``batch`` per message."""
        n = self.config.n_transformers
        if batch <= 1:
            for u in updates:
                self.runtime.tell(ActorAddress(Kind.TRANSFORMER, u.object_id % n), u)
            return
        pending: dict[int, list[ObjectUpdate]] = {}
        for u in updates:
            t = u.object_id % n
            buf = pending.setdefault(t, [])
            buf.append(u)
            if len(buf) >= batch:
                self.runtime.tell(ActorAddress(Kind.TRANSFORMER, t), UpdateBatch(tuple(buf)))
                buf.clear()
        for t, buf in sorted(pending.items()):
            if buf:
                self.runtime.tell(ActorAddress(Kind.TRANSFORMER, t), UpdateBatch(tuple(buf)))

    def new_query_id(self) -> int:
        qid = self._next_qid
        self._next_qid += 1
        return qid

    def submit(self, body: QueryBody, query_id: Optional[int] = None) -> int:
        """Issue a query now; returns its id. Results arrive in :attr:`results`."""
        qid = self.new_query_id() if query_id is None else query_id
        self._next_qid = max(self._next_qid, qid + 1)
        q = Query(qid, body)
        cfg = self.config
        sub = Submit(q, self.runtime.now_ms)
        if isinstance(body, ObjectQuery):
            to = ActorAddress(Kind.TRANSFORMER, body.object_id % cfg.n_transformers)
        elif isinstance(body, (RangeCountQuery, KnnQuery)):
            to = ActorAddress(Kind.INDEXER, stable_hash(qid, cfg.salt + 2) % cfg.n_indexers)
        elif isinstance(body, ContinuousRegistration):
            to = ActorAddress(Kind.AGGREGATOR, aggregator_for(qid, cfg.n_aggregators, cfg.salt))
        else:
            raise TypeError(f"cannot submit {body!r}")
        self.issued[type(body).__name__] += 1
        self.runtime.tell(to, sub)
        return qid

    def deregister(self, query_id: int):
        cfg = self.config
        self.runtime.tell(ActorAddress(Kind.AGGREGATOR, aggregator_for(query_id, cfg.n_aggregators,
                                                                       cfg.salt)),
                          Deregister(query_id))

    def run_plan(self, moves):
        """Ask the balancer to migrate ``moves`` = [(cell, source, target), ...]."""
        self.runtime.tell(ActorAddress(Kind.BALANCER, 0), RunPlan(tuple(moves)))

    def query(self, body: QueryBody, max_ms: float = 60_000.0):
        """Submit and wait for the (first) result payload."""
        qid = self.submit(body)
        self.wait_for(lambda: qid in self._by_id, max_ms)
        recs = self._by_id.get(qid)
        if not recs:
            raise TimeoutError(f"query {qid} did not complete")
        return recs[0].result.payload

    def result(self, query_id: int) -> Optional[ResultRecord]:
        recs = self._by_id.get(query_id)
        return recs[0] if recs else None

    def results_for(self, query_id: int) -> list[ResultRecord]:
        return list(self._by_id.get(query_id, ()))

    def wait_for(self, predicate, max_ms: float = 60_000.0):
        rt = self.runtime
        if rt.deterministic:
            rt.run_until(predicate, max_ms)
            return
        import time
        end = time.monotonic() + max_ms / 1e3
        while not predicate() and time.monotonic() < end:
            time.sleep(0.001)

    def run_until_quiescent(self):
        self.runtime.run_until_quiescent()

    def run_for(self, ms: float):
        self.runtime.run_for(ms)

    def settle(self):
        """Quiesce, then wait long enough for every pending metadata sync to land."""
        self.run_until_quiescent()
        s = self.config.sync
        self.run_for(s.period_ms + s.broadcast_period_ms + 1.0)
        self.run_until_quiescent()

    @property
    def now_ms(self) -> float:
        return self.runtime.now_ms

    def stop(self):
        self.runtime.stop()

    # --------------------------------------------------------------- inspection
    def actor(self, kind: Kind, i: int = 0):
        return self.runtime.actors[ActorAddress(kind, i)]

    @property
    def lps(self) -> list[LocalProcessor]:
        return [self.actor(Kind.LOCAL_PROCESSOR, i) for i in range(self.config.n_lps)]

    @property
    def indexers(self) -> list[Indexer]:
        return [self.actor(Kind.INDEXER, i) for i in range(self.config.n_indexers)]

    @property
    def aggregators(self) -> list[Aggregator]:
        return [self.actor(Kind.AGGREGATOR, i) for i in range(self.config.n_aggregators)]

    @property
    def transformers(self) -> list[Transformer]:
        return [self.actor(Kind.TRANSFORMER, i) for i in range(self.config.n_transformers)]

    @property
    def balancer(self) -> Balancer:
        return self.actor(Kind.BALANCER)

    @property
    def metasync(self) -> MetaSync:
        return self.actor(Kind.METASYNC)

    def table_size(self) -> int:
        return sum(len(t.table) for t in self.transformers)

    def latest_positions(self) -> dict[int, tuple[float, float]]:
        out = {}
        for t in self.transformers:
            for oid, row in t.table.rows.items():
                out[oid] = (row[0], row[1])
        return out

    def stored_objects(self) -> Counter:
        """object id -> number of authoritative copies across processors."""
        seen: Counter = Counter()
        for lp in self.lps:
            for c, objs in lp.store.cells.items():
                if lp.status.get(c) == INCOMING:
                    continue
                seen.update(objs.keys())
        return seen

    def cell_counts(self) -> list[int]:
        counts = [0] * self.config.grid.n_cells
        for lp in self.lps:
            for c, objs in lp.store.cells.items():
                if lp.status.get(c) != INCOMING:
                    counts[c] += len(objs)
        return counts

    def owner_maps_agree(self) -> bool:
        maps = [ix.index.owner for ix in self.indexers]
        return all(m == maps[0] for m in maps)

    def sync_message_counts(self) -> dict[str, int]:
        total: Counter = Counter()
        for lp in self.lps:
            total.update(lp.sync_messages)
        return dict(total)

