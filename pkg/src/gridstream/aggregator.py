"""Aggregator: fan-in of partial results, kNN verification, continuous queries."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional

from .core import (ContinuousRegistration, Count, KnnQuery, Neighbors, Query, QueryResult,
                   RangeCountQuery, knn_order, query_type, stable_hash)
from .messages import Deregister, Partial, QKey, Refresh, ResultRecord, Submit
from .runtime import Actor, ActorAddress, Context, Kind

KNN_MAX_ATTEMPTS = 3


@dataclass
class PendingQuery:
    key: QKey
    body: object
    fanout: int
    issue_ms: float
    primaries: set = field(default_factory=set)
    forwarded: set = field(default_factory=set)
    forwards_expected: int = 0
    count: int = 0
    neighbors: list = field(default_factory=list)
    radius: Optional[float] = None

    @property
    def received(self) -> int:
        return len(self.primaries)

    @property
    def complete(self) -> bool:
        return (len(self.primaries) == self.fanout
                and len(self.forwarded) == self.forwards_expected)


@dataclass
class _Registration:
    query: Query
    interval_ms: float
    refresh: int = 0
    active: bool = True


def merge_neighbors(lists, k: int) -> list:
    """Global top-k of several local top-k lists under the (distance, id) order.

    An object caught mid-move between two processors can show up in two
    lists; only its nearest copy is kept.
    """
    out, seen = [], set()
    for n in heapq.merge(*(sorted(lst, key=knn_order) for lst in lists), key=knn_order):
        if n.object_id not in seen:
            seen.add(n.object_id)
            out.append(n)
            if len(out) == k:
                break
    return out


class Aggregator(Actor):
    def __init__(self, instance: int, n_indexers: int, salt: int = 0,
                 knn_max_attempts: int = KNN_MAX_ATTEMPTS):
        self.instance = instance
        self.n_indexers = n_indexers
        self.salt = salt
        self.knn_max_attempts = knn_max_attempts
        self.pending: dict[QKey, PendingQuery] = {}
        self.registrations: dict[int, _Registration] = {}
        self.duplicates = 0
        self.rejected_registrations = 0
        self.knn_retries = 0
        self.completed = 0

    def _indexer(self, query_id: int) -> ActorAddress:
        return ActorAddress(Kind.INDEXER, stable_hash(query_id, self.salt + 2) % self.n_indexers)

    def receive(self, ctx: Context, sender: ActorAddress, msg):
        if isinstance(msg, Partial):
            self.accept_partial(ctx, msg)
        elif isinstance(msg, Submit) and isinstance(msg.query.body, ContinuousRegistration):
            self._register(ctx, msg)
        elif isinstance(msg, Refresh):
            self._refresh(ctx, msg.query_id)
        elif isinstance(msg, Deregister):
            reg = self.registrations.get(msg.query_id)
            if reg is not None:
                reg.active = False
        else:
            raise TypeError(f"Aggregator cannot handle {msg!r}")

    # ---------------------------------------------------------------- partials
    def accept_partial(self, ctx: Context, p: Partial):
        ctx.charge(1 + len(p.neighbors))
        pq = self.pending.get(p.key)
        if pq is None:
            pq = self.pending[p.key] = PendingQuery(p.key, p.body, p.fanout, p.issue_ms,
                                                    radius=p.radius)
        if p.is_forward:
            tag = (p.origin, p.executor)
            if tag in pq.forwarded:
                self.duplicates += 1
                return
            pq.forwarded.add(tag)
        else:
            if p.origin in pq.primaries:
                self.duplicates += 1
                return
            pq.primaries.add(p.origin)
            pq.forwards_expected += p.forwards
        if isinstance(p.body, RangeCountQuery):
            pq.count += p.count
        else:
            pq.neighbors = merge_neighbors((pq.neighbors, p.neighbors), p.body.k)
        if pq.complete:
            del self.pending[p.key]
            self._finish(ctx, pq)

    def _finish(self, ctx: Context, pq: PendingQuery):
        qid, refresh, attempt = pq.key
        if isinstance(pq.body, KnnQuery):
            k = pq.body.k
            found = pq.neighbors
            unverified = pq.radius is not None and (len(found) < k or found[-1].distance > pq.radius)
            if unverified:
                # the candidate circle was planned from stale counts; re-plan
                self.knn_retries += 1
                query = Query(qid, pq.body)
                nxt = attempt + 1
                if len(found) >= k and nxt < self.knn_max_attempts - 1:
                    sub = Submit(query, pq.issue_ms, refresh, nxt, min_radius=found[-1].distance)
                else:
                    sub = Submit(query, pq.issue_ms, refresh, nxt, all_cells=True)
                ctx.send(self._indexer(qid), sub)
                return
            payload = Neighbors(tuple(found))
        else:
            payload = Count(pq.count)
        self.completed += 1
        kind = query_type(pq.body)
        if qid in self.registrations:
            kind = "continuous-" + kind
        ctx.emit(ResultRecord(qid, kind, QueryResult(qid, payload, refresh),
                              ctx.now_ms - pq.issue_ms, pq.issue_ms, ctx.now_ms))

    # -------------------------------------------------------------- continuous
    def _register(self, ctx: Context, msg: Submit):
        qid = msg.query.query_id
        if qid in self.registrations:
            self.rejected_registrations += 1
            return
        reg = msg.query.body
        self.registrations[qid] = _Registration(Query(qid, reg.inner), reg.refresh_interval_ms)
        self._refresh(ctx, qid)

    def _refresh(self, ctx: Context, qid: int):
        reg = self.registrations[qid]
        if not reg.active:
            return
        ctx.send(self._indexer(qid), Submit(reg.query, ctx.now_ms, reg.refresh))
        reg.refresh += 1
        ctx.schedule(reg.interval_ms, Refresh(qid))
