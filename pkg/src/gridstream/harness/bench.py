"""Workload replay and the run report.

A run has a load phase (the first tick of the data is ingested and the
system settles) and a measured phase in which queries are issued either at
a fixed rate (open loop) or as fast as the system answers them with a fixed
number outstanding (closed loop). The remaining updates are replayed
alongside, an equal share with every issued query.
"""

from __future__ import annotations

import csv
import json
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import ObjectUpdate, QueryBody
from ..messages import ResultRecord
from ..system import Cluster, SystemConfig


@dataclass
class RunReport:
    mode: str
    seed: Optional[int]
    issued: int
    completed: int
    throughput_qps: float
    latency_ms: dict[str, float]
    per_type: dict[str, dict[str, float]]
    balance_events: list[tuple]
    sync_messages: dict[str, int]
    saturated: bool
    measured_ms: float
    updates_replayed: int
    virtual_time: bool
    latencies: list[tuple[int, str, float, float]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("latencies")
        d["balance_events"] = [list(e) for e in self.balance_events]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write(self, path, latency_csv: Optional[str] = None):
        """Write the JSON report and a per-query latency CSV next to it."""
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")
        latency_csv = latency_csv or f"{path}.latency.csv"
        with open(latency_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("query_id", "type", "issue_ms", "latency_ms"))
            for row in self.latencies:
                w.writerow(row)
        return latency_csv


def latency_summary(values) -> dict[str, float]:
    if len(values) == 0:
        return {"p50": 0.0, "p95": 0.0, "p99": 0.0, "mean": 0.0, "max": 0.0}
    a = np.asarray(values, dtype=float)
    p50, p95, p99 = np.percentile(a, [50, 95, 99])
    return {"p50": float(p50), "p95": float(p95), "p99": float(p99),
            "mean": float(a.mean()), "max": float(a.max())}


def split_load(updates: Sequence[ObjectUpdate]) -> tuple[list, list]:
    """First tick (the initial positions) versus everything after it."""
    if not updates:
        return [], []
    t0 = min(u.timestamp for u in updates)
    return ([u for u in updates if u.timestamp == t0], [u for u in updates if u.timestamp != t0])


class _Driver:
    def __init__(self, cluster: Cluster, queries, stream, window: int):
        self.cl = cluster
        self.queries = list(queries)
        self.stream = list(stream)
        self.window = window
        self.next = 0
        self.ids: dict[int, int] = {}  # query id -> index
        self.done: dict[int, ResultRecord] = {}
        self.first_issue: Optional[float] = None
        self.replayed = 0
        self.closed = False
        self.stop_issuing_at = float("inf")

    def share(self, i: int) -> list:
        n, m = len(self.queries), len(self.stream)
        return self.stream[i * m // n:(i + 1) * m // n]

    def issue(self):
        i = self.next
        if i >= len(self.queries) or self.cl.now_ms > self.stop_issuing_at:
            return False
        self.next += 1
        ups = self.share(i)
        self.cl.ingest(ups)
        self.replayed += len(ups)
        if self.first_issue is None:
            self.first_issue = self.cl.now_ms
        qid = self.cl.submit(self.queries[i])
        self.ids[qid] = i
        return True

    def on_result(self, rec: ResultRecord):
        if rec.query_id in self.ids and rec.query_id not in self.done:
            self.done[rec.query_id] = rec
            if self.closed:
                self.on_slot_free()

    def on_slot_free(self):
        pass


def _warmup(cl: Cluster, queries, warmup_ms: float, window: int):
    """Closed-loop load so workload reports and rebalancing can happen before measuring."""
    if warmup_ms <= 0 or not queries:
        return
    rt = cl.runtime
    end = cl.now_ms + warmup_ms
    state = {"i": 0, "out": 0}

    def issue():
        if cl.now_ms >= end:
            return
        q = queries[state["i"] % len(queries)]
        state["i"] += 1
        state["out"] += 1
        ids.add(cl.submit(q))

    ids: set[int] = set()

    def sink(rec):
        if rec.query_id in ids:
            ids.discard(rec.query_id)
            state["out"] -= 1
            rt.call_at(cl.now_ms, issue)

    rt.add_sink(sink)
    for _ in range(window):
        issue()
    cl.run_for(warmup_ms)
    cl.wait_for(lambda: state["out"] == 0)
    # let an in-flight remedy finish before measuring
    cl.wait_for(lambda: cl.balancer.plan is None, max_ms=60_000.0)
    rt.sinks.remove(sink)
    cl.run_until_quiescent()


def run_benchmark(config: SystemConfig, updates: Sequence[ObjectUpdate],
                  queries: Sequence[QueryBody], *, seed: Optional[int] = 0,
                  mode: Optional[str] = None, rate: Optional[float] = None, window: int = 32,
                  duration_ms: Optional[float] = None, timeout_ms: float = 10_000.0,
                  warmup_ms: float = 0.0, max_ms: float = 600_000.0, tracing: bool = False,
                  record_events: bool = True, load_batch: int = 256) -> tuple[RunReport, Cluster]:
    """Replay ``updates`` and ``queries``; returns the report and the cluster.

    ``rate`` is queries per second (None: closed loop with ``window`` queries
    outstanding). With a ``seed`` all times are virtual. A run that has not
    issued and answered everything within ``duration_ms`` (else ``max_ms``)
    plus ``timeout_ms`` is reported as saturated.
    """
    if mode is not None:
        config = config.with_(mode=mode)
    cl = Cluster(config, seed=seed, tracing=tracing, record_events=record_events)
    load, stream = split_load(updates)
    cl.ingest(load, batch=load_batch)
    cl.settle()
    _warmup(cl, list(queries), warmup_ms, window)

    drv = _Driver(cl, queries, stream, window)
    rt = cl.runtime
    n = len(drv.queries)
    t0 = cl.now_ms
    if duration_ms is not None:
        drv.stop_issuing_at = t0 + duration_ms

    if rt.deterministic:
        rt.add_sink(drv.on_result)
        if rate is None:
            drv.closed = True
            drv.on_slot_free = lambda: rt.call_at(cl.now_ms, drv.issue)
            for _ in range(min(window, n)):
                drv.issue()
        else:
            for i in range(n):
                t = t0 + i * 1000.0 / rate
                if duration_ms is not None and t > t0 + duration_ms:
                    break
                rt.call_at(t, drv.issue)
        horizon = duration_ms if duration_ms is not None else max_ms
        cl.wait_for(lambda: drv.next >= n and len(drv.done) == drv.next, max_ms=horizon)
        # stragglers get one timeout to finish
        cl.wait_for(lambda: len(drv.done) == drv.next, max_ms=timeout_ms)
    else:
        _run_threaded(cl, drv, rate, window, timeout_ms)

    issued = drv.next
    recs = list(drv.done.values())
    lat = [r.latency_ms for r in recs]
    saturated = (len(recs) < issued or any(v > timeout_ms for v in lat)
                 or (duration_ms is None and issued < n))
    if recs:
        span = max(r.done_ms for r in recs) - drv.first_issue
    else:
        span = 0.0
    per_type: dict[str, list] = {}
    for r in recs:
        per_type.setdefault(r.type, []).append(r.latency_ms)
    per_type_summary = {}
    for t, vals in sorted(per_type.items()):
        s = latency_summary(vals)
        s["count"] = len(vals)
        per_type_summary[t] = s
    latencies = sorted((r.query_id, r.type, r.issue_ms, r.latency_ms) for r in recs)
    report = RunReport(
        mode=config.mode, seed=seed, issued=issued, completed=len(recs),
        throughput_qps=(len(recs) / (span / 1000.0)) if span > 0 else 0.0,
        latency_ms=latency_summary(lat), per_type=per_type_summary,
        balance_events=[e.as_tuple() for e in cl.balancer.events],
        sync_messages=cl.sync_message_counts(), saturated=bool(saturated),
        measured_ms=span, updates_replayed=drv.replayed, virtual_time=rt.deterministic,
        latencies=latencies)
    return report, cl


def _run_threaded(cl: Cluster, drv: _Driver, rate, window, timeout_ms):
    n = len(drv.queries)
    slots = threading.Semaphore(window)
    lock = threading.Lock()

    def sink(rec):
        with lock:
            fresh = rec.query_id in drv.ids and rec.query_id not in drv.done
            drv.on_result(rec)
        if fresh and rate is None:
            slots.release()

    cl.runtime.add_sink(sink)
    start = time.monotonic()
    for i in range(n):
        if rate is None:
            if not slots.acquire(timeout=timeout_ms / 1000.0):
                break
        else:
            delay = start + i / rate - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        with lock:
            if not drv.issue():
                break
    deadline = time.monotonic() + timeout_ms / 1000.0
    while time.monotonic() < deadline:
        with lock:
            if len(drv.done) == drv.next:
                break
        time.sleep(0.005)
    cl.stop()
