"""Metadata freshness measured from a traced run.

Truth is the per-cell object count as applied by the processors (``truth``
trace events carry +1/-1 deltas). Each indexer's view changes on
``meta_apply`` events. Between events both are constant, so checking the
bound just before and just after every event covers the whole run.
"""

from __future__ import annotations

import bisect
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional


@dataclass
class StalenessReport:
    max_error: int = 0
    max_age_ms: float = 0.0
    max_propagation_ms: float = 0.0
    window_ms: float = 0.0
    checks: int = 0
    violations: list[tuple] = field(default_factory=list)  # (t, indexer, cell, error, drift)
    final_mismatches: list[tuple] = field(default_factory=list)  # (indexer, cell, meta, truth)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.final_mismatches


class _Timeline:
    """Step function of one cell's true count."""

    def __init__(self):
        self.times: list[float] = [float("-inf")]
        self.values: list[int] = [0]

    def add(self, t: float, delta: int):
        v = self.values[-1] + delta
        if self.times[-1] == t:
            self.values[-1] = v
        else:
            self.times.append(t)
            self.values.append(v)

    def at(self, t: float, before: bool = False) -> int:
        i = (bisect.bisect_left if before else bisect.bisect_right)(self.times, t) - 1
        return self.values[max(i, 0)]

    def drift(self, t: float, window: float, before: bool = False) -> int:
        """max |truth(t) - truth(s)| for s in [t - window, t] (or [.., t) if ``before``)."""
        now = self.at(t, before)
        lo = bisect.bisect_right(self.times, t - window) - 1
        hi = (bisect.bisect_left if before else bisect.bisect_right)(self.times, t)
        seg = self.values[max(lo, 0):max(hi, 1)]
        return max(abs(now - v) for v in seg)


def propagation_delays(traces) -> list[float]:
    """LP send -> indexer apply delay for every applied metadata entry."""
    sends: dict[tuple, list[float]] = defaultdict(list)
    out = []
    for t, kind, f in traces:
        if kind == "sync_send":
            sends[(f["cell"], f["count"], f["epoch"])].append(t)
        elif kind == "meta_apply":
            for cell, count, epoch in f["entries"]:
                ts = sends.get((cell, count, epoch))
                if ts:
                    out.append(t - ts[-1])
    return out


def check_staleness(traces, threshold: int, n_indexers: int,
                    window_ms: Optional[float] = None) -> StalenessReport:
    """Check ``error < threshold + drift(window)`` at every event.

    ``window_ms`` defaults to the largest observed send-to-apply delay, i.e.
    one broadcast period plus transit in practice.
    """
    traces = sorted(traces, key=lambda e: e[0])  # stable: keeps handler order at equal times
    delays = propagation_delays(traces)
    rep = StalenessReport(max_propagation_ms=max(delays, default=0.0))
    window = rep.max_propagation_ms if window_ms is None else window_ms
    rep.window_ms = window

    truth: dict[int, _Timeline] = defaultdict(_Timeline)
    for t, kind, f in traces:
        if kind == "truth":
            truth[f["cell"]].add(t, f["delta"])

    meta: dict[tuple[int, int], int] = defaultdict(int)
    epochs: dict[tuple[int, int], int] = defaultdict(int)
    diverged: dict[tuple[int, int], float] = {}

    def check(t, ix, cell, before):
        tl = truth[cell]
        err = abs(meta[(ix, cell)] - tl.at(t, before))
        drift = tl.drift(t, window, before)
        rep.checks += 1
        rep.max_error = max(rep.max_error, err)
        if err >= threshold + drift:
            rep.violations.append((t, ix, cell, err, drift))
        key = (ix, cell)
        if err and key not in diverged:
            diverged[key] = t
        elif not err and key in diverged:
            rep.max_age_ms = max(rep.max_age_ms, t - diverged.pop(key))

    i = 0
    events = [(t, kind, f) for t, kind, f in traces if kind in ("truth", "meta_apply")]
    while i < len(events):
        t = events[i][0]
        j = i
        touched: set = set()
        while j < len(events) and events[j][0] == t:
            _, kind, f = events[j]
            touched |= {f["cell"]} if kind == "truth" else {c for c, _, _ in f["entries"]}
            j += 1
        for ix in range(n_indexers):
            for cell in touched:
                check(t, ix, cell, before=True)
        for _, kind, f in events[i:j]:
            if kind == "meta_apply":
                for cell, count, epoch in f["entries"]:
                    key = (f["indexer"], cell)
                    if epoch >= epochs[key]:  # same rule as the indexer replicas
                        meta[key], epochs[key] = count, epoch
        for ix in range(n_indexers):
            for cell in touched:
                check(t, ix, cell, before=False)
        i = j

    end = events[-1][0] if events else 0.0
    for (ix, cell), since in diverged.items():
        rep.max_age_ms = max(rep.max_age_ms, end - since)
    for cell, tl in truth.items():
        for ix in range(n_indexers):
            if meta[(ix, cell)] != tl.values[-1]:
                rep.final_mismatches.append((ix, cell, meta[(ix, cell)], tl.values[-1]))
    return rep
