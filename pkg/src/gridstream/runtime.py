"""In-process actor runtime.

Two execution modes share one contract: every actor instance owns a FIFO
mailbox that is drained strictly serially, delivery is exactly-once and
FIFO per (sender, receiver) pair, and nothing is promised across pairs.

* Deterministic mode (``seed`` given): a discrete-event simulation over
  virtual time. Task slots are simulated resources; each handler call
  occupies a slot for a duration given by the :class:`CostModel`, so
  throughput and slot-count effects can be measured reproducibly.
  Interleaving among runnable actors and per-message network jitter are
  drawn from the seeded RNG.
* Threaded mode (no seed): one OS thread per task slot, wall-clock timers.
"""

from __future__ import annotations

import collections
import hashlib
import heapq
import itertools
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Optional

from .core import ConfigurationError, GridStreamError

log = logging.getLogger(__name__)

DEFAULT_MAILBOX_BOUND = 65_536


class Kind(str, Enum):
    __hash__ = str.__hash__  # Enum's default hash is a Python-level call

    TRANSFORMER = "Transformer"
    INDEXER = "Indexer"
    LOCAL_PROCESSOR = "LocalProcessor"
    AGGREGATOR = "Aggregator"
    METASYNC = "MetaSync"
    BALANCER = "Balancer"
    DRIVER = "Driver"


class ActorAddress:
    """(kind, instance) pair.

    Instances are interned, so equal addresses are identical objects and
    the many runtime tables keyed by address hit the identity fast path.
    """

    __slots__ = ("kind", "instance_id", "_hash", "_str")
    _interned: dict = {}

    def __new__(cls, kind: Kind, instance_id: int = 0):
        key = (kind, instance_id)
        try:
            return cls._interned[key]
        except KeyError:
            pass
        kind = Kind(kind)
        self = object.__new__(cls)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "instance_id", instance_id)
        object.__setattr__(self, "_str", f"{kind.value}:{instance_id}")
        object.__setattr__(self, "_hash", hash(self._str))
        cls._interned[key] = self
        return self

    def __setattr__(self, name, value):
        raise AttributeError("ActorAddress is immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if type(other) is not ActorAddress:
            return NotImplemented
        return self._hash == other._hash and self._str == other._str

    def __lt__(self, other):
        return (self.kind.value, self.instance_id) < (other.kind.value, other.instance_id)

    def __str__(self):
        return self._str

    def __repr__(self):
        return f"ActorAddress({self.kind.value}, {self.instance_id})"

    def __reduce__(self):
        return (ActorAddress, (self.kind, self.instance_id))


DRIVER = ActorAddress(Kind.DRIVER, 0)


@dataclass
class SlotPolicy:
    n_slots: int
    pinned: dict[ActorAddress, int] = field(default_factory=dict)

    def validate(self, addresses: Iterable[ActorAddress]):
        addresses = list(addresses)
        if self.n_slots < 1:
            raise ConfigurationError("n_slots must be positive")
        if len(self.pinned) > self.n_slots:
            raise ConfigurationError(
                f"{len(self.pinned)} pinned actors but only {self.n_slots} slots")
        slots = list(self.pinned.values())
        if len(set(slots)) != len(slots):
            raise ConfigurationError("two actors pinned to the same slot")
        if any(not 0 <= s < self.n_slots for s in slots):
            raise ConfigurationError("pinned slot index out of range")
        known = set(addresses)
        for addr in self.pinned:
            if addr not in known:
                raise ConfigurationError(f"pinned actor {addr} is not deployed")
        if len(self.pinned) == self.n_slots and len(known) > len(self.pinned):
            raise ConfigurationError("every slot is pinned; unpinned actors could never run")

    @property
    def shared_slots(self) -> list[int]:
        taken = set(self.pinned.values())
        return [s for s in range(self.n_slots) if s not in taken]


@dataclass(frozen=True)
class Envelope:
    sender: ActorAddress
    to: ActorAddress
    payload: Any
    seq: int


@dataclass(frozen=True)
class Timer:
    """Payload wrapper for a self-scheduled timer message."""
    payload: Any


@dataclass
class CostModel:
    """Virtual service times for the simulated cluster (nanoseconds)."""
    message_ns: int = 2_000
    unit_ns: int = 100
    latency_ns: int = 20_000
    jitter_ns: int = 5_000


class RoutingError(GridStreamError):
    pass


class DeadlockError(GridStreamError):
    pass


class Actor:
    """Base class for function instances.

    Subclasses implement :meth:`receive`; the runtime never calls it
    concurrently for the same instance.
    """

    address: ActorAddress

    def on_start(self, ctx: "Context"):
        pass

    def receive(self, ctx: "Context", sender: ActorAddress, msg: Any):
        raise NotImplementedError


class Context:
    """Handle given to a handler for the duration of one message."""

    __slots__ = ("runtime", "address", "now_ms", "_units", "_out")

    def __init__(self, runtime: "Runtime", address: ActorAddress, now_ms: float):
        self.runtime = runtime
        self.address = address
        self.now_ms = now_ms
        self._units = 0
        self._out: list[tuple[ActorAddress, Any]] = []

    def send(self, to: ActorAddress, payload: Any):
        if to not in self.runtime.actors:
            raise RoutingError(f"{self.address} -> unknown address {to}")
        self._out.append((to, payload))

    def schedule(self, delay_ms: float, payload: Any):
        self.runtime._schedule_timer(self.address, delay_ms, payload)

    def charge(self, units: int):
        self._units += units

    def emit(self, record: Any):
        self.runtime._emit(record)

    def trace(self, kind: str, **fields):
        self.runtime.trace_event(kind, self.now_ms, **fields)


def payload_digest(payload: Any) -> str:
    return hashlib.blake2b(repr(payload).encode(), digest_size=8).hexdigest()


def _message_kind(payload: Any) -> str:
    if isinstance(payload, Timer):
        return "Timer." + type(payload.payload).__name__
    return type(payload).__name__


class Runtime:
    """Actor container; construct through :func:`deploy` or directly."""

    def __init__(self, policy: SlotPolicy, seed: Optional[int] = None,
                 cost_model: Optional[CostModel] = None,
                 mailbox_bound: int = DEFAULT_MAILBOX_BOUND,
                 record_events: bool = True, batch: int = 16, tracing: bool = False):
        self.policy = policy
        self.seed = seed
        self.deterministic = seed is not None
        self.cost = cost_model or CostModel()
        self.mailbox_bound = mailbox_bound
        self.record_events = record_events and self.deterministic
        self.actors: dict[ActorAddress, Actor] = {}
        self.mailboxes: dict[ActorAddress, collections.deque] = {}
        self._events_raw: list[tuple] = []
        self._event_lines: list[str] = []
        self.traces: list[tuple] = []
        self.sinks: list[Callable[[Any], None]] = []
        self.tracing = tracing
        self.slot_runs: collections.Counter = collections.Counter()
        self.slot_busy_ns: collections.Counter = collections.Counter()
        self.mailbox_high_water: collections.Counter = collections.Counter()
        self.delivered = 0
        self._seq_pair: dict[tuple[ActorAddress, ActorAddress], int] = collections.defaultdict(int)
        self._global_seq = 0
        self._started = False
        self._lock = threading.RLock()
        self._batch = batch
        if self.deterministic:
            self._rng = random.Random(seed)
            self._t = 0
            self._events: list = []
            self._ev_seq = itertools.count()
            self._busy: set[ActorAddress] = set()
            self._ready_shared: list[ActorAddress] = []
            self._ready_pos: dict[ActorAddress, int] = {}
            self._free_shared = list(reversed(policy.shared_slots))
            self._pinned_free: dict[ActorAddress, bool] = {}
            self._last_arrival: dict[tuple[ActorAddress, ActorAddress], int] = {}
            self._inflight = 0
        else:
            self._threads: list[threading.Thread] = []
            self._t0 = time.monotonic()
            self._cond = threading.Condition(self._lock)
            self._pending = 0
            self._scheduled: set[ActorAddress] = set()
            self._queues: dict[int, Any] = {}
            self._timer_heap: list = []
            self._timer_seq = itertools.count()
            self._stopping = False
            self._progress = 0
            self._in_handler: set[ActorAddress] = set()
            self.reentry_violations = 0

    # ------------------------------------------------------------------ setup
    def add(self, actor: Actor, address: ActorAddress):
        if address in self.actors:
            raise ConfigurationError(f"duplicate address {address}")
        actor.address = address
        self.actors[address] = actor
        self.mailboxes[address] = collections.deque()

    def start(self):
        self.policy.validate(self.actors)
        self._started = True
        if self.deterministic:
            for addr in self.policy.pinned:
                self._pinned_free[addr] = True
        else:
            self._start_threads()
        for addr, actor in self.actors.items():
            ctx = Context(self, addr, self.now_ms)
            actor.on_start(ctx)
            self._flush_outgoing(addr, ctx, self._now_ns() if self.deterministic else 0)

    # ------------------------------------------------------------------ clock
    @property
    def now_ms(self) -> float:
        if self.deterministic:
            return self._t / 1e6
        return (time.monotonic() - self._t0) * 1e3

    def _now_ns(self) -> int:
        return self._t if self.deterministic else int((time.monotonic() - self._t0) * 1e9)

    # ---------------------------------------------------------------- tracing
    def trace_event(self, kind: str, now_ms: float, **fields):
        if self.tracing:
            with self._lock:
                self.traces.append((now_ms, kind, fields))

    def add_sink(self, sink: Callable[[Any], None]):
        self.sinks.append(sink)

    def _emit(self, record):
        for sink in self.sinks:
            sink(record)

    # -------------------------------------------------------------- messaging
    def send(self, env: Envelope):
        """Inject a prepared envelope (its ``seq`` is re-stamped per pair)."""
        self.tell(env.to, env.payload, sender=env.sender)

    def tell(self, to: ActorAddress, payload: Any, sender: ActorAddress = DRIVER):
        """Deliver ``payload`` from outside the actor system.

        Blocks (or, in deterministic mode, advances the simulation) while the
        destination mailbox is at its bound.
        """
        if to not in self.actors:
            raise RoutingError(f"unknown address {to}")
        if self.deterministic:
            while len(self.mailboxes[to]) >= self.mailbox_bound:
                if not self._step():
                    raise DeadlockError(f"mailbox of {to} full and no progress possible")
            self._enqueue(sender, to, payload, self._t)
            self._dispatch()
        else:
            with self._cond:
                while len(self.mailboxes[to]) >= self.mailbox_bound:
                    self._cond.wait(0.05)
                self._deliver_threaded(sender, to, payload)

    def _next_seq(self, sender, to) -> int:
        key = (sender, to)
        self._seq_pair[key] += 1
        return self._seq_pair[key]

    def _flush_outgoing(self, sender: ActorAddress, ctx: Context, t_done: int):
        if self.deterministic:
            for to, payload in ctx._out:
                self._enqueue(sender, to, payload, t_done)
        else:
            with self._cond:
                for to, payload in ctx._out:
                    self._deliver_threaded(sender, to, payload)
        ctx._out = []

    # ------------------------------------------------------- deterministic mode
    def _push(self, t: int, kind: str, data):
        heapq.heappush(self._events, (t, next(self._ev_seq), kind, data))

    def _enqueue(self, sender, to, payload, t_send: int):
        env = Envelope(sender, to, payload, self._next_seq(sender, to))
        if sender == to or sender == DRIVER:
            arrival = t_send
        else:
            arrival = t_send + self.cost.latency_ns
            if self.cost.jitter_ns:
                arrival += self._rng.randrange(self.cost.jitter_ns + 1)
        key = (sender, to)
        arrival = max(arrival, self._last_arrival.get(key, 0))
        self._last_arrival[key] = arrival
        self._inflight += 1
        if arrival <= self._t:
            self._arrive(env)
        else:
            self._push(arrival, "deliver", env)

    def _arrive(self, env: Envelope):
        self._inflight -= 1
        box = self.mailboxes[env.to]
        box.append(env)
        if len(box) > self.mailbox_high_water[env.to]:
            self.mailbox_high_water[env.to] = len(box)
        self._mark_ready(env.to)

    def _mark_ready(self, addr: ActorAddress):
        if addr in self._busy or not self.mailboxes[addr]:
            return
        if addr in self.policy.pinned:
            return
        if addr not in self._ready_pos:
            self._ready_pos[addr] = len(self._ready_shared)
            self._ready_shared.append(addr)

    def _take_ready(self) -> ActorAddress:
        i = self._rng.randrange(len(self._ready_shared))
        addr = self._ready_shared[i]
        last = self._ready_shared.pop()
        if last != addr:
            self._ready_shared[i] = last
            self._ready_pos[last] = i
        del self._ready_pos[addr]
        return addr

    def _dispatch(self):
        for addr, free in self._pinned_free.items():
            if free and self.mailboxes[addr] and addr not in self._busy:
                self._run(addr, self.policy.pinned[addr])
        while self._free_shared and self._ready_shared:
            addr = self._take_ready()
            self._run(addr, self._free_shared.pop())

    def _run(self, addr: ActorAddress, slot: int):
        if addr in self.policy.pinned:
            self._pinned_free[addr] = False
        self._busy.add(addr)
        env = self.mailboxes[addr].popleft()
        actor = self.actors[addr]
        ctx = Context(self, addr, self._t / 1e6)
        msg = env.payload
        if self.record_events:
            self._global_seq += 1
            self._events_raw.append((self._global_seq, env.sender, addr, msg))
        self.delivered += 1
        if isinstance(msg, Timer):
            actor.receive(ctx, addr, msg.payload)
        else:
            actor.receive(ctx, env.sender, msg)
        cost = self.cost.message_ns + ctx._units * self.cost.unit_ns
        self.slot_runs[(slot, addr)] += 1
        self.slot_busy_ns[slot] += cost
        done = self._t + cost
        self._flush_outgoing(addr, ctx, done)
        self._push(done, "done", (addr, slot))

    def _schedule_timer(self, addr: ActorAddress, delay_ms: float, payload):
        if self.deterministic:
            due = self._t + max(0, int(round(delay_ms * 1e6)))
            self._push(due, "timer", (addr, payload))
        else:
            with self._cond:
                due = time.monotonic() + delay_ms / 1e3
                heapq.heappush(self._timer_heap, (due, next(self._timer_seq), addr, payload))
                self._cond.notify_all()

    def _step(self, until_ns: Optional[int] = None, messages_only: bool = False) -> bool:
        """Process the next event. Returns False when nothing can happen."""
        if not self._events:
            return False
        t, _, kind, data = self._events[0]
        if until_ns is not None and t > until_ns:
            return False
        if messages_only and kind == "timer" and not self._has_message_work():
            return False
        heapq.heappop(self._events)
        self._t = max(self._t, t)
        if kind == "deliver":
            self._arrive(data)
        elif kind == "done":
            addr, slot = data
            self._busy.discard(addr)
            if addr in self.policy.pinned:
                self._pinned_free[addr] = True
            else:
                self._free_shared.append(slot)
                self._mark_ready(addr)
        elif kind == "timer":
            addr, payload = data
            self._enqueue(addr, addr, Timer(payload), self._t)
        elif kind == "call":
            data()
        self._dispatch()
        return True

    def _has_message_work(self) -> bool:
        return bool(self._busy) or self._inflight > 0 or any(self.mailboxes.values())

    def _check_deadlock(self):
        if any(self.mailboxes.values()) and not self._busy:
            stuck = [str(a) for a, b in self.mailboxes.items() if b]
            raise DeadlockError(f"no runnable actor but non-empty mailboxes: {stuck[:5]}")

    def call_at(self, t_ms: float, fn: Callable[[], None]):
        """Run ``fn`` (outside any actor) at virtual time ``t_ms``."""
        if not self.deterministic:
            raise RuntimeError("call_at is only available in deterministic mode")
        self._push(max(self._t, int(round(t_ms * 1e6))), "call", fn)

    # ----------------------------------------------------------- threaded mode
    def _start_threads(self):
        import queue
        shared_q: queue.Queue = queue.Queue()
        for slot in self.policy.shared_slots:
            self._queues[slot] = shared_q
        for addr, slot in self.policy.pinned.items():
            self._queues[slot] = queue.Queue()
        for slot in range(self.policy.n_slots):
            th = threading.Thread(target=self._worker, args=(slot,), daemon=True,
                                  name=f"slot-{slot}")
            th.start()
            self._threads.append(th)
        th = threading.Thread(target=self._timer_loop, daemon=True, name="timers")
        th.start()
        self._threads.append(th)

    def _queue_for(self, addr: ActorAddress):
        slot = self.policy.pinned.get(addr)
        if slot is None:
            slot = self.policy.shared_slots[0]
        return self._queues[slot]

    def _deliver_threaded(self, sender, to, payload):
        # caller holds self._cond
        env = Envelope(sender, to, payload, self._next_seq(sender, to))
        box = self.mailboxes[to]
        box.append(env)
        if len(box) > self.mailbox_high_water[to]:
            self.mailbox_high_water[to] = len(box)
        self._pending += 1
        if to not in self._scheduled:
            self._scheduled.add(to)
            self._queue_for(to).put(to)

    def _worker(self, slot: int):
        q = self._queues[slot]
        while True:
            addr = q.get()
            if addr is None:
                q.put(None)
                return
            actor = self.actors[addr]
            for _ in range(self._batch):
                with self._cond:
                    box = self.mailboxes[addr]
                    if not box:
                        break
                    env = box.popleft()
                    if addr in self._in_handler:
                        self.reentry_violations += 1
                    self._in_handler.add(addr)
                ctx = Context(self, addr, self.now_ms)
                msg = env.payload
                try:
                    if isinstance(msg, Timer):
                        actor.receive(ctx, addr, msg.payload)
                    else:
                        actor.receive(ctx, env.sender, msg)
                except Exception:
                    log.exception("handler of %s failed on %r", addr, msg)
                with self._cond:
                    self._in_handler.discard(addr)
                    self.slot_runs[(slot, addr)] += 1
                    self.delivered += 1
                    for to, payload in ctx._out:
                        self._deliver_threaded(addr, to, payload)
                    self._pending -= 1
                    self._progress += 1
                    self._cond.notify_all()
            with self._cond:
                if self.mailboxes[addr]:
                    q.put(addr)
                else:
                    self._scheduled.discard(addr)

    def _timer_loop(self):
        with self._cond:
            while not self._stopping:
                now = time.monotonic()
                while self._timer_heap and self._timer_heap[0][0] <= now:
                    _, _, addr, payload = heapq.heappop(self._timer_heap)
                    self._deliver_threaded(addr, addr, Timer(payload))
                wait = 0.05
                if self._timer_heap:
                    wait = min(wait, max(0.0, self._timer_heap[0][0] - now))
                self._cond.wait(wait)

    def stop(self):
        if self.deterministic or not self._started:
            return
        with self._cond:
            self._stopping = True
            self._cond.notify_all()
        seen = set()
        for q in self._queues.values():
            if id(q) not in seen:
                seen.add(id(q))
                q.put(None)
        for th in self._threads:
            th.join(timeout=2)

    # -------------------------------------------------------------- execution
    def run_until_quiescent(self, stall_timeout_s: float = 10.0):
        """Drain all mailboxes and in-flight messages.

        Timers that fall due while work remains are processed; the run stops
        at the first instant when only future timers are left.
        """
        if self.deterministic:
            self._dispatch()
            while self._step(messages_only=True):
                pass
            self._check_deadlock()
            return
        last_progress, last_change = -1, time.monotonic()
        with self._cond:
            while self._pending > 0:
                if self._progress != last_progress:
                    last_progress, last_change = self._progress, time.monotonic()
                elif time.monotonic() - last_change > stall_timeout_s:
                    raise DeadlockError(f"{self._pending} messages pending with no progress")
                self._cond.wait(0.05)

    def run_for(self, duration_ms: float):
        """Advance time by ``duration_ms`` processing every due event (timers included)."""
        if self.deterministic:
            end = self._t + int(round(duration_ms * 1e6))
            self._dispatch()
            while self._step(until_ns=end):
                pass
            self._t = max(self._t, end)
            return
        time.sleep(duration_ms / 1e3)

    def run_until(self, predicate: Callable[[], bool], max_ms: float = float("inf")):
        """Deterministic mode: step until ``predicate()`` holds or time runs out."""
        end = None if max_ms == float("inf") else self._t + int(max_ms * 1e6)
        self._dispatch()
        while not predicate():
            if not self._step(until_ns=end):
                break

    # ---------------------------------------------------------------- metrics
    def slot_occupancy(self) -> dict[int, int]:
        """Number of handler executions per slot."""
        out: dict[int, int] = collections.Counter()
        for (slot, _), n in self.slot_runs.items():
            out[slot] += n
        return dict(out)

    def actors_on_slot(self, slot: int) -> set[ActorAddress]:
        return {a for (s, a) in self.slot_runs if s == slot}

    @property
    def event_log(self) -> list[str]:
        """One line per delivery: ``seq,from,to,kind,payload_digest``.

        Digests are computed on first access; payloads are immutable.
        """
        lines = self._event_lines
        for seq, sender, to, msg in self._events_raw[len(lines):]:
            lines.append(f"{seq},{sender},{to},{_message_kind(msg)},{payload_digest(msg)}")
        return lines

    def event_log_text(self) -> str:
        return "".join(line + "\n" for line in self.event_log)


def deploy(topology: Mapping[Kind, int], policy: SlotPolicy,
           factories: Mapping[Kind, Callable[[int], Actor]],
           seed: Optional[int] = None, **runtime_kwargs) -> Runtime:
    """Create and start one actor per (kind, instance) of ``topology``."""
    for kind in (Kind.TRANSFORMER, Kind.INDEXER, Kind.LOCAL_PROCESSOR, Kind.AGGREGATOR):
        if topology.get(kind, 0) < 1:
            raise ConfigurationError(f"need at least one {kind.value}")
    for kind in (Kind.METASYNC, Kind.BALANCER):
        if topology.get(kind, 0) != 1:
            raise ConfigurationError(f"need exactly one {kind.value}")
    rt = Runtime(policy, seed=seed, **runtime_kwargs)
    for kind in Kind:
        for i in range(topology.get(kind, 0)):
            rt.add(factories[kind](i), ActorAddress(kind, i))
    rt.start()
    return rt
