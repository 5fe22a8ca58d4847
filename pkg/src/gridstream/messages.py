"""Immutable messages exchanged between actors.

Query keys (``QKey``) are ``(query_id, refresh, attempt)`` so that refreshes
of a continuous query and re-planned kNN attempts never share partial state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .core import KnnQuery, Movement, Neighbor, ObjectUpdate, Point, Query, QueryResult, RangeCountQuery
from .runtime import ActorAddress

QKey = tuple[int, int, int]

INSERT = "insert"
DELETE = "delete"
UPDATE = "update"  # same-cell move: a delete and an insert on one cell


@dataclass(frozen=True)
class Submit:
    query: Query
    issue_ms: float
    refresh: int = 0
    attempt: int = 0
    min_radius: Optional[float] = None
    all_cells: bool = False


@dataclass(frozen=True)
class UpdateBatch:
    """Several updates in one message (bulk loading)."""
    updates: tuple[ObjectUpdate, ...]


@dataclass(frozen=True)
class MovementBatch:
    movements: tuple[Movement, ...]


@dataclass(frozen=True)
class Deregister:
    query_id: int


@dataclass(frozen=True)
class CellOp:
    kind: str
    cell: int
    object_id: int
    point: Optional[Point]
    timestamp: int


@dataclass(frozen=True)
class CellOps:
    ops: tuple[CellOp, ...]


@dataclass(frozen=True)
class SubQuery:
    key: QKey
    body: Union[RangeCountQuery, KnnQuery]
    cells: Optional[tuple[int, ...]]  # None: every cell the processor holds
    fanout: int
    issue_ms: float
    aggregator: ActorAddress
    origin: int
    radius: Optional[float] = None  # kNN: candidate circle radius, None if all cells
    is_forward: bool = False


@dataclass(frozen=True)
class Partial:
    key: QKey
    body: Union[RangeCountQuery, KnnQuery]
    origin: int
    executor: int
    fanout: int
    issue_ms: float
    count: int = 0
    neighbors: tuple[Neighbor, ...] = ()
    radius: Optional[float] = None
    forwards: int = 0
    is_forward: bool = False


@dataclass(frozen=True)
class ResultRecord:
    """One line of the result stream."""
    query_id: int
    type: str
    result: QueryResult
    latency_ms: float
    issue_ms: float
    done_ms: float


@dataclass(frozen=True)
class MetaSyncReport:
    cell: int
    count: int
    epoch: int
    accumulative: bool
    sent_ms: float


@dataclass(frozen=True)
class MetaBroadcast:
    entries: tuple[tuple[int, int, int], ...]  # (cell, count, epoch)


@dataclass(frozen=True)
class OwnerBroadcast:
    plan_id: int
    moves: tuple[tuple[int, int, int], ...]  # (cell, old_owner, new_owner)


@dataclass(frozen=True)
class HandoffMarker:
    plan_id: int
    cell: int
    indexer: int


@dataclass(frozen=True)
class WorkloadReport:
    instance: int
    window_end_ms: float
    total: float
    cells: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class ExpectCell:
    plan_id: int
    cell: int
    source: int


@dataclass(frozen=True)
class ExpectAck:
    plan_id: int
    cell: int
    target: int


@dataclass(frozen=True)
class MigrateOut:
    plan_id: int
    cell: int
    target: int
    package_size: int


@dataclass(frozen=True)
class MigrationPackage:
    plan_id: int
    cell: int
    seq: int
    objects: tuple[tuple[int, float, float, int], ...]  # (id, lon, lat, ts)
    final: bool


@dataclass(frozen=True)
class MigrationDone:
    plan_id: int
    cell: int
    source: int
    n_objects: int
    n_packages: int


@dataclass(frozen=True)
class HandoffDone:
    plan_id: int
    cell: int
    source: int


@dataclass(frozen=True)
class MigrationError:
    plan_id: int
    cell: int
    reporter: int
    reason: str


@dataclass(frozen=True)
class AbortMigration:
    plan_id: int
    cell: int


# timer payloads
@dataclass(frozen=True)
class Tick:
    name: str


@dataclass(frozen=True)
class SyncDeadline:
    cell: int


@dataclass(frozen=True)
class ContinuePackaging:
    plan_id: int
    cell: int


@dataclass(frozen=True)
class Refresh:
    query_id: int


@dataclass(frozen=True)
class RunPlan:
    """Ask the balancer to execute an explicit list of (cell, source, target) moves."""
    moves: tuple[tuple[int, int, int], ...]
