"""Distributed in-memory engine for moving-object location queries.

The engine runs on an in-process actor runtime: transformers keep the latest
position of every object, indexers hold a replicated grid index and plan
queries, local processors store the objects of their cells, aggregators merge
partial results, and two singletons keep cell metadata fresh and balance load.
"""

from .core import (ContinuousRegistration, Count, GridConfig, KnnQuery, Location, Neighbor,
                   Neighbors, NotFound, ObjectQuery, ObjectUpdate, Query, QueryResult,
                   RangeCountQuery)
from .metasync import SyncConfig
from .runtime import ActorAddress, CostModel, Kind, Runtime, SlotPolicy, deploy
from .system import Cluster, SystemConfig

__all__ = [
    "ActorAddress", "Cluster", "ContinuousRegistration", "CostModel", "Count", "GridConfig",
    "Kind", "KnnQuery", "Location", "Neighbor", "Neighbors", "NotFound", "ObjectQuery",
    "ObjectUpdate", "Query", "QueryResult", "RangeCountQuery", "Runtime", "SlotPolicy",
    "SyncConfig", "SystemConfig", "deploy",
]
