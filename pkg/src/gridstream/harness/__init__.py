"""Data generation, ingestion, workload replay and metric collection."""

from .bench import RunReport, run_benchmark
from .generator import GeneratorConfig, Hotspot, generate
from .ingest import IngestError, ingest_csv, write_csv
from .queries import QueryMix, generate_queries, read_queries, write_queries
from .staleness import StalenessReport, check_staleness

__all__ = [
    "GeneratorConfig", "Hotspot", "IngestError", "QueryMix", "RunReport", "StalenessReport",
    "check_staleness", "generate", "generate_queries", "ingest_csv", "read_queries",
    "run_benchmark", "write_csv", "write_queries",
]
