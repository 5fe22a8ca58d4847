"""``gridstream run``: replay a workload and write a run report."""

from __future__ import annotations

import argparse
import logging
import sys

from ..core import GridStreamError
from ..indexer import MODES
from .bench import run_benchmark, split_load
from .config import load_config
from .generator import GeneratorConfig, Hotspot, generate
from .ingest import ingest_csv
from .queries import QueryMix, generate_queries, read_queries

log = logging.getLogger("gridstream")


def parse_gen(spec: str) -> list[tuple[str, str]]:
    """``gen:a=1,b=2,a=3`` -> [("a", "1"), ("b", "2"), ("a", "3")]."""
    body = spec[len("gen:"):]
    out = []
    for part in filter(None, body.split(",")):
        key, sep, value = part.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {part!r}")
        out.append((key.strip(), value.strip()))
    return out


def data_from_spec(spec: str, bounds) -> list:
    if not spec.startswith("gen:"):
        return ingest_csv(spec)
    kw: dict = {"bounds": bounds, "hotspots": []}
    for key, value in parse_gen(spec):
        if key == "n":
            kw["n_objects"] = int(value)
        elif key == "ticks":
            kw["n_ticks"] = int(value)
        elif key == "step":
            kw["step_stddev"] = float(value)
        elif key == "seed":
            kw["seed"] = int(value)
        elif key == "hotspot":
            x, y, r, f = (float(v) for v in value.split(":"))
            kw["hotspots"].append(Hotspot((x, y), r, f))
        else:
            raise ValueError(f"unknown data generator key {key!r}")
    return generate(GeneratorConfig(**kw))


def queries_from_spec(spec: str, updates, bounds) -> list:
    if not spec.startswith("gen:"):
        return read_queries(spec)
    n, seed = 1000, 0
    mix: dict = {}
    for key, value in parse_gen(spec):
        if key == "n":
            n = int(value)
        elif key == "seed":
            seed = int(value)
        elif key in ("range", "knn", "object"):
            mix[f"{key}_fraction"] = float(value)
        elif key == "area":
            mix["area_ratios"] = tuple(float(v) for v in value.split(":"))
        elif key == "k":
            mix["k_values"] = tuple(int(v) for v in value.split(":"))
        else:
            raise ValueError(f"unknown query generator key {key!r}")
    load, _ = split_load(updates)
    points = [(u.lon, u.lat) for u in load]
    mix.setdefault("n_object_ids", max(1, len({u.object_id for u in load})))
    return generate_queries(points, bounds, QueryMix(**mix), n, seed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridstream")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="replay a workload and write a report")
    run.add_argument("--config", help="INI configuration file")
    run.add_argument("--data", required=True, help="CSV path or gen:n=..,ticks=..,step=..,hotspot=x:y:r:f")
    run.add_argument("--queries", required=True, help="query file or gen:n=..,range=..,knn=..,area=..,k=..")
    run.add_argument("--mode", choices=MODES, help="overrides [engine] mode")
    run.add_argument("--rate", type=float, default=None,
                     help="queries per second; omitted or 0 means closed loop at max rate")
    run.add_argument("--duration", type=float, default=None, help="seconds of query issuing")
    run.add_argument("--seed", type=int, default=None,
                     help="run deterministically in virtual time with this seed")
    run.add_argument("--report", required=True, help="output JSON path (latency CSV alongside)")
    run.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, bench = load_config(args.config)
        bounds = cfg.grid.bounds
        updates = data_from_spec(args.data, bounds)
        queries = queries_from_spec(args.queries, updates, bounds)
        log.info("%d updates, %d queries", len(updates), len(queries))
        report, cluster = run_benchmark(
            cfg, updates, queries, seed=args.seed, mode=args.mode, rate=args.rate or None,
            window=bench.window,
            duration_ms=None if args.duration is None else args.duration * 1000.0,
            timeout_ms=bench.timeout_ms, warmup_ms=bench.warmup_ms,
            load_batch=bench.load_batch, record_events=False)
    except (GridStreamError, ValueError, OSError) as e:
        print(f"gridstream: error: {e}", file=sys.stderr)
        return 2
    csv_path = report.write(args.report)
    print(f"{report.completed}/{report.issued} queries, {report.throughput_qps:.1f} q/s, "
          f"p50 {report.latency_ms['p50']:.3f} ms, p99 {report.latency_ms['p99']:.3f} ms"
          f"{' (saturated)' if report.saturated else ''}; report {args.report}, latencies {csv_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
