"""INI configuration for deployments and benchmark runs.

Every key is optional; missing keys take the defaults listed in
``docs/configuration.md``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from typing import Optional

from ..core import ConfigurationError, GridConfig
from ..metasync import SyncConfig
from ..runtime import CostModel
from ..system import SystemConfig


@dataclass
class BenchOptions:
    window: int = 32
    timeout_ms: float = 10_000.0
    warmup_ms: float = 0.0
    load_batch: int = 256


def _opt(cp: configparser.ConfigParser, section: str, key: str, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    if conv is bool:
        return cp.getboolean(section, key)
    if raw.lower() in ("", "none", "auto") and default is None:
        return None
    try:
        return conv(raw)
    except ValueError:
        raise ConfigurationError(f"[{section}] {key}: cannot parse {raw!r}") from None


def parse_config(text: str) -> tuple[SystemConfig, BenchOptions]:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    d = SystemConfig()
    g = d.grid
    x0 = _opt(cp, "grid", "min_lon", float, g.min_lon)
    y0 = _opt(cp, "grid", "min_lat", float, g.min_lat)
    x1 = _opt(cp, "grid", "max_lon", float, g.max_lon)
    y1 = _opt(cp, "grid", "max_lat", float, g.max_lat)
    cols = _opt(cp, "grid", "cols", int, None)
    rows = _opt(cp, "grid", "rows", int, None)
    cw = _opt(cp, "grid", "cell_width", float, None)
    ch = _opt(cp, "grid", "cell_height", float, None)
    if cw is None:
        cw = (x1 - x0) / (cols or g.n_cols)
    if ch is None:
        ch = (y1 - y0) / (rows or g.n_rows)
    grid = GridConfig(x0, y0, x1, y1, cw, ch)

    sync = SyncConfig(_opt(cp, "sync", "period_ms", float, d.sync.period_ms),
                      _opt(cp, "sync", "acc_threshold", int, d.sync.acc_threshold),
                      _opt(cp, "sync", "broadcast_period_ms", float, d.sync.broadcast_period_ms))
    cost = CostModel(_opt(cp, "cost", "message_ns", int, d.cost.message_ns),
                     _opt(cp, "cost", "unit_ns", int, d.cost.unit_ns),
                     _opt(cp, "cost", "latency_ns", int, d.cost.latency_ns),
                     _opt(cp, "cost", "jitter_ns", int, d.cost.jitter_ns))
    cfg = SystemConfig(
        grid=grid,
        n_transformers=_opt(cp, "topology", "transformers", int, d.n_transformers),
        n_indexers=_opt(cp, "topology", "indexers", int, d.n_indexers),
        n_lps=_opt(cp, "topology", "local_processors", int, d.n_lps),
        n_aggregators=_opt(cp, "topology", "aggregators", int, d.n_aggregators),
        n_slots=_opt(cp, "slots", "n_slots", int, d.n_slots),
        pin_singletons=_opt(cp, "slots", "pin_singletons", bool, d.pin_singletons),
        sync=sync,
        window_ms=_opt(cp, "balancer", "window_ms", float, d.window_ms),
        balance_period_ms=_opt(cp, "balancer", "period_ms", float, d.balance_period_ms),
        theta=_opt(cp, "balancer", "theta", float, d.theta),
        package_size=_opt(cp, "balancer", "package_size", int, d.package_size),
        balancer_enabled=_opt(cp, "balancer", "enabled", bool, d.balancer_enabled),
        mode=_opt(cp, "engine", "mode", str, d.mode),
        knn_margin=_opt(cp, "engine", "knn_margin", int, d.knn_margin),
        assignment=_opt(cp, "engine", "assignment", str, d.assignment),
        mailbox_bound=_opt(cp, "engine", "mailbox_bound", int, d.mailbox_bound),
        cost=cost,
    )
    b = BenchOptions()
    bench = BenchOptions(_opt(cp, "bench", "window", int, b.window),
                         _opt(cp, "bench", "timeout_ms", float, b.timeout_ms),
                         _opt(cp, "bench", "warmup_ms", float, b.warmup_ms),
                         _opt(cp, "bench", "load_batch", int, b.load_batch))
    return cfg, bench


def load_config(path: Optional[str]) -> tuple[SystemConfig, BenchOptions]:
    if path is None:
        return parse_config("")
    with open(path) as fh:
        return parse_config(fh.read())
