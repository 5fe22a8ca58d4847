"""Throughput of full pruning, no metadata pruning, and broadcast on a skewed workload."""

from gridstream import GridConfig, SystemConfig
from gridstream.harness.bench import run_benchmark
from gridstream.harness.generator import GeneratorConfig, Hotspot, generate
from gridstream.harness.queries import QueryMix, generate_queries


def main():
    cfg = SystemConfig(grid=GridConfig.square(32), n_lps=4, n_slots=8, balancer_enabled=False)
    ups = generate(GeneratorConfig(10_000, step_stddev=0.005, n_ticks=2, seed=1,
                                   hotspots=[Hotspot((0.2, 0.2), 0.1, 0.95)]))
    pts = [(u.lon, u.lat) for u in ups[:10_000]]
    qs = generate_queries(pts, cfg.grid.bounds, QueryMix(0.5, 0.5, area_ratios=(0.0016,)), 400, seed=2)
    for mode in ("cheetah", "cheetah-minus", "broadcast"):
        rep, _ = run_benchmark(cfg, ups, qs, seed=1, mode=mode)
        print(f"{mode:14s} {rep.throughput_qps:8.0f} q/s  p50 {rep.latency_ms['p50']:.3f} ms  "
              f"p99 {rep.latency_ms['p99']:.3f} ms")


if __name__ == "__main__":
    main()
