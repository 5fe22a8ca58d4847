import json
import math

import numpy as np
import pytest

from gridstream.core import (ConfigurationError, GridConfig, KnnQuery, ObjectQuery, ObjectUpdate,
                             RangeCountQuery)
from gridstream.harness.bench import run_benchmark, split_load
from gridstream.harness.cli import main
from gridstream.harness.config import load_config, parse_config
from gridstream.harness.generator import (GeneratorConfig, Hotspot, final_positions, generate,
                                          generate_arrays)
from gridstream.harness.ingest import IngestError, ingest_csv, parse_csv, write_csv
from gridstream.harness.queries import (QueryMix, block_counts, generate_queries, read_queries,
                                        write_queries)
from gridstream.harness.staleness import check_staleness
from gridstream.system import SystemConfig

# ------------------------------------------------------------------ CSV ingest


def test_empty_file_gives_empty_stream(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert ingest_csv(p) == []


def test_three_lines_with_and_without_header(tmp_path):
    body = "1,0,0.5,0.25\n2,0,-3.5,1e-3\n1,1,0.75,0.5\n"
    expect = [ObjectUpdate(1, 0, 0.5, 0.25), ObjectUpdate(2, 0, -3.5, 0.001),
              ObjectUpdate(1, 1, 0.75, 0.5)]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text(body)
    b.write_text("object_id,timestamp,lon,lat\n" + body)
    assert ingest_csv(a) == expect and ingest_csv(b) == expect


def test_malformed_lines_within_and_over_budget(tmp_path):
    good = "".join(f"{i},0,0.1,0.2\n" for i in range(199))
    ok = tmp_path / "ok.csv"
    ok.write_text(good + "oops,0,1,1\n")
    ups, rep = parse_csv(ok)
    assert len(ups) == 199 and rep.malformed == 1 and rep.lines == 200
    bad = tmp_path / "bad.csv"
    bad.write_text(good + "oops,0,1,1\n1,2,3\n1,x,1,1\n")
    with pytest.raises(IngestError) as e:
        ingest_csv(bad)
    assert e.value.report.malformed == 3 and "line 200" in str(e.value)


def test_generate_write_ingest_round_trip(tmp_path):
    ups = generate(GeneratorConfig(300, n_ticks=4, seed=3))
    p = tmp_path / "rt.csv"
    write_csv(p, ups)
    assert ingest_csv(p) == ups


# ------------------------------------------------------------------- generator


def test_zero_step_keeps_objects_static():
    pos = generate_arrays(GeneratorConfig(500, step_stddev=0.0, n_ticks=5, seed=1))
    assert np.array_equal(pos[0], pos[-1])


def test_hotspot_concentration_of_final_positions():
    h = Hotspot((0.3, 0.6), 0.05, 0.95)
    cfg = GeneratorConfig(10_000, step_stddev=0.01, hotspots=[h], n_ticks=20, seed=7)
    final = generate_arrays(cfg)[-1]
    inside = np.hypot(final[:, 0] - 0.3, final[:, 1] - 0.6) <= 0.05
    assert inside.mean() >= 0.93


def test_generator_is_seeded_and_stays_in_bounds():
    cfg = GeneratorConfig(400, bounds=(-2.0, 1.0, 3.0, 2.0), step_stddev=0.3, n_ticks=30, seed=5)
    a, b = generate(cfg), generate(cfg)
    assert a == b
    assert generate(GeneratorConfig(400, bounds=(-2.0, 1.0, 3.0, 2.0), step_stddev=0.3,
                                    n_ticks=30, seed=6)) != a
    assert all(-2.0 <= u.lon <= 3.0 and 1.0 <= u.lat <= 2.0 for u in a)
    assert len(final_positions(a)) == 400


def test_generator_rejects_invalid_configs():
    with pytest.raises(ValueError):
        GeneratorConfig(10, hotspots=[Hotspot((0.5, 0.5), 0.1, 0.7), Hotspot((0.2, 0.2), 0.1, 0.4)])
    with pytest.raises(ValueError):
        GeneratorConfig(10, n_ticks=0)


def test_split_load_uses_first_tick():
    ups = generate(GeneratorConfig(50, n_ticks=3, seed=0))
    load, rest = split_load(ups)
    assert len(load) == 50 and all(u.timestamp == 0 for u in load) and len(rest) == 100


# --------------------------------------------------------------------- queries


def test_uniform_data_gives_uniform_query_centers():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (40_000, 2))
    n, blocks = 16_000, 8
    qs = generate_queries(pts, (0, 0, 1, 1), QueryMix(1.0, 0.0, area_ratios=(0.0001,)), n,
                          seed=1, blocks=blocks)
    centers = np.array([((q.rect[0] + q.rect[2]) / 2, (q.rect[1] + q.rect[3]) / 2) for q in qs])
    observed = block_counts(centers, (0, 0, 1, 1), blocks).ravel()
    expected = n / blocks ** 2
    chi2 = float(((observed - expected) ** 2 / expected).sum())
    # 63 degrees of freedom: the 99.9th percentile is about 103
    assert chi2 < 103.0


def test_all_data_in_one_block_puts_every_query_there():
    rng = np.random.default_rng(2)
    pts = rng.uniform(0.51, 0.53, (500, 2))   # inside block (16, 16) of 32
    qs = generate_queries(pts, (0, 0, 1, 1), QueryMix(0.0, 1.0), 300, seed=0)
    for q in qs:
        assert math.floor(q.q[0] * 32) == 16 and math.floor(q.q[1] * 32) == 16


def test_k_and_area_values_pass_through_exactly():
    pts = np.random.default_rng(3).uniform(0, 1, (1000, 2))
    mix = QueryMix(0.5, 0.5, area_ratios=(0.0016, 0.01), k_values=(5, 50))
    qs = generate_queries(pts, (0, 0, 2, 1), mix, 400, seed=4)
    ranges = [q for q in qs if isinstance(q, RangeCountQuery)]
    knns = [q for q in qs if isinstance(q, KnnQuery)]
    assert ranges and knns
    assert {q.k for q in knns} == {5, 50}
    areas = {round((q.rect[2] - q.rect[0]) * (q.rect[3] - q.rect[1]) / 2.0, 12) for q in ranges}
    assert areas == {0.0016, 0.01}
    # same aspect ratio as the region
    assert all(math.isclose((q.rect[2] - q.rect[0]) / (q.rect[3] - q.rect[1]), 2.0) for q in ranges)


def test_query_file_round_trip(tmp_path):
    qs = [RangeCountQuery((0.1, 0.2, 0.3, 0.4)), KnnQuery((0.5, 0.6), 7), ObjectQuery(12)]
    p = tmp_path / "q.csv"
    write_queries(p, qs)
    assert read_queries(p) == qs
    p.write_text("circle,1,2\n")
    with pytest.raises(ValueError, match=":1:"):
        read_queries(p)


# ---------------------------------------------------------------------- config


def test_config_defaults_and_overrides():
    cfg, bench = parse_config("")
    assert cfg == SystemConfig() and bench.window == 32
    text = """
[grid]
cols = 16
rows = 8
[topology]
local_processors = 6
[sync]
acc_threshold = 10
[balancer]
theta = 2.5
enabled = no
[engine]
mode = broadcast
knn_margin = auto
[bench]
window = 4
"""
    cfg, bench = parse_config(text)
    assert (cfg.grid.n_cols, cfg.grid.n_rows) == (16, 8)
    assert cfg.n_lps == 6 and cfg.sync.acc_threshold == 10 and cfg.theta == 2.5
    assert not cfg.balancer_enabled and cfg.mode == "broadcast" and cfg.knn_margin is None
    assert bench.window == 4
    with pytest.raises(ConfigurationError):
        parse_config("[topology]\nindexers = many\n")
    assert load_config(None)[0] == SystemConfig()


# -------------------------------------------------------------------- benchmark


def small_run(**kw):
    cfg = SystemConfig(grid=GridConfig.square(8), n_lps=3)
    ups = generate(GeneratorConfig(1000, n_ticks=3, seed=1))
    qs = generate_queries([(u.lon, u.lat) for u in ups[:1000]], (0, 0, 1, 1),
                          QueryMix(0.5, 0.4, 0.1, n_object_ids=1000), 150, seed=2)
    return run_benchmark(cfg, ups, qs, seed=3, **kw)


def test_closed_loop_report_conserves_queries():
    rep, cl = small_run()
    assert rep.issued == rep.completed == 150 and not rep.saturated
    assert rep.updates_replayed == 2000 and rep.throughput_qps > 0
    assert sum(v["count"] for v in rep.per_type.values()) == 150
    assert rep.latency_ms["p50"] <= rep.latency_ms["p95"] <= rep.latency_ms["p99"] <= rep.latency_ms["max"]
    assert json.loads(rep.to_json())["issued"] == 150


def test_open_loop_far_beyond_capacity_is_marked_saturated():
    rep, _ = small_run(rate=1e7, timeout_ms=0.05)
    assert rep.saturated


def test_open_loop_duration_limits_issuing():
    rep, _ = small_run(rate=1000.0, duration_ms=50.0)
    assert rep.issued <= 51 and rep.completed == rep.issued and not rep.saturated


# -------------------------------------------------------------------------- CLI


def test_cli_runs_are_reproducible(tmp_path, capsys):
    args = ["run", "--data", "gen:n=800,ticks=3,step=0.01,seed=2,hotspot=0.5:0.5:0.1:0.8",
            "--queries", "gen:n=120,range=0.5,knn=0.5,area=0.0016,k=5,seed=1", "--seed", "9"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(args + ["--report", str(a)]) == 0
    assert main(args + ["--report", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.json.latency.csv").read_bytes() == (tmp_path / "b.json.latency.csv").read_bytes()
    rep = json.loads(a.read_text())
    assert rep["issued"] == rep["completed"] == 120 and rep["virtual_time"]
    assert "120/120 queries" in capsys.readouterr().out


def test_cli_reports_bad_input(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert main(["run", "--data", str(missing), "--queries", "gen:n=1",
                 "--report", str(tmp_path / "r.json")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["run", "--data", "gen:n=10,color=red", "--queries", "gen:n=1",
                 "--report", str(tmp_path / "r.json")]) == 2


# -------------------------------------------------------------------- staleness


def test_staleness_checker_on_synthetic_traces():
    truth = [(float(t), "truth", {"cell": 0, "delta": 1}) for t in range(10)]
    # the index catches up every four steps
    fresh = truth + [(t, "meta_apply", {"indexer": 0, "entries": ((0, c, 0),)})
                     for t, c in ((3.5, 4), (7.5, 8), (9.5, 10))]
    rep = check_staleness(fresh, threshold=4, n_indexers=1, window_ms=1.0)
    assert rep.ok and rep.max_error == 4
    # an index that never hears about the cell drifts past the bound
    rep = check_staleness(truth, threshold=4, n_indexers=1, window_ms=1.0)
    assert not rep.ok and rep.violations and rep.final_mismatches == [(0, 0, 0, 10)]
