"""Load a few thousand moving objects and ask each kind of query."""

from gridstream import (Cluster, ContinuousRegistration, GridConfig, KnnQuery, ObjectQuery,
                        RangeCountQuery, SystemConfig)
from gridstream.harness.generator import GeneratorConfig, Hotspot, generate


def main():
    cfg = SystemConfig(grid=GridConfig.square(16), n_lps=4, balancer_enabled=False)
    cl = Cluster(cfg, seed=1)
    ups = generate(GeneratorConfig(5000, step_stddev=0.01, n_ticks=3, seed=1,
                                   hotspots=[Hotspot((0.3, 0.7), 0.1, 0.6)]))
    cl.ingest(ups, batch=128)
    cl.settle()
    print(f"virtual time after loading: {cl.now_ms:.2f} ms")

    print("objects near the hotspot:", cl.query(RangeCountQuery((0.2, 0.6, 0.4, 0.8))).value)
    near = cl.query(KnnQuery((0.5, 0.5), 5))
    for n in near.items:
        print(f"  object {n.object_id:5d} at distance {n.distance:.4f}")
    print("object 42 is at", cl.query(ObjectQuery(42)))

    # a continuous query is re-answered every interval until deregistered
    qid = cl.submit(ContinuousRegistration(RangeCountQuery((0.0, 0.0, 0.5, 0.5)), 50))
    cl.run_for(200.0)
    cl.deregister(qid)
    cl.run_until_quiescent()
    print("continuous counts:", [r.result.payload.value for r in cl.results_for(qid)])


if __name__ == "__main__":
    main()
