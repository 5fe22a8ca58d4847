"""Watch the balancer drain a processor that owns a hotspot."""

import random

from gridstream import Cluster, GridConfig, ObjectUpdate, SystemConfig


def loads(cl):
    return [sum(len(objs) for objs in lp.store.cells.values()) for lp in cl.lps]


def main():
    cfg = SystemConfig(grid=GridConfig.square(8), n_lps=4, window_ms=1000.0,
                       balance_period_ms=2000.0)
    cl = Cluster(cfg, seed=3)
    rng = random.Random(2)
    # every object lives in the lower-left quarter
    cl.ingest([ObjectUpdate(i, 0, rng.random() * 0.5, rng.random() * 0.5) for i in range(2000)])
    cl.settle()
    print("objects per processor before:", loads(cl))
    for step in range(60):
        cl.ingest([ObjectUpdate(rng.randrange(2000), step + 1, rng.random() * 0.5,
                                rng.random() * 0.5) for _ in range(100)])
        cl.run_for(100.0)
    cl.settle()
    for e in cl.balancer.events:
        if e.n_moves:
            print(f"plan at {e.ts_ms:.0f} ms: {e.n_moves} moves, imbalance "
                  f"{e.degree_before:.0f} -> predicted {e.degree_predicted:.0f}"
                  f"{' (aborted)' if e.aborted else ''}")
    print("objects per processor after: ", loads(cl))


if __name__ == "__main__":
    main()
