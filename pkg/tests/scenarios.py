"""Small hand-built scenarios for the range-count and kNN walkthroughs.

Range scenario: a 4x4 grid of unit cells; the query rectangle overlaps
cells 5 and 6 only, which belong to different processors, and holds 4 and
6 objects of those cells respectively (plus decoys outside it).

kNN scenario: a 6x6 grid of unit cells and k=2 around q=(1.8, 0.3). With
exact metadata the candidate circle covers cells {0,1,2,3,6,7,8,9}, which
belong to processors 0, 1 and 2; the two nearest objects are 105 and 106.
"""

from gridstream.core import GridConfig, KnnQuery, ObjectUpdate, RangeCountQuery

RANGE_GRID = GridConfig(0.0, 0.0, 4.0, 4.0, 1.0, 1.0)
# columns 0-1 -> processor 0, columns 2-3 -> processor 1
RANGE_OWNER = tuple(0 if RANGE_GRID.col_row(c)[0] < 2 else 1 for c in range(RANGE_GRID.n_cells))
RANGE_QUERY = RangeCountQuery((1.2, 1.1, 2.8, 1.8))


def range_objects():
    inside_5 = [(1.3, 1.2), (1.5, 1.5), (1.9, 1.7), (1.25, 1.79)]
    inside_6 = [(2.1, 1.2), (2.2, 1.3), (2.4, 1.4), (2.6, 1.5), (2.7, 1.6), (2.79, 1.75)]
    decoys = [(1.1, 1.5), (1.5, 1.9), (2.9, 1.5), (0.5, 0.5), (3.5, 3.5), (2.5, 2.5)]
    pts = inside_5 + inside_6 + decoys
    return [ObjectUpdate(i + 1, 0, x, y) for i, (x, y) in enumerate(pts)]


KNN_GRID = GridConfig(0.0, 0.0, 6.0, 6.0, 1.0, 1.0)


def _knn_owner(c):
    col = KNN_GRID.col_row(c)[0]
    return 0 if col < 2 else 1 if col == 2 else 2 if col == 3 else 3


KNN_OWNER = tuple(_knn_owner(c) for c in range(KNN_GRID.n_cells))
KNN_QUERY = KnnQuery((1.8, 0.3), 2)
KNN_CANDIDATES = (0, 1, 2, 3, 6, 7, 8, 9)

KNN_POINTS = {
    101: (0.3, 0.8),   # cell 0
    102: (3.5, 0.5),   # cell 3
    103: (2.5, 1.5),   # cell 8
    104: (4.5, 4.5),   # cell 28, outside the circle
    105: (1.6, 0.5),   # cell 1, nearest
    106: (2.3, 0.2),   # cell 2, second
    107: (1.2, 1.3),   # cell 7
    108: (0.5, 4.5),   # cell 24, outside
    109: (5.5, 0.5),   # cell 5, outside
    110: (3.9, 1.9),   # cell 9
}


def knn_objects():
    return [ObjectUpdate(oid, 0, x, y) for oid, (x, y) in sorted(KNN_POINTS.items())]
