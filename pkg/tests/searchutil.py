"""Helpers for building stage results and brute-force derivation oracles in tests."""

import itertools

import numpy as np

from hiernas.network import edge_list
from hiernas.operators import OperatorKind as K
from hiernas.search import StageResult


def make_result(rows, alphas, n_nodes, space="S1"):
    """StageResult whose softmax equals ``alphas`` (same table for both cell types)."""
    beta = tuple(np.log(np.asarray(a, dtype=np.float64)) for a in alphas)
    rows = tuple(tuple(r) for r in rows)
    act = tuple(max((k for k in r if k is not K.Zero), key=lambda k: a[r.index(k)]) for r, a in zip(rows, alphas))
    return StageResult(2, space, {"normal": rows, "reduce": rows}, {"normal": beta, "reduce": beta},
                       {"normal": act, "reduce": act}, n_nodes=n_nodes)


def random_table(rng, n_nodes, pool):
    rows, alphas = [], []
    for _ in edge_list(n_nodes):
        size = int(rng.integers(1, len(pool) + 1))
        members = [pool[i] for i in sorted(rng.choice(len(pool), size=size, replace=False))]
        row = [K.Zero] + members
        rows.append(row)
        alphas.append(rng.dirichlet(np.ones(len(row))))
    return rows, alphas


def brute_force(rows, alphas, n_nodes):
    """Enumerate every edge pair and operator choice per node; best total edge score, then total alpha."""
    edges = edge_list(n_nodes)
    nodes = []
    for j in range(n_nodes):
        incoming = [e for e, (_, dst) in enumerate(edges) if dst == j + 2]
        best, best_key = None, None
        for e1, e2 in itertools.combinations(incoming, 2):
            for i1, k1 in enumerate(rows[e1]):
                for i2, k2 in enumerate(rows[e2]):
                    if K.Zero in (k1, k2):
                        continue
                    s = (1 - alphas[e1][rows[e1].index(K.Zero)]) + (1 - alphas[e2][rows[e2].index(K.Zero)])
                    key = (s, alphas[e1][i1] + alphas[e2][i2])
                    if best_key is None or key > best_key:
                        best_key, best = key, [(edges[e1][0], k1), (edges[e2][0], k2)]
        nodes.append(best)
    return nodes
