"""Order-quality and prediction-quality measures.

Includes the protein-signaling consensus graph and the nine per-condition
orders as a static fixture for metric regression tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scm import Dag


@dataclass
class OrderComparison:
    raw_violations: int
    normalized: float
    per_node_rank_shift: list
    per_node_flip_fraction: list


def _positions(order):
    order = tuple(order)
    d = len(order)
    if sorted(order) != list(range(d)):
        raise ValueError("not a permutation")
    pos = [0] * d
    for k, node in enumerate(order):
        pos[node] = k
    return pos


def topological_divergence(order, dag):
    """(raw, normalized) count of DAG edges the ordering violates.

    An edge (i, j) is violated when i does not precede j in the order.
    normalized = raw / |E| (0 when the graph has no edges).
    """
    pos = _positions(order)
    if len(pos) != dag.d:
        raise ValueError("order and dag disagree on the node count")
    raw = sum(1 for p, c in dag.edges if pos[p] >= pos[c])
    n_edges = len(dag.edges)
    return raw, (raw / n_edges if n_edges else 0.0)


def rank_shift(order_c, order_base, node):
    """Signed position change of `node`; positive = moved downstream."""
    pos_c = _positions(order_c)
    pos_b = _positions(order_base)
    if len(pos_c) != len(pos_b):
        raise ValueError("orders cover different node sets")
    if not 0 <= node < len(pos_c):
        raise ValueError(f"node {node} absent")
    return pos_c[node] - pos_b[node]


def pairwise_flip_fraction(order_c, order_base, node):
    """Fraction of other nodes whose relative order to `node` flipped, over d-1."""
    pos_c = _positions(order_c)
    pos_b = _positions(order_base)
    d = len(pos_c)
    if d < 2:
        raise ValueError("need at least two nodes")
    if len(pos_b) != d:
        raise ValueError("orders cover different node sets")
    if not 0 <= node < d:
        raise ValueError(f"node {node} absent")
    flips = sum(
        1
        for other in range(d)
        if other != node
        and np.sign(pos_c[node] - pos_c[other]) != np.sign(pos_b[node] - pos_b[other])
    )
    return flips / (d - 1)


def compare_orders(order_c, order_base, dag=None):
    d = len(tuple(order_c))
    raw, normalized = topological_divergence(order_c, dag) if dag else (0, 0.0)
    return OrderComparison(
        raw_violations=raw,
        normalized=normalized,
        per_node_rank_shift=[rank_shift(order_c, order_base, v) for v in range(d)],
        per_node_flip_fraction=[pairwise_flip_fraction(order_c, order_base, v) for v in range(d)],
    )


def imputation_rmse(truth, imputed, targets):
    """RMSE over target cells, in the tables' (original) units."""
    targets = np.asarray(targets, dtype=bool)
    if not targets.any():
        raise ValueError("empty target set")
    t = truth.values if hasattr(truth, "values") else np.asarray(truth)
    p = imputed.values if hasattr(imputed, "values") else np.asarray(imputed)
    diff = (t - p)[targets]
    return float(np.sqrt(np.mean(diff * diff)))


def held_out_nll(truth, mu, sigma2_point, targets):
    """Mean Gaussian NLL of target cells under per-cell (mu, sigma2)."""
    targets = np.asarray(targets, dtype=bool)
    if not targets.any():
        raise ValueError("empty target set")
    t = np.asarray(truth)[targets]
    m = np.asarray(mu)[targets]
    v = np.asarray(sigma2_point)[targets]
    if np.any(v <= 0):
        raise ValueError("nonpositive variance")
    return float(np.mean(0.5 * np.log(2.0 * np.pi * v) + 0.5 * (t - m) ** 2 / v))


# -- protein-signaling fixture ------------------------------------------

SACHS_NODES = (
    "Raf",
    "Mek",
    "Erk",
    "Plcg",
    "PIP2",
    "PIP3",
    "PKC",
    "PKA",
    "Akt",
    "Jnk",
    "P38",
)

_SACHS_EDGE_NAMES = (
    ("Raf", "Mek"),
    ("Mek", "Erk"),
    ("Plcg", "PIP2"),
    ("Plcg", "PIP3"),
    ("PIP3", "PIP2"),
    ("PIP3", "Akt"),
    ("PIP2", "PKC"),
    ("PKC", "Raf"),
    ("PKC", "Mek"),
    ("PKC", "Jnk"),
    ("PKC", "P38"),
    ("PKA", "Raf"),
    ("PKA", "Mek"),
    ("PKA", "Erk"),
    ("PKA", "Akt"),
    ("PKA", "Jnk"),
    ("PKA", "P38"),
)

# Published per-condition orders (earliest first) and their edge-violation counts
# against the consensus graph.
SACHS_CONDITION_ORDERS = {
    "cd3cd28": "PKA PKC Plcg PIP3 Erk Jnk Akt PIP2 P38 Mek Raf",
    "cd3cd28_icam2": "PKA PIP3 PKC Plcg P38 PIP2 Jnk Akt Erk Raf Mek",
    "cd3cd28_u0126": "PKC Erk PKA Mek Raf Jnk Plcg PIP3 P38 PIP2 Akt",
    "cd3cd28_aktinhib": "PKA Jnk Plcg PKC P38 PIP2 PIP3 Erk Akt Mek Raf",
    "cd3cd28icam2_aktinhib": "PKA Plcg PKC PIP3 P38 PIP2 Akt Jnk Raf Mek Erk",
    "cd3cd28_g0076": "P38 PIP2 Mek Jnk Plcg Raf Akt PIP3 PKA PKC Erk",
    "cd3cd28icam2_g0076": "PKA Mek Akt PIP2 Raf P38 Plcg PIP3 Jnk Erk PKC",
    "cd3cd28_ly": "PKA Plcg PKC PIP3 Erk Jnk P38 Akt PIP2 Mek Raf",
    "cd3cd28_psitect": "PIP2 Plcg PKA PIP3 PKC Akt Jnk P38 Erk Raf Mek",
}

SACHS_EDGE_VIOLATIONS = {
    "cd3cd28": 3,
    "cd3cd28_icam2": 3,
    "cd3cd28_u0126": 4,
    "cd3cd28_aktinhib": 5,
    "cd3cd28icam2_aktinhib": 1,
    "cd3cd28_g0076": 13,
    "cd3cd28icam2_g0076": 8,
    "cd3cd28_ly": 3,
    "cd3cd28_psitect": 3,
}

SACHS_REFERENCE_CONDITION = "cd3cd28"


def sachs_consensus_dag():
    idx = {name: i for i, name in enumerate(SACHS_NODES)}
    edges = frozenset((idx[p], idx[c]) for p, c in _SACHS_EDGE_NAMES)
    # any condition order that respects no particular construction; use a valid
    # topological order of the consensus graph itself
    topo = _topo_sort(len(SACHS_NODES), edges)
    return Dag(d=len(SACHS_NODES), edges=edges, topo_order=topo)


def sachs_order(condition):
    idx = {name: i for i, name in enumerate(SACHS_NODES)}
    return tuple(idx[name] for name in SACHS_CONDITION_ORDERS[condition].split())


def _topo_sort(d, edges):
    children = {v: [] for v in range(d)}
    indeg = {v: 0 for v in range(d)}
    for p, c in sorted(edges):
        children[p].append(c)
        indeg[c] += 1
    ready = sorted(v for v in range(d) if indeg[v] == 0)
    out = []
    while ready:
        v = ready.pop(0)
        out.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
        ready.sort()
    if len(out) != d:
        raise ValueError("graph has a cycle")
    return tuple(out)
