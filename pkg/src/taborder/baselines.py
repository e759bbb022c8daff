"""Reference orderings and imputers to compare the model against."""

from __future__ import annotations

import numpy as np


def random_order(d, rng):
    if d < 1:
        raise ValueError("need d >= 1")
    return tuple(int(v) for v in rng.permutation(d))


def variance_sort_order(table):
    """Columns in ascending observed variance; ties break on column index."""
    variances = np.empty(table.d)
    for i in range(table.d):
        obs = table.values[~table.mask[:, i], i]
        if obs.size == 0:
            raise ValueError(f"column {i} has no observed cells")
        variances[i] = obs.var()
    return tuple(int(i) for i in np.argsort(variances, kind="stable"))


def _knn_regress(x_train, y_train, x_query, k):
    """Local-linear fit over the k nearest neighbors (euclidean distance in x).

    The linear term removes the slope-induced smoothing bias that a plain
    neighbor mean suffers on steep mechanisms.
    """
    k = min(k, x_train.shape[0])
    d2 = ((x_query[:, None, :] - x_train[None, :, :]) ** 2).sum(axis=-1)
    nearest = np.argpartition(d2, k - 1, axis=1)[:, :k]
    out = np.empty(x_query.shape[0])
    for i in range(x_query.shape[0]):
        neighbors = x_train[nearest[i]]
        design = np.column_stack([np.ones(k), neighbors - x_query[i]])
        coef, *_ = np.linalg.lstsq(design, y_train[nearest[i]], rcond=None)
        out[i] = coef[0]
    return out


def greedy_residual_order(table, k=20):
    """Greedy order by normalized residual variance under kNN regression.

    Each column is standardized, so the residual variance of a kNN fit is
    already the residual/marginal ratio. The root slot goes to the column that
    even its best single-variable regressor explains worst; every later slot
    goes to the remaining column best explained by the already-selected set.
    Requires a fully observed table.
    """
    if table.mask.any():
        raise ValueError("greedy residual ordering needs a fully observed table")
    if k < 1:
        raise ValueError("need k >= 1")
    if table.n <= k:
        raise ValueError("need more rows than k")
    values = table.values
    std = values.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    z = (values - values.mean(axis=0)) / std
    d = table.d
    if d == 1:
        return (0,)

    def resid(i, cols):
        pred = _knn_regress(z[:, cols], z[:, i], z[:, cols], k)
        return float(np.var(z[:, i] - pred))

    best_single = {
        i: min(resid(i, [j]) for j in range(d) if j != i) for i in range(d)
    }
    order = [max(best_single, key=best_single.get)]
    remaining = [i for i in range(d) if i != order[0]]
    while remaining:
        nxt = min(remaining, key=lambda i: resid(i, order))
        order.append(nxt)
        remaining.remove(nxt)
    return tuple(order)


def mean_impute(table):
    """Fill missing cells with the column's observed mean."""
    out = table.copy()
    for i in range(table.d):
        obs = table.values[~table.mask[:, i], i]
        if obs.size == 0:
            raise ValueError(f"column {i} has no observed cells")
        out.values[table.mask[:, i], i] = obs.mean()
    out.mask[:] = False
    return out


def knn_impute(table, k=10):
    """Fill missing cells from the k rows nearest in co-observed columns.

    Distances are mean squared differences over columns observed in both rows,
    computed on per-column standardized values; rows with no co-observed
    columns or no donor observed in the target column fall back to the column
    mean.
    """
    values = table.values
    mask = table.mask
    n, d = values.shape
    means = np.empty(d)
    stds = np.empty(d)
    for i in range(d):
        obs = values[~mask[:, i], i]
        if obs.size == 0:
            raise ValueError(f"column {i} has no observed cells")
        means[i] = obs.mean()
        stds[i] = max(obs.std(), 1e-6)
    z = (values - means) / stds
    z[mask] = 0.0
    obs_f = (~mask).astype(float)

    # pairwise mean squared difference over co-observed columns
    sq = z * z
    co = obs_f @ obs_f.T  # co-observed counts
    cross = (sq * obs_f) @ obs_f.T + obs_f @ (sq * obs_f).T - 2.0 * (z * obs_f) @ (z * obs_f).T
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.where(co > 0, cross / np.maximum(co, 1), np.inf)
    np.fill_diagonal(dist, np.inf)

    out = table.copy()
    for r in range(n):
        cols = np.nonzero(mask[r])[0]
        if cols.size == 0:
            continue
        neighbor_rank = np.argsort(dist[r], kind="stable")
        for i in cols:
            donors = [s for s in neighbor_rank if np.isfinite(dist[r, s]) and not mask[s, i]]
            if donors:
                out.values[r, i] = values[donors[: min(k, len(donors))], i].mean()
            else:
                out.values[r, i] = means[i]
    out.mask[:] = False
    return out
