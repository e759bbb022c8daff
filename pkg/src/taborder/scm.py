"""Random DAGs, nonlinear structural mechanisms, and sampled tables.

Mechanisms are RBF-GP samples approximated by random Fourier features. The
generator covers the additive (per-parent sum) and joint non-additive variants,
three noise forms, the three-variable chain used in the intervention
experiment, and mechanism-shift / hard interventions on that chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

MISSING_SENTINEL = 0.0

LENGTHSCALE_RANGE = (0.3, 1.0)
NOISE_SCALE_RANGE = (0.05, 0.25)
ROOT_GAUSS_SCALE_RANGE = (0.5, 2.0)
ROOT_UNIF_WIDTH_RANGE = (1.0, 5.0)
ROOT_CLIP = 10.0  # "light" clipping bound for root draws
RFF_FEATURES = 256


@dataclass(frozen=True)
class Dag:
    d: int
    edges: frozenset  # of (parent, child) pairs, 0-based
    topo_order: tuple  # permutation of range(d); topo_order[k] = node at position k

    def __post_init__(self):
        if sorted(self.topo_order) != list(range(self.d)):
            raise ValueError("topo_order is not a permutation")
        pos = {v: i for i, v in enumerate(self.topo_order)}
        for p, c in self.edges:
            if pos[p] >= pos[c]:
                raise ValueError(f"edge ({p},{c}) violates topo_order")

    def parents(self, node):
        return sorted(p for p, c in self.edges if c == node)

    def to_dict(self):
        return {"d": self.d, "edges": sorted(self.edges), "topo_order": list(self.topo_order)}

    @classmethod
    def from_dict(cls, obj):
        return cls(
            d=int(obj["d"]),
            edges=frozenset((int(p), int(c)) for p, c in obj["edges"]),
            topo_order=tuple(int(v) for v in obj["topo_order"]),
        )


@dataclass
class RffMechanism:
    """f(x) = a . sqrt(2/H) cos(W^T x_std + b) over the standardized parent vector."""

    lengthscale: float
    frequencies: np.ndarray  # P x H
    phases: np.ndarray  # H
    weights: np.ndarray  # H
    parent_mean: np.ndarray = None  # fitted on the generated sample
    parent_std: np.ndarray = None

    @property
    def n_features(self):
        return self.frequencies.shape[1]

    def features(self, x):
        """x: n x P raw parent values; returns n x H bounded by sqrt(2/H)."""
        h = self.n_features
        xs = (x - self.parent_mean) / self.parent_std
        return np.sqrt(2.0 / h) * np.cos(xs @ self.frequencies + self.phases)

    def __call__(self, x):
        return self.features(x) @ self.weights


@dataclass
class ScmInstance:
    dag: Dag
    mechanisms: dict  # node -> RffMechanism (joint) or list[RffMechanism] (additive)
    noise_scales: dict  # node -> sigma_i
    root_specs: dict  # node -> ("gauss", s) | ("unif", a)
    additive: bool
    noise_kind: str = "additive"  # additive | heteroskedastic | multiplicative

    def mechanism_value(self, node, parent_values):
        mech = self.mechanisms[node]
        if self.additive:
            return sum(m(parent_values[:, [j]]) for j, m in enumerate(mech))
        return mech(parent_values)


@dataclass
class Table:
    values: np.ndarray  # n x d
    mask: np.ndarray  # n x d bool, True = missing
    column_names: list = None

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise ValueError("values/mask shape mismatch")
        if self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError("table must be at least 1x1")
        if self.column_names is None:
            self.column_names = [f"x{i+1}" for i in range(self.values.shape[1])]

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    def copy(self):
        return Table(self.values.copy(), self.mask.copy(), list(self.column_names))

    @classmethod
    def fully_observed(cls, values, column_names=None):
        values = np.asarray(values, dtype=float)
        return cls(values, np.zeros(values.shape, dtype=bool), column_names)


def sample_dag(d_min, d_max, rng, root_probability=0.0):
    """Random topological order, then 1-3 uniformly chosen earlier parents per node.

    Only the first node is a root unless root_probability makes later nodes
    parentless as well.
    """
    if not (1 <= d_min <= d_max):
        raise ValueError("need 1 <= d_min <= d_max")
    d = int(rng.integers(d_min, d_max + 1))
    order = tuple(int(v) for v in rng.permutation(d))
    edges = set()
    for k in range(1, d):
        if root_probability > 0 and rng.random() < root_probability:
            continue
        n_par = int(rng.integers(1, min(3, k) + 1))
        parents = rng.choice(k, size=n_par, replace=False)
        for p in parents:
            edges.add((order[int(p)], order[k]))
    return Dag(d=d, edges=frozenset(edges), topo_order=order)


def _sample_rff(n_parents, rng, n_features=RFF_FEATURES):
    lo, hi = LENGTHSCALE_RANGE
    ls = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    return RffMechanism(
        lengthscale=ls,
        frequencies=rng.normal(0.0, 1.0 / ls, size=(n_parents, n_features)),
        phases=rng.uniform(0.0, 2.0 * np.pi, size=n_features),
        weights=rng.normal(0.0, 1.0, size=n_features),
    )


def sample_scm(dag, additive, rng, noise_kind="additive"):
    if noise_kind not in ("additive", "heteroskedastic", "multiplicative"):
        raise ValueError(f"unknown noise kind {noise_kind!r}")
    mechanisms, noise_scales, root_specs = {}, {}, {}
    for node in dag.topo_order:
        parents = dag.parents(node)
        if not parents:
            if rng.random() < 0.5:
                root_specs[node] = ("gauss", float(rng.uniform(*ROOT_GAUSS_SCALE_RANGE)))
            else:
                root_specs[node] = ("unif", float(rng.uniform(*ROOT_UNIF_WIDTH_RANGE)))
            continue
        noise_scales[node] = float(rng.uniform(*NOISE_SCALE_RANGE))
        if additive:
            mechanisms[node] = [_sample_rff(1, rng) for _ in parents]
        else:
            mechanisms[node] = _sample_rff(len(parents), rng)
    return ScmInstance(
        dag=dag,
        mechanisms=mechanisms,
        noise_scales=noise_scales,
        root_specs=root_specs,
        additive=additive,
        noise_kind=noise_kind,
    )


def _fit_standardization(scm, node, parent_values):
    mean = parent_values.mean(axis=0)
    std = parent_values.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    mech = scm.mechanisms[node]
    if scm.additive:
        for j, m in enumerate(mech):
            m.parent_mean = mean[[j]]
            m.parent_std = std[[j]]
    else:
        mech.parent_mean = mean
        mech.parent_std = std
    return mean, std


def sample_table(scm, n, rng):
    """Ancestral sampling in topo order; parent standardization fitted on this sample."""
    if n < 1:
        raise ValueError("need n >= 1")
    dag = scm.dag
    values = np.zeros((n, dag.d))
    for node in dag.topo_order:
        parents = dag.parents(node)
        if not parents:
            kind, scale = scm.root_specs[node]
            if kind == "gauss":
                x = scale * rng.normal(size=n)
            else:
                x = (rng.uniform(size=n) - 0.5) * scale
            values[:, node] = np.clip(x, -ROOT_CLIP, ROOT_CLIP)
            continue
        pv = values[:, parents]
        mean, std = _fit_standardization(scm, node, pv)
        f = scm.mechanism_value(node, pv)
        sigma = scm.noise_scales[node]
        eps = rng.normal(size=n)
        if scm.noise_kind == "additive":
            values[:, node] = f + sigma * eps
        elif scm.noise_kind == "heteroskedastic":
            first_std = (pv[:, 0] - mean[0]) / std[0]
            values[:, node] = f + sigma * (1.0 + 0.5 * np.abs(first_std)) * eps
        else:  # multiplicative
            values[:, node] = f * (1.0 + sigma * eps)
    return Table.fully_observed(values)


@dataclass
class ChainScm:
    """X -> Y -> Z three-variable chain.

    Y|X is deliberately noisy while Z is a precise near-identity reading of Y,
    so an unconstrained predictor of the mediator leans on its effect Z and an
    order-constrained one cannot.
    """

    f: object
    g: object
    noise_y: float = 0.5
    noise_z: float = 0.05
    mech_kind: str = "gp"
    dag: Dag = field(
        default_factory=lambda: Dag(d=3, edges=frozenset({(0, 1), (1, 2)}), topo_order=(0, 1, 2))
    )


def _sample_scalar_function(f_kind, rng):
    if f_kind == "gp":
        mech = _sample_rff(1, rng)
        mech.parent_mean = np.zeros(1)
        mech.parent_std = np.ones(1)
        return lambda x: mech(x[:, None])
    if f_kind == "spline":
        knots_x = np.linspace(-3.0, 3.0, 8)
        knots_y = rng.normal(0.0, 1.0, size=8)
        spline = CubicSpline(knots_x, knots_y)
        return lambda x: spline(np.clip(x, -3.0, 3.0))
    raise ValueError(f"unknown mechanism kind {f_kind!r}")


def _sample_chain_g(f_kind, rng):
    """Near-identity y -> y + 0.5*bump(y); invertible enough for a Gaussian head."""
    bump = _sample_scalar_function(f_kind, rng)
    return lambda y: y + 0.5 * bump(y)


def _sample_chain_table(chain, n, rng):
    x = rng.normal(size=n)
    y = chain.f(x) + chain.noise_y * rng.normal(size=n)
    z = chain.g(y) + chain.noise_z * rng.normal(size=n)
    return Table.fully_observed(np.column_stack([x, y, z]), ["X", "Y", "Z"])


def sample_chain(f_kind, n_train, n_test, rng):
    if n_train < 1 or n_test < 1:
        raise ValueError("sizes must be >= 1")
    chain = ChainScm(f=_sample_scalar_function(f_kind, rng), g=_sample_chain_g(f_kind, rng),
                     mech_kind=f_kind)
    return _sample_chain_table(chain, n_train, rng), _sample_chain_table(chain, n_test, rng), chain


def apply_intervention(test, scm, kind, fraction, rng):
    """Regenerate Z for a random `fraction` of rows; returns (table, intervened flags)."""
    if not isinstance(scm, ChainScm):
        raise ValueError("interventions are defined for the three-variable chain only")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    if kind not in ("mech_shift", "hard"):
        raise ValueError(f"unknown intervention kind {kind!r}")
    out = test.copy()
    n = out.n
    n_iv = int(round(fraction * n))
    rows = rng.choice(n, size=n_iv, replace=False) if n_iv else np.array([], dtype=int)
    flags = np.zeros(n, dtype=bool)
    flags[rows] = True
    if n_iv:
        y = out.values[rows, 1]
        if kind == "mech_shift":
            g_new = _sample_chain_g(scm.mech_kind, rng)
            out.values[rows, 2] = g_new(y) + scm.noise_z * rng.normal(size=n_iv)
        else:
            out.values[rows, 2] = rng.normal(size=n_iv)
    return out, flags
