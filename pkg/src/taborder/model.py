"""The dual-branch order-inference / order-constrained prediction network.

Both branches alternate sample-mixing attention (tokens are the rows within a
column, unrestricted) and feature-mixing attention (tokens are the columns
within a row); the prediction branch's feature-mixing attention receives an
additive bias built from the column scores. Each attention application is a
prenorm residual encoder layer with a GELU feed-forward sublayer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MASKED_INPUT_VALUE = 0.0  # post-standardization column mean
SIGMA_FLOOR = 1e-6
HARD_SENTINEL = -1e9  # underflows to exactly-zero attention weight


@dataclass
class ModelConfig:
    h: int = 32
    heads: int = 4
    blocks_ord: int = 2
    blocks_pred: int = 2
    ff_multiplier: int = 2
    dropout: float = 0.1
    tau_schedule: tuple = (1.0, 0.1)
    beta_schedule: tuple = (-5.0, -20.0)

    def __post_init__(self):
        if self.h % self.heads != 0:
            raise ValueError("h must be divisible by heads")

    def to_dict(self):
        d = dict(self.__dict__)
        d["tau_schedule"] = list(self.tau_schedule)
        d["beta_schedule"] = list(self.beta_schedule)
        return d

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        obj["tau_schedule"] = tuple(obj.get("tau_schedule", (1.0, 0.1)))
        obj["beta_schedule"] = tuple(obj.get("beta_schedule", (-5.0, -20.0)))
        return cls(**obj)


@dataclass
class OrderScores:
    s: np.ndarray  # d column scores

    @property
    def order(self):
        return extract_order(self.s)


@dataclass
class PredictionOutput:
    mu: np.ndarray  # n x d
    sigma2_base: np.ndarray  # d
    delta: np.ndarray  # d x d
    sigma2_point: np.ndarray  # n x d
    scores: OrderScores


def extract_order(scores):
    """Ascending stable sort of the scores; ties break on column index."""
    scores = np.asarray(scores)
    if np.any(np.isnan(scores)):
        raise ValueError("NaN score")
    return tuple(int(i) for i in np.argsort(scores, kind="stable"))


def init_params(config, rng):
    """Xavier-style init for all weights of both branches plus decoding heads."""
    h = config.h
    params = {}

    def lin(name, fan_in, fan_out, gain=1.0):
        scale = gain * math.sqrt(2.0 / (fan_in + fan_out))
        params[f"{name}.w"] = ad.parameter(rng.normal(0.0, scale, size=(fan_in, fan_out)))
        params[f"{name}.b"] = ad.parameter(np.zeros(fan_out))

    def norm(name):
        params[f"{name}.g"] = ad.parameter(np.ones(h))
        params[f"{name}.s"] = ad.parameter(np.zeros(h))

    def encoder_layer(prefix):
        norm(f"{prefix}.ln1")
        lin(f"{prefix}.q", h, h)
        lin(f"{prefix}.k", h, h)
        lin(f"{prefix}.v", h, h)
        # residual-write projections start small so early blocks act near-identity
        lin(f"{prefix}.o", h, h, gain=0.1)
        norm(f"{prefix}.ln2")
        lin(f"{prefix}.ff1", h, config.ff_multiplier * h)
        lin(f"{prefix}.ff2", config.ff_multiplier * h, h, gain=0.1)

    lin("emb", 2, h)
    for branch, blocks in (("ord", config.blocks_ord), ("pred", config.blocks_pred)):
        for b in range(blocks):
            encoder_layer(f"{branch}.{b}.row")
            encoder_layer(f"{branch}.{b}.col")
    lin("f_ord.1", h, h)
    # near-zero scores at init: the hard mask starts as all-ones (tied scores),
    # so early training learns unconstrained prediction before the order commits
    lin("f_ord.2", h, 1, gain=0.01)
    lin("f_mu", h, 1)
    lin("f_sigma", h, 1)
    lin("f_delta.1", 2 * h, h)
    lin("f_delta.2", h, 1)
    return params


class TabOrderModel:
    """Holds config + parameters and runs forward passes.

    `train_mode` enables dropout (using `dropout_rng`); evaluation and
    verification run with it off.
    """

    def __init__(self, config, params=None, rng=None):
        self.config = config
        if params is None:
            if rng is None:
                raise ValueError("need params or an rng to initialize them")
            params = init_params(config, rng)
        self.params = params
        self.train_mode = False
        self.dropout_rng = None

    def _maybe_dropout(self, x):
        if self.train_mode and self.config.dropout > 0:
            return ad.dropout(x, self.config.dropout, self.dropout_rng)
        return x

    def _linear(self, name, x):
        return ad.matmul(x, self.params[f"{name}.w"]) + self.params[f"{name}.b"]

    def _encoder_layer(self, prefix, x, bias):
        """Prenorm attention + prenorm GELU feed-forward, both residual."""
        p = self.params
        normed = ad.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.s"])
        q = self._linear(f"{prefix}.q", normed)
        k = self._linear(f"{prefix}.k", normed)
        v = self._linear(f"{prefix}.v", normed)
        attn = ad.attention_with_bias(q, k, v, bias, self.config.heads)
        x = x + self._maybe_dropout(self._linear(f"{prefix}.o", attn))
        normed = ad.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.s"])
        ff = self._linear(f"{prefix}.ff2", ad.gelu(self._linear(f"{prefix}.ff1", normed)))
        return x + self._maybe_dropout(ff)

    def embed_cells(self, table):
        """n x d x h embeddings of [cell value; missing flag] pairs.

        Missing cells enter as value 0 with flag 1, so their observed value
        can never leak into the graph.
        """
        values = np.where(table.mask, MASKED_INPUT_VALUE, table.values)
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite observed values")
        flags = table.mask.astype(float)
        inp = Tensor(np.stack([values, flags], axis=-1))  # n x d x 2
        return self._linear("emb", inp)

    def _run_branch(self, branch, blocks, e, col_bias):
        """Alternate row-token and column-token encoder layers `blocks` times.

        e: n x d x h. Row layers treat each column as a batch entry with n
        tokens; column layers treat each row as a batch entry with d tokens
        and receive `col_bias` (d x d, zeros for the unrestricted branch).
        """
        n, d, h = e.shape
        zero_bias = np.zeros((n, n), dtype=ad.current_dtype())
        x = e
        for b in range(blocks):
            xc = ad.transpose(x, (1, 0, 2))  # d x n x h (tokens = rows)
            xc = self._encoder_layer(f"{branch}.{b}.row", xc, zero_bias)
            x = ad.transpose(xc, (1, 0, 2))  # n x d x h (tokens = columns)
            x = self._encoder_layer(f"{branch}.{b}.col", x, col_bias)
        return x

    def infer_scores(self, e):
        """Column scores: order branch hidden state -> two-layer MLP -> row mean.

        The row-averaged head output passes through tanh, bounding scores to
        (-1, 1) so pairwise gate sigmoids stay on-scale with the annealed
        temperature instead of saturating early and freezing the order.
        """
        n, d, h = e.shape
        hid = self._run_branch("ord", self.config.blocks_ord, e, np.zeros((d, d), dtype=ad.current_dtype()))
        per_cell = self._linear("f_ord.2", ad.gelu(self._linear("f_ord.1", hid)))  # n x d x 1
        s = ad.tmean(ad.reshape(per_cell, (n, d)), axis=0)  # d
        return 2.0 * ad.sigmoid(2.0 * s) - 1.0

    def predict(self, table, bias, scores, targets_mask=None, tau=None, mode="hard"):
        """Order-constrained prediction pass.

        bias: d x d Tensor (or array) added to the feature-mixing attention
        scores. scores: the d column scores (Tensor or array) used for the
        variance-increment predecessor test (tau/mode select its relaxation;
        the default is the exact hard indicator). Returns (PredictionOutput,
        mu Tensor, sigma2_point Tensor) with the tensors kept in-graph for
        the loss.
        """
        n, d = table.values.shape
        e = self.embed_cells(table)
        hid = self._run_branch("pred", self.config.blocks_pred, e, bias)
        mu = ad.reshape(self._linear("f_mu", hid), (n, d))
        sigma_raw = ad.tmean(ad.reshape(self._linear("f_sigma", hid), (n, d)), axis=0)
        sigma2_base = ad.softplus(sigma_raw) + SIGMA_FLOOR  # d

        # pairwise increment from row-averaged column embeddings
        hbar = ad.tmean(hid, axis=0)  # d x h
        h_i = ad.reshape(hbar, (d, 1, self.config.h)) + Tensor(np.zeros((d, d, self.config.h)))
        h_j = ad.reshape(hbar, (1, d, self.config.h)) + Tensor(np.zeros((d, d, self.config.h)))
        pair = ad.concat([h_i, h_j], axis=-1)  # d x d x 2h
        delta = ad.softplus(
            ad.reshape(self._linear("f_delta.2", ad.gelu(self._linear("f_delta.1", pair))), (d, d))
        )

        sigma2_point = pointwise_variance(sigma2_base, delta, scores, table.mask,
                                          tau=tau, mode=mode)

        s_arr = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
        out = PredictionOutput(
            mu=mu.data.copy(),
            sigma2_base=sigma2_base.data.copy(),
            delta=delta.data.copy(),
            sigma2_point=sigma2_point.data.copy(),
            scores=OrderScores(np.asarray(s_arr, dtype=float).copy()),
        )
        return out, mu, sigma2_point

    def forward(self, table, tau, beta, mode="straight_through"):
        """Full pass: embed, score, build mask bias, predict."""
        e = self.embed_cells(table)
        s = self.infer_scores(e)
        bias = build_mask_bias(s, tau, beta, mode)
        return self.predict(table, bias, s, tau=tau, mode=mode)


def build_mask_bias(scores, tau, beta, mode):
    """d x d additive attention bias from column scores.

    Entry (i, j) gates column i attending to column j: allowed iff s_j <= s_i.
    hard: sentinel * (1 - A) with A = 1[s_i >= s_j] and a large-negative sentinel,
    so disallowed weights underflow to exactly zero; soft: beta * (1 - sigmoid((s_i - s_j)/tau));
    straight_through: hard A scaled by beta forward, soft-gate gradients backward into the scores.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if beta >= 0:
        raise ValueError("beta must be negative")
    if mode not in ("hard", "soft", "straight_through"):
        raise ValueError(f"unknown mask mode {mode!r}")
    s = ad.as_tensor(scores)
    d = s.shape[0]
    diff = ad.reshape(s, (d, 1)) - ad.reshape(s, (1, d))  # s_i - s_j
    if mode == "hard":
        hard = (diff.data >= 0).astype(diff.data.dtype)
        return Tensor(HARD_SENTINEL * (1.0 - hard))
    soft_gate = ad.sigmoid(diff * (1.0 / tau))
    if mode == "soft":
        return (1.0 - soft_gate) * beta
    hard = (diff.data >= 0).astype(diff.data.dtype)
    gate = ad.straight_through(soft_gate, hard)
    return (1.0 - gate) * beta


def hard_mask(scores):
    """The 0/1 allowed matrix A with A[i][j] = 1 iff s_j <= s_i."""
    s = np.asarray(scores, dtype=float)
    return (s[:, None] >= s[None, :]).astype(float)


def pointwise_variance(sigma2_base, delta, scores, mask, tau=None, mode="hard"):
    """Per-cell variance: base plus one increment per missing strict predecessor.

    sigma2_point[r][i] = sigma2_base[i] + sum_j delta[i][j] * 1(s_j < s_i) * mask[r][j].
    Accepts Tensors (stays differentiable) or plain arrays.

    The default hard mode evaluates exactly that formula. In straight_through
    mode the forward values are identical but the backward pass differentiates
    a sigmoid surrogate of the indicator, so the variance increments carry
    gradient into the scores; soft mode uses the sigmoid in the forward pass
    too (it is what makes the full model smooth for gradient checking).
    """
    delta_arr = delta.data if isinstance(delta, Tensor) else np.asarray(delta, dtype=float)
    if np.any(delta_arr < 0):
        raise ValueError("delta must be nonnegative")
    if mode not in ("hard", "soft", "straight_through"):
        raise ValueError(f"unknown mask mode {mode!r}")
    s_t = ad.as_tensor(scores)
    d = s_t.shape[0]
    if mode == "hard":
        s = s_t.data
        gate = Tensor((s[None, :] < s[:, None]).astype(delta_arr.dtype))  # 1(s_j < s_i)
    else:
        if tau is None or tau <= 0:
            raise ValueError("soft/straight_through variance gating needs tau > 0")
        diff = ad.reshape(s_t, (d, 1)) - ad.reshape(s_t, (1, d))  # s_i - s_j
        gate = ad.sigmoid(diff * (1.0 / tau))
        if mode == "straight_through":
            hard = (s_t.data[None, :] < s_t.data[:, None]).astype(delta_arr.dtype)
            gate = ad.straight_through(gate, hard)
    m = np.asarray(mask, dtype=delta_arr.dtype)  # n x d
    gated = ad.mul(ad.as_tensor(delta), gate)  # d x d
    inc = ad.matmul(Tensor(m), ad.transpose(gated, (1, 0)))  # n x d: sum_j m[r][j] gated[i][j]
    base = ad.as_tensor(sigma2_base)
    n = m.shape[0]
    return ad.reshape(base, (1, base.shape[0])) + Tensor(np.zeros((n, base.shape[0]))) + inc


def scores_for_order(order, d=None):
    """Synthetic scores whose ascending sort reproduces `order` (position as score)."""
    order = tuple(int(i) for i in order)
    d = len(order) if d is None else d
    if sorted(order) != list(range(d)):
        raise ValueError("not a permutation")
    s = np.zeros(d)
    for pos, col in enumerate(order):
        s[col] = float(pos)
    return s
