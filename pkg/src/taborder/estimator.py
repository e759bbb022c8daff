"""Estimator-style facade over the model: fit on a table, then impute/order."""

from __future__ import annotations

import numpy as np

from . import rng as rngmod
from .model import ModelConfig, TabOrderModel, build_mask_bias, extract_order
from .scm import Table
from .training import (
    TrainConfig,
    finetune,
    refine_scores,
    standardize,
    synthetic_dataset_stream,
    train_loop,
)


def _check_input(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError("X must be at least 1x1")
    if np.any(np.isinf(X)):
        raise ValueError("X contains infinities")
    mask = np.isnan(X)
    if mask.all(axis=0).any():
        raise ValueError("a column is entirely missing")
    return Table(np.where(mask, 0.0, X), mask)


class TabOrderImputer:
    """Order-aware imputer with a fit/transform interface.

    NaN marks a missing cell. `fit` pretrains on synthetic tables (or accepts
    a prebuilt model) and optionally fine-tunes on X; `transform` fills the
    missing cells. `order_` holds the inferred column order after fit.
    """

    def __init__(self, pretrain_steps=2000, finetune_steps=100, mask_rate=0.2,
                 lr=2e-4, seed=0, refine_draws=16, model=None):
        self.pretrain_steps = pretrain_steps
        self.finetune_steps = finetune_steps
        self.mask_rate = mask_rate
        self.lr = lr
        self.seed = seed
        self.refine_draws = refine_draws
        self.model = model

    def get_params(self, deep=True):
        return {
            "pretrain_steps": self.pretrain_steps,
            "finetune_steps": self.finetune_steps,
            "mask_rate": self.mask_rate,
            "lr": self.lr,
            "seed": self.seed,
            "refine_draws": self.refine_draws,
            "model": self.model,
        }

    def set_params(self, **params):
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, X, y=None):
        table = _check_input(X)
        if self.model is None:
            self.model = TabOrderModel(ModelConfig(), rng=rngmod.substream(self.seed, 40))
            if self.pretrain_steps:
                cfg = TrainConfig(total_steps=self.pretrain_steps, seed=self.seed,
                                  mask_rate=self.mask_rate, lr=self.lr)
                train_loop(synthetic_dataset_stream(cfg, self.seed), cfg, self.model)
        if self.finetune_steps:
            finetune(self.model, table, steps=self.finetune_steps, lr=self.lr,
                     mask_rate=self.mask_rate, seed=self.seed)
        self.scores_ = self._infer_scores(table)
        self.order_ = extract_order(self.scores_)
        return self

    def _infer_scores(self, table):
        if self.refine_draws:
            return refine_scores(self.model, table, draws=self.refine_draws, seed=self.seed)
        std_table, _, _ = standardize(table)
        self.model.train_mode = False
        return self.model.infer_scores(self.model.embed_cells(std_table)).data.copy()

    def transform(self, X):
        if self.model is None:
            raise ValueError("not fitted")
        table = _check_input(X)
        std_table, means, stds = standardize(table)
        scores = self._infer_scores(table)
        bias = build_mask_bias(scores, tau=self.model.config.tau_schedule[1],
                               beta=self.model.config.beta_schedule[1], mode="hard")
        _, mu, _ = self.model.predict(std_table, bias, scores)
        out = np.asarray(X, dtype=float).copy()
        filled = mu.data * stds[None, :] + means[None, :]
        out[table.mask] = filled[table.mask]
        return out

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)

    def predict_order(self, X):
        if self.model is None:
            raise ValueError("not fitted")
        return extract_order(self._infer_scores(_check_input(X)))
