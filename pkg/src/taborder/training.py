"""Masked-cell training: task construction, Gaussian NLL, schedules, checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from . import scm as scmmod
from .autodiff import AdamState, Tensor
from .model import ModelConfig, TabOrderModel
from .scm import Table

CHECKPOINT_VERSION = 1
STD_FLOOR = 1e-6


@dataclass
class TrainConfig:
    total_steps: int = 2000
    batch_size: int = 2
    mask_rate: float = 0.2
    lr: float = 1e-3
    warmup_ratio: float = 0.03
    weight_decay: float = 0.01
    seed: int = 0
    eval_every: int = 200
    d_min: int = 4
    d_max: int = 6
    n_min: int = 128
    n_max: int = 256
    additive: bool = True
    noise_kind: str = "additive"

    def __post_init__(self):
        if not 0.0 < self.mask_rate < 1.0:
            raise ValueError("mask_rate must be in (0, 1)")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


def standardize(table):
    """Per-column standardization by observed-cell mean/std.

    Returns (standardized table, means, stds); stds floored at 1e-6.
    """
    values = table.values
    mask = table.mask
    means = np.zeros(table.d)
    stds = np.ones(table.d)
    out = values.copy()
    for i in range(table.d):
        obs = values[~mask[:, i], i]
        if obs.size == 0:
            raise ValueError(f"column {i} has no observed cells")
        means[i] = obs.mean()
        stds[i] = max(obs.std(), STD_FLOOR)
        out[:, i] = (values[:, i] - means[i]) / stds[i]
    out[mask] = scmmod.MISSING_SENTINEL
    return Table(out, mask.copy(), list(table.column_names)), means, stds


def mask_entries(table, q, rng):
    """MCAR-mask observed cells with probability q.

    Returns (masked table, target mask, truth matrix). Already-missing cells
    are never eligible; truth holds the pre-masking values at target cells.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    eligible = ~table.mask
    targets = eligible & (rng.random(table.values.shape) < q)
    masked = table.copy()
    masked.mask = table.mask | targets
    masked.values = np.where(masked.mask, scmmod.MISSING_SENTINEL, table.values)
    truth = np.where(targets, table.values, 0.0)
    return masked, targets, truth


def gaussian_nll(truth, mu, sigma2_point, targets):
    """Mean negative Gaussian log-density over the target cells (a scalar Tensor)."""
    targets = np.asarray(targets, dtype=bool)
    count = int(targets.sum())
    if count == 0:
        raise ValueError("empty target set")
    sp = sigma2_point if isinstance(sigma2_point, Tensor) else Tensor(sigma2_point)
    if np.any(sp.data <= 0):
        raise ValueError("nonpositive variance")
    mu = mu if isinstance(mu, Tensor) else Tensor(mu)
    idx = np.nonzero(targets)
    t = Tensor(np.asarray(truth, dtype=float)[idx])
    m = mu[idx]
    v = sp[idx]
    resid = t - m
    per_cell = 0.5 * (ad.log(v) + np.log(2.0 * np.pi)) + 0.5 * ad.mul(resid, resid) / v
    return ad.tmean(per_cell)


def anneal(step, total_steps, config):
    """Linear interpolation of (beta, tau) between the schedule endpoints."""
    if not 0 <= step <= total_steps:
        raise ValueError("step out of range")
    frac = step / total_steps if total_steps > 0 else 1.0
    b0, b1 = config.beta_schedule
    t0, t1 = config.tau_schedule
    return (1.0 - frac) * b0 + frac * b1, (1.0 - frac) * t0 + frac * t1


def synthetic_dataset_stream(cfg, master_seed):
    """Deterministic per-(seed, index) stream of (Table, Dag) training instances."""

    def make(index):
        r = rngmod.substream(master_seed, 1000 + index)
        dag = scmmod.sample_dag(cfg.d_min, cfg.d_max, r)
        scm = scmmod.sample_scm(dag, additive=cfg.additive, rng=r, noise_kind=cfg.noise_kind)
        n = int(r.integers(cfg.n_min, cfg.n_max + 1))
        return scmmod.sample_table(scm, n, r), dag

    return make


def training_loss(model, table, q, tau, beta, rng, mode="straight_through"):
    """One dataset's masked-cell NLL (standardized units), with target resampling on empty draws."""
    std_table, _, _ = standardize(table)
    for _ in range(20):
        masked, targets, truth = mask_entries(std_table, q, rng)
        if targets.any():
            break
    else:
        raise ValueError("could not draw a nonempty target set")
    _, mu, sigma2_point = model.forward(masked, tau=tau, beta=beta, mode=mode)
    return gaussian_nll(truth, mu, sigma2_point, targets)


def train_loop(data_source, train_cfg, model, trace_path=None, log=None):
    """Joint straight-through training; returns the loss trace rows.

    data_source: callable index -> (Table, Dag). Emits one CSV row per step:
    step,nll,beta,tau.
    """
    state = AdamState(
        base_lr=train_cfg.lr,
        warmup_ratio=train_cfg.warmup_ratio,
        weight_decay=train_cfg.weight_decay,
    )
    mask_rng = rngmod.substream(train_cfg.seed, 1)
    model.train_mode = True
    model.dropout_rng = rngmod.substream(train_cfg.seed, 2)
    trace = []
    index = 0
    for step in range(train_cfg.total_steps):
        beta, tau = anneal(step, train_cfg.total_steps, model.config)
        grads = {}
        nlls = []
        for _ in range(train_cfg.batch_size):
            table, _ = data_source(index)
            index += 1
            for p in model.params.values():
                p.grad = None
            loss = training_loss(model, table, train_cfg.mask_rate, tau, beta, mask_rng)
            if not np.isfinite(loss.item()):
                raise ad.NonFiniteError(f"non-finite loss at step {step}")
            loss.backward()
            nlls.append(loss.item())
            for name, p in model.params.items():
                if p.grad is not None:
                    g = p.grad / train_cfg.batch_size
                    grads[name] = grads.get(name, 0.0) + g
        ad.adam_step(model.params, grads, state, train_cfg.total_steps)
        trace.append((step, float(np.mean(nlls)), beta, tau))
        if log and (step % max(1, train_cfg.eval_every) == 0 or step == train_cfg.total_steps - 1):
            log(f"step {step} nll {np.mean(nlls):.4f} beta {beta:.2f} tau {tau:.3f}")
    model.train_mode = False
    if trace_path is not None:
        with open(trace_path, "w") as fh:
            fh.write("step,nll,beta,tau\n")
            for row in trace:
                fh.write(f"{row[0]},{row[1]:.17g},{row[2]:.17g},{row[3]:.17g}\n")
    return trace


def refine_scores(model, table, draws=16, mask_rate=0.2, tau=0.5, beta=-12.0, seed=0):
    """Per-table score refinement: one aggregated gradient step on the scores.

    The masked-cell NLL is differentiated with respect to the scores alone
    (weights fixed) at the tied-score point, where the hard mask imposes no
    order prejudice, over `draws` independent re-maskings; the averaged
    descent direction is added to the decoder's scores. Training leaves the
    amortized scores nearly tied, but it does shape the loss surface: at the
    tie, the direction the loss pushes each column's score carries the order
    information, and averaging over maskings denoises it.
    """
    if draws < 1:
        raise ValueError("need draws >= 1")
    std_table, _, _ = standardize(table)
    model.train_mode = False
    init = model.infer_scores(model.embed_cells(std_table)).data.copy()
    from .model import build_mask_bias  # local import: model does not import training

    acc = np.zeros(table.d)
    for k in range(draws):
        mask_rng = rngmod.substream(seed, 70, k)
        for _ in range(20):
            masked, targets, truth = mask_entries(std_table, mask_rate, mask_rng)
            if targets.any():
                break
        else:
            raise ValueError("could not draw a nonempty target set")
        s_leaf = ad.parameter(np.zeros(table.d, dtype=ad.current_dtype()))
        bias = build_mask_bias(s_leaf, tau=tau, beta=beta, mode="straight_through")
        _, mu, sigma2_point = model.predict(masked, bias, s_leaf, tau=tau,
                                            mode="straight_through")
        loss = gaussian_nll(truth, mu, sigma2_point, targets)
        loss.backward()
        acc -= s_leaf.grad
    return init + acc / draws


def finetune(model, table, steps, lr, mask_rate, seed, mode="straight_through", tau=None, beta=None, bias=None, scores=None):
    """Fine-tune on one (partially observed) table by re-masking its observed cells.

    When `bias`/`scores` are given (imposed order), score inference is bypassed
    and only the prediction branch trains under that fixed mask.
    """
    state = AdamState(base_lr=lr, warmup_ratio=0.0, weight_decay=0.0)
    mask_rng = rngmod.substream(seed, 3)
    model.train_mode = True
    model.dropout_rng = rngmod.substream(seed, 4)
    cfg = model.config
    std_table, _, _ = standardize(table)
    trace = []
    for step in range(steps):
        b, t = (beta, tau)
        if b is None or t is None:
            b2, t2 = anneal(step, steps, cfg)
            b = b if b is not None else b2
            t = t if t is not None else t2
        for p in model.params.values():
            p.grad = None
        for _ in range(20):
            masked, targets, truth = mask_entries(std_table, mask_rate, mask_rng)
            if targets.any():
                break
        if bias is not None:
            _, mu, sigma2_point = model.predict(masked, bias, scores)
        else:
            _, mu, sigma2_point = model.forward(masked, tau=t, beta=b, mode=mode)
        loss = gaussian_nll(truth, mu, sigma2_point, targets)
        loss.backward()
        grads = {name: p.grad for name, p in model.params.items() if p.grad is not None}
        ad.adam_step(model.params, grads, state, steps)
        trace.append((step, loss.item()))
    model.train_mode = False
    return trace


# -- checkpoint container -----------------------------------------------
# Layout: 8-byte little-endian manifest length, JSON manifest, raw payload of
# little-endian float64 tensor data at the offsets listed in the manifest.


def save_checkpoint(model, path, train_cfg=None, step=0, rng_state=None):
    names = sorted(model.params)
    payload = bytearray()
    index = []
    for name in names:
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f8")
        index.append(
            {"name": name, "shape": list(arr.shape), "dtype": "<f8", "offset": len(payload)}
        )
        payload.extend(arr.tobytes())
    payload = bytes(payload)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg else None,
        "step": step,
        "rng_state": rng_state,
        "tensors": index,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path):
    """Returns (model, manifest). Validates version, length, checksum, shapes."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise CheckpointError("truncated header")
    (mlen,) = struct.unpack("<Q", raw[:8])
    if len(raw) < 8 + mlen:
        raise CheckpointError("truncated manifest")
    manifest = json.loads(raw[8 : 8 + mlen])
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported format version {manifest.get('format_version')}")
    payload = raw[8 + mlen :]
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError("truncated payload")
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError("payload checksum mismatch")
    config = ModelConfig.from_dict(manifest["model_config"])
    params = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=entry["dtype"], count=count, offset=start)
        params[entry["name"]] = ad.parameter(arr.reshape(shape))
    model = TabOrderModel(config, params=params)
    # sanity: shapes must match a fresh init of the same config
    ref = TabOrderModel(config, rng=np.random.default_rng(0)).params
    if set(ref) != set(params):
        raise CheckpointError("parameter set mismatch")
    for name in ref:
        if ref[name].data.shape != params[name].data.shape:
            raise CheckpointError(f"shape mismatch for {name}")
    return model, manifest
