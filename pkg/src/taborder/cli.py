"""Command-line entry point.

Subcommands cover dataset generation, training, fine-tuning, order evaluation,
imputation, the chain intervention experiment, the imposed-order ablation,
theorem verification, and a finite-difference gradient report. Every run
writes a manifest.json with the resolved config, seed, and output checksums.

Exit codes: 0 success, 1 usage, 2 file I/O, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

# Thread caps must land before numpy's first import to reach the BLAS pools.
if "--deterministic" in sys.argv:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, "1")
elif os.environ.get("TABORDER_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["TABORDER_THREADS"])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser():
    parser = _Parser(prog="taborder")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; CLI flags take precedence")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--f64", action="store_true")

    p = sub.add_parser("generate", help="sample SCM datasets to CSV + DAG sidecars")
    common(p)
    p.add_argument("--num", type=int, default=None)
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--d-min", type=int, default=None)
    p.add_argument("--d-max", type=int, default=None)
    p.add_argument("--additive", dest="additive", action="store_true", default=None)
    p.add_argument("--non-additive", dest="additive", action="store_false")
    p.add_argument("--noise-kind", choices=["additive", "heteroskedastic", "multiplicative"], default=None)

    p = sub.add_parser("train", help="train a model on streamed synthetic tables")
    common(p)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--mask-rate", type=float, default=None)
    p.add_argument("--h", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--blocks-ord", type=int, default=None)
    p.add_argument("--blocks-pred", type=int, default=None)
    p.add_argument("--d-min", type=int, default=None)
    p.add_argument("--d-max", type=int, default=None)
    p.add_argument("--n-min", type=int, default=None)
    p.add_argument("--n-max", type=int, default=None)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint on one table")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--mask-rate", type=float, default=None)

    p = sub.add_parser("eval-order", help="per-dataset order quality (d_TOP)")
    common(p)
    p.add_argument("--datasets", required=True, help="directory of data_*.csv + dag_*.json")
    p.add_argument("--method", choices=["model", "random", "variance", "greedy"], default="model")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--refine-draws", type=int, default=None,
                   help="per-table score refinement draws (0 = raw decoder scores)")
    p.add_argument("--compare", choices=["model", "random", "variance", "greedy"], default=None,
                   help="also emit per-node rank-shift/flip tables against this method")

    p = sub.add_parser("impute", help="fill missing cells of a CSV")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--truth", default=None, help="fully observed CSV for RMSE reporting")
    p.add_argument("--method", choices=["model", "mean", "knn"], default="model")
    p.add_argument("--finetune-steps", type=int, default=None)

    p = sub.add_parser("intervene", help="three-variable chain intervention experiment")
    common(p)
    p.add_argument("--mechanism", choices=["gp", "spline"], default=None)
    p.add_argument("--kind", choices=["mech_shift", "hard"], default=None)
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--mask", choices=["order", "all-ones"], default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)

    p = sub.add_parser("order-ablation", help="NLL under imposed orders, bypassing score inference")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dag", required=True)
    p.add_argument("--order", required=True,
                   help="comma list (e.g. 3,1,2), or correct | reversed | random:N")
    p.add_argument("--mask-rate", type=float, default=None)

    p = sub.add_parser("theory-check", help="numeric theorem verification")
    common(p)
    p.add_argument("--num", type=int, default=None)
    p.add_argument("--q", type=float, default=None)
    p.add_argument("--n-mc", type=int, default=None)

    p = sub.add_parser("grad-check", help="full-model finite-difference gradient report")
    common(p)
    return parser


_DEFAULTS = {
    "generate": {"num": 4, "rows": 200, "d_min": 4, "d_max": 6, "additive": True, "noise_kind": "additive"},
    "train": {"steps": 2000, "batch": 2, "lr": 1e-3, "mask_rate": 0.2, "h": 32, "heads": 4,
              "blocks_ord": 2, "blocks_pred": 2, "d_min": 4, "d_max": 6, "n_min": 128, "n_max": 256},
    "finetune": {"steps": 100, "lr": 1e-4, "mask_rate": 0.2},
    "eval-order": {"refine_draws": 16},
    "impute": {"finetune_steps": 0},
    "intervene": {"mechanism": "gp", "kind": "mech_shift", "fraction": 0.5, "mask": "order",
                  "steps": 300, "lr": 1e-3, "n_train": 512, "n_test": 1024},
    "order-ablation": {"mask_rate": 0.2},
    "theory-check": {"num": 20, "q": 0.3, "n_mc": 20000},
    "grad-check": {},
}


def _resolve(args):
    """CLI flag > config file > built-in default."""
    resolved = dict(_DEFAULTS.get(args.command, {}))
    resolved["seed"] = 0
    resolved["out"] = "."
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            resolved.update(json.load(fh))
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        if value is not None and value is not False:
            resolved[key] = value
    return resolved


def _setup(resolved):
    if resolved.get("deterministic"):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")
    threads = os.environ.get("TABORDER_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    from . import autodiff as ad

    if resolved.get("f64"):
        ad.set_precision("float64")
    os.makedirs(resolved["out"], exist_ok=True)


def _eval_scores(model, table, draws=16, seed=0):
    """Inferred column scores for a table, evaluation mode, standardized input."""
    from .training import refine_scores, standardize

    if draws > 0:
        return refine_scores(model, table, draws=draws, seed=seed)
    std_table, _, _ = standardize(table)
    model.train_mode = False
    e = model.embed_cells(std_table)
    return model.infer_scores(e).data


def _order_for(method, table, dag, model, rng, draws=16, seed=0):
    from . import baselines
    from .model import extract_order

    if method == "model":
        return extract_order(_eval_scores(model, table, draws=draws, seed=seed))
    if method == "random":
        return baselines.random_order(table.d, rng)
    if method == "variance":
        return baselines.variance_sort_order(table)
    return baselines.greedy_residual_order(table)


def _load_model(path):
    from .training import load_checkpoint

    model, _ = load_checkpoint(path)
    return model


def _cmd_generate(resolved):
    from . import io as iom
    from . import rng as rngmod
    from . import scm as scmmod

    from .io import ManifestWriter

    mw = ManifestWriter("generate", resolved, resolved["seed"], resolved["out"])
    for i in range(resolved["num"]):
        r = rngmod.substream(resolved["seed"], 1000 + i)
        dag = scmmod.sample_dag(resolved["d_min"], resolved["d_max"], r)
        scm = scmmod.sample_scm(dag, additive=resolved["additive"], rng=r,
                                noise_kind=resolved["noise_kind"])
        table = scmmod.sample_table(scm, resolved["rows"], r)
        data_path = os.path.join(resolved["out"], f"data_{i:03d}.csv")
        dag_path = os.path.join(resolved["out"], f"dag_{i:03d}.json")
        iom.write_table(table, data_path)
        iom.write_dag(dag, dag_path)
        mw.add_output(data_path)
        mw.add_output(dag_path)
    mw.write()
    return 0


def _cmd_train(resolved):
    from .io import ManifestWriter
    from .model import ModelConfig, TabOrderModel
    from .training import TrainConfig, save_checkpoint, synthetic_dataset_stream, train_loop
    from . import rng as rngmod

    model_cfg = ModelConfig(h=resolved["h"], heads=resolved["heads"],
                            blocks_ord=resolved["blocks_ord"], blocks_pred=resolved["blocks_pred"])
    train_cfg = TrainConfig(total_steps=resolved["steps"], batch_size=resolved["batch"],
                            mask_rate=resolved["mask_rate"], lr=resolved["lr"],
                            seed=resolved["seed"], d_min=resolved["d_min"], d_max=resolved["d_max"],
                            n_min=resolved["n_min"], n_max=resolved["n_max"])
    model = TabOrderModel(model_cfg, rng=rngmod.substream(resolved["seed"], 0))
    mw = ManifestWriter("train", resolved, resolved["seed"], resolved["out"])
    trace_path = os.path.join(resolved["out"], "trace.csv")
    train_loop(synthetic_dataset_stream(train_cfg, resolved["seed"]), train_cfg, model,
               trace_path=trace_path, log=lambda msg: print(msg, file=sys.stderr))
    ckpt_path = os.path.join(resolved["out"], "checkpoint.bin")
    save_checkpoint(model, ckpt_path, train_cfg=train_cfg, step=train_cfg.total_steps)
    mw.add_output(trace_path)
    mw.add_output(ckpt_path)
    mw.write()
    return 0


def _cmd_finetune(resolved):
    from .io import ManifestWriter, read_table, write_csv
    from .training import finetune, save_checkpoint

    model = _load_model(resolved["checkpoint"])
    table = read_table(resolved["data"])
    mw = ManifestWriter("finetune", resolved, resolved["seed"], resolved["out"],
                        inputs=[resolved["checkpoint"], resolved["data"]])
    trace = finetune(model, table, steps=resolved["steps"], lr=resolved["lr"],
                     mask_rate=resolved["mask_rate"], seed=resolved["seed"])
    trace_path = os.path.join(resolved["out"], "trace.csv")
    write_csv(trace_path, ["step", "nll"], [(s, float(v)) for s, v in trace])
    ckpt_path = os.path.join(resolved["out"], "checkpoint.bin")
    save_checkpoint(model, ckpt_path, step=resolved["steps"])
    mw.add_output(trace_path)
    mw.add_output(ckpt_path)
    mw.write()
    return 0


def _dataset_pairs(directory):
    import glob

    pairs = []
    for data_path in sorted(glob.glob(os.path.join(directory, "data_*.csv"))):
        stem = os.path.basename(data_path)[len("data_"):-len(".csv")]
        dag_path = os.path.join(directory, f"dag_{stem}.json")
        pairs.append((data_path, dag_path if os.path.exists(dag_path) else None))
    if not pairs:
        raise FileNotFoundError(f"no data_*.csv files in {directory}")
    return pairs


def _cmd_eval_order(resolved):
    import numpy as np

    from . import rng as rngmod
    from .io import ManifestWriter, read_dag, read_table, write_csv
    from .metrics import pairwise_flip_fraction, rank_shift, topological_divergence

    method = resolved.get("method", "model")
    compare = resolved.get("compare")
    model = None
    if method == "model" or compare == "model":
        if not resolved.get("checkpoint"):
            raise ValueError("--method/--compare model needs --checkpoint")
        model = _load_model(resolved["checkpoint"])
    mw = ManifestWriter("eval-order", resolved, resolved["seed"], resolved["out"],
                        inputs=[resolved["datasets"]])
    rows, compare_rows = [], []
    normalized = []
    for idx, (data_path, dag_path) in enumerate(_dataset_pairs(resolved["datasets"])):
        table = read_table(data_path)
        dag = read_dag(dag_path) if dag_path else None
        r = rngmod.substream(resolved["seed"], 2000 + idx)
        draws = resolved.get("refine_draws", 16)
        order = _order_for(method, table, dag, model, r, draws=draws, seed=resolved["seed"] + idx)
        raw, norm = topological_divergence(order, dag) if dag else (0, 0.0)
        normalized.append(norm)
        rows.append((os.path.basename(data_path), " ".join(map(str, order)), raw, float(norm)))
        if compare:
            base = _order_for(compare, table, dag, model, rngmod.substream(resolved["seed"], 3000 + idx),
                              draws=draws, seed=resolved["seed"] + idx)
            for node in range(table.d):
                compare_rows.append(
                    (os.path.basename(data_path), node,
                     rank_shift(order, base, node),
                     float(pairwise_flip_fraction(order, base, node)))
                )
    out_path = os.path.join(resolved["out"], "order_eval.csv")
    write_csv(out_path, ["dataset", "order", "dtop_raw", "dtop_normalized"], rows)
    mw.add_output(out_path)
    if compare:
        cmp_path = os.path.join(resolved["out"], "order_compare.csv")
        write_csv(cmp_path, ["dataset", "node", "rank_shift", "flip_fraction"], compare_rows)
        mw.add_output(cmp_path)
    mw.write()
    print(f"mean normalized d_TOP: {float(np.mean(normalized)):.4f}")
    return 0


def _model_impute(model, table, finetune_steps, seed):
    import numpy as np

    from .model import build_mask_bias
    from .training import finetune, standardize

    if finetune_steps:
        finetune(model, table, steps=finetune_steps, lr=1e-4, mask_rate=0.2, seed=seed)
    std_table, means, stds = standardize(table)
    model.train_mode = False
    e = model.embed_cells(std_table)
    scores = model.infer_scores(e)
    bias = build_mask_bias(scores, tau=model.config.tau_schedule[1],
                           beta=model.config.beta_schedule[1], mode="hard")
    _, mu, _ = model.predict(std_table, bias, scores)
    out = table.copy()
    filled = mu.data * stds[None, :] + means[None, :]
    out.values[table.mask] = filled[table.mask]
    out.mask[:] = False
    return out


def _cmd_impute(resolved):
    from . import baselines
    from .io import ManifestWriter, read_table, write_csv, write_table
    from .metrics import imputation_rmse

    table = read_table(resolved["data"])
    inputs = [resolved["data"]]
    method = resolved.get("method", "model")
    if method == "mean":
        imputed = baselines.mean_impute(table)
    elif method == "knn":
        imputed = baselines.knn_impute(table)
    else:
        if not resolved.get("checkpoint"):
            raise ValueError("--method model needs --checkpoint")
        inputs.append(resolved["checkpoint"])
        model = _load_model(resolved["checkpoint"])
        imputed = _model_impute(model, table, resolved["finetune_steps"], resolved["seed"])
    mw = ManifestWriter("impute", resolved, resolved["seed"], resolved["out"], inputs=inputs)
    out_path = os.path.join(resolved["out"], "imputed.csv")
    write_table(imputed, out_path)
    mw.add_output(out_path)
    if resolved.get("truth") and table.mask.any():
        truth = read_table(resolved["truth"])
        rmse = imputation_rmse(truth, imputed, table.mask)
        report_path = os.path.join(resolved["out"], "rmse.csv")
        write_csv(report_path, ["method", "rmse"], [(method, rmse)])
        mw.add_output(report_path)
        print(f"rmse: {rmse:.6f}")
    elif resolved.get("truth"):
        print("no missing cells; rmse report skipped")
    mw.write()
    return 0


def run_intervention_experiment(resolved, model=None):
    """Chain experiment: fine-tune under an imposed mask, score mediator MSE by row group.

    The prediction target is the middle chain variable; only the downstream
    variable's mechanism is touched by the intervention, so an order-masked
    predictor should be unaffected while an unmasked one is not. Returns
    (mse_iid, mse_intervened). Exposed for programmatic use.
    """
    import numpy as np

    from . import rng as rngmod
    from . import scm as scmmod
    from .autodiff import Tensor
    from .model import HARD_SENTINEL, ModelConfig, TabOrderModel, build_mask_bias, scores_for_order
    from .scm import Table
    from .training import STD_FLOOR, finetune

    seed = resolved["seed"]
    r = rngmod.substream(seed, 10)
    train, test, chain = scmmod.sample_chain(resolved["mechanism"], resolved["n_train"],
                                             resolved["n_test"], r)
    test_iv, flags = scmmod.apply_intervention(test, chain, resolved["kind"],
                                               resolved["fraction"], rngmod.substream(seed, 11))
    if model is None:
        model = TabOrderModel(ModelConfig(), rng=rngmod.substream(seed, 12))
    d = 3
    if resolved["mask"] == "order":
        scores = scores_for_order((0, 1, 2))
        bias = build_mask_bias(scores, tau=0.1, beta=-20.0, mode="hard")
    else:
        scores = np.zeros(d)
        bias = Tensor(np.zeros((d, d)))
    finetune(model, train, steps=resolved["steps"], lr=resolved["lr"], mask_rate=0.2,
             seed=seed, bias=bias, scores=scores)

    means = train.values.mean(axis=0)
    stds = np.maximum(train.values.std(axis=0), STD_FLOOR)
    base = (test_iv.values - means) / stds
    model.train_mode = False
    # Mask the mediator one fold of rows at a time so the missingness rate at
    # evaluation matches the fine-tuning regime.
    folds = 5
    pred_y = np.empty(test_iv.n)
    for k in range(folds):
        rows = np.arange(test_iv.n) % folds == k
        z = base.copy()
        mask = np.zeros_like(z, dtype=bool)
        mask[rows, 1] = True
        z[mask] = scmmod.MISSING_SENTINEL
        _, mu, _ = model.predict(Table(z, mask, list(test_iv.column_names)), bias, scores)
        pred_y[rows] = mu.data[rows, 1] * stds[1] + means[1]
    err = (pred_y - test_iv.values[:, 1]) ** 2
    mse_iid = float(err[~flags].mean())
    mse_iv = float(err[flags].mean()) if flags.any() else float("nan")
    return mse_iid, mse_iv


def _cmd_intervene(resolved):
    from .io import ManifestWriter, write_csv

    mw = ManifestWriter("intervene", resolved, resolved["seed"], resolved["out"])
    mse_iid, mse_iv = run_intervention_experiment(resolved)
    out_path = os.path.join(resolved["out"], "intervention_mse.csv")
    write_csv(out_path, ["mask", "kind", "mse_iid", "mse_intervened"],
              [(resolved["mask"], resolved["kind"], mse_iid, mse_iv)])
    mw.add_output(out_path)
    mw.write()
    print(f"mse iid {mse_iid:.6f} intervened {mse_iv:.6f}")
    return 0


def _parse_order_spec(spec, dag, d, rng):
    from . import baselines

    if spec == "correct":
        return [tuple(dag.topo_order)]
    if spec == "reversed":
        return [tuple(reversed(dag.topo_order))]
    if spec.startswith("random:"):
        count = int(spec.split(":", 1)[1])
        return [baselines.random_order(d, rng) for _ in range(count)]
    parts = [int(v) for v in spec.split(",")]
    if sorted(parts) == list(range(1, d + 1)):
        parts = [v - 1 for v in parts]
    if sorted(parts) != list(range(d)):
        raise ValueError(f"order spec {spec!r} is not a permutation of {d} columns")
    return [tuple(parts)]


def imposed_order_nll(model, table, order, mask_rate, seed):
    """Held-out NLL on re-masked cells under an imposed column order."""
    from . import rng as rngmod
    from .model import build_mask_bias, scores_for_order
    from .training import gaussian_nll, mask_entries, standardize

    std_table, _, _ = standardize(table)
    masked, targets, truth = mask_entries(std_table, mask_rate, rngmod.substream(seed, 20))
    scores = scores_for_order(order, d=table.d)
    bias = build_mask_bias(scores, tau=0.1, beta=-20.0, mode="hard")
    model.train_mode = False
    _, mu, sigma2_point = model.predict(masked, bias, scores)
    return gaussian_nll(truth, mu, sigma2_point, targets).item()


def _cmd_order_ablation(resolved):
    from . import rng as rngmod
    from .io import ManifestWriter, read_dag, read_table, write_csv
    from .metrics import topological_divergence

    model = _load_model(resolved["checkpoint"])
    table = read_table(resolved["data"])
    dag = read_dag(resolved["dag"])
    orders = _parse_order_spec(resolved["order"], dag, table.d,
                               rngmod.substream(resolved["seed"], 21))
    mw = ManifestWriter("order-ablation", resolved, resolved["seed"], resolved["out"],
                        inputs=[resolved["checkpoint"], resolved["data"], resolved["dag"]])
    rows = []
    for order in orders:
        raw, norm = topological_divergence(order, dag)
        nll = imposed_order_nll(model, table, order, resolved["mask_rate"], resolved["seed"])
        rows.append((" ".join(map(str, order)), raw, float(norm), nll))
    out_path = os.path.join(resolved["out"], "order_ablation.csv")
    write_csv(out_path, ["order", "imposed_dtop_raw", "imposed_dtop", "nll"], rows)
    mw.add_output(out_path)
    mw.write()
    for row in rows:
        print(f"order {row[0]} dtop {row[2]:.3f} nll {row[3]:.4f}")
    return 0


def _cmd_theory_check(resolved):
    import numpy as np

    from . import rng as rngmod
    from . import theory
    from .autodiff import set_precision
    from .io import ManifestWriter, write_csv

    set_precision("float64")
    mw = ManifestWriter("theory-check", resolved, resolved["seed"], resolved["out"])
    rows = []
    for i in range(resolved["num"]):
        r = rngmod.substream(resolved["seed"], 4000 + i)
        if r.random() < 0.5:
            a = r.uniform(1.0, 3.0)
            f = lambda x, a=a: np.tanh(a * x)
        else:
            a = r.uniform(0.3, 1.0)
            f = lambda x, a=a: a * x**3 / 3.0
        result = theory.theorem_check(f, noise_scale=r.uniform(0.1, 0.5), q=resolved["q"],
                                      n_mc=resolved["n_mc"], rng=r)
        json_path = os.path.join(resolved["out"], f"instance_{i:03d}.json")
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(result, fh, sort_keys=True)
            fh.write("\n")
        mw.add_output(json_path)
        rows.append((i, result["Rf"], result["Rb"], result["G_fwd"], result["G_bwd"],
                     result["delta"], int(result["amplified"]), int(result["sign_agreement"])))
    out_path = os.path.join(resolved["out"], "theory_summary.csv")
    write_csv(out_path, ["instance", "Rf", "Rb", "G_fwd", "G_bwd", "delta", "amplified",
                         "sign_agreement"], rows)
    mw.add_output(out_path)
    mw.write()
    agree = sum(r[-1] for r in rows)
    print(f"sign agreement: {agree}/{len(rows)}")
    return 0


def full_model_grad_check(seed=0, fd_step=1e-6):
    """Max relative gradient error of a small model's loss, 64-bit, soft mode."""
    from . import autodiff as ad
    from . import rng as rngmod
    from .model import ModelConfig, TabOrderModel
    from .scm import Table
    from .training import gaussian_nll

    import numpy as np

    with ad.precision("float64"):
        cfg = ModelConfig(h=8, heads=2, blocks_ord=1, blocks_pred=1, dropout=0.0)
        r = rngmod.substream(seed, 30)
        model = TabOrderModel(cfg, rng=r)
        values = r.normal(size=(4, 3))
        mask = np.zeros((4, 3), dtype=bool)
        mask[0, 1] = mask[2, 0] = mask[3, 2] = True
        table = Table(np.where(mask, 0.0, values), mask)
        truth = values

        def loss_fn():
            _, mu, sigma2 = model.forward(table, tau=0.5, beta=-5.0, mode="soft")
            return gaussian_nll(truth, mu, sigma2, mask)

        return ad.grad_check(loss_fn, model.params, fd_step)


def _cmd_grad_check(resolved):
    from .io import ManifestWriter

    mw = ManifestWriter("grad-check", resolved, resolved["seed"], resolved["out"])
    err = full_model_grad_check(seed=resolved["seed"])
    report_path = os.path.join(resolved["out"], "grad_check.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump({"max_relative_error": err, "threshold": 1e-4, "passed": bool(err < 1e-4)}, fh)
        fh.write("\n")
    mw.add_output(report_path)
    mw.write()
    print(f"max relative error: {err:.3e}")
    return 0 if err < 1e-4 else 3


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "finetune": _cmd_finetune,
    "eval-order": _cmd_eval_order,
    "impute": _cmd_impute,
    "intervene": _cmd_intervene,
    "order-ablation": _cmd_order_ablation,
    "theory-check": _cmd_theory_check,
    "grad-check": _cmd_grad_check,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    from .autodiff import AutodiffError
    from .training import CheckpointError

    try:
        resolved = _resolve(args)
        _setup(resolved)
        return _COMMANDS[args.command](resolved)
    except (AutodiffError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        path = getattr(exc, "filename", None)
        print(f"error: {exc}" + (f" ({path})" if path else ""), file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
