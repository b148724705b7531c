"""Command-line entry point.

Subcommands: params, decompose, train, eval, bench, featurize,
gradcheck.  Exit codes: 0 success, 2 config/shape error, 3 I/O or
parse error, 4 numeric divergence, 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import cells, datasets, evalbench, features, tt
from .autograd import backward
from .errors import (
    BadMagic,
    ConfigError,
    ExtentMismatch,
    IncompatibleCheckpoint,
    IndexOutOfRange,
    MalformedHeader,
    NonFiniteLoss,
    NotFactorizable,
    TruncatedPayload,
    TTRNNError,
    UnsupportedEncoding,
)
from .gradcheck import run_gradcheck
from .tensor import DenseTensor, read_tten, write_tten
from .training import (
    SequenceClassifier,
    TrainConfig,
    UtteranceEncoder,
    train_classifier,
    train_verifier,
    verification_scores,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 2, 3, 4, 5

CONFIG_KEYS = {
    "task": str,
    "cell": str,
    "mode": str,
    "hidden": int,
    "input": int,
    "cores": int,
    "rank": int,
    "embed": int,
    "classes": int,
    "seed": int,
    "epochs": int,
    "batch_size": int,
    "patience": int,
    "lr": float,
    "lr_drop_epoch": int,
    "lr_drop_factor": float,
    "optimizer": str,
    "momentum": float,
    "data": dict,
    "permute": bool,
    "bias": bool,
    "speakers_per_batch": int,
    "utterances_per_speaker": int,
    "n_speakers": int,
    "utterances": int,
    "frames": int,
    "reps": int,
}

CONFIG_DEFAULTS = {
    "task": "mnist-seq",
    "cell": "lstm",
    "mode": "dense",
    "hidden": 64,
    "input": 1,
    "cores": 2,
    "rank": 4,
    "embed": 8,
    "classes": 10,
    "seed": 0,
    "epochs": 20,
    "batch_size": 64,
    "patience": 10,
    "lr": 1e-3,
    "lr_drop_epoch": 15,
    "lr_drop_factor": 0.1,
    "optimizer": "adam",
    "momentum": 0.9,
    "data": None,
    "permute": False,
    "bias": True,
    "speakers_per_batch": 8,
    "utterances_per_speaker": 4,
    "n_speakers": 12,
    "utterances": 10,
    "frames": 10,
    "reps": 100,
}


def load_config(path) -> dict:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    unknown = set(raw) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = dict(CONFIG_DEFAULTS)
    cfg.update(raw)
    for key, value in raw.items():
        want = CONFIG_KEYS[key]
        if value is not None and not isinstance(value, want) and not (
            want is float and isinstance(value, int)
        ):
            raise ConfigError(f"config key {key!r} must be {want.__name__}")
    if cfg["task"] not in ("mnist-seq", "verif-toy"):
        raise ConfigError(f"unknown task {cfg['task']!r}")
    if cfg["cell"] not in ("lstm", "gru"):
        raise ConfigError(f"unknown cell {cfg['cell']!r}")
    if cfg["mode"] not in ("dense", "tt-pergate", "tt-fused"):
        raise ConfigError(f"unknown mode {cfg['mode']!r}")
    return cfg


def build_cell(cfg: dict, rng: np.random.Generator):
    kind, mode = cfg["cell"], cfg["mode"]
    hidden, width = cfg["hidden"], cfg["input"]
    n = cfg["cores"]
    r = cfg["rank"]
    if mode == "dense":
        cls = cells.DenseLSTMCell if kind == "lstm" else cells.DenseGRUCell
        return cls.random(hidden, width, rng)
    hid_fact = tt.balanced_factorization(hidden, n)
    in_fact = tt.balanced_factorization(width, n)
    if mode == "tt-pergate":
        if kind != "lstm":
            raise ConfigError("per-gate mode is implemented for LSTM cells")
        return cells.TTLSTMCell.random_pergate(
            hidden, width, in_fact, hid_fact, (r,) * (n - 1), rng
        )
    ranks = (r,) * n  # r_0 .. r_{n-1}
    if kind == "lstm":
        return cells.TTLSTMCell.random_fused(hidden, width, in_fact, hid_fact, ranks, rng)
    return cells.TTGRUCell.random_fused(hidden, width, in_fact, hid_fact, ranks, rng)


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        lr_drop_epoch=cfg["lr_drop_epoch"],
        lr_drop_factor=cfg["lr_drop_factor"],
        patience=cfg["patience"],
        seed=cfg["seed"],
        optimizer=cfg["optimizer"],
        momentum=cfg["momentum"],
        speakers_per_batch=cfg["speakers_per_batch"],
        utterances_per_speaker=cfg["utterances_per_speaker"],
    )


# ---------------------------------------------------------------------------
# commands


def cmd_params(args) -> int:
    cfg = load_config(args.config) if args.config else dict(CONFIG_DEFAULTS)
    for name in ("cell", "hidden", "input", "embed", "cores", "rank"):
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    if args.no_bias:
        cfg["bias"] = False
    g = 4 if cfg["cell"] == "lstm" else 3
    hidden, width, embed = cfg["hidden"], cfg["input"], cfg["embed"]
    n, r, bias = cfg["cores"], cfg["rank"], cfg["bias"]
    proj = cells.count_params_projection(hidden, embed) if embed else 0
    bias_n = g * hidden if bias else 0

    dense_total = cells.count_params_dense(g, hidden, width, bias) + proj
    hid_fact = tt.balanced_factorization(hidden, n)
    in_fact = tt.balanced_factorization(width, n)
    tt1_profile = (1,) + (r,) * (n - 1) + (1,)
    tt1 = cells.count_params_tt1(g, hid_fact, in_fact, tt1_profile) + bias_n + proj
    fused = (r,) + (r,) * (n - 1) + (1,)
    w_elems = g * r + sum(
        d * m * fused[k] * fused[k + 1] for k, (d, m) in enumerate(zip(hid_fact, in_fact))
    )
    u_elems = g * r + sum(
        d * d * fused[k] * fused[k + 1] for k, d in enumerate(hid_fact)
    )
    tt2_exact = w_elems + u_elems + bias_n + proj
    tt2_paper = cells.count_params_tt2_formula(g, hid_fact, in_fact, (r,) * n) + bias_n + proj

    print(f"cell: {cfg['cell']}  g={g}  D={hidden}  M={width}  "
          f"embed={embed}  cores={n}  rank={r}  bias={bias}")
    print(f"hidden factorization: {hid_fact}  input factorization: {in_fact}")
    print(f"dense parameters:        {dense_total:,}")
    print(f"per-gate TT parameters:  {tt1:,}  (compression {dense_total / tt1:.1f}x)")
    print(f"fused TT parameters:     {tt2_exact:,}  (compression {dense_total / tt2_exact:.1f}x)")
    print(f"fused closed-form count: {tt2_paper:,}  "
          f"(single g*r0 term; exact stacks carry it twice)")
    return EXIT_OK


def cmd_decompose(args) -> int:
    dense = read_tten(args.input)
    if dense.ndim != 2:
        raise ExtentMismatch("decompose expects a rank-2 TTEN1 tensor")
    row_fact = _parse_ints(args.row_factorization)
    col_fact = _parse_ints(args.col_factorization)
    max_ranks = None if args.ranks in (None, "full") else _parse_ints(args.ranks)
    result = tt.tt_svd(dense, row_fact, col_fact, max_ranks=max_ranks)
    recon = tt.tt_to_dense(result)
    denom = max(float(np.linalg.norm(dense.array)), 1e-300)
    err = float(np.linalg.norm(recon.array - dense.array)) / denom
    n_tt = tt.param_count(result)
    n_dense = dense.size
    tt.save_checkpoint(args.out, result)
    print(f"ranks: {result.ranks}")
    print(f"reconstruction error (relative Frobenius): {err:.3e}")
    print(f"parameters: dense {n_dense:,} -> tt {n_tt:,} "
          f"(ratio {n_dense / n_tt:.2f})")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def _load_idx_split(paths: dict, input_width: int, permute: bool, seed: int):
    with open(paths["images"], "rb") as f:
        ds = features.parse_idx(f.read())
    with open(paths["labels"], "rb") as f:
        labels = features.parse_idx_labels(f.read())
    if permute:
        ds = features.permute_pixels(ds, seed)
    flat = ds.items.reshape(ds.n_items, -1)
    steps = flat.shape[1] // input_width
    return flat.reshape(ds.n_items, steps, input_width), labels


def _mnist_dataset(cfg: dict):
    if cfg["data"]:
        paths = cfg["data"]
        train_x, train_y = _load_idx_split(
            {"images": paths["images"], "labels": paths["labels"]},
            cfg["input"], cfg["permute"], cfg["seed"])
        val_x, val_y = _load_idx_split(
            {"images": paths["val_images"], "labels": paths["val_labels"]},
            cfg["input"], cfg["permute"], cfg["seed"])
        return {"train_x": train_x, "train_y": train_y, "val_x": val_x, "val_y": val_y}
    (tx, ty), (vx, vy), _ = datasets.digit_sequences(cfg["seed"])
    if cfg["permute"]:
        perm = np.random.default_rng(cfg["seed"]).permutation(tx.shape[1])
        tx, vx = tx[:, perm], vx[:, perm]
    return {"train_x": tx, "train_y": ty, "val_x": vx, "val_y": vy}


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    rng = np.random.default_rng(cfg["seed"])
    os.makedirs(args.out, exist_ok=True)
    cell = build_cell(cfg, rng)
    tcfg = _train_config(cfg)
    if cfg["task"] == "mnist-seq":
        model = SequenceClassifier(cell, cfg["classes"], rng)
        history = train_classifier(model, _mnist_dataset(cfg), tcfg)
        extra = model.output.parameters()
        extra_manifest = {"task": "mnist-seq", "classes": cfg["classes"]}
        metric_name = "val_accuracy"
    else:
        data = datasets.synthetic_speakers(
            cfg["seed"], cfg["n_speakers"], cfg["utterances"], cfg["frames"], cfg["input"]
        )
        model = UtteranceEncoder(cell, cfg["embed"], rng)
        history = train_verifier(model, data, tcfg)
        extra = [*model.projection.parameters(), model.sim_w, model.sim_b]
        extra_manifest = {"task": "verif-toy", "embed": cfg["embed"]}
        metric_name = "val_eer"
    ckpt_dir = os.path.join(args.out, "checkpoint")
    cells.save_cell(ckpt_dir, cell, extra_params=extra, extra_manifest=extra_manifest)
    history.write(os.path.join(args.out, "history.csv"))
    print(f"best epoch {history.best_epoch}: {metric_name}={history.best_metric:.4f}")
    print(f"checkpoint: {ckpt_dir}")
    print(f"history: {os.path.join(args.out, 'history.csv')}")
    return EXIT_OK


def _load_classifier(ckpt_dir):
    cell, man, tensors = cells.load_cell(ckpt_dir)
    if man.get("task") != "mnist-seq":
        raise IncompatibleCheckpoint(f"checkpoint task is {man.get('task')!r}")
    output = cells.ProjectionLayer(tensors["proj_W"], tensors["proj_b"])
    return SequenceClassifier(cell, man["classes"], output=output), man


def cmd_eval(args) -> int:
    if args.metric == "eer":
        with open(args.scores) as f:
            score_set = evalbench.read_score_csv(f.read())
        value = evalbench.eer(score_set)
        payload = {"metric": "eer", "value": value,
                   "positives": int(score_set.positive_scores.size),
                   "negatives": int(score_set.negative_scores.size)}
    else:
        model, man = _load_classifier(args.checkpoint)
        with open(args.images, "rb") as f:
            ds = features.parse_idx(f.read())
        with open(args.labels, "rb") as f:
            labels = features.parse_idx_labels(f.read())
        flat = ds.items.reshape(ds.n_items, -1)
        if flat.shape[1] % model.cell.input_size != 0:
            raise IncompatibleCheckpoint(
                f"flattened width {flat.shape[1]} not divisible by "
                f"model input size {model.cell.input_size}"
            )
        xs = flat.reshape(ds.n_items, -1, model.cell.input_size)
        value = evalbench.accuracy(model.predict(xs), labels)
        payload = {"metric": "accuracy", "value": value, "items": int(ds.n_items)}
    print(f"{payload['metric']}: {payload['value']:.6f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "eval.json")
        with open(path, "w") as f:
            f.write(evalbench.emit_report([payload], "json"))
        print(f"report: {path}")
    return EXIT_OK


def _bench_model_rows(hidden, width, embed, n_cores, ranks, reps, seed):
    rng = np.random.default_rng(seed)
    rows = []
    configs = [("lstm-dense", None)] + [(f"tt-lstm-r{r}", r) for r in ranks]
    x = rng.standard_normal((1, width))
    for label, r in configs:
        if r is None:
            cell = cells.DenseLSTMCell.random(hidden, width, rng)
            n_params = cells.count_params_dense(4, hidden, width, True)
        else:
            hid_fact = tt.balanced_factorization(hidden, n_cores)
            in_fact = tt.balanced_factorization(width, n_cores)
            cell = cells.TTLSTMCell.random_fused(
                hidden, width, in_fact, hid_fact, (r,) * n_cores, rng
            )
            n_params = cells.count_params_tt2(cell, include_bias=True)
        n_params += cells.count_params_projection(hidden, embed)
        state = cell.initial_state(1)

        def eval_step():
            cell.step(x, state)

        def train_step():
            new = cell.step(x, state)
            loss = (new.h ** 2.0).sum()
            backward(loss)

        ev = evalbench.time_step(eval_step, reps=reps, label=label)
        tr = evalbench.time_step(train_step, reps=reps, label=label)
        rows.append({
            "model": label,
            "rank": "-" if r is None else r,
            "n_params": n_params,
            "eval_step_mean_s": ev.mean_s,
            "eval_step_std_s": ev.std_s,
            "train_step_mean_s": tr.mean_s,
            "train_step_std_s": tr.std_s,
            "reps": reps,
        })
    return rows


def cmd_bench(args) -> int:
    cfg = load_config(args.config) if args.config else dict(CONFIG_DEFAULTS)
    hidden = args.hidden or cfg["hidden"]
    width = args.input or cfg["input"]
    embed = args.embed if args.embed is not None else cfg["embed"]
    n_cores = args.cores or cfg["cores"]
    ranks = _parse_ints(args.ranks) if args.ranks else [cfg["rank"]]
    reps = args.reps or cfg["reps"]
    rows = _bench_model_rows(hidden, width, embed, n_cores, ranks, reps, cfg["seed"])
    for row in rows:
        print(f"{row['model']:<14} rank={row['rank']!s:<3} "
              f"params={row['n_params']:>12,} "
              f"eval={row['eval_step_mean_s'] * 1e3:8.3f} ms "
              f"train={row['train_step_mean_s'] * 1e3:8.3f} ms")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for fmt in ("json", "csv"):
            with open(os.path.join(args.out, f"bench.{fmt}"), "w") as f:
                f.write(evalbench.emit_report(rows, fmt))
        print(f"reports written to {args.out}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    with open(args.input, "rb") as f:
        raw = f.read()
    if args.input.endswith(".wav"):
        audio = features.read_wav_pcm16(raw)
        spec = features.log_mel_spectrogram(audio)
        out = features.mfcc(spec, args.mfcc) if args.mfcc else spec.values
    else:
        ds = features.parse_idx(raw)
        if args.permute:
            ds = features.permute_pixels(ds, args.seed)
        out = ds.items.reshape(ds.n_items, -1)
    write_tten(args.out, DenseTensor(out))
    print(f"wrote {out.shape[0]}x{out.shape[1]} features to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(eps=args.eps, tol=args.tol, only=args.only, seed=args.seed)
    if not results:
        raise ConfigError(f"no gradcheck named {args.only!r}")
    failed = []
    for name in sorted(results):
        err, ok = results[name]
        print(f"{name:<24} rel_err={err:.3e}  {'pass' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _parse_ints(text):
    try:
        return [int(tok) for tok in str(text).split(",") if tok]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttrnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="parameter counts and compression ratios")
    p.add_argument("--config")
    p.add_argument("--cell", choices=["lstm", "gru"])
    p.add_argument("--hidden", type=int)
    p.add_argument("--input", type=int)
    p.add_argument("--embed", type=int)
    p.add_argument("--cores", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--no-bias", action="store_true")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("decompose", help="TT-SVD a dense TTEN1 matrix")
    p.add_argument("input")
    p.add_argument("--row-factorization", required=True)
    p.add_argument("--col-factorization", required=True)
    p.add_argument("--ranks", default="full")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("train", help="train a configured model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or score file")
    p.add_argument("--metric", choices=["accuracy", "eer"], required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--scores")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="model-size and step-time table")
    p.add_argument("--config")
    p.add_argument("--hidden", type=int)
    p.add_argument("--input", type=int)
    p.add_argument("--embed", type=int)
    p.add_argument("--cores", type=int)
    p.add_argument("--ranks")
    p.add_argument("--reps", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("featurize", help="WAV or IDX to TTEN1 features")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--mfcc", type=int, default=0)
    p.add_argument("--permute", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("gradcheck", help="finite-difference primitive checks")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--only")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ExtentMismatch, IncompatibleCheckpoint, IndexOutOfRange,
            NotFactorizable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, MalformedHeader, BadMagic, TruncatedPayload,
            UnsupportedEncoding, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TTRNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
