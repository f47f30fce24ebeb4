"""Command-line surface: gen, pretrain, train, eval, viz, compare.

Exit codes: 0 on success, 1 on configuration/validation problems
(including usage errors), 2 on runtime failures. Tabular outputs are
CSV with a header row; each report also renders a matplotlib figure
alongside the CSV.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import conditions, ctio, mil, report, synth, sslpretrain, viz
from .config import RunConfig, apply_mapping, load_run_config, parse_kv_file
from .data import SliceDataset
from .errors import ConfigError, CtmilError, ValidationError
from .nncore.checkpoint import load_checkpoint, save_checkpoint
from .nncore.models import EncoderParams, encoder_tensor_shapes
from .patching import make_bag


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(manifest: str) -> SliceDataset:
    return SliceDataset.from_manifest(manifest)


def _run_config(args, **overrides) -> RunConfig:
    overrides.setdefault("seed", getattr(args, "seed", None))
    return load_run_config(getattr(args, "config", None), overrides)


def cmd_gen(args) -> int:
    file_values = parse_kv_file(args.config) if args.config else {}
    task = args.task or file_values.get("task", "core")
    cfg = synth.default_config(task)
    apply_mapping(cfg, {k: v for k, v in file_values.items() if k != "task"})
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    manifest = synth.gen_dataset(cfg, _out_dir(args))
    entries = ctio.load_manifest(manifest)
    print(f"wrote {len(entries)} slices to {args.out} (task={cfg.task})")
    for split in ctio.SPLITS:
        n, n_p, n_n = ctio.class_counts(entries, split)
        print(f"  {split}: total={n} positive={n_p} negative={n_n}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    dataset = _load_dataset(args.manifest)
    ckpt = out / "encoder.milc"
    log_csv = out / "ssl_loss.csv"
    result = sslpretrain.pretrain(
        dataset, arch=cfg.encoder, embed_dim=cfg.embed_dim,
        proj_dim=cfg.ssl_proj_dim, queue_size=cfg.ssl_queue_size,
        epochs=cfg.ssl_epochs, batch_size=cfg.ssl_batch_size, lr=cfg.ssl_lr,
        weight_decay=cfg.ssl_weight_decay, momentum=cfg.ssl_momentum,
        momentum_coef=cfg.ssl_momentum_coef, temperature=cfg.ssl_temperature,
        rec_weight=cfg.ssl_rec_weight, seed=cfg.seed,
        checkpoint_path=ckpt, log_path=log_csv)
    if result.log:
        report.loss_curves_png(
            result.log,
            ["contrastive", "rec_online", "rec_momentum", "rec_mixed", "total"],
            out / "ssl_loss.png", "self-supervised pretraining loss")
        last = result.log[-1]
        print(f"epoch {last['epoch']}: total loss {last['total']:.4f}")
    print(f"encoder checkpoint: {ckpt}")
    return 0


def _resolve_condition_flags(args, cfg: RunConfig) -> str:
    condition = args.condition
    if condition == "A":
        if args.encoder_init is not None:
            raise UsageError("condition A ignores encoder checkpoints; "
                             "drop --encoder-init")
        if args.mode == "transfer":
            raise UsageError("condition A trains its randomly initialized "
                             "encoder; --mode transfer contradicts it")
        if args.encoder not in (None, "lenet5"):
            raise UsageError("condition A uses the lenet5 encoder")
        cfg.mode = "finetune"
        cfg.encoder = "lenet5"
    return condition


def cmd_train(args) -> int:
    cfg = _run_config(args, mode=args.mode, encoder=args.encoder)
    condition = _resolve_condition_flags(args, cfg)
    out = _out_dir(args)
    dataset = _load_dataset(args.manifest)
    result = conditions.train_condition(
        condition, cfg.mode, cfg, dataset, cfg.seed,
        ssl_checkpoint=args.encoder_init)
    ckpt = out / "model.milc"
    save_checkpoint(ckpt, mil.model_tensors(result.model))
    log_csv = out / "training_log.csv"
    _write_csv(log_csv, ["epoch", "train_loss", "valid_loss"], result.log)
    if result.log:
        report.loss_curves_png(result.log, ["train_loss", "valid_loss"],
                               out / "training_curve.png",
                               f"condition {condition} ({cfg.mode})")
    print(f"condition {condition} ({cfg.mode}): "
          f"best epoch {result.best_epoch} of {cfg.mil_epochs}")
    print(f"model checkpoint: {ckpt}")
    return 0


def _load_model(cfg: RunConfig, path: str) -> mil.MilModel:
    expected = {f"enc.{k}": v for k, v in
                encoder_tensor_shapes(cfg.encoder, cfg.embed_dim).items()}
    expected.update({
        "att.w": (cfg.attention_dim,),
        "att.V": (cfg.attention_dim, cfg.embed_dim),
        "att.U": (cfg.attention_dim, cfg.embed_dim),
        "clf.w": (cfg.embed_dim,),
        "clf.b": (1,),
    })
    tensors = load_checkpoint(path, expected=expected)
    model = mil.MilModel(
        encoder=EncoderParams(cfg.encoder, cfg.embed_dim, {}),
        attention=mil.init_attention(cfg.attention_dim, cfg.embed_dim,
                                     np.random.default_rng(0)),
        classifier=mil.init_classifier(cfg.embed_dim,
                                       np.random.default_rng(0)),
    )
    mil.load_model_tensors(model, tensors)
    return model


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    dataset = _load_dataset(args.manifest)
    model = _load_model(cfg, args.model)
    metrics = mil.evaluate(model, dataset, args.split)
    row = {
        "split": args.split,
        "acc": f"{metrics.accuracy:.6f}",
        "prec": f"{metrics.precision:.6f}",
        "rec": f"{metrics.recall:.6f}",
        "f1": f"{metrics.f1:.6f}",
        "TP": metrics.tp, "FP": metrics.fp,
        "FN": metrics.fn, "TN": metrics.tn,
    }
    csv_path = out / "metrics.csv"
    _write_csv(csv_path, list(row), [row])
    report.metrics_bar_png(
        {"acc": metrics.accuracy, "prec": metrics.precision,
         "rec": metrics.recall, "f1": metrics.f1},
        out / "metrics.png", f"{args.split} metrics")
    print(",".join(str(v) for v in row.values()))
    print(f"metrics: {csv_path}")
    return 0


def cmd_viz(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args)
    model = _load_model(cfg, args.model)
    gray = ctio.apply_window(ctio.read_slice(args.slice))
    entry = ctio.ManifestEntry(slice_path=str(args.slice), bag_label=0,
                               split="test")
    prediction = mil.classify_bag(model, make_bag(gray, entry))
    image = viz.render_attention(gray, prediction.attention)
    ppm_path = out / "attention.ppm"
    viz.write_ppm(image, ppm_path)
    report.attention_png(gray, prediction.attention, out / "attention.png")
    if args.grid_csv:
        viz.write_attention_grid(prediction.attention, out / "attention_grid.csv")
    print(f"theta={prediction.theta:.4f} predicted={prediction.predicted}")
    print(f"attention map: {ppm_path}")
    return 0


def cmd_compare(args) -> int:
    overrides = {"compare_seeds": args.seeds} if args.seeds else {}
    cfg = _run_config(args, **overrides)
    out = _out_dir(args)
    dataset = _load_dataset(args.manifest)
    rows, summary = conditions.compare_grid(cfg, dataset, out)
    per_seed = [{
        "condition": r.condition, "mode": r.mode, "seed": r.seed,
        "acc": f"{r.accuracy:.6f}", "prec": f"{r.precision:.6f}",
        "rec": f"{r.recall:.6f}", "f1": f"{r.f1:.6f}",
        "best_epoch": r.best_epoch,
    } for r in rows]
    _write_csv(out / "per_seed.csv",
               ["condition", "mode", "seed", "acc", "prec", "rec", "f1",
                "best_epoch"], per_seed)
    summary_rows = [{
        "condition": s["condition"], "mode": s["mode"],
        "acc": f"{s['acc']:.6f}", "prec": f"{s['prec']:.6f}",
        "rec": f"{s['rec']:.6f}", "f1": f"{s['f1']:.6f}",
        "seeds": s["seeds"],
    } for s in summary]
    _write_csv(out / "summary.csv",
               ["condition", "mode", "acc", "prec", "rec", "f1", "seeds"],
               summary_rows)
    report.compare_bar_png(summary, out / "summary.png")
    print("condition B uses supervised pretraining on the generator's "
          "oracle instance labels (stand-in for external supervised weights)")
    for row in summary_rows:
        print(",".join(str(v) for v in row.values()))
    print(f"summary: {out / 'summary.csv'}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ctmil", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--task", choices=synth.TASKS, help="generator task")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="self-supervised encoder pretraining")
    common(p)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train the MIL stage under a condition")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--condition", choices=conditions.CONDITIONS, default="A")
    p.add_argument("--mode", choices=("transfer", "finetune"))
    p.add_argument("--encoder", choices=("lenet5", "vggs"))
    p.add_argument("--encoder-init", help="SSL encoder checkpoint (C/D)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model checkpoint on a split")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=ctio.SPLITS, default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="render the attention map of one slice")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--slice", required=True)
    p.add_argument("--grid-csv", action="store_true",
                   help="also write the raw 16x16 attention grid")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("compare", help="run the condition grid and summarize")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--seeds", help="comma-separated seeds (default 0,1,2)")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CtmilError, OSError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
