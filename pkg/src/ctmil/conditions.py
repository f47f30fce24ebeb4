"""The four-condition comparison harness.

Conditions mirror the experimental grid:

* A  -- randomly initialized LeNet-style encoder trained end to end
        with the MIL loss (the baseline; always fine-tune).
* B  -- encoder pretrained with supervised learning. At desk scale the
        external-weights variant is replaced by supervised pretraining
        on the generator's oracle instance labels, preserving the
        supervised-vs-self-supervised comparison without downloading
        weights.
* C/D -- encoder pretrained with the self-supervised stage; C and D
        differ only in which dataset the SSL checkpoint came from, so
        the harness treats both as "ssl" with a checkpoint argument.

B and C/D each run in transfer (frozen encoder) and fine-tune modes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mil, sslpretrain
from .config import RunConfig
from .data import SliceDataset
from .errors import ConfigError, TrainingError
from .nncore import layers as L
from .nncore.checkpoint import load_checkpoint
from .nncore.models import (
    EncoderParams,
    encoder_backward,
    encoder_forward,
    encoder_tensor_shapes,
    init_encoder,
)
from .nncore.optim import adam_step, make_optimizer
from .perf import enable_heap_reuse

CONDITIONS = ("A", "B", "C", "D")


def supervised_instance_pretrain(dataset: SliceDataset, *, arch: str,
                                 embed_dim: int, epochs: int, batch_size: int,
                                 lr: float, seed: int) -> EncoderParams:
    """Train the encoder on oracle instance labels (condition B analog).

    A linear head on the embedding minimizes binary cross-entropy over
    class-balanced instance batches; the head is discarded afterwards.
    """
    enable_heap_reuse()
    entries = dataset.require_split("train")
    if any(e.instance_labels is None for e in entries):
        raise ConfigError(
            "condition B needs instance labels in the train manifest"
        )
    stack = dataset.tile_stack("train")
    pool = stack.reshape(-1, stack.shape[2], stack.shape[3])
    labels = np.concatenate([np.asarray(e.instance_labels, dtype=np.int8)
                             for e in entries])
    pos_idx = np.flatnonzero(labels == 1)
    neg_idx = np.flatnonzero(labels == 0)
    if pos_idx.size == 0 or neg_idx.size == 0:
        raise ConfigError("condition B needs both instance classes present")

    rng = np.random.default_rng(seed)
    encoder = init_encoder(arch, embed_dim, rng)
    head = {
        "head.w": L.kaiming_uniform((embed_dim,), embed_dim, rng),
        "head.b": np.zeros(1, dtype=np.float32),
    }
    trainable = {f"enc.{k}": v for k, v in encoder.tensors.items()}
    trainable.update(head)
    opt = make_optimizer("adam", trainable, lr=lr)

    half = max(batch_size // 2, 1)
    steps_per_epoch = max(pool.shape[0] // batch_size, 1)
    for _ in range(epochs):
        for _ in range(steps_per_epoch):
            idx = np.concatenate([rng.choice(pos_idx, half),
                                  rng.choice(neg_idx, half)])
            x = pool[idx].astype(np.float32)[:, None] / 255.0
            y = labels[idx].astype(np.float32)
            h, cache = encoder_forward(encoder, x, want_cache=True)
            logits = h @ head["head.w"] + head["head.b"][0]
            p = L.sigmoid(logits)
            pc = np.clip(p, 1e-7, 1.0 - 1e-7)
            loss = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean())
            if not np.isfinite(loss):
                raise TrainingError("non-finite supervised pretraining loss")
            dlogits = (p - y) / y.size
            grads = {
                "head.w": h.T @ dlogits,
                "head.b": np.array([dlogits.sum()], dtype=np.float32),
            }
            dh = np.outer(dlogits, head["head.w"])
            grads.update({f"enc.{k}": v for k, v in
                          encoder_backward(encoder, cache, dh).items()})
            adam_step(trainable, grads, opt)
    return encoder


def build_encoder(condition: str, cfg: RunConfig, dataset: SliceDataset,
                  seed: int, ssl_checkpoint: str | Path | None) -> EncoderParams:
    """Encoder initialization for one condition."""
    if condition == "A":
        if ssl_checkpoint is not None:
            raise ConfigError("condition A ignores encoder checkpoints; "
                              "do not pass one")
        return init_encoder("lenet5", cfg.embed_dim,
                            np.random.default_rng(seed))
    if condition == "B":
        return supervised_instance_pretrain(
            dataset, arch=cfg.encoder, embed_dim=cfg.embed_dim,
            epochs=cfg.sup_epochs, batch_size=cfg.sup_batch_size,
            lr=cfg.sup_lr, seed=seed)
    if condition in ("C", "D"):
        if ssl_checkpoint is None:
            raise ConfigError(
                f"condition {condition} needs --encoder-init with an SSL "
                f"checkpoint"
            )
        shapes = encoder_tensor_shapes(cfg.encoder, cfg.embed_dim)
        tensors = load_checkpoint(ssl_checkpoint, expected=shapes)
        return EncoderParams(cfg.encoder, cfg.embed_dim, tensors)
    raise ConfigError(f"condition must be one of {CONDITIONS}, got {condition!r}")


def train_condition(condition: str, mode: str, cfg: RunConfig,
                    dataset: SliceDataset, seed: int,
                    ssl_checkpoint: str | Path | None = None,
                    ) -> mil.MilTrainResult:
    """Build the condition's encoder and run the MIL stage."""
    encoder = build_encoder(condition, cfg, dataset, seed, ssl_checkpoint)
    rng = np.random.default_rng(seed + 1)
    model = mil.MilModel(
        encoder=encoder,
        attention=mil.init_attention(cfg.attention_dim, cfg.embed_dim, rng),
        classifier=mil.init_classifier(cfg.embed_dim, rng),
    )
    return mil.train_mil(dataset, model, epochs=cfg.mil_epochs, lr=cfg.mil_lr,
                         weight_decay=cfg.mil_weight_decay,
                         beta1=cfg.mil_beta1, beta2=cfg.mil_beta2,
                         seed=seed + 2, mode=mode)


@dataclass
class CompareRow:
    condition: str
    mode: str
    seed: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    best_epoch: int


def compare_grid(cfg: RunConfig, dataset: SliceDataset, workdir: Path,
                 ) -> tuple[list[CompareRow], list[dict]]:
    """Run {A} + {B, SSL} x {transfer, finetune} over the shared seeds.

    Returns per-seed rows and the median-over-seeds summary, one row per
    condition x mode.
    """
    workdir.mkdir(parents=True, exist_ok=True)
    seeds = cfg.seeds_list()
    rows: list[CompareRow] = []
    for seed in seeds:
        ssl_ckpt = workdir / f"ssl_encoder_seed{seed}.milc"
        sslpretrain.pretrain(
            dataset, arch=cfg.encoder, embed_dim=cfg.embed_dim,
            proj_dim=cfg.ssl_proj_dim, queue_size=cfg.ssl_queue_size,
            epochs=cfg.ssl_epochs, batch_size=cfg.ssl_batch_size,
            lr=cfg.ssl_lr, weight_decay=cfg.ssl_weight_decay,
            momentum=cfg.ssl_momentum, momentum_coef=cfg.ssl_momentum_coef,
            temperature=cfg.ssl_temperature, rec_weight=cfg.ssl_rec_weight,
            seed=seed, checkpoint_path=ssl_ckpt)
        grid = [("A", "finetune", None)]
        grid += [("B", mode, None) for mode in ("transfer", "finetune")]
        grid += [("D", mode, ssl_ckpt) for mode in ("transfer", "finetune")]
        for condition, mode, ckpt in grid:
            result = train_condition(condition, mode, cfg, dataset, seed,
                                     ssl_checkpoint=ckpt)
            metrics = mil.evaluate(result.model, dataset, "test")
            rows.append(CompareRow(
                condition=condition, mode=mode, seed=seed,
                accuracy=metrics.accuracy, precision=metrics.precision,
                recall=metrics.recall, f1=metrics.f1,
                best_epoch=result.best_epoch))
    summary = summarize_rows(rows)
    return rows, summary


def summarize_rows(rows: list[CompareRow]) -> list[dict]:
    """Median over seeds, one row per condition x mode, A first."""
    keys: list[tuple[str, str]] = []
    for row in rows:
        key = (row.condition, row.mode)
        if key not in keys:
            keys.append(key)
    summary = []
    for condition, mode in keys:
        chosen = [r for r in rows if (r.condition, r.mode) == (condition, mode)]
        summary.append({
            "condition": condition,
            "mode": mode,
            "acc": float(np.median([r.accuracy for r in chosen])),
            "prec": float(np.median([r.precision for r in chosen])),
            "rec": float(np.median([r.recall for r in chosen])),
            "f1": float(np.median([r.f1 for r in chosen])),
            "seeds": len(chosen),
        })
    return summary
