"""Attention-based multiple-instance learning over patch bags.

Instances are embedded, pooled by gated attention into one bag
representation, and classified into the probability that the bag is
positive. Training minimizes class-weighted binary cross-entropy, one
bag per optimization step, and keeps the checkpoint of the epoch with
minimum validation loss. With a frozen encoder (transfer mode) instance
embeddings are computed once and reused across epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ctio
from .data import SliceDataset
from .errors import ConfigError, TrainingError, ValidationError
from .nncore import layers as _L
from .nncore.models import EncoderParams, encoder_backward, encoder_forward
from .nncore.layers import sigmoid
from .nncore.optim import adam_step, make_optimizer
from .patching import Bag
from .perf import enable_heap_reuse

THETA_EPS = 1e-7  # probability clamp inside the loss
THRESHOLD = 0.5


@dataclass
class AttentionParams:
    """Gated-attention tensors: score vector w, feature maps V and U."""

    w: np.ndarray  # (L,)
    V: np.ndarray  # (L, M)
    U: np.ndarray  # (L, M)


@dataclass
class ClassifierParams:
    w: np.ndarray  # (M,)
    b: np.ndarray  # (1,)


@dataclass
class MilModel:
    encoder: EncoderParams
    attention: AttentionParams
    classifier: ClassifierParams
    encoder_frozen: bool = False


@dataclass
class BagPrediction:
    theta: float
    attention: np.ndarray  # (K,) weights in grid order, summing to 1
    predicted: int


@dataclass
class Metrics:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if (p + r) else 0.0


def init_attention(attn_dim: int, embed_dim: int, rng: np.random.Generator,
                   dtype=np.float32) -> AttentionParams:
    return AttentionParams(
        w=_L.kaiming_uniform((attn_dim,), attn_dim, rng, dtype),
        V=_L.kaiming_uniform((attn_dim, embed_dim), embed_dim, rng, dtype),
        U=_L.kaiming_uniform((attn_dim, embed_dim), embed_dim, rng, dtype),
    )


def init_classifier(embed_dim: int, rng: np.random.Generator,
                    dtype=np.float32) -> ClassifierParams:
    return ClassifierParams(
        w=_L.kaiming_uniform((embed_dim,), embed_dim, rng, dtype),
        b=np.zeros(1, dtype=dtype),
    )


# --- forward/backward ---------------------------------------------------------

def _attention_forward(H: np.ndarray, att: AttentionParams):
    T = np.tanh(H @ att.V.T)          # (K, L)
    S = sigmoid(H @ att.U.T)          # (K, L)
    G = T * S
    scores = G @ att.w                # (K,)
    shifted = scores - scores.max()
    expd = np.exp(shifted)
    a = expd / expd.sum()
    return a, (H, T, S, G, a)


def attention_weights(H: np.ndarray, att: AttentionParams) -> np.ndarray:
    """Softmax attention over gated scores w^T (tanh(V h) * sigm(U h))."""
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] < 1:
        raise ValidationError(f"H must be (K, M) with K >= 1, got {H.shape}")
    if not np.all(np.isfinite(H)):
        raise TrainingError("non-finite embeddings in attention input")
    a, _ = _attention_forward(H, att)
    return a


def pool(H: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Attention-weighted average of instance embeddings."""
    return a @ H


def _bag_head_forward(H: np.ndarray, att: AttentionParams, clf: ClassifierParams):
    a, att_cache = _attention_forward(H, att)
    z = a @ H
    logit = float(z @ clf.w + clf.b[0])
    theta = float(sigmoid(np.array([logit]))[0])
    return theta, a, (att_cache, z)


def _bag_head_backward(dlogit: float, H: np.ndarray, att: AttentionParams,
                       clf: ClassifierParams, cache):
    (_, T, S, G, a), z = cache
    dclf_w = dlogit * z
    dclf_b = np.array([dlogit], dtype=z.dtype)
    dz = dlogit * clf.w
    # z = a @ H: split into the direct H path and the attention path
    dH = np.outer(a, dz)
    da = H @ dz
    ds = a * (da - float(a @ da))
    dG = np.outer(ds, att.w)               # (K, L)
    dT = dG * S
    dS = dG * T
    dZv = dT * (1.0 - T * T)
    dZu = dS * S * (1.0 - S)
    dV = dZv.T @ H
    dU = dZu.T @ H
    dw = G.T @ ds
    dH += dZv @ att.V + dZu @ att.U
    return dH, {"att.w": dw, "att.V": dV, "att.U": dU,
                "clf.w": dclf_w, "clf.b": dclf_b}


def _as_nchw(instances: np.ndarray) -> np.ndarray:
    """Accept (K, 32, 32, 3) channels-last or ready (K, C, 32, 32)."""
    if instances.ndim == 4 and instances.shape[-1] == 3:
        x = np.moveaxis(instances, -1, 1)
        # replicated-grayscale bags take the single-channel fast path
        if np.array_equal(x[:, 0], x[:, 1]) and np.array_equal(x[:, 0], x[:, 2]):
            x = x[:, :1]
        return np.ascontiguousarray(x)
    return instances


def _embed_bag(encoder: EncoderParams, instances: np.ndarray, want_cache=False):
    return encoder_forward(encoder, _as_nchw(instances), want_cache=want_cache)


def classify_bag(model: MilModel, bag: Bag) -> BagPrediction:
    """Embed, attention-pool, and threshold one bag at 0.5."""
    H, _ = _embed_bag(model.encoder, bag.instances)
    theta, a, _ = _bag_head_forward(H, model.attention, model.classifier)
    return BagPrediction(theta=theta, attention=a,
                         predicted=int(theta >= THRESHOLD))


def class_weights(n_total: int, n_pos: int, n_neg: int) -> tuple[float, float]:
    """Loss weights (N/n_p, N/n_n) for positive and negative bags."""
    if n_pos <= 0 or n_neg <= 0:
        raise ConfigError(
            f"class weighting needs both classes present, got "
            f"n_pos={n_pos}, n_neg={n_neg}"
        )
    return n_total / n_pos, n_total / n_neg


def weighted_bce(theta: float, y: int, w_pos: float, w_neg: float) -> float:
    """-(w_p y log(theta) + w_n (1-y) log(1-theta)), theta clamped away
    from {0, 1} by 1e-7."""
    t = min(max(theta, THETA_EPS), 1.0 - THETA_EPS)
    if y:
        return -w_pos * np.log(t)
    return -w_neg * np.log(1.0 - t)


def _bce_dlogit(theta: float, y: int, w_pos: float, w_neg: float) -> float:
    """d(weighted_bce)/d(logit) through the sigmoid; zero in the clamp."""
    if theta <= THETA_EPS or theta >= 1.0 - THETA_EPS:
        return 0.0
    return (w_pos * (theta - 1.0)) if y else (w_neg * theta)


def bag_loss_and_grads(model: MilModel, instances: np.ndarray, y: int,
                       w_pos: float, w_neg: float, embeddings=None):
    """Loss, prediction, and analytic gradients for one bag.

    ``embeddings`` short-circuits the encoder (frozen-encoder training
    passes cached ones; encoder gradients are then skipped).
    """
    if embeddings is None:
        H, enc_cache = _embed_bag(model.encoder, instances,
                                  want_cache=not model.encoder_frozen)
    else:
        H, enc_cache = embeddings, None
    theta, a, head_cache = _bag_head_forward(H, model.attention, model.classifier)
    loss = weighted_bce(theta, y, w_pos, w_neg)
    dlogit = _bce_dlogit(theta, y, w_pos, w_neg)
    dH, grads = _bag_head_backward(dlogit, H, model.attention,
                                   model.classifier, head_cache)
    if enc_cache is not None:
        enc_grads = encoder_backward(model.encoder, enc_cache, dH)
        grads.update({f"enc.{k}": v for k, v in enc_grads.items()})
    return loss, theta, a, grads


def bag_loss(model: MilModel, instances: np.ndarray, y: int,
             w_pos: float, w_neg: float, embeddings=None) -> float:
    if embeddings is None:
        H, _ = _embed_bag(model.encoder, instances)
    else:
        H = embeddings
    theta, _, _ = _bag_head_forward(H, model.attention, model.classifier)
    return weighted_bce(theta, y, w_pos, w_neg)


# --- training loop ------------------------------------------------------------

def _head_params(model: MilModel) -> dict[str, np.ndarray]:
    return {"att.w": model.attention.w, "att.V": model.attention.V,
            "att.U": model.attention.U, "clf.w": model.classifier.w,
            "clf.b": model.classifier.b}


def model_tensors(model: MilModel) -> dict[str, np.ndarray]:
    """All named tensors (encoder prefixed "enc."), checkpoint order."""
    out = {f"enc.{k}": v for k, v in model.encoder.tensors.items()}
    out.update(_head_params(model))
    return out


def load_model_tensors(model: MilModel, tensors: dict[str, np.ndarray]) -> None:
    for name, value in tensors.items():
        if name.startswith("enc."):
            model.encoder.tensors[name[4:]] = value.copy()
        elif name == "att.w":
            model.attention.w = value.copy()
        elif name == "att.V":
            model.attention.V = value.copy()
        elif name == "att.U":
            model.attention.U = value.copy()
        elif name == "clf.w":
            model.classifier.w = value.copy()
        elif name == "clf.b":
            model.classifier.b = value.copy()
        else:
            raise ConfigError(f"unknown model tensor {name!r}")


@dataclass
class MilTrainResult:
    model: MilModel
    best_epoch: int
    log: list[dict] = field(default_factory=list)  # epoch, train_loss, valid_loss


def train_mil(dataset: SliceDataset, model: MilModel, *, epochs: int,
              lr: float, weight_decay: float, beta1: float, beta2: float,
              seed: int, mode: str = "transfer") -> MilTrainResult:
    """Bag-level training with Adam; returns the min-validation-loss model.

    In transfer mode the encoder is frozen (its tensors are bit-identical
    before and after) and instance embeddings are precomputed once.
    """
    if mode not in ("transfer", "finetune"):
        raise ConfigError(f"mode must be 'transfer' or 'finetune', got {mode!r}")
    enable_heap_reuse()
    model.encoder_frozen = mode == "transfer"
    train_entries = dataset.require_split("train")
    valid_entries = dataset.require_split("valid")
    n, n_p, n_n = ctio.class_counts(dataset.entries, "train")
    w_pos, w_neg = class_weights(n, n_p, n_n)

    trainable = dict(_head_params(model))
    if not model.encoder_frozen:
        trainable.update({f"enc.{k}": v for k, v in model.encoder.tensors.items()})
    opt = make_optimizer("adam", trainable, lr=lr, weight_decay=weight_decay,
                         beta1=beta1, beta2=beta2)

    cached_h: dict[int, np.ndarray] = {}

    def bag_gray(entry) -> np.ndarray:
        # tiles stay replicated-grayscale, so feed the 1-channel fast path
        tiles = dataset.tiles(entry)
        return tiles[:, None].astype(np.float32) / 255.0

    def embeddings_of(entry_idx: int, entries, offset: int):
        key = offset + entry_idx
        h = cached_h.get(key)
        if h is None:
            h, _ = encoder_forward(model.encoder, bag_gray(entries[entry_idx]))
            cached_h[key] = h
        return h

    rng = np.random.default_rng(seed)
    best_loss = np.inf
    best_epoch = 0
    best_tensors = {k: v.copy() for k, v in model_tensors(model).items()}
    log: list[dict] = []

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_entries))
        train_losses = []
        for idx in order:
            entry = train_entries[idx]
            if model.encoder_frozen:
                h = embeddings_of(idx, train_entries, 0)
                loss, _, _, grads = bag_loss_and_grads(
                    model, None, entry.bag_label, w_pos, w_neg, embeddings=h)
            else:
                loss, _, _, grads = bag_loss_and_grads(
                    model, bag_gray(entry), entry.bag_label, w_pos, w_neg)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            adam_step(trainable, grads, opt)
            train_losses.append(loss)

        valid_losses = []
        for vidx, entry in enumerate(valid_entries):
            if model.encoder_frozen:
                h = embeddings_of(vidx, valid_entries, len(train_entries))
                valid_losses.append(bag_loss(model, None, entry.bag_label,
                                             w_pos, w_neg, embeddings=h))
            else:
                valid_losses.append(bag_loss(model, bag_gray(entry),
                                             entry.bag_label, w_pos, w_neg))
        train_loss = float(np.mean(train_losses))
        valid_loss = float(np.mean(valid_losses))
        log.append({"epoch": epoch, "train_loss": train_loss,
                    "valid_loss": valid_loss})
        if valid_loss < best_loss:
            best_loss = valid_loss
            best_epoch = epoch
            best_tensors = {k: v.copy() for k, v in model_tensors(model).items()}

    load_model_tensors(model, best_tensors)
    return MilTrainResult(model=model, best_epoch=best_epoch, log=log)


def evaluate(model: MilModel, dataset: SliceDataset, split: str) -> Metrics:
    """Confusion counts and derived metrics on one split, threshold 0.5."""
    entries = dataset.require_split(split)
    metrics = Metrics()
    for entry in entries:
        pred = classify_bag(model, dataset.bag(entry)).predicted
        if entry.bag_label == 1:
            if pred == 1:
                metrics.tp += 1
            else:
                metrics.fn += 1
        else:
            if pred == 1:
                metrics.fp += 1
            else:
                metrics.tn += 1
    return metrics
