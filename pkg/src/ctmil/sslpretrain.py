"""Self-supervised encoder pretraining: contrastive + reconstruction.

An online encoder embeds one augmented view and a slowly-trailing
momentum copy embeds a second view. The projected features feed an
InfoNCE loss against a FIFO queue of past momentum features. Three
reconstruction branches decode the online, momentum, and mixed
embeddings back to rotation/flip-transformed targets, each gated on an
encoding of its target's transformation; their mean-squared errors are
added to the contrastive term.

Gradients flow through the online encoder, the shared projection head,
the decoder, and the conditioning gate; the momentum branch is constant
per step and is refreshed by exponential moving average afterwards.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment
from .data import SliceDataset
from .errors import TrainingError
from .nncore import layers as L
from .nncore.checkpoint import save_checkpoint
from .nncore.models import (
    DecoderParams,
    EncoderParams,
    decoder_backward,
    decoder_forward,
    encoder_backward,
    encoder_forward,
    init_decoder,
    init_encoder,
)
from .nncore.optim import make_optimizer, sgd_momentum_step
from .perf import enable_heap_reuse

TRANSFORM_DIM = 6


class FeatureQueue:
    """Fixed-capacity FIFO ring of projected momentum features."""

    def __init__(self, capacity: int, dim: int, dtype=np.float32):
        self.capacity = capacity
        self.buffer = np.zeros((capacity, dim), dtype=dtype)
        self.count = 0
        self._ptr = 0

    def push(self, keys: np.ndarray) -> None:
        n = keys.shape[0]
        if n >= self.capacity:
            self.buffer[:] = keys[n - self.capacity:]
            self._ptr = 0
            self.count = self.capacity
            return
        end = self._ptr + n
        if end <= self.capacity:
            self.buffer[self._ptr:end] = keys
        else:
            first = self.capacity - self._ptr
            self.buffer[self._ptr:] = keys[:first]
            self.buffer[:end - self.capacity] = keys[first:]
        self._ptr = end % self.capacity
        self.count = min(self.count + n, self.capacity)

    def snapshot(self) -> np.ndarray:
        """Current negatives, oldest first."""
        if self.count < self.capacity:
            return self.buffer[: self.count].copy()
        return np.concatenate(
            [self.buffer[self._ptr:], self.buffer[: self._ptr]]
        )

    def __len__(self) -> int:
        return self.count


@dataclass
class SslState:
    encoder: EncoderParams
    momentum_encoder: EncoderParams
    proj: dict[str, np.ndarray]       # "proj.w" (M, P), "proj.b" (P,)
    momentum_proj: dict[str, np.ndarray]  # EMA copy feeding the key path
    decoder: DecoderParams
    cond: dict[str, np.ndarray]       # "cond.A" (M, 6), "cond.b" (M,)
    queue: FeatureQueue
    momentum_coef: float
    temperature: float
    rec_weight: float

    def trainable(self) -> dict[str, np.ndarray]:
        out = {f"enc.{k}": v for k, v in self.encoder.tensors.items()}
        out.update(self.proj)
        out.update({f"dec.{k}": v for k, v in self.decoder.tensors.items()})
        out.update(self.cond)
        return out


def init_ssl_state(arch: str, embed_dim: int, proj_dim: int, queue_size: int,
                   rng: np.random.Generator, momentum_coef: float = 0.99,
                   temperature: float = 0.2, rec_weight: float = 1.0,
                   dtype=np.float32) -> SslState:
    encoder = init_encoder(arch, embed_dim, rng, dtype)
    proj = {
        "proj.w": L.kaiming_uniform((embed_dim, proj_dim), embed_dim, rng, dtype),
        # nonzero bias: all-black patches embed to exactly zero at init
        # (zero encoder biases), which must not reach the normalization
        "proj.b": rng.uniform(-0.1, 0.1, size=proj_dim).astype(dtype),
    }
    decoder = init_decoder(embed_dim, rng, dtype)
    cond = {
        "cond.A": L.kaiming_uniform((embed_dim, TRANSFORM_DIM), TRANSFORM_DIM,
                                    rng, dtype),
        "cond.b": np.zeros(embed_dim, dtype=dtype),
    }
    return SslState(
        encoder=encoder,
        momentum_encoder=encoder.copy(),
        proj=proj,
        momentum_proj={k: v.copy() for k, v in proj.items()},
        decoder=decoder,
        cond=cond,
        queue=FeatureQueue(queue_size, proj_dim, dtype=dtype),
        momentum_coef=momentum_coef,
        temperature=temperature,
        rec_weight=rec_weight,
    )


def momentum_update(psi_m: EncoderParams, psi: EncoderParams,
                    coef: float) -> EncoderParams:
    """psi_m <- coef * psi_m + (1 - coef) * psi, elementwise, in place."""
    for name, target in psi_m.tensors.items():
        src = psi.tensors[name]
        if target.shape != src.shape:
            raise TrainingError(
                f"momentum update shape mismatch for {name!r}: "
                f"{target.shape} vs {src.shape}"
            )
        target *= coef
        target += (1.0 - coef) * src
    return psi_m


def contrastive_loss(q: np.ndarray, k: np.ndarray, queue: FeatureQueue,
                     temperature: float = 0.2, with_grad: bool = False):
    """Mean InfoNCE over the batch, negatives from the queue.

    The queue is updated FIFO with k after the loss is computed. With
    ``with_grad`` also returns d(loss)/dq.
    """
    qn = np.sqrt((q * q).sum(axis=1))
    kn = np.sqrt((k * k).sum(axis=1))
    if np.any(qn == 0) or np.any(kn == 0):
        raise FloatingPointError("zero-norm feature in contrastive loss")
    negs = queue.snapshot().astype(q.dtype, copy=False)
    pos = (q * k).sum(axis=1, keepdims=True)
    if negs.size:
        logits = np.concatenate([pos, q @ negs.T], axis=1) / temperature
    else:
        logits = pos / temperature
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    denom = expd.sum(axis=1, keepdims=True)
    logp0 = shifted[:, 0] - np.log(denom[:, 0])
    loss = float(-logp0.mean())
    dq = None
    if with_grad:
        p = expd / denom
        scale = 1.0 / (temperature * q.shape[0])
        dq = (p[:, 0:1] - 1.0) * k * scale
        if negs.size:
            dq = dq + (p[:, 1:] @ negs) * scale
    queue.push(k)
    return (loss, dq) if with_grad else loss


def mixup_features(h_a: np.ndarray, h_b: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination lam * h_a + (1 - lam) * h_b."""
    if not 0.0 <= lam <= 1.0:
        raise TrainingError(f"mixup coefficient must be in [0, 1], got {lam}")
    return lam * h_a + (1.0 - lam) * h_b


def condition_on_transform(h: np.ndarray, tvec: np.ndarray,
                           cond: dict[str, np.ndarray], with_cache=False):
    """Gate features on the target transformation: h * sigmoid(A t + c)."""
    enc = getattr(tvec, "encoding", tvec)
    enc = np.asarray(enc, dtype=h.dtype)
    single = h.ndim == 1
    hb = h[None] if single else h
    tb = enc[None] if enc.ndim == 1 else enc
    gate = L.sigmoid(tb @ cond["cond.A"].T + cond["cond.b"])
    out = hb * gate
    if single:
        out = out[0]
    if with_cache:
        return out, (hb, tb, gate)
    return out


def condition_backward(dout: np.ndarray, cache):
    hb, tb, gate = cache
    dh = dout * gate
    dpre = dout * hb * gate * (1.0 - gate)
    return dh, {"cond.A": dpre.T @ tb, "cond.b": dpre.sum(axis=0)}


def reconstruction_loss(decoded: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all elements."""
    decoded = np.asarray(decoded)
    target = np.asarray(target)
    if decoded.shape != target.shape:
        raise TrainingError(
            f"reconstruction shapes differ: {decoded.shape} vs {target.shape}"
        )
    diff = decoded - target
    return float((diff * diff).mean())


def _mse_with_grad(decoded: np.ndarray, target: np.ndarray):
    """MSE where the grayscale target broadcasts over decoder channels."""
    diff = decoded - target
    loss = float((diff * diff).sum() / diff.size)
    return loss, (2.0 / diff.size) * diff


# --- the combined objective ---------------------------------------------------

def ssl_losses(trainable: dict[str, np.ndarray], arch: str, embed_dim: int,
               momentum_tensors: dict[str, np.ndarray],
               momentum_proj: dict[str, np.ndarray],
               negatives: np.ndarray, temperature: float, rec_weight: float,
               views1: np.ndarray, views2: np.ndarray,
               targets1: np.ndarray, targets2: np.ndarray,
               tvecs1: np.ndarray, tvecs2: np.ndarray, lam: float,
               with_grads: bool = False):
    """Loss components (and gradients) as a pure function of the
    trainable tensors; the momentum encoder, momentum projection head,
    and queue are constants (the key path carries no gradient).

    The views are single-channel (B, 32, 32) batches; targets likewise,
    broadcast over the decoder's three output channels.
    """
    enc = EncoderParams(arch, embed_dim,
                        {k[4:]: v for k, v in trainable.items()
                         if k.startswith("enc.")})
    dec = DecoderParams(embed_dim,
                        {k[4:]: v for k, v in trainable.items()
                         if k.startswith("dec.")})
    cond = {k: v for k, v in trainable.items() if k.startswith("cond.")}
    proj_w, proj_b = trainable["proj.w"], trainable["proj.b"]
    m_enc = EncoderParams(arch, embed_dim, momentum_tensors)

    x1 = views1[:, None]
    x2 = views2[:, None]
    h_on, enc_cache = encoder_forward(enc, x1, want_cache=with_grads)
    h_mo, _ = encoder_forward(m_enc, x2)

    p_on, proj_cache = L.affine_forward(h_on, proj_w, proj_b)
    q, qn_cache = L.l2normalize_forward(p_on)
    p_mo = h_mo @ momentum_proj["proj.w"] + momentum_proj["proj.b"]
    k_norms = np.sqrt((p_mo * p_mo).sum(axis=1, keepdims=True))
    if np.any(k_norms == 0):
        raise FloatingPointError("zero-norm momentum feature")
    k = p_mo / k_norms

    # InfoNCE against the fixed negatives
    pos = (q * k).sum(axis=1, keepdims=True)
    if negatives.size:
        logits = np.concatenate([pos, q @ negatives.T], axis=1) / temperature
    else:
        logits = pos / temperature
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    denom = expd.sum(axis=1, keepdims=True)
    l_con = float(-(shifted[:, 0] - np.log(denom[:, 0])).mean())

    # reconstruction branches: online, momentum, mixed
    t1 = targets1[:, None]
    t2 = targets2[:, None]
    hc1, cc1 = condition_on_transform(h_on, tvecs1, cond, with_cache=True)
    d1, dcache1 = decoder_forward(dec, hc1, tvecs1, want_cache=with_grads)
    l_on, dd1 = _mse_with_grad(d1, t1)

    hc2, cc2 = condition_on_transform(h_mo, tvecs2, cond, with_cache=True)
    d2, dcache2 = decoder_forward(dec, hc2, tvecs2, want_cache=with_grads)
    l_mo, dd2 = _mse_with_grad(d2, t2)

    h_mix = mixup_features(h_on, h_mo, lam)
    tv_mix = lam * tvecs1 + (1.0 - lam) * tvecs2
    tg_mix = lam * t1 + (1.0 - lam) * t2
    hcm, ccm = condition_on_transform(h_mix, tv_mix, cond, with_cache=True)
    dm, dcachem = decoder_forward(dec, hcm, tv_mix, want_cache=with_grads)
    l_mix, ddm = _mse_with_grad(dm, tg_mix)

    components = {
        "contrastive": l_con,
        "rec_online": l_on,
        "rec_momentum": l_mo,
        "rec_mixed": l_mix,
        "total": l_con + rec_weight * (l_on + l_mo + l_mix),
    }
    if not with_grads:
        return components, None, k

    grads: dict[str, np.ndarray] = {}

    def add(name, value):
        if name in grads:
            grads[name] += value
        else:
            grads[name] = value

    # contrastive path
    p = expd / denom
    scale = 1.0 / (temperature * q.shape[0])
    dq = (p[:, 0:1] - 1.0) * k * scale
    if negatives.size:
        dq = dq + (p[:, 1:] @ negatives) * scale
    dp_on = L.l2normalize_backward(dq, qn_cache)
    dh_on, dproj_w, dproj_b = L.affine_backward(dp_on, proj_cache)
    add("proj.w", dproj_w)
    add("proj.b", dproj_b)

    # reconstruction paths (momentum-branch feature grads are discarded)
    dhc1, gdec = decoder_backward(dec, dcache1, rec_weight * dd1)
    for n, v in gdec.items():
        add(f"dec.{n}", v)
    dh1, gcond = condition_backward(dhc1, cc1)
    for n, v in gcond.items():
        add(n, v)
    dh_on = dh_on + dh1

    dhc2, gdec = decoder_backward(dec, dcache2, rec_weight * dd2)
    for n, v in gdec.items():
        add(f"dec.{n}", v)
    _, gcond = condition_backward(dhc2, cc2)
    for n, v in gcond.items():
        add(n, v)

    dhcm, gdec = decoder_backward(dec, dcachem, rec_weight * ddm)
    for n, v in gdec.items():
        add(f"dec.{n}", v)
    dh_mix, gcond = condition_backward(dhcm, ccm)
    for n, v in gcond.items():
        add(n, v)
    dh_on = dh_on + lam * dh_mix

    for n, v in encoder_backward(enc, enc_cache, dh_on).items():
        add(f"enc.{n}", v)
    return components, grads, k


def ssl_step(state: SslState, batch: np.ndarray, rng: np.random.Generator,
             optimizer) -> dict[str, float]:
    """One optimization step on a batch of instances.

    ``batch`` is (B, 32, 32) grayscale or (B, 32, 32, 3) replicated;
    returns the loss components. Updates the momentum encoder and the
    negative queue.
    """
    if batch.ndim == 4:
        batch = batch[..., 0]
    if batch.shape[0] < 1:
        raise TrainingError("ssl_step needs a nonempty batch")
    views1, views2, tg1, tg2, tv1, tv2 = augment.make_views_batch(batch, rng)
    lam = float(rng.beta(1.0, 1.0))

    trainable = state.trainable()
    components, grads, k = ssl_losses(
        trainable, state.encoder.arch, state.encoder.embed_dim,
        state.momentum_encoder.tensors, state.momentum_proj,
        state.queue.snapshot(), state.temperature, state.rec_weight,
        views1, views2, tg1, tg2, tv1, tv2, lam, with_grads=True)
    if not np.isfinite(components["total"]):
        raise TrainingError(f"non-finite SSL loss: {components}")

    sgd_momentum_step(trainable, grads, optimizer)
    momentum_update(state.momentum_encoder, state.encoder, state.momentum_coef)
    coef = state.momentum_coef
    for name, target in state.momentum_proj.items():
        target *= coef
        target += (1.0 - coef) * state.proj[name]
    state.queue.push(k.astype(state.queue.buffer.dtype, copy=False))
    return components


@dataclass
class PretrainResult:
    state: SslState
    log: list[dict] = field(default_factory=list)


def pretrain(dataset: SliceDataset, *, arch: str, embed_dim: int,
             proj_dim: int, queue_size: int, epochs: int, batch_size: int,
             lr: float, weight_decay: float, momentum: float,
             momentum_coef: float, temperature: float, rec_weight: float,
             seed: int, checkpoint_path: str | Path,
             log_path: str | Path | None = None) -> PretrainResult:
    """Run SSL over every instance of every training bag, epoch by epoch,
    and write the encoder-only checkpoint of the final state."""
    enable_heap_reuse()
    rng = np.random.default_rng(seed)
    state = init_ssl_state(arch, embed_dim, proj_dim, queue_size, rng,
                           momentum_coef=momentum_coef,
                           temperature=temperature, rec_weight=rec_weight)
    optimizer = make_optimizer("sgd_momentum", state.trainable(), lr=lr,
                               weight_decay=weight_decay, momentum=momentum)
    stack = dataset.tile_stack("train")
    pool = stack.reshape(-1, stack.shape[2], stack.shape[3])
    n = pool.shape[0]

    log: list[dict] = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        sums: dict[str, float] = {}
        steps = 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = pool[idx].astype(np.float32) / 255.0
            components = ssl_step(state, batch, rng, optimizer)
            for name, value in components.items():
                sums[name] = sums.get(name, 0.0) + value
            steps += 1
        row = {"epoch": epoch}
        row.update({name: sums[name] / steps for name in
                    ("contrastive", "rec_online", "rec_momentum",
                     "rec_mixed", "total")})
        log.append(row)

    save_checkpoint(checkpoint_path, state.encoder.tensors)
    if log_path is not None:
        write_loss_log(log, log_path)
    return PretrainResult(state=state, log=log)


def write_loss_log(log: list[dict], path: str | Path) -> None:
    fields = ["epoch", "contrastive", "rec_online", "rec_momentum",
              "rec_mixed", "total"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(log)
