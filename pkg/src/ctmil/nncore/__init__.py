"""Neural building blocks: layers with analytic gradients, parameter
containers, optimizers, the checkpoint format, and the finite-difference
gradient oracle used by the test suite."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_grad, finite_diff_grad_sampled, rel_error
from .models import (
    DecoderParams,
    EncoderParams,
    decode,
    decoder_backward,
    decoder_forward,
    encode,
    encoder_backward,
    encoder_forward,
    init_decoder,
    init_encoder,
)
from .optim import OptimState, adam_step, make_optimizer, sgd_momentum_step

__all__ = [
    "DecoderParams",
    "EncoderParams",
    "OptimState",
    "adam_step",
    "decode",
    "decoder_backward",
    "decoder_forward",
    "encode",
    "encoder_backward",
    "encoder_forward",
    "finite_diff_grad",
    "finite_diff_grad_sampled",
    "init_decoder",
    "init_encoder",
    "load_checkpoint",
    "make_optimizer",
    "rel_error",
    "save_checkpoint",
    "sgd_momentum_step",
]
