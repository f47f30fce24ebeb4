"""Patch-bag multiple-instance learning pipeline for CT slices.

Two training stages operate on 512x512 slices decomposed into 256
instances of 32x32 pixels: self-supervised pretraining of the patch
encoder (contrastive + reconstruction), then attention-based MIL over
the bags. A synthetic slice generator provides desk-scale datasets
with oracle instance labels for evaluation.
"""

__version__ = "0.1.0"
