"""Asymmetric tri-training for unsupervised domain adaptation, from scratch
on numpy: two heads pseudo-label the unlabeled target domain, a third head
trains on those labels, and analysis tooling verifies the generalization
bound the approach rests on."""

from . import analysis, datagen, labeler, nnlib, trainer, trinet

__all__ = ["analysis", "datagen", "labeler", "nnlib", "trainer", "trinet"]
__version__ = "0.1.0"
