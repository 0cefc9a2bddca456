"""Adversarially robust one-class novelty detection.

Reconstruction-based detectors (AE/DAE/VAE on a unified conv backbone), a
suite of novelty-score adversarial attacks, a latent-subspace purifier
defense with incremental EMA training, and the evaluation harness around
them.
"""

__version__ = "0.1.0"

from .attacks import AttackConfig, attack_loss, blackbox_transfer, craft_adversarial
from .data import Dataset, load_cifar10_bin, load_idx, make_synthetic, resize_bilinear_32
from .evaluation import EvalReport, OneClassSplit, auroc, build_split, evaluate, fpr_at_tpr, latent_stability
from .models import DetectorSpec, build_detector, decode, encode, novelty_score
from .pca import PcaComponents, fit_pca, forward_pca, inverse_pca
from .purifier import LatentComponents, PurifierConfig, apply_purifier, ema_update, fold_batch, unfold_batch
from .training import TrainConfig, train_one_class

__all__ = [
    "AttackConfig", "attack_loss", "blackbox_transfer", "craft_adversarial",
    "Dataset", "load_cifar10_bin", "load_idx", "make_synthetic", "resize_bilinear_32",
    "EvalReport", "OneClassSplit", "auroc", "build_split", "evaluate", "fpr_at_tpr",
    "latent_stability", "DetectorSpec", "build_detector", "decode", "encode",
    "novelty_score", "PcaComponents", "fit_pca", "forward_pca", "inverse_pca",
    "LatentComponents", "PurifierConfig", "apply_purifier", "ema_update",
    "fold_batch", "unfold_batch", "TrainConfig", "train_one_class",
]
