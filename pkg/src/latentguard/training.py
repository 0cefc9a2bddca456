"""Natural and adversarial training of one-class detectors.

The loop minimizes reconstruction MSE (plus the KL term for the VAE) over
known-class batches with Adam. In adversarial mode every batch is replaced by
adversarial examples crafted on the spot with all labels +1 (only known-class
data exists at training time). Attack crafting runs the model in eval mode
(frozen batchnorm statistics), the weight update in train mode.

With a purifier attached, each iteration runs forward with the current
components, refits batch statistics, blends them into the components by EMA,
and only then applies the weight step computed against the pre-update
components. The EMA rates follow the learning-rate schedule (both drop by the
same factor at the same epochs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, craft_adversarial
from .autodiff import Tape, backward
from .exceptions import ConfigError, ContractError, NumericError
from .models import Detector, DetectorSpec, build_detector
from .purifier import ema_update
from . import ops


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 5e-5
    weight_decay: float = 1e-4
    lr_drop_epochs: tuple[int, ...] = (20, 40)
    lr_drop_factor: float = 10.0
    mode: str = "natural"  # natural | adversarial
    attack: AttackConfig | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if any(e >= self.epochs for e in self.lr_drop_epochs):
            raise ConfigError("lr drop epochs must lie inside the epoch budget")
        if self.mode not in ("natural", "adversarial"):
            raise ConfigError(f"mode must be natural or adversarial, got {self.mode!r}")
        if self.mode == "adversarial" and self.attack is None:
            raise ConfigError("adversarial mode requires an attack config")


class Adam:
    """Adam with decoupled-from-nothing classic L2: grad += weight_decay * param."""

    def __init__(self, params, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            if g is None:
                continue
            g = g + self.weight_decay * p.data
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate in force during a given zero-based epoch."""
    drops = sum(1 for e in cfg.lr_drop_epochs if epoch >= e)
    return cfg.lr / (cfg.lr_drop_factor ** drops)


def adversarial_batch(model: Detector, clean_batch: np.ndarray,
                      attack_cfg: AttackConfig) -> np.ndarray:
    """Craft the training-time adversarial batch; labels are forced to +1."""
    labels = np.ones(clean_batch.shape[0], dtype=model.dtype)
    return craft_adversarial(model, clean_batch, labels, attack_cfg)


@dataclass
class TrainResult:
    model: Detector
    epoch_losses: list[float] = field(default_factory=list)

    def loss_csv_rows(self) -> list[str]:
        rows = ["epoch,mean_loss"]
        rows += [f"{i},{loss:.10g}" for i, loss in enumerate(self.epoch_losses)]
        return rows


def train_model(model: Detector, images: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """Run the training loop on an existing model (supports warm starts)."""
    cfg.validate()
    images = np.asarray(images, dtype=model.dtype)
    if images.ndim != 4 or images.shape[0] == 0:
        raise ContractError(f"training set must be a non-empty (n, c, h, w) array, got {images.shape}")

    ss = np.random.SeedSequence(cfg.seed)
    shuffle_rng, noise_rng = [np.random.default_rng(s) for s in ss.spawn(2)]
    n = images.shape[0]
    purifier_cfg = model.spec.purifier
    opt = Adam(model.parameters(), cfg.lr, cfg.weight_decay)
    losses: list[float] = []

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        eta_scale = lr / cfg.lr  # purifier EMA rates follow the lr schedule
        opt.lr = lr

        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        batch_count = 0
        for lo in range(0, n, cfg.batch_size):
            batch = images[order[lo:lo + cfg.batch_size]]
            if cfg.mode == "adversarial":
                batch = adversarial_batch(model, batch, cfg.attack)

            if purifier_cfg is not None and model.components is None:
                _bootstrap_components(model, batch)

            tape = Tape()
            res = model.forward(tape, batch, mode="train", rng=noise_rng)
            # target is the presented batch: for the DAE that is the pre-noise
            # image, for adversarial training the adversarial image itself
            loss = ops.mse(tape, res.x_hat, batch)
            if res.kl is not None:
                loss = ops.combine_scalars(tape, loss, res.kl, 1.0, 1.0 / res.x_hat.data.size)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise NumericError(
                    f"training diverged: non-finite loss at epoch {epoch}, batch {batch_count}"
                )

            if purifier_cfg is not None:
                scaled = replace(purifier_cfg,
                                 eta_v=purifier_cfg.eta_v * eta_scale,
                                 eta_s=purifier_cfg.eta_s * eta_scale)
                model.components = ema_update(
                    model.components, res.z_purin, res.z_v, scaled, batch.shape[0])

            grads = backward(tape, np.ones_like(loss.data), output=loss)
            opt.step([grads.get(p) for p in opt.params])
            epoch_loss += loss_value
            batch_count += 1
        losses.append(epoch_loss / max(batch_count, 1))
    return TrainResult(model=model, epoch_losses=losses)


def _bootstrap_components(model: Detector, batch: np.ndarray) -> None:
    """Initialize purifier components from the first batch (EMA rate 1).

    Uses a train-mode encoder pass without advancing batchnorm buffers, so
    the batch is not double-counted when the real forward follows.
    """
    tape = Tape()
    from .autodiff import Tensor

    t = Tensor(np.asarray(batch, dtype=model.dtype))
    for layer in model.encoder:
        t = layer(tape, t, mode="train", update_stats=False)
    z = ops.nchw_to_rows(tape, t).data
    if model.spec.kind == "vae":
        # heads sit between encoder and purifier; bootstrap on their mean path
        z = 1.0 / (1.0 + np.exp(-(z @ model.mu_head.w.data + model.mu_head.b.data)))
    model.components = ema_update(None, z, None, model.spec.purifier, batch.shape[0])


def train_one_class(spec: DetectorSpec, images: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """Build a detector from spec and train it on known-class images."""
    model = build_detector(spec, cfg.seed)
    return train_model(model, images, cfg)
