"""Adversarial attacks against reconstruction-based novelty detectors.

Attack losses are built from the novelty objective: with label y = +1 for the
known class and y = -1 for novel classes, the attacker ascends
y * ||reconstruction - input||_2, so known-class inputs are pushed toward
high novelty scores and novel-class inputs toward low ones. Loss variants:

    output  y * ||xhat_t - x_t||        (default; residual against the
                                         current, possibly perturbed input)
    latent  y * ||enc(x_t) - enc(x_0)|| (push the encoder latent away)
    clean   y * ||xhat_t - x_0||        (residual against the clean original)
    know_a  output - lam * ||purified - raw latent||   (try to void the purifier)
    know_b  output + lam * ||purified_t - purified_0|| (push the purified latent)

Crafters: single-step sign ascent (fgsm), iterative projected sign ascent
(pgd), momentum-accumulated gradients (mifgsm), border-masked perturbation
(af), and multiplicative perturbation with a ratio bound (multadv). All
additive crafters keep ||x_adv - x||_inf <= epsilon and x_adv in [0, 1];
model parameters, batchnorm buffers and purifier components are never
touched.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, backward
from .exceptions import ConfigError, ContractError
from .models import Detector
from . import ops

_KINDS = ("fgsm", "pgd", "mifgsm", "multadv", "af")
_LOSS_MODES = ("output", "latent", "clean", "know_a", "know_b")
_SUBSETS = ("all", "normal_only", "anomalous_only")

# Pixels darker than this are exempt from multiplicative updates (division guard).
MULTADV_DARK_GUARD = 1e-6


@dataclass
class AttackConfig:
    kind: str = "pgd"
    epsilon: float = 25.0 / 255.0  # L-inf budget, or ratio bound for multadv
    alpha: float | None = None     # step size; None = derived rule
    t_max: int = 5
    momentum: float = 1.0          # mifgsm decay
    frame_width: int = 1           # af border width
    loss_mode: str = "output"
    lam: float = 0.0               # knowledgeable trade-off weight
    target_subset: str = "all"

    def validate(self) -> None:
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}; expected one of {_KINDS}")
        if self.loss_mode not in _LOSS_MODES:
            raise ConfigError(f"unknown loss mode {self.loss_mode!r}")
        if self.target_subset not in _SUBSETS:
            raise ConfigError(f"unknown target subset {self.target_subset!r}")
        if self.t_max < 1:
            raise ContractError(f"t_max must be >= 1, got {self.t_max}")
        if self.kind == "multadv":
            if self.epsilon < 1.0:
                raise ContractError(f"multadv ratio bound must be >= 1, got {self.epsilon}")
        elif self.epsilon < 0.0:
            raise ContractError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.kind == "af" and self.frame_width < 1:
            raise ContractError(f"frame width must be >= 1, got {self.frame_width}")

    def step_size(self) -> float:
        if self.alpha is not None:
            return self.alpha
        if self.kind == "fgsm":
            return self.epsilon
        if self.kind == "multadv":
            return float(self.epsilon ** (1.0 / self.t_max))
        return min(2.5 * self.epsilon / self.t_max, self.epsilon)

    def digest(self) -> str:
        payload = {k: getattr(self, k) for k in (
            "kind", "epsilon", "alpha", "t_max", "momentum", "frame_width",
            "loss_mode", "lam", "target_subset")}
        text = json.dumps(payload, sort_keys=True)
        return f"{self.kind}-{hashlib.sha256(text.encode()).hexdigest()[:12]}"


def attack_loss(tape: Tape, model: Detector, x_t: Tensor, x0: np.ndarray,
                y: np.ndarray, mode: str, lam: float = 0.0) -> Tensor:
    """Scalar attacker objective for a batch, recorded on the tape.

    ``x0`` is the clean original (used by the clean/know_b modes); ``y`` holds
    +1 for known-class items and -1 for novel ones. The attacker maximizes
    the returned value by gradient ascent on the input.
    """
    if mode not in _LOSS_MODES:
        raise ConfigError(f"unknown loss mode {mode!r}")
    if mode in ("know_a", "know_b") and model.spec.purifier is None:
        raise ConfigError(f"loss mode {mode!r} requires a model with a purifier attached")
    y = np.asarray(y, dtype=model.dtype)
    n = x_t.data.shape[0]
    if y.shape != (n,):
        raise ContractError(f"labels shape {y.shape} does not match batch size {n}")

    if mode == "latent":
        res = model.forward_from(tape, x_t, mode="eval")
        z_t = res.z_pre
        z_ref = _encode_const(model, x0)
        diff = ops.sub(tape, z_t, Tensor(z_ref))
        per_item = ops.per_item_l2(tape, ops.reshape(tape, diff, (n, -1)))
        return ops.weighted_sum(tape, per_item, y)

    res = model.forward_from(tape, x_t, mode="eval")
    resid = ops.sub(tape, res.x_hat, x_t) if mode != "clean" else \
        ops.sub(tape, res.x_hat, Tensor(np.asarray(x0, dtype=model.dtype)))
    base = ops.weighted_sum(tape, ops.per_item_l2(tape, resid), y)
    if mode == "output" or mode == "clean":
        return base

    ones = np.ones(n, dtype=model.dtype)
    if mode == "know_a":
        gap = ops.sub(tape, res.z_post, res.z_pre)
        aux = ops.weighted_sum(tape, ops.per_item_l2(tape, ops.reshape(tape, gap, (n, -1))), ones)
        return ops.combine_scalars(tape, base, aux, 1.0, -lam)
    # know_b: distance between purified latents of x_t and of the clean x0
    ref = _purified_const(model, x0)
    gap = ops.sub(tape, res.z_post, Tensor(ref))
    aux = ops.weighted_sum(tape, ops.per_item_l2(tape, ops.reshape(tape, gap, (n, -1))), ones)
    return ops.combine_scalars(tape, base, aux, 1.0, lam)


def _encode_const(model: Detector, x0: np.ndarray) -> np.ndarray:
    res = model.forward(Tape(), np.asarray(x0, dtype=model.dtype), mode="eval")
    return res.z_pre.data.copy()


def _purified_const(model: Detector, x0: np.ndarray) -> np.ndarray:
    res = model.forward(Tape(), np.asarray(x0, dtype=model.dtype), mode="eval")
    return res.z_post.data.copy()


def _frame_mask(h: int, w: int, width: int, dtype) -> np.ndarray:
    mask = np.zeros((h, w), dtype=dtype)
    mask[:width, :] = 1
    mask[-width:, :] = 1
    mask[:, :width] = 1
    mask[:, -width:] = 1
    return mask


def _input_gradient(model: Detector, x_t: np.ndarray, x0: np.ndarray,
                    y: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    tape = Tape()
    x_tensor = Tensor(np.asarray(x_t, dtype=model.dtype))
    loss = attack_loss(tape, model, x_tensor, x0, y, cfg.loss_mode, cfg.lam)
    grads = backward(tape, np.ones_like(loss.data), output=loss)
    return grads.require(x_tensor)


def craft_adversarial(model: Detector, x: np.ndarray, y: np.ndarray,
                      cfg: AttackConfig) -> np.ndarray:
    """Craft adversarial examples for a labeled batch.

    Items outside the configured target subset are returned bit-identical to
    the input. The model is used in eval mode and never mutated.
    """
    cfg.validate()
    x = np.asarray(x, dtype=model.dtype)
    y = np.asarray(y)
    if y.shape != (x.shape[0],):
        raise ContractError(f"labels shape {y.shape} does not match batch {x.shape[0]}")

    if cfg.target_subset == "normal_only":
        sel = y > 0
    elif cfg.target_subset == "anomalous_only":
        sel = y < 0
    else:
        sel = np.ones(x.shape[0], dtype=bool)

    x_adv = x.copy()
    if sel.any():
        x_adv[sel] = _craft_core(model, x[sel], y[sel].astype(model.dtype), cfg)
    return x_adv


def _craft_core(model: Detector, x0: np.ndarray, y: np.ndarray,
                cfg: AttackConfig) -> np.ndarray:
    eps = model.dtype.type(cfg.epsilon)
    alpha = model.dtype.type(cfg.step_size())

    if cfg.kind == "multadv":
        if cfg.epsilon == 1.0:
            return x0.copy()
        return _craft_multadv(model, x0, y, cfg, eps, alpha)

    if cfg.epsilon == 0.0:
        return x0.copy()

    t_max = 1 if cfg.kind == "fgsm" else cfg.t_max
    mask = None
    if cfg.kind == "af":
        mask = _frame_mask(x0.shape[2], x0.shape[3], cfg.frame_width, model.dtype)

    x_t = x0.copy()
    g_acc = np.zeros_like(x0) if cfg.kind == "mifgsm" else None
    for _ in range(t_max):
        grad = _input_gradient(model, x_t, x0, y, cfg)
        if cfg.kind == "mifgsm":
            norms = np.abs(grad).reshape(grad.shape[0], -1).sum(axis=1)
            norms = np.where(norms > 0, norms, 1.0).astype(model.dtype)
            g_acc = model.dtype.type(cfg.momentum) * g_acc + grad / norms[:, None, None, None]
            step_dir = np.sign(g_acc)
        else:
            step_dir = np.sign(grad)
        if mask is not None:
            step_dir = step_dir * mask
        delta = np.clip(x_t + alpha * step_dir - x0, -eps, eps)
        x_t = np.clip(x0 + delta, 0.0, 1.0).astype(model.dtype)
        if mask is not None:
            # interior pixels stay bit-identical to the input
            x_t = np.where(mask > 0, x_t, x0)
    return x_t


def _craft_multadv(model: Detector, x0: np.ndarray, y: np.ndarray,
                   cfg: AttackConfig, eps_m, alpha_m) -> np.ndarray:
    bright = x0 > MULTADV_DARK_GUARD
    lo = np.where(bright, x0 / eps_m, x0)
    hi = np.where(bright, x0 * eps_m, x0)
    x_t = x0.copy()
    for _ in range(cfg.t_max):
        grad = _input_gradient(model, x_t, x0, y, cfg)
        factor = np.power(alpha_m, np.sign(grad)).astype(model.dtype)
        x_t = np.where(bright, x_t * factor, x0)
        x_t = np.clip(np.clip(x_t, lo, hi), 0.0, 1.0).astype(model.dtype)
    return x_t


def blackbox_transfer(substitute: Detector, target: Detector, x: np.ndarray,
                      y: np.ndarray, cfg: AttackConfig) -> tuple[np.ndarray, np.ndarray]:
    """Craft on the substitute, score on the target; target gradients unused.

    Returns (target novelty scores, adversarial batch). The crafter is forced
    to the momentum method, which transfers best.
    """
    from .models import novelty_score

    if cfg.kind != "mifgsm":
        raise ConfigError("black-box transfer crafts with the momentum method; set kind='mifgsm'")
    x_adv = craft_adversarial(substitute, x, y, cfg)
    return novelty_score(target, x_adv), x_adv
