"""Reconstruction-based one-class novelty detectors.

One unified backbone: the encoder is four 3x3 convolutions, the first three
each followed by 2x2 max-pooling, with channels doubling from
``base_channels``; the decoder mirrors it with bilinear x2 upsampling in
place of the pools. Every convolution is followed by batchnorm and ReLU; when
a purifier is attached the encoder's final activation is a sigmoid instead,
bounding the latent to (0, 1).

Variants: plain AE; DAE (Gaussian input noise at train time, clean target);
VAE (linear mean/log-variance heads per latent position, reparameterized
sample at train time, mean path at eval). The novelty score of an input is
the Euclidean norm of its reconstruction residual, always measured against
the input actually presented.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .autodiff import Parameter, Tape, Tensor
from .exceptions import ConfigError, ContractError, NumericError, ShapeError
from .layers import BatchNorm, BilinearUp2, Conv3x3, Layer, Linear, MaxPool2x2, ReLU, Sigmoid
from .purifier import LatentComponents, PurifierConfig, apply_purifier

_KINDS = ("ae", "dae", "vae")


@dataclass
class DetectorSpec:
    kind: str = "ae"
    in_channels: int = 1
    base_channels: int = 64
    purifier: PurifierConfig | None = None
    denoise_sigma: float = 0.1
    dtype: str = "float32"

    def validate(self) -> None:
        if self.kind not in _KINDS:
            raise ConfigError(f"unsupported detector kind {self.kind!r}; expected one of {_KINDS}")
        if self.in_channels not in (1, 3):
            raise ConfigError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be positive, got {self.base_channels}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.purifier is not None:
            self.purifier.validate()

    @property
    def latent_channels(self) -> int:
        return 8 * self.base_channels


@dataclass
class ForwardResult:
    """Tensors produced by one forward pass (all recorded on the same tape)."""

    x_in: Tensor            # the input as it entered the encoder (after DAE noise)
    z_pre: Tensor           # latent rows before purification, (n*s, v)
    z_post: Tensor          # latent rows fed to the decoder, (n*s, v)
    x_hat: Tensor           # reconstruction, (n, c, h, w)
    kl: Tensor | None = None           # VAE only
    z_v: np.ndarray | None = None      # channel-stage coefficients (purifier only)
    z_purin: np.ndarray | None = None  # the purifier's actual input rows


class Detector:
    """A built detector: layer stacks, optional heads, optional purifier."""

    def __init__(self, spec: DetectorSpec, seed: int):
        spec.validate()
        self.spec = spec
        self.seed = seed
        dtype = np.dtype(spec.dtype)
        ss = np.random.SeedSequence(seed)
        streams = [np.random.default_rng(s) for s in ss.spawn(16)]

        b = spec.base_channels
        c = spec.in_channels
        enc_channels = [(c, b), (b, 2 * b), (2 * b, 4 * b), (4 * b, 8 * b)]
        dec_channels = [(8 * b, 4 * b), (4 * b, 2 * b), (2 * b, b), (b, c)]

        self.encoder: list[Layer] = []
        for i, (ci, co) in enumerate(enc_channels):
            self.encoder.append(Conv3x3(ci, co, streams[i], dtype, name=f"enc{i}"))
            self.encoder.append(BatchNorm(co, dtype, name=f"enc{i}_bn"))
            last = i == len(enc_channels) - 1
            if last and spec.purifier is not None:
                self.encoder.append(Sigmoid())
            else:
                self.encoder.append(ReLU())
            if not last:
                self.encoder.append(MaxPool2x2())

        self.decoder: list[Layer] = []
        for i, (ci, co) in enumerate(dec_channels):
            self.decoder.append(Conv3x3(ci, co, streams[4 + i], dtype, name=f"dec{i}"))
            self.decoder.append(BatchNorm(co, dtype, name=f"dec{i}_bn"))
            self.decoder.append(ReLU())
            if i < len(dec_channels) - 1:
                self.decoder.append(BilinearUp2())

        v = spec.latent_channels
        if spec.kind == "vae":
            self.mu_head = Linear(v, v, streams[8], dtype, name="vae_mu")
            self.logvar_head = Linear(v, v, streams[9], dtype, name="vae_logvar")
        else:
            self.mu_head = None
            self.logvar_head = None

        self.components: LatentComponents | None = None

    # -- structure ---------------------------------------------------------

    def _all_layers(self) -> list[Layer]:
        layers = list(self.encoder) + list(self.decoder)
        if self.mu_head is not None:
            layers += [self.mu_head, self.logvar_head]
        return layers

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self._all_layers():
            out.extend(layer.params())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self._all_layers():
            out.update(layer.buffers())
        return out

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    @property
    def dtype(self):
        return np.dtype(self.spec.dtype)

    # -- forward pieces ------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> tuple[int, int, int]:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"expected input (n, {self.spec.in_channels}, h, w), got {x.shape}"
            )
        n, _, h, w = x.shape
        if h % 8 or w % 8 or h < 8 or w < 8:
            raise ContractError(f"spatial extents must be multiples of 8, got {h}x{w}")
        return n, h // 8, w // 8

    def encode_rows(self, tape: Tape, x: Tensor, mode: str) -> Tensor:
        """Encoder stack -> latent rows of shape (n * s, v)."""
        self._check_input(x.data)
        t = x
        for layer in self.encoder:
            t = layer(tape, t, mode=mode)
        return ops.nchw_to_rows(tape, t)

    def decode_rows(self, tape: Tape, z: Tensor, n: int, hs: int, ws: int, mode: str) -> Tensor:
        v = self.spec.latent_channels
        if z.data.ndim != 2 or z.data.shape != (n * hs * ws, v):
            raise ShapeError(f"latent rows {z.data.shape}, expected {(n * hs * ws, v)}")
        t = ops.rows_to_nchw(tape, z, n, v, hs, ws)
        for layer in self.decoder:
            t = layer(tape, t, mode=mode)
        return t

    def forward(self, tape: Tape, x: np.ndarray, mode: str = "eval",
                rng: np.random.Generator | None = None,
                update_stats: bool = True) -> ForwardResult:
        """Full pass: encode, optional heads/sampling, optional purify, decode."""
        x = np.asarray(x, dtype=self.dtype)
        self._check_input(x)
        if not np.isfinite(x).all():
            raise NumericError("non-finite values in detector input")
        x_in = Tensor(x)

        if self.spec.kind == "dae" and mode == "train":
            if rng is None:
                raise ContractError("DAE training forward requires an rng for input noise")
            noise = rng.normal(0.0, self.spec.denoise_sigma, size=x.shape)
            noisy = np.clip(x + noise.astype(self.dtype), 0.0, 1.0)
            x_in = Tensor(noisy.astype(self.dtype))
        return self.forward_from(tape, x_in, mode=mode, rng=rng, update_stats=update_stats)

    def forward_from(self, tape: Tape, x_in: Tensor, mode: str = "eval",
                     rng: np.random.Generator | None = None,
                     update_stats: bool = True) -> ForwardResult:
        """Forward pass from an already-taped input tensor (used by attacks)."""
        n, hs, ws = self._check_input(x_in.data)
        t = x_in
        for layer in self.encoder:
            t = layer(tape, t, mode=mode, update_stats=update_stats)
        z_pre = ops.nchw_to_rows(tape, t)

        kl = None
        z = z_pre
        if self.spec.kind == "vae":
            mu = self.mu_head(tape, z, mode=mode)
            logvar = self.logvar_head(tape, z, mode=mode)
            kl = ops.kl_standard_normal(tape, mu, logvar)
            if mode == "train":
                if rng is None:
                    raise ContractError("VAE training forward requires an rng for sampling")
                eps = rng.standard_normal(size=mu.data.shape).astype(self.dtype)
                z = ops.gauss_reparam(tape, mu, logvar, eps)
            else:
                z = mu
            if self.spec.purifier is not None:
                z = ops.sigmoid(tape, z)

        z_v = None
        z_purin = None
        z_post = z
        if self.spec.purifier is not None:
            if self.components is None:
                raise ContractError(
                    "purifier attached but components are untrained; run a training step first"
                )
            z_post = apply_purifier(tape, z, self.components, n)
            # channel-stage coefficients, needed by the EMA update
            z_v = (z.data - self.components.mu_v) @ self.components.u_v
            z_purin = z.data

        x_hat = self.decode_rows(tape, z_post, n, hs, ws, mode=mode)
        return ForwardResult(x_in=x_in, z_pre=z_pre, z_post=z_post, x_hat=x_hat,
                             kl=kl, z_v=z_v, z_purin=z_purin)


def build_detector(spec: DetectorSpec, seed: int) -> Detector:
    """Deterministically construct and initialize a detector."""
    return Detector(replace(spec), seed)


def encode(model: Detector, x: np.ndarray, mode: str = "eval") -> np.ndarray:
    """Latent rows (n*s, v) of a batch; purifier models bound them to (0, 1)."""
    tape = Tape()
    x = np.asarray(x, dtype=model.dtype)
    if not np.isfinite(x).all():
        raise NumericError("non-finite values in encoder input")
    return model.encode_rows(tape, Tensor(x), mode).data


def decode(model: Detector, z: np.ndarray, n: int, hs: int = 4, ws: int = 4) -> np.ndarray:
    """Reconstruction (n, c, 8*hs, 8*ws) from latent rows."""
    tape = Tape()
    z = np.asarray(z, dtype=model.dtype)
    return model.decode_rows(tape, Tensor(z), n, hs, ws, mode="eval").data


def latent_rows(model: Detector, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Latent representation used for stability analysis.

    Post-purifier latent when a purifier is attached, the raw encoder latent
    otherwise; shape (n, s*v) with one row per item.
    """
    x = np.asarray(x, dtype=model.dtype)
    n = x.shape[0]
    rows = []
    for lo in range(0, n, batch_size):
        chunk = x[lo:lo + batch_size]
        res = model.forward(Tape(), chunk, mode="eval")
        z = res.z_post.data
        rows.append(z.reshape(chunk.shape[0], -1).copy())
    return np.concatenate(rows, axis=0)


def novelty_score(model: Detector, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Per-item reconstruction-error norm against the presented input."""
    x = np.asarray(x, dtype=model.dtype)
    n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    for lo in range(0, n, batch_size):
        chunk = x[lo:lo + batch_size]
        res = model.forward(Tape(), chunk, mode="eval")
        diff = (res.x_hat.data - chunk).reshape(chunk.shape[0], -1)
        out[lo:lo + chunk.shape[0]] = np.sqrt((diff.astype(np.float64) ** 2).sum(axis=1))
    return out
