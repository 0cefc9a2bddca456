"""Desk-scale acceptance suite: independent oracles and criterion runners.

The `reproduce` CLI command and the test suite both execute these runners.
Each criterion returns a CriterionResult with measured values and thresholds;
dataset-bound criteria run against a DeskProtocol (the synthetic shape suite
by default, real MNIST IDX files when available) and cache trained models in
a workspace directory so repeated invocations and dependent criteria reuse
them.

The oracles here are deliberately independent of the production code paths:
a cyclic Jacobi eigensolver (checks the LAPACK-backed fitting), brute-force
pairwise AUROC counting, and an exhaustive threshold sweep for FPR@TPR.
"""

from __future__ import annotations

import gzip
import os
import shutil
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, blackbox_transfer, craft_adversarial
from .autodiff import Tape, Tensor, finite_diff_check
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, make_synthetic_suite, load_idx, resize_bilinear_32
from .evaluation import (OneClassSplit, auroc, build_split, evaluate,
                         fpr_at_tpr, latent_stability, scored_split, subsample_split)
from .exceptions import ContractError
from .models import (Detector, DetectorSpec, build_detector, encode,
                     novelty_score)
from .pca import fit_pca, forward_pca, inverse_pca
from .purifier import (LatentComponents, PurifierConfig, apply_purifier_array,
                       ema_update, fold_batch, unfold_batch)
from .training import TrainConfig, train_model, train_one_class
from . import ops

MNIST_ENV_VAR = "LATENTGUARD_MNIST_DIR"


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def jacobi_eigh(c: np.ndarray, max_sweeps: int = 100, tol: float = 1e-12):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Independent of the LAPACK-backed production path; returns eigenvalues in
    descending order and sign-normalized eigenvector columns.
    """
    a = np.array(c, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(1.0, np.abs(a).max())
    for _ in range(max_sweeps):
        off = np.sqrt((a ** 2).sum() - (np.diag(a) ** 2).sum())
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                cth = 1.0 / np.sqrt(t * t + 1.0)
                sth = t * cth
                rot_p = cth * a[:, p] - sth * a[:, q]
                rot_q = sth * a[:, p] + cth * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = cth * a[p, :] - sth * a[q, :]
                rot_q = sth * a[p, :] + cth * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = cth * v[:, p] - sth * v[:, q]
                rot_q = sth * v[:, p] + cth * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    evals = np.diag(a).copy()
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    v = v[:, order]
    for j in range(n):
        lead = np.abs(v[:, j]).argmax()
        if v[lead, j] < 0:
            v[:, j] *= -1.0
    return evals, v


def pairwise_auroc(normal, anomalous) -> float:
    """Brute-force AUROC: count anomalous>normal pairs, half credit for ties."""
    wins = 0.0
    for a in anomalous:
        for n in normal:
            if a > n:
                wins += 1.0
            elif a == n:
                wins += 0.5
    return wins / (len(anomalous) * len(normal))


def sweep_fpr_at_tpr(normal, anomalous, tpr: float = 0.95) -> float:
    """Exhaustive threshold sweep over all candidate thresholds."""
    normal = np.asarray(normal, dtype=np.float64)
    anomalous = np.asarray(anomalous, dtype=np.float64)
    best = 1.0
    found = False
    for threshold in np.unique(np.concatenate([normal, anomalous])):
        tpr_here = (anomalous >= threshold).mean()
        if tpr_here >= tpr:
            best = min(best, (normal >= threshold).mean()) if found else (normal >= threshold).mean()
            found = True
    return float(best if found else 1.0)


# ---------------------------------------------------------------------------
# results and protocols
# ---------------------------------------------------------------------------

@dataclass
class CriterionResult:
    cid: str
    name: str
    passed: bool | None          # None means skipped
    details: list[str] = field(default_factory=list)
    skip_reason: str | None = None
    seconds: float = 0.0

    def line(self) -> str:
        if self.passed is None:
            status = "SKIP"
        else:
            status = "PASS" if self.passed else "FAIL"
        detail = "; ".join(self.details) if self.details else (self.skip_reason or "")
        return f"{self.cid:<4} {self.name:<28} {status}  {detail}  [{self.seconds:.1f}s]"


def _timed(fn):
    def wrapper(*args, **kwargs) -> CriterionResult:
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        result.seconds = time.perf_counter() - start
        return result
    return wrapper


@dataclass
class DeskProtocol:
    """Dataset, scale and budget choices for the desk-scale criteria."""

    name: str
    train_by_class: dict[int, np.ndarray]
    test_dataset: Dataset
    trend_classes: tuple[int, ...]
    sanity_class: int
    epsilon: float
    t_max: int = 5
    nat_epochs: int = 5
    at_epochs: int = 5
    batch_size: int = 64
    lr: float = 1e-3
    base_channels: int = 16
    eval_cap: int = 160          # per-side cap for attack evaluations
    train_cap: int = 2000

    def pgd(self, **over) -> AttackConfig:
        cfg = AttackConfig(kind="pgd", epsilon=self.epsilon, t_max=self.t_max)
        return replace(cfg, **over)


def synthetic_protocol(seed: int = 1234) -> DeskProtocol:
    train = make_synthetic_suite(700, seed, "train")
    test = make_synthetic_suite(170, seed + 1, "test")
    by_class = {c: train.images[train.labels == c] for c in (0, 1, 2)}
    return DeskProtocol(
        name="synthetic",
        train_by_class=by_class,
        test_dataset=test,
        trend_classes=(0, 1, 2),
        sanity_class=0,
        epsilon=25.0 / 255.0,
        nat_epochs=8,
        at_epochs=6,
        batch_size=64,
        lr=1e-3,
        eval_cap=160,
    )


_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def locate_mnist(data_dir: str | None = None) -> dict[str, Path] | None:
    """Find the four MNIST IDX files (optionally gzipped) or return None."""
    root = data_dir or os.environ.get(MNIST_ENV_VAR)
    if not root:
        return None
    root = Path(root)
    found: dict[str, Path] = {}
    for key, stem in _MNIST_FILES.items():
        plain, gz = root / stem, root / (stem + ".gz")
        if plain.exists():
            found[key] = plain
        elif gz.exists():
            found[key] = gz
        else:
            return None
    return found


def _ungzip_if_needed(path: Path, cache_dir: Path) -> Path:
    if path.suffix != ".gz":
        return path
    cache_dir.mkdir(parents=True, exist_ok=True)
    target = cache_dir / path.stem
    if not target.exists():
        with gzip.open(path, "rb") as src, open(target, "wb") as dst:
            shutil.copyfileobj(src, dst)
    return target


def mnist_protocol(workspace: Path, data_dir: str | None = None,
                   seed: int = 0) -> DeskProtocol | None:
    files = locate_mnist(data_dir)
    if files is None:
        return None
    cache = Path(workspace) / "mnist_cache"
    paths = {k: _ungzip_if_needed(p, cache) for k, p in files.items()}
    train = load_idx(paths["train_images"], paths["train_labels"], "train")
    test = load_idx(paths["test_images"], paths["test_labels"], "test")
    train = Dataset(resize_bilinear_32(train.images), train.labels, "train")
    test = Dataset(resize_bilinear_32(test.images), test.labels, "test")
    rng = np.random.default_rng(seed)
    by_class = {}
    for c in (0, 1, 8):
        pool = train.images[train.labels == c]
        take = min(2000, len(pool))
        by_class[c] = pool[rng.choice(len(pool), size=take, replace=False)]
    return DeskProtocol(
        name="mnist",
        train_by_class=by_class,
        test_dataset=test,
        trend_classes=(0, 1, 8),
        sanity_class=8,
        epsilon=25.0 / 255.0,
        nat_epochs=5,
        at_epochs=5,
        batch_size=128,
        lr=1e-3,
        eval_cap=192,
        train_cap=2000,
    )


# ---------------------------------------------------------------------------
# trained-model workspace with on-disk caching
# ---------------------------------------------------------------------------

class DeskWorkspace:
    """Trains (or loads cached) desk-scale models for the heavy criteria."""

    def __init__(self, protocol: DeskProtocol, out_dir):
        self.protocol = protocol
        self.dir = Path(out_dir)
        (self.dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        self._splits: dict[int, OneClassSplit] = {}

    # stages: nat | at | pur_nat | pur_at | sub
    def _ckpt(self, stage: str, cls: int) -> Path:
        p = self.protocol
        tag = f"{p.name}-c{cls}-{stage}-b{p.base_channels}-e{p.nat_epochs}.{p.at_epochs}"
        return self.dir / "checkpoints" / f"{tag}.ckpt"

    def _spec(self, purifier: bool) -> DetectorSpec:
        p = self.protocol
        cfg = PurifierConfig() if purifier else None
        c = self.protocol.test_dataset.images.shape[1]
        return DetectorSpec(kind="ae", in_channels=c,
                            base_channels=p.base_channels, purifier=cfg)

    def _train_cfg(self, epochs: int, mode: str, seed: int) -> TrainConfig:
        p = self.protocol
        attack = p.pgd() if mode == "adversarial" else None
        return TrainConfig(epochs=epochs, batch_size=p.batch_size, lr=p.lr,
                           weight_decay=1e-4, lr_drop_epochs=(), mode=mode,
                           attack=attack, seed=seed)

    def _train_images(self, cls: int) -> np.ndarray:
        imgs = self.protocol.train_by_class[cls]
        return imgs[: self.protocol.train_cap]

    def model(self, stage: str, cls: int) -> Detector:
        path = self._ckpt(stage, cls)
        if path.exists():
            return load_checkpoint(path)
        p = self.protocol
        imgs = self._train_images(cls)
        if stage == "nat":
            result = train_one_class(self._spec(False), imgs,
                                     self._train_cfg(p.nat_epochs, "natural", seed=100 + cls))
        elif stage == "sub":
            result = train_one_class(self._spec(False), imgs,
                                     self._train_cfg(p.nat_epochs, "natural", seed=900 + cls))
        elif stage == "at":
            model = self.model("nat", cls)
            result = train_model(model, imgs,
                                 self._train_cfg(p.at_epochs, "adversarial", seed=200 + cls))
        elif stage == "pur_nat":
            result = train_one_class(self._spec(True), imgs,
                                     self._train_cfg(p.nat_epochs, "natural", seed=300 + cls))
        elif stage == "pur_at":
            model = self.model("pur_nat", cls)
            result = train_model(model, imgs,
                                 self._train_cfg(p.at_epochs, "adversarial", seed=400 + cls))
        else:
            raise ContractError(f"unknown stage {stage!r}")
        save_checkpoint(path, result.model)
        return result.model

    def split(self, cls: int) -> OneClassSplit:
        if cls not in self._splits:
            self._splits[cls] = build_split(self.protocol.test_dataset, [cls], seed=42)
        return self._splits[cls]

    def eval_split(self, cls: int) -> OneClassSplit:
        return subsample_split(self.split(cls), self.protocol.eval_cap, seed=7)


def _attack_auroc(model: Detector, split: OneClassSplit,
                  attack: AttackConfig | None) -> float:
    s_n, s_a = scored_split(model, split, attack)
    return auroc(s_n, s_a)


# ---------------------------------------------------------------------------
# criteria 1-5: dataset-free numerics
# ---------------------------------------------------------------------------

@_timed
def criterion_pca_oracle(trials: int = 100, seed: int = 11) -> CriterionResult:
    """C1: PCA fitting agrees with the Jacobi oracle; k=d reconstructs exactly."""
    rng = np.random.default_rng(seed)
    worst_basis = 0.0
    worst_fwd = 0.0
    worst_recon = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 33))
        n = int(rng.integers(d + 1, 65))
        k = int(rng.integers(1, d + 1))
        x = rng.standard_normal((n, d))
        comp = fit_pca(x, k)
        mean = x.mean(axis=0)
        _, vecs = jacobi_eigh((x - mean).T @ (x - mean))
        worst_basis = max(worst_basis, float(np.abs(comp.basis - vecs[:, :k]).max()))
        y = forward_pca(x, comp)
        worst_fwd = max(worst_fwd, float(np.abs(y - (x - mean) @ vecs[:, :k]).max()))
        full = fit_pca(x, d)
        recon = inverse_pca(forward_pca(x, full), full)
        worst_recon = max(worst_recon, float(np.abs(recon - x).max()))
    ok = worst_basis < 1e-6 and worst_fwd < 1e-6 and worst_recon < 1e-8
    return CriterionResult(
        "C1", "pca-oracle-equivalence", ok,
        [f"basis_dev={worst_basis:.2e} (<1e-6)", f"fwd_dev={worst_fwd:.2e} (<1e-6)",
         f"recon_dev={worst_recon:.2e} (<1e-8)"])


def _single_layer_checks(rng) -> float:
    """Finite-difference check for every layer kind; returns worst rel error."""
    from .layers import (BatchNorm, BilinearUp2, Conv3x3, Linear, MaxPool2x2,
                         ReLU, Sigmoid)

    worst = 0.0
    shape = (2, 3, 8, 8)
    x0 = rng.random(shape)
    cases = [
        ("conv3x3", Conv3x3(3, 4, rng, np.float64, name="t"), "eval"),
        ("maxpool2x2", MaxPool2x2(), "eval"),
        ("bilinear_up2", BilinearUp2(), "eval"),
        ("batchnorm_eval", BatchNorm(3, np.float64, name="t"), "eval"),
        ("batchnorm_train", BatchNorm(3, np.float64, name="t2"), "train"),
        ("relu", ReLU(), "eval"),
        ("sigmoid", Sigmoid(), "eval"),
    ]
    for name, layer, mode in cases:
        x_t = Tensor(x0.copy())
        if name.startswith("batchnorm"):
            # move gamma/beta off their init so their gradients are generic
            layer.gamma.data = rng.uniform(0.5, 1.5, size=layer.gamma.data.shape)
            layer.beta.data = rng.uniform(-0.5, 0.5, size=layer.beta.data.shape)
        target = rng.random(layer.out_shape(shape))

        def loss_fn(layer=layer, mode=mode, x_t=x_t, target=target):
            tape = Tape()
            out = layer(tape, x_t, mode=mode, update_stats=False)
            return tape, ops.mse(tape, out, target)

        tensors = [("input", x_t)] + [(p.name, p) for p in layer.params()]
        report = finite_diff_check(loss_fn, tensors, step=1e-5,
                                   max_coords_per_tensor=24, seed=5)
        worst = max(worst, report.max_rel_error)

    lin = Linear(6, 5, rng, np.float64, name="t")
    x_t = Tensor(rng.random((4, 6)))
    target = rng.random((4, 5))

    def lin_loss():
        tape = Tape()
        out = lin(tape, x_t)
        return tape, ops.mse(tape, out, target)

    report = finite_diff_check(lin_loss, [("input", x_t)] + [(p.name, p) for p in lin.params()],
                               step=1e-5, max_coords_per_tensor=24, seed=5)
    return max(worst, report.max_rel_error)


@_timed
def criterion_gradient_integrity(seed: int = 21) -> CriterionResult:
    """C2: finite differences validate every layer, the backbone, the purifier path."""
    rng = np.random.default_rng(seed)
    worst_layer = _single_layer_checks(rng)

    x = rng.random((2, 1, 8, 8))
    spec = DetectorSpec(kind="ae", in_channels=1, base_channels=4, dtype="float64")
    model = build_detector(spec, seed=3)
    x_t = Tensor(x.copy())
    target = rng.random(x.shape)

    def backbone_loss():
        tape = Tape()
        res = model.forward_from(tape, x_t, mode="eval")
        return tape, ops.mse(tape, res.x_hat, target)

    tensors = [("input", x_t)] + [(p.name, p) for p in model.parameters()]
    rep = finite_diff_check(backbone_loss, tensors, step=1e-5,
                            max_coords_per_tensor=6, seed=6)
    worst_backbone = rep.max_rel_error

    pspec = DetectorSpec(kind="ae", in_channels=1, base_channels=4, dtype="float64",
                         purifier=PurifierConfig(k_s=1))
    pmodel = build_detector(pspec, seed=4)
    z = encode(pmodel, rng.random((4, 1, 8, 8)))
    pmodel.components = ema_update(None, z, None, pspec.purifier, 4)
    px_t = Tensor(x.copy())

    def purified_loss():
        tape = Tape()
        res = pmodel.forward_from(tape, px_t, mode="eval")
        return tape, ops.mse(tape, res.x_hat, target)

    tensors = [("input", px_t)] + [(p.name, p) for p in pmodel.parameters()]
    rep = finite_diff_check(purified_loss, tensors, step=1e-5,
                            max_coords_per_tensor=6, seed=7)
    worst_purified = rep.max_rel_error

    ok = max(worst_layer, worst_backbone, worst_purified) < 1e-4
    return CriterionResult(
        "C2", "gradient-integrity", ok,
        [f"layers={worst_layer:.2e}", f"backbone={worst_backbone:.2e}",
         f"purified={worst_purified:.2e} (<1e-4)"])


@_timed
def criterion_purifier_algebra(seed: int = 31) -> CriterionResult:
    """C3: idempotence, the hand-worked cascade example, subspace residual, EMA."""
    rng = np.random.default_rng(seed)
    details = []
    ok = True

    # idempotence on components fitted from random latents
    v, s, b, k_s = 24, 16, 6, 4
    z_fit = rng.random((b * s, v))
    comp = ema_update(None, z_fit, None, PurifierConfig(k_s=k_s), b)
    z = rng.random((b * s, v))
    once = apply_purifier_array(z, comp, b)
    twice = apply_purifier_array(once, comp, b)
    idem = float(np.abs(twice - once).max())
    ok &= idem <= 1e-6
    details.append(f"idempotence={idem:.2e} (<=1e-6)")

    # hand-composed cascade: identity-like components, k_s = 1
    hand = LatentComponents(
        mu_v=np.zeros(2), u_v=np.array([[1.0], [0.0]]),
        mu_s=np.zeros(2), u_s=np.array([[1.0], [0.0]]),
    )
    z_hand = np.array([[3.0, 5.0], [4.0, 7.0]])
    out_hand = apply_purifier_array(z_hand, hand, 1)
    hand_ok = np.allclose(out_hand, [[3.0, 0.0], [0.0, 0.0]], atol=1e-12)
    ok &= hand_ok
    details.append(f"hand_case={'ok' if hand_ok else out_hand.tolist()}")

    # folded output lives in the learned spatial subspace
    folded = fold_batch((once - comp.mu_v) @ comp.u_v, b)
    centered = folded.T - comp.mu_s
    residual = centered - (centered @ comp.u_s) @ comp.u_s.T
    res_max = float(np.abs(residual).max())
    ok &= res_max < 1e-6
    details.append(f"subspace_residual={res_max:.2e} (<1e-6)")

    # EMA convergence: same batch repeatedly reaches the batch statistics
    cfg = PurifierConfig(k_s=k_s, eta_v=0.1, eta_s=0.1)
    target = ema_update(None, z_fit, None, cfg, b)
    comp2 = ema_update(None, rng.random((b * s, v)), None, cfg, b)
    z_v_fit = (z_fit - comp2.mu_v) @ comp2.u_v
    dist_prev = np.inf
    monotone = True
    for _ in range(1000):
        comp2 = ema_update(comp2, z_fit, z_v_fit, cfg, b)
        z_v_fit = (z_fit - comp2.mu_v) @ comp2.u_v
        dist = max(float(np.abs(comp2.mu_v - target.mu_v).max()),
                   float(np.abs(comp2.mu_s - target.mu_s).max()))
        if dist > dist_prev + 1e-9:
            monotone = False
        dist_prev = dist
        comp2.validate()
    ok &= monotone and dist_prev < 1e-6
    details.append(f"ema_dist_after_1000={dist_prev:.2e} (<1e-6, monotone={monotone})")
    return CriterionResult("C3", "purifier-algebra", bool(ok), details)


def _toy_models(seed: int = 5):
    spec = DetectorSpec(kind="ae", in_channels=1, base_channels=4)
    plain = build_detector(spec, seed)
    pspec = DetectorSpec(kind="ae", in_channels=1, base_channels=4,
                         purifier=PurifierConfig(k_s=2))
    purified = build_detector(pspec, seed + 1)
    rng = np.random.default_rng(seed)
    warm = rng.random((4, 1, 16, 16)).astype(np.float32)
    z = encode(purified, warm)
    purified.components = ema_update(None, z, None, pspec.purifier, 4)
    return plain, purified


def _model_state_blob(model: Detector) -> bytes:
    parts = [p.data.tobytes() for p in model.parameters()]
    parts += [b.tobytes() for b in model.buffers().values()]
    if model.components is not None:
        parts += [a.tobytes() for a in model.components.astuple()]
    return b"".join(parts)


@_timed
def criterion_attack_contracts(n_configs: int = 200, seed: int = 41) -> CriterionResult:
    """C4: budget bounds, degenerate budgets, AF mask, equivalences, immutability."""
    rng = np.random.default_rng(seed)
    plain, purified = _toy_models()
    state_before = _model_state_blob(plain) + _model_state_blob(purified)
    x = rng.random((6, 1, 16, 16)).astype(np.float32)
    y = np.array([1, 1, 1, -1, -1, -1], dtype=np.float32)
    failures: list[str] = []

    kinds = ("fgsm", "pgd", "mifgsm", "multadv", "af")
    subsets = ("all", "normal_only", "anomalous_only")
    for i in range(n_configs):
        kind = kinds[i % len(kinds)]
        model = purified if i % 3 == 0 else plain
        loss_mode = "output"
        lam = 0.0
        if model is purified and i % 7 == 0:
            loss_mode = ("know_a", "know_b")[i % 2]
            lam = float(rng.uniform(0.0, 2.0))
        elif i % 11 == 0:
            loss_mode = ("latent", "clean")[i % 2]
        cfg = AttackConfig(
            kind=kind,
            epsilon=float(rng.uniform(1.0, 1.5)) if kind == "multadv"
            else float(rng.choice([0.0, rng.uniform(0.0, 0.3)])),
            alpha=None,
            t_max=int(rng.integers(1, 4)),
            momentum=float(rng.uniform(0.5, 1.5)),
            frame_width=int(rng.integers(1, 4)),
            loss_mode=loss_mode,
            lam=lam,
            target_subset=str(rng.choice(subsets)),
        )
        adv = craft_adversarial(model, x, y, cfg)
        if not np.isfinite(adv).all():
            failures.append(f"cfg{i}: non-finite output")
            continue
        if adv.min() < 0.0 or adv.max() > 1.0:
            failures.append(f"cfg{i}: outside [0,1]")
        if kind == "multadv":
            bright = x > 1e-6
            ratio = np.maximum(adv[bright] / x[bright], x[bright] / adv[bright])
            if ratio.size and ratio.max() > cfg.epsilon + 1e-6:
                failures.append(f"cfg{i}: ratio bound violated ({ratio.max():.4f})")
            if not np.array_equal(adv[~bright], x[~bright]):
                failures.append(f"cfg{i}: dark-pixel guard violated")
            if cfg.epsilon == 1.0 and not np.array_equal(adv, x):
                failures.append(f"cfg{i}: ratio=1 not identity")
        else:
            if np.abs(adv - x).max() > cfg.epsilon + 1e-6:
                failures.append(f"cfg{i}: L-inf budget violated")
            if cfg.epsilon == 0.0 and not np.array_equal(adv, x):
                failures.append(f"cfg{i}: eps=0 not identity")
        if kind == "af":
            w = cfg.frame_width
            interior = adv[:, :, w:-w, w:-w]
            if not np.array_equal(interior, x[:, :, w:-w, w:-w]):
                failures.append(f"cfg{i}: AF interior changed")
        if cfg.target_subset == "normal_only" and not np.array_equal(adv[y < 0], x[y < 0]):
            failures.append(f"cfg{i}: anomalous items changed under normal_only")
        if cfg.target_subset == "anomalous_only" and not np.array_equal(adv[y > 0], x[y > 0]):
            failures.append(f"cfg{i}: normal items changed under anomalous_only")

    # AF border pixel count at 32x32, width 1
    af_mask_count = 32 * 32 - 30 * 30
    if af_mask_count != 124:
        failures.append("AF border arithmetic broken")

    # PGD with one step at alpha = eps is FGSM
    eps = 0.1
    a1 = craft_adversarial(plain, x, y, AttackConfig(kind="pgd", epsilon=eps, alpha=eps, t_max=1))
    a2 = craft_adversarial(plain, x, y, AttackConfig(kind="fgsm", epsilon=eps, t_max=1))
    if not np.array_equal(a1, a2):
        failures.append("pgd(t=1, alpha=eps) != fgsm")

    # knowledgeable attacks collapse to the plain white-box loss at lambda 0
    base = craft_adversarial(purified, x, y, AttackConfig(kind="pgd", epsilon=eps, t_max=3))
    for mode in ("know_a", "know_b"):
        k0 = craft_adversarial(purified, x, y,
                               AttackConfig(kind="pgd", epsilon=eps, t_max=3,
                                            loss_mode=mode, lam=0.0))
        if not np.array_equal(base, k0):
            failures.append(f"{mode}(lam=0) != plain pgd")

    if _model_state_blob(plain) + _model_state_blob(purified) != state_before:
        failures.append("model state mutated by attacks")

    ok = not failures
    details = [f"{n_configs} random configs clean"] if ok else failures[:4]
    return CriterionResult("C4", "attack-contracts", ok, details)


@_timed
def criterion_metric_oracles(sets: int = 1000, seed: int = 51) -> CriterionResult:
    """C5: rank AUROC equals pair counting; FPR@TPR equals the sweep."""
    rng = np.random.default_rng(seed)
    worst_auroc = 0.0
    worst_fpr = 0.0
    for _ in range(sets):
        n_n = int(rng.integers(1, 40))
        n_a = int(rng.integers(1, 40))
        decimals = int(rng.integers(0, 3))  # coarse rounding injects ties
        normal = np.round(rng.random(n_n) * 4, decimals)
        anomalous = np.round(rng.random(n_a) * 4, decimals)
        worst_auroc = max(worst_auroc,
                          abs(auroc(normal, anomalous) - pairwise_auroc(normal, anomalous)))
        worst_fpr = max(worst_fpr,
                        abs(fpr_at_tpr(normal, anomalous) - sweep_fpr_at_tpr(normal, anomalous)))
    ok = worst_auroc < 1e-12 and worst_fpr < 1e-12
    return CriterionResult(
        "C5", "metric-oracles", ok,
        [f"auroc_dev={worst_auroc:.1e}", f"fpr_dev={worst_fpr:.1e} (exact)"])


# ---------------------------------------------------------------------------
# criteria 6-10: desk-scale trained models
# ---------------------------------------------------------------------------

@_timed
def criterion_sanity_checklist(ws: DeskWorkspace) -> CriterionResult:
    """C6: iterative>=one-step, white>=black box, unbounded kills, eps-monotone."""
    p = ws.protocol
    cls = p.sanity_class
    target = ws.model("at", cls)
    substitute = ws.model("sub", cls)
    split = ws.eval_split(cls)
    details = []

    a_pgd = _attack_auroc(target, split, p.pgd())
    a_fgsm = _attack_auroc(target, split, AttackConfig(kind="fgsm", epsilon=p.epsilon, t_max=1))
    c1 = a_pgd <= a_fgsm
    details.append(f"pgd={a_pgd:.3f}<=fgsm={a_fgsm:.3f}:{'ok' if c1 else 'FAIL'}")

    x = np.concatenate([split.normal_images, split.anomalous_images])
    y = np.concatenate(split.labels)
    bb_cfg = AttackConfig(kind="mifgsm", epsilon=p.epsilon, t_max=p.t_max)
    scores, _ = blackbox_transfer(substitute, target, x, y, bb_cfg)
    n_norm = len(split.normal_images)
    a_bb = auroc(scores[:n_norm], scores[n_norm:])
    c2 = a_pgd <= a_bb
    details.append(f"pgd={a_pgd:.3f}<=blackbox={a_bb:.3f}:{'ok' if c2 else 'FAIL'}")

    unbounded = AttackConfig(kind="pgd", epsilon=1.0, t_max=40)
    a_unb = _attack_auroc(target, split, unbounded)
    c3 = a_unb < 0.05
    details.append(f"unbounded={a_unb:.3f}(<0.05):{'ok' if c3 else 'FAIL'}")

    grid = [p.epsilon / 2, p.epsilon, 2 * p.epsilon]
    vals = [_attack_auroc(target, split, p.pgd(epsilon=e)) for e in grid]
    c4 = all(vals[i + 1] <= vals[i] + 1e-12 for i in range(len(vals) - 1))
    details.append("eps_grid=" + ">=".join(f"{v:.3f}" for v in vals) + (":ok" if c4 else ":FAIL"))

    ok = bool(c1 and c2 and c3 and c4)
    return CriterionResult("C6", f"sanity-checklist[{p.name}]", ok, details)


@_timed
def criterion_defense_trend(ws: DeskWorkspace) -> CriterionResult:
    """C7: clean quality, undefended collapse, purifier margin, clean preservation."""
    p = ws.protocol
    clean_nat, pgd_nat, pgd_at, pgd_pur, clean_pur = [], [], [], [], []
    for cls in p.trend_classes:
        split_full = ws.split(cls)
        split_eval = ws.eval_split(cls)
        nat = ws.model("nat", cls)
        clean_nat.append(_attack_auroc(nat, split_full, None))
        pgd_nat.append(_attack_auroc(nat, split_eval, p.pgd()))
        at = ws.model("at", cls)
        pgd_at.append(_attack_auroc(at, split_eval, p.pgd()))
        pur_nat = ws.model("pur_nat", cls)
        clean_pur.append(_attack_auroc(pur_nat, split_full, None))
        pur_at = ws.model("pur_at", cls)
        pgd_pur.append(_attack_auroc(pur_at, split_eval, p.pgd()))

    m_clean = float(np.mean(clean_nat))
    m_pgd_nat = float(np.mean(pgd_nat))
    m_pgd_at = float(np.mean(pgd_at))
    m_pgd_pur = float(np.mean(pgd_pur))
    m_clean_pur = float(np.mean(clean_pur))
    a = m_clean >= 0.90
    b = m_pgd_nat < 0.30
    c = m_pgd_pur >= m_pgd_at + 0.05
    d = m_clean_pur >= m_clean - 0.02
    details = [
        f"(a) clean_nat={m_clean:.3f}(>=0.90):{'ok' if a else 'FAIL'}",
        f"(b) pgd_nodefense={m_pgd_nat:.3f}(<0.30):{'ok' if b else 'FAIL'}",
        f"(c) pgd_purifier={m_pgd_pur:.3f}>=pgd_at={m_pgd_at:.3f}+0.05:{'ok' if c else 'FAIL'}",
        f"(d) clean_purifier={m_clean_pur:.3f}(>= clean-0.02):{'ok' if d else 'FAIL'}",
    ]
    return CriterionResult("C7", f"defense-trend[{p.name}]", bool(a and b and c and d), details)


@_timed
def criterion_attack_ordering(ws: DeskWorkspace) -> CriterionResult:
    """C8: the full attack is at least as strong as every restricted variant."""
    p = ws.protocol
    cls = p.trend_classes[0]
    model = ws.model("pur_at", cls)
    split = ws.eval_split(cls)
    full = _attack_auroc(model, split, p.pgd())
    variants = {
        "normal_only": p.pgd(target_subset="normal_only"),
        "anomalous_only": p.pgd(target_subset="anomalous_only"),
        "clean_loss": p.pgd(loss_mode="clean"),
        "latent_loss": p.pgd(loss_mode="latent"),
    }
    details = [f"full={full:.3f}"]
    ok = True
    for name, cfg in variants.items():
        val = _attack_auroc(model, split, cfg)
        good = full <= val + 1e-12
        ok &= good
        details.append(f"{name}={val:.3f}{'' if good else ':FAIL'}")
    return CriterionResult("C8", f"attack-ordering[{p.name}]", bool(ok), details)


@_timed
def criterion_latent_stability_ratio(ws: DeskWorkspace) -> CriterionResult:
    """C9: defended latents move <10% as much as undefended under attack."""
    p = ws.protocol
    cls = p.trend_classes[0]
    split = ws.eval_split(cls)
    defended = latent_stability(ws.model("pur_at", cls), split, p.pgd())
    undefended = latent_stability(ws.model("nat", cls), split, p.pgd())
    ratio = defended / undefended if undefended > 0 else np.inf
    ok = ratio < 0.1
    return CriterionResult(
        "C9", f"latent-stability[{p.name}]", bool(ok),
        [f"defended={defended:.4f}", f"undefended={undefended:.4f}",
         f"ratio={ratio:.4f} (<0.1)"])


@_timed
def criterion_knowledgeable_monotone(ws: DeskWorkspace) -> CriterionResult:
    """C10: knowledgeable attacks do not get stronger as |lambda| grows."""
    p = ws.protocol
    cls = p.trend_classes[0]
    model = ws.model("pur_at", cls)
    split = ws.eval_split(cls)
    base = _attack_auroc(model, split, p.pgd())
    details = [f"lam0={base:.3f}"]
    ok = True
    for mode in ("know_a", "know_b"):
        for lam in (0.5, 1.0):
            val = _attack_auroc(model, split, p.pgd(loss_mode=mode, lam=lam))
            good = val >= base - 0.02
            ok &= good
            details.append(f"{mode}@{lam}={val:.3f}{'' if good else ':FAIL'}")
    return CriterionResult("C10", f"knowledgeable-monotone[{p.name}]", bool(ok), details)


# ---------------------------------------------------------------------------
# criterion 11: determinism
# ---------------------------------------------------------------------------

def _micro_pipeline(out_dir: Path, seed: int = 77) -> tuple[bytes, bytes]:
    """Train+evaluate a micro model; return (checkpoint bytes, report bytes)."""
    train = make_synthetic_suite(48, seed, "train")
    test = make_synthetic_suite(24, seed + 1, "test")
    spec = DetectorSpec(kind="ae", in_channels=1, base_channels=8)
    cfg = TrainConfig(epochs=2, batch_size=16, lr=5e-4, lr_drop_epochs=(), seed=seed)
    result = train_one_class(spec, train.images[train.labels == 0], cfg)
    split = build_split(test, [0], seed=seed)
    report = evaluate(result.model, split, [AttackConfig(kind="pgd", epsilon=0.05, t_max=2)])
    ckpt_path = out_dir / "micro.ckpt"
    save_checkpoint(ckpt_path, result.model)
    report_bytes = report.to_json().encode()
    return ckpt_path.read_bytes(), report_bytes


@_timed
def criterion_determinism(out_dir) -> CriterionResult:
    """C11: identical seeds give bit-identical checkpoints and reports."""
    out_dir = Path(out_dir)
    run_a = out_dir / "det_a"
    run_b = out_dir / "det_b"
    run_a.mkdir(parents=True, exist_ok=True)
    run_b.mkdir(parents=True, exist_ok=True)
    ckpt_a, rep_a = _micro_pipeline(run_a)
    ckpt_b, rep_b = _micro_pipeline(run_b)
    ok = ckpt_a == ckpt_b and rep_a == rep_b
    return CriterionResult(
        "C11", "determinism", ok,
        [f"checkpoint_bytes={'equal' if ckpt_a == ckpt_b else 'DIFFER'}",
         f"report_bytes={'equal' if rep_a == rep_b else 'DIFFER'}"])


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def make_protocol(dataset_cfg, out_dir) -> tuple[DeskProtocol | None, str | None]:
    """Build the desk protocol for a config's dataset; (None, reason) if unavailable."""
    if dataset_cfg.type == "synthetic":
        return synthetic_protocol(dataset_cfg.data_seed), None
    if dataset_cfg.type == "idx":
        if dataset_cfg.test_images and Path(dataset_cfg.test_images).exists():
            data_dir = str(Path(dataset_cfg.test_images).parent)
        else:
            data_dir = None
        proto = mnist_protocol(Path(out_dir), data_dir)
        if proto is None:
            return None, (f"MNIST IDX files not found (set {MNIST_ENV_VAR} or config paths)")
        return proto, None
    return None, f"no desk protocol for dataset type {dataset_cfg.type!r}"


def run_reproduce(config, out_dir) -> list[CriterionResult]:
    """Execute all acceptance criteria; returns one result per criterion."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = [
        criterion_pca_oracle(),
        criterion_gradient_integrity(),
        criterion_purifier_algebra(),
        criterion_attack_contracts(),
        criterion_metric_oracles(),
    ]
    protocol, reason = make_protocol(config.dataset, out_dir)
    heavy = [("C6", "sanity-checklist", criterion_sanity_checklist),
             ("C7", "defense-trend", criterion_defense_trend),
             ("C8", "attack-ordering", criterion_attack_ordering),
             ("C9", "latent-stability", criterion_latent_stability_ratio),
             ("C10", "knowledgeable-monotone", criterion_knowledgeable_monotone)]
    if protocol is None:
        for cid, name, _ in heavy:
            results.append(CriterionResult(cid, name, None, skip_reason=reason))
    else:
        ws = DeskWorkspace(protocol, out_dir)
        for _, _, runner in heavy:
            results.append(runner(ws))
    results.append(criterion_determinism(out_dir))
    return results


def run_sanity(config, out_dir) -> list[CriterionResult]:
    """Execute only the supplementary sanity checklist."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    protocol, reason = make_protocol(config.dataset, out_dir)
    if protocol is None:
        return [CriterionResult("C6", "sanity-checklist", None, skip_reason=reason)]
    return [criterion_sanity_checklist(DeskWorkspace(protocol, out_dir))]


def exit_code(results: list[CriterionResult]) -> int:
    """0 all pass, 2 any failure, 3 pass-with-skips."""
    if any(r.passed is False for r in results):
        return 2
    if any(r.passed is None for r in results):
        return 3
    return 0
