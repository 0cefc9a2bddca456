"""Evaluation protocol: splits, metrics, attack sweeps, stability, histograms.

One-class protocol: the test items of the known class(es) are the normals;
anomalous items are drawn equally from every novel class until they make up
half of the split. AUROC treats anomalous as the positive class with higher
novelty score meaning more anomalous, computed by the rank statistic (exact
pair counting with half credit for ties). FPR@TPR reports the smallest false
positive rate achievable while keeping the true positive rate at or above the
target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, craft_adversarial
from .exceptions import ContractError
from .models import Detector, latent_rows, novelty_score

HISTOGRAM_BINS = 50


def _ranks_with_ties(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing the average rank of their block."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(normal_scores, anomalous_scores) -> float:
    """Probability a random anomalous item outscores a random normal one."""
    normal = np.asarray(normal_scores, dtype=np.float64)
    anomalous = np.asarray(anomalous_scores, dtype=np.float64)
    if normal.size == 0 or anomalous.size == 0:
        raise ContractError("auroc requires non-empty score sets")
    pooled = np.concatenate([anomalous, normal])
    ranks = _ranks_with_ties(pooled)
    n_a, n_n = anomalous.size, normal.size
    u = ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0
    return float(u / (n_a * n_n))


def fpr_at_tpr(normal_scores, anomalous_scores, tpr: float = 0.95) -> float:
    """Lowest FPR among thresholds with TPR >= target (score >= threshold flags)."""
    normal = np.asarray(normal_scores, dtype=np.float64)
    anomalous = np.asarray(anomalous_scores, dtype=np.float64)
    if normal.size == 0 or anomalous.size == 0:
        raise ContractError("fpr_at_tpr requires non-empty score sets")
    if not (0.0 < tpr <= 1.0):
        raise ContractError(f"tpr must lie in (0, 1], got {tpr}")
    need = int(np.ceil(tpr * anomalous.size))
    # the largest threshold admitting >= `need` anomalous items
    threshold = np.sort(anomalous)[::-1][need - 1]
    return float((normal >= threshold).mean())


@dataclass
class OneClassSplit:
    known_classes: tuple[int, ...]
    normal_images: np.ndarray     # (n, c, h, w)
    anomalous_images: np.ndarray  # (m, c, h, w), m == n up to rounding
    normal_classes: np.ndarray    # original class ids
    anomalous_classes: np.ndarray
    seed: int = 0

    @property
    def labels(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.ones(len(self.normal_images)), -np.ones(len(self.anomalous_images)))

    def validate(self) -> None:
        n, m = len(self.normal_images), len(self.anomalous_images)
        if abs(n - m) > 1:
            raise ContractError(f"split is not balanced: {n} normal vs {m} anomalous")
        counts = np.bincount(self.anomalous_classes)
        present = counts[counts > 0]
        if present.size and present.max() - present.min() > 1:
            raise ContractError("per-novel-class counts differ by more than 1")


def subsample_split(split: OneClassSplit, per_side: int, seed: int = 0) -> OneClassSplit:
    """Deterministically shrink a split to at most per_side items per side.

    Anomalous items are taken equally per novel class (remainder round-robin
    by ascending class id) so the balance invariants keep holding.
    """
    n = min(per_side, len(split.normal_images), len(split.anomalous_images))
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5d)))
    norm_idx = np.sort(rng.choice(len(split.normal_images), size=n, replace=False))

    classes = np.unique(split.anomalous_classes)
    base, rem = divmod(n, len(classes))
    anom_idx = []
    for i, cls in enumerate(sorted(classes.tolist())):
        pool = np.flatnonzero(split.anomalous_classes == cls)
        take = min(base + (1 if i < rem else 0), pool.size)
        anom_idx.append(np.sort(rng.choice(pool, size=take, replace=False)))
    anom_idx = np.concatenate(anom_idx)
    out = OneClassSplit(
        known_classes=split.known_classes,
        normal_images=split.normal_images[norm_idx].copy(),
        anomalous_images=split.anomalous_images[anom_idx].copy(),
        normal_classes=split.normal_classes[norm_idx].copy(),
        anomalous_classes=split.anomalous_classes[anom_idx].copy(),
        seed=seed,
    )
    out.validate()
    return out


def build_split(dataset, known_classes, seed: int) -> OneClassSplit:
    """Assemble the one-class test split from a labeled dataset.

    Normals are every test item of the known class(es); anomalous items are
    sampled without replacement, equally per novel class (remainders assigned
    round-robin by ascending class id), matching the normal count.
    """
    known = tuple(sorted(int(k) for k in known_classes))
    if not known:
        raise ContractError("at least one known class is required")
    labels = np.asarray(dataset.labels)
    present = set(np.unique(labels).tolist())
    for k in known:
        if k not in present:
            raise ContractError(f"known class {k} not present in dataset")

    normal_mask = np.isin(labels, known)
    normal_images = dataset.images[normal_mask]
    normal_classes = labels[normal_mask]
    n_normal = int(normal_mask.sum())
    if n_normal == 0:
        raise ContractError("no test items belong to the known classes")

    novel_ids = sorted(present - set(known))
    if not novel_ids:
        raise ContractError("dataset has no novel classes")
    base, rem = divmod(n_normal, len(novel_ids))
    quotas = {cls: base + (1 if i < rem else 0) for i, cls in enumerate(novel_ids)}

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5eed)))
    chosen = []
    for cls in novel_ids:
        pool = np.flatnonzero(labels == cls)
        if quotas[cls] > pool.size:
            raise ContractError(
                f"novel class {cls} has {pool.size} items, {quotas[cls]} needed"
            )
        pick = rng.choice(pool, size=quotas[cls], replace=False)
        chosen.append(np.sort(pick))
    idx = np.concatenate(chosen)
    split = OneClassSplit(
        known_classes=known,
        normal_images=normal_images.copy(),
        anomalous_images=dataset.images[idx].copy(),
        normal_classes=normal_classes.copy(),
        anomalous_classes=labels[idx].copy(),
        seed=seed,
    )
    split.validate()
    return split


@dataclass
class AttackOutcome:
    config: dict
    auroc: float
    fpr_at_95_tpr: float

    def to_dict(self) -> dict:
        return {"config": self.config, "auroc": self.auroc,
                "fpr_at_95_tpr": self.fpr_at_95_tpr}


@dataclass
class EvalReport:
    known_classes: tuple[int, ...]
    clean_auroc: float
    clean_fpr_at_95_tpr: float
    per_class_auroc: dict[str, float]
    attacks: dict[str, AttackOutcome] = field(default_factory=dict)
    latent_stability_mean_l2: float | None = None
    histogram: dict | None = None
    item_rows: list[tuple] = field(default_factory=list)  # (id, class, attacked, score)

    @property
    def mauroc(self) -> float:
        return float(np.mean(list(self.per_class_auroc.values())))

    def to_json_dict(self) -> dict:
        return {
            "known_classes": list(self.known_classes),
            "clean_auroc": self.clean_auroc,
            "clean_fpr_at_95_tpr": self.clean_fpr_at_95_tpr,
            "per_class_auroc": self.per_class_auroc,
            "mauroc": self.mauroc,
            "attacks": {k: v.to_dict() for k, v in self.attacks.items()},
            "latent_stability_mean_l2": self.latent_stability_mean_l2,
            "histogram": self.histogram,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    def csv_rows(self) -> list[str]:
        rows = ["item_id,class_id,attacked,score"]
        rows += [f"{i},{c},{int(a)},{s:.10g}" for i, c, a, s in self.item_rows]
        return rows

    @staticmethod
    def from_json_dict(d: dict) -> "EvalReport":
        report = EvalReport(
            known_classes=tuple(d["known_classes"]),
            clean_auroc=d["clean_auroc"],
            clean_fpr_at_95_tpr=d["clean_fpr_at_95_tpr"],
            per_class_auroc=dict(d["per_class_auroc"]),
            latent_stability_mean_l2=d.get("latent_stability_mean_l2"),
            histogram=d.get("histogram"),
        )
        for key, val in d.get("attacks", {}).items():
            report.attacks[key] = AttackOutcome(config=val["config"], auroc=val["auroc"],
                                                fpr_at_95_tpr=val["fpr_at_95_tpr"])
        return report


def _histogram(normal_scores: np.ndarray, anomalous_scores: np.ndarray) -> dict:
    pooled = np.concatenate([normal_scores, anomalous_scores])
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, HISTOGRAM_BINS + 1)
    n_counts, _ = np.histogram(normal_scores, bins=edges)
    a_counts, _ = np.histogram(anomalous_scores, bins=edges)
    return {"bin_edges": edges.tolist(),
            "normal_counts": n_counts.tolist(),
            "anomalous_counts": a_counts.tolist()}


def _attack_config_dict(cfg: AttackConfig) -> dict:
    return {k: getattr(cfg, k) for k in (
        "kind", "epsilon", "alpha", "t_max", "momentum", "frame_width",
        "loss_mode", "lam", "target_subset")}


def scored_split(model: Detector, split: OneClassSplit,
                 attack: AttackConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Novelty scores of (normals, anomalous), optionally under attack."""
    x_n, x_a = split.normal_images, split.anomalous_images
    if attack is not None:
        y_n, y_a = split.labels
        x_n = craft_adversarial(model, x_n, y_n, attack)
        x_a = craft_adversarial(model, x_a, y_a, attack)
    return novelty_score(model, x_n), novelty_score(model, x_a)


def evaluate(model: Detector, split: OneClassSplit,
             attacks: list[AttackConfig] | None = None) -> EvalReport:
    """Score the split clean and under each attack; aggregate the metrics."""
    split.validate()
    s_n, s_a = scored_split(model, split, None)
    class_key = ",".join(str(k) for k in split.known_classes)
    report = EvalReport(
        known_classes=split.known_classes,
        clean_auroc=auroc(s_n, s_a),
        clean_fpr_at_95_tpr=fpr_at_tpr(s_n, s_a),
        per_class_auroc={class_key: auroc(s_n, s_a)},
        histogram=_histogram(s_n, s_a),
    )
    for i, (c, s) in enumerate(zip(split.normal_classes, s_n)):
        report.item_rows.append((i, int(c), False, float(s)))
    for i, (c, s) in enumerate(zip(split.anomalous_classes, s_a)):
        report.item_rows.append((len(s_n) + i, int(c), False, float(s)))

    for cfg in attacks or []:
        cfg.validate()
        a_n, a_a = scored_split(model, split, cfg)
        report.attacks[cfg.digest()] = AttackOutcome(
            config=_attack_config_dict(cfg),
            auroc=auroc(a_n, a_a),
            fpr_at_95_tpr=fpr_at_tpr(a_n, a_a),
        )
        base = len(report.item_rows)
        for i, (c, s) in enumerate(zip(split.normal_classes, a_n)):
            report.item_rows.append((base + i, int(c), True, float(s)))
        base = len(report.item_rows)
        for i, (c, s) in enumerate(zip(split.anomalous_classes, a_a)):
            report.item_rows.append((base + i, int(c), True, float(s)))
    return report


def latent_stability(model: Detector, split: OneClassSplit,
                     attack: AttackConfig) -> float:
    """Mean L2 distance between clean and attacked latents over the split.

    Uses the post-purifier latent for defended models, the raw encoder latent
    otherwise.
    """
    attack.validate()
    x = np.concatenate([split.normal_images, split.anomalous_images])
    y = np.concatenate(split.labels)
    z_clean = latent_rows(model, x)
    x_adv = craft_adversarial(model, x, y, attack)
    z_adv = latent_rows(model, x_adv)
    dists = np.sqrt(((z_adv - z_clean) ** 2).sum(axis=1))
    return float(dists.mean())
