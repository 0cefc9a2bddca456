"""Experiment configuration: a flat-sectioned UTF-8 key-value format.

Example::

    [dataset]
    type = synthetic
    train_per_kind = 400
    test_per_kind = 160

    [detector]
    kind = ae
    base_channels = 16
    purifier = true

    [train]
    epochs = 10
    mode = adversarial

    [attack]
    kind = pgd
    epsilon = 25/255

    [split]
    known_classes = 0

Sections: dataset, detector, train, split, output, and one or more attack
sections (``[attack]``, ``[attack2]``, ...). Every key is optional unless
noted; defaults follow the reference protocol (PGD at 25/255 for 5
iterations, purifier k_s=8, Adam at 5e-5 with drops at epochs 20/40, batch
128). Perturbation sizes accept ``N/255`` notation. Unknown sections or keys
are rejected with their line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .attacks import AttackConfig
from .exceptions import ConfigError
from .models import DetectorSpec
from .purifier import PurifierConfig
from .training import TrainConfig


@dataclass
class DataSource:
    type: str = "synthetic"           # synthetic | idx | cifar10
    train_per_kind: int = 400
    test_per_kind: int = 160
    data_seed: int = 1234
    train_images: str | None = None   # idx paths
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_files: tuple[str, ...] = ()  # cifar10 paths
    test_files: tuple[str, ...] = ()


@dataclass
class ExperimentConfig:
    dataset: DataSource = field(default_factory=DataSource)
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    attacks: list[AttackConfig] = field(default_factory=list)
    known_classes: tuple[int, ...] = (0,)
    split_seed: int = 0
    out_dir: str | None = None
    source_text: str = ""

    def validate_paths(self) -> None:
        if self.dataset.type == "idx":
            needed = [self.dataset.train_images, self.dataset.train_labels,
                      self.dataset.test_images, self.dataset.test_labels]
            if any(p is None for p in needed):
                raise ConfigError("idx dataset requires train/test image and label paths")
            missing = [p for p in needed if not Path(p).exists()]
            if missing:
                raise ConfigError(f"dataset paths do not exist: {missing}")
        elif self.dataset.type == "cifar10":
            paths = list(self.dataset.train_files) + list(self.dataset.test_files)
            if not paths:
                raise ConfigError("cifar10 dataset requires train_files/test_files")
            missing = [p for p in paths if not Path(p).exists()]
            if missing:
                raise ConfigError(f"dataset paths do not exist: {missing}")


class _Entry:
    __slots__ = ("value", "line", "used")

    def __init__(self, value: str, line: int):
        self.value = value
        self.line = line
        self.used = False


class _Section(dict):
    def fetch(self, key: str) -> str | None:
        entry = self.get(key)
        if entry is None:
            return None
        entry.used = True
        return entry.value


def _tokenize(text: str) -> dict[str, _Section]:
    sections: dict[str, _Section] = {}
    current: _Section | None = None
    current_name = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current_name = line[1:-1].strip().lower()
            if not current_name:
                raise ConfigError(f"line {lineno}: empty section name")
            if current_name in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{current_name}]")
            current = _Section()
            sections[current_name] = current
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside of any section")
        key, value = line.split("=", 1)
        key = key.strip().lower()
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{current_name}]")
        current[key] = _Entry(value.strip(), lineno)
    return sections


def parse_fraction(text: str) -> float:
    """Parse a perturbation size: plain float or 'N/255'-style fraction."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        try:
            return float(num) / float(den)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"cannot parse fraction {text!r}") from exc
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse number {text!r}") from exc


def _parse_bool(text: str, key: str, line: int) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"line {line}: key {key!r} expects a boolean, got {text!r}")


def _typed(section: _Section, key: str, kind: str, default):
    entry = section.get(key)
    if entry is None:
        return default
    entry.used = True
    text = entry.value
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "fraction":
            return parse_fraction(text)
        if kind == "str":
            return text
        if kind == "bool":
            return _parse_bool(text, key, entry.line)
        if kind == "int_list":
            return tuple(int(t.strip()) for t in text.split(",") if t.strip())
        if kind == "str_list":
            return tuple(t.strip() for t in text.split(",") if t.strip())
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"line {entry.line}: key {key!r} expects {kind}, got {text!r}") from exc
    raise ConfigError(f"internal: unknown kind {kind}")


_KNOWN_SECTIONS = ("dataset", "detector", "train", "split", "output")


def _attack_from_section(section: _Section) -> AttackConfig:
    alpha_text = section.fetch("alpha")
    cfg = AttackConfig(
        kind=_typed(section, "kind", "str", "pgd"),
        epsilon=_typed(section, "epsilon", "fraction", 25.0 / 255.0),
        alpha=parse_fraction(alpha_text) if alpha_text is not None else None,
        t_max=_typed(section, "t_max", "int", 5),
        momentum=_typed(section, "momentum", "float", 1.0),
        frame_width=_typed(section, "frame_width", "int", 1),
        loss_mode=_typed(section, "loss_mode", "str", "output"),
        lam=_typed(section, "lam", "float", 0.0),
        target_subset=_typed(section, "target_subset", "str", "all"),
    )
    cfg.validate()
    return cfg


def parse_config_text(text: str) -> ExperimentConfig:
    sections = _tokenize(text)

    for name in sections:
        if name not in _KNOWN_SECTIONS and not name.startswith("attack"):
            raise ConfigError(f"unknown section [{name}]")

    ds_sec = sections.get("dataset", _Section())
    dataset = DataSource(
        type=_typed(ds_sec, "type", "str", "synthetic"),
        train_per_kind=_typed(ds_sec, "train_per_kind", "int", 400),
        test_per_kind=_typed(ds_sec, "test_per_kind", "int", 160),
        data_seed=_typed(ds_sec, "data_seed", "int", 1234),
        train_images=_typed(ds_sec, "train_images", "str", None),
        train_labels=_typed(ds_sec, "train_labels", "str", None),
        test_images=_typed(ds_sec, "test_images", "str", None),
        test_labels=_typed(ds_sec, "test_labels", "str", None),
        train_files=_typed(ds_sec, "train_files", "str_list", ()),
        test_files=_typed(ds_sec, "test_files", "str_list", ()),
    )
    if dataset.type not in ("synthetic", "idx", "cifar10"):
        raise ConfigError(f"dataset type must be synthetic, idx or cifar10, got {dataset.type!r}")

    det_sec = sections.get("detector", _Section())
    purifier = None
    if _typed(det_sec, "purifier", "bool", False):
        purifier = PurifierConfig(
            k_s=_typed(det_sec, "k_s", "int", 8),
            eta_v=_typed(det_sec, "eta_v", "float", 0.1),
            eta_s=_typed(det_sec, "eta_s", "float", 0.001),
        )
    else:
        for key in ("k_s", "eta_v", "eta_s"):
            if key in det_sec:
                raise ConfigError(
                    f"line {det_sec[key].line}: key {key!r} requires purifier = true"
                )
    detector = DetectorSpec(
        kind=_typed(det_sec, "kind", "str", "ae"),
        in_channels=_typed(det_sec, "in_channels", "int", 1),
        base_channels=_typed(det_sec, "base_channels", "int", 64),
        purifier=purifier,
        denoise_sigma=_typed(det_sec, "denoise_sigma", "float", 0.1),
        dtype=_typed(det_sec, "dtype", "str", "float32"),
    )
    detector.validate()

    attack_names = sorted(n for n in sections if n.startswith("attack"))
    attacks = [_attack_from_section(sections[n]) for n in attack_names]

    tr_sec = sections.get("train", _Section())
    mode = _typed(tr_sec, "mode", "str", "natural")
    train = TrainConfig(
        epochs=_typed(tr_sec, "epochs", "int", 50),
        batch_size=_typed(tr_sec, "batch_size", "int", 128),
        lr=_typed(tr_sec, "lr", "float", 5e-5),
        weight_decay=_typed(tr_sec, "weight_decay", "float", 1e-4),
        lr_drop_epochs=_typed(tr_sec, "lr_drop_epochs", "int_list", (20, 40)),
        lr_drop_factor=_typed(tr_sec, "lr_drop_factor", "float", 10.0),
        mode=mode,
        attack=(attacks[0] if attacks else AttackConfig()) if mode == "adversarial" else None,
        seed=_typed(tr_sec, "seed", "int", 0),
    )
    train.validate()

    sp_sec = sections.get("split", _Section())
    known = _typed(sp_sec, "known_classes", "int_list", (0,))
    split_seed = _typed(sp_sec, "split_seed", "int", 0)

    out_sec = sections.get("output", _Section())
    out_dir = _typed(out_sec, "dir", "str", None)

    for name, section in sections.items():
        for key, entry in section.items():
            if not entry.used:
                raise ConfigError(f"line {entry.line}: unknown key {key!r} in section [{name}]")

    return ExperimentConfig(
        dataset=dataset, detector=detector, train=train, attacks=attacks,
        known_classes=tuple(known), split_seed=split_seed, out_dir=out_dir,
        source_text=text,
    )


def parse_config(path) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def load_source(ds: DataSource):
    """Materialize (train_dataset, test_dataset) from a data source config."""
    from .data import (load_cifar10_bin, load_idx, make_synthetic_suite,
                       resize_bilinear_32, Dataset)

    if ds.type == "synthetic":
        train = make_synthetic_suite(ds.train_per_kind, ds.data_seed, "train")
        test = make_synthetic_suite(ds.test_per_kind, ds.data_seed + 1, "test")
        return train, test
    if ds.type == "idx":
        train = load_idx(ds.train_images, ds.train_labels, "train")
        test = load_idx(ds.test_images, ds.test_labels, "test")
    else:
        train = load_cifar10_bin(ds.train_files, "train")
        test = load_cifar10_bin(ds.test_files, "test")
    train = Dataset(resize_bilinear_32(train.images), train.labels, "train")
    test = Dataset(resize_bilinear_32(test.images), test.labels, "test")
    return train, test
