"""Versioned model checkpoints on top of the tensor container.

A checkpoint stores a JSON metadata entry (format version, detector spec,
build seed) plus every parameter, batchnorm buffer and purifier component.
Loading rebuilds the detector from its spec and overwrites the arrays, so a
save/load round trip reproduces novelty scores bit-identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .exceptions import ParseError
from .models import Detector, DetectorSpec, build_detector
from .purifier import LatentComponents, PurifierConfig
from .tensorio import read_tensors, write_tensors

FORMAT_NAME = "latentguard-checkpoint"
FORMAT_VERSION = 1


def _spec_to_dict(spec: DetectorSpec) -> dict:
    d = {
        "kind": spec.kind,
        "in_channels": spec.in_channels,
        "base_channels": spec.base_channels,
        "denoise_sigma": spec.denoise_sigma,
        "dtype": spec.dtype,
        "purifier": None,
    }
    if spec.purifier is not None:
        p = spec.purifier
        d["purifier"] = {"k_s": p.k_s, "eta_v": p.eta_v, "eta_s": p.eta_s, "mode": p.mode}
    return d


def _spec_from_dict(d: dict) -> DetectorSpec:
    purifier = None
    if d.get("purifier") is not None:
        purifier = PurifierConfig(**d["purifier"])
    return DetectorSpec(
        kind=d["kind"],
        in_channels=d["in_channels"],
        base_channels=d["base_channels"],
        purifier=purifier,
        denoise_sigma=d["denoise_sigma"],
        dtype=d["dtype"],
    )


def save_checkpoint(path, model: Detector) -> None:
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "seed": model.seed,
        "spec": _spec_to_dict(model.spec),
        "has_components": model.components is not None,
    }
    entries: dict[str, np.ndarray] = {
        "__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"),
                                  dtype=np.uint8).copy()
    }
    for p in model.parameters():
        entries[f"param:{p.name}"] = p.data
    for name, buf in model.buffers().items():
        entries[f"buffer:{name}"] = buf
    if model.components is not None:
        comp = model.components
        entries["comp:mu_v"] = comp.mu_v
        entries["comp:u_v"] = comp.u_v
        entries["comp:mu_s"] = comp.mu_s
        entries["comp:u_s"] = comp.u_s
    write_tensors(path, entries)


def load_checkpoint(path) -> Detector:
    path = Path(path)
    entries = read_tensors(path)
    if "__meta__" not in entries:
        raise ParseError(f"{path}: not a checkpoint (missing metadata entry)")
    meta = json.loads(entries["__meta__"].tobytes().decode("utf-8"))
    if meta.get("format") != FORMAT_NAME:
        raise ParseError(f"{path}: unexpected format {meta.get('format')!r}")
    if meta.get("version") != FORMAT_VERSION:
        raise ParseError(
            f"{path}: checkpoint version {meta.get('version')} unsupported "
            f"(expected {FORMAT_VERSION})"
        )
    model = build_detector(_spec_from_dict(meta["spec"]), meta["seed"])

    for p in model.parameters():
        key = f"param:{p.name}"
        if key not in entries:
            raise ParseError(f"{path}: missing parameter {p.name!r}")
        saved = entries[key]
        if saved.shape != p.data.shape:
            raise ParseError(
                f"{path}: parameter {p.name!r} has shape {saved.shape}, model expects {p.data.shape}"
            )
        p.data = saved.astype(p.data.dtype, copy=True)
    for name, buf in model.buffers().items():
        key = f"buffer:{name}"
        if key not in entries:
            raise ParseError(f"{path}: missing buffer {name!r}")
        buf[...] = entries[key]
    if meta.get("has_components"):
        try:
            model.components = LatentComponents(
                entries["comp:mu_v"], entries["comp:u_v"],
                entries["comp:mu_s"], entries["comp:u_s"],
            )
        except KeyError as exc:
            raise ParseError(f"{path}: missing purifier component {exc}") from exc
        model.components.validate()
    return model
