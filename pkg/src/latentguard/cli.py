"""Command-line front end.

Subcommands:

    train       train a detector per the config; writes checkpoint + loss CSV
    attack      craft adversarial test batches; writes tensor containers and
                a budget-audit CSV
    eval        score a checkpoint clean + under the configured attacks;
                writes the report JSON and per-item CSV
    reproduce   run the full desk-scale acceptance suite, one line per
                criterion; exit 0 only if everything passed
    sanity      run just the supplementary sanity checklist

Every run writes a manifest (config digest, seeds, versions, backend) that
suffices to re-execute it bit-identically.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .acceptance import exit_code, run_reproduce, run_sanity
from .backend import active_backend
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_source, parse_config
from .evaluation import build_split, evaluate, latent_stability
from .exceptions import LatentGuardError
from .attacks import craft_adversarial
from .tensorio import write_tensors
from .training import train_one_class


def _manifest(config: ExperimentConfig, out: Path, extra: dict | None = None) -> None:
    try:
        import numba
        numba_version = numba.__version__
    except ImportError:
        numba_version = None
    payload = {
        "package_version": __version__,
        "backend": active_backend(),
        "numpy_version": np.__version__,
        "numba_version": numba_version,
        "config_sha256": hashlib.sha256(config.source_text.encode()).hexdigest(),
        "train_seed": config.train.seed,
        "split_seed": config.split_seed,
        "data_seed": config.dataset.data_seed,
        "known_classes": list(config.known_classes),
    }
    payload.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def _prepare(args) -> tuple[ExperimentConfig, Path]:
    config = parse_config(args.config)
    config.validate_paths()
    if args.seed is not None:
        config.train = replace(config.train, seed=args.seed)
        config.split_seed = args.seed
    out = Path(args.out or config.out_dir or "runs/latest")
    out.mkdir(parents=True, exist_ok=True)
    return config, out


def _cmd_train(args) -> int:
    config, out = _prepare(args)
    train_ds, _ = load_source(config.dataset)
    mask = np.isin(train_ds.labels, list(config.known_classes))
    images = train_ds.images[mask]
    result = train_one_class(config.detector, images, config.train)
    save_checkpoint(out / "checkpoint.ckpt", result.model)
    (out / "loss.csv").write_text("\n".join(result.loss_csv_rows()) + "\n")
    _manifest(config, out, {"command": "train", "train_items": int(mask.sum())})
    print(f"trained {config.detector.kind} on {int(mask.sum())} items; "
          f"final loss {result.epoch_losses[-1]:.6f}; artifacts in {out}")
    return 0


def _cmd_attack(args) -> int:
    config, out = _prepare(args)
    model = load_checkpoint(args.checkpoint)
    _, test_ds = load_source(config.dataset)
    split = build_split(test_ds, config.known_classes, config.split_seed)
    attacks = config.attacks or []
    if not attacks:
        print("no attack sections in config; nothing to craft", file=sys.stderr)
        return 2
    audit = ["attack,kind,epsilon,measured,within_budget"]
    for cfg in attacks:
        x = np.concatenate([split.normal_images, split.anomalous_images])
        y = np.concatenate(split.labels)
        adv = craft_adversarial(model, x, y, cfg)
        name = cfg.digest()
        write_tensors(out / f"adv_{name}.lgtc", {
            "images": adv, "labels": y.astype(np.int64),
            "clean_images": x,
        })
        if cfg.kind == "multadv":
            bright = x > 1e-6
            measured = float(np.maximum(adv[bright] / x[bright], x[bright] / adv[bright]).max())
        else:
            measured = float(np.abs(adv - x).max())
        ok = measured <= cfg.epsilon + 1e-6
        audit.append(f"{name},{cfg.kind},{cfg.epsilon:.8g},{measured:.8g},{int(ok)}")
    (out / "budget_audit.csv").write_text("\n".join(audit) + "\n")
    _manifest(config, out, {"command": "attack", "checkpoint": str(args.checkpoint)})
    print(f"crafted {len(attacks)} adversarial batch(es) into {out}")
    return 0


def _cmd_eval(args) -> int:
    config, out = _prepare(args)
    model = load_checkpoint(args.checkpoint)
    _, test_ds = load_source(config.dataset)
    split = build_split(test_ds, config.known_classes, config.split_seed)
    report = evaluate(model, split, config.attacks)
    if model.spec.purifier is not None and config.attacks:
        report.latent_stability_mean_l2 = latent_stability(model, split, config.attacks[0])
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text("\n".join(report.csv_rows()) + "\n")
    _manifest(config, out, {"command": "eval", "checkpoint": str(args.checkpoint)})
    print(f"clean AUROC {report.clean_auroc:.4f}; "
          + "; ".join(f"{k}: {v.auroc:.4f}" for k, v in report.attacks.items()))
    return 0


def _cmd_reproduce(args) -> int:
    config, out = _prepare(args)
    results = run_reproduce(config, out)
    for r in results:
        print(r.line())
    _manifest(config, out, {"command": "reproduce",
                            "criteria": {r.cid: r.passed for r in results}})
    code = exit_code(results)
    summary = {0: "all criteria passed", 2: "FAILURES present", 3: "passed with skips"}
    print(f"reproduce: {summary[code]} (exit {code})")
    return code


def _cmd_sanity(args) -> int:
    config, out = _prepare(args)
    results = run_sanity(config, out)
    for r in results:
        print(r.line())
    _manifest(config, out, {"command": "sanity",
                            "criteria": {r.cid: r.passed for r in results}})
    return exit_code(results)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentguard",
        description="Adversarially robust one-class novelty detection toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_ckpt in (
        ("train", _cmd_train, False),
        ("attack", _cmd_attack, True),
        ("eval", _cmd_eval, True),
        ("reproduce", _cmd_reproduce, False),
        ("sanity", _cmd_sanity, False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override seeds")
        if needs_ckpt:
            p.add_argument("--checkpoint", required=True, help="model checkpoint path")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except LatentGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
