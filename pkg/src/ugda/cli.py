"""Command-line entry point: gen-data, pretrain, adapt, evaluate, render-uncertainty.

Every command takes ``--config FILE`` (JSON with TrainConfig keys), ``--seed``
and repeated ``--set key=value`` overrides, applied in that order. Commands
that read a checkpoint start from the config stored in it.

Failures print a single line ``error: <category>: <message>`` to stderr and
exit with a category-specific nonzero status.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .evaluation import evaluate, render_uncertainty, write_metrics
from .synthdata import build_corpus, load_manifest, load_split, read_pgm
from .trainer import (
    CheckpointError,
    DomainData,
    TrainConfig,
    TrainingDiverged,
    adapt,
    load_checkpoint,
    pretrain_source,
)

EXIT_CODES = {"usage": 2, "config": 3, "data": 4, "checkpoint": 5, "diverged": 6, "io": 7}


class CLIError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


KEY_HELP = {
    "phase1_iters": "source pretraining steps",
    "phase1_lr": "Adam learning rate, pretraining",
    "phase2_iters": "adaptation steps",
    "phase2_lr": "Adam learning rate, adaptation",
    "batch_size": "images per step (only 1 supported)",
    "beta1": "Adam beta1",
    "beta2": "Adam beta2",
    "num_samples": "Monte Carlo latent samples per uncertainty map",
    "latent_dim": "CVAE latent size",
    "lambda_s": "weight of the source segmentation loss",
    "lambda_t": "weight of the target pseudo-label loss",
    "lambda_D": "weight of the discriminator loss",
    "lambda_G": "weight of the adversarial generator loss",
    "lambda_KL": "weight of the posterior/prior KL term",
    "f_start": "fraction of target images used in the first epoch",
    "f_end": "fraction used in the last epoch",
    "total_epochs": "curriculum length; null derives it from phase2_iters",
    "use_frm": "multi-scale recalibrated features for the critic",
    "use_uce": "uncertainty-weighted source cross-entropy",
    "use_ust": "uncertainty-ranked self-training on target images",
    "score_reduction": "image score from the uncertainty map: mean, max or p95",
    "base_channels": "encoder width",
    "feature_dim": "segmentation feature channels",
    "common_channels": "channels of the recalibrated critic input",
    "disc_layers": "stride-2 layers in the patch discriminator",
    "disc_width": "discriminator base width",
    "seed": "master seed",
    "checkpoint_path": "set by --out",
    "log_path": "set by --log",
}


def config_help() -> str:
    lines = ["config keys (JSON file or --set key=value):"]
    for f in fields(TrainConfig):
        lines.append(f"  {f.name:<16} {KEY_HELP.get(f.name, ''):<55} [{f.default!r}]")
    return "\n".join(lines)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def resolve_config(args, base: dict | None = None) -> TrainConfig:
    d = dict(base or {})
    try:
        if args.config:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
            if not isinstance(loaded, dict):
                raise ValueError(f"{args.config}: expected a JSON object")
            d.update(loaded)
        for item in args.set or []:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ValueError(f"--set expects key=value, got {item!r}")
            d[key.strip()] = _parse_value(raw)
        if args.seed is not None:
            d["seed"] = args.seed
        return TrainConfig.from_dict(d)
    except OSError as exc:
        raise CLIError("config", f"cannot read {args.config}: {exc.strerror or exc}") from exc
    except (KeyError, ValueError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        raise CLIError("config", msg) from exc


def _manifest(path):
    try:
        return load_manifest(path)
    except FileNotFoundError as exc:
        raise CLIError("data", str(exc)) from exc
    except (ValueError, KeyError) as exc:
        raise CLIError("data", f"{path}: bad manifest ({exc})") from exc


def _domain(manifest, domain, split, labelled=True) -> DomainData:
    ids, images, labels = load_split(manifest, domain, split)
    if not ids:
        raise CLIError("data", f"no {domain}/{split} samples in {manifest.root}")
    return DomainData(ids, images, labels if labelled else None)


def _checkpoint(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError as exc:
        raise CLIError("checkpoint", f"{path}: no such file") from exc
    except CheckpointError as exc:
        raise CLIError("checkpoint", str(exc)) from exc


def _train_paths(cfg: TrainConfig, args) -> TrainConfig:
    d = cfg.to_dict()
    d["checkpoint_path"] = str(args.out)
    if args.log:
        d["log_path"] = str(args.log)
    return TrainConfig.from_dict(d)


def cmd_gen_data(args):
    cfg = resolve_config(args)
    m = build_corpus(args.n_source, args.n_target, args.out, seed=cfg.seed)
    print(f"wrote {len(m.entries)} samples to {m.root}")


def cmd_pretrain(args):
    resume = _checkpoint(args.resume) if args.resume else None
    cfg = _train_paths(resolve_config(args, resume.config if resume else None), args)
    source = _domain(_manifest(args.data), "source", "train")
    ck = pretrain_source(source, cfg, checkpoint=resume, stop_at=args.stop_at)
    print(f"pretrain: {ck.iteration} iterations, checkpoint {cfg.checkpoint_path}")


def cmd_adapt(args):
    start = _checkpoint(args.checkpoint)
    cfg = _train_paths(resolve_config(args, start.config), args)
    m = _manifest(args.data)
    source = _domain(m, "source", "train")
    target = _domain(m, "target", "train", labelled=False)
    ck = adapt(source, target, start, cfg, stop_at=args.stop_at)
    h = ck.history
    if h.get("uncertainty_after_epoch"):
        print(f"target uncertainty {h['uncertainty_before']:.6g} -> {h['uncertainty_after_epoch'][-1]:.6g}")
    print(f"adapt: {ck.iteration} iterations, checkpoint {cfg.checkpoint_path}")


def cmd_evaluate(args):
    ck = _checkpoint(args.checkpoint)
    cfg = resolve_config(args, ck.config)
    m = _manifest(args.data)
    try:
        rows = evaluate(m, args.split, ck, cfg, domain=args.domain)
    except ValueError as exc:
        raise CLIError("data", str(exc)) from exc
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_metrics(rows, args.out)
    print("class,dice,conformity")
    for r in rows:
        print(f"{r.name},{r.dice:.6f},{r.conformity:.6f}")


def cmd_render(args):
    ck = _checkpoint(args.checkpoint)
    cfg = resolve_config(args, ck.config)
    if args.image:
        try:
            img = read_pgm(args.image).astype("float32") / 255.0
        except OSError as exc:
            raise CLIError("data", f"{args.image}: {exc}") from exc
    else:
        m = _manifest(args.data)
        entry = next((e for e in m.entries if e.id == args.id), None)
        if entry is None:
            raise CLIError("data", f"no sample with id {args.id!r} in {m.root}")
        img = read_pgm(m.root / entry.image).astype("float32") / 255.0
    if img.shape[0] % 8 or img.shape[1] % 8:
        raise CLIError("data", f"image size {img.shape[0]}x{img.shape[1]} must be divisible by 8")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    meta = render_uncertainty(img, ck.build_model(), cfg.latent, args.out, seed=cfg.seed, sigma_scale=args.sigma_scale)
    print(f"wrote {args.out} (uncertainty range {meta['min']:.6g} .. {meta['max']:.6g})")


def build_parser() -> argparse.ArgumentParser:
    epilog = config_help()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with TrainConfig keys")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(
        prog="ugda",
        description="Uncertainty-guided domain adaptation for layer segmentation.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(
            name, parents=[common], help=help_, epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter
        )
        sp.set_defaults(func=func)
        return sp

    g = add("gen-data", cmd_gen_data, "write the synthetic two-domain corpus")
    g.add_argument("--out", required=True, help="corpus directory")
    g.add_argument("--n-source", type=int, default=200)
    g.add_argument("--n-target", type=int, default=200)

    t = add("pretrain", cmd_pretrain, "supervised pretraining on the source domain")
    t.add_argument("--data", required=True, help="corpus directory or manifest.json")
    t.add_argument("--out", required=True, help="checkpoint file to write")
    t.add_argument("--log", help="loss log prefix; writes <prefix>.pretrain.csv")
    t.add_argument("--resume", help="unfinished pretraining checkpoint to continue")
    t.add_argument("--stop-at", type=int, help="stop early at this iteration")

    a = add("adapt", cmd_adapt, "adapt a pretrained model to the target domain")
    a.add_argument("--data", required=True)
    a.add_argument("--checkpoint", required=True, help="pretrained (or unfinished adaptation) checkpoint")
    a.add_argument("--out", required=True)
    a.add_argument("--log", help="loss log prefix; writes <prefix>.adapt.csv")
    a.add_argument("--stop-at", type=int)

    e = add("evaluate", cmd_evaluate, "per-class Dice and conformity on one split")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=["train", "test"])
    e.add_argument("--domain", default="target", choices=["source", "target"])
    e.add_argument("--out", help="metrics CSV to write")

    r = add("render-uncertainty", cmd_render, "write an uncertainty map as PGM + JSON sidecar")
    r.add_argument("--checkpoint", required=True)
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="8-bit PGM input")
    src.add_argument("--id", help="sample id in --data")
    r.add_argument("--data", help="corpus directory, with --id")
    r.add_argument("--out", required=True)
    r.add_argument("--sigma-scale", type=float, default=1.0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "id", None) and not args.data:
        parser.error("--id needs --data")
    try:
        args.func(args)
    except CLIError as exc:
        category, msg = exc.category, str(exc)
    except TrainingDiverged as exc:
        category, msg = "diverged", str(exc)
    except OSError as exc:
        category, msg = "io", str(exc)
    else:
        return 0
    msg = " ".join(msg.split())
    print(f"error: {category}: {msg}", file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
