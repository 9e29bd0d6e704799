"""``demorphlab`` command suite.

Exit status: 0 on success, 1 on a validation error (bad flags, bad input,
missing files), 2 on a runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import FORMAT_VERSION, __version__
from .config import ExperimentConfig, load_config
from .errors import DemorphError, ValidationError

log = logging.getLogger("demorphlab")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="demorphlab", description="Reference-free face demorphing lab.")
    p.add_argument("--seed", type=int, default=None, help="global seed (subcommand --seed wins)")
    p.add_argument("--threads", type=int, default=None, help="torch intra-op threads; 0 = all cores")
    p.add_argument("--config", type=Path, default=None, help="TOML experiment config")
    p.add_argument("--version", action="store_true", help="print package and format versions")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen-toyfaces", help="render a toy identity registry")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--res", type=int, default=64)
    s.add_argument("--seed", dest="sub_seed", type=int, default=None)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("split", help="scenario split and morph pair lists")
    s.add_argument("--registry", type=Path, required=True)
    s.add_argument("--scenario", type=int, choices=(1, 2, 3), default=None)
    s.add_argument("--seed", dest="sub_seed", type=int, default=None)
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--train-pairs", type=int, default=0, help="0 = every legal pair")
    s.add_argument("--test-pairs", type=int, default=0, help="0 = every legal pair")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("morph", help="morph a pair list into PNGs plus a manifest")
    s.add_argument("--registry", type=Path, required=True)
    s.add_argument("--pairs", type=Path, required=True)
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--scenario", type=int, choices=(1, 2, 3), default=None)
    s.add_argument("--seed", dest="sub_seed", type=int, default=None)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("train-codec", help="fit the KL autoencoder")
    s.add_argument("--data", type=Path, required=True, help="registry dir, manifest or PNG directory")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--factor", type=int, default=None)
    s.add_argument("--latent-channels", type=int, default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--seed", dest="sub_seed", type=int, default=None)

    s = sub.add_parser("train", help="train the latent demorpher")
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--codec", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--lambda1", type=float, default=None)
    s.add_argument("--lambda2", type=float, default=None)
    s.add_argument("--swap-prob", type=float, default=None)
    s.add_argument("--loss-variant", choices=("l1_kurt", "l1_only", "l1_image"), default=None)
    s.add_argument("--seed", dest="sub_seed", type=int, default=None)

    s = sub.add_parser("demorph", help="split morph images into two outputs")
    s.add_argument("--input", type=Path, required=True, help="PNG file or directory of PNGs")
    s.add_argument("--codec", type=Path, required=True)
    s.add_argument("--ckpt", type=Path, required=True)
    s.add_argument("--out-dir", type=Path, required=True)

    s = sub.add_parser("evaluate", help="demorph a manifest and write a metrics report")
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--codec", type=Path, required=True)
    s.add_argument("--ckpt", type=Path, required=True)
    s.add_argument("--provider", default=None, help="'toy16' or an embedding file")
    s.add_argument("--fmr", type=_floats, default=None)
    s.add_argument("--theta", type=float, default=None)
    s.add_argument("--epsilon", type=float, default=None)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--grid", type=Path, default=None)

    s = sub.add_parser("audit", help="identity leakage between two embedding files")
    s.add_argument("--train-emb", type=Path, required=True)
    s.add_argument("--test-emb", type=Path, required=True)
    s.add_argument("--percents", type=_floats, default=(0.1, 1.0, 5.0))
    return p


# --------------------------------------------------------------------------- helpers


def _seed(args, cfg: ExperimentConfig) -> int:
    if getattr(args, "sub_seed", None) is not None:
        return args.sub_seed
    if args.seed is not None:
        return args.seed
    return cfg.seed


def _require(path: Path) -> Path:
    if not Path(path).exists():
        raise FileNotFoundError(f"no such file: {path}")
    return Path(path)


def _provider(spec: str):
    from .biometric import EmbeddingFileProvider, ToyProvider

    if spec == ToyProvider.provider_id:
        return ToyProvider()
    return EmbeddingFileProvider.load(_require(Path(spec)))


def _load_codec(path: Path):
    from .codec import CodecCheckpoint

    return CodecCheckpoint.from_file(_require(path))


def _training_images(path: Path) -> np.ndarray:
    from .imaging import load_png
    from .protocol import Manifest, Registry

    path = _require(path)
    if path.is_dir() and (path / "registry.jsonl").exists():
        reg = Registry.load(path)
        files = [reg.root / r.image_paths[0] for r in reg.identities]
    elif path.suffix == ".jsonl":
        m = Manifest.load(path)
        files = sorted({m.resolve(p) for r in m.records for p in (r.image_a, r.image_b)})
    elif path.is_dir():
        files = sorted(path.rglob("*.png"))
    else:
        raise ValidationError(f"{path} is not a registry, manifest or image directory")
    if not files:
        raise ValidationError(f"no training images under {path}")
    return np.stack([load_png(f) for f in files])


def _emit(record: dict):
    print(json.dumps(record), flush=True)


# --------------------------------------------------------------------------- commands


def cmd_gen_toyfaces(args, cfg):
    from .protocol import gen_toy_faces

    reg = gen_toy_faces(args.count, args.res, _seed(args, cfg), args.out)
    _emit({"registry": str(args.out / "registry.jsonl"), "identities": len(reg)})


def cmd_split(args, cfg):
    from .protocol import Registry, make_scenario_split, sample_pairs, write_pairs

    seed = _seed(args, cfg)
    scenario = args.scenario if args.scenario is not None else cfg.scenario
    reg = Registry.load(_require(args.registry))
    split = make_scenario_split(reg.ids(), scenario, seed, args.test_fraction)
    # sample both sides before writing anything so a failure leaves no partial split
    sides = {}
    for offset, side, want in ((0, "train", args.train_pairs), (1, "test", args.test_pairs)):
        sides[side] = sample_pairs(split, want or split.count_legal(side), seed + offset, side)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "split.json").write_text(json.dumps(split.to_dict(), indent=1) + "\n", encoding="utf-8")
    for side, pairs in sides.items():
        write_pairs(args.out / f"{side}_pairs.txt", pairs)
    counts = {side: len(pairs) for side, pairs in sides.items()}
    _emit({"split": str(args.out / "split.json"), "scenario": scenario, **counts})


def cmd_morph(args, cfg):
    from .protocol import Registry, build_morph_dataset, read_pairs

    reg = Registry.load(_require(args.registry))
    pairs = read_pairs(_require(args.pairs))
    scenario = args.scenario if args.scenario is not None else cfg.scenario
    workers = args.threads or os.cpu_count() or 1
    m = build_morph_dataset(pairs, reg, args.alpha, args.out, _seed(args, cfg), scenario, workers=workers)
    _emit({"manifest": str(args.out / "manifest.jsonl"), "morphs": len(m)})


def cmd_train_codec(args, cfg):
    from dataclasses import replace

    from .codec import train_codec

    overrides = {
        "downscale_factor": args.factor,
        "latent_channels": args.latent_channels,
        "epochs": args.epochs,
        "learning_rate": args.lr,
    }
    ccfg = replace(cfg.codec, **{k: v for k, v in overrides.items() if v is not None})
    ccfg.seed = _seed(args, cfg)
    images = _training_images(args.data)
    ckpt = train_codec(images, ccfg, on_epoch=lambda r: _emit({k: v for k, v in r.items() if k != "seconds"}))
    ckpt.to_file(args.out)
    _emit({"codec": str(args.out), "fingerprint": ckpt.fingerprint()})


def cmd_train(args, cfg):
    from dataclasses import replace

    from .demorpher import train
    from .protocol import Manifest

    overrides = {
        "epochs": args.epochs,
        "learning_rate": args.lr,
        "lambda1": args.lambda1,
        "lambda2": args.lambda2,
        "swap_prob": args.swap_prob,
        "loss_variant": args.loss_variant,
    }
    dcfg = replace(cfg.demorph, **{k: v for k, v in overrides.items() if v is not None})
    dcfg.seed = _seed(args, cfg)
    manifest = Manifest.load(_require(args.manifest))
    codec = _load_codec(args.codec)
    ckpt = train(manifest, codec, dcfg, on_epoch=_emit)
    ckpt.to_file(args.out)
    _emit({"checkpoint": str(args.out), "fingerprint": ckpt.fingerprint()})


def cmd_demorph(args, cfg):
    from .demorpher import DemorphCheckpoint, demorph_batch
    from .imaging import load_png, save_png

    src = _require(args.input)
    files = sorted(src.glob("*.png")) if src.is_dir() else [src]
    if not files:
        raise ValidationError(f"no PNG files in {src}")
    codec = _load_codec(args.codec)
    ckpt = DemorphCheckpoint.from_file(_require(args.ckpt))
    o1, o2 = demorph_batch(np.stack([load_png(f) for f in files]), codec, ckpt)
    for f, a, b in zip(files, o1, o2):
        save_png(args.out_dir / f"{f.stem}_out1.png", a)
        save_png(args.out_dir / f"{f.stem}_out2.png", b)
    _emit({"outputs": 2 * len(files), "out_dir": str(args.out_dir)})


def cmd_evaluate(args, cfg):
    from .demorpher import DemorphCheckpoint
    from .evaluation import evaluate_dataset, write_grid
    from .protocol import Manifest

    manifest = Manifest.load(_require(args.manifest))
    codec = _load_codec(args.codec)
    ckpt = DemorphCheckpoint.from_file(_require(args.ckpt))
    provider = _provider(args.provider or cfg.provider)
    fmrs = args.fmr or cfg.fmr_targets
    report, results = evaluate_dataset(
        manifest, codec, ckpt, provider, fmrs, theta=args.theta, epsilon=args.epsilon,
        dataset=str(args.manifest),
    )
    report.write(args.out)
    if args.grid:
        write_grid(args.grid, results)
    _emit({"report": str(args.out), **report.aggregates})


def cmd_audit(args, cfg):
    from .biometric import Embedding, leakage_audit, read_embedding_file

    sets = []
    for path in (args.train_emb, args.test_emb):
        pid, _, records = read_embedding_file(_require(path))
        sets.append([Embedding(vec, pid) for _, vec in records])
    result = leakage_audit(*sets, percents=args.percents)
    _emit({f"top{k}%": v for k, v in result.items()})


COMMANDS = {
    "gen-toyfaces": cmd_gen_toyfaces,
    "split": cmd_split,
    "morph": cmd_morph,
    "train-codec": cmd_train_codec,
    "train": cmd_train,
    "demorph": cmd_demorph,
    "evaluate": cmd_evaluate,
    "audit": cmd_audit,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if not argv:
            parser.print_usage(sys.stderr)
            return 1
        args = parser.parse_args(argv)
        if args.version:
            print(f"demorphlab {__version__} (format {FORMAT_VERSION})")
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        threads = args.threads if args.threads is not None else cfg.threads
        if threads < 0:
            raise ValidationError("--threads must be >= 0")
        args.threads = threads
        if threads:
            torch.set_num_threads(threads)
        COMMANDS[args.command](args, cfg)
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValidationError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DemorphError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main():
    logging.basicConfig(level=os.environ.get("DEMORPHLAB_LOG", "WARNING"))
    sys.exit(run())
