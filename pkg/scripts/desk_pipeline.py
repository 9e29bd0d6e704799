"""Run the whole toy pipeline through the CLI, one subcommand per stage.

    python scripts/desk_pipeline.py --work runs/desk --identities 500 \
        --train-pairs 2000 --test-pairs 200

Stages that already produced their output are skipped unless --force is given,
so an interrupted run can be resumed.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from demorphlab import cli


def stages(work: Path, a):
    demorph_epochs = [] if a.epochs is None else ["--epochs", a.epochs]
    return [
        ("ids/registry.jsonl", ["gen-toyfaces", "--count", a.identities, "--res", 64, "--out", work / "ids"]),
        ("split/split.json", ["split", "--registry", work / "ids", "--scenario", a.scenario, "--test-fraction", a.test_fraction,
                              "--train-pairs", a.train_pairs, "--test-pairs", a.test_pairs, "--out", work / "split"]),
        ("train/manifest.jsonl", ["morph", "--registry", work / "ids", "--pairs", work / "split/train_pairs.txt",
                                  "--scenario", a.scenario, "--out", work / "train"]),
        ("test/manifest.jsonl", ["morph", "--registry", work / "ids", "--pairs", work / "split/test_pairs.txt",
                                 "--scenario", a.scenario, "--out", work / "test"]),
        ("codec.ckpt", ["train-codec", "--data", work / "ids", "--out", work / "codec.ckpt"]),
        ("demorpher.ckpt", ["train", "--manifest", work / "train/manifest.jsonl", "--codec", work / "codec.ckpt",
                            "--loss-variant", a.loss_variant, *demorph_epochs, "--out", work / "demorpher.ckpt"]),
        ("report.json", ["evaluate", "--manifest", work / "test/manifest.jsonl", "--codec", work / "codec.ckpt",
                         "--ckpt", work / "demorpher.ckpt", "--out", work / "report.json", "--grid", work / "grid.png"]),
    ]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--work", type=Path, default=Path("runs/desk"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identities", type=int, default=500)
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--train-pairs", type=int, default=2000)
    p.add_argument("--test-pairs", type=int, default=200)
    p.add_argument("--epochs", type=int, default=10, help="demorpher epochs; 0 keeps the config value")
    p.add_argument("--loss-variant", choices=("l1_kurt", "l1_only", "l1_image"), default="l1_kurt")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--force", action="store_true")
    a = p.parse_args(argv)
    if a.epochs == 0:
        a.epochs = None
    a.work.mkdir(parents=True, exist_ok=True)

    prefix = ["--seed", a.seed] + ([] if a.config is None else ["--config", a.config])
    for marker, args in stages(a.work, a):
        if (a.work / marker).exists() and not a.force:
            print(f"skip {args[0]} ({marker} exists)", file=sys.stderr)
            continue
        t0 = time.perf_counter()
        code = cli.run([str(x) for x in prefix + args])
        print(f"{args[0]}: exit {code} in {time.perf_counter() - t0:.0f}s", file=sys.stderr)
        if code:
            return code

    report = json.loads((a.work / "report.json").read_text())
    for key, value in sorted(report["aggregates"].items()):
        print(f"{key:>28}  {value:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
