"""Compare loss variants on an existing desk run (see desk_pipeline.py).

Trains one demorpher per variant on the run's training manifest and reports
restoration accuracy, TMR and replication on the test manifest, next to the
(x, x) stub. ``l1_image`` trains in pixel space through the identity codec,
which is slow at 64x64; leave it out with --variants l1_kurt,l1_only.
"""

import argparse
import json
import time
from pathlib import Path

from demorphlab.biometric import ToyProvider
from demorphlab.codec import CodecCheckpoint, IdentityCodec
from demorphlab.demorpher import DemorphConfig, train
from demorphlab.evaluation import evaluate_dataset
from demorphlab.protocol import Manifest

COLUMNS = ("ra@0.1", "ra@0.01", "tmr@0.1", "replication_rate", "separation_rate", "psnr", "ssim")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--work", type=Path, default=Path("runs/desk"))
    p.add_argument("--variants", default="l1_kurt,l1_only")
    p.add_argument("--epochs", type=int, default=DemorphConfig.DESK_EPOCHS)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args(argv)

    train_m = Manifest.load(a.work / "train/manifest.jsonl")
    test_m = Manifest.load(a.work / "test/manifest.jsonl")
    codec = CodecCheckpoint.from_file(a.work / "codec.ckpt")
    toy = ToyProvider()

    rows = {}
    stub, _ = evaluate_dataset(test_m, provider=toy, demorpher=lambda x, r: (x, x), keep_images=False)
    rows["stub (x,x)"] = stub.aggregates
    for variant in a.variants.split(","):
        use = IdentityCodec(codec.image_shape) if variant == "l1_image" else codec
        cfg = DemorphConfig(epochs=a.epochs, loss_variant=variant, seed=a.seed)
        t0 = time.perf_counter()
        ckpt = train(train_m, use, cfg)
        print(f"{variant}: trained in {time.perf_counter() - t0:.0f}s")
        report, _ = evaluate_dataset(test_m, use, ckpt, toy, keep_images=False)
        rows[variant] = report.aggregates

    print(f"{'':>12}" + "".join(f"{c:>18}" for c in COLUMNS))
    for name, agg in rows.items():
        print(f"{name:>12}" + "".join(f"{agg[c]:>18.4f}" for c in COLUMNS))
    (a.work / "ablation.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
