#!/usr/bin/env python3
"""Run the full synthetic protocol and print the per-patient table.

Default settings are expensive on a CPU. ``--project-only`` times one step of
each training loop and extrapolates; ``--reduced`` swaps in a small model that
finishes in a few minutes.
"""

import argparse
import json
import sys
import tempfile

from eegcast.config import load_config
from eegcast.pipeline import project_training_seconds, run_protocol

REDUCED = [
    "model.embed_dim=32", "model.n_layers=2", "model.n_heads=2", "model.block_size=64",
    "model.frame_len=125", "train_overlap=0.875",
    "pretrain.steps=200", "pretrain.grad_accum=1", "pretrain.lr=1e-3",
    "finetune.steps=300", "finetune.grad_accum=1", "finetune.lr=1e-3", "finetune.eval_every=25",
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="key = value config file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--steps", type=int, default=2000, help="pretrain and finetune optimizer steps")
    ap.add_argument("--reduced", action="store_true", help="small model for a quick desk run")
    ap.add_argument("--project-only", action="store_true", help="only print the runtime projection")
    ap.add_argument("--workdir", help="keep artifacts here instead of a temp dir")
    args = ap.parse_args(argv)

    overrides = [f"pretrain.steps={args.steps}", f"finetune.steps={args.steps}"]
    if args.reduced:
        overrides = list(REDUCED)
    cfg = load_config(args.config, overrides + args.set, args.seed)

    if args.project_only:
        proj = project_training_seconds(cfg)
        print(json.dumps({k: round(v, 2) for k, v in proj.items()}, indent=2))
        print(f"projected training time: {proj['total_s'] / 3600:.2f} h")
        return 0

    if args.workdir:
        result = run_protocol(cfg, args.workdir)
    else:
        with tempfile.TemporaryDirectory() as d:
            result = run_protocol(cfg, d)
    sys.stdout.write(result.table_csv)
    val = result.report.get("val", {})
    print(f"val acc {val.get('acc')}, F1 {val.get('f1')}, sensitivity {result.report['sensitivity_pct']}%, "
          f"FAR {result.report['far_per_h']:.2f}/h")
    print("stage seconds: " + ", ".join(f"{k}={v:.1f}" for k, v in result.stage_seconds.items()))
    print(f"total {result.seconds / 60:.1f} min")
    return 0


if __name__ == "__main__":
    sys.exit(main())
