"""Train base, base_c and staged base_cp on the synthetic task for several seeds.

Prints per-seed test accuracy and the mean of each configuration, and writes
a JSON summary next to the runs.

    python scripts/run_ssl_ordering.py --seeds 0 1 2 --out runs/ordering
"""

import argparse
import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

from polyssl.config import load_config
from polyssl.pipeline import load_resources, run_staged, train

ROOT = Path(__file__).resolve().parents[1]


def with_run(cfg, seed, out_dir):
    return dataclasses.replace(cfg, seed=seed, paths=dataclasses.replace(cfg.paths, out_dir=str(out_dir)))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--base-config", default=str(ROOT / "configs" / "synthetic_base.yaml"))
    ap.add_argument("--c-config", default=str(ROOT / "configs" / "synthetic_base_c.yaml"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default=str(ROOT / "runs" / "ordering"))
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    base_cfg, c_cfg = load_config(args.base_config), load_config(args.c_config)
    res = load_resources(base_cfg)
    out = Path(args.out)
    acc = {"base": [], "base_c": [], "base_cp": []}
    for seed in args.seeds:
        acc["base"].append(train(with_run(base_cfg, seed, out / f"seed{seed}" / "base"), res).test_report.overall)
        first, second = run_staged(with_run(c_cfg, seed, out / f"seed{seed}" / "staged"), res)
        acc["base_c"].append(first.test_report.overall)
        acc["base_cp"].append(second.test_report.overall)
        print(f"seed {seed}: " + "  ".join(f"{k} {v[-1]:.4f}" for k, v in acc.items()), flush=True)

    summary = {k: {"per_seed": v, "mean": float(np.mean(v)), "std": float(np.std(v))} for k, v in acc.items()}
    print("mean:   " + "  ".join(f"{k} {s['mean']:.4f}" for k, s in summary.items()))
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps({"seeds": args.seeds, **summary}, indent=2))


if __name__ == "__main__":
    main()
