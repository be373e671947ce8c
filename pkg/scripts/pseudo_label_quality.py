"""Score the pseudo-label pool of a base_cp run against the synthetic task's generating rule.

Reports precision by source (dictionary vs. model) and by assignment epoch,
which shows how the entropy threshold trades pool size against label noise.

    python scripts/pseudo_label_quality.py --run runs/ordering/seed0/staged/stage_cp
"""

import argparse
from collections import defaultdict
from pathlib import Path

import yaml

from polyssl.corpus import SyntheticTaskSpec, generate_synthetic
from polyssl.ssl import PseudoPool

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--run", required=True, help="directory holding pool.jsonl")
    ap.add_argument("--spec", default=str(ROOT / "configs" / "synthetic_task.yaml"))
    args = ap.parse_args()

    task = generate_synthetic(SyntheticTaskSpec.from_mapping(yaml.safe_load(Path(args.spec).read_text())))
    pool = PseudoPool.load(Path(args.run) / "pool.jsonl")
    hits, totals = defaultdict(int), defaultdict(int)
    for rec in pool:
        ok = rec.label == task.rule_label(rec.text, rec.pos)
        for key in (rec.source, f"epoch {rec.epoch_assigned:>3} {rec.source}"):
            hits[key] += ok
            totals[key] += 1
    for key in sorted(totals):
        print(f"{key:<24} {totals[key]:>6}  precision {hits[key] / totals[key]:.4f}")


if __name__ == "__main__":
    main()
