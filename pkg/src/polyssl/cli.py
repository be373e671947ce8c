"""``polyssl`` command line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

from .errors import ConfigError, DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

logger = logging.getLogger("polyssl")


def _data(name):
    return str(Path(__file__).parent / "data" / name)


def cmd_train(args):
    from .config import load_config
    from .pipeline import run_staged, train

    cfg = load_config(args.config)
    if args.out_dir:
        cfg.paths.out_dir = args.out_dir
    if args.staged:
        first, result = run_staged(cfg)
    else:
        result = train(cfg)
    summary = {"checkpoint": str(result.checkpoint), "epochs": len(result.metrics)}
    if result.test_report is not None:
        summary["test_accuracy"] = result.test_report.overall
    print(json.dumps(summary))


def cmd_eval(args):
    from .corpus import load_labeled
    from .lexicon import load_inventory
    from .model import load_checkpoint
    from .pipeline import evaluate

    inventory = load_inventory(args.inventory) if args.inventory else None
    model, _ = load_checkpoint(args.checkpoint, inventory)
    test = load_labeled(args.test, model.inventory)
    report = evaluate(model, test)
    print(json.dumps(report.to_dict(), ensure_ascii=False, indent=2, sort_keys=True))


def annotate(model, text, lexicon):
    """Per-polyphone annotations: chosen pinyin, source, entropy and candidate probabilities."""
    from .lexicon import normalize_text, resolve_mcw, segment
    from .model import predict_many
    from .ssl import prediction_entropy

    text = normalize_text(text.strip())
    inv = model.inventory
    positions = [i for i, ch in enumerate(text) if ch in inv]
    if not positions:
        return []
    dists = predict_many(model, [text], [positions])[0]
    seg = segment(text, lexicon) if lexicon is not None else None
    rows = []
    for pos, dist in zip(positions, dists):
        char = text[pos]
        cls = resolve_mcw(text, seg, pos, lexicon, inv) if seg is not None else None
        source = "dict" if cls is not None else "model"
        chosen = cls if cls is not None else dist.argmax()
        probs = {inv.pinyin(c): float(dist.probs[c]) for c in inv.candidate_classes(char)}
        rows.append(
            {
                "pos": pos,
                "char": char,
                "pinyin": inv.pinyin(chosen),
                "source": source,
                "entropy": prediction_entropy(list(probs.values())),
                "probs": probs,
            }
        )
    return rows


def cmd_predict(args):
    from .lexicon import load_lexicon
    from .model import load_checkpoint

    model, manifest = load_checkpoint(args.checkpoint)
    lex_path = args.lexicon or manifest.get("lexicon")
    lexicon = load_lexicon(lex_path) if lex_path and Path(lex_path).exists() else None
    for row in annotate(model, args.text, lexicon):
        if args.json:
            print(json.dumps(row, ensure_ascii=False))
        else:
            probs = ",".join(f"{p}:{v!r}" for p, v in row["probs"].items())
            print(
                f"{row['pos']}\t{row['char']}\t{row['pinyin']}\tsource={row['source']}"
                f"\tentropy={row['entropy']!r}\tprobs={probs}"
            )


def cmd_augment_preview(args):
    from .augment import AugmentDeps, SafeZoneConfig, load_embeddings, sample_augmentation
    from .lexicon import load_lexicon, make_segmenter

    lexicon = load_lexicon(args.lexicon or _data("lexicon.tsv"))
    table = load_embeddings(args.embeddings or _data("embeddings.txt"))
    deps = AugmentDeps(make_segmenter(lexicon), table, SafeZoneConfig(args.n, args.word_safe_radius))
    rng = random.Random(args.seed)
    for _ in range(args.count):
        aug = sample_augmentation(args.text, args.pos, deps, rng)
        print(f"{aug.policy}\t{aug.target_pos}\t{aug.text}")


def cmd_pseudo_stats(args):
    run = Path(args.run)
    stats = run / "pseudo_stats.jsonl"
    if not stats.exists():
        raise DataError(f"{run}: no pseudo_stats.jsonl (not a base_cp run?)")
    for line in stats.read_text(encoding="utf-8").splitlines():
        if line.strip():
            print(json.dumps(json.loads(line), sort_keys=True))


def cmd_synth(args):
    from .config import load_yaml_mapping
    from .corpus import SyntheticTaskSpec, generate_synthetic

    spec = SyntheticTaskSpec.from_mapping(load_yaml_mapping(args.spec))
    task = generate_synthetic(spec)
    paths = task.write(args.out)
    print(json.dumps({k: str(v) for k, v in paths.items()}))


def cmd_model_stats(args):
    from .config import load_config
    from .lexicon import load_inventory
    from .model import PolyphoneModel, count_parameters
    from .pipeline import build_vocab, load_resources

    cfg = load_config(args.config)
    if cfg.model.encoder == "toy":
        res = load_resources(cfg)
        vocab = build_vocab(res)
        inventory = res.inventory
    else:
        vocab, inventory = None, load_inventory(cfg.paths.inventory)
    total, stages = count_parameters(PolyphoneModel(cfg.model, inventory, vocab))
    print(json.dumps({"total": total, "stages": stages}))


def build_parser():
    parser = argparse.ArgumentParser(prog="polyssl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train base / base_c / base_cp")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--staged", action="store_true", help="run base_c then base_cp")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy report on a labeled JSONL file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--inventory", help="refuse if the checkpoint used a different inventory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="annotate the polyphones of a sentence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("augment-preview", help="print augmented views of a sentence")
    p.add_argument("--text", required=True)
    p.add_argument("--pos", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--lexicon")
    p.add_argument("--embeddings")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--word-safe-radius", type=int, default=1)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("pseudo-stats", help="per-epoch pseudo-label statistics of a run")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_pseudo_stats)

    p = sub.add_parser("synth", help="generate a synthetic polyphone task")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("model-stats", help="parameter counts for a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_model_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
