"""Training for the base / base_c / base_cp configurations and evaluation."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .augment import AugmentDeps, load_embeddings, sample_augmentation
from .config import RunConfig
from .corpus import LabeledExample, UnlabeledExample, load_labeled, load_unlabeled
from .errors import ConfigError
from .lexicon import (
    PolyphoneInventory,
    PronunciationLexicon,
    load_inventory,
    load_lexicon,
    segment,
)
from .model import (
    CharVocab,
    PolyphoneModel,
    load_checkpoint,
    predict_many,
    save_checkpoint,
)
from .objectives import LossWeights, consistency_loss, cross_entropy_from_logits, total_loss
from .ssl import (
    DICTIONARY,
    MODEL,
    PseudoPool,
    TrainingItem,
    as_item,
    assign_pseudo_labels,
    mix_batch,
    schedule_allows,
    threshold,
)

logger = logging.getLogger(__name__)

ENTROPY_BINS = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.2, 1.4, 1.7]


def set_seed(seed: int):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


@dataclass
class AccuracyReport:
    overall: float
    per_character: Dict[str, float]
    support: Dict[str, int]
    confusion: Dict[str, Dict[str, Dict[str, int]]]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def accuracy_report(gold: Sequence[Tuple[str, str]], pred: Sequence[str]) -> AccuracyReport:
    """``gold`` holds (character, pinyin) pairs aligned with predicted pinyins."""
    support: Counter = Counter()
    correct: Counter = Counter()
    confusion: Dict[str, Dict[str, Dict[str, int]]] = defaultdict(lambda: defaultdict(dict))
    for (char, g), p in zip(gold, pred):
        support[char] += 1
        correct[char] += g == p
        cell = confusion[char][g]
        cell[p] = cell.get(p, 0) + 1
    total = sum(support.values())
    per_char = {c: correct[c] / support[c] for c in sorted(support)}
    return AccuracyReport(
        overall=sum(correct.values()) / total if total else 0.0,
        per_character=per_char,
        support={c: support[c] for c in sorted(support)},
        confusion={c: {g: dict(v) for g, v in rows.items()} for c, rows in sorted(confusion.items())},
    )


def evaluate(model, test: Sequence[LabeledExample], inventory: Optional[PolyphoneInventory] = None,
             batch_size: int = 256) -> AccuracyReport:
    """Exact-match accuracy of the argmax over each target's candidates.

    ``model`` may be a checkpoint path; a differing ``inventory`` is refused.
    """
    if isinstance(model, (str, Path)):
        model, _ = load_checkpoint(model, inventory)
    elif inventory is not None and inventory.fingerprint() != model.inventory.fingerprint():
        from .model import InventoryMismatchError

        raise InventoryMismatchError("model was trained on a different inventory")
    inv = model.inventory
    dists = predict_many(model, [ex.text for ex in test], [ex.positions for ex in test], batch_size)
    gold, pred = [], []
    for ex, row in zip(test, dists):
        for (pos, label), dist in zip(ex.targets, row):
            gold.append((ex.text[pos], inv.pinyin(label)))
            pred.append(inv.pinyin(dist.argmax()))
    return accuracy_report(gold, pred)


def entropy_histogram(values: Sequence[float]) -> Dict[str, int]:
    edges = ENTROPY_BINS + [math.inf]
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=edges)
    return {f"{lo:g}-{hi:g}": int(c) for lo, hi, c in zip(edges[:-1], edges[1:], counts)}


@dataclass
class Resources:
    inventory: PolyphoneInventory
    lexicon: PronunciationLexicon
    deps: AugmentDeps
    labeled: List[LabeledExample]
    unlabeled: List[UnlabeledExample]
    dev: List[LabeledExample]
    test: List[LabeledExample]


def _default_data(name: str) -> str:
    return str(Path(__file__).parent / "data" / name)


def load_resources(cfg: RunConfig) -> Resources:
    p = cfg.paths
    inventory = load_inventory(p.inventory)
    lexicon = load_lexicon(p.lexicon or _default_data("lexicon.tsv"))
    table = load_embeddings(p.embeddings or _default_data("embeddings.txt"))
    segmenter = lru_cache(maxsize=None)(lambda text: segment(text, lexicon))
    deps = AugmentDeps(segmenter, table, cfg.augment.safe_zone)
    labeled = load_labeled(p.labeled, inventory)
    if not labeled:
        raise ConfigError(f"{p.labeled}: no labeled examples")
    unlabeled = load_unlabeled(p.unlabeled, inventory) if p.unlabeled else []
    dev = load_labeled(p.dev, inventory) if p.dev else []
    test = load_labeled(p.test, inventory) if p.test else []
    return Resources(inventory, lexicon, deps, labeled, unlabeled, dev, test)


def build_vocab(res: Resources) -> CharVocab:
    texts = [ex.text for ex in res.labeled] + [ex.text for ex in res.unlabeled]
    texts += [ex.text for ex in res.dev]
    texts += list(res.inventory.entries) + list(res.lexicon.word_to_pinyin)
    texts += res.deps.table.words
    return CharVocab.from_texts(texts)


class Trainer:
    def __init__(self, cfg: RunConfig, res: Resources, model: PolyphoneModel, lr: float,
                 weights: LossWeights):
        self.cfg = cfg
        self.res = res
        self.model = model
        self.weights = weights
        self.rng = random.Random(cfg.seed)
        self.consis_rng = random.Random(cfg.seed + 1_000_003)
        self.optimizer = torch.optim.AdamW(
            model.parameters(), lr=lr, weight_decay=cfg.optimizer.weight_decay
        )

    def _view(self, text: str, positions: Sequence[int], rng):
        if len(text) <= 3:
            return text, list(positions)
        aug = sample_augmentation(text, positions, self.res.deps, rng)
        return aug.text, list(aug.target_positions)

    def step(self, items: Sequence[TrainingItem], unlabeled: Sequence[UnlabeledExample] = ()):
        """One optimizer step.

        The classification view of every item is drawn from ``rng`` whether or
        not consistency is on, so runs that differ only in ``w_consis`` see the
        same classification inputs; extra consistency views use ``consis_rng``.
        """
        model, cfg = self.model, self.cfg
        model.train()
        labels = torch.tensor([l for it in items for l in it.labels], dtype=torch.long)
        stats = {"cls": 0.0, "consis": 0.0}
        if cfg.loss.cls_on_clean:
            cls_views = [(it.text, it.positions) for it in items]
        else:
            cls_views = [self._view(it.text, it.positions, self.rng) for it in items]
        consis = None
        if self.weights.w_consis > 0:
            if cfg.loss.cls_on_clean:
                view1 = [self._view(it.text, it.positions, self.consis_rng) for it in items]
            else:
                view1 = list(cls_views)
            view1 += [self._view(u.text, u.target_positions, self.consis_rng) for u in unlabeled]
            sources = [(it.text, it.positions) for it in items]
            sources += [(u.text, u.target_positions) for u in unlabeled]
            view2 = [self._view(t, p, self.consis_rng) for t, p in sources]
            if cfg.loss.cls_on_clean:
                view1 = cls_views + view1
            logits, hidden = model.score([v[0] for v in view1 + view2], [v[1] for v in view1 + view2])
            n2 = sum(len(v[1]) for v in view2)
            tail = logits.shape[0] - 2 * n2  # rows of the clean classification view, if any
            consis = consistency_loss(
                cfg.loss.consistency,
                logits[tail:tail + n2], hidden[tail:tail + n2],
                logits[tail + n2:], hidden[tail + n2:],
            )
            cls_logits = logits[: len(labels)]
            stats["consis"] = float(consis.detach())
        else:
            cls_logits, _ = model.score([v[0] for v in cls_views], [v[1] for v in cls_views])
        cls = cross_entropy_from_logits(cls_logits, labels)
        loss = total_loss(self.weights, cls, consis)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        stats["cls"] = float(cls.detach())
        stats["loss"] = float(loss.detach())
        return stats


def _mean(values):
    return float(np.mean(values)) if values else 0.0


def _dev_accuracy(model, res, cfg):
    if not res.dev:
        return None
    return evaluate(model, res.dev, batch_size=cfg.eval_batch_size).overall


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: List[dict]
    model: PolyphoneModel
    test_report: Optional[AccuracyReport] = None
    pool: Optional[PseudoPool] = None


def train(cfg: RunConfig, resources: Optional[Resources] = None) -> TrainResult:
    cfg.validate()
    set_seed(cfg.seed)
    res = resources or load_resources(cfg)
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.mode == "base_cp":
        if not cfg.paths.init_checkpoint or not Path(cfg.paths.init_checkpoint).exists():
            raise ConfigError("mode 'base_cp' resumes from a base_c checkpoint (paths.init_checkpoint)")
        if not res.unlabeled:
            raise ConfigError("mode 'base_cp' needs a nonempty unlabeled corpus")
        model, _ = load_checkpoint(cfg.paths.init_checkpoint, res.inventory)
        weights = LossWeights(cfg.loss.w_cls, cfg.ssl.w_consis)
        trainer = Trainer(cfg, res, model, cfg.ssl.lr, weights)
        metrics, pool = _train_pseudo(cfg, res, trainer, out_dir)
    else:
        vocab = build_vocab(res) if cfg.model.encoder == "toy" else None
        model = PolyphoneModel(cfg.model, res.inventory, vocab)
        weights = LossWeights(cfg.loss.w_cls, cfg.loss.w_consis)
        trainer = Trainer(cfg, res, model, cfg.optimizer.lr, weights)
        metrics, pool = _train_supervised(cfg, res, trainer), None

    ckpt = out_dir / "checkpoint.pt"
    save_checkpoint(
        ckpt,
        model,
        {
            "mode": cfg.mode,
            "seed": cfg.seed,
            "lexicon": cfg.paths.lexicon or _default_data("lexicon.tsv"),
        },
    )
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for row in metrics:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    report = None
    if res.test:
        report = evaluate(model, res.test, batch_size=cfg.eval_batch_size)
        (out_dir / "test_report.json").write_text(
            json.dumps(report.to_dict(), ensure_ascii=False, indent=2, sort_keys=True),
            encoding="utf-8",
        )
    return TrainResult(ckpt, metrics, model, report, pool)


def _train_supervised(cfg, res, trainer) -> List[dict]:
    metrics = []
    items = [as_item(ex) for ex in res.labeled]
    for epoch in range(1, cfg.epochs + 1):
        order = list(range(len(items)))
        trainer.rng.shuffle(order)
        logs = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [items[i] for i in order[start:start + cfg.batch_size]]
            logs.append(trainer.step(batch))
        row = {
            "epoch": epoch,
            "mode": cfg.mode,
            "loss": _mean([l["loss"] for l in logs]),
            "cls": _mean([l["cls"] for l in logs]),
            "consis": _mean([l["consis"] for l in logs]),
        }
        dev = _dev_accuracy(trainer.model, res, cfg)
        if dev is not None:
            row["dev_accuracy"] = dev
        metrics.append(row)
        logger.info("epoch %d %s", epoch, row)
    return metrics


def _train_pseudo(cfg, res, trainer, out_dir: Path):
    pool = PseudoPool()
    sched = cfg.ssl.schedule
    half = cfg.batch_size // 2
    steps = max(1, math.ceil(len(res.labeled) / half))
    metrics = []
    stats_path = out_dir / "pseudo_stats.jsonl"
    stats_fh = open(stats_path, "w", encoding="utf-8")
    try:
        for epoch in range(1, cfg.ssl.epochs + 1):
            diag: dict = {}
            assigned = []
            if schedule_allows(epoch):
                assigned = assign_pseudo_labels(
                    res.unlabeled, trainer.model, res.lexicon, res.inventory, epoch, sched, pool,
                    segmenter=res.deps.segmenter, relabel=cfg.ssl.relabel, diagnostics=diag,
                )
            logs = []
            for _ in range(steps):
                batch = mix_batch(res.labeled, pool, cfg.batch_size, trainer.rng)
                extra = _draw_unlabeled(trainer.consis_rng, res.unlabeled, half)
                logs.append(trainer.step(batch, extra))
            counts = pool.counts()
            stat = {
                "epoch": epoch,
                "assignment_epoch": bool(diag),
                "threshold": threshold(epoch, sched),
                "pool_size": len(pool),
                "pool_dictionary": counts[DICTIONARY],
                "pool_model": counts[MODEL],
                "assigned": len(assigned),
                "assigned_dictionary": diag.get(DICTIONARY, 0),
                "assigned_model": diag.get(MODEL, 0),
                "considered": diag.get("considered", 0),
                "acceptance_rate": (len(assigned) / diag["considered"]) if diag.get("considered") else 0.0,
                "entropy_histogram": entropy_histogram(diag.get("entropies", [])),
            }
            stats_fh.write(json.dumps(stat, sort_keys=True) + "\n")
            row = {
                "epoch": epoch,
                "mode": cfg.mode,
                "loss": _mean([l["loss"] for l in logs]),
                "cls": _mean([l["cls"] for l in logs]),
                "consis": _mean([l["consis"] for l in logs]),
                "pool_size": len(pool),
                "assigned": len(assigned),
            }
            dev = _dev_accuracy(trainer.model, res, cfg)
            if dev is not None:
                row["dev_accuracy"] = dev
            metrics.append(row)
            logger.info("epoch %d %s", epoch, row)
    finally:
        stats_fh.close()
    pool.save(out_dir / "pool.jsonl")
    return metrics, pool


def _draw_unlabeled(rng, unlabeled, k):
    if not unlabeled or k == 0:
        return []
    return rng.sample(unlabeled, min(k, len(unlabeled)))


def run_staged(cfg: RunConfig, resources: Optional[Resources] = None):
    """Train base_c, then resume from its checkpoint with pseudo labelling."""
    res = resources or load_resources(cfg)
    root = Path(cfg.paths.out_dir)
    stage_c = dataclasses.replace(
        cfg, mode="base_c", paths=dataclasses.replace(cfg.paths, out_dir=str(root / "stage_c"))
    )
    first = train(stage_c, res)
    stage_p = dataclasses.replace(
        cfg,
        mode="base_cp",
        paths=dataclasses.replace(
            cfg.paths, out_dir=str(root / "stage_cp"), init_checkpoint=str(first.checkpoint)
        ),
    )
    return first, train(stage_p, res)
