"""Entropy-gated pseudo labelling with dictionary priority."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import LabeledExample, UnlabeledExample
from .errors import ConfigError
from .lexicon import PolyphoneInventory, PronunciationLexicon, Segmenter, make_segmenter, resolve_mcw
from .model import PronunciationDistribution, predict_many

logger = logging.getLogger(__name__)

DICTIONARY, MODEL = "dictionary", "model"


@dataclass(frozen=True)
class ThresholdSchedule:
    t_min: float = 0.81
    t_max: float = 0.85
    step: float = 0.1
    update_period_epochs: int = 2

    def __post_init__(self):
        if not self.t_min <= self.t_max:
            raise ConfigError("t_min must not exceed t_max")
        if not self.step > 0:
            raise ConfigError("step must be positive")
        if self.update_period_epochs < 1:
            raise ConfigError("update_period_epochs must be >= 1")


def prediction_entropy(dist) -> float:
    """Shannon entropy in nats over the candidate classes (0 ln 0 = 0)."""
    probs = dist.probs if isinstance(dist, PronunciationDistribution) else dist
    p = np.asarray(probs, dtype=np.float64)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def threshold(epoch: int, sched: ThresholdSchedule) -> float:
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return min(sched.t_max, sched.t_min + (epoch // sched.update_period_epochs) * sched.step)


def schedule_allows(epoch: int) -> bool:
    """Pseudo labels are assigned on odd (1-indexed) epochs only."""
    if epoch < 1:
        raise ValueError("epochs are 1-indexed")
    return epoch % 2 == 1


@dataclass(frozen=True)
class PseudoLabelRecord:
    text: str
    pos: int
    label: int
    source: str
    entropy_at_assignment: float
    epoch_assigned: int

    @property
    def key(self) -> Tuple[str, int]:
        return (self.text, self.pos)

    def to_json(self) -> str:
        d = asdict(self)
        if math.isnan(d["entropy_at_assignment"]):
            d["entropy_at_assignment"] = None
        return json.dumps(d, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "PseudoLabelRecord":
        d = json.loads(line)
        if d["entropy_at_assignment"] is None:
            d["entropy_at_assignment"] = float("nan")
        return cls(**d)


class PseudoPool:
    """Pseudo labels keyed by (text, pos); grows monotonically within a run."""

    def __init__(self, records: Iterable[PseudoLabelRecord] = ()):
        self._records: Dict[Tuple[str, int], PseudoLabelRecord] = {}
        for r in records:
            self.add(r)

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key) -> bool:
        return key in self._records

    def __iter__(self):
        return iter(self._records.values())

    @property
    def records(self) -> List[PseudoLabelRecord]:
        return list(self._records.values())

    def get(self, key) -> Optional[PseudoLabelRecord]:
        return self._records.get(key)

    def add(self, record: PseudoLabelRecord, replace: bool = False):
        if record.key in self._records and not replace:
            raise KeyError(f"{record.key} already has a pseudo label")
        self._records[record.key] = record

    def counts(self) -> Dict[str, int]:
        out = {DICTIONARY: 0, MODEL: 0}
        for r in self._records.values():
            out[r.source] += 1
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for r in self._records.values():
                fh.write(r.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "PseudoPool":
        with open(path, encoding="utf-8") as fh:
            return cls(PseudoLabelRecord.from_json(l) for l in fh if l.strip())


def assign_pseudo_labels(
    batch: Sequence[UnlabeledExample],
    model,
    lexicon: PronunciationLexicon,
    inventory: PolyphoneInventory,
    epoch: int,
    sched: ThresholdSchedule,
    pool: PseudoPool,
    segmenter: Optional[Segmenter] = None,
    relabel: bool = False,
    diagnostics: Optional[dict] = None,
) -> List[PseudoLabelRecord]:
    """Label unlabeled targets: dictionary first, then confident model predictions.

    ``model`` is a ``PolyphoneModel`` or any callable mapping
    ``(texts, positions)`` to per-sentence lists of distributions. Model
    predictions are made on the clean sentence.
    """
    segmenter = segmenter or make_segmenter(lexicon)
    limit = threshold(epoch, sched)
    new: List[PseudoLabelRecord] = []
    pending: List[Tuple[int, str, List[int]]] = []
    stats = {"considered": 0, DICTIONARY: 0, MODEL: 0, "rejected": 0, "entropies": []}

    for idx, ex in enumerate(batch):
        text = ex.text
        seg = None
        model_positions = []
        for pos in ex.target_positions:
            if not 0 <= pos < len(text) or text[pos] not in inventory:
                logger.warning("skipping invalid target %d in %r", pos, text)
                continue
            existing = pool.get((text, pos))
            if existing is not None and not (relabel and existing.source == MODEL):
                continue
            stats["considered"] += 1
            seg = seg or segmenter(text)
            cls = resolve_mcw(text, seg, pos, lexicon, inventory)
            if cls is not None:
                if existing is None:
                    new.append(PseudoLabelRecord(text, pos, cls, DICTIONARY, float("nan"), epoch))
                    stats[DICTIONARY] += 1
            else:
                model_positions.append(pos)
        if model_positions:
            pending.append((idx, text, model_positions))

    if pending:
        if hasattr(model, "make_batch"):
            dists = predict_many(model, [t for _, t, _ in pending], [p for _, _, p in pending])
        else:
            dists = model([t for _, t, _ in pending], [p for _, _, p in pending])
        for (_, text, positions), row in zip(pending, dists):
            for pos, dist in zip(positions, row):
                h = prediction_entropy(dist)
                stats["entropies"].append(h)
                if h <= limit:
                    label = int(np.argmax(dist.probs))
                    new.append(PseudoLabelRecord(text, pos, label, MODEL, h, epoch))
                    stats[MODEL] += 1
                else:
                    stats["rejected"] += 1

    for r in new:
        pool.add(r, replace=relabel)
    if diagnostics is not None:
        diagnostics.update(stats)
    return new


@dataclass
class TrainingItem:
    text: str
    targets: Tuple[Tuple[int, int], ...]
    pseudo: bool = False

    @property
    def positions(self):
        return [p for p, _ in self.targets]

    @property
    def labels(self):
        return [l for _, l in self.targets]


def as_item(example: LabeledExample) -> TrainingItem:
    return TrainingItem(example.text, example.targets)


def _draw(rng, population: Sequence, k: int) -> List:
    if k <= len(population):
        return rng.sample(population, k)
    return [rng.choice(population) for _ in range(k)]


def mix_batch(
    labeled: Sequence[LabeledExample], pool: PseudoPool, batch_size: int, rng
) -> List[TrainingItem]:
    """Half labeled, half pseudo-labeled; a short pool is topped up with labeled data."""
    if batch_size % 2:
        raise ValueError("batch_size must be even")
    if not labeled:
        raise ValueError("labeled data is empty")
    half = batch_size // 2
    records = pool.records
    n_pseudo = min(half, len(records))
    pseudo = [
        TrainingItem(r.text, ((r.pos, r.label),), pseudo=True) for r in _draw(rng, records, n_pseudo)
    ]
    sup = [as_item(ex) for ex in _draw(rng, list(labeled), batch_size - n_pseudo)]
    return sup + pseudo
