"""Labeled/unlabeled corpus ingestion and the synthetic polyphone task generator."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, GenerationError, LabelError, ParseError, TargetError
from .lexicon import (
    Normalizer,
    PolyphoneInventory,
    PronunciationLexicon,
    identity,
)

logger = logging.getLogger(__name__)

MIN_SSL_LENGTH = 4
BOS = "^"


@dataclass(frozen=True)
class LabeledExample:
    text: str
    targets: Tuple[Tuple[int, int], ...]

    @property
    def positions(self) -> Tuple[int, ...]:
        return tuple(p for p, _ in self.targets)

    @property
    def labels(self) -> Tuple[int, ...]:
        return tuple(l for _, l in self.targets)


@dataclass(frozen=True)
class UnlabeledExample:
    text: str
    target_positions: Tuple[int, ...]


def make_labeled(text: str, targets, inventory: PolyphoneInventory) -> LabeledExample:
    """Validate ``(pos, class_id)`` pairs against the inventory."""
    seen = set()
    out = []
    for pos, label in targets:
        if not 0 <= pos < len(text):
            raise TargetError(f"target position {pos} outside text of length {len(text)}")
        char = text[pos]
        if char not in inventory:
            raise TargetError(f"{char!r} at {pos} is not a polyphonic character")
        if pos in seen:
            raise TargetError(f"duplicate target position {pos}")
        if label not in inventory.candidate_classes(char):
            raise LabelError(f"class {label} is not a candidate of {char!r}")
        seen.add(pos)
        out.append((pos, label))
    return LabeledExample(text, tuple(sorted(out)))


def parse_labeled(line: str, inventory: PolyphoneInventory) -> LabeledExample:
    try:
        record = json.loads(line)
        text = record["text"]
        raw_targets = record["targets"]
        pairs = [(int(t["pos"]), str(t["pinyin"])) for t in raw_targets]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed labeled record: {exc}") from None
    if not isinstance(text, str) or not text:
        raise ParseError("labeled record needs a nonempty 'text'")
    targets = []
    for pos, pinyin in pairs:
        if not 0 <= pos < len(text) or text[pos] not in inventory:
            raise TargetError(f"position {pos} does not hold a polyphonic character")
        char = text[pos]
        if pinyin not in inventory.entries[char]:
            raise LabelError(f"{pinyin!r} is not a pronunciation of {char!r}")
        targets.append((pos, inventory.class_id(char, pinyin)))
    return make_labeled(text, targets, inventory)


def serialize_labeled(example: LabeledExample, inventory: PolyphoneInventory) -> str:
    targets = [{"pos": p, "pinyin": inventory.pinyin(l)} for p, l in example.targets]
    return json.dumps({"text": example.text, "targets": targets}, ensure_ascii=False)


def scan_unlabeled(
    line: str, inventory: PolyphoneInventory, normalizer: Normalizer = identity
) -> Optional[UnlabeledExample]:
    """Inventory-character positions of a raw line, or None if the line is unusable.

    Lines of three characters or fewer are dropped since every SSL path augments.
    """
    text = normalizer(line.strip())
    if len(text) < MIN_SSL_LENGTH:
        return None
    positions = tuple(i for i, ch in enumerate(text) if ch in inventory)
    if not positions:
        return None
    return UnlabeledExample(text, positions)


def load_labeled(path, inventory: PolyphoneInventory) -> List[LabeledExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(parse_labeled(line, inventory))
            except ParseError as exc:
                raise ParseError(str(exc), line_no) from None
            except (LabelError, TargetError) as exc:
                raise type(exc)(f"{path}:{line_no}: {exc}") from None
    return out


def load_unlabeled(
    path, inventory: PolyphoneInventory, normalizer: Normalizer = identity
) -> List[UnlabeledExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            ex = scan_unlabeled(line, inventory, normalizer)
            if ex is not None:
                out.append(ex)
    return out


def write_labeled(path, examples: Sequence[LabeledExample], inventory: PolyphoneInventory):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(serialize_labeled(ex, inventory) + "\n")


# -- synthetic task ---------------------------------------------------------

_SYLLABLES = ["he", "xing", "zhang", "chong", "huan", "de", "wei", "di", "fa", "le",
              "ba", "shi", "jiao", "dou", "zhao", "kan", "mo", "bo", "cha", "gan"]


@dataclass
class SyntheticTaskSpec:
    """Desk-scale generative task: a polyphone's class is a function of its left neighbour.

    ``rule`` is ``"random"`` (a seeded lookup table) or ``"left_parity"``
    (class = alphabet index of the left neighbour modulo 2). An explicit
    ``rule_table`` keyed by ``"<polyphone index>:<left char>"`` overrides both.
    """

    alphabet_size: int = 40
    n_polyphones: int = 5
    classes_per_polyphone: Tuple[int, int] = (2, 5)
    sentence_length: Tuple[int, int] = (6, 14)
    polyphone_rate: float = 0.12
    n_labeled: int = 500
    n_unlabeled: int = 5000
    n_test: int = 500
    lexicon_coverage: float = 0.3
    lexicon_noise_words: int = 100
    embedding_dim: int = 8
    rule: str = "random"
    rule_table: Optional[Dict[str, int]] = None
    seed: int = 0

    def validate(self):
        lo, hi = self.classes_per_polyphone
        if not 2 <= lo <= hi <= 5:
            raise ConfigError("classes_per_polyphone must satisfy 2 <= min <= max <= 5")
        if self.alphabet_size < 2 or self.n_polyphones < 1:
            raise ConfigError("need at least 2 alphabet characters and 1 polyphone")
        if self.alphabet_size + self.n_polyphones > 0x5000:
            raise ConfigError("alphabet too large")
        lmin, lmax = self.sentence_length
        if not MIN_SSL_LENGTH <= lmin <= lmax:
            raise ConfigError(f"sentence_length must satisfy {MIN_SSL_LENGTH} <= min <= max")
        if not 0.0 < self.polyphone_rate <= 1.0:
            raise ConfigError("polyphone_rate must lie in (0, 1]")
        if not 0.0 <= self.lexicon_coverage <= 1.0:
            raise ConfigError("lexicon_coverage must lie in [0, 1]")
        if self.rule not in ("random", "left_parity"):
            raise ConfigError(f"unknown rule {self.rule!r}")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SyntheticTaskSpec":
        if "seed" not in data:
            raise ConfigError("synthetic spec needs an explicit 'seed'")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("classes_per_polyphone", "sentence_length"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        spec = cls(**kwargs)
        spec.validate()
        return spec


@dataclass
class SyntheticTask:
    spec: SyntheticTaskSpec
    inventory: PolyphoneInventory
    lexicon: PronunciationLexicon
    embeddings: "WordEmbeddingTable"
    rules: Dict[Tuple[str, str], int]
    labeled: List[LabeledExample]
    unlabeled: List[UnlabeledExample]
    test: List[LabeledExample]
    alphabet: List[str] = field(default_factory=list)

    def rule_label(self, text: str, pos: int) -> int:
        left = text[pos - 1] if pos > 0 else BOS
        return self.rules[(text[pos], left)]

    def write(self, out_dir) -> Dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "inventory": out / "inventory.tsv",
            "lexicon": out / "lexicon.tsv",
            "embeddings": out / "embeddings.txt",
            "labeled": out / "labeled.jsonl",
            "unlabeled": out / "unlabeled.txt",
            "test": out / "test.jsonl",
        }
        paths["inventory"].write_text(self.inventory.to_tsv(), encoding="utf-8")
        paths["lexicon"].write_text(self.lexicon.to_tsv(), encoding="utf-8")
        paths["embeddings"].write_text(self.embeddings.to_text(), encoding="utf-8")
        write_labeled(paths["labeled"], self.labeled, self.inventory)
        write_labeled(paths["test"], self.test, self.inventory)
        paths["unlabeled"].write_text(
            "".join(ex.text + "\n" for ex in self.unlabeled), encoding="utf-8"
        )
        return paths


def _build_rules(spec, rng, polyphones, contexts, n_classes, alphabet_index):
    rules: Dict[Tuple[str, str], int] = {}
    if spec.rule_table is not None:
        for pi, p in enumerate(polyphones):
            for left in contexts:
                key = f"{pi}:{left}"
                if key not in spec.rule_table:
                    raise GenerationError(f"rule table has no row for context {key!r}")
                cls = spec.rule_table[key]
                if not 0 <= cls < n_classes[p]:
                    raise GenerationError(
                        f"rule {key!r} -> {cls} but polyphone {pi} has {n_classes[p]} classes"
                    )
                rules[(p, left)] = cls
        return rules
    for p in polyphones:
        for left in contexts:
            if spec.rule == "left_parity":
                rules[(p, left)] = alphabet_index.get(left, 0) % 2
            else:
                rules[(p, left)] = rng.randrange(n_classes[p])
    return rules


def generate_synthetic(spec: SyntheticTaskSpec) -> SyntheticTask:
    from .augment import WordEmbeddingTable

    spec.validate()
    rng = random.Random(spec.seed)
    alphabet = [chr(0x4E00 + i) for i in range(spec.alphabet_size)]
    polyphones = [chr(0x9A00 + i) for i in range(spec.n_polyphones)]
    alphabet_index = {c: i for i, c in enumerate(alphabet)}
    mono_pinyin = {c: f"m{i}" for i, c in enumerate(alphabet)}

    lo, hi = spec.classes_per_polyphone
    n_classes = {p: rng.randint(lo, hi) for p in polyphones}
    entries = {}
    for j, p in enumerate(polyphones):
        syl = _SYLLABLES[j] if j < len(_SYLLABLES) else f"s{j}"
        entries[p] = [f"{syl}{tone}" for tone in range(1, n_classes[p] + 1)]
    inventory = PolyphoneInventory.from_entries(entries)

    contexts = alphabet + polyphones + [BOS]
    rules = _build_rules(spec, rng, polyphones, contexts, n_classes, alphabet_index)

    lex_entries: Dict[str, List[str]] = {}
    for p in polyphones:
        for left in alphabet:
            if rng.random() < spec.lexicon_coverage:
                lex_entries[left + p] = [mono_pinyin[left], entries[p][rules[(p, left)]]]
    for _ in range(spec.lexicon_noise_words):
        a, b = rng.choice(alphabet), rng.choice(alphabet)
        lex_entries.setdefault(a + b, [mono_pinyin[a], mono_pinyin[b]])
    lexicon = PronunciationLexicon.from_entries(lex_entries)

    # words in the same cluster are each other's nearest neighbours
    n_clusters = max(2, spec.alphabet_size // 8)
    np_rng = np.random.default_rng(spec.seed)
    centres = np_rng.normal(size=(n_clusters, spec.embedding_dim))
    vectors = {}
    for i, c in enumerate(alphabet):
        vectors[c] = centres[i % n_clusters] + 0.3 * np_rng.normal(size=spec.embedding_dim)
    embeddings = WordEmbeddingTable.from_mapping(vectors)

    def draw_sentence():
        length = rng.randint(*spec.sentence_length)
        chars = [
            rng.choice(polyphones) if rng.random() < spec.polyphone_rate else rng.choice(alphabet)
            for _ in range(length)
        ]
        if not any(c in inventory for c in chars):
            chars[rng.randrange(length)] = rng.choice(polyphones)
        return "".join(chars)

    seen = set()
    total = spec.n_labeled + spec.n_unlabeled + spec.n_test
    budget = 50 * total + 1000

    def unique_sentences(count):
        nonlocal budget
        out = []
        while len(out) < count:
            if budget <= 0:
                raise GenerationError("could not draw enough distinct sentences")
            budget -= 1
            s = draw_sentence()
            if s not in seen:
                seen.add(s)
                out.append(s)
        return out

    def label(text):
        targets = []
        for pos, ch in enumerate(text):
            if ch in inventory:
                left = text[pos - 1] if pos > 0 else BOS
                targets.append((pos, inventory.class_id(ch, entries[ch][rules[(ch, left)]])))
        return LabeledExample(text, tuple(targets))

    labeled = [label(s) for s in unique_sentences(spec.n_labeled)]
    unlabeled = []
    for s in unique_sentences(spec.n_unlabeled):
        ex = scan_unlabeled(s, inventory)
        if ex is None:
            raise GenerationError(f"generated unlabeled sentence {s!r} is unusable")
        unlabeled.append(ex)
    test = [label(s) for s in unique_sentences(spec.n_test)]

    # rules are stored per class index inside each polyphone's candidate list
    global_rules = {k: inventory.class_id(k[0], entries[k[0]][v]) for k, v in rules.items()}
    return SyntheticTask(
        spec=spec,
        inventory=inventory,
        lexicon=lexicon,
        embeddings=embeddings,
        rules=global_rules,
        labeled=labeled,
        unlabeled=unlabeled,
        test=test,
        alphabet=alphabet,
    )
