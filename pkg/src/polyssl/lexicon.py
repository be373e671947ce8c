"""Pronunciation inventory, word-to-pinyin dictionary and dictionary segmentation."""

from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import InconsistencyError, ParseError, ValidationError

Normalizer = Callable[[str], str]


def identity(text: str) -> str:
    return text


# Traditional->simplified or width folding can be plugged in here.
normalize_text: Normalizer = identity


def _lookup_key(word: str) -> str:
    return unicodedata.normalize("NFC", word.strip()).lower()


@dataclass(frozen=True)
class PolyphoneInventory:
    """Polyphonic characters and their candidate pronunciations.

    Pronunciation strings form one global class space: two characters that
    share a pinyin string share the class id for it.
    """

    entries: Mapping[str, Tuple[str, ...]]
    class_index: Mapping[Tuple[str, str], int]
    classes: Tuple[str, ...]

    @classmethod
    def from_entries(cls, entries: Mapping[str, Sequence[str]]) -> "PolyphoneInventory":
        frozen: Dict[str, Tuple[str, ...]] = {}
        pinyin_ids: Dict[str, int] = {}
        class_index: Dict[Tuple[str, str], int] = {}
        for char, pinyins in entries.items():
            if len(char) != 1:
                raise ValidationError(f"inventory key {char!r} is not a single character")
            pinyins = tuple(pinyins)
            if len(pinyins) < 2:
                raise ValidationError(f"{char!r} has fewer than 2 pronunciations")
            if len(set(pinyins)) != len(pinyins):
                raise ValidationError(f"{char!r} lists a pronunciation twice")
            frozen[char] = pinyins
            for p in pinyins:
                class_index[(char, p)] = pinyin_ids.setdefault(p, len(pinyin_ids))
        return cls(frozen, class_index, tuple(pinyin_ids))

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def __contains__(self, char: str) -> bool:
        return char in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def characters(self) -> List[str]:
        return list(self.entries)

    def candidate_classes(self, char: str) -> Tuple[int, ...]:
        return tuple(self.class_index[(char, p)] for p in self.entries[char])

    def class_id(self, char: str, pinyin: str) -> int:
        return self.class_index[(char, pinyin)]

    def pinyin(self, class_id: int) -> str:
        return self.classes[class_id]

    def fingerprint(self) -> str:
        blob = "\n".join(f"{c}\t{','.join(ps)}" for c, ps in sorted(self.entries.items()))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_tsv(self) -> str:
        return "".join(f"{c}\t{','.join(ps)}\n" for c, ps in self.entries.items())


def _data_lines(path) -> Iterable[Tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield line_no, line


def load_inventory(path) -> PolyphoneInventory:
    entries: Dict[str, List[str]] = {}
    for line_no, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1].strip():
            raise ParseError("expected 'char<TAB>pinyin1,pinyin2,...'", line_no)
        char = parts[0].strip()
        if len(char) != 1:
            raise ParseError(f"key {char!r} is not a single character", line_no)
        if char in entries:
            raise ValidationError(f"line {line_no}: duplicate character {char!r}")
        pinyins = [p.strip() for p in parts[1].split(",")]
        if any(not p for p in pinyins):
            raise ParseError("empty pronunciation", line_no)
        if len(pinyins) < 2:
            raise ValidationError(f"line {line_no}: {char!r} has fewer than 2 pronunciations")
        entries[char] = pinyins
    return PolyphoneInventory.from_entries(entries)


@dataclass(frozen=True)
class PronunciationLexicon:
    word_to_pinyin: Mapping[str, Tuple[str, ...]]
    max_word_len: int = 0

    @classmethod
    def from_entries(cls, entries: Mapping[str, Sequence[str]]) -> "PronunciationLexicon":
        table: Dict[str, Tuple[str, ...]] = {}
        for word, pinyins in entries.items():
            key = _lookup_key(word)
            pinyins = tuple(pinyins)
            if not key:
                raise ValidationError("empty lexicon word")
            if len(pinyins) != len(key):
                raise ValidationError(
                    f"{word!r}: {len(pinyins)} pronunciations for {len(key)} characters"
                )
            if key in table:
                raise ValidationError(f"duplicate lexicon word {word!r}")
            table[key] = pinyins
        return cls(table, max((len(w) for w in table), default=0))

    def lookup(self, word: str) -> Optional[Tuple[str, ...]]:
        return self.word_to_pinyin.get(_lookup_key(word))

    def __contains__(self, word: str) -> bool:
        return _lookup_key(word) in self.word_to_pinyin

    def __len__(self) -> int:
        return len(self.word_to_pinyin)

    def to_tsv(self) -> str:
        return "".join(f"{w}\t{' '.join(ps)}\n" for w, ps in self.word_to_pinyin.items())


def load_lexicon(path) -> PronunciationLexicon:
    entries: Dict[str, Tuple[str, ...]] = {}
    for line_no, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError("expected 'word<TAB>pinyin pinyin ...'", line_no)
        word, pinyins = parts[0].strip(), tuple(parts[1].split())
        key = _lookup_key(word)
        if not key:
            raise ParseError("empty word", line_no)
        if key in entries:
            raise ValidationError(f"line {line_no}: duplicate word {word!r}")
        if len(pinyins) != len(key):
            raise ValidationError(
                f"line {line_no}: {len(pinyins)} pronunciations for {len(key)} characters"
            )
        entries[key] = pinyins
    return PronunciationLexicon.from_entries(entries)


@dataclass(frozen=True)
class Segmentation:
    """Word spans as half-open ``(start, end)`` character offsets."""

    words: Tuple[Tuple[int, int], ...]
    _starts: Tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_starts", tuple(s for s, _ in self.words))

    def __len__(self) -> int:
        return len(self.words)

    def word_index(self, pos: int) -> int:
        """Index of the word covering character ``pos``."""
        from bisect import bisect_right

        i = bisect_right(self._starts, pos) - 1
        if i < 0 or not (self.words[i][0] <= pos < self.words[i][1]):
            raise ValueError(f"position {pos} is not covered by the segmentation")
        return i

    def pieces(self, text: str) -> List[str]:
        return [text[s:e] for s, e in self.words]


Segmenter = Callable[[str], Segmentation]


def segment(text: str, lexicon: PronunciationLexicon) -> Segmentation:
    """Forward maximum matching: take the longest lexicon word at each offset."""
    if not text:
        raise ValueError("cannot segment empty text")
    spans = []
    i, n = 0, len(text)
    longest = max(lexicon.max_word_len, 1)
    while i < n:
        step = 1
        for size in range(min(longest, n - i), 1, -1):
            if text[i:i + size] in lexicon:
                step = size
                break
        spans.append((i, i + step))
        i += step
    return Segmentation(tuple(spans))


def make_segmenter(lexicon: PronunciationLexicon) -> Segmenter:
    return lambda text: segment(text, lexicon)


def resolve_mcw(
    text: str,
    seg: Segmentation,
    pos: int,
    lexicon: PronunciationLexicon,
    inventory: PolyphoneInventory,
) -> Optional[int]:
    """Class id fixed by the dictionary for a polyphone inside a multi-character word.

    Returns None for single-character words and words missing from the lexicon.
    """
    if not 0 <= pos < len(text):
        raise ValueError(f"position {pos} out of range for text of length {len(text)}")
    char = text[pos]
    if char not in inventory:
        raise ValueError(f"{char!r} at {pos} is not a polyphonic character")
    start, end = seg.words[seg.word_index(pos)]
    if end - start < 2:
        return None
    pinyins = lexicon.lookup(text[start:end])
    if pinyins is None:
        return None
    pinyin = pinyins[pos - start]
    if pinyin not in inventory.entries[char]:
        raise InconsistencyError(
            f"lexicon gives {pinyin!r} for {char!r} in {text[start:end]!r}, "
            f"not one of {inventory.entries[char]}"
        )
    return inventory.class_id(char, pinyin)
