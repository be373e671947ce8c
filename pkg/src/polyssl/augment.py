"""Target-preserving text augmentations used for consistency training.

Every policy takes one or more target offsets. With several targets the
protected region is the union of their safe zones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, GateError
from .lexicon import Segmentation, Segmenter

Positions = Union[int, Sequence[int]]

NAIVE, NGRAM, REPLACE = "naive", "ngram", "replace"
POLICIES = (NAIVE, NGRAM, REPLACE)


@dataclass(frozen=True)
class AugmentedText:
    text: str
    target_positions: Tuple[int, ...]
    policy: str

    @property
    def target_pos(self) -> int:
        return self.target_positions[0]


@dataclass(frozen=True)
class SafeZoneConfig:
    n: int = 2
    word_safe_radius: int = 1

    def __post_init__(self):
        if self.n < 0 or self.word_safe_radius < 0:
            raise ConfigError("safe-zone radii must be nonnegative")


class WordEmbeddingTable:
    """Word vectors with cosine nearest-neighbour lookup."""

    def __init__(self, words: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if not len(words):
            raise ConfigError("embedding table is empty")
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise ConfigError("embedding vectors must form a (words, dim) matrix")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0):
            raise ConfigError("embedding table contains a zero vector")
        if len(set(words)) != len(words):
            raise ConfigError("embedding table lists a word twice")
        self.words = list(words)
        self.vectors = vectors
        self._unit = vectors / norms[:, None]
        self._index = {w: i for i, w in enumerate(self.words)}
        self._neighbours: Dict[str, Optional[str]] = {}

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[float]]) -> "WordEmbeddingTable":
        words = list(mapping)
        return cls(words, np.array([mapping[w] for w in words], dtype=np.float64))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def nearest(self, word: str) -> Optional[str]:
        """Most cosine-similar other word; ties go to the lexicographically smallest."""
        if word in self._neighbours:
            return self._neighbours[word]
        i = self._index.get(word)
        if i is None or len(self.words) < 2:
            best = None
        else:
            sims = self._unit @ self._unit[i]
            sims[i] = -np.inf
            top = sims.max()
            best = min(w for w, s in zip(self.words, sims) if s == top)
        self._neighbours[word] = best
        return best

    def to_text(self) -> str:
        return "".join(
            w + " " + " ".join(repr(float(x)) for x in v) + "\n"
            for w, v in zip(self.words, self.vectors)
        )


def load_embeddings(path) -> WordEmbeddingTable:
    words, rows = [], []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            # word2vec text files may start with a "<count> <dim>" header
            if line_no == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            try:
                vec = [float(x) for x in parts[1:]]
            except ValueError:
                raise ConfigError(f"{path}:{line_no}: non-numeric vector component") from None
            if dim is None:
                dim = len(vec)
            if not vec or len(vec) != dim:
                raise ConfigError(f"{path}:{line_no}: expected {dim} components")
            words.append(parts[0])
            rows.append(vec)
    if not words:
        raise ConfigError(f"{path}: embedding table is empty")
    return WordEmbeddingTable(words, np.array(rows))


def _positions(text: str, pos: Positions) -> Tuple[int, ...]:
    positions = (pos,) if isinstance(pos, (int, np.integer)) else tuple(pos)
    if not positions:
        raise ValueError("at least one target position is required")
    for p in positions:
        if not 0 <= p < len(text):
            raise ValueError(f"target position {p} out of range for length {len(text)}")
    return tuple(int(p) for p in positions)


def naive_truncation(text: str, pos: Positions, cfg: SafeZoneConfig, rng) -> AugmentedText:
    """Keep a random contiguous window that contains the n-character safe zone."""
    positions = _positions(text, pos)
    lo = max(0, min(positions) - cfg.n)
    hi = min(len(text) - 1, max(positions) + cfg.n)
    n_b = rng.randint(0, lo)
    n_f = rng.randint(0, len(text) - 1 - hi)
    start, stop = lo - n_b, hi + n_f + 1
    return AugmentedText(text[start:stop], tuple(p - start for p in positions), NAIVE)


def ngram_truncation(text: str, pos: Positions, seg: Segmentation, rng) -> AugmentedText:
    """Keep the word(s) holding the targets plus k random neighbouring words.

    k is drawn from [1, available] when the core is a lone one-character
    word and from [0, available] otherwise; k is split between the two sides
    uniformly over the feasible splits.
    """
    positions = _positions(text, pos)
    first = seg.word_index(min(positions))
    last = seg.word_index(max(positions))
    left_avail, right_avail = first, len(seg) - 1 - last
    available = left_avail + right_avail
    start0, end0 = seg.words[first][0], seg.words[last][1]
    single_char_core = first == last and end0 - start0 == 1
    k_min = 1 if single_char_core and available > 0 else 0
    k = rng.randint(k_min, available)
    k_left = rng.randint(max(0, k - right_avail), min(k, left_avail))
    k_right = k - k_left
    start = seg.words[first - k_left][0]
    stop = seg.words[last + k_right][1]
    return AugmentedText(text[start:stop], tuple(p - start for p in positions), NGRAM)


def protected_words(seg: Segmentation, positions: Sequence[int], radius: int) -> set:
    protected = set()
    for p in positions:
        w = seg.word_index(p)
        protected.update(range(max(0, w - radius), min(len(seg), w + radius + 1)))
    return protected


def similar_word_replacement(
    text: str,
    pos: Positions,
    seg: Segmentation,
    table: WordEmbeddingTable,
    cfg: SafeZoneConfig,
    rng,
) -> AugmentedText:
    """Swap each word outside the word safe zone for its nearest neighbour with probability 1/2."""
    if table is None or len(table) == 0:
        raise ConfigError("similar-word replacement needs a nonempty embedding table")
    positions = _positions(text, pos)
    safe = protected_words(seg, positions, cfg.word_safe_radius)
    pieces: List[str] = []
    shift: Dict[int, int] = {}
    out_len = 0
    for i, (s, e) in enumerate(seg.words):
        word = text[s:e]
        if i not in safe and rng.random() < 0.5:
            word = table.nearest(word) or word
        shift[i] = out_len - s
        pieces.append(word)
        out_len += len(word)
    new_positions = tuple(p + shift[seg.word_index(p)] for p in positions)
    return AugmentedText("".join(pieces), new_positions, REPLACE)


@dataclass
class AugmentDeps:
    segmenter: Segmenter
    table: WordEmbeddingTable
    cfg: SafeZoneConfig = SafeZoneConfig()


def sample_augmentation(text: str, pos: Positions, deps: AugmentDeps, rng) -> AugmentedText:
    """Apply one of the three policies, each chosen with probability 1/3."""
    if len(text) <= 3:
        raise GateError(f"text of length {len(text)} is too short to augment")
    policy = POLICIES[rng.randrange(3)]
    if policy == NAIVE:
        return naive_truncation(text, pos, deps.cfg, rng)
    seg = deps.segmenter(text)
    if policy == NGRAM:
        return ngram_truncation(text, pos, seg, rng)
    return similar_word_replacement(text, pos, seg, deps.table, deps.cfg, rng)
