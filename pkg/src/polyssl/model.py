"""Character encoders and the Conv-BLSTM prediction network with a masked shared classifier."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .errors import ConfigError, DataError
from .lexicon import PolyphoneInventory

logger = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
CHECKPOINT_FORMAT = 1


class InventoryMismatchError(DataError):
    pass


class LengthError(ValueError):
    pass


class CharVocab:
    def __init__(self, chars: Iterable[str]):
        self.itos = [PAD, UNK] + sorted(set(chars) - {PAD, UNK})
        self.stoi = {c: i for i, c in enumerate(self.itos)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "CharVocab":
        chars = set()
        for t in texts:
            chars.update(t)
        return cls(chars)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, text: str) -> List[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(c, unk) for c in text]


@dataclass
class ModelConfig:
    encoder: str = "toy"
    char_emb: int = 64
    d_enc: int = 64
    hidden: int = 256
    kernel_size: int = 3
    max_len: int = 512
    electra_name: str = "hfl/chinese-electra-180g-small-discriminator"
    zero_init_classifier: bool = False

    def validate(self):
        if self.encoder not in ("toy", "electra"):
            raise ConfigError(f"unknown encoder kind {self.encoder!r}")
        if self.encoder == "toy" and self.d_enc % 2:
            raise ConfigError("toy encoder needs an even d_enc")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd for same-length padding")
        if min(self.char_emb, self.d_enc, self.hidden, self.max_len) < 1:
            raise ConfigError("model dimensions must be positive")

    @property
    def encoder_dim(self) -> int:
        return ELECTRA_TINY_DIM if self.encoder == "electra" else self.d_enc


ELECTRA_TINY_DIM = 256


@dataclass
class EncoderOutput:
    embeddings: torch.Tensor  # (T, d_enc)


def _run_packed(rnn: nn.LSTM, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
    out, _ = rnn(packed)
    out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.size(1))
    return out


class ToyEncoder(nn.Module):
    """Character embedding followed by one bidirectional LSTM."""

    def __init__(self, vocab_size: int, char_emb: int, d_enc: int):
        super().__init__()
        self.d_enc = d_enc
        self.embedding = nn.Embedding(vocab_size, char_emb, padding_idx=0)
        self.rnn = nn.LSTM(char_emb, d_enc // 2, batch_first=True, bidirectional=True)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        return _run_packed(self.rnn, self.embedding(ids), lengths)


class ElectraEncoder(nn.Module):
    """Adapter over a pre-trained ELECTRA discriminator, one vector per character.

    Needs ``transformers`` and a locally cached checkpoint; CJK vocabularies of
    the Chinese ELECTRA family are character-level, so every character maps to
    one token.
    """

    def __init__(self, name: str):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer

            self.tokenizer = AutoTokenizer.from_pretrained(name, local_files_only=True)
            self.backbone = AutoModel.from_pretrained(name, local_files_only=True)
        except Exception as exc:  # missing package or checkpoint
            raise ConfigError(f"cannot load pre-trained encoder {name!r}: {exc}") from exc
        self.d_enc = self.backbone.config.hidden_size

    def token_ids(self, text: str) -> List[int]:
        tok = self.tokenizer
        ids = tok.convert_tokens_to_ids(list(text))
        return [tok.cls_token_id] + [i if i is not None else tok.unk_token_id for i in ids] + [
            tok.sep_token_id
        ]

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        # ids already carry [CLS] ... [SEP]; strip them from the output
        mask = torch.arange(ids.size(1), device=ids.device)[None, :] < lengths[:, None]
        out = self.backbone(input_ids=ids, attention_mask=mask.long()).last_hidden_state
        return out[:, 1:-1]


class PredictionNet(nn.Module):
    """Conv1d -> 2x BLSTM -> [encoder || BLSTM] -> LN, Linear, GeLU -> LN, Linear."""

    def __init__(self, d_enc: int, hidden: int, num_classes: int, kernel_size: int = 3):
        super().__init__()
        self.conv = nn.Conv1d(d_enc, hidden, kernel_size, padding=kernel_size // 2)
        self.blstm = nn.LSTM(hidden, hidden, num_layers=2, batch_first=True, bidirectional=True)
        self.norm1 = nn.LayerNorm(d_enc + 2 * hidden)
        self.dense = nn.Linear(d_enc + 2 * hidden, hidden)
        self.norm2 = nn.LayerNorm(hidden)
        self.classifier = nn.Linear(hidden, num_classes)

    def sequence_features(self, enc: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        mask = (torch.arange(enc.size(1), device=enc.device)[None, :] < lengths[:, None])
        mask = mask.unsqueeze(-1).to(enc.dtype)
        enc = enc * mask
        conv = F.gelu(self.conv(enc.transpose(1, 2))).transpose(1, 2) * mask
        rec = _run_packed(self.blstm, conv, lengths)
        return torch.cat([enc, rec], dim=-1)

    def head(self, features: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        hidden = F.gelu(self.dense(self.norm1(features)))
        return self.classifier(self.norm2(hidden)), hidden


def masked_logits(logits: torch.Tensor, allowed) -> torch.Tensor:
    """Replace scores of impossible classes by the most negative finite value.

    ``allowed`` is a boolean mask broadcastable to ``logits`` or, for a 1-D
    logit vector, an iterable of class ids.
    """
    logits = torch.as_tensor(logits)
    if not logits.is_floating_point():
        logits = logits.to(torch.get_default_dtype())
    if not isinstance(allowed, torch.Tensor):
        ids = sorted(set(int(a) for a in allowed))
        if not ids:
            raise ValueError("allowed class set is empty")
        mask = torch.zeros(logits.shape[-1], dtype=torch.bool)
        mask[ids] = True
    else:
        mask = allowed.to(torch.bool)
        if not mask.any(dim=-1).all():
            raise ValueError("allowed class set is empty")
    floor = torch.finfo(logits.dtype).min
    return torch.where(mask, logits, torch.full_like(logits, floor))


@dataclass
class PronunciationDistribution:
    probs: np.ndarray
    character: str
    hidden: np.ndarray
    candidates: Tuple[int, ...] = ()

    def argmax(self) -> int:
        return int(np.argmax(self.probs))


@dataclass
class Batch:
    ids: torch.Tensor
    lengths: torch.Tensor
    rows: torch.Tensor  # sentence index of every target
    cols: torch.Tensor  # character offset of every target
    allowed: torch.Tensor  # (targets, classes) candidate mask


class PolyphoneModel(nn.Module):
    def __init__(self, cfg: ModelConfig, inventory: PolyphoneInventory, vocab: Optional[CharVocab]):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.inventory = inventory
        self.vocab = vocab
        if cfg.encoder == "toy":
            if vocab is None:
                raise ConfigError("toy encoder needs a character vocabulary")
            self.encoder = ToyEncoder(len(vocab), cfg.char_emb, cfg.d_enc)
        else:
            self.encoder = ElectraEncoder(cfg.electra_name)
        self.d_enc = self.encoder.d_enc
        self.net = PredictionNet(self.d_enc, cfg.hidden, inventory.num_classes, cfg.kernel_size)
        if cfg.zero_init_classifier:
            nn.init.zeros_(self.net.classifier.weight)
            nn.init.zeros_(self.net.classifier.bias)
        masks = torch.zeros(len(inventory), inventory.num_classes, dtype=torch.bool)
        self._char_row = {}
        for i, ch in enumerate(inventory.characters()):
            masks[i, list(inventory.candidate_classes(ch))] = True
            self._char_row[ch] = i
        self.register_buffer("candidate_masks", masks, persistent=False)

    def _ids(self, text: str) -> List[int]:
        if isinstance(self.encoder, ElectraEncoder):
            return self.encoder.token_ids(text)
        return self.vocab.encode(text)

    def make_batch(self, texts: Sequence[str], positions: Sequence[Sequence[int]]) -> Batch:
        rows, cols, chars = [], [], []
        seqs = []
        for r, (text, pos) in enumerate(zip(texts, positions)):
            if not text:
                raise LengthError("empty text")
            if len(text) > self.cfg.max_len:
                raise LengthError(f"text of length {len(text)} exceeds max_len {self.cfg.max_len}")
            for p in pos:
                if not 0 <= p < len(text) or text[p] not in self._char_row:
                    raise ValueError(f"position {p} of {text!r} is not a polyphonic character")
                rows.append(r)
                cols.append(p)
                chars.append(self._char_row[text[p]])
            seqs.append(self._ids(text))
        width = max(len(s) for s in seqs)
        ids = torch.zeros(len(seqs), width, dtype=torch.long)
        for r, s in enumerate(seqs):
            ids[r, : len(s)] = torch.tensor(s, dtype=torch.long)
        lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
        return Batch(
            ids=ids,
            lengths=lengths,
            rows=torch.tensor(rows, dtype=torch.long),
            cols=torch.tensor(cols, dtype=torch.long),
            allowed=self.candidate_masks[torch.tensor(chars, dtype=torch.long)]
            if chars
            else torch.zeros(0, self.inventory.num_classes, dtype=torch.bool),
        )

    def forward(self, batch: Batch) -> Tuple[torch.Tensor, torch.Tensor]:
        """Masked logits and pre-classifier hidden vectors, one row per target."""
        lengths = batch.lengths
        if isinstance(self.encoder, ElectraEncoder):
            lengths = lengths - 2
        enc = self.encoder(batch.ids, batch.lengths)
        feats = self.net.sequence_features(enc, lengths)
        logits, hidden = self.net.head(feats[batch.rows, batch.cols])
        return masked_logits(logits, batch.allowed), hidden

    def score(self, texts, positions) -> Tuple[torch.Tensor, torch.Tensor]:
        return self(self.make_batch(texts, positions))

    def encode(self, text: str) -> EncoderOutput:
        batch = self.make_batch([text], [[]])
        enc = self.encoder(batch.ids, batch.lengths)[0]
        return EncoderOutput(enc[: len(text)])


def predict(
    model: PolyphoneModel, text: str, target_positions: Sequence[int], inventory=None
) -> List[PronunciationDistribution]:
    return predict_many(model, [text], [target_positions])[0]


def predict_many(model, texts, positions, batch_size: int = 256):
    inventory = model.inventory
    out: List[List[PronunciationDistribution]] = [[] for _ in texts]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for start in range(0, len(texts), batch_size):
                chunk_t = texts[start:start + batch_size]
                chunk_p = positions[start:start + batch_size]
                batch = model.make_batch(chunk_t, chunk_p)
                if len(batch.rows) == 0:
                    continue
                logits, hidden = model(batch)
                probs = torch.softmax(logits.double(), dim=-1).numpy()
                hidden = hidden.double().numpy()
                for k, (r, c) in enumerate(zip(batch.rows.tolist(), batch.cols.tolist())):
                    ch = chunk_t[r][c]
                    out[start + r].append(
                        PronunciationDistribution(
                            probs[k], ch, hidden[k], inventory.candidate_classes(ch)
                        )
                    )
    finally:
        model.train(was_training)
    return out


def count_parameters(model: nn.Module) -> Tuple[int, Dict[str, int]]:
    def n(module):
        return sum(p.numel() for p in module.parameters())

    if isinstance(model, PolyphoneModel):
        net = model.net
        stages = {
            "encoder": n(model.encoder),
            "conv": n(net.conv),
            "blstm": n(net.blstm),
            "dense": n(net.norm1) + n(net.dense),
            "classifier": n(net.norm2) + n(net.classifier),
        }
    else:
        stages = {name: n(child) for name, child in model.named_children()}
    return n(model), stages


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, model: PolyphoneModel, extra: Optional[dict] = None):
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "model": asdict(model.cfg),
        "encoder_kind": model.cfg.encoder,
        "d_enc": model.d_enc,
        "num_classes": model.inventory.num_classes,
        "inventory_hash": model.inventory.fingerprint(),
        **(extra or {}),
    }
    payload = {
        "manifest": json.dumps(manifest, ensure_ascii=False, sort_keys=True),
        "inventory": {c: list(ps) for c, ps in model.inventory.entries.items()},
        "vocab": model.vocab.itos if model.vocab is not None else None,
        "state_dict": model.state_dict(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, inventory: Optional[PolyphoneInventory] = None):
    """Rebuild a model; refuses when ``inventory`` differs from the one it was trained on."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    manifest = json.loads(payload["manifest"])
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {manifest.get('format')}")
    stored = PolyphoneInventory.from_entries(payload["inventory"])
    if stored.fingerprint() != manifest["inventory_hash"]:
        raise InventoryMismatchError(f"{path}: stored inventory does not match its hash")
    if inventory is not None and inventory.fingerprint() != manifest["inventory_hash"]:
        raise InventoryMismatchError(f"{path}: checkpoint was trained on a different inventory")
    vocab = None
    if payload["vocab"] is not None:
        vocab = CharVocab(payload["vocab"][2:])
    cfg = ModelConfig(**manifest["model"])
    model = PolyphoneModel(cfg, stored, vocab)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, manifest
