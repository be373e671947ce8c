"""Classification and consistency losses.

Distribution arguments are probability tensors whose last axis is the global
class space; leading axes are averaged over. ``PronunciationDistribution``
objects are accepted too and are checked for matching candidate sets.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F

from .errors import ConfigError
from .model import PronunciationDistribution

LOG_FLOOR = 1e-12


class ConsistencyKind(str, enum.Enum):
    MSE = "mse"
    JS = "js"
    CE = "ce"


@dataclass(frozen=True)
class LossWeights:
    w_cls: float = 1.0
    w_consis: float = 0.008

    def __post_init__(self):
        for name in ("w_cls", "w_consis"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and nonnegative, got {v}")


def _tensor(x) -> torch.Tensor:
    if isinstance(x, PronunciationDistribution):
        x = x.probs
    if isinstance(x, np.ndarray):
        return torch.from_numpy(x)
    return torch.as_tensor(x, dtype=torch.get_default_dtype()) if not isinstance(x, torch.Tensor) else x


def _hidden(x) -> torch.Tensor:
    if isinstance(x, PronunciationDistribution):
        x = x.hidden
    return _tensor(x)


def _pair(p, q):
    if isinstance(p, PronunciationDistribution) and isinstance(q, PronunciationDistribution):
        if tuple(p.candidates) != tuple(q.candidates):
            raise ValueError("distributions have different candidate sets")
    p, q = _tensor(p), _tensor(q)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {tuple(p.shape)} vs {tuple(q.shape)}")
    return p, q


def _safe_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x.clamp_min(torch.finfo(x.dtype).tiny))


def classification_loss(probs, label) -> torch.Tensor:
    """Mean of -log probs[label] over all leading axes."""
    if isinstance(probs, PronunciationDistribution):
        if int(label) not in probs.candidates:
            raise ValueError(f"label {label} is not a candidate of {probs.character!r}")
    p = _tensor(probs)
    labels = torch.as_tensor(label, dtype=torch.long)
    picked = p.gather(-1, labels.reshape(*p.shape[:-1], 1)).squeeze(-1)
    if torch.any(picked <= 0):
        raise ValueError("label has zero probability (outside the candidate set)")
    return -torch.log(picked).mean()


def cross_entropy_from_logits(logits: torch.Tensor, labels: torch.Tensor, allowed=None) -> torch.Tensor:
    """Numerically stable form of ``classification_loss`` on masked logits."""
    if allowed is not None:
        ok = allowed.gather(-1, labels.unsqueeze(-1)).all()
        if not ok:
            raise ValueError("label outside the candidate set")
    return F.cross_entropy(logits, labels)


def consistency_mse(h1, h2) -> torch.Tensor:
    h1, h2 = _hidden(h1), _hidden(h2)
    if h1.shape != h2.shape:
        raise ValueError(f"hidden shapes differ: {tuple(h1.shape)} vs {tuple(h2.shape)}")
    return ((h1 - h2) ** 2).mean()


def _kl(p: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    # 0 * log(0 / x) contributes 0 and a zero gradient
    return (p * (_safe_log(p) - _safe_log(m))).sum(-1)


def consistency_js(p, q) -> torch.Tensor:
    """Jensen-Shannon divergence in nats, bounded by ln 2."""
    p, q = _pair(p, q)
    m = 0.5 * (p + q)
    return (0.5 * _kl(p, m) + 0.5 * _kl(q, m)).mean()


def _soft_ce(target: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    return -(target * torch.log(pred.clamp_min(LOG_FLOOR))).sum(-1)


def consistency_ce(p_target, q) -> torch.Tensor:
    """Symmetrised soft cross-entropy; each view's target side is detached."""
    p, q = _pair(p_target, q)
    return (0.5 * (_soft_ce(p.detach(), q) + _soft_ce(q.detach(), p))).mean()


def consistency_loss(kind, logits1, hidden1, logits2, hidden2) -> torch.Tensor:
    kind = ConsistencyKind(kind)
    if kind is ConsistencyKind.MSE:
        return consistency_mse(hidden1, hidden2)
    p, q = torch.softmax(logits1, -1), torch.softmax(logits2, -1)
    if kind is ConsistencyKind.JS:
        return consistency_js(p, q)
    return consistency_ce(p, q)


def total_loss(weights: LossWeights, cls, consis=None) -> torch.Tensor:
    loss = weights.w_cls * cls
    if consis is not None:
        loss = loss + weights.w_consis * consis
    return loss
