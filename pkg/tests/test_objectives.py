import math

import mpmath
import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from polyssl.errors import ConfigError
from polyssl.model import PronunciationDistribution
from polyssl.objectives import (
    LossWeights,
    classification_loss,
    consistency_ce,
    consistency_js,
    consistency_loss,
    consistency_mse,
    total_loss,
)

LN2 = math.log(2)
T = torch.tensor


def test_classification_examples():
    assert classification_loss(T([0.0, 1.0, 0.0]), 1).item() == 0.0
    assert abs(classification_loss(T([0.5, 0.5]), 0).item() - LN2) < 1e-7
    assert abs(classification_loss(T([0.9, 0.1], dtype=torch.float64), 0).item() - float(-mpmath.log(0.9))) < 1e-12
    assert abs(float(-mpmath.log(0.9)) - 0.10536) < 1e-5


def test_classification_rejects_non_candidate():
    with pytest.raises(ValueError):
        classification_loss(T([1.0, 0.0]), 1)
    d = PronunciationDistribution(np.array([0.3, 0.7, 0.0]), "X", np.zeros(2), (0, 1))
    with pytest.raises(ValueError):
        classification_loss(d, 2)


def test_mse_examples():
    assert consistency_mse(T([1.0, 0.0]), T([1.0, 0.0])).item() == 0
    assert consistency_mse(T([1.0, 0.0]), T([0.0, 1.0])).item() == 1.0
    with pytest.raises(ValueError):
        consistency_mse(T([1.0]), T([1.0, 2.0]))


def test_js_examples():
    assert abs(consistency_js(T([1.0, 0.0]), T([0.0, 1.0])).item() - LN2) < 1e-7
    assert consistency_js(T([0.3, 0.7]), T([0.3, 0.7])).item() == pytest.approx(0, abs=1e-9)


def test_ce_examples():
    one_hot = T([0.0, 1.0, 0.0], dtype=torch.float64)
    assert consistency_ce(one_hot, one_hot).item() <= 1e-11
    half = T([0.5, 0.5], dtype=torch.float64)
    assert abs(consistency_ce(half, half).item() - LN2) < 1e-12


def test_ce_monotone_along_mixing_path():
    p = T([0.7, 0.2, 0.1], dtype=torch.float64)
    far = T([0.05, 0.05, 0.9], dtype=torch.float64)
    values = []
    for a in np.linspace(0, 1, 101):
        q = (1 - a) * far + a * p
        # one-directional CE of q against the fixed target p
        values.append(-(p * torch.log(q)).sum().item())
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    sym = [consistency_ce(p, (1 - a) * far + a * p).item() for a in np.linspace(0, 1, 101)]
    assert sym[-1] < sym[0]


def _random_dists(rng, n, k):
    x = rng.gamma(0.5, size=(n, k))
    x[rng.random((n, k)) < 0.2] = 0
    x[np.arange(n), rng.integers(0, k, n)] += 0.1
    return x / x.sum(1, keepdims=True)


def _js_brute(p, q):
    total = mpmath.mpf(0)
    for pi, qi in zip(p, q):
        m = (mpmath.mpf(pi) + mpmath.mpf(qi)) / 2
        if pi > 0:
            total += mpmath.mpf(pi) * mpmath.log(mpmath.mpf(pi) / m) / 2
        if qi > 0:
            total += mpmath.mpf(qi) * mpmath.log(mpmath.mpf(qi) / m) / 2
    return float(total)


def test_random_pairs_properties():
    rng = np.random.default_rng(0)
    P, Q = _random_dists(rng, 1000, 5), _random_dists(rng, 1000, 5)
    for p, q in zip(P, Q):
        tp, tq = torch.from_numpy(p), torch.from_numpy(q)
        js = consistency_js(tp, tq).item()
        assert js == consistency_js(tq, tp).item()
        assert -1e-15 <= js <= LN2 + 1e-12
        assert abs(js - _js_brute(p, q)) < 1e-9
        assert consistency_ce(tp, tq).item() >= 0
        assert consistency_mse(tp, tq).item() >= 0
        assert consistency_js(tp, tp).item() <= 1e-9
        assert consistency_mse(tp, tp).item() == 0


def test_ce_is_detached_on_target_side():
    p = T([0.2, 0.8], requires_grad=True)
    q = T([0.6, 0.4], requires_grad=True)
    consistency_ce(p, q).backward()
    # each side only receives the gradient of its own prediction term
    assert torch.allclose(q.grad, -0.5 * p.detach() / q.detach())
    assert torch.allclose(p.grad, -0.5 * q.detach() / p.detach())


@given(st.floats(0, 10), st.floats(0.01, 100))
def test_total_loss_linear_in_consistency_weight(w, alpha):
    cls, con = T(0.7, dtype=torch.float64), T(0.3, dtype=torch.float64)
    base = total_loss(LossWeights(1.0, w), cls, con) - cls
    scaled = total_loss(LossWeights(1.0, alpha * w), cls, con) - cls
    assert scaled.item() == pytest.approx(alpha * base.item(), rel=1e-12, abs=1e-15)


def test_weights_validated():
    with pytest.raises(ConfigError):
        LossWeights(w_consis=-1)
    with pytest.raises(ConfigError):
        LossWeights(w_cls=float("nan"))


def test_dispatch():
    l1, l2 = torch.randn(3, 4), torch.randn(3, 4)
    h1, h2 = torch.randn(3, 2), torch.randn(3, 2)
    assert consistency_loss("mse", l1, h1, l2, h2) == consistency_mse(h1, h2)
    assert consistency_loss("js", l1, h1, l2, h2) == consistency_js(l1.softmax(-1), l2.softmax(-1))
    assert consistency_loss("ce", l1, h1, l2, h2) == consistency_ce(l1.softmax(-1), l2.softmax(-1))
    with pytest.raises(ValueError):
        consistency_loss("kl", l1, h1, l2, h2)


def test_mismatched_candidates_rejected():
    a = PronunciationDistribution(np.array([0.5, 0.5, 0.0]), "X", np.zeros(1), (0, 1))
    b = PronunciationDistribution(np.array([0.5, 0.0, 0.5]), "Y", np.zeros(1), (0, 2))
    with pytest.raises(ValueError):
        consistency_js(a, b)
