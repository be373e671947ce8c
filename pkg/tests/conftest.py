import random

import hypothesis
import pytest
import torch

from polyssl.augment import AugmentDeps, SafeZoneConfig, WordEmbeddingTable
from polyssl.corpus import SyntheticTaskSpec, generate_synthetic
from polyssl.lexicon import PolyphoneInventory, PronunciationLexicon, make_segmenter
from polyssl.model import CharVocab, ModelConfig, PolyphoneModel

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture
def inventory():
    return PolyphoneInventory.from_entries(
        {
            "和": ["hé", "hè", "huó", "huò", "hú"],
            "行": ["xíng", "háng"],
            "长": ["cháng", "zhǎng"],
            "得": ["de", "dé", "děi"],
        }
    )


@pytest.fixture
def lexicon():
    return PronunciationLexicon.from_entries(
        {
            "银行": ["yín", "háng"],
            "行走": ["xíng", "zǒu"],
            "和平": ["hé", "píng"],
            "长大": ["zhǎng", "dà"],
            "我们": ["wǒ", "men"],
            "觉得": ["jué", "de"],
            "北京": ["běi", "jīng"],
        }
    )


@pytest.fixture
def table():
    return WordEmbeddingTable.from_mapping(
        {
            "我们": [1.0, 0.1, 0.0],
            "你们": [0.9, 0.2, 0.0],
            "北京": [0.0, 1.0, 0.1],
            "上海": [0.1, 0.9, 0.0],
            "今天": [0.0, 0.0, 1.0],
            "明天": [0.1, 0.0, 0.9],
            "好": [0.5, 0.5, 0.5],
        }
    )


@pytest.fixture
def deps(lexicon, table):
    return AugmentDeps(make_segmenter(lexicon), table, SafeZoneConfig(n=2, word_safe_radius=1))


@pytest.fixture(scope="session")
def small_task():
    spec = SyntheticTaskSpec(
        alphabet_size=20, n_polyphones=3, n_labeled=60, n_unlabeled=120, n_test=40, seed=3
    )
    return generate_synthetic(spec)


def tiny_model(inventory, texts=(), dtype=torch.float32, seed=0, **kw):
    torch.manual_seed(seed)
    vocab = CharVocab.from_texts(list(texts) + list(inventory.entries))
    cfg = ModelConfig(char_emb=6, d_enc=6, hidden=5, **kw)
    return PolyphoneModel(cfg, inventory, vocab).to(dtype)


@pytest.fixture
def rng():
    return random.Random(1234)
