"""Shared fixtures: a tiny encoder, a tiny corpus and one short training run."""

import numpy as np
import pytest

from srl_ood import config as settings
from srl_ood.data_io import CorpusSpec, Vocabulary, gen_corpus
from srl_ood.model.checkpoint import Checkpoint
from srl_ood.model.encoder import EncoderConfig, init_params
from srl_ood.pipeline import TrainConfig, train


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or settings.RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow or SRLOOD_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


TINY_ENCODER = EncoderConfig(d_model=8, backbone_layers=1, head_layers=1, heads=2, ffn_mult=2, max_seq_len=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_encoder_config():
    return TINY_ENCODER.model_copy(update={"vocab_size": 12})


@pytest.fixture
def tiny_params(tiny_encoder_config):
    return init_params(tiny_encoder_config, num_classes=3)


@pytest.fixture(scope="session")
def tiny_spec():
    return CorpusSpec(
        num_classes=2,
        train=24,
        val=12,
        test_id=16,
        test_ood=16,
        agents_per_class=3,
        verbs_per_class=3,
        patients_per_class=3,
        ood_lexicon_size=3,
        seed=3,
    )


@pytest.fixture(scope="session")
def tiny_corpus(tiny_spec):
    return gen_corpus(tiny_spec)


@pytest.fixture(scope="session")
def tiny_train_config():
    return TrainConfig(encoder=TINY_ENCODER, epochs=2, batch_size=6, lr=3e-3)


@pytest.fixture(scope="session")
def trained(tiny_train_config, tiny_corpus):
    return train(tiny_train_config, tiny_corpus)


@pytest.fixture(scope="session")
def untrained_checkpoint(tiny_corpus):
    vocab = Vocabulary.build(tiny_corpus.train + tiny_corpus.val, tiny_corpus.lexicon.words())
    params = init_params(TINY_ENCODER.model_copy(update={"vocab_size": len(vocab)}), tiny_corpus.num_classes)
    return Checkpoint.from_params(params, vocab.tokens, step=0)
