import pytest

from higen.config import DataConfig, HiGenConfig, LossWeights, ModelConfig, TrainConfig
from higen.data.corpus import stratified_split
from higen.data.synthetic import generate_pretraining_corpus, generate_synthetic
from higen.hierarchy.tokenizer import build_vocab


TINY_TRAIN = {"batch_size": 4, "lr": 1e-3, "epochs": 2, "pretrain_epochs": 2}


def tiny_config(**train) -> HiGenConfig:
    return HiGenConfig(
        seed=3,
        data=DataConfig(
            branching=[2, 2], docs_per_leaf=8, zipf_s=0.0, words_per_topic=6,
            background_words=20, doc_len_min=8, doc_len_max=12, pretrain_docs=40,
        ),
        model=ModelConfig(
            d_model=32, n_layers=1, n_decoder_layers=1, n_heads=2, ffn=64,
            proj_hidden=32, proj_dim=16, max_len=48,
        ),
        loss=LossWeights(),
        train=TrainConfig(**{**TINY_TRAIN, **train}),
    )


@pytest.fixture(scope="module")
def tiny():
    cfg = tiny_config()
    t, data = generate_synthetic(cfg.data, seed=cfg.seed)
    train, val, test = stratified_split(data, cfg.data.split, seed=cfg.seed)
    corpus = generate_pretraining_corpus(cfg.data, cfg.data.pretrain_docs, seed=cfg.seed)
    v = build_vocab([ex.doc for ex in train], t)
    return cfg, t, v, train, val, test, corpus


@pytest.fixture(scope="session")
def make_config():
    return tiny_config
