import pytest
import torch

from enttune.model import Encoder, EncoderConfig
from enttune.tokenizer import SPECIAL_TOKENS, Tokenizer

torch.set_num_threads(1)

WORDS = [f"w{i}" for i in range(95)]


@pytest.fixture(scope="session")
def tokenizer():
    """100-entry vocabulary: five specials plus w0..w94."""
    return Tokenizer(list(SPECIAL_TOKENS) + WORDS)


@pytest.fixture
def tiny_model(tokenizer):
    torch.manual_seed(0)
    return Encoder(EncoderConfig.tiny(len(tokenizer), max_len=64), tokenizer)


SMALL_CONFIG = {
    "seed": 0,
    "paths": {"train": "train.jsonl", "dev": "dev.jsonl", "corpus": "corpus.jsonl", "nli": ["nli.jsonl"], "output_dir": "runs"},
    "model": {"hidden": 16, "layers": 1, "heads": 2, "ffn": 32, "dropout": 0.0, "max_len": 48},
    "tune": {"learning_rate": 1e-3, "warmup_steps": 2, "batch_size": 16, "epochs": 1},
    "finetune": {"learning_rate": 1e-3, "warmup_steps": 2, "batch_size": 8, "epochs": 1},
}


def write_small_world(directory, overrides=None, seed=0):
    """A small synthetic dataset plus config.yaml; returns the config path."""
    import copy

    import yaml

    from enttune.synthetic import make_world

    make_world(n_entities=8, n_nli_entities=4, seed=seed).write(directory)
    tree = copy.deepcopy(SMALL_CONFIG)
    for dotted, value in (overrides or {}).items():
        node = tree
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    path = directory / "config.yaml"
    path.write_text(yaml.safe_dump(tree))
    return path


@pytest.fixture
def small_config(tmp_path):
    return write_small_world(tmp_path)
