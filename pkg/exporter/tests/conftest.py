import json
import os

import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")

WORDS = [
    "the", "music", "sound", "quality", "great", "bad", "cd", "mp3",
    "love", "boring", "album", "refund", "superb", "waste", "track", "band",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A small randomly initialized transformer checkpoint on disk.

    Fixed seed, so exported embeddings are reproducible across test runs
    without any network access.
    """
    import torch
    from transformers import DistilBertConfig, DistilBertModel, DistilBertTokenizerFast

    d = tmp_path_factory.mktemp("tinybert")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + WORDS
    (d / "vocab.txt").write_text("\n".join(vocab) + "\n")
    tok = DistilBertTokenizerFast(vocab_file=str(d / "vocab.txt"), do_lower_case=True)
    tok.save_pretrained(d)
    config = DistilBertConfig(
        vocab_size=len(vocab), dim=32, n_layers=1, n_heads=2,
        hidden_dim=64, max_position_embeddings=64,
    )
    torch.manual_seed(0)
    DistilBertModel(config).save_pretrained(d)
    return str(d)


@pytest.fixture()
def corpus_file(tmp_path):
    """100-document corpus in the texteffect JSONL schema."""
    import numpy as np

    rng = np.random.default_rng(7)
    path = tmp_path / "corpus.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(100):
            t = int(rng.random() < 0.5)
            words = ["great", "love", "superb"] if t else ["bad", "boring", "waste"]
            extra = [WORDS[int(v)] for v in rng.integers(0, len(WORDS), size=3)]
            obj = {
                "id": f"doc{i:03d}",
                "text": " ".join(words + extra),
                "c": int(rng.random() < 0.5),
                "t_proxy": t,
                "y": int(rng.random() < 0.3 + 0.4 * t),
            }
            fh.write(json.dumps(obj) + "\n")
    return path
