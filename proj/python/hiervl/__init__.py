"""Python bindings for the hiervl core."""

import json

from . import _hiervl
from ._hiervl import (
    HiervlError,
    average_precision,
    blob_hash,
    corpus_info,
    export_embeddings,
    gradcheck,
    ndcg,
    nce_grouped,
)

__all__ = [
    "HiervlError",
    "average_precision",
    "blob_hash",
    "corpus_info",
    "default_config",
    "evaluate",
    "export_embeddings",
    "generate",
    "gradcheck",
    "ndcg",
    "nce_grouped",
    "reproduce",
    "train",
]


def _dump(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else json.dumps(config)


def default_config():
    return json.loads(_hiervl.default_config())


def generate(out_dir, config=None):
    return _hiervl.generate(str(out_dir), _dump(config))


def train(corpus, out_dir, config=None):
    return _hiervl.train(str(corpus), str(out_dir), _dump(config))


def evaluate(checkpoint, corpus, train_corpus="", config=None):
    reports = _hiervl.evaluate(str(checkpoint), str(corpus), str(train_corpus), _dump(config))
    return [json.loads(r) for r in reports]


def reproduce(run_dir, config=None):
    return json.loads(_hiervl.reproduce(str(run_dir), _dump(config)))
