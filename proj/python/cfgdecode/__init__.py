"""Classifier-free guidance decoding over byte-level language models."""

import json

from ._core import (
    BOS,
    EOS,
    VOCAB_SIZE,
    Error,
    LanguageModel,
    NGramModel,
    TableModel,
    continuation_logprob,
    decode,
    encode,
    entropy,
    generate,
    guide,
    normalize,
    open_model,
    pass_at_k,
    score_tasks_jsonl,
    top_p_set,
)

__version__ = "0.1.0"


def score_tasks(model, tasks, **kwargs):
    """Score multiple-choice tasks given as dicts with prompt, choices, answer."""
    lines = "\n".join(json.dumps(t) for t in tasks)
    return json.loads(score_tasks_jsonl(model, lines, **kwargs))


__all__ = [
    "BOS",
    "EOS",
    "VOCAB_SIZE",
    "Error",
    "LanguageModel",
    "NGramModel",
    "TableModel",
    "continuation_logprob",
    "decode",
    "encode",
    "entropy",
    "generate",
    "guide",
    "normalize",
    "open_model",
    "pass_at_k",
    "score_tasks",
    "score_tasks_jsonl",
    "top_p_set",
]
