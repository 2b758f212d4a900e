"""Python bindings for the ultrag retrieval engine."""

import json

from ._ultrag import (
    ExecutionError,
    Graph,
    GroundTruthError,
    Linker,
    ParseError,
    betae_to_dsl,
    execute,
    gnn_flops,
    gt_query,
    hit_at_k,
    llm_flops,
    mrr,
    nesting_depth,
    normalize,
    query_class,
    rbf_probabilities,
    seppr,
    to_betae,
)
from . import _ultrag


def parse(text, format="dsl"):
    """Query tree as nested dicts."""
    return json.loads(_ultrag.query_json(text, format))


def run_pipeline(graph, question, replies, seeds=None, config=None, labels=None):
    """Answer one question with scripted model replies.

    Returns (answers, transcript) with the transcript as a dict.
    """
    answers, transcript = _ultrag.run_pipeline(
        graph, question, list(replies), seeds, json.dumps(config or {}), labels or {}
    )
    return answers, json.loads(transcript)


__all__ = [
    "ExecutionError", "Graph", "GroundTruthError", "Linker", "ParseError", "betae_to_dsl", "execute",
    "gnn_flops", "gt_query", "hit_at_k", "llm_flops", "mrr", "nesting_depth", "normalize", "parse",
    "query_class", "rbf_probabilities", "run_pipeline", "seppr", "to_betae",
]
