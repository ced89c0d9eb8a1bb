"""Perceptual face-similarity toolkit: Python bindings over the C++ core."""

import json as _json

from ._core import *  # noqa: F401,F403
from ._core import evaluate_json as _evaluate_json

__version__ = "0.1.0"


def evaluate(head, base, hard_triplets, easy_triplets=(), tasks=()):
    """Evaluation report as a dict (same keys as the CLI's report JSON)."""
    return _json.loads(_evaluate_json(head, base, list(hard_triplets), list(easy_triplets), list(tasks)))
