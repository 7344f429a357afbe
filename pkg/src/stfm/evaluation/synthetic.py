"""Oracle metrics that only exist for the synthetic lexicon task."""

from __future__ import annotations

from typing import Sequence

from ..data import Sentence, SyntheticTask, strip
from .bleu import corpus_bleu


def oracle_metrics(
    task: SyntheticTask, sources: Sequence[Sentence], outputs: Sequence[Sentence], targets: Sequence[int]
) -> dict[str, float]:
    """Lexicon-oracle accuracy, content preservation and BLEU against the oracle transfer.

    ``content`` counts outputs whose non-style tokens equal the source's
    exactly (same tokens, same order).
    """
    n = len(sources)
    if not n or len(outputs) != n or len(targets) != n:
        raise ValueError("sources, outputs and targets must be nonempty and aligned")
    acc = sum(task.oracle_style(o) == t for o, t in zip(outputs, targets))
    content = sum(task.content(o) == task.content(s) for o, s in zip(outputs, sources))
    oracle_bleu = corpus_bleu([strip(o) for o in outputs], [[strip(task.transfer_oracle(s))] for s in sources])
    return {"oracle_acc": 100.0 * acc / n, "content": 100.0 * content / n, "oracle_bleu": oracle_bleu}
