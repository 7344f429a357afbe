"""System-level evaluation: ACC, self-/ref-BLEU and PPL in one report."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

from ..data import Sentence, StyleCorpus, strip
from .bleu import corpus_bleu
from .classifier import StyleClassifier
from .lm import NgramLM, perplexity

# (sentences, target styles) -> transferred sentences, all in BOS ... EOS form
TransferFn = Callable[[Sequence[Sentence], Sequence[int]], list[Sentence]]


@dataclass
class EvalReport:
    accuracy: float
    self_bleu: float
    perplexity: float
    ref_bleu: float | None = None
    count: int = 0
    extra: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 100.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 100]")
        for name in ("self_bleu", "ref_bleu"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 100.0 + 1e-9:
                raise ValueError(f"{name} {v} outside [0, 100]")
        if not self.perplexity >= 1.0 - 1e-12:
            raise ValueError(f"perplexity {self.perplexity} below 1")

    def as_dict(self) -> dict:
        d = asdict(self)
        extra = d.pop("extra")
        if d["ref_bleu"] is None:
            del d["ref_bleu"]
        d.update(extra)
        return d

    def to_text(self) -> str:
        """``key=value`` lines; floats with 4 decimals."""
        lines = []
        for k, v in self.as_dict().items():
            lines.append(f"{k}={v:.4f}" if isinstance(v, float) and math.isfinite(v) else f"{k}={v}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {k: (v if not (isinstance(v, float) and math.isinf(v)) else "inf") for k, v in self.as_dict().items()},
            sort_keys=True,
        )


def transfer_pairs(corpora: Sequence[StyleCorpus], split: str = "test") -> tuple[list[Sentence], list[int], list[int]]:
    """Every sentence paired with every other style as a target."""
    styles = [c.style for c in corpora]
    src, own, tgt = [], [], []
    for c in corpora:
        for t in styles:
            if t == c.style:
                continue
            for s in c.split(split):
                src.append(s)
                own.append(c.style)
                tgt.append(t)
    return src, own, tgt


def score_outputs(
    sources: Sequence[Sentence],
    outputs: Sequence[Sentence],
    targets: Sequence[int],
    classifier: StyleClassifier,
    lm: NgramLM,
    references: Sequence[Sequence[Sentence]] | None = None,
) -> EvalReport:
    if not (len(sources) == len(outputs) == len(targets)):
        raise ValueError("sources, outputs and targets must align")
    if not sources:
        raise ValueError("nothing to evaluate")
    outs = [strip(o) for o in outputs]
    acc = classifier.accuracy(outs, list(targets))
    self_bleu = corpus_bleu(outs, [[strip(s)] for s in sources])
    ref_bleu = None
    if references is not None:
        if len(references) != len(outputs):
            raise ValueError("need one reference list per output")
        ref_bleu = corpus_bleu(outs, [[strip(r) for r in refs] for refs in references])
    ppl = perplexity(lm, outs)
    return EvalReport(acc, self_bleu, ppl, ref_bleu, len(outs))


def evaluate_system(
    transfer: TransferFn,
    corpora: Sequence[StyleCorpus],
    classifier: StyleClassifier,
    lm: NgramLM,
    references: Mapping[Sentence, Sequence[Sentence]] | None = None,
    split: str = "test",
) -> tuple[EvalReport, list[Sentence]]:
    """Transfer every ``split`` sentence to each other style and score the outputs.

    ``references`` maps a source sentence to its human rewrites; if absent
    the report has no ref-BLEU.
    """
    src, _, tgt = transfer_pairs(corpora, split)
    outputs = transfer(src, tgt)
    refs = [references[s] for s in src] if references is not None else None
    return score_outputs(src, outputs, tgt, classifier, lm, refs), outputs


def copy_system(sentences: Sequence[Sentence], targets: Sequence[int]) -> list[Sentence]:
    """The Input-Copy baseline."""
    return list(sentences)
