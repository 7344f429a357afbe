"""Run-level plumbing shared by the CLI and the acceptance tests.

A run directory holds ``config.cfg`` (the effective configuration),
``log.jsonl`` (one record per iteration, wall-clock free),
``checkpoint.stfm`` (latest state, written at every evaluation) and
``best.stfm`` (best dev score so far).
"""

from __future__ import annotations

import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from .config import ABLATIONS, ConfigError, RunConfig
from .data import (
    Sentence,
    StyleCorpus,
    SyntheticTask,
    SyntheticTaskSpec,
    Vocabulary,
    build_vocab,
    generate_synthetic,
    load_corpus,
    read_token_lines,
    write_corpus,
)
from .evaluation import EvalReport, fit_evaluators, score_outputs, transfer_pairs
from .evaluation.synthetic import oracle_metrics
from .generator import StyleTransformer
from .training import Trainer, deterministic_view

SYNTHETIC_SPEC_FILE = "synthetic.cfg"


@dataclass
class Dataset:
    vocab: Vocabulary
    corpora: list[StyleCorpus]
    task: SyntheticTask | None = None


def thread_count() -> int:
    raw = os.environ.get("STFM_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"STFM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"STFM_THREADS must be a positive integer, got {raw!r}")
    return n


# ---------------------------------------------------------------------------
# data


def synthetic_spec(cfg: RunConfig) -> SyntheticTaskSpec:
    return SyntheticTaskSpec(
        seed=cfg.synthetic_seed,
        train_size=cfg.synthetic_train,
        dev_size=cfg.synthetic_dev,
        test_size=cfg.synthetic_test,
        style_names=tuple(cfg.styles),
    )


def write_synthetic(spec: SyntheticTaskSpec, out_dir: str | Path) -> SyntheticTask:
    """Write corpus files plus a spec file that lets oracle metrics be rebuilt."""
    task = generate_synthetic(spec)
    out = Path(out_dir)
    for c in task.corpora:
        write_corpus(out, c, task.vocab)
    lines = [
        f"synthetic_seed = {spec.seed}",
        f"synthetic_train = {spec.train_size}",
        f"synthetic_dev = {spec.dev_size}",
        f"synthetic_test = {spec.test_size}",
        f"styles = {','.join(spec.style_names)}",
    ]
    (out / SYNTHETIC_SPEC_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return task


def _synthetic_from_dir(cfg: RunConfig) -> SyntheticTask | None:
    """The task behind a directory written by :func:`write_synthetic`, if the files are unedited."""
    path = Path(cfg.data_dir) / SYNTHETIC_SPEC_FILE
    if not path.exists() or cfg.file_pattern != "{style}.{split}.txt":
        return None
    from .config import parse

    spec_cfg = parse(path.read_text(encoding="utf-8") + "synthetic = true\n", str(path))
    task = generate_synthetic(synthetic_spec(spec_cfg))
    for c in task.corpora:
        if c.name not in cfg.styles:
            return None
        for split in ("train", "dev", "test"):
            f = Path(cfg.data_dir) / f"{c.name}.{split}.txt"
            if not f.exists() or [task.vocab.encode(t) for t in read_token_lines(f)] != c.split(split):
                return None
    order = {c.name: c for c in task.corpora}
    task.corpora = [
        StyleCorpus(i + 1, n, order[n].train, order[n].dev, order[n].test) for i, n in enumerate(cfg.styles)
    ]
    return task


def prepare_data(cfg: RunConfig, vocab: Vocabulary | None = None) -> Dataset:
    """Corpora for every configured style, StyleIds following ``cfg.styles``."""
    if cfg.synthetic:
        task = generate_synthetic(synthetic_spec(cfg))
        return Dataset(task.vocab, task.corpora, task)
    root = Path(cfg.data_dir)
    if not root.is_dir():
        raise ConfigError(f"data_dir: {root} is not a directory")
    task = _synthetic_from_dir(cfg)
    if task is not None and (vocab is None or vocab == task.vocab):
        return Dataset(task.vocab, task.corpora, task)
    if vocab is None:
        train_files = [root / cfg.file_pattern.format(style=s, split="train") for s in cfg.styles]
        for f in train_files:
            if not f.exists():
                raise ConfigError(f"missing train file {f}")
        vocab = build_vocab([read_token_lines(f) for f in train_files], cfg.min_freq)
    corpora = [load_corpus(root, s, i + 1, vocab, cfg.max_len, cfg.file_pattern) for i, s in enumerate(cfg.styles)]
    return Dataset(vocab, corpora)


# ---------------------------------------------------------------------------
# transfer and evaluation


def batched_transfer(
    gen: StyleTransformer, sentences: Sequence[Sentence], targets: Sequence[int], batch_size: int = 64
) -> list[Sentence]:
    """Greedy transfer in length-sorted batches, spread over ``STFM_THREADS`` threads.

    Batches are independent, so the output does not depend on the thread count.
    """
    if len(sentences) != len(targets):
        raise ValueError("need one target style per sentence")
    if not sentences:
        return []
    order = sorted(range(len(sentences)), key=lambda i: (len(sentences[i]), i))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    tg = np.asarray(targets, dtype=np.int64)

    def run(idx: list[int]) -> list[Sentence]:
        return gen.transfer_greedy([sentences[i] for i in idx], tg[idx])

    threads = thread_count()
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    out: list[Sentence | None] = [None] * len(sentences)
    for idx, res in zip(chunks, results):
        for i, s in zip(idx, res):
            out[i] = s
    return out  # type: ignore[return-value]


def selection_score(metrics: dict) -> float:
    """Geometric mean of accuracy and self-BLEU, used to pick the best checkpoint."""
    return math.sqrt(max(metrics["acc"], 0.0) * max(metrics["self_bleu"], 0.0))


class DevEvaluator:
    """Dev-split metrics logged during training; same code path as the final report."""

    def __init__(self, data: Dataset, cfg: RunConfig):
        self.data = data
        self.classifier, self.lm = fit_evaluators(data.corpora, cfg.lm_order)
        limited = [StyleCorpus(c.style, c.name, dev=c.dev[: cfg.eval_size]) for c in data.corpora]
        if not all(c.dev for c in limited):
            raise ConfigError("every style needs a nonempty dev split for evaluation during training")
        self.sources, _, self.targets = transfer_pairs(limited, "dev")

    def __call__(self, trainer: Trainer) -> dict:
        outputs = batched_transfer(trainer.gen, self.sources, self.targets)
        return report_metrics(self.report(outputs))

    def report(self, outputs: Sequence[Sentence]) -> EvalReport:
        return full_report(self.data, self.sources, outputs, self.targets, self.classifier, self.lm)


def full_report(data: Dataset, sources, outputs, targets, classifier, lm, references=None) -> EvalReport:
    rep = score_outputs(sources, outputs, targets, classifier, lm, references)
    if data.task is not None:
        rep.extra.update(oracle_metrics(data.task, sources, outputs, targets))
    return rep


def report_metrics(rep: EvalReport) -> dict:
    out = {"acc": rep.accuracy, "self_bleu": rep.self_bleu, "ppl": rep.perplexity}
    out.update(rep.extra)
    return {k: round(float(v), 6) for k, v in out.items()}


# ---------------------------------------------------------------------------
# training runs


def _meta_extra(cfg: RunConfig, data: Dataset, best: float | None) -> dict:
    return {"vocab": data.vocab.itos[4:], "styles": list(cfg.styles), "run": cfg.to_dict(), "best_score": best}


def _write_log(path: Path, records: Sequence[dict]) -> None:
    with path.open("w", encoding="utf-8") as f:
        for r in deterministic_view(records):
            f.write(json.dumps(r, sort_keys=True) + "\n")


def train_run(
    cfg: RunConfig,
    out_dir: str | Path,
    resume: str | Path | None = None,
    progress: Callable[[str], None] | None = None,
    data: Dataset | None = None,
) -> tuple[Trainer, Dataset]:
    """Train (or resume) a run, writing log, latest and best checkpoints to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    best: float | None = None
    if resume is not None:
        meta, _ = checkpoint.read(resume)
        vocab = Vocabulary(meta.get("extra", {}).get("vocab", []))
        data = prepare_data(cfg, vocab) if data is None else data
        trainer, meta = checkpoint.load_trainer(resume, data.corpora)
        best = meta.get("extra", {}).get("best_score")
        log_path = out / "log.jsonl"
        previous = []
        if log_path.exists():
            previous = [json.loads(line) for line in log_path.read_text(encoding="utf-8").splitlines() if line]
        trainer.log = [r for r in previous if r["iteration"] <= trainer.iteration]
        trainer.cfg.max_iters = cfg.training.max_iters
    else:
        data = prepare_data(cfg) if data is None else data
        trainer = Trainer(cfg.model_config(len(data.vocab)), cfg.training, data.corpora)
    (out / "config.cfg").write_text(cfg.dumps(), encoding="utf-8")
    evaluator = DevEvaluator(data, cfg)
    log_path = out / "log.jsonl"
    _write_log(log_path, trainer.log)

    def on_eval(tr: Trainer, metrics: dict) -> None:
        nonlocal best
        score = selection_score(metrics)
        if best is None or score > best:
            best = score
            checkpoint.save_trainer(out / "best.stfm", tr, _meta_extra(cfg, data, best))
        checkpoint.save_trainer(out / "checkpoint.stfm", tr, _meta_extra(cfg, data, best))
        if progress is not None:
            shown = " ".join(f"{k}={v:.2f}" for k, v in metrics.items())
            progress(f"iter {tr.iteration}: {shown}")

    def on_record(rec: dict) -> None:
        with log_path.open("a", encoding="utf-8") as f:
            f.write(json.dumps({k: v for k, v in rec.items() if k != "seconds"}, sort_keys=True) + "\n")

    trainer.train(cfg.training.max_iters, evaluator, on_record=on_record, on_eval=on_eval)
    checkpoint.save_trainer(out / "checkpoint.stfm", trainer, _meta_extra(cfg, data, best))
    return trainer, data


def load_for_inference(path: str | Path) -> tuple[StyleTransformer, Vocabulary, list[str], dict]:
    gen, meta = checkpoint.load_generator(path)
    extra = meta.get("extra", {})
    if "vocab" not in extra or "styles" not in extra:
        raise checkpoint.CheckpointError("checkpoint carries no vocabulary or style names")
    vocab = Vocabulary(extra["vocab"])
    if len(vocab) != gen.cfg.vocab_size:
        raise checkpoint.CheckpointError("checkpoint vocabulary does not match the model size")
    return gen, vocab, list(extra["styles"]), meta


def evaluate_generator(
    gen: StyleTransformer, data: Dataset, cfg: RunConfig, split: str = "test"
) -> tuple[EvalReport, list[Sentence], list[Sentence], list[int]]:
    classifier, lm = fit_evaluators(data.corpora, cfg.lm_order)
    if not all(c.split(split) for c in data.corpora):
        raise ConfigError(f"every style needs a nonempty {split} split")
    sources, _, targets = transfer_pairs(data.corpora, split)
    outputs = batched_transfer(gen, sources, targets)
    return full_report(data, sources, outputs, targets, classifier, lm), sources, outputs, targets


def evaluate_outputs(
    data: Dataset, cfg: RunConfig, sources: Sequence[Sentence], outputs: Sequence[Sentence], target: int
) -> EvalReport:
    classifier, lm = fit_evaluators(data.corpora, cfg.lm_order)
    return full_report(data, sources, outputs, [target] * len(sources), classifier, lm)


ABLATION_ROWS = ("full",) + ABLATIONS


def ablation_config(cfg: RunConfig, row: str) -> RunConfig:
    if row not in ABLATION_ROWS:
        raise ConfigError(f"unknown ablation row {row!r}; choose from {', '.join(ABLATION_ROWS)}")
    updates = {a: False for a in ABLATIONS}
    if row != "full":
        updates[row] = True
    return cfg.replace(**updates)


def run_ablations(
    cfg: RunConfig,
    out_dir: str | Path,
    rows: Sequence[str] = ABLATION_ROWS,
    progress: Callable[[str], None] | None = None,
) -> dict[str, EvalReport]:
    """Train one run per row and report each final model on the test split."""
    out = Path(out_dir)
    reports = {}
    data = prepare_data(cfg)
    for row in rows:
        row_cfg = ablation_config(cfg, row)
        if progress is not None:
            progress(f"== {row}")
        trainer, _ = train_run(row_cfg, out / row, progress=progress, data=data)
        rep, *_ = evaluate_generator(trainer.gen, data, row_cfg, "test")
        (out / row / "report.json").write_text(rep.to_json() + "\n", encoding="utf-8")
        reports[row] = rep
    lines = ["row\taccuracy\tself_bleu\tperplexity" + "".join(f"\t{k}" for k in sorted(next(iter(reports.values())).extra))]
    for row, rep in reports.items():
        extra = "".join(f"\t{rep.extra[k]:.2f}" for k in sorted(rep.extra))
        lines.append(f"{row}\t{rep.accuracy:.2f}\t{rep.self_bleu:.2f}\t{rep.perplexity:.2f}{extra}")
    (out / "ablation.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return reports


def stderr_progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


__all__ = [
    "ABLATION_ROWS",
    "Dataset",
    "DevEvaluator",
    "batched_transfer",
    "evaluate_generator",
    "evaluate_outputs",
    "load_for_inference",
    "prepare_data",
    "run_ablations",
    "train_run",
    "write_synthetic",
]
