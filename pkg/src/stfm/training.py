"""Losses and the alternating discriminator / generator optimisation.

One training iteration runs ``n_d`` discriminator updates followed by
``n_f`` generator updates. Every update draws a minibatch of ``batch_size``
sentences from each style corpus; the per-style minibatches are run through
the networks as one concatenated batch and the loss is the batch mean.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterator, Sequence

import numpy as np

from . import ops
from .data import BOS, EOS, Sentence, StyleCorpus
from .discriminator import CONDITIONAL, MULTICLASS, Discriminator, pad_soft
from .generator import SoftSentences, StyleTransformer
from .optim import Adam
from .tensor import Tape, Tensor, backward, no_grad
from .transformer import TransformerConfig


@dataclass
class TrainingConfig:
    n_d: int = 1
    n_f: int = 1
    w_self: float = 1.0
    w_cycle: float = 1.0
    w_style: float = 1.0
    word_dropout: float = 0.1
    temperature: float = 1.0
    temperature_decay: float = 1.0
    temperature_floor: float = 0.5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 0.0
    pretrain_iters: int = 0
    batch_size: int = 32
    max_iters: int = 1000
    eval_every: int = 100
    seed: int = 0
    variant: str = MULTICLASS
    disc_input: str = "soft"
    cycle_input: str = "soft"
    disable_self: bool = False
    disable_cycle: bool = False
    disable_style: bool = False
    disc_real_only: bool = False
    disc_generated_only: bool = False

    def __post_init__(self):
        if self.n_d < 1 or self.n_f < 1:
            raise ValueError("n_d and n_f must be at least 1")
        if min(self.w_self, self.w_cycle, self.w_style) < 0:
            raise ValueError("loss weights must be nonnegative")
        if not 0.0 <= self.word_dropout < 1.0:
            raise ValueError("word_dropout must lie in [0, 1)")
        if not (self.temperature > 0 and self.temperature_floor > 0):
            raise ValueError("temperatures must be positive")
        if self.variant not in (CONDITIONAL, MULTICLASS):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.disc_input not in ("soft", "hard") or self.cycle_input not in ("soft", "hard"):
            raise ValueError("disc_input and cycle_input must be 'soft' or 'hard'")
        if self.disc_real_only and self.disc_generated_only:
            raise ValueError("disc_real_only and disc_generated_only are mutually exclusive")
        if self.pretrain_iters < 0:
            raise ValueError("pretrain_iters must be nonnegative")
        if self.batch_size < 1 or self.max_iters < 0:
            raise ValueError("batch_size must be positive and max_iters nonnegative")

    @property
    def weights(self) -> tuple[float, float, float]:
        return (
            0.0 if self.disable_self else self.w_self,
            0.0 if self.disable_cycle else self.w_cycle,
            0.0 if self.disable_style else self.w_style,
        )

    def weights_at(self, iteration: int) -> tuple[float, float, float]:
        """Loss weights for 0-based ``iteration``: reconstruction only while pretraining."""
        w_self, w_cycle, w_style = self.weights
        if iteration < self.pretrain_iters and w_self > 0:
            return (w_self, 0.0, 0.0)
        return (w_self, w_cycle, w_style)

    def temperature_at(self, iteration: int, iters_per_epoch: int) -> float:
        epoch = iteration // max(iters_per_epoch, 1)
        return max(self.temperature_floor, self.temperature * self.temperature_decay**epoch) \
            if self.temperature_decay != 1.0 else self.temperature

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# helpers


@contextmanager
def frozen(params: dict[str, Tensor]) -> Iterator[None]:
    """Treat ``params`` as constants for the duration of the block."""
    saved = {k: p.requires_grad for k, p in params.items()}
    for p in params.values():
        p.requires_grad = False
    try:
        yield
    finally:
        for k, p in params.items():
            p.requires_grad = saved[k]


def word_dropout(sentences: Sequence[Sentence], rate: float, rng: np.random.Generator) -> list[Sentence]:
    """Delete each interior token independently with probability ``rate``."""
    if rate == 0.0:
        return list(sentences)
    out = []
    for s in sentences:
        toks = np.asarray(s[1:-1])
        keep = rng.random(len(toks)) >= rate
        out.append((BOS, *(int(t) for t in toks[keep]), EOS))
    return out


def sequence_nll(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean over the batch of per-sentence summed negative log-likelihood."""
    return ops.scale(ops.cross_entropy(logits, targets, mask, reduction="sum"), 1.0 / targets.shape[0])


def _check_distinct(s, s_hat) -> None:
    if np.any(np.asarray(s) == np.asarray(s_hat)):
        raise ValueError("transfer styles must differ from the source styles")


# ---------------------------------------------------------------------------
# losses


def loss_self(
    gen: StyleTransformer,
    x: Sequence[Sentence],
    s,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """-log p(y = x | dropout(x), s); targets are the undropped sentences."""
    src = word_dropout(x, dropout_rate, rng if rng is not None else np.random.default_rng(0))
    logits, targets, mask = gen.teacher_forced(x, src, s)
    return sequence_nll(logits, targets, mask)


def transfer_for_cycle(gen: StyleTransformer, x, s_hat, temperature: float, mode: str = "soft"):
    y_hat = gen.transfer_soft(x, s_hat, temperature)
    if mode == "hard":
        return y_hat.argmax_sentences(), y_hat
    return y_hat, y_hat


def loss_cycle(
    gen: StyleTransformer,
    x: Sequence[Sentence],
    s,
    s_hat,
    temperature: float = 1.0,
    y_hat: SoftSentences | None = None,
    mode: str = "soft",
) -> Tensor:
    """-log p(y = x | f(x, s_hat), s), differentiable through the first pass."""
    _check_distinct(s, s_hat)
    if y_hat is None:
        y_hat, _ = transfer_for_cycle(gen, x, s_hat, temperature, mode)
    logits, targets, mask = gen.teacher_forced(x, y_hat, s)
    return sequence_nll(logits, targets, mask)


def loss_style(disc: Discriminator, y_hat, s_hat, variant: str) -> Tensor:
    """Push transferred sentences toward the target style under ``disc``."""
    if variant != disc.variant:
        raise ValueError(f"loss variant {variant!r} does not match discriminator {disc.variant!r}")
    B = len(y_hat)
    s_hat = np.broadcast_to(np.asarray(s_hat, dtype=np.int64), (B,))
    if variant == CONDITIONAL:
        return ops.cross_entropy(disc.logits(y_hat, s_hat), np.ones(B, dtype=np.int64))
    return ops.cross_entropy(disc.logits(y_hat), s_hat)


def label_protocol(
    variant: str, x, y, y_hat, s, s_hat, real: bool = True, generated: bool = True
) -> list[tuple[object, np.ndarray | None, np.ndarray]]:
    """The labelled discriminator examples for one minibatch.

    Returns ``(inputs, proposal_styles, labels)`` groups. Conditional:
    (x, s) and (y, s) are 1, (x, s_hat) and (y_hat, s_hat) are 0.
    Multi-class: x and y get their style's class, y_hat gets class 0.
    ``real`` / ``generated`` drop x / y from the positives.
    """
    s = np.asarray(s, dtype=np.int64)
    s_hat = np.asarray(s_hat, dtype=np.int64)
    ones, zeros = np.ones(len(s), dtype=np.int64), np.zeros(len(s), dtype=np.int64)
    groups = []
    if variant == CONDITIONAL:
        if real:
            groups.append((x, s, ones))
        if generated:
            groups.append((y, s, ones))
        groups.append((x, s_hat, zeros))
        groups.append((y_hat, s_hat, zeros))
    elif variant == MULTICLASS:
        if real:
            groups.append((x, None, s))
        if generated:
            groups.append((y, None, s))
        groups.append((y_hat, None, zeros))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return groups


def _as_soft(x, vocab_size: int) -> SoftSentences:
    return x if isinstance(x, SoftSentences) else SoftSentences.one_hot(x, vocab_size)


def loss_discriminator(
    disc: Discriminator, x, y, y_hat, s, s_hat, real: bool = True, generated: bool = True
) -> tuple[Tensor, float]:
    """Mean cross entropy over all labelled examples, and the accuracy."""
    groups = label_protocol(disc.variant, x, y, y_hat, s, s_hat, real, generated)
    V = disc.cfg.vocab_size
    inputs = pad_soft([_as_soft(g[0], V) for g in groups])
    labels = np.concatenate([g[2] for g in groups])
    styles = np.concatenate([g[1] for g in groups]) if disc.variant == CONDITIONAL else None
    logits = disc.logits(inputs, styles)
    acc = float((logits.data.argmax(axis=-1) == labels).mean())
    return ops.cross_entropy(logits, labels), acc


# ---------------------------------------------------------------------------
# trainer


@dataclass
class Batch:
    sentences: list[Sentence]
    styles: np.ndarray
    targets: np.ndarray


class Trainer:
    """Holds both networks, their optimisers and the sampling RNG."""

    def __init__(
        self,
        model_cfg: TransformerConfig,
        train_cfg: TrainingConfig,
        corpora: Sequence[StyleCorpus],
    ):
        if len(corpora) < 2:
            raise ValueError("training needs at least two style corpora")
        for c in corpora:
            if not c.train:
                raise ValueError(f"style corpus {c.name!r} has an empty train split")
        if model_cfg.num_styles != len(corpora):
            raise ValueError("model num_styles must equal the number of corpora")
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self.corpora = list(corpora)
        init = np.random.default_rng(train_cfg.seed)
        self.gen = StyleTransformer(model_cfg, init)
        self.disc = Discriminator(model_cfg, train_cfg.variant, init)
        opt = dict(lr=train_cfg.lr, betas=(train_cfg.beta1, train_cfg.beta2), eps=train_cfg.eps,
                   clip_norm=train_cfg.clip_norm or None)
        self.opt_g = Adam(self.gen.params, **opt)
        self.opt_d = Adam(self.disc.params, **opt)
        self.rng = np.random.default_rng([train_cfg.seed, 1])
        self.iteration = 0
        self.log: list[dict] = []
        self.iters_per_epoch = max(1, min(len(c.train) for c in corpora) // train_cfg.batch_size)

    @property
    def temperature(self) -> float:
        return self.cfg.temperature_at(self.iteration, self.iters_per_epoch)

    def sample_batch(self) -> Batch:
        """A minibatch from every corpus, each sentence with a target style != its own."""
        K = len(self.corpora)
        sents, styles, targets = [], [], []
        for c in self.corpora:
            m = min(self.cfg.batch_size, len(c.train))
            idx = self.rng.choice(len(c.train), size=m, replace=False)
            sents.extend(c.train[i] for i in idx)
            styles.extend([c.style] * m)
            if K == 2:
                targets.extend([3 - c.style] * m)
            else:
                off = self.rng.integers(1, K, size=m)
                targets.extend(((c.style - 1 + off) % K) + 1)
        return Batch(sents, np.array(styles, dtype=np.int64), np.array(targets, dtype=np.int64))

    def discriminator_step(self) -> dict:
        cfg = self.cfg
        b = self.sample_batch()
        T = self.temperature
        with no_grad():
            y = self.gen.transfer_soft(b.sentences, b.styles, T)
            y_hat = self.gen.transfer_soft(b.sentences, b.targets, T)
        if cfg.disc_input == "hard":
            y, y_hat = y.argmax_sentences(), y_hat.argmax_sentences()
        self.opt_d.zero_grad()
        with Tape() as tape:
            loss, acc = loss_discriminator(
                self.disc, b.sentences, y, y_hat, b.styles, b.targets,
                real=not cfg.disc_generated_only, generated=not cfg.disc_real_only,
            )
            backward(loss)
        tape.clear()
        self.opt_d.step()
        return {"d_loss": float(loss.data), "d_acc": acc}

    def generator_losses(self, b: Batch, with_grad: bool = True) -> dict[str, Tensor]:
        """The three generator loss terms for one batch (discriminator frozen)."""
        cfg = self.cfg
        w_self, w_cycle, w_style = cfg.weights_at(self.iteration)
        T = self.temperature
        out = {}

        def maybe(active):
            return _null() if active and with_grad else no_grad()

        with frozen(self.disc.params):
            with maybe(w_self > 0):
                out["self"] = loss_self(self.gen, b.sentences, b.styles, cfg.word_dropout, self.rng)
            need_grad_transfer = (w_cycle > 0 or w_style > 0)
            with maybe(need_grad_transfer):
                cyc_in, y_hat = transfer_for_cycle(self.gen, b.sentences, b.targets, T, cfg.cycle_input)
            with maybe(w_cycle > 0):
                out["cycle"] = loss_cycle(self.gen, b.sentences, b.styles, b.targets, T, y_hat=cyc_in)
            with maybe(w_style > 0):
                out["style"] = loss_style(self.disc, y_hat, b.targets, self.disc.variant)
        return out

    def generator_step(self) -> dict:
        b = self.sample_batch()
        w = dict(zip(("self", "cycle", "style"), self.cfg.weights_at(self.iteration)))
        self.opt_g.zero_grad()
        with frozen(self.disc.params), Tape() as tape:
            parts = self.generator_losses(b)
            terms = [ops.scale(parts[k], w[k]) for k in ("self", "cycle", "style") if w[k] > 0]
            total = terms[0] if terms else Tensor(np.zeros(()))
            for t in terms[1:]:
                total = ops.add(total, t)
            if total.requires_grad:
                backward(total)
        tape.clear()
        self.opt_g.step()
        rec = {f"loss_{k}": float(v.data) for k, v in parts.items()}
        rec["g_loss"] = float(total.data)
        return rec

    def step(self) -> dict:
        """One iteration of the alternating schedule."""
        rec: dict = {"iteration": self.iteration + 1, "temperature": self.temperature}
        for _ in range(self.cfg.n_d):
            rec.update(self.discriminator_step())
        for _ in range(self.cfg.n_f):
            rec.update(self.generator_step())
        self.iteration += 1
        return rec

    def train(
        self,
        iterations: int | None = None,
        evaluate: Callable[["Trainer"], dict] | None = None,
        on_record: Callable[[dict], None] | None = None,
        on_eval: Callable[["Trainer", dict], None] | None = None,
    ) -> list[dict]:
        """Run until ``iterations`` (default: ``max_iters``) have completed.

        Every ``eval_every`` iterations ``evaluate`` is called and its metrics
        are merged into that iteration's record.
        """
        target = self.cfg.max_iters if iterations is None else iterations
        while self.iteration < target:
            t0 = time.perf_counter()
            rec = self.step()
            rec["seconds"] = round(time.perf_counter() - t0, 4)
            if evaluate is not None and self.cfg.eval_every and self.iteration % self.cfg.eval_every == 0:
                metrics = evaluate(self)
                rec.update({f"dev_{k}": v for k, v in metrics.items()})
                if on_eval is not None:
                    on_eval(self, metrics)
            self.log.append(rec)
            if on_record is not None:
                on_record(rec)
        return self.log


@contextmanager
def _null() -> Iterator[None]:
    yield


def deterministic_view(log: Sequence[dict]) -> list[dict]:
    """Log records without wall-clock fields, for run-to-run comparison."""
    return [{k: v for k, v in r.items() if k != "seconds"} for r in log]


def is_finite_record(rec: dict) -> bool:
    return all(math.isfinite(v) for k, v in rec.items() if isinstance(v, float))
