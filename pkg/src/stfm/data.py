"""Vocabulary, sentences, corpus files and the synthetic two-style task.

A sentence is a tuple of token ids that starts with ``BOS`` and ends with
``EOS``. Corpus files hold one whitespace-tokenised sentence per line.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")

Sentence = tuple[int, ...]


class Vocabulary:
    """Bijection between tokens and ids; ids 0..3 are reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __iter__(self):
        return iter(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, text: str | Sequence[str]) -> Sentence:
        tokens = text.split() if isinstance(text, str) else text
        return (BOS, *(self.id(t) for t in tokens), EOS)

    def decode(self, sentence: Sequence[int]) -> str:
        return " ".join(self.itos[i] for i in strip(sentence))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos[len(RESERVED):]), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)


def build_vocab(corpora: Iterable[Iterable[Sequence[str]]], min_freq: int = 1) -> Vocabulary:
    """Collect tokens seen at least ``min_freq`` times.

    ``corpora`` is an iterable of corpora, each an iterable of token lists.
    Ordering is by descending frequency, then lexicographically.
    """
    counts: Counter[str] = Counter()
    n = 0
    for corpus in corpora:
        for tokens in corpus:
            counts.update(tokens)
            n += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from empty corpora")
    kept = [t for t, c in counts.items() if c >= min_freq and t not in RESERVED]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def check_sentence(sentence: Sequence[int]) -> Sentence:
    s = tuple(int(i) for i in sentence)
    if len(s) < 2 or s[0] != BOS or s[-1] != EOS or EOS in s[1:-1]:
        raise ValueError(f"malformed sentence {s}: expected BOS ... EOS with no interior EOS")
    return s


def strip(sentence: Sequence[int]) -> list[int]:
    """Token ids without the BOS/EOS markers (and anything after EOS)."""
    out = []
    for i in sentence[1:] if sentence and sentence[0] == BOS else sentence:
        if i == EOS:
            break
        if i != PAD:
            out.append(int(i))
    return out


def wrap(tokens: Sequence[int]) -> Sentence:
    return (BOS, *tokens, EOS)


# ---------------------------------------------------------------------------
# batching


def encoder_batch(sentences: Sequence[Sentence]) -> tuple[np.ndarray, np.ndarray]:
    """Encoder ids (tokens + EOS, right-padded) and their lengths."""
    lengths = np.array([len(s) - 1 for s in sentences], dtype=np.int64)
    ids = np.full((len(sentences), int(lengths.max())), PAD, dtype=np.int64)
    for i, s in enumerate(sentences):
        ids[i, : len(s) - 1] = s[1:]
    return ids, lengths


def decoder_batch(sentences: Sequence[Sentence]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Teacher-forcing prefix (BOS + tokens), targets (tokens + EOS) and mask."""
    width = max(len(s) for s in sentences) - 1
    prefix = np.full((len(sentences), width), PAD, dtype=np.int64)
    targets = np.full((len(sentences), width), PAD, dtype=np.int64)
    for i, s in enumerate(sentences):
        prefix[i, : len(s) - 1] = s[:-1]
        targets[i, : len(s) - 1] = s[1:]
    return prefix, targets, targets != PAD


# ---------------------------------------------------------------------------
# corpora


@dataclass
class StyleCorpus:
    style: int
    name: str
    train: list[Sentence] = field(default_factory=list)
    dev: list[Sentence] = field(default_factory=list)
    test: list[Sentence] = field(default_factory=list)

    def split(self, name: str) -> list[Sentence]:
        if name not in ("train", "dev", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def read_token_lines(path: str | Path) -> list[list[str]]:
    """Whitespace-tokenised non-empty lines of a UTF-8 file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ValueError(f"cannot read corpus file {path}: {exc}") from exc
    return [line.split() for line in text.splitlines() if line.strip()]


def read_sentences(path: str | Path, vocab: Vocabulary, max_len: int) -> list[Sentence]:
    """Encode every line, truncating to ``max_len - 2`` tokens."""
    return [vocab.encode(tokens[: max_len - 2]) for tokens in read_token_lines(path)]


def load_corpus(
    root: str | Path,
    style_name: str,
    style: int,
    vocab: Vocabulary,
    max_len: int,
    pattern: str = "{style}.{split}.txt",
) -> StyleCorpus:
    """Load ``train``/``dev``/``test`` files for one style.

    ``pattern`` names the files; the default matches the layout written by
    :func:`write_corpus`, and ``"sentiment.{split}.{style}"`` reads the common
    sentiment-split review layout. Only the train file is mandatory.
    """
    root = Path(root)
    corpus = StyleCorpus(style, style_name)
    for split in ("train", "dev", "test"):
        path = root / pattern.format(style=style_name, split=split)
        if split != "train" and not path.exists():
            continue
        setattr(corpus, split, read_sentences(path, vocab, max_len))
    return corpus


def write_corpus(root: str | Path, corpus: StyleCorpus, vocab: Vocabulary) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for split in ("train", "dev", "test"):
        lines = [vocab.decode(s) + "\n" for s in corpus.split(split)]
        (root / f"{corpus.name}.{split}.txt").write_text("".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic task

_CATEGORIES = {
    "food": (["pizza", "pasta", "soup", "salad", "burger", "steak", "bread", "dessert"], ("delicious", "bland")),
    "staff": (["waiter", "waitress", "staff", "server", "manager", "host", "bartender", "cashier"], ("friendly", "rude")),
    "place": (["room", "patio", "lobby", "bathroom", "kitchen", "table", "floor", "hallway"], ("clean", "dirty")),
    "drink": (["coffee", "tea", "wine", "beer", "juice", "cocktail", "soda", "latte"], ("fresh", "stale")),
    "music": (["music", "band", "singer", "show", "playlist", "concert", "dj", "performance"], ("lively", "boring")),
}
# the sentiment verb is bound to the grammatical subject so the pairing is recoverable
_SUBJECT_VERBS = {"we": ("loved", "hated"), "i": ("enjoyed", "disliked"), "my": ("adored", "despised")}
_RECOMMEND = ("recommend", "avoid")

_INTENSIFIERS = ["very", "really", "quite", "so", "truly", "rather"]
_CONTENT_ADJ = ["big", "small", "new", "old", "local", "house", "daily", "special", "italian", "french"]
_VENUES = ["cafe", "diner", "bistro", "hotel", "pub", "bakery", "grill", "tavern"]
_PERSONS = ["friend", "wife", "husband", "sister", "brother", "boss", "kids"]
_TIMES = ["today", "yesterday", "tonight", "again", "recently", "lately"]
_BE = ["was", "is", "seemed", "looked"]


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """A two-style corpus whose style is carried by paired lexicons.

    ``style_names`` gives (style 1, style 2); each style word in style 1 has
    exactly one partner in style 2, chosen by the sentence context, so the
    ideal transfer is a word-for-word lexicon swap.
    """

    seed: int = 0
    train_size: int = 2000
    dev_size: int = 200
    test_size: int = 200
    style_names: tuple[str, str] = ("positive", "negative")

    def style_pairs(self) -> list[tuple[str, str]]:
        pairs = [pair for _, pair in _CATEGORIES.values()]
        pairs += list(_SUBJECT_VERBS.values())
        pairs.append(_RECOMMEND)
        return pairs

    def lexicons(self) -> tuple[frozenset[str], frozenset[str]]:
        pairs = self.style_pairs()
        return frozenset(a for a, _ in pairs), frozenset(b for _, b in pairs)

    def content_words(self) -> list[str]:
        nouns = [n for ns, _ in _CATEGORIES.values() for n in ns]
        function = ["the", "at", "and", "we", "i", "my", "with", "would", "for", "it", "is", "something", "one", "found"]
        words = nouns + _INTENSIFIERS + _CONTENT_ADJ + _VENUES + _PERSONS + _TIMES + _BE + function
        return sorted(set(words))


def _noun_pair(rng: np.random.Generator) -> tuple[str, tuple[str, str]]:
    cat = list(_CATEGORIES)[rng.integers(len(_CATEGORIES))]
    nouns, pair = _CATEGORIES[cat]
    return nouns[rng.integers(len(nouns))], pair


def _pick(rng: np.random.Generator, words: Sequence[str]) -> str:
    return words[rng.integers(len(words))]


def _subject(rng: np.random.Generator, k: int) -> list[str]:
    subj = list(_SUBJECT_VERBS)[rng.integers(len(_SUBJECT_VERBS))]
    verb = _SUBJECT_VERBS[subj][k]
    if subj == "my":
        return ["my", _pick(rng, _PERSONS), verb]
    return [subj, verb]


def _sample_sentence(rng: np.random.Generator, k: int) -> list[str]:
    """One sentence in style index ``k`` (0 or 1), with exactly one style word."""
    t = rng.integers(10)
    noun, pair = _noun_pair(rng)
    adj = pair[k]
    venue = ["the", _pick(rng, _VENUES)]
    if t == 0:
        return ["the", _pick(rng, _CONTENT_ADJ), noun, "at", *venue, _pick(rng, _BE), _pick(rng, _INTENSIFIERS), adj]
    if t == 1:
        return ["the", noun, "at", *venue, _pick(rng, _BE), adj, _pick(rng, _TIMES)]
    if t == 2:
        return [_pick(rng, _TIMES), "the", noun, "at", *venue, _pick(rng, _BE), _pick(rng, _INTENSIFIERS), adj]
    if t == 3:
        return [_pick(rng, _TIMES), "the", _pick(rng, _CONTENT_ADJ), noun, "with", "my", _pick(rng, _PERSONS),
                _pick(rng, _BE), adj]
    if t == 4:
        subj = _subject(rng, k)
        return ["the", _pick(rng, _CONTENT_ADJ), noun, "at", *venue, "is", "something", *subj]
    if t == 5:
        noun2, _ = _noun_pair(rng)
        return ["the", noun, "and", "the", noun2, "at", *venue, _pick(rng, _BE), _pick(rng, _INTENSIFIERS), adj]
    if t == 6:
        return ["for", "the", _pick(rng, _CONTENT_ADJ), noun, "at", *venue, "i", "would", _RECOMMEND[k], "it"]
    if t == 7:
        return [*venue, "with", "the", _pick(rng, _CONTENT_ADJ), noun, "is", "one", "i", "would", _RECOMMEND[k]]
    if t == 8:
        return ["my", _pick(rng, _PERSONS), "and", "i", "found", "the", noun, "at", *venue, _pick(rng, _INTENSIFIERS),
                adj]
    return [*_subject(rng, k), "the", noun, "at", *venue, _pick(rng, _TIMES)]


@dataclass
class SyntheticTask:
    spec: SyntheticTaskSpec
    vocab: Vocabulary
    corpora: list[StyleCorpus]
    lexicons: tuple[frozenset[str], frozenset[str]]
    _swap: dict[int, int]

    def transfer_oracle(self, sentence: Sequence[int]) -> Sentence:
        """Swap every style-marked word for its partner; keep the rest."""
        return tuple(self._swap.get(int(i), int(i)) for i in sentence)

    def style_counts(self, sentence: Sequence[int]) -> tuple[int, int]:
        words = [self.vocab.itos[i] for i in strip(sentence)]
        return sum(w in self.lexicons[0] for w in words), sum(w in self.lexicons[1] for w in words)

    def oracle_style(self, sentence: Sequence[int]) -> int:
        """StyleId by lexicon majority; 0 when undecided."""
        a, b = self.style_counts(sentence)
        return 1 if a > b else 2 if b > a else 0

    def content(self, sentence: Sequence[int]) -> list[int]:
        """Token ids with every style-marked word removed."""
        return [i for i in strip(sentence) if i not in self._swap]


def generate_synthetic(spec: SyntheticTaskSpec = SyntheticTaskSpec()) -> SyntheticTask:
    lex_a, lex_b = spec.lexicons()
    if lex_a & lex_b:
        raise ValueError(f"style lexicons overlap: {sorted(lex_a & lex_b)}")
    content = set(spec.content_words())
    if content & (lex_a | lex_b):
        raise ValueError("content words overlap the style lexicons")
    vocab = Vocabulary(sorted(content | lex_a | lex_b))
    rng = np.random.default_rng(spec.seed)
    need = spec.train_size + spec.dev_size + spec.test_size
    corpora = []
    for k, name in enumerate(spec.style_names):
        seen: dict[tuple[str, ...], None] = {}
        for _ in range(200 * need):
            if len(seen) == need:
                break
            seen.setdefault(tuple(_sample_sentence(rng, k)), None)
        else:
            raise ValueError(f"could not draw {need} distinct sentences for style {name!r}")
        sents = [vocab.encode(s) for s in seen]
        a, b = spec.train_size, spec.train_size + spec.dev_size
        corpora.append(StyleCorpus(k + 1, name, sents[:a], sents[a:b], sents[b:]))
    swap = {}
    for x, y in spec.style_pairs():
        swap[vocab.stoi[x]], swap[vocab.stoi[y]] = vocab.stoi[y], vocab.stoi[x]
    return SyntheticTask(spec, vocab, corpora, (lex_a, lex_b), swap)


def sentence_digest(sentence: Sequence[int]) -> str:
    return hashlib.sha1(np.asarray(sentence, dtype=np.int64).tobytes()).hexdigest()
