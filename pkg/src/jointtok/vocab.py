"""Seed vocabulary: candidate collection, unigram EM pruning, TSV I/O, trimming."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import lattice as lat
from .exceptions import VocabError

DEFAULT_MAX_WORD_LEN = 8
NORMALIZATION_TOL = 1e-6

_ESCAPES = {"\\": "\\\\", " ": "\\s", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "s": " ", "t": "\t", "n": "\n", "r": "\r"}


@dataclass(frozen=True, eq=False)
class SeedVocab:
    """Ordered vocabulary with seed unigram log-probabilities.

    Ids are list positions. ``unk_id`` (== ``len(vocab)``) is reserved for
    characters never seen while building the vocabulary; it only appears in
    lattices built with ``allow_unk=True``.
    """

    surfaces: tuple[str, ...]
    logprobs: np.ndarray
    max_word_len: int = DEFAULT_MAX_WORD_LEN
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        lp = np.array(self.logprobs, dtype=np.float64)
        lp.setflags(write=False)
        object.__setattr__(self, "logprobs", lp)
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        if not self.surfaces:
            raise VocabError("empty vocabulary")
        if lp.shape != (len(self.surfaces),):
            raise VocabError("logprobs must have one entry per surface")
        index: dict[str, int] = {}
        for i, s in enumerate(self.surfaces):
            if not s:
                raise VocabError("empty surface")
            if s in index:
                raise VocabError("duplicate entry")
            index[s] = i
        object.__setattr__(self, "index", index)
        if self.max_word_len < 1 or max(map(len, self.surfaces)) > self.max_word_len:
            raise VocabError("surface longer than max_word_len")
        if not np.all(np.isfinite(lp)):
            raise VocabError("non-finite log-probability")
        if abs(math.fsum(np.exp(lp).tolist()) - 1.0) > NORMALIZATION_TOL:
            raise VocabError("unnormalized vocabulary")
        if any(ch not in index for s in self.surfaces for ch in s):
            raise VocabError("coverage violation")

    def __len__(self) -> int:
        return len(self.surfaces)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SeedVocab):
            return NotImplemented
        return (self.surfaces == other.surfaces
                and self.max_word_len == other.max_word_len
                and np.array_equal(self.logprobs, other.logprobs))

    __hash__ = None

    @property
    def unk_id(self) -> int:
        return len(self.surfaces)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logprobs)

    def entries(self) -> list[tuple[str, float, int]]:
        return [(s, float(p), i) for i, (s, p) in enumerate(zip(self.surfaces, self.logprobs))]

    def characters(self) -> list[int]:
        return [i for i, s in enumerate(self.surfaces) if len(s) == 1]

    def surface(self, word_id: int) -> str:
        return self.surfaces[word_id] if word_id < len(self.surfaces) else "<unk>"

    def with_logprobs(self, logprobs) -> "SeedVocab":
        return SeedVocab(self.surfaces, _normalize(np.asarray(logprobs, dtype=np.float64)),
                         self.max_word_len)


@dataclass(frozen=True)
class CandidateSet:
    candidates: list[tuple[str, int]]
    max_word_len: int = DEFAULT_MAX_WORD_LEN

    def __len__(self) -> int:
        return len(self.candidates)

    def as_dict(self) -> dict[str, int]:
        return dict(self.candidates)


def _normalize(logprobs: np.ndarray) -> np.ndarray:
    m = logprobs.max()
    return logprobs - (m + math.log(math.fsum(np.exp(logprobs - m).tolist())))


def _check_corpus(corpus: Iterable[str]) -> list[str]:
    sentences = [s for s in corpus if s]
    if not sentences:
        raise VocabError("empty corpus")
    return sentences


def collect_candidates(corpus: Sequence[str], max_word_len: int = DEFAULT_MAX_WORD_LEN,
                       min_freq: int = 1) -> CandidateSet:
    """Count every substring up to ``max_word_len``; keep frequent ones and all characters."""
    if max_word_len < 1:
        raise ValueError("max_word_len must be >= 1")
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    sentences = _check_corpus(corpus)
    counts: Counter[str] = Counter()
    for sent, mult in Counter(sentences).items():
        n = len(sent)
        for i in range(n):
            for j in range(i + 1, min(n, i + max_word_len) + 1):
                counts[sent[i:j]] += mult
    chars = sorted(s for s in counts if len(s) == 1)
    multi = sorted((s for s, c in counts.items() if len(s) > 1 and c >= min_freq),
                   key=lambda s: (-counts[s], s))
    return CandidateSet([(s, counts[s]) for s in chars + multi], max_word_len)


def _expected_counts(surfaces: Sequence[str], logprobs: np.ndarray, sentences: Counter,
                     max_word_len: int) -> tuple[np.ndarray, float]:
    vocab = SeedVocab(surfaces, logprobs, max_word_len)
    counts = np.zeros(len(surfaces))
    loglik = 0.0
    for sent in sorted(sentences):
        mult = sentences[sent]
        lattice = lat.build_lattice(sent, vocab)
        post = lat.edge_posteriors(lattice, logprobs)
        np.add.at(counts, list(lattice.word_ids), mult * post)
        loglik += mult * lat.forward_logz(lattice, logprobs)
    return counts, loglik


def _removal_cost(surfaces: Sequence[str], logprobs: np.ndarray, counts: np.ndarray,
                  max_word_len: int) -> np.ndarray:
    """Approximate log-likelihood loss from deleting each multi-character word.

    Every expected occurrence of the word is assumed re-segmented by its best
    split into the remaining vocabulary.
    """
    vocab = SeedVocab(surfaces, logprobs, max_word_len)
    cost = np.full(len(surfaces), np.inf)
    for i, s in enumerate(surfaces):
        if len(s) == 1:
            continue
        masked = logprobs.copy()
        masked[i] = -1e300
        split = lat.nbest(lat.build_lattice(s, vocab), masked, 2)
        alt = next(t for t in split if t.word_ids != (i,))
        cost[i] = counts[i] * (logprobs[i] - alt.logprob)
    return cost


def em_train_seed(candidates: CandidateSet, corpus: Sequence[str], target_size: int,
                  shrink_ratio: float = 0.75, iters_per_round: int = 2,
                  smoothing: float = 0.5) -> SeedVocab:
    """Unigram EM with iterative pruning, in the SentencePiece style.

    Each round runs ``iters_per_round`` EM iterations, then keeps the
    ``shrink_ratio`` fraction of entries whose removal would cost the most
    likelihood. Single characters are never pruned. ``smoothing`` is an
    additive pseudo-count in the M-step that keeps every entry's probability
    positive.
    """
    sentences = Counter(_check_corpus(corpus))
    if not 0.0 < shrink_ratio < 1.0:
        raise ValueError("shrink_ratio must lie in (0, 1)")
    n_chars = len({ch for s in sentences for ch in s})
    if target_size < n_chars:
        raise VocabError("target below character coverage")
    freq = dict(candidates.candidates)
    surfaces = [s for s, _ in candidates.candidates]
    missing = {ch for s in sentences for ch in s} - set(surfaces)
    if missing:
        raise VocabError("coverage violation")
    max_len = candidates.max_word_len
    logprobs = _normalize(np.log(np.array([max(freq[s], 1) for s in surfaces], dtype=np.float64)))

    while True:
        for _ in range(max(iters_per_round, 1)):
            counts, _ = _expected_counts(surfaces, logprobs, sentences, max_len)
            logprobs = _normalize(np.log(counts + smoothing))
        if len(surfaces) <= target_size:
            break
        keep_size = max(target_size, int(len(surfaces) * shrink_ratio))
        cost = _removal_cost(surfaces, logprobs, counts, max_len)
        char_ids = [i for i, s in enumerate(surfaces) if len(s) == 1]
        multi_ids = sorted((i for i, s in enumerate(surfaces) if len(s) > 1),
                           key=lambda i: (-cost[i], surfaces[i]))
        kept = sorted(char_ids + multi_ids[: max(keep_size - len(char_ids), 0)])
        surfaces = [surfaces[i] for i in kept]
        logprobs = _normalize(logprobs[kept])
    return SeedVocab(surfaces, logprobs, max_len)


def trim_vocab(vocab: SeedVocab, keep_ratio: float) -> SeedVocab:
    """Keep the ceil(keep_ratio * |V|) most probable entries, characters always included."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError("keep_ratio must lie in (0, 1]")
    if keep_ratio == 1.0:
        return vocab
    keep = math.ceil(keep_ratio * len(vocab))
    chars = vocab.characters()
    multi = sorted((i for i, s in enumerate(vocab.surfaces) if len(s) > 1),
                   key=lambda i: (-vocab.logprobs[i], i))
    kept = sorted(chars + multi[: max(keep - len(chars), 0)])
    return SeedVocab([vocab.surfaces[i] for i in kept], _normalize(vocab.logprobs[kept]),
                     vocab.max_word_len)


def _escape(surface: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in surface)


def _unescape(text: str) -> str:
    out = []
    it = iter(text)
    for ch in it:
        if ch == "\\":
            nxt = next(it, "")
            if nxt not in _UNESCAPES:
                raise VocabError(f"bad escape in surface {text!r}")
            out.append(_UNESCAPES[nxt])
        else:
            out.append(ch)
    return "".join(out)


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def dumps_vocab(vocab: SeedVocab) -> str:
    return "".join(f"{_escape(s)}\t{format_float(p)}\n" for s, p in zip(vocab.surfaces, vocab.logprobs))


def loads_vocab(text: str, max_word_len: int | None = None) -> SeedVocab:
    surfaces: list[str] = []
    logprobs: list[float] = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise VocabError(f"line {lineno}: expected surface<TAB>logprob")
        surfaces.append(_unescape(parts[0]))
        try:
            logprobs.append(float(parts[1]))
        except ValueError:
            raise VocabError(f"line {lineno}: bad log-probability {parts[1]!r}") from None
    if not surfaces:
        raise VocabError("empty vocabulary")
    if max_word_len is None:
        max_word_len = max(DEFAULT_MAX_WORD_LEN, max(map(len, surfaces)))
    return SeedVocab(surfaces, np.array(logprobs), max_word_len)


def save_vocab(vocab: SeedVocab, path) -> None:
    Path(path).write_text(dumps_vocab(vocab), encoding="utf-8", newline="\n")


def load_vocab(path, max_word_len: int | None = None) -> SeedVocab:
    return loads_vocab(Path(path).read_text(encoding="utf-8"), max_word_len)


def character_vocab(vocab: SeedVocab) -> SeedVocab:
    """Same vocabulary with every multi-character entry driven to ~zero mass.

    Ids are preserved so models keyed on the original ids stay compatible.
    """
    lp = np.where([len(s) == 1 for s in vocab.surfaces], vocab.logprobs, -700.0)
    return vocab.with_logprobs(lp)
