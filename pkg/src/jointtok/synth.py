"""Synthetic marker-substring classification tasks and their TSV files.

A sentence is labelled 1 iff the marker pattern occurs in it. Both classes
use every alphabet character, so mean-pooled character embeddings carry
little signal; a token spanning the whole marker makes the task easy. That
gap is what joint tokenizer training has to close.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import JointTokError

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class LabeledExample:
    texts: tuple[str, ...]
    label: int

    def __post_init__(self):
        if not 1 <= len(self.texts) <= 2 or not all(self.texts):
            raise ValueError("an example needs one or two non-empty texts")


@dataclass(frozen=True)
class SynthSpec:
    alphabet: str = "abc"
    pattern: str = "ab"
    min_len: int = 5
    max_len: int = 10
    positive_ratio: float = 0.5
    n_train: int = 4000
    n_valid: int = 500
    n_test: int = 500
    seed: int = 0
    max_attempts: int = 1_000_000

    def validate(self) -> None:
        if len(self.pattern) < 2:
            raise ValueError("pattern must have length >= 2")
        if set(self.pattern) - set(self.alphabet):
            raise ValueError("pattern must use alphabet characters")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("alphabet has repeated characters")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if not 0.0 < self.positive_ratio < 1.0:
            raise ValueError("positive_ratio must lie strictly between 0 and 1")

    def sizes(self) -> dict[str, int]:
        return {"train": self.n_train, "valid": self.n_valid, "test": self.n_test}

    def to_dict(self) -> dict:
        return asdict(self)


def _random_sentence(spec: SynthSpec, rng: np.random.Generator) -> str:
    n = int(rng.integers(spec.min_len, spec.max_len + 1))
    chars = rng.integers(0, len(spec.alphabet), n)
    return "".join(spec.alphabet[i] for i in chars)


def _balanced(spec: SynthSpec, size: int, rng: np.random.Generator, draw, label_of) -> list[LabeledExample]:
    n_pos = round(size * spec.positive_ratio)
    quota = {1: n_pos, 0: size - n_pos}
    out: list[LabeledExample] = []
    for _ in range(spec.max_attempts):
        if len(out) == size:
            break
        texts = draw()
        label = label_of(texts)
        if quota[label] > 0:
            quota[label] -= 1
            out.append(LabeledExample(texts, label))
    else:
        if len(out) < size:
            raise JointTokError("unreachable class balance within attempt cap")
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def _split_rngs(spec: SynthSpec) -> dict[str, np.random.Generator]:
    seqs = np.random.SeedSequence(spec.seed).spawn(len(SPLITS))
    return {name: np.random.default_rng(s) for name, s in zip(SPLITS, seqs)}


def generate_pattern_task(spec: SynthSpec) -> dict[str, list[LabeledExample]]:
    spec.validate()
    rngs = _split_rngs(spec)
    out = {}
    for name, size in spec.sizes().items():
        rng = rngs[name]
        out[name] = _balanced(spec, size, rng, lambda: (_random_sentence(spec, rng),),
                              lambda t: int(spec.pattern in t[0]))
    return out


def generate_pair_task(spec: SynthSpec) -> dict[str, list[LabeledExample]]:
    """Pairs labelled 1 iff both sides contain the pattern."""
    spec.validate()
    rngs = _split_rngs(spec)
    out = {}
    for name, size in spec.sizes().items():
        rng = rngs[name]
        out[name] = _balanced(
            spec, size, rng,
            lambda: (_random_sentence(spec, rng), _random_sentence(spec, rng)),
            lambda t: int(spec.pattern in t[0] and spec.pattern in t[1]))
    return out


def format_corpus(examples: Iterable[LabeledExample]) -> str:
    lines = []
    for ex in examples:
        if any(ch in t for t in ex.texts for ch in "\t\n"):
            raise ValueError("texts may not contain tabs or newlines")
        lines.append("\t".join((str(ex.label),) + ex.texts))
    return "".join(line + "\n" for line in lines)


def parse_corpus(text: str) -> list[LabeledExample]:
    out = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise ValueError(f"line {lineno}: expected label<TAB>text[<TAB>text]")
        try:
            label = int(parts[0])
        except ValueError:
            raise ValueError(f"line {lineno}: bad label {parts[0]!r}") from None
        out.append(LabeledExample(tuple(parts[1:]), label))
    return out


def write_corpus(examples: Sequence[LabeledExample], path) -> None:
    Path(path).write_text(format_corpus(examples), encoding="utf-8", newline="\n")


def read_corpus(path) -> list[LabeledExample]:
    return parse_corpus(Path(path).read_text(encoding="utf-8"))
