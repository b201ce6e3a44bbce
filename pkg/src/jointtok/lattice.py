"""Segmentation lattices and exact inference over them.

A lattice holds every in-vocabulary segmentation of one sentence as a DAG
whose nodes are character positions and whose edges are vocabulary words.
All scores are natural-log probabilities in float64. Path scores are summed
with :func:`math.fsum`, so two routes that visit the same words always get
bit-identical scores regardless of summation order.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .exceptions import LatticeError

if TYPE_CHECKING:
    from .vocab import SeedVocab

ORACLE_CAP = 10**6
UNK_SEED_PROB = 1e-7


@dataclass(frozen=True)
class Tokenization:
    """One path through a lattice.

    ``bounds`` holds the end offset of every token, so ``bounds[-1]`` is
    the sentence length.
    """

    word_ids: tuple[int, ...]
    logprob: float
    bounds: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.word_ids)

    def spans(self) -> list[tuple[int, int]]:
        starts = (0,) + self.bounds[:-1]
        return list(zip(starts, self.bounds))

    def pieces(self, sentence: str) -> list[str]:
        return [sentence[s:e] for s, e in self.spans()]

    def code(self) -> int:
        """Bitmask of interior boundaries; unique per segmentation."""
        out = 0
        for b in self.bounds[:-1]:
            out |= 1 << b
        return out

    def sort_key(self) -> tuple:
        """Descending score, then fewer tokens, then longer early tokens."""
        starts = (0,) + self.bounds[:-1]
        return (-self.logprob, len(self.word_ids),
                tuple(s - e for s, e in zip(starts, self.bounds)))


@dataclass(frozen=True)
class Lattice:
    sentence: str
    starts: tuple[int, ...]
    ends: tuple[int, ...]
    word_ids: tuple[int, ...]
    out_edges: tuple[tuple[int, ...], ...]
    in_edges: tuple[tuple[int, ...], ...]

    @property
    def length(self) -> int:
        return len(self.sentence)

    @property
    def num_edges(self) -> int:
        return len(self.word_ids)

    def edges(self) -> list[tuple[int, int, int]]:
        return list(zip(self.starts, self.ends, self.word_ids))


def build_lattice(sentence: str, vocab: "SeedVocab", allow_unk: bool = False) -> Lattice:
    """Collect every vocabulary word occurring in ``sentence``.

    With ``allow_unk`` an unknown character becomes a single-character edge
    carrying ``vocab.unk_id`` (one past the last real id); see
    :func:`with_unk`.
    """
    if not sentence:
        raise LatticeError("empty sentence")
    n = len(sentence)
    index = vocab.index
    starts: list[int] = []
    ends: list[int] = []
    ids: list[int] = []
    for i in range(n):
        for j in range(i + 1, min(n, i + vocab.max_word_len) + 1):
            wid = index.get(sentence[i:j])
            if wid is not None:
                starts.append(i)
                ends.append(j)
                ids.append(wid)
        if allow_unk and sentence[i] not in index:
            starts.append(i)
            ends.append(i + 1)
            ids.append(vocab.unk_id)
    out_edges: list[list[int]] = [[] for _ in range(n + 1)]
    in_edges: list[list[int]] = [[] for _ in range(n + 1)]
    for e, (s, t) in enumerate(zip(starts, ends)):
        out_edges[s].append(e)
        in_edges[t].append(e)

    reach = [False] * (n + 1)
    reach[0] = True
    for j in range(1, n + 1):
        reach[j] = any(reach[starts[e]] for e in in_edges[j])
    if not reach[n]:
        raise LatticeError("no path")
    return Lattice(sentence, tuple(starts), tuple(ends), tuple(ids),
                   tuple(map(tuple, out_edges)), tuple(map(tuple, in_edges)))


def with_unk(word_logprobs: np.ndarray, unk_prob: float = UNK_SEED_PROB) -> np.ndarray:
    """Append the reserved UNK entry and renormalize."""
    lp = np.asarray(word_logprobs, dtype=np.float64)
    return np.append(lp + math.log1p(-unk_prob), math.log(unk_prob))


def _edge_scores(lattice: Lattice, word_logprobs) -> list[float]:
    lp = np.asarray(word_logprobs, dtype=np.float64)
    scores = lp[list(lattice.word_ids)] if lattice.word_ids else lp[:0]
    if not np.all(np.isfinite(scores)):
        raise LatticeError("non-finite word log-probability on a lattice edge")
    return scores.tolist()


def path_logprob(word_ids: Sequence[int], word_logprobs) -> float:
    lp = np.asarray(word_logprobs, dtype=np.float64)
    return math.fsum(lp[list(word_ids)].tolist())


def _make_tokenization(lattice: Lattice, edges: Sequence[int], edge_lp: Sequence[float]) -> Tokenization:
    return Tokenization(
        word_ids=tuple(lattice.word_ids[e] for e in edges),
        logprob=math.fsum(edge_lp[e] for e in edges),
        bounds=tuple(lattice.ends[e] for e in edges),
    )


def _forward_max(lattice: Lattice, edge_lp: Sequence[float]) -> list[float]:
    n = lattice.length
    best = [-math.inf] * (n + 1)
    best[0] = 0.0
    for j in range(1, n + 1):
        for e in lattice.in_edges[j]:
            v = best[lattice.starts[e]] + edge_lp[e]
            if v > best[j]:
                best[j] = v
    return best


def nbest(lattice: Lattice, word_logprobs, n: int) -> list[Tokenization]:
    """Exact N-best segmentations: forward Viterbi DP, then backward A*.

    The forward pass gives, for every position, the best prefix score; this
    is an exact heuristic for the backward search, so complete paths pop in
    score order. Popping continues past the N-th hit while anything on the
    heap could still tie it, then the standard tie-break decides.
    """
    if n < 1:
        raise ValueError("N must be >= 1")
    edge_lp = _edge_scores(lattice, word_logprobs)
    best = _forward_max(lattice, edge_lp)
    length = lattice.length
    if best[length] == -math.inf:
        raise LatticeError("no path")

    heap = [(-best[length], 0, length, 0.0, ())]
    counter = 1
    found: list[Tokenization] = []
    cutoff = -math.inf
    while heap:
        neg_prio, _, pos, suffix_score, suffix = heapq.heappop(heap)
        if len(found) >= n and -neg_prio < cutoff - 1e-9 * (1.0 + abs(cutoff)):
            break
        if pos == 0:
            found.append(_make_tokenization(lattice, suffix, edge_lp))
            if len(found) >= n:
                found.sort(key=Tokenization.sort_key)
                cutoff = found[n - 1].logprob
            continue
        for e in lattice.in_edges[pos]:
            start = lattice.starts[e]
            if best[start] == -math.inf:
                continue
            g = suffix_score + edge_lp[e]
            heapq.heappush(heap, (-(best[start] + g), counter, start, g, (e,) + suffix))
            counter += 1
    found.sort(key=Tokenization.sort_key)
    return found[:n]


def viterbi(lattice: Lattice, word_logprobs) -> Tokenization:
    """Maximum-probability segmentation with the standard tie-break."""
    return nbest(lattice, word_logprobs, 1)[0]


def _logsumexp(values: Sequence[float]) -> float:
    m = max(values)
    if m == -math.inf:
        return m
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def _forward(lattice: Lattice, edge_lp: Sequence[float], alpha: float) -> list[float]:
    n = lattice.length
    fwd = [-math.inf] * (n + 1)
    fwd[0] = 0.0
    for j in range(1, n + 1):
        terms = [fwd[lattice.starts[e]] + alpha * edge_lp[e] for e in lattice.in_edges[j]]
        if terms:
            fwd[j] = _logsumexp(terms)
    return fwd


def _backward(lattice: Lattice, edge_lp: Sequence[float], alpha: float) -> list[float]:
    n = lattice.length
    bwd = [-math.inf] * (n + 1)
    bwd[n] = 0.0
    for i in range(n - 1, -1, -1):
        terms = [bwd[lattice.ends[e]] + alpha * edge_lp[e] for e in lattice.out_edges[i]]
        if terms:
            bwd[i] = _logsumexp(terms)
    return bwd


def forward_logz(lattice: Lattice, word_logprobs, alpha: float = 1.0) -> float:
    """log of the sum over segmentations of exp(alpha * path logprob)."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    fwd = _forward(lattice, _edge_scores(lattice, word_logprobs), alpha)
    if fwd[-1] == -math.inf:
        raise LatticeError("no path")
    return fwd[-1]


def edge_posteriors(lattice: Lattice, word_logprobs, alpha: float = 1.0) -> np.ndarray:
    """Posterior probability of each edge under the alpha-tempered distribution."""
    edge_lp = _edge_scores(lattice, word_logprobs)
    fwd = _forward(lattice, edge_lp, alpha)
    bwd = _backward(lattice, edge_lp, alpha)
    logz = fwd[-1]
    return np.array([
        math.exp(fwd[s] + alpha * w + bwd[t] - logz)
        for s, t, w in zip(lattice.starts, lattice.ends, edge_lp)
    ])


def boundary_posteriors(lattice: Lattice, word_logprobs, alpha: float = 1.0) -> np.ndarray:
    """P(a token boundary at position i), for i in 0..len."""
    edge_lp = _edge_scores(lattice, word_logprobs)
    fwd = _forward(lattice, edge_lp, alpha)
    bwd = _backward(lattice, edge_lp, alpha)
    logz = fwd[-1]
    return np.exp(np.array(fwd) + np.array(bwd) - logz)


def ffbs_sample(lattice: Lattice, word_logprobs, alpha: float, rng: np.random.Generator) -> Tokenization:
    """Draw one segmentation with probability proportional to p(s')**alpha."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    edge_lp = _edge_scores(lattice, word_logprobs)
    fwd = _forward(lattice, edge_lp, alpha)
    pos = lattice.length
    if fwd[pos] == -math.inf:
        raise LatticeError("no path")
    path: list[int] = []
    while pos > 0:
        edges = lattice.in_edges[pos]
        u = rng.random()
        acc = 0.0
        chosen = edges[-1]
        for e in edges:
            acc += math.exp(fwd[lattice.starts[e]] + alpha * edge_lp[e] - fwd[pos])
            if u < acc:
                chosen = e
                break
        path.append(chosen)
        pos = lattice.starts[chosen]
    path.reverse()
    return _make_tokenization(lattice, path, edge_lp)


def ffbs_sample_codes(lattice: Lattice, word_logprobs, alpha: float,
                      rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorized FFBS: ``size`` draws returned as boundary bitmasks."""
    if lattice.length > 62:
        raise ValueError("boundary codes need sentences of length <= 62")
    edge_lp = _edge_scores(lattice, word_logprobs)
    fwd = np.array(_forward(lattice, edge_lp, alpha))
    starts = np.array(lattice.starts, dtype=np.int64)
    elp = np.array(edge_lp)
    pos = np.full(size, lattice.length, dtype=np.int64)
    codes = np.zeros(size, dtype=np.int64)
    while True:
        live = pos > 0
        if not live.any():
            break
        for p in np.unique(pos[live]):
            idx = np.flatnonzero(pos == p)
            edges = np.array(lattice.in_edges[p], dtype=np.int64)
            probs = np.exp(fwd[starts[edges]] + alpha * elp[edges] - fwd[p])
            cdf = np.cumsum(probs)
            pick = np.searchsorted(cdf, rng.random(idx.size) * cdf[-1], side="right")
            new = starts[edges[np.minimum(pick, edges.size - 1)]]
            codes[idx] |= np.where(new > 0, np.left_shift(1, new), 0)
            pos[idx] = new
    return codes


def kbest_distribution(lattice: Lattice, word_logprobs, alpha: float, k: int) -> tuple[list[Tokenization], np.ndarray]:
    """The K-best list and its tempered, renormalized sampling weights."""
    if k < 1:
        raise ValueError("K must be >= 1")
    cands = nbest(lattice, word_logprobs, k)
    scores = np.array([alpha * c.logprob for c in cands])
    w = np.exp(scores - scores.max())
    return cands, w / w.sum()


def kbest_sample(lattice: Lattice, word_logprobs, alpha: float, k: int,
                 rng: np.random.Generator) -> Tokenization:
    cands, probs = kbest_distribution(lattice, word_logprobs, alpha, k)
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
    return cands[min(idx, len(cands) - 1)]


def kbest_sample_codes(lattice: Lattice, word_logprobs, alpha: float, k: int,
                       rng: np.random.Generator, size: int) -> np.ndarray:
    cands, probs = kbest_distribution(lattice, word_logprobs, alpha, k)
    cdf = np.cumsum(probs)
    idx = np.minimum(np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right"), len(cands) - 1)
    return np.array([c.code() for c in cands], dtype=np.int64)[idx]


def count_paths(lattice: Lattice) -> int:
    n = lattice.length
    ways = [0] * (n + 1)
    ways[0] = 1
    for j in range(1, n + 1):
        ways[j] = sum(ways[lattice.starts[e]] for e in lattice.in_edges[j])
    return ways[n]


def enumerate_all(lattice: Lattice, word_logprobs, cap: int = ORACLE_CAP) -> list[Tokenization]:
    """Brute-force list of every segmentation, best first."""
    if count_paths(lattice) > cap:
        raise LatticeError("oracle blowup")
    edge_lp = _edge_scores(lattice, word_logprobs)
    out: list[Tokenization] = []
    stack: list[tuple[int, tuple[int, ...]]] = [(0, ())]
    while stack:
        pos, prefix = stack.pop()
        if pos == lattice.length:
            out.append(_make_tokenization(lattice, prefix, edge_lp))
            continue
        for e in lattice.out_edges[pos]:
            stack.append((lattice.ends[e], prefix + (e,)))
    if not out:
        raise LatticeError("no path")
    out.sort(key=Tokenization.sort_key)
    return out


def mass_without_boundaries(lattice: Lattice, word_logprobs, forbidden: Sequence[int],
                            alpha: float = 1.0) -> float:
    """Probability that no token boundary falls on any ``forbidden`` position."""
    edge_lp = _edge_scores(lattice, word_logprobs)
    blocked = set(forbidden) - {0, lattice.length}
    n = lattice.length
    fwd = [-math.inf] * (n + 1)
    fwd[0] = 0.0
    for j in range(1, n + 1):
        if j in blocked:
            continue
        terms = [fwd[lattice.starts[e]] + alpha * edge_lp[e] for e in lattice.in_edges[j]]
        if terms:
            fwd[j] = _logsumexp(terms)
    logz = _forward(lattice, edge_lp, alpha)[-1]
    return math.exp(fwd[n] - logz) if fwd[n] > -math.inf else 0.0
