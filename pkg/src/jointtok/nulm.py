"""Neural unigram language model (NULM) used as the trainable tokenizer.

Each word w has an embedding v_w; a one-hidden-layer tanh MLP maps it to a
scalar logit d_w, and a softmax over the vocabulary gives p(w). A
segmentation's probability is the product of its word probabilities.

The tokenizer objective weights the downstream losses of N candidate
segmentations by their renormalized probabilities. Downstream losses are
treated as constants: gradients reach the tokenizer only through the
weights.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import lattice as lat
from . import snapshot
from .exceptions import JointTokError
from .optim import AdamState, ParamSet, adam_update_, apply_update
from .vocab import SeedVocab

logger = logging.getLogger(__name__)

PRETRAIN_TOL = 1e-7
PRETRAIN_MAX_EPOCHS = 100_000


@dataclass
class NulmParams(ParamSet):
    embeddings: np.ndarray  # |V| x d
    w1: np.ndarray  # h x d
    b1: np.ndarray  # h
    w2: np.ndarray  # h
    b2: np.ndarray  # 0-d

    names = ("embeddings", "w1", "b1", "w2", "b2")

    @property
    def vocab_size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.embeddings.shape[1], self.w1.shape[0]


def init_params(vocab_size: int, embed_dim: int = 64, hidden_dim: int = 64,
                rng: np.random.Generator | None = None, scale: float = 0.1) -> NulmParams:
    """Gaussian init; ``rng=None`` gives the all-zero network (uniform p(w))."""
    if rng is None:
        return NulmParams(np.zeros((vocab_size, embed_dim)), np.zeros((hidden_dim, embed_dim)),
                          np.zeros(hidden_dim), np.zeros(hidden_dim), np.zeros(()))
    return NulmParams(
        embeddings=rng.normal(0.0, scale, (vocab_size, embed_dim)),
        w1=rng.normal(0.0, 1.0 / math.sqrt(embed_dim), (hidden_dim, embed_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.normal(0.0, 1.0 / math.sqrt(hidden_dim), hidden_dim),
        b2=np.zeros(()),
    )


def _hidden(params: NulmParams) -> np.ndarray:
    return np.tanh(params.embeddings @ params.w1.T + params.b1)


def word_logits(params: NulmParams) -> np.ndarray:
    logits = _hidden(params) @ params.w2 + params.b2
    if not np.all(np.isfinite(logits)):
        raise JointTokError("numeric overflow")
    return logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    return logits - (m + np.log(np.sum(np.exp(logits - m))))


def log_unigram_probs(params: NulmParams) -> np.ndarray:
    return _log_softmax(word_logits(params))


def tokenization_logprob(tokenization, log_probs: np.ndarray) -> float:
    ids = tokenization.word_ids if isinstance(tokenization, lat.Tokenization) else tokenization
    return math.fsum(np.asarray(log_probs)[list(ids)].tolist())


def candidate_weights(logprobs: Sequence[float]) -> np.ndarray:
    """Renormalized candidate probabilities p_n / sum_m p_m, computed in log space."""
    s = np.asarray(logprobs, dtype=np.float64)
    w = np.exp(s - s.max())
    return w / w.sum()


def weighted_loss(weights: np.ndarray, losses: Sequence[float]) -> float:
    """Convex combination of losses, exact when all losses are equal."""
    ell = np.asarray(losses, dtype=np.float64)
    lo, hi = float(ell.min()), float(ell.max())
    return min(max(lo + math.fsum((weights * (ell - lo)).tolist()), lo), hi)


def accumulate_logprob_grad(g_logp: np.ndarray, log_probs: np.ndarray,
                            candidates: Sequence, losses: Sequence[float]) -> tuple[float, np.ndarray]:
    """Add dL_s/dlog p(w) for one sentence into ``g_logp``; return (L_s, weights)."""
    if len(candidates) != len(losses) or not candidates:
        raise ValueError("need one loss per candidate and at least one candidate")
    if not all(math.isfinite(x) for x in losses):
        raise ValueError("losses must be finite")
    scores = [tokenization_logprob(c, log_probs) for c in candidates]
    a = candidate_weights(scores)
    total = weighted_loss(a, losses)
    for c, a_n, ell in zip(candidates, a, losses):
        coef = a_n * (ell - total)
        if coef != 0.0:
            ids = c.word_ids if isinstance(c, lat.Tokenization) else c
            np.add.at(g_logp, list(ids), coef)
    return total, a


def backprop_logprob_grad(params: NulmParams, g_logp: np.ndarray) -> NulmParams:
    """Chain a gradient on log p(w) through the softmax and the MLP."""
    hidden = _hidden(params)
    logits = hidden @ params.w2 + params.b2
    probs = np.exp(_log_softmax(logits))
    g_logits = g_logp - probs * g_logp.sum()
    g_w2 = hidden.T @ g_logits
    g_b2 = np.asarray(g_logits.sum())
    g_pre = np.outer(g_logits, params.w2) * (1.0 - hidden * hidden)
    return NulmParams(
        embeddings=g_pre @ params.w1,
        w1=g_pre.T @ params.embeddings,
        b1=g_pre.sum(axis=0),
        w2=g_w2,
        b2=g_b2,
    )


def tokenizer_loss_and_grad(params: NulmParams, candidates: Sequence,
                            losses: Sequence[float]) -> tuple[float, NulmParams]:
    """Probability-weighted candidate loss and its gradient w.r.t. the NULM."""
    log_probs = log_unigram_probs(params)
    g_logp = np.zeros(params.vocab_size)
    total, _ = accumulate_logprob_grad(g_logp, log_probs, candidates, losses)
    if not g_logp.any():
        return total, params.zeros_like()
    return total, backprop_logprob_grad(params, g_logp)


def kl_to_seed(params: NulmParams, seed_logprobs: np.ndarray) -> float:
    seed_p = np.exp(seed_logprobs)
    return float(np.sum(seed_p * (seed_logprobs - log_unigram_probs(params))))


@dataclass
class PretrainResult:
    params: NulmParams
    converged: bool
    epochs: int
    kl: float


def pretrain(params: NulmParams, seed: SeedVocab, tol: float = PRETRAIN_TOL,
             max_epochs: int = PRETRAIN_MAX_EPOCHS, lr: float = 1e-3) -> PretrainResult:
    """Fit p(w) to the seed distribution by full-batch Adam on cross-entropy.

    Stops once KL(seed || model) < ``tol``; hitting ``max_epochs`` first
    returns ``converged=False`` with a warning instead of raising.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if params.vocab_size != len(seed):
        raise ValueError("parameter rows do not match the vocabulary")
    params = params.copy()
    opt = AdamState(lr=lr)
    target = np.exp(seed.logprobs)
    kl = kl_to_seed(params, seed.logprobs)
    epoch = 0
    while kl >= tol and epoch < max_epochs:
        # d(cross-entropy)/d(log p) is -target; backprop handles the softmax
        grads = backprop_logprob_grad(params, -target)
        adam_update_(params, grads, opt)
        epoch += 1
        kl = kl_to_seed(params, seed.logprobs)
    converged = kl < tol
    if not converged:
        logger.warning("NULM pretraining stopped at %d epochs with KL %.3g", epoch, kl)
    return PretrainResult(params, converged, epoch, kl)


class UnigramTokenizer:
    """Lattice tokenizer driven by fixed unigram log-probabilities.

    Lattices depend only on the vocabulary, so they are cached per sentence.
    """

    def __init__(self, vocab: SeedVocab, logprobs: np.ndarray | None = None):
        self.vocab = vocab
        self._fixed = vocab.logprobs if logprobs is None else np.asarray(logprobs, dtype=np.float64)
        self._lattices: dict[tuple[str, bool], lat.Lattice] = {}

    def log_probs(self) -> np.ndarray:
        return self._fixed

    def lattice(self, sentence: str, allow_unk: bool = False) -> lat.Lattice:
        key = (sentence, allow_unk)
        cached = self._lattices.get(key)
        if cached is None:
            cached = self._lattices[key] = lat.build_lattice(sentence, self.vocab, allow_unk)
        return cached

    def _scores(self, allow_unk: bool) -> np.ndarray:
        lp = self.log_probs()
        return lat.with_unk(lp) if allow_unk else lp

    def viterbi(self, sentence: str, allow_unk: bool = False) -> lat.Tokenization:
        return lat.viterbi(self.lattice(sentence, allow_unk), self._scores(allow_unk))

    def nbest(self, sentence: str, n: int, allow_unk: bool = False) -> list[lat.Tokenization]:
        return lat.nbest(self.lattice(sentence, allow_unk), self._scores(allow_unk), n)

    def sample(self, sentence: str, alpha: float, k: int | None, rng: np.random.Generator,
               allow_unk: bool = False) -> lat.Tokenization:
        lattice = self.lattice(sentence, allow_unk)
        scores = self._scores(allow_unk)
        if k is None:
            return lat.ffbs_sample(lattice, scores, alpha, rng)
        return lat.kbest_sample(lattice, scores, alpha, k, rng)

    def tokenize(self, sentence: str) -> list[str]:
        return self.viterbi(sentence, allow_unk=True).pieces(sentence)


class NulmTokenizer(UnigramTokenizer):
    """A vocabulary plus NULM parameters and their optimizer state."""

    def __init__(self, vocab: SeedVocab, params: NulmParams, opt: AdamState | None = None,
                 rng_seed: int = 0):
        if params.vocab_size != len(vocab):
            raise ValueError("parameter rows do not match the vocabulary")
        super().__init__(vocab)
        self.params = params
        self.opt = opt if opt is not None else AdamState()
        self.rng_seed = rng_seed
        self.pretrain_result: PretrainResult | None = None
        self._logp: np.ndarray | None = None
        self._logp_digest: str | None = None

    @classmethod
    def from_seed(cls, vocab: SeedVocab, embed_dim: int = 64, hidden_dim: int = 64,
                  seed: int = 0, tol: float = PRETRAIN_TOL, max_epochs: int = PRETRAIN_MAX_EPOCHS,
                  lr: float = 1e-3, pretrain_lr: float = 1e-3) -> "NulmTokenizer":
        """Random init, then pretrain towards the seed unigram distribution."""
        params = init_params(len(vocab), embed_dim, hidden_dim, np.random.default_rng(seed))
        result = pretrain(params, vocab, tol, max_epochs, pretrain_lr)
        tok = cls(vocab, result.params, AdamState(lr=lr), rng_seed=seed)
        tok.pretrain_result = result
        return tok

    def copy(self) -> "NulmTokenizer":
        out = NulmTokenizer(self.vocab, self.params.copy(), self.opt.copy(), self.rng_seed)
        out._lattices = self._lattices
        return out

    def log_probs(self) -> np.ndarray:
        digest = self.params.digest()
        if self._logp is None or digest != self._logp_digest:
            self._logp = log_unigram_probs(self.params)
            self._logp_digest = digest
        return self._logp

    def update(self, grads: NulmParams) -> None:
        adam_update_(self.params, grads, self.opt)
        self._logp = None

    def to_doc(self) -> dict:
        d, h = self.params.dims
        return {
            "kind": "nulm",
            "dims": {"vocab_size": len(self.vocab), "embed_dim": d, "hidden_dim": h},
            "vocab": {"surfaces": list(self.vocab.surfaces), "seed_logprobs": self.vocab.logprobs,
                      "max_word_len": self.vocab.max_word_len},
            "params": self.params.arrays(),
            "optimizer": self.opt.to_doc(),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "NulmTokenizer":
        if doc.get("kind") != "nulm":
            raise ValueError("snapshot does not hold a NULM")
        v = doc["vocab"]
        vocab = SeedVocab(v["surfaces"], np.array(v["seed_logprobs"], dtype=np.float64),
                          int(v["max_word_len"]))
        p = doc["params"]
        params = NulmParams(**{n: snapshot.array(p[n]) for n in NulmParams.names})
        return cls(vocab, params, AdamState.from_doc(doc["optimizer"]), int(doc["rng_seed"]))

    def save(self, path) -> None:
        snapshot.save(self.to_doc(), path)

    @classmethod
    def load(cls, path) -> "NulmTokenizer":
        return cls.from_doc(snapshot.load(path))


__all__ = [
    "NulmParams", "NulmTokenizer", "UnigramTokenizer", "PretrainResult", "init_params", "word_logits",
    "log_unigram_probs", "tokenization_logprob", "candidate_weights", "tokenizer_loss_and_grad",
    "accumulate_logprob_grad", "backprop_logprob_grad", "pretrain", "kl_to_seed", "apply_update",
]
