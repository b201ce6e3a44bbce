"""Joint tokenizer/model training, tokenizer-only post-processing, and evaluation.

Per example, the tokenizer step scores the N-best segmentations with the
current model (read-only) and moves the NULM towards the low-loss ones; the
model step trains on one segmentation sampled from the same pre-step NULM.
Within a mini-batch both steps see pre-batch parameters, and gradients are
summed in example order so runs are bit-reproducible.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import lattice as lat
from .downstream import MeanEmbedClassifier
from .nulm import NulmParams, NulmTokenizer, accumulate_logprob_grad, backprop_logprob_grad
from .synth import LabeledExample

logger = logging.getLogger(__name__)

SCHEDULES = ("both", "a_then_b", "b_then_a", "random")


@dataclass
class TrainConfig:
    n_best: int = 3
    alpha: float = 0.2
    k_candidates: int | None = None  # None means K = infinity (FFBS)
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    schedule: str = "both"
    share_nulm: bool = True
    post_epochs: int = 5
    update_tokenizer: bool = True
    track_pattern: str | None = None
    metrics_path: str | None = None

    def __post_init__(self):
        if self.n_best < 1:
            raise ValueError("n_best must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.k_candidates is not None and self.k_candidates < 1:
            raise ValueError("k_candidates must be >= 1 or None")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.post_epochs < 1:
            raise ValueError("post_epochs must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {', '.join(SCHEDULES)}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    tokenizers: tuple[NulmTokenizer, ...]
    model: MeanEmbedClassifier
    metrics: list[dict]
    initial: dict = field(default_factory=dict)


def schedule_gate(strategy: str, epoch: int, total_epochs: int,
                  rng: np.random.Generator | None = None) -> tuple[bool, bool]:
    """Which of the two NULMs may update at this epoch / mini-batch."""
    if not 0 <= epoch < total_epochs:
        raise ValueError("epoch must lie in [0, total_epochs)")
    if strategy == "both":
        return True, True
    first_half = epoch < total_epochs / 2
    if strategy == "a_then_b":
        return first_half, not first_half
    if strategy == "b_then_a":
        return not first_half, first_half
    if strategy == "random":
        if rng is None:
            raise ValueError("random schedule needs an rng")
        a = bool(rng.random() < 0.5)
        return a, not a
    raise ValueError(f"unknown schedule {strategy!r}")


def _sample(tok: NulmTokenizer, text: str, logp: np.ndarray, cfg: TrainConfig,
            rng: np.random.Generator) -> lat.Tokenization:
    lattice = tok.lattice(text)
    if cfg.k_candidates is None:
        return lat.ffbs_sample(lattice, logp, cfg.alpha, rng)
    return lat.kbest_sample(lattice, logp, cfg.alpha, cfg.k_candidates, rng)


@dataclass
class _BatchStats:
    tokenizer_losses: list[float] = field(default_factory=list)
    model_losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    updates: list[int] = field(default_factory=lambda: [0, 0])


def _apply_tokenizer_grads(sides: Sequence[tuple[NulmTokenizer, np.ndarray]], n_examples: int,
                           stats: _BatchStats) -> None:
    """Backprop each side's log-prob gradient and update; a shared NULM gets the sum."""
    pending: list[tuple[NulmTokenizer, NulmParams]] = []
    for tok, g_logp in sides:
        if g_logp is None:
            continue
        grads = (backprop_logprob_grad(tok.params, g_logp / n_examples) if g_logp.any()
                 else tok.params.zeros_like())
        for other, acc in pending:
            if other is tok:
                acc.add_(grads)
                break
        else:
            pending.append((tok, grads))
    for tok, grads in pending:
        norm = grads.norm()
        stats.grad_norms.append(norm)
        if norm > 0.0:
            tok.update(grads)


def _single_batch(batch: Sequence[LabeledExample], tok: NulmTokenizer, model, cfg: TrainConfig,
                  rng: np.random.Generator, train_model: bool, stats: _BatchStats) -> None:
    logp = tok.log_probs()
    g_logp = np.zeros(len(tok.vocab)) if cfg.update_tokenizer else None
    samples = []
    for ex in batch:
        text = ex.texts[0]
        if g_logp is not None:
            cands = lat.nbest(tok.lattice(text), logp, cfg.n_best)
            losses = [model.loss((c,), ex.label) for c in cands]
            total, _ = accumulate_logprob_grad(g_logp, logp, cands, losses)
            stats.tokenizer_losses.append(total)
        if train_model:
            samples.append(((_sample(tok, text, logp, cfg, rng),), ex.label))
    if g_logp is not None:
        stats.updates[0] += 1
        _apply_tokenizer_grads([(tok, g_logp)], len(batch), stats)
    if train_model:
        stats.model_losses.extend(model.train_batch(samples))


def _pair_batch(batch: Sequence[LabeledExample], tok_a: NulmTokenizer, tok_b: NulmTokenizer,
                model, cfg: TrainConfig, rng: np.random.Generator, gate: tuple[bool, bool],
                train_model: bool, stats: _BatchStats) -> None:
    logp_a, logp_b = tok_a.log_probs(), tok_b.log_probs()
    use_a, use_b = (gate[0] and cfg.update_tokenizer), (gate[1] and cfg.update_tokenizer)
    g_a = np.zeros(len(tok_a.vocab)) if use_a else None
    g_b = np.zeros(len(tok_b.vocab)) if use_b else None
    samples = []
    for ex in batch:
        text_a, text_b = ex.texts
        s_a = _sample(tok_a, text_a, logp_a, cfg, rng)
        s_b = _sample(tok_b, text_b, logp_b, cfg, rng)
        if use_a:
            cands = lat.nbest(tok_a.lattice(text_a), logp_a, cfg.n_best)
            losses = [model.loss((c, s_b), ex.label) for c in cands]
            stats.tokenizer_losses.append(accumulate_logprob_grad(g_a, logp_a, cands, losses)[0])
        if use_b:
            cands = lat.nbest(tok_b.lattice(text_b), logp_b, cfg.n_best)
            losses = [model.loss((s_a, c), ex.label) for c in cands]
            stats.tokenizer_losses.append(accumulate_logprob_grad(g_b, logp_b, cands, losses)[0])
        samples.append(((s_a, s_b), ex.label))
    stats.updates[0] += int(use_a)
    stats.updates[1] += int(use_b)
    _apply_tokenizer_grads([(tok_a, g_a), (tok_b, g_b)], len(batch), stats)
    if train_model:
        stats.model_losses.extend(model.train_batch(samples))


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    s_shuffle, s_sample, s_gate = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(s_shuffle), np.random.default_rng(s_sample),
            np.random.default_rng(s_gate))


def train_step_single(example: LabeledExample, nulm: NulmTokenizer, model, cfg: TrainConfig,
                      rng: np.random.Generator) -> tuple[float, float]:
    """Tokenizer update from N-best losses, then a model update on one sample."""
    if len(example.texts) != 1:
        raise ValueError("train_step_single needs a one-text example")
    stats = _BatchStats()
    _single_batch([example], nulm, model, cfg, rng, True, stats)
    ls = stats.tokenizer_losses[0] if stats.tokenizer_losses else math.nan
    return ls, stats.model_losses[0]


def train_step_pair(example: LabeledExample, nulm_a: NulmTokenizer, nulm_b: NulmTokenizer, model,
                    cfg: TrainConfig, rng: np.random.Generator,
                    gate: tuple[bool, bool] = (True, True)) -> tuple[float, float, float]:
    """Per-side tokenizer updates (each paired with a sample of the other side), then the model."""
    if len(example.texts) != 2:
        raise ValueError("train_step_pair needs a two-text example")
    if cfg.share_nulm and nulm_a is not nulm_b:
        raise ValueError("share_nulm requires the same tokenizer on both sides")
    stats = _BatchStats()
    _pair_batch([example], nulm_a, nulm_b, model, cfg, rng, gate, True, stats)
    losses = iter(stats.tokenizer_losses)
    l_a = next(losses) if gate[0] and cfg.update_tokenizer else math.nan
    l_b = next(losses) if gate[1] and cfg.update_tokenizer else math.nan
    return l_a, l_b, stats.model_losses[0]


# -- evaluation ------------------------------------------------------------

def classification_scores(y_true: Sequence[int], y_pred: Sequence[int]) -> dict[str, float]:
    """Accuracy and macro-F1 over the classes seen in either sequence."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        return {"accuracy": math.nan, "macro_f1": math.nan}
    f1s = []
    for c in np.union1d(y_true, y_pred):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        f1s.append(2 * tp / (2 * tp + fp + fn))
    return {"accuracy": float(np.mean(y_true == y_pred)), "macro_f1": float(np.mean(f1s))}


def _as_pair(tokenizers) -> tuple[NulmTokenizer, NulmTokenizer]:
    if isinstance(tokenizers, NulmTokenizer):
        return tokenizers, tokenizers
    toks = tuple(tokenizers)
    return (toks[0], toks[0]) if len(toks) == 1 else (toks[0], toks[1])


def evaluate(examples: Sequence[LabeledExample], tokenizers, model) -> dict[str, float]:
    """Viterbi-tokenize every input, predict, and score."""
    tok_a, tok_b = _as_pair(tokenizers)
    y_true, y_pred, n_tokens, n_texts = [], [], 0, 0
    for ex in examples:
        toks = [tok.viterbi(text, allow_unk=True) for tok, text in zip((tok_a, tok_b), ex.texts)]
        y_true.append(ex.label)
        y_pred.append(model.predict(toks))
        n_tokens += sum(len(t) for t in toks)
        n_texts += len(toks)
    out = classification_scores(y_true, y_pred)
    out["mean_tokens"] = n_tokens / n_texts if n_texts else math.nan
    return out


def pattern_intact_prob(tok: NulmTokenizer, text: str, pattern: str) -> float:
    """P(no token boundary splits any occurrence of ``pattern``) under the NULM."""
    forbidden = []
    start = text.find(pattern)
    while start >= 0:
        forbidden.extend(range(start + 1, start + len(pattern)))
        start = text.find(pattern, start + 1)
    lattice = tok.lattice(text)
    return lat.mass_without_boundaries(lattice, tok.log_probs(), forbidden)


def tracked_mass(examples: Sequence[LabeledExample], tokenizers, pattern: str) -> float:
    """Mean pattern-intact probability over every text containing ``pattern``."""
    tok_a, tok_b = _as_pair(tokenizers)
    vals = [pattern_intact_prob(tok, text, pattern)
            for ex in examples for tok, text in zip((tok_a, tok_b), ex.texts) if pattern in text]
    return float(np.mean(vals)) if vals else math.nan


def count_tokens(sentences: Sequence[str], tokenizer) -> int:
    return sum(len(tokenizer.viterbi(s, allow_unk=True)) for s in sentences)


def token_ratio(sentences: Sequence[str], vocab, logprobs_variant, logprobs_baseline) -> float:
    """Total Viterbi token count under ``variant`` divided by that under ``baseline``."""
    lp_v = lat.with_unk(logprobs_variant)
    lp_b = lat.with_unk(logprobs_baseline)
    n_v = n_b = 0
    for s in sentences:
        lattice = lat.build_lattice(s, vocab, allow_unk=True)
        n_v += len(lat.viterbi(lattice, lp_v))
        n_b += len(lat.viterbi(lattice, lp_b))
    return n_v / n_b


# -- loops -----------------------------------------------------------------

def _record(epoch: int, toks: tuple[NulmTokenizer, ...], model, stats: _BatchStats | None,
            cfg: TrainConfig, eval_set, track_set) -> dict:
    rec: dict = {"epoch": epoch}
    if stats is not None:
        rec["tokenizer_loss"] = float(np.mean(stats.tokenizer_losses)) if stats.tokenizer_losses else None
        rec["downstream_loss"] = float(np.mean(stats.model_losses)) if stats.model_losses else None
        rec["tokenizer_grad_norm_max"] = max(stats.grad_norms, default=0.0)
        rec["tokenizer_grad_norm_mean"] = float(np.mean(stats.grad_norms)) if stats.grad_norms else 0.0
        rec["tokenizer_updates"] = list(stats.updates)
    if eval_set:
        ev = evaluate(eval_set, toks, model)
        rec.update({"eval_accuracy": ev["accuracy"], "eval_macro_f1": ev["macro_f1"],
                    "mean_tokens": ev["mean_tokens"]})
    if cfg.track_pattern and track_set:
        rec["tracked_mass"] = tracked_mass(track_set, toks, cfg.track_pattern)
    rec["nulm_digests"] = [t.params.digest() if hasattr(t, "params") else None for t in toks]
    rec["model_digest"] = model.params.digest()
    return rec


def _unique(toks: Sequence[NulmTokenizer]) -> tuple[NulmTokenizer, ...]:
    out: list[NulmTokenizer] = []
    for t in toks:
        if all(t is not o for o in out):
            out.append(t)
    return tuple(out)


def _run(examples: Sequence[LabeledExample], tokenizers, model, cfg: TrainConfig, epochs: int,
         train_model: bool, eval_set, track_set) -> TrainResult:
    if not examples:
        raise ValueError("empty training corpus")
    pair = len(examples[0].texts) == 2
    if pair:
        tok_a, tok_b = _as_pair(tokenizers)
        if cfg.share_nulm and tok_a is not tok_b:
            raise ValueError("share_nulm requires one tokenizer for both sides")
        toks = (tok_a, tok_b)
    else:
        toks = (_as_pair(tokenizers)[0],)
    uniq = _unique(toks)
    shuffle_rng, sample_rng, gate_rng = _rngs(cfg.seed)
    initial = _record(0, uniq, model, None, cfg, eval_set, track_set)
    metrics: list[dict] = []
    out = Path(cfg.metrics_path) if cfg.metrics_path else None
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("", encoding="utf-8")
    for epoch in range(epochs):
        stats = _BatchStats()
        order = shuffle_rng.permutation(len(examples))
        for start in range(0, len(order), cfg.batch_size):
            batch = [examples[i] for i in order[start:start + cfg.batch_size]]
            if pair:
                gate = schedule_gate(cfg.schedule, epoch, epochs, gate_rng)
                _pair_batch(batch, toks[0], toks[1], model, cfg, sample_rng, gate, train_model, stats)
            else:
                _single_batch(batch, toks[0], model, cfg, sample_rng, train_model, stats)
        rec = _record(epoch + 1, uniq, model, stats, cfg, eval_set, track_set)
        metrics.append(rec)
        logger.info("epoch %d: %s", epoch + 1, rec)
        if out is not None:
            with out.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return TrainResult(uniq, model, metrics, initial)


def train_joint(examples: Sequence[LabeledExample], tokenizers, model, cfg: TrainConfig,
                eval_set: Sequence[LabeledExample] | None = None,
                track_set: Sequence[LabeledExample] | None = None,
                out_dir=None) -> TrainResult:
    """Train tokenizer(s) and model together for ``cfg.epochs`` epochs."""
    result = _run(examples, tokenizers, model, cfg, cfg.epochs, True, eval_set, track_set)
    if out_dir is not None:
        save_state(out_dir, result.tokenizers, result.model)
    return result


def post_train(examples: Sequence[LabeledExample], tokenizers, frozen_model, cfg: TrainConfig,
               eval_set: Sequence[LabeledExample] | None = None,
               track_set: Sequence[LabeledExample] | None = None,
               out_dir=None) -> TrainResult:
    """Tokenizer-only training against a frozen, already-trained model."""
    before = frozen_model.params.digest()
    tok_cfg = TrainConfig(**{**cfg.to_dict(), "update_tokenizer": True})
    result = _run(examples, tokenizers, frozen_model, tok_cfg, cfg.post_epochs, False,
                  eval_set, track_set)
    if frozen_model.params.digest() != before:
        raise RuntimeError("post-processing modified the downstream model")
    if out_dir is not None:
        save_state(out_dir, result.tokenizers, None)
    return result


def save_state(out_dir, tokenizers: Sequence[NulmTokenizer], model) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = ["nulm.json"] if len(tokenizers) == 1 else ["nulm_a.json", "nulm_b.json"]
    for name, tok in zip(names, tokenizers):
        tok.save(out / name)
    if model is not None:
        model.save(out / "model.json")
