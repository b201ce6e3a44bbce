"""Downstream models scored on tokenizations.

Anything with ``loss``, ``train_step`` and ``predict`` can act as the
downstream model; the trainer only ever reads losses. The reference models
here are mean-pooled linear classifiers over token embeddings, for one
input sentence or a pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import snapshot
from .lattice import Tokenization
from .optim import AdamState, ParamSet, adam_update_


class DownstreamModel(Protocol):
    """Contract the trainer relies on.

    ``loss`` and ``predict`` never mutate the model; ``train_step`` returns
    the loss evaluated before its own parameter update.
    """

    def loss(self, inputs: Sequence, label: int) -> float: ...

    def train_step(self, inputs: Sequence, label: int) -> float: ...

    def predict(self, inputs: Sequence) -> int: ...


@dataclass
class ClassifierParams(ParamSet):
    embeddings: np.ndarray  # rows x e
    weight: np.ndarray  # C x (e * n_inputs)
    bias: np.ndarray  # C

    names = ("embeddings", "weight", "bias")

    @property
    def n_inputs(self) -> int:
        return self.weight.shape[1] // self.embeddings.shape[1]

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]


def init_classifier(num_rows: int, num_classes: int, embed_dim: int = 16, n_inputs: int = 1,
                    rng: np.random.Generator | None = None, scale: float = 0.1) -> ClassifierParams:
    if n_inputs not in (1, 2):
        raise ValueError("n_inputs must be 1 or 2")
    width = embed_dim * n_inputs
    if rng is None:
        return ClassifierParams(np.zeros((num_rows, embed_dim)), np.zeros((num_classes, width)),
                                np.zeros(num_classes))
    return ClassifierParams(rng.normal(0.0, scale, (num_rows, embed_dim)),
                            rng.normal(0.0, scale, (num_classes, width)), np.zeros(num_classes))


def _ids(x) -> list[int]:
    ids = list(x.word_ids) if isinstance(x, Tokenization) else [int(i) for i in x]
    if not ids:
        raise ValueError("tokenization must be non-empty")
    return ids


def _features(params: ClassifierParams, inputs: Sequence) -> tuple[np.ndarray, list[list[int]]]:
    if len(inputs) != params.n_inputs:
        raise ValueError(f"model expects {params.n_inputs} input(s), got {len(inputs)}")
    id_lists = [_ids(x) for x in inputs]
    feats = np.concatenate([params.embeddings[ids].mean(axis=0) for ids in id_lists])
    return feats, id_lists


def _check_label(params: ClassifierParams, label: int) -> int:
    label = int(label)
    if not 0 <= label < params.num_classes:
        raise ValueError(f"label {label} out of range for {params.num_classes} classes")
    return label


def _logits(params: ClassifierParams, feats: np.ndarray) -> np.ndarray:
    return params.weight @ feats + params.bias


def _xent(logits: np.ndarray, label: int) -> float:
    m = logits.max()
    return float(m + np.log(np.sum(np.exp(logits - m))) - logits[label])


def classifier_loss(params: ClassifierParams, inputs: Sequence, label: int) -> float:
    label = _check_label(params, label)
    feats, _ = _features(params, inputs)
    return _xent(_logits(params, feats), label)


def classifier_loss_and_grad(params: ClassifierParams, inputs: Sequence,
                             label: int) -> tuple[float, ClassifierParams]:
    label = _check_label(params, label)
    feats, id_lists = _features(params, inputs)
    logits = _logits(params, feats)
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    dz = probs.copy()
    dz[label] -= 1.0
    g_feat = params.weight.T @ dz
    g_emb = np.zeros_like(params.embeddings)
    e = params.embeddings.shape[1]
    for k, ids in enumerate(id_lists):
        np.add.at(g_emb, ids, g_feat[k * e:(k + 1) * e] / len(ids))
    grads = ClassifierParams(g_emb, np.outer(dz, feats), dz)
    return _xent(logits, label), grads


def mean_embed_loss(params: ClassifierParams, tokenization, label: int) -> float:
    return classifier_loss(params, (tokenization,), label)


def pair_loss(params: ClassifierParams, tok_a, tok_b, label: int) -> float:
    return classifier_loss(params, (tok_a, tok_b), label)


def _train_step(params: ClassifierParams, inputs: Sequence, label: int, opt: AdamState) -> float:
    loss, grads = classifier_loss_and_grad(params, inputs, label)
    adam_update_(params, grads, opt, sparse=("embeddings",))
    return loss


def mean_embed_train_step(params: ClassifierParams, tokenization, label: int, opt: AdamState) -> float:
    """One Adam step in place; returns the pre-update loss."""
    return _train_step(params, (tokenization,), label, opt)


def pair_train_step(params: ClassifierParams, tok_a, tok_b, label: int, opt: AdamState) -> float:
    return _train_step(params, (tok_a, tok_b), label, opt)


class MeanEmbedClassifier:
    """Mean-pooled embedding classifier holding its own parameters and Adam state.

    With ``n_inputs=2`` the two pooled vectors are concatenated before the
    linear head, so the model is sensitive to input order.
    """

    def __init__(self, params: ClassifierParams, opt: AdamState | None = None, rng_seed: int = 0):
        self.params = params
        self.opt = opt if opt is not None else AdamState()
        self.rng_seed = rng_seed

    @classmethod
    def create(cls, num_rows: int, num_classes: int, embed_dim: int = 16, n_inputs: int = 1,
               seed: int = 0, lr: float = 1e-3) -> "MeanEmbedClassifier":
        params = init_classifier(num_rows, num_classes, embed_dim, n_inputs, np.random.default_rng(seed))
        return cls(params, AdamState(lr=lr), seed)

    @property
    def n_inputs(self) -> int:
        return self.params.n_inputs

    @property
    def num_classes(self) -> int:
        return self.params.num_classes

    def loss(self, inputs: Sequence, label: int) -> float:
        return classifier_loss(self.params, inputs, label)

    def loss_and_grad(self, inputs: Sequence, label: int) -> tuple[float, ClassifierParams]:
        return classifier_loss_and_grad(self.params, inputs, label)

    def train_step(self, inputs: Sequence, label: int) -> float:
        return _train_step(self.params, inputs, label, self.opt)

    def train_batch(self, batch: Sequence[tuple[Sequence, int]]) -> list[float]:
        """One Adam step on the mean gradient of ``batch``; returns pre-update losses."""
        total = self.params.zeros_like()
        losses = []
        for inputs, label in batch:
            loss, grads = classifier_loss_and_grad(self.params, inputs, label)
            total.add_(grads)
            losses.append(loss)
        for a in total.arrays().values():
            a /= len(batch)
        adam_update_(self.params, total, self.opt, sparse=("embeddings",))
        return losses

    def predict_proba(self, inputs: Sequence) -> np.ndarray:
        feats, _ = _features(self.params, inputs)
        logits = _logits(self.params, feats)
        p = np.exp(logits - logits.max())
        return p / p.sum()

    def predict(self, inputs: Sequence) -> int:
        return int(np.argmax(self.predict_proba(inputs)))

    def copy(self) -> "MeanEmbedClassifier":
        return MeanEmbedClassifier(self.params.copy(), self.opt.copy(), self.rng_seed)

    def to_doc(self) -> dict:
        rows, e = self.params.embeddings.shape
        return {
            "kind": "mean_embed_classifier",
            "dims": {"rows": rows, "embed_dim": e, "num_classes": self.num_classes,
                     "n_inputs": self.n_inputs},
            "params": self.params.arrays(),
            "optimizer": self.opt.to_doc(),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "MeanEmbedClassifier":
        if doc.get("kind") != "mean_embed_classifier":
            raise ValueError("snapshot does not hold a mean-embedding classifier")
        p = doc["params"]
        params = ClassifierParams(**{n: snapshot.array(p[n]) for n in ClassifierParams.names})
        return cls(params, AdamState.from_doc(doc["optimizer"]), int(doc["rng_seed"]))

    def save(self, path) -> None:
        snapshot.save(self.to_doc(), path)

    @classmethod
    def load(cls, path) -> "MeanEmbedClassifier":
        return cls.from_doc(snapshot.load(path))
