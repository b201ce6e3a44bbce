"""scikit-learn style estimators over the functional core.

``SeedVocabLearner`` and ``NeuralUnigramTokenizer`` are transformers from raw
sentences to token lists; ``JointTokenizerClassifier`` jointly fits a NULM
tokenizer and a mean-embedding classifier and predicts labels. All take
their hyperparameters in ``__init__`` only, so ``get_params``/``set_params``,
``clone`` and pipelines work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .downstream import MeanEmbedClassifier
from .nulm import PRETRAIN_MAX_EPOCHS, PRETRAIN_TOL, NulmTokenizer, UnigramTokenizer
from .synth import LabeledExample
from .trainer import TrainConfig, post_train, train_joint
from .vocab import SeedVocab, collect_candidates, em_train_seed, trim_vocab


def check_texts(X, allow_pairs: bool = True) -> list[tuple[str, ...]]:
    """Normalize X to a list of 1- or 2-tuples of non-empty strings."""
    if isinstance(X, str):
        raise ValueError("expected a sequence of texts, got a single string")
    try:
        items = list(X)
    except TypeError:
        raise ValueError("X must be iterable") from None
    if not items:
        raise ValueError("X is empty")
    out = []
    for i, item in enumerate(items):
        texts = (item,) if isinstance(item, str) else tuple(item)
        if not all(isinstance(t, str) and t for t in texts):
            raise ValueError(f"X[{i}] must hold non-empty strings")
        if len(texts) not in ((1, 2) if allow_pairs else (1,)):
            raise ValueError(f"X[{i}] must hold one{' or two' if allow_pairs else ''} text(s)")
        out.append(texts)
    if len({len(t) for t in out}) != 1:
        raise ValueError("mixing single texts and pairs in one X")
    return out


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"y must be 1-D with {n_samples} entries")
    return y


def _flatten(texts: list[tuple[str, ...]]) -> list[str]:
    return [t for item in texts for t in item]


class SeedVocabLearner(TransformerMixin, BaseEstimator):
    """Unigram-EM seed vocabulary; ``transform`` gives seed Viterbi tokens."""

    def __init__(self, max_word_len=8, min_freq=2, target_size=8000, shrink_ratio=0.75,
                 iters_per_round=2, keep_ratio=1.0):
        self.max_word_len = max_word_len
        self.min_freq = min_freq
        self.target_size = target_size
        self.shrink_ratio = shrink_ratio
        self.iters_per_round = iters_per_round
        self.keep_ratio = keep_ratio

    def fit(self, X, y=None):
        sentences = _flatten(check_texts(X))
        cands = collect_candidates(sentences, self.max_word_len, self.min_freq)
        vocab = em_train_seed(cands, sentences, self.target_size, self.shrink_ratio,
                              self.iters_per_round)
        if self.keep_ratio < 1.0:
            vocab = trim_vocab(vocab, self.keep_ratio)
        self.vocab_ = vocab
        self.tokenizer_ = UnigramTokenizer(vocab)
        return self

    def transform(self, X):
        check_is_fitted(self, "vocab_")
        return [self.tokenizer_.tokenize(s) for s in _flatten(check_texts(X, allow_pairs=False))]


class NeuralUnigramTokenizer(TransformerMixin, BaseEstimator):
    """NULM pretrained to a seed vocabulary.

    ``vocab`` may be a fitted :class:`SeedVocab`; when None, one is learned
    from X with ``SeedVocabLearner`` defaults and ``target_size``.
    """

    def __init__(self, vocab=None, target_size=8000, max_word_len=8, embed_dim=64, hidden_dim=64,
                 pretrain_tol=PRETRAIN_TOL, max_pretrain_epochs=PRETRAIN_MAX_EPOCHS, lr=1e-3,
                 random_state=0):
        self.vocab = vocab
        self.target_size = target_size
        self.max_word_len = max_word_len
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.pretrain_tol = pretrain_tol
        self.max_pretrain_epochs = max_pretrain_epochs
        self.lr = lr
        self.random_state = random_state

    def fit(self, X=None, y=None):
        vocab = self.vocab
        if vocab is None:
            if X is None:
                raise ValueError("need X to learn a vocabulary when vocab is None")
            vocab = SeedVocabLearner(self.max_word_len, target_size=self.target_size).fit(X).vocab_
        if not isinstance(vocab, SeedVocab):
            raise ValueError("vocab must be a SeedVocab")
        self.tokenizer_ = NulmTokenizer.from_seed(
            vocab, self.embed_dim, self.hidden_dim, self.random_state, self.pretrain_tol,
            self.max_pretrain_epochs, self.lr)
        self.converged_ = self.tokenizer_.pretrain_result.converged
        return self

    def transform(self, X):
        check_is_fitted(self, "tokenizer_")
        return [self.tokenizer_.tokenize(s) for s in _flatten(check_texts(X, allow_pairs=False))]

    def nbest(self, X, n=3):
        check_is_fitted(self, "tokenizer_")
        return [[(t.logprob, t.pieces(s)) for t in self.tokenizer_.nbest(s, n, allow_unk=True)]
                for s in _flatten(check_texts(X, allow_pairs=False))]

    def sample(self, X, alpha=0.2, k_candidates=None, random_state=0):
        check_is_fitted(self, "tokenizer_")
        rng = np.random.default_rng(random_state)
        return [self.tokenizer_.sample(s, alpha, k_candidates, rng, allow_unk=True).pieces(s)
                for s in _flatten(check_texts(X, allow_pairs=False))]


class JointTokenizerClassifier(ClassifierMixin, BaseEstimator):
    """Mean-embedding classifier trained jointly with its NULM tokenizer(s).

    X holds single texts or text pairs. With pairs and ``share_nulm=False``
    each side gets its own NULM and ``schedule`` decides which may update.
    """

    def __init__(self, vocab=None, target_size=8000, max_word_len=8, n_best=3, alpha=0.2,
                 k_candidates=None, epochs=10, batch_size=32, schedule="both", share_nulm=True,
                 update_tokenizer=True, embed_dim=16, model_lr=1e-2, nulm_embed_dim=64,
                 nulm_hidden_dim=64, nulm_lr=1e-3, post_epochs=5, random_state=0):
        self.vocab = vocab
        self.target_size = target_size
        self.max_word_len = max_word_len
        self.n_best = n_best
        self.alpha = alpha
        self.k_candidates = k_candidates
        self.epochs = epochs
        self.batch_size = batch_size
        self.schedule = schedule
        self.share_nulm = share_nulm
        self.update_tokenizer = update_tokenizer
        self.embed_dim = embed_dim
        self.model_lr = model_lr
        self.nulm_embed_dim = nulm_embed_dim
        self.nulm_hidden_dim = nulm_hidden_dim
        self.nulm_lr = nulm_lr
        self.post_epochs = post_epochs
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(n_best=self.n_best, alpha=self.alpha, k_candidates=self.k_candidates,
                           epochs=self.epochs, batch_size=self.batch_size, seed=self.random_state,
                           schedule=self.schedule, share_nulm=self.share_nulm,
                           update_tokenizer=self.update_tokenizer, post_epochs=self.post_epochs)

    def _examples(self, texts, y) -> list[LabeledExample]:
        index = {c: i for i, c in enumerate(self.classes_)}
        try:
            return [LabeledExample(t, index[label]) for t, label in zip(texts, y)]
        except KeyError as exc:
            raise ValueError(f"unseen label {exc.args[0]!r}") from None

    def fit(self, X, y):
        texts = check_texts(X)
        y = check_labels(y, len(texts))
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_inputs_ = len(texts[0])
        vocab = self.vocab
        if vocab is None:
            vocab = SeedVocabLearner(self.max_word_len, target_size=self.target_size).fit(
                _flatten(texts)).vocab_
        seed = self.random_state
        tok_a = NulmTokenizer.from_seed(vocab, self.nulm_embed_dim, self.nulm_hidden_dim, seed,
                                        lr=self.nulm_lr)
        if self.n_inputs_ == 2 and not self.share_nulm:
            tok_b = NulmTokenizer.from_seed(vocab, self.nulm_embed_dim, self.nulm_hidden_dim,
                                            seed + 1, lr=self.nulm_lr)
        else:
            tok_b = tok_a
        self.model_ = MeanEmbedClassifier.create(len(vocab) + 1, len(self.classes_),
                                                 self.embed_dim, self.n_inputs_, seed=seed,
                                                 lr=self.model_lr)
        cfg = self._config()
        if self.n_inputs_ == 1:
            cfg.share_nulm = True
        result = train_joint(self._examples(texts, y),
                             (tok_a, tok_b) if self.n_inputs_ == 2 else tok_a, self.model_, cfg)
        self.tokenizers_ = (tok_a, tok_b)
        self.metrics_ = result.metrics
        return self

    def refine_tokenizer(self, X, y, epochs=None):
        """Tokenizer-only post-processing against the fitted, frozen classifier."""
        check_is_fitted(self, "model_")
        texts = check_texts(X)
        y = check_labels(y, len(texts))
        cfg = self._config()
        if epochs is not None:
            cfg.post_epochs = epochs
        if self.n_inputs_ == 1:
            cfg.share_nulm = True
        tok_arg = self.tokenizers_ if self.n_inputs_ == 2 else self.tokenizers_[0]
        self.post_metrics_ = post_train(self._examples(texts, y), tok_arg, self.model_, cfg).metrics
        return self

    def _tokenize(self, X):
        check_is_fitted(self, "model_")
        texts = check_texts(X)
        if len(texts[0]) != self.n_inputs_:
            raise ValueError(f"model was fitted on {self.n_inputs_} text(s) per sample")
        return [tuple(tok.viterbi(t, allow_unk=True) for tok, t in zip(self.tokenizers_, item))
                for item in texts]

    def transform(self, X):
        texts = check_texts(X)
        return [[t.pieces(s) for t, s in zip(toks, item)]
                for toks, item in zip(self._tokenize(X), texts)]

    def predict_proba(self, X):
        return np.array([self.model_.predict_proba(toks) for toks in self._tokenize(X)])

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
