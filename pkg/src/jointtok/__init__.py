"""Joint optimization of a neural unigram tokenizer and a downstream model."""

from .downstream import MeanEmbedClassifier
from .estimators import JointTokenizerClassifier, NeuralUnigramTokenizer, SeedVocabLearner
from .exceptions import ConfigError, JointTokError, LatticeError, VocabError
from .lattice import Lattice, Tokenization, build_lattice, nbest, viterbi
from .nulm import NulmTokenizer, UnigramTokenizer
from .synth import LabeledExample, SynthSpec, generate_pair_task, generate_pattern_task
from .trainer import TrainConfig, evaluate, post_train, train_joint
from .vocab import SeedVocab, collect_candidates, em_train_seed, load_vocab, save_vocab, trim_vocab

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "JointTokError", "JointTokenizerClassifier", "LabeledExample", "Lattice",
    "LatticeError", "MeanEmbedClassifier", "NeuralUnigramTokenizer", "NulmTokenizer",
    "SeedVocab", "SeedVocabLearner", "SynthSpec", "Tokenization", "TrainConfig",
    "UnigramTokenizer", "VocabError", "build_lattice", "collect_candidates", "em_train_seed",
    "evaluate", "generate_pair_task", "generate_pattern_task", "load_vocab", "nbest",
    "post_train", "save_vocab", "train_joint", "trim_vocab", "viterbi",
]
