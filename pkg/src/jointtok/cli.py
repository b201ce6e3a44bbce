"""Command-line entry points.

Every command takes its settings from an optional JSON ``--config`` file,
overridden by flags. All settings are validated in one pass, and the fully
resolved config is written next to the command's outputs.

Errors are reported as a single ``error: <kind>: <message>`` line on stderr
with exit status 2 (configuration) or 1 (runtime).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import snapshot
from .downstream import MeanEmbedClassifier
from .exceptions import ConfigError, JointTokError
from .nulm import NulmTokenizer, UnigramTokenizer
from .synth import read_corpus
from .trainer import TrainConfig, count_tokens, evaluate, post_train, train_joint
from .vocab import collect_candidates, em_train_seed, load_vocab, save_vocab, trim_vocab

REQUIRED = object()


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(value)


def _k(value) -> int | None:
    if value is None or str(value).strip().lower() in ("inf", "infinity", "none"):
        return None
    k = int(value)
    if k < 1:
        raise ValueError(value)
    return k


def _int(value) -> int:
    if isinstance(value, float) and not value.is_integer():
        raise ValueError(value)
    return int(value)


@dataclass(frozen=True)
class Opt:
    name: str
    convert: Callable[[Any], Any]
    default: Any = REQUIRED
    help: str = ""


_TRAIN_OPTS = [
    Opt("n_best", _int, 3, "N-best candidates per tokenizer step"),
    Opt("alpha", float, 0.2, "sampling temperature"),
    Opt("k_candidates", _k, None, "K for K-best sampling; 'inf' uses FFBS"),
    Opt("batch_size", _int, 32),
    Opt("seed", _int, 0),
    Opt("schedule", str, "both", "both | a_then_b | b_then_a | random"),
    Opt("share_nulm", _bool, True),
    Opt("track_pattern", str, None),
]

COMMANDS: dict[str, list[Opt]] = {
    "build-vocab": [
        Opt("corpus", str, help="sentences, one per line (or a labelled TSV with --labeled)"),
        Opt("output", str, help="vocabulary TSV to write"),
        Opt("labeled", _bool, False),
        Opt("max_word_len", _int, 8),
        Opt("min_freq", _int, 2),
        Opt("target_size", _int),
        Opt("shrink_ratio", float, 0.75),
        Opt("iters_per_round", _int, 2),
        Opt("keep_ratio", float, 1.0, "final trimming ratio (0.5 halves the vocabulary)"),
    ],
    "pretrain": [
        Opt("vocab", str),
        Opt("output", str),
        Opt("embed_dim", _int, 64),
        Opt("hidden_dim", _int, 64),
        Opt("seed", _int, 0),
        Opt("tol", float, 1e-7),
        Opt("max_epochs", _int, 100_000),
        Opt("pretrain_lr", float, 1e-3),
        Opt("lr", float, 1e-3, "Adam learning rate stored for joint training"),
    ],
    "train": [
        Opt("train", str, help="labelled TSV"),
        Opt("out_dir", str),
        Opt("nulm", str, help="NULM snapshot (text A, or both texts when shared)"),
        Opt("nulm_b", str, None, help="NULM snapshot for text B when not shared"),
        Opt("eval", str, None),
        Opt("epochs", _int, 10),
        Opt("embed_dim", _int, 16),
        Opt("model_lr", float, 1e-2),
        Opt("num_classes", _int, None),
        Opt("update_tokenizer", _bool, True),
    ] + _TRAIN_OPTS,
    "post-train": [
        Opt("train", str),
        Opt("out_dir", str),
        Opt("nulm", str),
        Opt("nulm_b", str, None),
        Opt("model", str),
        Opt("eval", str, None),
        Opt("post_epochs", _int, 5),
    ] + _TRAIN_OPTS,
    "tokenize": [
        Opt("tokenizer", str, help="NULM snapshot or vocabulary TSV"),
        Opt("input", str, "-"),
        Opt("output", str, "-"),
    ],
    "nbest": [
        Opt("tokenizer", str),
        Opt("n", _int, 3),
        Opt("input", str, "-"),
        Opt("output", str, "-"),
    ],
    "sample": [
        Opt("tokenizer", str),
        Opt("alpha", float, 0.2),
        Opt("k_candidates", _k, None),
        Opt("seed", _int, 0),
        Opt("input", str, "-"),
        Opt("output", str, "-"),
    ],
    "eval": [
        Opt("corpus", str),
        Opt("nulm", str),
        Opt("nulm_b", str, None),
        Opt("model", str),
        Opt("output", str, "-"),
    ],
    "token-ratio": [
        Opt("corpus", str, help="sentences, one per line"),
        Opt("variant", str),
        Opt("baseline", str),
        Opt("output", str, "-"),
    ],
}


def resolve_config(command: str, file_values: dict, flag_values: dict) -> dict:
    """Merge config-file and flag values; report every problem at once."""
    opts = {o.name: o for o in COMMANDS[command]}
    merged = {**file_values, **{k: v for k, v in flag_values.items() if v is not None}}
    missing, invalid = [], []
    unknown = sorted(set(file_values) - set(opts))
    resolved = {}
    for name, opt in opts.items():
        if name not in merged:
            if opt.default is REQUIRED:
                missing.append(name)
            else:
                resolved[name] = opt.default
            continue
        value = merged[name]
        try:
            resolved[name] = None if value is None else opt.convert(value)
        except (TypeError, ValueError):
            invalid.append(f"{name}={value!r}")
    problems = []
    if missing:
        problems.append("missing keys: " + ", ".join(missing))
    if invalid:
        problems.append("invalid values: " + ", ".join(invalid))
    if unknown:
        problems.append("unknown keys: " + ", ".join(unknown))
    if problems:
        raise ConfigError("; ".join(problems))
    return resolved


def _write_resolved(cfg: dict, command: str, where: Path) -> None:
    where.parent.mkdir(parents=True, exist_ok=True)
    where.write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True) + "\n",
                     encoding="utf-8")


def _config_path_for(output: str) -> Path | None:
    return None if output == "-" else Path(output + ".config.json")


def _read_lines(path: str) -> list[str]:
    text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    return [line.rstrip("\r") for line in text.split("\n") if line.rstrip("\r")]


def _emit(text: str, path: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8", newline="\n")


def load_tokenizer(path: str) -> UnigramTokenizer:
    """A NULM snapshot, or a plain vocabulary TSV scored by its seed log-probs."""
    text = Path(path).read_text(encoding="utf-8")
    if text.startswith("{\n"):
        return NulmTokenizer.from_doc(snapshot.loads(text))
    return UnigramTokenizer(load_vocab(path))


def _load_nulms(cfg: dict, share: bool = True):
    tok_a = NulmTokenizer.load(cfg["nulm"])
    if cfg.get("nulm_b"):
        return tok_a, NulmTokenizer.load(cfg["nulm_b"])
    return (tok_a, tok_a) if share else (tok_a, tok_a.copy())


def _train_config(cfg: dict, **extra) -> TrainConfig:
    keys = ("n_best", "alpha", "k_candidates", "batch_size", "seed", "schedule", "share_nulm",
            "track_pattern")
    return TrainConfig(**{k: cfg[k] for k in keys}, **extra)


def cmd_build_vocab(cfg: dict) -> None:
    if cfg["labeled"]:
        sentences = [t for ex in read_corpus(cfg["corpus"]) for t in ex.texts]
    else:
        sentences = _read_lines(cfg["corpus"])
    cands = collect_candidates(sentences, cfg["max_word_len"], cfg["min_freq"])
    vocab = em_train_seed(cands, sentences, cfg["target_size"], cfg["shrink_ratio"],
                          cfg["iters_per_round"])
    if cfg["keep_ratio"] < 1.0:
        vocab = trim_vocab(vocab, cfg["keep_ratio"])
    save_vocab(vocab, cfg["output"])


def cmd_pretrain(cfg: dict) -> None:
    vocab = load_vocab(cfg["vocab"])
    tok = NulmTokenizer.from_seed(vocab, cfg["embed_dim"], cfg["hidden_dim"], cfg["seed"],
                                  cfg["tol"], cfg["max_epochs"], cfg["lr"], cfg["pretrain_lr"])
    tok.save(cfg["output"])
    if not tok.pretrain_result.converged:
        print(f"warning: pretraining did not converge (KL {tok.pretrain_result.kl:.3g})",
              file=sys.stderr)


def cmd_train(cfg: dict) -> None:
    out = Path(cfg["out_dir"])
    train = read_corpus(cfg["train"])
    eval_set = read_corpus(cfg["eval"]) if cfg["eval"] else None
    pair = len(train[0].texts) == 2
    share = cfg["share_nulm"] or not pair
    toks = _load_nulms(cfg, share)
    num_classes = cfg["num_classes"] or max(ex.label for ex in train) + 1
    model = MeanEmbedClassifier.create(len(toks[0].vocab) + 1, num_classes, cfg["embed_dim"],
                                       2 if pair else 1, seed=cfg["seed"], lr=cfg["model_lr"])
    tcfg = _train_config(cfg, epochs=cfg["epochs"], update_tokenizer=cfg["update_tokenizer"],
                         metrics_path=str(out / "metrics.jsonl"))
    tcfg.share_nulm = share
    train_joint(train, toks if pair else toks[0], model, tcfg, eval_set=eval_set,
                track_set=eval_set, out_dir=out)


def cmd_post_train(cfg: dict) -> None:
    out = Path(cfg["out_dir"])
    train = read_corpus(cfg["train"])
    eval_set = read_corpus(cfg["eval"]) if cfg["eval"] else None
    pair = len(train[0].texts) == 2
    share = cfg["share_nulm"] or not pair
    toks = _load_nulms(cfg, share)
    model = MeanEmbedClassifier.load(cfg["model"])
    tcfg = _train_config(cfg, post_epochs=cfg["post_epochs"],
                         metrics_path=str(out / "metrics.jsonl"))
    tcfg.share_nulm = share
    post_train(train, toks if pair else toks[0], model, tcfg, eval_set=eval_set,
               track_set=eval_set, out_dir=out)


def cmd_tokenize(cfg: dict) -> None:
    tok = load_tokenizer(cfg["tokenizer"])
    lines = _read_lines(cfg["input"])
    _emit("".join(" ".join(tok.tokenize(s)) + "\n" for s in lines), cfg["output"])


def cmd_nbest(cfg: dict) -> None:
    tok = load_tokenizer(cfg["tokenizer"])
    blocks = []
    for s in _read_lines(cfg["input"]):
        rows = [f"{t.logprob:.6f}\t{' '.join(t.pieces(s))}\n"
                for t in tok.nbest(s, cfg["n"], allow_unk=True)]
        blocks.append("".join(rows))
    _emit("\n".join(blocks), cfg["output"])


def cmd_sample(cfg: dict) -> None:
    tok = load_tokenizer(cfg["tokenizer"])
    rng = np.random.default_rng(cfg["seed"])
    out = []
    for s in _read_lines(cfg["input"]):
        t = tok.sample(s, cfg["alpha"], cfg["k_candidates"], rng, allow_unk=True)
        out.append(" ".join(t.pieces(s)) + "\n")
    _emit("".join(out), cfg["output"])


def cmd_eval(cfg: dict) -> None:
    corpus = read_corpus(cfg["corpus"])
    toks = _load_nulms(cfg)
    model = MeanEmbedClassifier.load(cfg["model"])
    rec = evaluate(corpus, toks, model)
    _emit(json.dumps(rec, sort_keys=True) + "\n", cfg["output"])


def cmd_token_ratio(cfg: dict) -> None:
    sentences = _read_lines(cfg["corpus"])
    ratio = count_tokens(sentences, load_tokenizer(cfg["variant"])) / count_tokens(
        sentences, load_tokenizer(cfg["baseline"]))
    _emit(f"{ratio:.6f}\n", cfg["output"])


HANDLERS: dict[str, Callable[[dict], None]] = {
    "build-vocab": cmd_build_vocab,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "post-train": cmd_post_train,
    "tokenize": cmd_tokenize,
    "nbest": cmd_nbest,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "token-ratio": cmd_token_ratio,
}


def _resolved_config_target(command: str, cfg: dict) -> Path | None:
    if "out_dir" in cfg:
        return Path(cfg["out_dir"]) / "config.json"
    return _config_path_for(cfg.get("output", "-"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointtok", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with settings; flags override it")
        for o in opts:
            default = "required" if o.default is REQUIRED else f"default: {o.default}"
            p.add_argument("--" + o.name.replace("_", "-"), dest=o.name, default=None,
                           help=f"{o.help} ({default})".strip())
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_values = {}
        if args.config:
            try:
                file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from None
            if not isinstance(file_values, dict):
                raise ConfigError("config file must hold a JSON object")
        cfg = resolve_config(args.command, file_values, flags)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    try:
        HANDLERS[args.command](cfg)
        target = _resolved_config_target(args.command, cfg)
        if target is not None:
            _write_resolved(cfg, args.command, target)
    except (JointTokError, ValueError, OSError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
