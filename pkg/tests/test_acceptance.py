"""End-to-end acceptance criteria, one test per criterion.

Each criterion is a plain function returning a dict of results so that the
determinism criterion can rerun it and compare bit-for-bit. The first runs
are cached per module. A PASS/FAIL line per criterion is printed in the
terminal summary.
"""

import math
import time

import numpy as np
import pytest

import oracles
from jointtok import lattice as lat
from jointtok.downstream import MeanEmbedClassifier
from jointtok.nulm import NulmTokenizer, candidate_weights, log_unigram_probs, tokenizer_loss_and_grad
from jointtok.optim import AdamState
from jointtok.synth import SynthSpec, generate_pair_task, generate_pattern_task
from jointtok.trainer import TrainConfig, evaluate, post_train, train_joint
from jointtok.vocab import SeedVocab, character_vocab, collect_candidates, em_train_seed

SCHEDULE_NAMES = ("both", "a_then_b", "b_then_a", "random")


def seed_vocab(examples, max_word_len=3, min_freq=2, target=30):
    texts = [t for ex in examples for t in ex.texts]
    return em_train_seed(collect_candidates(texts, max_word_len, min_freq), texts, target)


def lattice_instances(count, seed, max_paths=None):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        sentence, surfaces, lp = oracles.random_instance(rng)
        vocab = SeedVocab(surfaces, lp)
        lattice = lat.build_lattice(sentence, vocab)
        if max_paths is None or lat.count_paths(lattice) <= max_paths:
            out.append((vocab, lattice))
    return out


# -- criterion bodies -------------------------------------------------------

def run_oracle_equivalence():
    instances = lattice_instances(1000, seed=2024)
    start = time.perf_counter()
    mismatches, worst = 0, 0.0
    for vocab, lattice in instances:
        full = lat.enumerate_all(lattice, vocab.logprobs)
        for n in (1, 3, 8):
            got = lat.nbest(lattice, vocab.logprobs, n)
            want = full[:n]
            if [t.word_ids for t in got] != [t.word_ids for t in want]:
                mismatches += 1
            worst = max([worst] + [abs(a.logprob - b.logprob) for a, b in zip(got, want)])
    return {"mismatches": mismatches, "worst_logprob_diff": worst,
            "seconds": time.perf_counter() - start}


def exact_codes(lattice, logprobs, alpha, k=None):
    paths = lat.enumerate_all(lattice, logprobs)
    if k is not None:
        paths = paths[:k]
    scores = np.array([alpha * t.logprob for t in paths])
    w = np.exp(scores - scores.max())
    return {t.code(): p for t, p in zip(paths, w / w.sum())}


def tv_distance(codes, exact):
    values, counts = np.unique(codes, return_counts=True)
    emp = dict(zip(values.tolist(), (counts / counts.sum()).tolist()))
    keys = set(emp) | set(exact)
    return 0.5 * sum(abs(emp.get(c, 0.0) - exact.get(c, 0.0)) for c in keys)


def run_sampling_exactness():
    instances = lattice_instances(50, seed=7, max_paths=32)
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    ffbs_tv, kbest_tv = 0.0, 0.0
    for vocab, lattice in instances:
        for alpha in (0.0, 0.2, 0.5, 1.0):
            codes = lat.ffbs_sample_codes(lattice, vocab.logprobs, alpha, rng, 200_000)
            ffbs_tv = max(ffbs_tv, tv_distance(codes, exact_codes(lattice, vocab.logprobs, alpha)))
            for k in (1, 2, 8):
                codes = lat.kbest_sample_codes(lattice, vocab.logprobs, alpha, k, rng, 200_000)
                kbest_tv = max(kbest_tv, tv_distance(codes, exact_codes(lattice, vocab.logprobs, alpha, k)))
    return {"ffbs_max_tv": ffbs_tv, "kbest_max_tv": kbest_tv, "seconds": time.perf_counter() - start}


def run_gradient_checks():
    rng = np.random.default_rng(31337)
    start = time.perf_counter()
    errs = {
        "nulm": [oracles.nulm_gradient_error(rng) for _ in range(100)],
        "mean_embed": [oracles.classifier_gradient_error(rng, 1) for _ in range(100)],
        "pair": [oracles.classifier_gradient_error(rng, 2) for _ in range(100)],
    }
    out = {f"{k}_max_rel_err": max(v) for k, v in errs.items()}
    out["configs"] = min(len(v) for v in errs.values())
    out["seconds"] = time.perf_counter() - start
    return out


def run_weight_fixture():
    vocab = SeedVocab(["a", "b", "ab"], np.log([0.4, 0.2, 0.4]))
    tok = NulmTokenizer(vocab, oracles.crafted_nulm(vocab.logprobs), AdamState(lr=1e-2))
    cands = lat.nbest(tok.lattice("ab"), tok.log_probs(), 2)
    probs = [math.exp(c.logprob) for c in cands]
    a = candidate_weights([c.logprob for c in cands])
    loss, grads = tokenizer_loss_and_grad(tok.params, cands, [1.0, 2.0])
    before = math.exp(sum(log_unigram_probs(tok.params)[list(cands[0].word_ids)]))
    tok.update(grads)
    after = math.exp(sum(log_unigram_probs(tok.params)[list(cands[0].word_ids)]))
    return {"probs": probs, "weights": a.tolist(), "loss": loss, "p_before": before, "p_after": after}


def run_joint_efficacy():
    data = generate_pattern_task(SynthSpec())
    vocab = seed_vocab(data["train"])
    track = [ex for ex in data["valid"] if ex.label == 1][:200]
    start = time.perf_counter()
    results = {}
    for name, v, update in (("baseline", character_vocab(vocab), False), ("joint", vocab, True)):
        tok = NulmTokenizer.from_seed(v, seed=0)
        model = MeanEmbedClassifier.create(len(v) + 1, 2, 16, 1, seed=1, lr=1e-2)
        cfg = TrainConfig(epochs=8, n_best=3, alpha=0.2, k_candidates=None,
                          update_tokenizer=update, track_pattern="ab")
        run = train_joint(data["train"], tok, model, cfg, track_set=track)
        results[name] = {"accuracy": evaluate(data["test"], tok, model)["accuracy"],
                         "tracked": [run.initial["tracked_mass"]]
                         + [m["tracked_mass"] for m in run.metrics]}
    results["seconds"] = time.perf_counter() - start
    return results


def misweight(vocab, pattern, factor):
    lp = np.array(vocab.logprobs)
    for i, s in enumerate(vocab.surfaces):
        if pattern in s:
            lp[i] += math.log(factor)
    return vocab.with_logprobs(lp)


def run_post_processing():
    data = generate_pattern_task(SynthSpec())
    vocab = seed_vocab(data["train"])
    start = time.perf_counter()
    out = {}
    for name, v in (("seed", vocab), ("misweighted", misweight(vocab, "ab", 0.1))):
        tok = NulmTokenizer.from_seed(v, seed=0)
        model = MeanEmbedClassifier.create(len(v) + 1, 2, 16, 1, seed=1, lr=1e-2)
        cfg = TrainConfig(epochs=8, update_tokenizer=False, post_epochs=5)
        train_joint(data["train"], tok, model, cfg)
        before = evaluate(data["test"], tok, model)["accuracy"]
        digest = model.params.digest()
        paths = [tok.viterbi(ex.texts[0]).bounds for ex in data["test"]]
        post_train(data["train"], tok, model, cfg)
        changed = np.mean([tok.viterbi(ex.texts[0]).bounds != b for ex, b in zip(data["test"], paths)])
        out[name] = {"before": before, "after": evaluate(data["test"], tok, model)["accuracy"],
                     "model_unchanged": model.params.digest() == digest, "changed": float(changed)}
    out["seconds"] = time.perf_counter() - start
    return out


def run_schedules():
    start = time.perf_counter()
    small = generate_pair_task(SynthSpec(n_train=1000, n_valid=10, n_test=200, seed=5))
    vocab = seed_vocab(small["train"])
    out = {}
    for sched in SCHEDULE_NAMES:
        tok_a, tok_b = NulmTokenizer.from_seed(vocab, seed=0), NulmTokenizer.from_seed(vocab, seed=1)
        b0 = tok_b.params.digest()
        model = MeanEmbedClassifier.create(len(vocab) + 1, 2, 16, 2, seed=1, lr=1e-2)
        run = train_joint(small["train"], (tok_a, tok_b), model,
                          TrainConfig(epochs=4, schedule=sched, share_nulm=False),
                          eval_set=small["test"])
        out[sched] = {"epochs": len(run.metrics),
                      "b_digests": [b0] + [m["nulm_digests"][1] for m in run.metrics],
                      "updates": [m["tokenizer_updates"] for m in run.metrics],
                      "accuracy": run.metrics[-1]["eval_accuracy"]}
    data = generate_pair_task(SynthSpec())
    vocab = seed_vocab(data["train"])
    tok = NulmTokenizer.from_seed(vocab, seed=0)
    model = MeanEmbedClassifier.create(len(vocab) + 1, 2, 16, 2, seed=1, lr=1e-2)
    train_joint(data["train"], (tok, tok), model, TrainConfig(epochs=8, share_nulm=True))
    out["shared_accuracy"] = evaluate(data["test"], tok, model)["accuracy"]
    out["seconds"] = time.perf_counter() - start
    return out


def run_n_sweep():
    data = generate_pattern_task(SynthSpec(n_train=1000, n_valid=10, n_test=300, seed=11))
    vocab = seed_vocab(data["train"])
    start = time.perf_counter()
    out = {}
    for n in (1, 2, 3, 5, 8):
        tok = NulmTokenizer.from_seed(vocab, seed=0)
        d0 = tok.params.digest()
        model = MeanEmbedClassifier.create(len(vocab) + 1, 2, 16, 1, seed=1, lr=1e-2)
        run = train_joint(data["train"], tok, model, TrainConfig(epochs=3, n_best=n),
                          eval_set=data["test"])
        out[n] = {"metrics": run.metrics, "unchanged": tok.params.digest() == d0,
                  "grad_norm_max": max(m["tokenizer_grad_norm_max"] for m in run.metrics)}
    out["seconds"] = time.perf_counter() - start
    return out


CRITERIA = {
    1: run_oracle_equivalence, 2: run_sampling_exactness, 3: run_gradient_checks,
    4: run_weight_fixture, 5: run_joint_efficacy, 6: run_post_processing, 7: run_schedules,
    8: run_n_sweep,
}


@pytest.fixture(scope="module")
def results():
    cache = {}

    def get(k):
        if k not in cache:
            cache[k] = CRITERIA[k]()
        return cache[k]
    return get


def check(report, name, ok, detail):
    report(name, ok, detail)
    assert ok, detail


# -- tests -------------------------------------------------------------------

def test_criterion_1_oracle_equivalence(results, acceptance_report):
    r = results(1)
    ok = r["mismatches"] == 0 and r["worst_logprob_diff"] < 1e-9 and r["seconds"] < 10
    check(acceptance_report, "criterion 1 (N-best equals brute force)", ok,
          f"mismatches={r['mismatches']} max|dlogp|={r['worst_logprob_diff']:.2e} time={r['seconds']:.1f}s")


def test_criterion_2_sampling_exactness(results, acceptance_report):
    r = results(2)
    ok = r["ffbs_max_tv"] < 0.01 and r["kbest_max_tv"] < 0.01 and r["seconds"] < 60
    check(acceptance_report, "criterion 2 (sampling exactness)", ok,
          f"ffbs maxTV={r['ffbs_max_tv']:.4f} kbest maxTV={r['kbest_max_tv']:.4f} time={r['seconds']:.1f}s")


def test_criterion_3_gradients(results, acceptance_report):
    r = results(3)
    errs = [r["nulm_max_rel_err"], r["mean_embed_max_rel_err"], r["pair_max_rel_err"]]
    ok = r["configs"] >= 100 and max(errs) < 1e-4 and r["seconds"] < 30
    check(acceptance_report, "criterion 3 (finite-difference gradients)", ok,
          "max rel err nulm={:.1e} single={:.1e} pair={:.1e} time={:.1f}s".format(*errs, r["seconds"]))


def test_criterion_4_weight_fixture(results, acceptance_report):
    r = results(4)
    ok = (np.allclose(r["probs"], [0.4, 0.08], atol=1e-12)
          and np.allclose(r["weights"], [5 / 6, 1 / 6], atol=1e-9)
          and round(r["weights"][0], 6) == 0.833333 and round(r["weights"][1], 6) == 0.166667
          and abs(r["loss"] - 7 / 6) < 1e-9 and r["p_after"] > r["p_before"])
    check(acceptance_report, "criterion 4 (weighted-loss fixture)", ok,
          f"a=({r['weights'][0]:.6f}, {r['weights'][1]:.6f}) L={r['loss']:.9f} "
          f"p {r['p_before']:.6f}->{r['p_after']:.6f}")


def test_criterion_5_joint_efficacy(results, acceptance_report):
    r = results(5)
    base, joint = r["baseline"]["accuracy"], r["joint"]["accuracy"]
    tracked = r["joint"]["tracked"][:6]
    drops = sum(b < a for a, b in zip(tracked, tracked[1:]))
    ok = base <= 0.80 and joint >= 0.90 and joint >= base + 0.10 and drops <= 1 and r["seconds"] < 300
    check(acceptance_report, "criterion 5 (joint optimization efficacy)", ok,
          f"baseline={base:.3f} joint={joint:.3f} tracked={[round(x, 3) for x in tracked]} "
          f"time={r['seconds']:.0f}s")


def test_criterion_6_post_processing(results, acceptance_report):
    r = results(6)
    s, m = r["seed"], r["misweighted"]
    ok = (s["model_unchanged"] and m["model_unchanged"] and s["after"] >= s["before"] - 0.005
          and s["changed"] >= 0.01 and m["after"] >= m["before"] + 0.02 and r["seconds"] < 180)
    check(acceptance_report, "criterion 6 (post-processing)", ok,
          f"seed {s['before']:.3f}->{s['after']:.3f} (1-best changed {s['changed']:.0%}), "
          f"mis-weighted {m['before']:.3f}->{m['after']:.3f}, model frozen="
          f"{s['model_unchanged'] and m['model_unchanged']} time={r['seconds']:.0f}s")


def test_criterion_7_schedules(results, acceptance_report):
    r = results(7)
    completed = all(r[s]["epochs"] == 4 for s in SCHEDULE_NAMES)
    a_then_b = r["a_then_b"]
    b_frozen = len(set(a_then_b["b_digests"][:3])) == 1 and a_then_b["b_digests"][3] != a_then_b["b_digests"][2]
    random_mixed = all(a > 0 and b > 0 for a, b in r["random"]["updates"])
    ok = completed and b_frozen and random_mixed and r["shared_accuracy"] >= 0.85 and r["seconds"] < 300
    check(acceptance_report, "criterion 7 (multi-input schedules)", ok,
          f"all schedules complete={completed} a_then_b B frozen in first half={b_frozen} "
          f"shared acc={r['shared_accuracy']:.3f} time={r['seconds']:.0f}s")


def test_criterion_8_n_sweep(results, acceptance_report):
    r = results(8)
    ns = (1, 2, 3, 5, 8)
    emitted = all(len(r[n]["metrics"]) == 3 for n in ns)
    degenerate = r[1]["grad_norm_max"] == 0.0 and r[1]["unchanged"]
    ok = emitted and degenerate and r["seconds"] < 600
    accs = " ".join(f"N={n}:{r[n]['metrics'][-1]['eval_accuracy']:.3f}" for n in ns)
    check(acceptance_report, "criterion 8 (N sweep)", ok,
          f"{accs} N=1 max grad norm={r[1]['grad_norm_max']} time={r['seconds']:.0f}s")


def strip_timing(result):
    return {k: v for k, v in result.items() if k != "seconds"}


def test_criterion_9_determinism(results, acceptance_report):
    differing = [k for k, fn in CRITERIA.items() if strip_timing(fn()) != strip_timing(results(k))]
    check(acceptance_report, "criterion 9 (determinism)", not differing,
          f"criteria rerun={len(CRITERIA)} differing={differing}")
