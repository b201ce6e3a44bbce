import dataclasses
import logging
import math

import numpy as np
import pytest

import oracles
from jointtok import lattice as lat
from jointtok.exceptions import JointTokError
from jointtok.nulm import (
    NulmTokenizer, candidate_weights, init_params, kl_to_seed, log_unigram_probs, pretrain,
    tokenization_logprob, tokenizer_loss_and_grad, word_logits,
)
from jointtok.optim import AdamState, ParamSet, adam_update_, apply_update
from jointtok.vocab import SeedVocab


@dataclasses.dataclass
class Scalar(ParamSet):
    x: np.ndarray
    names = ("x",)


def test_zero_network_logits():
    assert np.array_equal(word_logits(init_params(5, 3, 4)), np.zeros(5))


def test_identical_rows_identical_logits():
    params = oracles.random_nulm(np.random.default_rng(0), 4, 3, 5)
    params.embeddings[2] = params.embeddings[0]
    logits = word_logits(params)
    assert logits[0] == logits[2]


@pytest.mark.parametrize("seed", range(10))
def test_forward_matches_reference(seed):
    p = oracles.random_nulm(np.random.default_rng(seed), 3, 4, 5)
    expected = oracles.nulm_forward(p.embeddings, p.w1, p.b1, p.w2, p.b2)
    np.testing.assert_allclose(log_unigram_probs(p), expected, rtol=0, atol=1e-12)


def test_overflow():
    p = init_params(3, 2, 2)
    p.w2[:] = np.inf
    p.embeddings[:] = 1.0
    p.w1[:] = 1.0
    with pytest.raises(JointTokError, match="numeric overflow"):
        word_logits(p)


def test_uniform_softmax():
    np.testing.assert_allclose(log_unigram_probs(init_params(7, 2, 2)), -math.log(7), atol=1e-15)


def test_hand_softmax():
    p = oracles.crafted_nulm([math.log(2), 0.0, 0.0])
    np.testing.assert_allclose(np.exp(log_unigram_probs(p)), [0.5, 0.25, 0.25], atol=1e-12)


def test_tokenization_logprob():
    lp = np.log([0.4, 0.2, 0.4])
    assert round(tokenization_logprob([2], lp), 6) == -0.916291
    assert round(tokenization_logprob([0, 1], lp), 6) == -2.525729


def test_weights_fixture():
    a = candidate_weights([math.log(0.4), math.log(0.08)])
    np.testing.assert_allclose(a, [5 / 6, 1 / 6], atol=1e-15)


def test_loss_fixture_through_network():
    params = oracles.crafted_nulm(np.log([0.4, 0.2, 0.4]))
    loss, grads = tokenizer_loss_and_grad(params, [[2], [0, 1]], [1.0, 2.0])
    assert abs(loss - 7 / 6) < 1e-9
    assert grads.norm() > 0


def test_equal_losses_give_exact_zero():
    params = oracles.random_nulm(np.random.default_rng(1), 4, 3, 3)
    loss, grads = tokenizer_loss_and_grad(params, [[0], [1, 2], [3, 3]], [0.7, 0.7, 0.7])
    assert loss == 0.7
    assert grads.norm() == 0.0


def test_single_candidate():
    params = oracles.random_nulm(np.random.default_rng(2), 4, 3, 3)
    loss, grads = tokenizer_loss_and_grad(params, [[1, 2]], [1.3])
    assert loss == 1.3 and grads.norm() == 0.0


def test_mismatched_losses():
    with pytest.raises(ValueError):
        tokenizer_loss_and_grad(init_params(3, 2, 2), [[0], [1]], [1.0])


@pytest.mark.parametrize("seed", range(30))
def test_gradient_finite_differences(seed):
    assert oracles.nulm_gradient_error(np.random.default_rng(seed)) < 1e-4


def test_descent_increases_best_candidate():
    params = oracles.crafted_nulm(np.log([0.4, 0.2, 0.4]))
    _, grads = tokenizer_loss_and_grad(params, [[2], [0, 1]], [1.0, 2.0])
    new, _ = apply_update(params, grads, AdamState(lr=1e-2))
    before = candidate_weights([tokenization_logprob(c, log_unigram_probs(params)) for c in ([2], [0, 1])])
    after = candidate_weights([tokenization_logprob(c, log_unigram_probs(new)) for c in ([2], [0, 1])])
    assert after[0] > before[0]
    assert log_unigram_probs(new)[2] > log_unigram_probs(params)[2]


def test_pretrain_immediate_convergence():
    seed = SeedVocab(list("abcd"), np.full(4, -math.log(4)))
    result = pretrain(init_params(4, 3, 3), seed)
    assert result.converged and result.epochs == 0 and result.kl == 0.0


def test_pretrain_fixture_converges(fixture_vocab):
    result = pretrain(init_params(3, 4, 4, np.random.default_rng(0)), fixture_vocab)
    assert result.converged and result.kl < 1e-7
    np.testing.assert_allclose(np.exp(log_unigram_probs(result.params)), [0.4, 0.2, 0.4], atol=1e-3)


def test_pretrain_cap_warns(fixture_vocab, caplog):
    with caplog.at_level(logging.WARNING):
        result = pretrain(init_params(3, 4, 4, np.random.default_rng(0)), fixture_vocab, max_epochs=3)
    assert not result.converged and result.epochs == 3
    assert "pretraining stopped" in caplog.text


def test_kl_zero_at_target():
    assert kl_to_seed(oracles.crafted_nulm(np.log([0.4, 0.2, 0.4])), np.log([0.4, 0.2, 0.4])) < 1e-15


def test_adam_zero_gradient_keeps_params():
    p = Scalar(np.array([0.3, -1.0]))
    new, _ = apply_update(p, Scalar(np.zeros(2)), AdamState(lr=0.1))
    assert np.array_equal(new.x, p.x)


def test_adam_first_step():
    new, opt = apply_update(Scalar(np.array([0.0])), Scalar(np.array([1.0])), AdamState(lr=0.1))
    assert new.x[0] == pytest.approx(-0.1, abs=1e-8)
    assert opt.step == 1


def test_adam_deterministic():
    p, g, opt = Scalar(np.array([0.5, 2.0])), Scalar(np.array([0.1, -3.0])), AdamState(lr=0.01)
    a, oa = apply_update(p, g, opt)
    b, ob = apply_update(p, g, opt)
    assert a.identical(b) and np.array_equal(oa.m["x"], ob.m["x"])


def test_adam_sparse_rows_untouched():
    @dataclasses.dataclass
    class M(ParamSet):
        w: np.ndarray
        names = ("w",)

    p = M(np.ones((3, 2)))
    g = M(np.zeros((3, 2)))
    g.w[1] = 1.0
    adam_update_(p, g, AdamState(lr=0.1), sparse=("w",))
    assert np.array_equal(p.w[[0, 2]], np.ones((2, 2)))
    np.testing.assert_allclose(p.w[1], 0.9, atol=1e-8)


def test_tokenizer_snapshot_round_trip(tmp_path, fixture_vocab):
    tok = NulmTokenizer.from_seed(fixture_vocab, 4, 4, seed=3)
    tok.update(tokenizer_loss_and_grad(tok.params, [[2], [0, 1]], [1.0, 2.0])[1])
    tok.save(tmp_path / "t.json")
    again = NulmTokenizer.load(tmp_path / "t.json")
    assert again.params.identical(tok.params)
    assert again.vocab == tok.vocab
    assert again.opt.step == tok.opt.step
    assert np.array_equal(again.opt.v["w1"], tok.opt.v["w1"])
    assert (tmp_path / "t.json").read_bytes() == (again.save(tmp_path / "u.json")
                                                  or (tmp_path / "u.json").read_bytes())


def test_tokenizer_api(fixture_vocab):
    tok = NulmTokenizer.from_seed(fixture_vocab, 4, 4, seed=0)
    assert tok.tokenize("abab") == ["ab", "ab"]
    assert [t.pieces("ab") for t in tok.nbest("ab", 5)] == [["ab"], ["a", "b"]]
    assert tok.viterbi("abc", allow_unk=True).pieces("abc") == ["ab", "c"]
    rng = np.random.default_rng(0)
    sample = tok.sample("abab", 0.2, None, rng)
    assert "".join(sample.pieces("abab")) == "abab"
    assert isinstance(tok.sample("ab", 1.0, 2, rng), lat.Tokenization)
