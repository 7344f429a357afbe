import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stfm import ops
from stfm.data import BOS, EOS
from stfm.generator import SoftSentences, StyleTransformer
from stfm.gradcheck import check_gradients
from stfm.optim import Adam
from stfm.tensor import Tape, Tensor, backward
from stfm.training import loss_self

from conftest import tiny_config

SENTS = [(BOS, 4, 5, 6, EOS), (BOS, 7, EOS), (BOS, 5, 5, EOS)]


@pytest.fixture(scope="module")
def memorised():
    """A tiny generator trained to copy a handful of sentences under either style."""
    cfg = tiny_config(vocab_size=9, model_dim=16, ff_dim=32, max_len=10)
    gen = StyleTransformer(cfg, 1)
    opt = Adam(gen.params, lr=1e-2)
    data = [(BOS, 4, 5, 6, EOS), (BOS, 7, 8, EOS), (BOS, 5, 4, 8, 7, EOS), (BOS, 6, EOS)]
    for i in range(300):
        opt.zero_grad()
        with Tape() as tape:
            loss = loss_self(gen, data, np.array([1, 2, 1, 2]) if i % 2 else np.array([2, 1, 2, 1]))
            backward(loss)
        tape.clear()
        opt.step()
    return gen, data


class TestLogProb:
    def test_nonpositive_and_matches_cross_entropy(self, tiny_cfg):
        gen = StyleTransformer(tiny_cfg, 0)
        lp = gen.log_prob(SENTS, SENTS, np.array([1, 2, 1])).data
        assert np.all(lp <= 0)
        for i, y in enumerate(SENTS):
            logits, targets, mask = gen.teacher_forced([y], [y], 1 + (i % 2))
            ce = float(ops.cross_entropy(logits, targets, mask).data)
            assert lp[i] == pytest.approx(-ce * (len(y) - 1), abs=1e-12)

    def test_stepwise_enumeration_oracle(self):
        cfg = tiny_config(vocab_size=5, max_len=6)
        gen = StyleTransformer(cfg, 2)
        x, y = (BOS, 4, 4, EOS), (BOS, 4, 3, EOS)
        z, allowed = gen.encode([x], 2)
        total = 0.0
        for t in range(1, len(y)):
            logits = gen.decode(z, allowed, np.array([y[:t]])).data[0, -1]
            probs = [math.exp(v) for v in logits]
            total += math.log(probs[y[t]] / math.fsum(probs))
        assert float(gen.log_prob([y], [x], 2).data[0]) == pytest.approx(total, abs=1e-12)


class TestGreedy:
    def test_deterministic_and_well_formed(self, tiny_cfg):
        gen = StyleTransformer(tiny_cfg, 0)
        a = gen.transfer_greedy(SENTS, 2)
        assert a == gen.transfer_greedy(SENTS, 2)
        for s in a:
            assert s[0] == BOS and s[-1] == EOS and EOS not in s[1:-1]

    @settings(max_examples=25, deadline=None)
    @given(max_len=st.integers(2, 8), seed=st.integers(0, 50))
    def test_halts_within_max_len(self, max_len, seed):
        gen = StyleTransformer(tiny_config(), seed)
        for s in gen.transfer_greedy(SENTS, 1, max_len=max_len):
            assert 2 <= len(s) <= max_len

    def test_rejects_short_max_len(self, tiny_cfg):
        with pytest.raises(ValueError, match="max_len"):
            StyleTransformer(tiny_cfg, 0).transfer_greedy(SENTS, 1, max_len=1)

    def test_ties_go_to_lower_id(self, tiny_cfg):
        gen = StyleTransformer(tiny_cfg, 0)
        gen.params["out.w"].data[:] = 0.0
        gen.params["out.b"].data[:] = 0.0
        gen.params["out.b"].data[[5, 6]] = 1.0
        assert gen.transfer_greedy([(BOS, 4, EOS)], 1, max_len=4) == [(BOS, 5, 5, EOS)]

    def test_copies_after_memorisation(self, memorised):
        gen, data = memorised
        assert gen.transfer_greedy(data, 1) == data


class TestSoft:
    def test_distributions_normalised(self, tiny_cfg):
        soft = StyleTransformer(tiny_cfg, 0).transfer_soft(SENTS, 2, temperature=0.7)
        np.testing.assert_allclose(soft.dists.data.sum(-1), 1.0, atol=1e-6)
        assert np.all(soft.dists.data >= 0)
        assert soft.dists.shape[1] <= 4 + 3

    def test_rejects_temperature(self, tiny_cfg):
        with pytest.raises(ValueError, match="temperature"):
            StyleTransformer(tiny_cfg, 0).transfer_soft(SENTS, 2, temperature=0.0)

    def test_one_hot_forcing_reproduces_teacher_forcing(self, tiny_cfg):
        gen = StyleTransformer(tiny_cfg, 0)
        y = [(BOS, 4, 5, 6, EOS), (BOS, 7, 4, 4, EOS)]
        logits, targets, _ = gen.teacher_forced(y, SENTS[:2], 2)
        _, soft_logits = gen.transfer_soft(SENTS[:2], 2, forced_tokens=targets, max_steps=targets.shape[1], return_logits=True)
        np.testing.assert_allclose(soft_logits.data, logits.data, rtol=0, atol=1e-12)

    def test_low_temperature_matches_greedy(self, memorised):
        gen, data = memorised
        for style in (1, 2):
            soft = gen.transfer_soft(data, style, temperature=0.05)
            assert soft.argmax_sentences() == gen.transfer_greedy(data, style)

    def test_gradient_through_soft_decoding(self):
        gen = StyleTransformer(tiny_config(), 4)
        w = np.random.default_rng(1).normal(size=(2, 4, 8))
        targets = [gen.params["enc.0.ff1.w"], gen.params["tok_emb"]]

        def fn():
            soft = gen.transfer_soft(SENTS[:2], np.array([2, 1]), temperature=0.8, max_steps=4)
            d = soft.dists
            return ops.sum(ops.mul(d, Tensor(w[:, : d.shape[1]])))

        assert check_gradients(fn, targets, max_entries=30) < 1e-3

    def test_one_hot_soft_sentences(self):
        s = SoftSentences.one_hot(SENTS, 8)
        assert s.argmax_sentences() == SENTS
        np.testing.assert_array_equal(s.lengths, [4, 2, 3])


def test_self_log_prob_rises_during_training():
    cfg = tiny_config(vocab_size=9, model_dim=16, ff_dim=32, max_len=10)
    gen = StyleTransformer(cfg, 0)
    opt = Adam(gen.params, lr=3e-3)
    data = [(BOS, 4, 5, 6, EOS), (BOS, 7, 8, EOS), (BOS, 5, 4, 8, 7, EOS), (BOS, 6, EOS)]
    styles = np.array([1, 1, 2, 2])
    epochs = []
    for _ in range(6):
        lps = []
        for _ in range(10):
            lps.append(float(gen.log_prob(data, data, styles).data.mean()))
            opt.zero_grad()
            with Tape() as tape:
                backward(loss_self(gen, data, styles))
            tape.clear()
            opt.step()
        epochs.append(np.mean(lps))
    assert all(b > a for a, b in zip(epochs, epochs[1:]))
