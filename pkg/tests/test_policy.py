import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erp.errors import (
    CorpusEmpty, FormatVersionError, InvalidTemperature, ProtocolError, RemoteUnavailable, TerminalState,
)
from erp.policy import (
    NGramPolicy, RemotePolicy, TablePolicy, UniformPolicy, apply_temperature, greedy_token,
    remote_next_dist, train_ngram,
)
from erp.vocab import BOS_ID, EOS_ID, SequenceState, Vocabulary, build_vocab, tokenize

from conftest import unused_port_url


def _states(lines, vocab):
    return [tokenize(ln, vocab) for ln in lines]


class TestNGram:
    def test_bigram_table_probability(self):
        vocab = build_vocab(["ab"], "char")
        pol = train_ngram(_states(["ab", "ab"], vocab), vocab, n=2, k=1)
        a, b = vocab.lookup["a"], vocab.lookup["b"]
        # context a seen twice, always followed by b: (2 + 1) / (2 + 4)
        assert pol.prob((a,), b) == pytest.approx(0.5, abs=1e-12)

    def test_next_dist_masks_bos(self):
        vocab = build_vocab(["ab"], "char")
        pol = train_ngram(_states(["ab", "ab"], vocab), vocab, n=2, k=1)
        a, b = vocab.lookup["a"], vocab.lookup["b"]
        dist = pol.next_dist(SequenceState((BOS_ID, a)))
        # raw table [1,1,1,3]/6 with BOS removed and renormalised: 3/5
        assert dist[BOS_ID] == 0.0
        assert dist[b] == pytest.approx(0.6, abs=1e-12)
        assert dist.sum() == pytest.approx(1.0, abs=1e-12)

    def test_unseen_context_is_uniform(self):
        vocab = build_vocab(["abc"], "char")
        for n in (1, 2, 3, 4):
            pol = NGramPolicy(vocab, n, 1.0, {})
            ctx = pol.context((BOS_ID, 2, 3, 4))
            for t in range(len(vocab)):
                assert pol.prob(ctx, t) == pytest.approx(1 / len(vocab))

    def test_eos_after_single_unit(self):
        vocab = build_vocab(["a"], "char")
        pol = train_ngram(_states(["a"], vocab), vocab, n=2, k=1)
        assert pol.prob((vocab.lookup["a"],), EOS_ID) == pytest.approx(0.5, abs=1e-12)

    def test_context_pads_with_bos(self):
        pol = NGramPolicy(Vocabulary(["a"]), 4, 0.5, {})
        assert pol.context((BOS_ID, 2)) == (BOS_ID, BOS_ID, 2)
        assert NGramPolicy(Vocabulary(["a"]), 1, 0.5, {}).context((BOS_ID, 2)) == ()

    def test_empty_corpus(self):
        with pytest.raises(CorpusEmpty):
            train_ngram([], Vocabulary(["a"]))

    def test_bad_parameters(self):
        v = Vocabulary(["a"])
        with pytest.raises(ValueError):
            NGramPolicy(v, 0, 1.0, {})
        with pytest.raises(ValueError):
            NGramPolicy(v, 2, 0.0, {})

    def test_deterministic_and_persistent(self, tmp_path):
        lines = ["CCO", "CC(=O)O", "c1ccccc1"]
        vocab = build_vocab(lines, "smiles")
        p1 = train_ngram(_states(lines, vocab), vocab, 3, 0.1)
        p2 = train_ngram(_states(lines, vocab), vocab, 3, 0.1)
        assert p1.to_dict() == p2.to_dict()
        p1.save(tmp_path / "a.json")
        p2.save(tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        loaded = NGramPolicy.load(tmp_path / "a.json")
        assert loaded.vocab == vocab
        s = tokenize("CC", vocab)
        s = SequenceState(s.token_ids[:-1])
        np.testing.assert_array_equal(loaded.next_dist(s), p1.next_dist(s))

    def test_format_version_mismatch(self):
        vocab = Vocabulary(["a"])
        data = NGramPolicy(vocab, 2, 1.0, {}).to_dict()
        data["format_version"] = 99
        with pytest.raises(FormatVersionError):
            NGramPolicy.from_dict(data)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.text(alphabet="abc", max_size=6), min_size=1, max_size=8),
           st.integers(1, 4), st.floats(0.01, 2.0))
    def test_rows_are_distributions(self, lines, n, k):
        vocab = Vocabulary(["a", "b", "c"])
        pol = train_ngram(_states(lines, vocab), vocab, n, k)
        for prefix in [(BOS_ID,), (BOS_ID, 2), (BOS_ID, 3, 4, 2)]:
            d = pol.next_dist(SequenceState(prefix))
            assert d[BOS_ID] == 0.0
            assert math.isclose(d.sum(), 1.0, abs_tol=1e-12)
            assert (d > 0).sum() == len(vocab) - 1


class TestSimplePolicies:
    def test_uniform_masks_bos(self):
        d = UniformPolicy(Vocabulary(["a", "b"])).next_dist(SequenceState((BOS_ID,)))
        np.testing.assert_allclose(d, [0, 1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_terminal_state_rejected(self):
        with pytest.raises(TerminalState):
            UniformPolicy(Vocabulary(["a"])).next_dist(SequenceState((BOS_ID, EOS_ID), True))

    def test_table_policy(self, toy_policy):
        d = toy_policy.next_dist(SequenceState((BOS_ID,)))
        np.testing.assert_allclose(d, [0, 0.4, 0.6])
        with pytest.raises(KeyError):
            toy_policy.next_dist(SequenceState((BOS_ID, EOS_ID + 1, EOS_ID + 1)))

    def test_greedy_tie_breaks_low(self):
        assert greedy_token(np.array([0.0, 0.5, 0.5])) == 1


class TestTemperature:
    def test_identity(self):
        out = apply_temperature(np.array([0.8, 0.2]), 1.0)
        np.testing.assert_array_equal(out, [0.8, 0.2])

    def test_sharpen(self):
        out = apply_temperature(np.array([0.8, 0.2]), 0.5)
        np.testing.assert_allclose(out, [0.941176, 0.058824], atol=1e-6)

    def test_flatten(self):
        out = apply_temperature(np.array([0.8, 0.2]), 1e9)
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-6)

    def test_tiny_tau_does_not_underflow(self):
        out = apply_temperature(np.array([0.0, 0.6, 0.4]), 1e-6)
        np.testing.assert_array_equal(out, [0.0, 1.0, 0.0])

    @pytest.mark.parametrize("tau", [0.0, -1.0, float("nan"), float("inf")])
    def test_invalid(self, tau):
        with pytest.raises(InvalidTemperature):
            apply_temperature(np.array([0.5, 0.5]), tau)

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=8).filter(lambda xs: sum(xs) > 1e-3),
           st.floats(0.05, 20))
    def test_support_and_normalisation(self, xs, tau):
        d = np.array(xs) / sum(xs)
        out = apply_temperature(d, tau)
        assert math.isclose(out.sum(), 1.0, abs_tol=1e-9)
        assert np.all((out > 0) <= (d > 0))
        assert int(np.argmax(out)) == int(np.argmax(d))


class TestRemotePolicy:
    V = 4

    def _vocab(self):
        return Vocabulary(["a", "b"])

    def test_normalises_logprobs(self, mock_server):
        srv = mock_server(lambda path, body: (200, {"logprobs": [0.0, math.log(0.2), math.log(0.3), math.log(0.1)]}))
        pol = RemotePolicy(self._vocab(), srv.url, timeout_ms=2000, retries=0)
        d = remote_next_dist(pol, SequenceState((BOS_ID, 2)))
        assert d.sum() == pytest.approx(1.0, abs=1e-12)
        assert d[BOS_ID] == 0.0
        np.testing.assert_allclose(d[1:], [1 / 3, 1 / 2, 1 / 6])
        path, payload = srv.calls[0]
        assert path == "/v1/next_token"
        assert payload == {"prefix": [0, 2], "vocab_size": 4}

    def test_wrong_length(self, mock_server):
        srv = mock_server(lambda path, body: (200, {"logprobs": [0.0, 0.0, 0.0]}))
        pol = RemotePolicy(self._vocab(), srv.url, retries=0)
        with pytest.raises(ProtocolError):
            pol.next_dist(SequenceState((BOS_ID,)))

    @pytest.mark.parametrize("body", [
        {"nope": 1},
        {"logprobs": "x"},
        {"logprobs": [0, 0, 0, "a"]},
        {"logprobs": [0, float("-inf"), float("-inf"), float("-inf")]},
    ])
    def test_malformed(self, mock_server, body):
        srv = mock_server(lambda path, b: (200, body))
        with pytest.raises(ProtocolError):
            RemotePolicy(self._vocab(), srv.url, retries=0).next_dist(SequenceState((BOS_ID,)))

    def test_non_200_is_protocol_error(self, mock_server):
        srv = mock_server(lambda path, b: (500, {"error": "boom"}))
        with pytest.raises(ProtocolError):
            RemotePolicy(self._vocab(), srv.url, retries=3).next_dist(SequenceState((BOS_ID,)))
        assert len(srv.calls) == 1

    def test_invalid_json(self, mock_server):
        srv = mock_server(lambda path, b: (200, b"not json"))
        with pytest.raises(ProtocolError):
            RemotePolicy(self._vocab(), srv.url, retries=0).next_dist(SequenceState((BOS_ID,)))

    def test_unreachable_retries(self):
        pol = RemotePolicy(self._vocab(), unused_port_url(), timeout_ms=500, retries=2)
        with pytest.raises(RemoteUnavailable) as info:
            pol.next_dist(SequenceState((BOS_ID,)))
        assert info.value.attempts == 3

    def test_timeout_retries_counted(self, mock_server):
        def slow(path, body):
            time.sleep(0.3)
            return 200, {"logprobs": [0.0] * 4}

        srv = mock_server(slow)
        pol = RemotePolicy(self._vocab(), srv.url, timeout_ms=50, retries=1)
        with pytest.raises(RemoteUnavailable) as info:
            pol.next_dist(SequenceState((BOS_ID,)))
        assert info.value.attempts == 2
        assert len(srv.calls) == 2
