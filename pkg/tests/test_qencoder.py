import numpy as np
import pytest

from sma.layers import ParamInit
from sma.numerics import Tensor
from sma.qencoder import ROLES, decompose_question, embed_question, init_qencoder, question_batch

D = 6
VOCAB = 11


def params(encoder, seed=0):
    init = ParamInit(seed)
    init_qencoder(init, VOCAB, D, encoder=encoder)
    P = init.params
    # non-zero biases so the oracle exercises them
    rng = np.random.default_rng(seed + 100)
    for name in ("q.att1.b", "q.trip.b"):
        P[name].data[:] = rng.normal(size=P[name].shape)
    return P


def oracle_decompose(x, valid, P):
    """Per-role MLP attention written one token and one role at a time."""
    W1, b1 = P["q.att1.W"].data, P["q.att1.b"].data
    w2 = P["q.att2.w"].data
    out = {}
    for r, role in enumerate(ROLES):
        logits = []
        for t in range(len(x)):
            h = np.maximum(x[t] @ W1[:, r * D : (r + 1) * D] + b1[r * D : (r + 1) * D], 0.0)
            logits.append(h @ w2[r])
        logits = np.array(logits)
        e = np.where(valid, np.exp(logits - logits[valid].max()), 0.0)
        a = e / e.sum()
        out[role] = (a, a @ x)
    return out


class TestEmbed:
    def test_single_token_identity(self):
        P = params(encoder=False)
        q = question_batch([[4]])
        x = embed_question(q, P)
        assert np.array_equal(x.data[0, 0], P["q.emb"].data[4])

    def test_positional_encoding_active(self):
        P = params(encoder=True)
        x = embed_question(question_batch([[2, 3, 5], [3, 2, 5]]), P, heads=2).data
        assert not np.allclose(x[0, 0], x[1, 1])
        assert not np.allclose(x[0, 1], x[1, 0])

    def test_pad_rows_zero(self):
        P = params(encoder=True)
        x = embed_question(question_batch([[2, 3, 5], [7]]), P, heads=2).data
        assert not x[1, 1:].any()

    def test_out_of_range(self):
        P = params(encoder=False)
        with pytest.raises(ValueError):
            embed_question(question_batch([[VOCAB]]), P)

    def test_all_pad_rejected(self):
        from sma.qencoder import QuestionBatch

        with pytest.raises(ValueError):
            QuestionBatch(np.zeros((1, 3), dtype=int), np.zeros((1, 3), dtype=bool))


class TestDecompose:
    def test_single_token(self):
        P = params(encoder=False)
        q = question_batch([[9]])
        x = embed_question(q, P)
        dq = decompose_question(x, q.mask, P)
        assert np.array_equal(dq.token_attention.data, np.ones((1, 6, 1)))
        for r in range(6):
            assert np.allclose(dq.s.data[0, r], x.data[0, 0], rtol=0, atol=1e-15)

    def test_oracle_random_three_tokens(self):
        rng = np.random.default_rng(5)
        for trial in range(10):
            P = params(encoder=False, seed=trial)
            x = rng.normal(size=(2, 4, D))
            mask = np.array([[True, True, True, False], [True, True, False, False]])
            x[~mask] = 0.0
            dq = decompose_question(Tensor(x), mask, P)
            for b in range(2):
                ref = oracle_decompose(x[b], mask[b], P)
                for r, role in enumerate(ROLES):
                    a, s = ref[role]
                    assert np.allclose(dq.token_attention.data[b, r], a, rtol=0, atol=1e-10)
                    assert np.allclose(dq.s.data[b, r], s, rtol=0, atol=1e-10)

    def test_triplets_and_attention_normalized(self):
        rng = np.random.default_rng(0)
        P = params(encoder=True)
        for _ in range(100):
            n = rng.integers(1, 8, size=4)
            q = question_batch([list(rng.integers(0, VOCAB, size=k)) for k in n])
            dq = decompose_question(embed_question(q, P, heads=2), q.mask, P)
            for w in (dq.w_obj.data, dq.w_text.data):
                assert np.all(w >= 0) and np.allclose(w.sum(-1), 1.0, atol=1e-6)
            a = dq.token_attention.data
            assert np.allclose(a.sum(-1), 1.0, atol=1e-6)
            assert not a[np.broadcast_to(~q.mask[:, None, :], a.shape)].any()

    def test_permutation_covariance_without_encoder(self):
        P = params(encoder=False)
        ids = [3, 8, 1, 5]
        perm = [2, 0, 3, 1]
        q1, q2 = question_batch([ids]), question_batch([[ids[i] for i in perm]])
        d1 = decompose_question(embed_question(q1, P), q1.mask, P)
        d2 = decompose_question(embed_question(q2, P), q2.mask, P)
        assert np.allclose(d2.token_attention.data[0], d1.token_attention.data[0][:, perm], atol=1e-12)
        assert np.allclose(d2.s.data, d1.s.data, atol=1e-12)
        assert np.allclose(d2.w_obj.data, d1.w_obj.data, atol=1e-12)
