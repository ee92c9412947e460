"""Question encoding and decomposition into six role-specific summaries.

Roles are ``o``, ``oo``, ``ot`` (object side) and ``t``, ``tt``, ``to``
(text side).  Each role attends over the question tokens with its own
one-hidden-layer MLP; the six MLPs are packed side by side so one matmul
serves all of them.  Two 3-way softmax heads over the mean-pooled question
give the object and text weight triplets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import ParamInit, linear, sinusoid, transformer_layer
from .numerics import Tensor, relu, softmax

ROLES = ("o", "oo", "ot", "t", "tt", "to")
OBJ_ROLES = ROLES[:3]
TEXT_ROLES = ROLES[3:]


@dataclass
class QuestionBatch:
    ids: np.ndarray  # (B, T) int
    mask: np.ndarray  # (B, T) bool

    def __post_init__(self):
        if self.ids.shape != self.mask.shape:
            raise ValueError("ids and mask shapes differ")
        if not self.mask.any(axis=1).all():
            raise ValueError("every question needs at least one valid token")


def question_batch(encoded: list[list[int]]) -> QuestionBatch:
    T = max(len(e) for e in encoded)
    ids = np.zeros((len(encoded), T), dtype=np.int64)
    mask = np.zeros((len(encoded), T), dtype=bool)
    for b, e in enumerate(encoded):
        ids[b, : len(e)] = e
        mask[b, : len(e)] = True
    return QuestionBatch(ids, mask)


@dataclass
class DecomposedQuestion:
    s: Tensor  # (B, 6, d), rows in ROLES order
    token_attention: Tensor  # (B, 6, T)
    w_obj: Tensor  # (B, 3) over (o, oo, ot)
    w_text: Tensor  # (B, 3) over (t, tt, to)

    def role(self, m: str) -> Tensor:
        return self.s[:, ROLES.index(m)]


def init_qencoder(init: ParamInit, vocab_size: int, d: int, encoder: bool = True) -> None:
    init.normal("q.emb", (vocab_size, d), fan_in=1)
    if encoder:
        init.transformer_layer("q.enc", d)
    init.linear("q.att1", d, 6 * d)
    # no output bias: a per-role constant cancels in the softmax over tokens
    init.normal("q.att2.w", (6, d), fan_in=d)
    init.linear("q.trip", d, 6)


def embed_question(q: QuestionBatch, P: dict, heads: int = 1) -> Tensor:
    """(B, T, d) token embeddings, contextual when ``q.enc`` parameters exist; pad rows are zero."""
    emb = P["q.emb"]
    vocab = emb.shape[0]
    if q.ids.min() < 0 or q.ids.max() >= vocab:
        raise ValueError(f"token id out of range [0, {vocab})")
    x = emb[q.ids]
    keep = q.mask[:, :, None].astype(x.data.dtype)
    if "q.enc.q.W" in P:
        T, d = q.ids.shape[1], emb.shape[1]
        x = x + sinusoid(T, d)
        key_mask = np.broadcast_to(q.mask[:, None, :], (q.ids.shape[0], T, T))
        x = transformer_layer(P, "q.enc", x, x, key_mask, heads)
    return x * keep


def decompose_question(x: Tensor, mask: np.ndarray, P: dict) -> DecomposedQuestion:
    B, T, d = x.shape
    h = relu(linear(P, "q.att1", x)).reshape(B, T, 6, d)
    logits = (h * P["q.att2.w"]).sum(axis=-1)  # (B, T, 6)
    a = softmax(logits.transpose(0, 2, 1), mask=mask[:, None, :])  # (B, 6, T)
    s = a @ x
    count = mask.sum(axis=1, keepdims=True).astype(x.data.dtype)
    pooled = x.sum(axis=1) * (1.0 / count)
    trip = softmax(linear(P, "q.trip", pooled).reshape(B, 2, 3))
    return DecomposedQuestion(s=s, token_attention=a, w_obj=trip[:, 0], w_text=trip[:, 1])
