"""Global-local answering module.

Sequence layout fed to the transformer, per instance::

    [s̄_o, s̄_t, g_obj, g_text, ocr_1 .. ocr_M, dec_1 .. dec_L]

The first 4 + M rows (the encoder part) attend freely among themselves,
skipping padded OCR rows.  Decoder row ℓ sees the encoder part and decoder
rows 1..ℓ.  Encoder rows never look at decoder rows, so the stack runs in
two stages: the encoder part alone, then the decoder rows against the saved
per-layer encoder states.  That is exactly the masked joint pass.

Step 1 is scored from the updated global rows; step ℓ ≥ 2 is scored from
decoder row ℓ, whose input is the answer word of step ℓ-1 (row 1 carries a
learned start vector).  Vocabulary words enter through a learned answer
embedding table and copied words through their updated OCR row.  Inputs go
through a shared layer norm and get a learned position embedding.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .layers import ParamInit, linear, norm, prefix_stack, self_attention_stack
from .numerics import Tensor, bce_with_logits, concat
from .vocab import AnswerVocab, normalize

N_GLOBAL = 4


class AnswerTruncatedWarning(UserWarning):
    pass


def layer_names(n: int) -> list[str]:
    return [f"d.layer{i}" for i in range(n)]


def init_decoder(init: ParamInit, d: int, vocab_size: int, layers: int, L: int) -> None:
    init.linear("d.sbar_o", 3 * d, d)
    init.linear("d.sbar_t", 3 * d, d)
    for name in layer_names(layers):
        init.transformer_layer(name, d)
    init.normal("d.ans_emb", (vocab_size, d), fan_in=1)
    init.normal("d.start", (d,), fan_in=1)
    init.normal("d.unk", (d,), fan_in=1)
    init.normal("d.pos", (L, d), fan_in=1)
    init.norm("d.ln_in", d)
    init.linear("d.Wg", 2 * d, d)
    init.linear("d.vocab", d, vocab_size)
    init.linear("d.copy_q", d, d)
    init.linear("d.copy_k", d, d)


@dataclass
class DecoderInputs:
    s_bar_o: Tensor  # (B, d)
    s_bar_t: Tensor
    g_obj: Tensor
    g_text: Tensor
    ocr: Tensor  # (B, M, d), row i = α_i x̂_i
    ocr_mask: np.ndarray  # (B, M)

    def encoder_rows(self) -> Tensor:
        B, d = self.s_bar_o.shape
        globals_ = [t.reshape(B, 1, d) for t in (self.s_bar_o, self.s_bar_t, self.g_obj, self.g_text)]
        return concat(globals_ + [self.ocr], axis=1)

    def key_mask(self) -> np.ndarray:
        """(B, 4 + M) validity of encoder rows as attention keys."""
        B = self.ocr_mask.shape[0]
        return np.concatenate([np.ones((B, N_GLOBAL), dtype=bool), self.ocr_mask], axis=1)


def build_global_inputs(s: Tensor, g_obj: Tensor, g_text: Tensor, alpha_text: Tensor, x_text: Tensor,
                        ocr_mask: np.ndarray, P: dict) -> DecoderInputs:
    """``s`` is the (B, 6, d) stack of role summaries in (o, oo, ot, t, tt, to) order."""
    B, _, d = s.shape
    s_obj = s[:, 0:3].reshape(B, 3 * d)
    s_txt = s[:, 3:6].reshape(B, 3 * d)
    ocr = x_text * alpha_text.reshape(B, -1, 1)
    return DecoderInputs(linear(P, "d.sbar_o", s_obj), linear(P, "d.sbar_t", s_txt), g_obj, g_text, ocr, ocr_mask)


@dataclass
class EncoderOutput:
    states: list[Tensor]  # per-layer inputs plus final output, each (B, 4 + M, d)
    key_mask: np.ndarray

    @property
    def final(self) -> Tensor:
        return self.states[-1]

    def row(self, i: int) -> Tensor:
        return self.final[:, i]

    @property
    def ocr(self) -> Tensor:
        return self.final[:, N_GLOBAL:]


def encode(inputs: DecoderInputs, P: dict, layers: int, heads: int) -> EncoderOutput:
    rows = inputs.encoder_rows()
    key = inputs.key_mask()
    S = key.shape[1]
    mask = np.broadcast_to(key[:, None, :], (key.shape[0], S, S))
    return EncoderOutput(self_attention_stack(P, layer_names(layers), rows, mask, heads), key)


def decode_rows(enc: EncoderOutput, dec_in: Tensor, P: dict, layers: int, heads: int) -> Tensor:
    """Decoder outputs (B, L, d) with the causal mask on the decoder block."""
    B, L, _ = dec_in.shape
    prefix = np.broadcast_to(enc.key_mask[:, None, :], (B, L, enc.key_mask.shape[1]))
    causal = np.broadcast_to(np.tril(np.ones((L, L), dtype=bool)), (B, L, L))
    return prefix_stack(P, layer_names(layers), enc.states, dec_in, prefix, causal, heads)


def first_step_query(enc: EncoderOutput, P: dict) -> Tensor:
    """W_g [g̃_obj ∘ s̃_o ; g̃_text ∘ s̃_t]."""
    fused = concat([enc.row(2) * enc.row(0), enc.row(3) * enc.row(1)], axis=-1)
    return linear(P, "d.Wg", fused)


def score(query: Tensor, ocr_out: Tensor, P: dict) -> Tensor:
    """(B, L, V + M) logits: vocabulary branch then copy branch."""
    d = query.shape[-1]
    vocab = linear(P, "d.vocab", query)
    q = linear(P, "d.copy_q", query)
    k = linear(P, "d.copy_k", ocr_out)
    copy = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(d))
    return concat([vocab, copy], axis=-1)


# decoder input sources
START, VOCAB, OCR, UNK = 0, 1, 2, 3


@dataclass
class DecoderChoices:
    """Where each decoder row's input comes from: kind (B, L) and index (B, L)."""

    kind: np.ndarray
    index: np.ndarray


def decoder_inputs(choices: DecoderChoices, ocr_out: Tensor, P: dict) -> Tensor:
    B, L = choices.kind.shape
    V = P["d.ans_emb"].shape[0]
    M = ocr_out.shape[1]
    dtype = ocr_out.data.dtype
    onehot_v = np.zeros((B, L, V), dtype=dtype)
    onehot_o = np.zeros((B, L, M), dtype=dtype)
    bi, li = np.nonzero(choices.kind == VOCAB)
    onehot_v[bi, li, choices.index[bi, li]] = 1.0
    bi, li = np.nonzero(choices.kind == OCR)
    onehot_o[bi, li, choices.index[bi, li]] = 1.0
    src = onehot_v @ P["d.ans_emb"] + onehot_o @ ocr_out
    src = src + (choices.kind == START)[..., None].astype(dtype) * P["d.start"]
    src = src + (choices.kind == UNK)[..., None].astype(dtype) * P["d.unk"]
    return norm(P, "d.ln_in", src) + P["d.pos"][:L]


@dataclass
class Targets:
    y: np.ndarray  # (L, V + M) 0/1
    step_mask: np.ndarray  # (L,) bool
    kind: np.ndarray  # (L,) decoder input source per row (teacher forcing)
    index: np.ndarray  # (L,)
    words: list[str]


def build_targets(answer: str, vocab: AnswerVocab, ocr_tokens, L: int) -> Targets:
    """Multi-label step targets and teacher-forcing inputs for one answer."""
    words = normalize(answer).split()
    if not words:
        raise ValueError("answer is empty after normalization")
    if len(words) > L - 1:
        warnings.warn(f"answer {answer!r} has {len(words)} words; truncated to {L - 1}", AnswerTruncatedWarning, stacklevel=2)
        words = words[: L - 1]
    ocr_norm = [normalize(t) for t in ocr_tokens]
    V, M = len(vocab), len(ocr_norm)
    y = np.zeros((L, V + M))
    mask = np.zeros(L, dtype=bool)
    kind = np.full(L, VOCAB, dtype=np.int64)
    index = np.full(L, vocab.end_id, dtype=np.int64)
    kind[0], index[0] = START, 0
    for step, w in enumerate(words):
        vid = vocab.lookup(w)
        hits = [i for i, t in enumerate(ocr_norm) if t == w]
        if vid is not None:
            y[step, vid] = 1.0
        for i in hits:
            y[step, V + i] = 1.0
        mask[step] = True
        # the next row is fed this word; vocabulary first, then the first OCR match
        if vid is not None:
            kind[step + 1], index[step + 1] = VOCAB, vid
        elif hits:
            kind[step + 1], index[step + 1] = OCR, hits[0]
        else:
            kind[step + 1], index[step + 1] = UNK, 0
    y[len(words), vocab.end_id] = 1.0
    mask[len(words)] = True
    return Targets(y, mask, kind, index, words)


def bce_loss(logits: Tensor, y: np.ndarray, step_mask: np.ndarray, col_mask: np.ndarray) -> Tensor:
    """Mean BCE over valid steps (B, L) and valid columns (B, V + M)."""
    mask = step_mask[:, :, None] & col_mask[:, None, :]
    return bce_with_logits(logits, y, mask)
