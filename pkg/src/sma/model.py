"""The full model: question decomposition, graph attention and answer decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .decoder import (
    OCR,
    START,
    VOCAB,
    DecoderChoices,
    Targets,
    bce_loss,
    build_global_inputs,
    build_targets,
    decode_rows,
    decoder_inputs,
    encode,
    first_step_query,
    init_decoder,
    score,
)
from .features.instances import Instance, node_features
from .graph import EDGE_ROLES, SceneGraph, build_graph
from .graph_attention import GraphBatch, edge_table, init_graph_attention, run_graph_attention
from .layers import ParamInit
from .metrics import most_frequent_answer
from .numerics import Tensor, concat
from .qencoder import QuestionBatch, decompose_question, embed_question, init_qencoder
from .vocab import AnswerVocab, QuestionVocab


class CapacityError(ValueError):
    pass


@dataclass
class Prepared:
    """Everything about one instance that does not depend on parameters."""

    instance: Instance
    q_ids: list[int]
    feats: object
    graph: SceneGraph
    targets: Targets


@dataclass
class Batch:
    items: list[Prepared]
    question: QuestionBatch
    graph: GraphBatch
    y: np.ndarray  # (B, L, V + M)
    step_mask: np.ndarray  # (B, L)
    col_mask: np.ndarray  # (B, V + M)
    teacher: DecoderChoices

    @property
    def size(self) -> int:
        return len(self.items)

    @property
    def ocr_mask(self) -> np.ndarray:
        return self.graph.txt_mask


@dataclass
class ForwardResult:
    logits: Tensor  # (B, L, V + M)
    decomposed: object
    attention: object
    encoder: object


def init_params(cfg: Config, q_vocab_size: int, a_vocab_size: int) -> dict[str, Tensor]:
    init = ParamInit(cfg.seed)
    init_qencoder(init, q_vocab_size, cfg.d, encoder=cfg.encoder)
    init_graph_attention(init, cfg.d)
    init_decoder(init, cfg.d, a_vocab_size, cfg.layers, cfg.L)
    return init.params


class SMAModel:
    def __init__(self, cfg: Config, params: dict[str, Tensor] | None = None,
                 qvocab: QuestionVocab | None = None, avocab: AnswerVocab | None = None):
        self.cfg = cfg
        self.qvocab = qvocab or (QuestionVocab.from_file(cfg.question_vocab) if cfg.question_vocab else QuestionVocab.default())
        self.avocab = avocab or (AnswerVocab.from_file(cfg.answer_vocab) if cfg.answer_vocab else AnswerVocab.default())
        self.params = params if params is not None else init_params(cfg, len(self.qvocab), len(self.avocab))

    # ------------------------------------------------------------------ data

    def check_instance(self, inst: Instance) -> None:
        if len(inst.objects) > self.cfg.n_max:
            raise CapacityError(f"{inst.id}: {len(inst.objects)} objects exceed N={self.cfg.n_max}")
        if len(inst.texts) > self.cfg.m_max:
            raise CapacityError(f"{inst.id}: {len(inst.texts)} OCR tokens exceed M={self.cfg.m_max}")
        if not inst.objects and not inst.texts:
            raise CapacityError(f"{inst.id}: instance has no nodes")

    def prepare(self, inst: Instance) -> Prepared:
        self.check_instance(inst)
        q_ids = self.qvocab.encode(inst.question, self.cfg.t_max)
        feats = node_features(inst, seed=self.cfg.feature_seed)
        graph = build_graph([o.box for o in inst.objects], inst.text_nodes(), inst.width, inst.height, k=self.cfg.k)
        answer = most_frequent_answer(inst.answers)
        targets = build_targets(answer, self.avocab, inst.ocr_tokens, self.cfg.L)
        return Prepared(inst, q_ids, feats, graph, targets)

    def collate(self, items: list[Prepared]) -> Batch:
        B = len(items)
        N = max(1, max(len(p.instance.objects) for p in items))
        M = max(1, max(len(p.instance.texts) for p in items))
        T = max(len(p.q_ids) for p in items)
        V, L = len(self.avocab), self.cfg.L

        q_ids = np.zeros((B, T), dtype=np.int64)
        q_mask = np.zeros((B, T), dtype=bool)

        def pad(rows, width, n):
            out = np.zeros((B, n, width))
            for b, r in enumerate(rows):
                out[b, : len(r)] = r
            return out

        f = [p.feats for p in items]
        obj_mask = np.zeros((B, N), dtype=bool)
        txt_mask = np.zeros((B, M), dtype=bool)
        y = np.zeros((B, L, V + M))
        step_mask = np.zeros((B, L), dtype=bool)
        col_mask = np.zeros((B, V + M), dtype=bool)
        col_mask[:, :V] = True
        kind = np.zeros((B, L), dtype=np.int64)
        index = np.zeros((B, L), dtype=np.int64)
        for b, p in enumerate(items):
            q_ids[b, : len(p.q_ids)] = p.q_ids
            q_mask[b, : len(p.q_ids)] = True
            n, m = len(p.instance.objects), len(p.instance.texts)
            obj_mask[b, :n] = True
            txt_mask[b, :m] = True
            col_mask[b, V : V + m] = True
            t = p.targets
            y[b, :, :V] = t.y[:, :V]
            y[b, :, V : V + m] = t.y[:, V:]
            step_mask[b] = t.step_mask
            kind[b], index[b] = t.kind, t.index

        graphs = [p.graph for p in items]
        edges = {role: edge_table(graphs, role, N if role[0] == "o" else M, self.cfg.k) for role in EDGE_ROLES}
        gb = GraphBatch(
            obj_appearance=pad([x.obj_appearance for x in f], f[0].obj_appearance.shape[1], N),
            obj_box=pad([x.obj_box for x in f], 4, N),
            obj_mask=obj_mask,
            word_vec=pad([x.word_vec for x in f], f[0].word_vec.shape[1], M),
            txt_appearance=pad([x.txt_appearance for x in f], f[0].txt_appearance.shape[1], M),
            phoc=pad([x.phoc for x in f], f[0].phoc.shape[1], M),
            recog=pad([x.recog for x in f], f[0].recog.shape[1], M),
            txt_box=pad([x.txt_box for x in f], 4, M),
            txt_mask=txt_mask,
            edges=edges,
        )
        return Batch(items, QuestionBatch(q_ids, q_mask), gb, y, step_mask, col_mask, DecoderChoices(kind, index))

    def batch(self, instances) -> Batch:
        return self.collate([self.prepare(i) for i in instances])

    # --------------------------------------------------------------- forward

    def encode(self, batch: Batch):
        P, cfg = self.params, self.cfg
        x_q = embed_question(batch.question, P, heads=cfg.heads)
        dq = decompose_question(x_q, batch.question.mask, P)
        _, x_txt, att = run_graph_attention(batch.graph, dq, P, roles=cfg.edge_roles)
        inputs = build_global_inputs(dq.s, att.g_obj, att.g_text, att.alpha_text, x_txt, batch.ocr_mask, P)
        enc = encode(inputs, P, cfg.layers, cfg.heads)
        return dq, att, enc

    def logits(self, enc, choices: DecoderChoices) -> Tensor:
        """Scores for every step given the decoder input choices."""
        return self.logits_from_inputs(enc, decoder_inputs(choices, enc.ocr, self.params))

    def logits_from_inputs(self, enc, dec_in: Tensor) -> Tensor:
        """Scores given explicit (B, L, d) decoder input rows."""
        P, cfg = self.params, self.cfg
        dec_out = decode_rows(enc, dec_in, P, cfg.layers, cfg.heads)
        B, _, d = dec_out.shape
        query = concat([first_step_query(enc, P).reshape(B, 1, d), dec_out[:, 1:]], axis=1)
        return score(query, enc.ocr, P)

    def forward(self, batch: Batch) -> ForwardResult:
        """Teacher-forced scores for every decoding step."""
        dq, att, enc = self.encode(batch)
        return ForwardResult(self.logits(enc, batch.teacher), dq, att, enc)

    def loss(self, batch: Batch) -> Tensor:
        out = self.forward(batch)
        return bce_loss(out.logits, batch.y, batch.step_mask, batch.col_mask)

    # -------------------------------------------------------------- decoding

    def decode(self, batch: Batch) -> list["Decoded"]:
        """Greedy decoding; returns the answer string and per-step source tags."""
        _, _, enc = self.encode(batch)
        B, L, V = batch.size, self.cfg.L, len(self.avocab)
        end = self.avocab.end_id
        kind = np.full((B, L), VOCAB, dtype=np.int64)
        index = np.full((B, L), end, dtype=np.int64)
        kind[:, 0] = START
        index[:, 0] = 0
        done = np.zeros(B, dtype=bool)
        picks: list[list[int]] = [[] for _ in range(B)]
        for step in range(L):
            # rows after ``step`` cannot influence step ``step`` under the causal mask
            logits = self.logits(enc, DecoderChoices(kind, index)).data[:, step]
            logits = np.where(batch.col_mask, logits, -np.inf)
            choice = logits.argmax(axis=-1)
            for b in range(B):
                if done[b]:
                    continue
                c = int(choice[b])
                picks[b].append(c)
                if c == end:
                    done[b] = True
                elif step + 1 < L:
                    kind[b, step + 1], index[b, step + 1] = (VOCAB, c) if c < V else (OCR, c - V)
            if done.all():
                break
        return [self._render(p, item.instance) for p, item in zip(picks, batch.items)]

    def _render(self, picks: list[int], inst: Instance) -> "Decoded":
        V, end = len(self.avocab), self.avocab.end_id
        words, tags = [], []
        for c in picks:
            if c == end:
                tags.append("end")
                break
            if c < V:
                words.append(self.avocab.words[c])
                tags.append("vocab")
            else:
                words.append(inst.texts[c - V].token)
                tags.append(f"copy:{c - V}")
        return Decoded(inst.id, " ".join(words), tags)


@dataclass
class Decoded:
    question_id: str
    answer: str
    sources: list[str]

    def to_dict(self) -> dict:
        return {"question_id": self.question_id, "answer": self.answer, "sources": self.sources}


def answer_scores(logits: np.ndarray, col_mask: np.ndarray, m_max: int, vocab_size: int) -> np.ndarray:
    """Pad copy columns out to ``m_max``; padded and missing OCR slots score -inf."""
    B, L, width = logits.shape
    out = np.full((B, L, vocab_size + m_max), -np.inf)
    valid = np.where(col_mask[:, None, :], logits, -np.inf)
    out[:, :, :width] = valid
    return out
