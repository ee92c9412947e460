"""Full-model gradient check and the attention dump used by ``sma inspect``."""

from __future__ import annotations

import numpy as np

from .config import GRADCHECK, Config
from .features.instances import Instance, ObjectRecord, TextRecord
from .graph import EDGE_ROLES, BoundingBox
from .model import SMAModel
from .numerics import GradCheckReport, check_gradients
from .qencoder import ROLES
from .vocab import tokenize


def tiny_instance(seed: int, n: int = 3, m: int = 3) -> Instance:
    """Random small scene whose two-word answer mixes a vocabulary word and an OCR token."""
    rng = np.random.default_rng(seed)

    def box():
        x, y = rng.uniform(0, 80, size=2)
        w, h = rng.uniform(5, 20, size=2)
        return BoundingBox(float(x), float(y), float(x + w), float(y + h))

    tokens = [f"tok{seed}x{i}" for i in range(m - 1)] + ["red"]
    objects = tuple(ObjectRecord(box(), "sign") for _ in range(n))
    texts = tuple(TextRecord(t, box()) for t in tokens)
    return Instance(f"tiny-{seed}", 100.0, 100.0, "what is written on the red sign", objects, texts,
                    (f"red {tokens[0]}",) * 10)


def model_gradcheck(cfg: Config = GRADCHECK, seed: int = 0, max_coords: int | None = 16,
                    grad_hook=None) -> GradCheckReport:
    """check_gradients over every parameter block of a model on one tiny instance."""
    model = SMAModel(cfg.with_(seed=seed))
    batch = model.batch([tiny_instance(seed, n=min(3, cfg.n_max), m=min(3, cfg.m_max))])
    return check_gradients(lambda: model.loss(batch), model.params, eps=1e-5, tol=1e-4,
                           max_coords=max_coords, seed=seed, grad_hook=grad_hook)


def _floats(arr) -> list[float]:
    return [round(float(v), 8) for v in np.asarray(arr).reshape(-1)]


def attention_dump(model: SMAModel, inst: Instance) -> dict:
    """Every attention distribution for one instance plus its greedy decode trace."""
    batch = model.batch([inst])
    dq, att, _ = model.encode(batch)
    decoded = model.decode(batch)[0]
    n, m = len(inst.objects), len(inst.texts)
    words = tokenize(inst.question)[: model.cfg.t_max]
    question = {
        role: {"summary_norm": round(float(np.linalg.norm(dq.s.data[0, r])), 8),
               "token_attention": _floats(dq.token_attention.data[0, r, : len(words)])}
        for r, role in enumerate(ROLES)
    }
    nodes = {"o": _floats(att.p["o"].data[0, :n]), "t": _floats(att.p["t"].data[0, :m])}
    edges = {}
    for role in EDGE_ROLES:
        n_src = n if role[0] == "o" else m
        entry = {"enabled": role in model.cfg.edge_roles, "p": _floats(att.p[role].data[0, :n_src]), "edges": []}
        if role in att.q:
            table = batch.graph.edges[role]
            q = att.q[role].data[0]
            for i in range(n_src):
                for j in range(table.mask.shape[2]):
                    if table.mask[0, i, j]:
                        entry["edges"].append({"source": i, "target": int(table.target[0, i, j]), "q": round(float(q[i, j]), 8)})
        edges[role] = entry
    steps = []
    for step, tag in enumerate(decoded.sources, start=1):
        rec = {"step": step, "source": tag}
        if tag.startswith("copy:"):
            rec["token"] = inst.texts[int(tag.split(":")[1])].token
        steps.append(rec)
    return {
        "id": inst.id,
        "question": inst.question,
        "question_tokens": words,
        "ocr_tokens": inst.ocr_tokens,
        "question_roles": question,
        "triplets": {"object": dict(zip(ROLES[:3], _floats(dq.w_obj.data[0]))),
                     "text": dict(zip(ROLES[3:], _floats(dq.w_text.data[0])))},
        "node_attention": nodes,
        "edge_attention": edges,
        "alpha": {"object": _floats(att.alpha_obj.data[0, :n]), "text": _floats(att.alpha_text.data[0, :m])},
        "answer": decoded.answer,
        "decode": steps,
    }
