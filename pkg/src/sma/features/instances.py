"""Instance records and the line-delimited instance file.

File layout: UTF-8, one JSON object per line.  Line 1 is the header
``{"format": "sma-instances", "version": 1}``; every following line is one
instance::

    {"id": str, "W": number, "H": number, "question": str,
     "objects": [{"box": [x_tl, y_tl, x_br, y_br], "label": str?, "appearance": [2048 numbers]?}],
     "texts":   [{"token": str, "box": [...], "word_vec": [300]?, "appearance": [2048]?,
                  "phoc": [604]?, "recog": [512]?}],
     "answers": [str, ...]}

Keys marked ``?`` are optional; missing features are synthesized
deterministically by :func:`node_features`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..graph import BoundingBox, TextNode
from .embeddings import pseudo_text_embedding
from .phoc import PHOC_DIM, phoc

FORMAT = "sma-instances"
VERSION = 1
N_MAX = 36
M_MAX = 50
WORD_DIM = 300
APPEARANCE_DIM = 2048
RECOG_DIM = 512
BOX_DIM = 4

TEXT_WIDTHS = {"word_vec": WORD_DIM, "appearance": APPEARANCE_DIM, "phoc": PHOC_DIM, "recog": RECOG_DIM}


class InstanceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectRecord:
    box: BoundingBox
    label: str = "object"
    appearance: tuple[float, ...] | None = None


@dataclass(frozen=True)
class TextRecord:
    token: str
    box: BoundingBox
    word_vec: tuple[float, ...] | None = None
    appearance: tuple[float, ...] | None = None
    phoc: tuple[float, ...] | None = None
    recog: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Instance:
    id: str
    width: float
    height: float
    question: str
    objects: tuple[ObjectRecord, ...] = ()
    texts: tuple[TextRecord, ...] = ()
    answers: tuple[str, ...] = ()

    @property
    def ocr_tokens(self) -> list[str]:
        return [t.token for t in self.texts]

    def text_nodes(self) -> list[TextNode]:
        return [TextNode(t.box, t.token) for t in self.texts]


@dataclass
class NodeFeatures:
    obj_appearance: np.ndarray  # (N, 2048)
    obj_box: np.ndarray  # (N, 4), normalized
    word_vec: np.ndarray  # (M, 300)
    txt_appearance: np.ndarray  # (M, 2048)
    phoc: np.ndarray  # (M, 604)
    recog: np.ndarray  # (M, 512)
    txt_box: np.ndarray  # (M, 4), normalized
    extras: dict = field(default_factory=dict)


def node_features(inst: Instance, seed: int = 0) -> NodeFeatures:
    """Feature matrices for one instance; stored features win over synthesized ones."""

    def pick(stored, token, dim, salt):
        if stored is not None:
            return np.asarray(stored, dtype=np.float64)
        return pseudo_text_embedding(f"{salt}:{token}", dim, seed)

    def norm_box(b: BoundingBox):
        return [b.x_tl / inst.width, b.y_tl / inst.height, b.x_br / inst.width, b.y_br / inst.height]

    objs, txts = inst.objects, inst.texts
    return NodeFeatures(
        obj_appearance=np.array([pick(o.appearance, o.label, APPEARANCE_DIM, "object") for o in objs]).reshape(-1, APPEARANCE_DIM),
        obj_box=np.array([norm_box(o.box) for o in objs]).reshape(-1, BOX_DIM),
        word_vec=np.array([pick(t.word_vec, t.token, WORD_DIM, "fasttext") for t in txts]).reshape(-1, WORD_DIM),
        txt_appearance=np.array([pick(t.appearance, t.token, APPEARANCE_DIM, "region") for t in txts]).reshape(-1, APPEARANCE_DIM),
        phoc=np.array([np.asarray(t.phoc, dtype=np.float64) if t.phoc is not None else phoc(t.token) for t in txts]).reshape(-1, PHOC_DIM),
        recog=np.array([pick(t.recog, t.token, RECOG_DIM, "recog") for t in txts]).reshape(-1, RECOG_DIM),
        txt_box=np.array([norm_box(t.box) for t in txts]).reshape(-1, BOX_DIM),
    )


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def _box_out(b: BoundingBox) -> list[float]:
    return [float(v) for v in b.as_list()]


def instance_to_dict(inst: Instance) -> dict:
    objects = []
    for o in inst.objects:
        rec: dict = {"box": _box_out(o.box), "label": o.label}
        if o.appearance is not None:
            rec["appearance"] = [float(v) for v in o.appearance]
        objects.append(rec)
    texts = []
    for t in inst.texts:
        rec = {"token": t.token, "box": _box_out(t.box)}
        for key in TEXT_WIDTHS:
            val = getattr(t, key)
            if val is not None:
                rec[key] = [float(v) for v in val]
        texts.append(rec)
    return {
        "id": inst.id,
        "W": float(inst.width),
        "H": float(inst.height),
        "question": inst.question,
        "objects": objects,
        "texts": texts,
        "answers": list(inst.answers),
    }


def _parse_box(raw, where: str) -> BoundingBox:
    if not isinstance(raw, list) or len(raw) != 4 or not all(isinstance(v, (int, float)) for v in raw):
        raise InstanceFormatError(f"{where}: box must be 4 numbers")
    x0, y0, x1, y1 = (float(v) for v in raw)
    if x1 <= x0 or y1 <= y0:
        raise InstanceFormatError(f"{where}: degenerate box {raw}")
    return BoundingBox(x0, y0, x1, y1)


def _parse_vec(raw, width: int, where: str, binary: bool = False) -> tuple[float, ...] | None:
    if raw is None:
        return None
    if not isinstance(raw, list) or len(raw) != width:
        raise InstanceFormatError(f"{where}: expected {width} numbers")
    vals = tuple(float(v) for v in raw)
    if not np.all(np.isfinite(vals)):
        raise InstanceFormatError(f"{where}: non-finite value")
    if binary and any(v not in (0.0, 1.0) for v in vals):
        raise InstanceFormatError(f"{where}: phoc entries must be 0 or 1")
    return vals


def instance_from_dict(d: dict, where: str = "record", n_max: int = N_MAX, m_max: int = M_MAX) -> Instance:
    try:
        iid, width, height = str(d["id"]), float(d["W"]), float(d["H"])
        question, objects, texts, answers = d["question"], d["objects"], d["texts"], d["answers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceFormatError(f"{where}: missing or invalid field ({exc})") from None
    if width <= 0 or height <= 0:
        raise InstanceFormatError(f"{where}: image size must be positive")
    if not isinstance(question, str) or not question.split():
        raise InstanceFormatError(f"{where}: question must be a nonempty string")
    if len(objects) > n_max:
        raise InstanceFormatError(f"{where}: {len(objects)} objects exceeds the cap of N={n_max} object regions")
    if len(texts) > m_max:
        raise InstanceFormatError(f"{where}: {len(texts)} OCR tokens exceeds the cap of M={m_max} tokens")
    if not isinstance(answers, list) or not 1 <= len(answers) <= 10 or not all(isinstance(a, str) for a in answers):
        raise InstanceFormatError(f"{where}: answers must be 1-10 strings")
    objs = []
    for i, o in enumerate(objects):
        loc = f"{where}: objects[{i}]"
        objs.append(
            ObjectRecord(
                box=_parse_box(o.get("box"), loc),
                label=str(o.get("label", "object")),
                appearance=_parse_vec(o.get("appearance"), APPEARANCE_DIM, loc + ".appearance"),
            )
        )
    txts = []
    for i, t in enumerate(texts):
        loc = f"{where}: texts[{i}]"
        token = t.get("token")
        if not isinstance(token, str) or not token:
            raise InstanceFormatError(f"{loc}: token must be a nonempty string")
        vecs = {k: _parse_vec(t.get(k), w, f"{loc}.{k}", binary=(k == "phoc")) for k, w in TEXT_WIDTHS.items()}
        txts.append(TextRecord(token=token, box=_parse_box(t.get("box"), loc), **vecs))
    return Instance(iid, width, height, question, tuple(objs), tuple(txts), tuple(answers))


def save_instances(path, instances: Iterable[Instance]) -> None:
    lines = [json.dumps({"format": FORMAT, "version": VERSION}, sort_keys=True)]
    lines += [json.dumps(instance_to_dict(inst), sort_keys=True) for inst in instances]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_instances(path, n_max: int = N_MAX, m_max: int = M_MAX) -> list[Instance]:
    """Parse and validate an instance file; the first bad line raises with its line number."""
    text = Path(path).read_text(encoding="utf-8")
    out: list[Instance] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InstanceFormatError(f"{where}: malformed JSON ({exc.msg})") from None
        if lineno == 1 and isinstance(rec, dict) and "format" in rec:
            if rec.get("format") != FORMAT or rec.get("version") != VERSION:
                raise InstanceFormatError(f"{where}: unsupported header {rec}")
            continue
        if not isinstance(rec, dict):
            raise InstanceFormatError(f"{where}: record must be an object")
        inst = instance_from_dict(rec, where, n_max, m_max)
        if inst.id in seen:
            raise InstanceFormatError(f"{where}: duplicate id {inst.id!r}")
        seen.add(inst.id)
        out.append(inst)
    return out
