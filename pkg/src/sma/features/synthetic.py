"""Synthetic scenes whose answer is fixed by one spatial relation.

Rules:

``to``  the answer is the only text box contained in the largest object
        (the largest object is at least ~2x the area of any other).
``tt``  one text reads ``MARKER``; the answer is the text whose center is
        nearest to it, with a 1.25x distance margin over the runner-up.
``ot``  a single object; the answer is the only text lying entirely to the
        right of it while overlapping its vertical extent.

:func:`answer_from_geometry` re-derives the answer from boxes alone.
"""

from __future__ import annotations

import numpy as np

from ..graph import BoundingBox
from .instances import Instance, ObjectRecord, TextRecord

RULES = ("to", "tt", "ot")
RULE_NAMES = {
    "to": "text-in-largest-object",
    "tt": "text-nearest-marked-text",
    "ot": "object-left-of-text",
}
QUESTIONS = {
    "to": "what word is written on the largest object",
    "tt": "what word is nearest to the marked word",
    "ot": "what word is to the right of the object",
}
MARKER = "marked"
OBJECT_LABELS = ("sign", "bottle", "shirt", "board", "bus", "box", "can", "screen")
_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"


class GenerationError(RuntimeError):
    pass


def resolve_rule(rule: str) -> str:
    for key, name in RULE_NAMES.items():
        if rule in (key, name, f"{key}-rule"):
            return key
    raise ValueError(f"unknown rule {rule!r}; expected one of {', '.join(RULES)}")


def _token(rng: np.random.Generator, taken: set[str]) -> str:
    while True:
        n = int(rng.integers(3, 7))
        tok = "".join(_CHARS[i] for i in rng.integers(0, 26, size=n))
        if int(rng.integers(0, 3)) == 0:
            tok += str(int(rng.integers(0, 100)))
        if tok not in taken and tok != MARKER:
            taken.add(tok)
            return tok


def _box(rng, W, H, w_frac, h_frac, inside: BoundingBox | None = None) -> BoundingBox:
    w = rng.uniform(*w_frac) * W
    h = rng.uniform(*h_frac) * H
    if inside is None:
        x0, y0, x1, y1 = 0.0, 0.0, W, H
    else:
        x0, y0, x1, y1 = inside.as_list()
        w, h = min(w, 0.8 * inside.w), min(h, 0.8 * inside.h)
    x = rng.uniform(x0, x1 - w)
    y = rng.uniform(y0, y1 - h)
    return BoundingBox(x, y, x + w, y + h)


_TEXT_W = (0.06, 0.12)
_TEXT_H = (0.04, 0.07)


def _scene_to(rng, W, H):
    large = _box(rng, W, H, (0.35, 0.55), (0.35, 0.55))
    objects = [large]
    for _ in range(int(rng.integers(1, 5))):
        objects.append(_box(rng, W, H, (0.14, 0.25), (0.12, 0.25)))
    answer_box = _box(rng, W, H, _TEXT_W, _TEXT_H, inside=large)
    distractors = []
    target = int(rng.integers(2, 7))
    tries = 0
    while len(distractors) < target:
        tries += 1
        if tries > 500:
            raise GenerationError("could not place distractor texts")
        host = objects[int(rng.integers(1, len(objects)))] if rng.random() < 0.5 else None
        b = _box(rng, W, H, _TEXT_W, _TEXT_H, inside=host)
        if not large.contains(b):
            distractors.append(b)
    order = rng.permutation(len(objects))
    return [objects[i] for i in order], answer_box, distractors


def _scene_tt(rng, W, H):
    objects = [_box(rng, W, H, (0.14, 0.4), (0.12, 0.4)) for _ in range(int(rng.integers(1, 5)))]
    for _ in range(500):
        boxes = [_box(rng, W, H, _TEXT_W, _TEXT_H) for _ in range(int(rng.integers(4, 9)))]
        marker, rest = boxes[0], boxes[1:]
        d = np.array([np.hypot(*(np.subtract(b.center, marker.center))) for b in rest])
        order = np.argsort(d)
        if d[order[1]] >= 1.25 * d[order[0]]:
            answer = rest[order[0]]
            distractors = [b for i, b in enumerate(rest) if i != order[0]]
            return objects, answer, distractors, marker
    raise GenerationError("could not place marked text with a clear nearest neighbour")


def _right_of(obj: BoundingBox, b: BoundingBox) -> bool:
    return b.x_tl >= obj.x_br and b.y_tl < obj.y_br and b.y_br > obj.y_tl


def _scene_ot(rng, W, H):
    for _ in range(500):
        obj = _box(rng, W, H, (0.15, 0.35), (0.2, 0.4))
        if obj.x_br > 0.75 * W:
            continue
        # answer: right of the object, vertically overlapping it
        w = rng.uniform(*_TEXT_W) * W
        h = rng.uniform(*_TEXT_H) * H
        x = rng.uniform(obj.x_br, min(W - w, obj.x_br + 0.2 * W))
        y = rng.uniform(max(0.0, obj.y_tl - h / 2), min(H - h, obj.y_br - h / 2))
        answer = BoundingBox(x, y, x + w, y + h)
        if not _right_of(obj, answer):
            continue
        distractors = []
        target = int(rng.integers(2, 7))
        for _ in range(200):
            b = _box(rng, W, H, _TEXT_W, _TEXT_H)
            if not _right_of(obj, b):
                distractors.append(b)
            if len(distractors) >= target:
                break
        if len(distractors) >= 2:
            return [obj], answer, distractors
    raise GenerationError("could not place object-left-of-text scene")


def generate_synthetic_scene(rule: str, seed, instance_id: str | None = None) -> Instance:
    """One rule-faithful instance; identical ``seed`` gives an identical instance."""
    rule = resolve_rule(rule)
    rng = np.random.default_rng(seed)
    W = float(rng.integers(480, 801))
    H = float(rng.integers(360, 641))
    marker = None
    if rule == "to":
        objects, answer_box, distractors = _scene_to(rng, W, H)
    elif rule == "tt":
        objects, answer_box, distractors, marker = _scene_tt(rng, W, H)
    else:
        objects, answer_box, distractors = _scene_ot(rng, W, H)

    taken: set[str] = set()
    answer_tok = _token(rng, taken)
    texts = [TextRecord(answer_tok, answer_box)] + [TextRecord(_token(rng, taken), b) for b in distractors]
    if marker is not None:
        texts.append(TextRecord(MARKER, marker))
    texts = [texts[i] for i in rng.permutation(len(texts))]
    objs = tuple(ObjectRecord(b, OBJECT_LABELS[int(rng.integers(len(OBJECT_LABELS)))]) for b in objects)
    if instance_id is None:
        instance_id = f"{rule}-{int(rng.integers(0, 2**31))}"
    return Instance(instance_id, W, H, QUESTIONS[rule], objs, tuple(texts), (answer_tok,) * 10)


def generate_dataset(rule: str, count: int, seed: int) -> list[Instance]:
    rule = resolve_rule(rule)
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [generate_synthetic_scene(rule, s, f"{rule}-{seed}-{i:05d}") for i, s in enumerate(seeds)]


def answer_from_geometry(inst: Instance, rule: str) -> str:
    """Recompute the answer from the boxes alone; raises if the relation is ambiguous."""
    rule = resolve_rule(rule)
    if rule == "to":
        areas = [o.box.area for o in inst.objects]
        ranked = sorted(areas)
        if len(ranked) > 1 and ranked[-1] == ranked[-2]:
            raise GenerationError("largest object is not unique")
        largest = inst.objects[int(np.argmax(areas))].box
        hits = [t.token for t in inst.texts if largest.contains(t.box)]
    elif rule == "tt":
        marks = [t for t in inst.texts if t.token == MARKER]
        if len(marks) != 1:
            raise GenerationError("expected exactly one marked text")
        mc = marks[0].box.center
        rest = [t for t in inst.texts if t is not marks[0]]
        d = [np.hypot(t.box.center[0] - mc[0], t.box.center[1] - mc[1]) for t in rest]
        best = min(d)
        hits = [t.token for t, di in zip(rest, d) if di == best]
    else:
        if len(inst.objects) != 1:
            raise GenerationError("expected a single object")
        obj = inst.objects[0].box
        hits = [t.token for t in inst.texts if _right_of(obj, t.box)]
    if len(hits) != 1:
        raise GenerationError(f"relation selects {len(hits)} texts")
    return hits[0]
