"""Answer and OCR evaluation metrics.

All string comparisons lowercase and collapse whitespace first.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

from .graph import BoundingBox
from .vocab import normalize

REPORT_KEYS = ("accuracy", "anls", "ocr_ub", "precision", "recall", "hmean")


@dataclass(frozen=True)
class EvalRecord:
    question_id: str
    prediction: str
    answers: tuple[str, ...]
    ocr_tokens: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.answers:
            raise ValueError(f"{self.question_id}: at least one ground-truth answer is required")


@dataclass(frozen=True)
class OcrDetection:
    box: BoundingBox
    token: str

    def __post_init__(self):
        if not self.token:
            raise ValueError("detection token must be nonempty")


@dataclass
class MetricReport:
    accuracy: float | None = None
    anls: float | None = None
    ocr_ub: float | None = None
    precision: float | None = None
    recall: float | None = None
    hmean: float | None = None

    def to_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def vqa_accuracy(record: EvalRecord) -> float:
    pred = normalize(record.prediction)
    matches = sum(normalize(a) == pred for a in record.answers)
    return min(matches / 3.0, 1.0)


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalized_levenshtein(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    return 0.0 if longest == 0 else levenshtein(a, b) / longest


def anls_score(prediction: str, answers: Iterable[str], tau: float = 0.5) -> float:
    pred = normalize(prediction)
    best = 0.0
    for gt in answers:
        nl = normalized_levenshtein(pred, normalize(gt))
        # an exact match always counts, so tau=0 degrades to exact-match scoring
        best = max(best, 1.0 - nl if nl < tau or nl == 0 else 0.0)
    return best


def anls(records: Sequence[EvalRecord], tau: float = 0.5) -> float:
    if not records:
        return 0.0
    return sum(anls_score(r.prediction, r.answers, tau) for r in records) / len(records)


def answer_achievable(answer: str, ocr_tokens: Iterable[str]) -> bool:
    """Every word of the answer equals some OCR token; order ignored, tokens reusable."""
    words = normalize(answer).split()
    tokens = {normalize(t) for t in ocr_tokens}
    return bool(words) and all(w in tokens for w in words)


def most_frequent_answer(answers: Sequence[str]) -> str:
    counts = Counter(normalize(a) for a in answers)
    # ties resolved by first appearance
    best = max(counts.values())
    return next(normalize(a) for a in answers if counts[normalize(a)] == best)


def ocr_upper_bound(records: Sequence[EvalRecord]) -> float:
    """Mean VQA accuracy a perfect copy model could reach from each record's OCR tokens."""
    if not records:
        return 0.0
    total = 0.0
    for r in records:
        top = most_frequent_answer(r.answers)
        if answer_achievable(top, r.ocr_tokens):
            total += vqa_accuracy(EvalRecord(r.question_id, top, r.answers, r.ocr_tokens))
    return total / len(records)


def box_overlap(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 when the union has no area."""
    iw = max(0.0, min(a.x_br, b.x_br) - max(a.x_tl, b.x_tl))
    ih = max(0.0, min(a.y_br, b.y_br) - max(a.y_tl, b.y_tl))
    inter = iw * ih
    union = a.area + b.area - inter
    return 0.0 if union <= 0 else inter / union


def hmean(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def match_detections(preds: Sequence[OcrDetection], gts: Sequence[OcrDetection], thresh: float = 0.5) -> int:
    pairs = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            if normalize(p.token) != normalize(g.token):
                continue
            ov = box_overlap(p.box, g.box)
            if ov > thresh:
                pairs.append((ov, i, j))
    # descending overlap; index order only breaks exact ties
    pairs.sort(key=lambda x: (-x[0], x[1], x[2]))
    used_p, used_g = set(), set()
    for _, i, j in pairs:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
    return len(used_p)


def ocr_detection_eval(
    preds: Sequence[OcrDetection], gts: Sequence[OcrDetection], thresh: float = 0.5
) -> tuple[float, float, float]:
    matches = match_detections(preds, gts, thresh)
    p = matches / len(preds) if preds else 0.0
    r = matches / len(gts) if gts else 0.0
    return p, r, hmean(p, r)


def detection_report(pairs: Iterable[tuple[Sequence[OcrDetection], Sequence[OcrDetection]]], thresh: float = 0.5) -> MetricReport:
    """Dataset-level precision/recall pooled over images."""
    matches = n_pred = n_gt = 0
    for preds, gts in pairs:
        matches += match_detections(preds, gts, thresh)
        n_pred += len(preds)
        n_gt += len(gts)
    p = matches / n_pred if n_pred else 0.0
    r = matches / n_gt if n_gt else 0.0
    return MetricReport(precision=p, recall=r, hmean=hmean(p, r))


def evaluate(records: Sequence[EvalRecord], metrics: Iterable[str] = ("accuracy", "anls", "ocr_ub")) -> MetricReport:
    wanted = list(metrics)
    unknown = [m for m in wanted if m not in ("accuracy", "anls", "ocr_ub")]
    if unknown:
        raise ValueError(f"unknown metric(s): {', '.join(unknown)}")
    report = MetricReport()
    if "accuracy" in wanted:
        report.accuracy = sum(vqa_accuracy(r) for r in records) / len(records) if records else 0.0
    if "anls" in wanted:
        report.anls = anls(records)
    if "ocr_ub" in wanted:
        report.ocr_ub = ocr_upper_bound(records)
    return report


def read_predictions(path) -> dict[str, str]:
    """question id -> answer from a prediction file (one JSON record per line)."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            out[str(rec["question_id"])] = str(rec["answer"])
        except KeyError as exc:
            raise ValueError(f"{path}:{lineno}: missing field {exc}") from None
    return out
