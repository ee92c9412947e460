"""Training loop and checkpoints."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import Config
from .features.instances import Instance
from .model import Prepared, SMAModel
from .numerics import AdamState, Tape, Tensor, adam_step, backward
from .numerics.container import ContainerError, from_bytes, to_bytes
from .vocab import AnswerVocab, QuestionVocab

CHECKPOINT_KIND = "sma-checkpoint"


@dataclass
class LossRecord:
    step: int
    loss: float
    lr: float


@dataclass
class Trainer:
    model: SMAModel
    opt: AdamState = field(default_factory=AdamState)
    step: int = 0

    def __post_init__(self):
        self.opt.lr = self.model.cfg.lr

    def batches(self, items: Sequence[Prepared], seed: int, skip: int = 0):
        """Endless stream of shuffled batches; the order depends only on ``seed`` and the epoch.

        ``skip`` drops that many batches first so a resumed run continues the
        same sequence.
        """
        n, bs = len(items), self.model.cfg.batch_size
        if n == 0:
            raise ValueError("cannot train on an empty dataset")
        if bs >= n:
            full = self.model.collate(list(items))
            while True:
                yield full
        per_epoch = n // bs
        epoch, offset = divmod(skip, per_epoch)
        while True:
            order = np.random.default_rng([seed, epoch]).permutation(n)
            for b in range(offset, per_epoch):
                yield self.model.collate([items[i] for i in order[b * bs : (b + 1) * bs]])
            offset = 0
            epoch += 1

    def train_step(self, batch) -> float:
        params = self.model.params
        for p in params.values():
            p.zero_grad()
        with Tape() as tape:
            loss = self.model.loss(batch)
        backward(tape, loss)
        lr = self.model.cfg.lr_at(self.step)
        adam_step({k: p.data for k, p in params.items()}, {k: p.grad for k, p in params.items()}, self.opt, lr=lr)
        self.step += 1
        return loss.item()

    def fit(self, instances: Sequence[Instance], steps: int,
            on_step: Callable[[LossRecord], bool | None] | None = None) -> list[LossRecord]:
        """Run ``steps`` Adam steps; ``on_step`` returning True stops early."""
        items = [self.model.prepare(i) for i in instances]
        log: list[LossRecord] = []
        if steps <= 0:
            return log
        stream = self.batches(items, self.model.cfg.seed, skip=self.step)
        for _ in range(steps):
            lr = self.model.cfg.lr_at(self.step)
            rec = LossRecord(self.step + 1, self.train_step(next(stream)), lr)
            log.append(rec)
            if on_step is not None and on_step(rec):
                break
        return log


def exact_match(model: SMAModel, instances: Sequence[Instance], batch_size: int = 64) -> float:
    """Fraction of instances whose greedy answer equals the most frequent ground truth."""
    from .metrics import most_frequent_answer
    from .vocab import normalize

    hits = 0
    for start in range(0, len(instances), batch_size):
        chunk = list(instances[start : start + batch_size])
        for inst, dec in zip(chunk, model.decode(model.batch(chunk))):
            hits += normalize(dec.answer) == most_frequent_answer(inst.answers)
    return hits / len(instances) if instances else 0.0


def write_loss_log(path, log: Sequence[LossRecord]) -> None:
    lines = ["step\tloss\tlr"] + [f"{r.step}\t{r.loss:.10g}\t{r.lr:.6g}" for r in log]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_loss_log(path) -> list[LossRecord]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    out = []
    for row in rows:
        step, loss, lr = row.split("\t")
        out.append(LossRecord(int(step), float(loss), float(lr)))
    return out


# ------------------------------------------------------------------ checkpoints


def checkpoint_bytes(trainer: Trainer) -> bytes:
    model, opt = trainer.model, trainer.opt
    entries = {}
    for name in sorted(model.params):
        entries[f"param/{name}"] = model.params[name].data
    for name in sorted(opt.m):
        entries[f"adam_m/{name}"] = opt.m[name]
        entries[f"adam_v/{name}"] = opt.v[name]
    meta = {
        "kind": CHECKPOINT_KIND,
        "config": model.cfg.to_dict(),
        "step": trainer.step,
        "adam": {"t": opt.t, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "question_vocab": model.qvocab.tokens,
        "answer_vocab": model.avocab.words,
    }
    return to_bytes(entries, meta)


def save_checkpoint(path, trainer: Trainer) -> str:
    """Write the checkpoint and return its content hash (sha256 of the file bytes)."""
    blob = checkpoint_bytes(trainer)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def content_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_checkpoint(path) -> Trainer:
    try:
        entries, meta = from_bytes(Path(path).read_bytes())
    except (ContainerError, json.JSONDecodeError, ValueError) as exc:
        raise ContainerError(f"{path}: {exc}") from None
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ContainerError(f"{path}: not a model checkpoint")
    cfg = Config.from_dict(meta["config"])
    params = {k[len("param/"):]: Tensor(v, requires_grad=True) for k, v in entries.items() if k.startswith("param/")}
    model = SMAModel(cfg, params, QuestionVocab(meta["question_vocab"]), AnswerVocab(meta["answer_vocab"]))
    adam = meta["adam"]
    opt = AdamState(lr=cfg.lr, beta1=adam["beta1"], beta2=adam["beta2"], eps=adam["eps"], t=adam["t"])
    for k, v in entries.items():
        if k.startswith("adam_m/"):
            opt.m[k[len("adam_m/"):]] = v
        elif k.startswith("adam_v/"):
            opt.v[k[len("adam_v/"):]] = v
    return Trainer(model, opt, step=int(meta["step"]))
