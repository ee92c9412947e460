"""Question and answer vocabularies (plain text, one entry per line, line index = id)."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

PAD, UNK = "<pad>", "<unk>"
END = "</s>"
_WORD = re.compile(r"[\w']+")


def normalize(text: str) -> str:
    """Lowercase and collapse whitespace."""
    return " ".join(text.lower().split())


def tokenize(question: str) -> list[str]:
    return _WORD.findall(question.lower())


def _read_lines(path) -> list[str]:
    if path is None:
        raise ValueError("vocabulary path is required")
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def _bundled(name: str) -> list[str]:
    text = resources.files("sma.data").joinpath(name).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


@dataclass
class QuestionVocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        if self.tokens[:2] != [PAD, UNK]:
            raise ValueError(f"question vocabulary must start with {PAD} and {UNK}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate entries in question vocabulary")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_file(cls, path) -> "QuestionVocab":
        return cls(_read_lines(path))

    @classmethod
    def default(cls) -> "QuestionVocab":
        return cls(_bundled("question_vocab.txt"))

    def encode(self, question: str, t_max: int) -> list[int]:
        ids = [self.index.get(tok, 1) for tok in tokenize(question)][:t_max]
        if not ids:
            raise ValueError("question has no tokens")
        return ids


@dataclass
class AnswerVocab:
    """Fixed answer words; the end-of-answer token is always present."""

    words: list[str]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.words = [normalize(w) if w != END else w for w in self.words]
        if END not in self.words:
            self.words.append(END)
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate entries in answer vocabulary")
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    @property
    def end_id(self) -> int:
        return self.index[END]

    def lookup(self, word: str) -> int | None:
        return self.index.get(normalize(word))

    @classmethod
    def from_file(cls, path) -> "AnswerVocab":
        return cls(_read_lines(path))

    @classmethod
    def default(cls) -> "AnswerVocab":
        return cls(_bundled("answer_vocab.txt"))
