"""Pyramidal histogram of characters (604 dims).

Layout: unigram levels 2, 3, 4, 5 (14 regions x 36 characters = 504 dims),
then 50 bigrams at level 2 (2 regions x 50 = 100 dims).  Within a level,
regions are laid out left to right and each region holds one bit per symbol.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

import numpy as np

ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789"
UNIGRAM_LEVELS = (2, 3, 4, 5)
BIGRAM_LEVELS = (2,)
PHOC_DIM = 604


@lru_cache(maxsize=1)
def bigrams() -> tuple[str, ...]:
    text = resources.files("sma.data").joinpath("phoc_bigrams.txt").read_text()
    grams = tuple(line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#"))
    assert len(grams) == 50 and len(set(grams)) == 50
    return grams


def clean(word: str) -> str:
    return "".join(ch for ch in word.lower() if ch in ALPHABET)


def _occupied(start: int, stop: int, n: int, region: int, level: int) -> bool:
    # span [start/n, stop/n) vs region [region/level, (region+1)/level), scaled by n*level
    lo = max(start * level, region * n)
    hi = min(stop * level, (region + 1) * n)
    return 2 * max(0, hi - lo) >= (stop - start) * level


def phoc(word: str) -> np.ndarray:
    w = clean(word)
    out = np.zeros(PHOC_DIM)
    n = len(w)
    if n == 0:
        return out
    index = {ch: i for i, ch in enumerate(ALPHABET)}
    base = 0
    for level in UNIGRAM_LEVELS:
        for i, ch in enumerate(w):
            for r in range(level):
                if _occupied(i, i + 1, n, r, level):
                    out[base + r * len(ALPHABET) + index[ch]] = 1.0
        base += level * len(ALPHABET)
    grams = {g: i for i, g in enumerate(bigrams())}
    for level in BIGRAM_LEVELS:
        for i in range(n - 1):
            g = grams.get(w[i : i + 2])
            if g is None:
                continue
            for r in range(level):
                if _occupied(i, i + 2, n, r, level):
                    out[base + r * len(grams) + g] = 1.0
        base += level * len(grams)
    return out
