"""Deterministic stand-ins for pretrained word, appearance and recognition features."""

from __future__ import annotations

import hashlib

import numpy as np


def pseudo_text_embedding(token: str, dim: int, seed: int = 0) -> np.ndarray:
    """Unit-norm Gaussian vector that is a pure function of (token, dim, seed)."""
    if dim <= 0:
        raise ValueError("dim must be positive")
    digest = hashlib.sha256(f"{seed}\x1f{dim}\x1f{token}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)
