"""Building blocks shared by the model stages.

Parameters live in a flat ``dict[str, Tensor]``; every function here takes
that dict (or a prefix view of it) and reads weights by name.
"""

from __future__ import annotations

import math

import numpy as np

from .numerics import Tensor, concat, gelu, layer_norm, relu, softmax


class ParamInit:
    """Seeded initializer that records every parameter it creates."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}

    def _add(self, name: str, arr: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(arr, requires_grad=True)
        self.params[name] = t
        return t

    def normal(self, name: str, shape, fan_in: int | None = None) -> Tensor:
        fan_in = fan_in or shape[0]
        return self._add(name, self.rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape))

    def zeros(self, name: str, shape) -> Tensor:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self._add(name, np.ones(shape))

    def linear(self, name: str, d_in: int, d_out: int, bias: bool = True) -> None:
        self.normal(f"{name}.W", (d_in, d_out))
        if bias:
            self.zeros(f"{name}.b", (d_out,))

    def norm(self, name: str, d: int) -> None:
        self.ones(f"{name}.g", (d,))
        self.zeros(f"{name}.b", (d,))

    def transformer_layer(self, name: str, d: int) -> None:
        for part in ("q", "k", "v", "o"):
            # a key bias only shifts each score row, which softmax ignores
            self.linear(f"{name}.{part}", d, d, bias=part != "k")
        self.norm(f"{name}.ln1", d)
        self.linear(f"{name}.ff1", d, 4 * d)
        self.linear(f"{name}.ff2", 4 * d, d)
        self.norm(f"{name}.ln2", d)


def linear(P: dict, name: str, x) -> Tensor:
    y = x @ P[f"{name}.W"]
    b = P.get(f"{name}.b")
    return y if b is None else y + b


def norm(P: dict, name: str, x) -> Tensor:
    return layer_norm(x, P[f"{name}.g"], P[f"{name}.b"])


def gated_score(s_proj: Tensor, x_proj: Tensor, w: Tensor) -> Tensor:
    """``wᵀ[ReLU(s) ∘ ReLU(x)]`` with ``s`` broadcast over the node axes of ``x``."""
    return (relu(s_proj) * relu(x_proj)) @ w


def sinusoid(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, S, d = x.shape
    return x.reshape(B, S, heads, d // heads).transpose(0, 2, 1, 3)


def attention(P: dict, name: str, xq: Tensor, xkv: Tensor, mask: np.ndarray, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention.

    ``xq`` is (B, Sq, d), ``xkv`` is (B, Sk, d) and ``mask`` broadcasts to
    (B, Sq, Sk) with True where a query may look.
    """
    B, Sq, d = xq.shape
    q = _split_heads(linear(P, f"{name}.q", xq), heads)
    k = _split_heads(linear(P, f"{name}.k", xkv), heads)
    v = _split_heads(linear(P, f"{name}.v", xkv), heads)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d // heads))
    a = softmax(scores, mask=np.asarray(mask)[:, None, :, :])
    out = (a @ v).transpose(0, 2, 1, 3).reshape(B, Sq, d)
    return linear(P, f"{name}.o", out)


def transformer_layer(P: dict, name: str, xq: Tensor, xkv: Tensor, mask: np.ndarray, heads: int) -> Tensor:
    """Post-LN encoder layer; queries ``xq`` attend over ``xkv``."""
    h = norm(P, f"{name}.ln1", xq + attention(P, name, xq, xkv, mask, heads))
    ff = linear(P, f"{name}.ff2", gelu(linear(P, f"{name}.ff1", h)))
    return norm(P, f"{name}.ln2", h + ff)


def self_attention_stack(P: dict, names, x: Tensor, mask: np.ndarray, heads: int) -> list[Tensor]:
    """Run layers in order; returns the input plus every layer's output."""
    states = [x]
    for name in names:
        x = transformer_layer(P, name, x, x, mask, heads)
        states.append(x)
    return states


def prefix_stack(P: dict, names, prefix_states: list[Tensor], x: Tensor, prefix_mask: np.ndarray,
                 self_mask: np.ndarray, heads: int) -> Tensor:
    """Rows ``x`` that see a frozen prefix plus themselves at every layer.

    Equivalent to running the joint sequence through the stack when the
    prefix rows never look at ``x``; ``prefix_states[l]`` is the prefix input
    to layer ``l``.
    """
    mask = np.concatenate([prefix_mask, self_mask], axis=-1)
    for layer, name in enumerate(names):
        kv = concat([prefix_states[layer], x], axis=1)
        x = transformer_layer(P, name, x, kv, mask, heads)
    return x
