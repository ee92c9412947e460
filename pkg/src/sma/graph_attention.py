"""Role-aware attention over the object/text scene graph.

Everything is batched: node tensors are (B, N, ·) or (B, M, ·) with boolean
validity masks, and each edge role is a padded neighbor table (B, S, k) over
its source nodes.  Roles whose source type is absent, or whose neighborhoods
are all empty, are marked unsupported per instance and drop out of the
weighting step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features.instances import APPEARANCE_DIM, BOX_DIM, PHOC_DIM, RECOG_DIM, WORD_DIM
from .graph import EDGE_ROLES, SceneGraph
from .layers import ParamInit, gated_score, linear, norm
from .numerics import EmptySupportError, Tensor, relu, softmax

NODE_ROLES = ("o", "t")
EDGE_FEATURE_DIM = 5


@dataclass
class EdgeTable:
    """Padded neighbor lists of one role: ``target[b, i, j]`` is the j-th neighbor of source i."""

    target: np.ndarray  # (B, S, k) int
    feature: np.ndarray  # (B, S, k, 5)
    mask: np.ndarray  # (B, S, k) bool

    @property
    def support(self) -> np.ndarray:
        """(B, S) True where the source node has at least one edge."""
        return self.mask.any(axis=-1)


def edge_table(graphs: list[SceneGraph], role: str, n_src: int, k: int) -> EdgeTable:
    B = len(graphs)
    target = np.zeros((B, n_src, k), dtype=np.int64)
    feature = np.zeros((B, n_src, k, EDGE_FEATURE_DIM))
    mask = np.zeros((B, n_src, k), dtype=bool)
    for b, g in enumerate(graphs):
        fill = np.zeros(n_src, dtype=np.int64)
        for e in g.edges[role]:
            j = fill[e.source]
            if j >= k:
                raise ValueError(f"node {e.source} has more than k={k} {role} edges")
            target[b, e.source, j] = e.target
            feature[b, e.source, j] = e.feature
            mask[b, e.source, j] = True
            fill[e.source] += 1
    return EdgeTable(target, feature, mask)


@dataclass
class GraphBatch:
    obj_appearance: np.ndarray
    obj_box: np.ndarray
    obj_mask: np.ndarray
    word_vec: np.ndarray
    txt_appearance: np.ndarray
    phoc: np.ndarray
    recog: np.ndarray
    txt_box: np.ndarray
    txt_mask: np.ndarray
    edges: dict[str, EdgeTable]


@dataclass
class AttentionState:
    p: dict[str, Tensor]  # role -> (B, N) or (B, M)
    q: dict[str, Tensor]  # edge role -> (B, S, k)
    x_tilde: dict[str, Tensor]  # edge role -> (B, S, d)
    support: dict[str, np.ndarray]  # role -> (B,) bool
    alpha_obj: Tensor
    alpha_text: Tensor
    g_obj: Tensor
    g_text: Tensor


def init_graph_attention(init: ParamInit, d: int) -> None:
    init.linear("g.obj.fr", APPEARANCE_DIM, d, bias=False)
    init.linear("g.obj.box", BOX_DIM, d, bias=False)
    init.norm("g.obj.ln_fr", d)
    init.norm("g.obj.ln_box", d)
    for name, width in (("ft", WORD_DIM), ("fr", APPEARANCE_DIM), ("p", PHOC_DIM), ("rec", RECOG_DIM)):
        init.linear(f"g.txt.{name}", width, d, bias=False)
    init.linear("g.txt.box", BOX_DIM, d, bias=False)
    init.norm("g.txt.ln_x", d)
    init.norm("g.txt.ln_box", d)
    for role in NODE_ROLES + EDGE_ROLES:
        _init_scorer(init, f"g.{role}", d)
    for role in EDGE_ROLES:
        _init_scorer(init, f"g.{role}2", d)
        init.linear(f"g.{role}.mlp1e", EDGE_FEATURE_DIM, d, bias=False)
        init.linear(f"g.{role}.mlp1x", d, d)
        init.linear(f"g.{role}.mlp2", d, d)


def _init_scorer(init: ParamInit, name: str, d: int) -> None:
    init.linear(f"{name}.s", d, d, bias=False)
    init.linear(f"{name}.x", d, d, bias=False)
    init.normal(f"{name}.w", (d,), fan_in=d)


def _check_width(arr: np.ndarray, width: int, what: str) -> None:
    if arr.shape[-1] != width:
        raise ValueError(f"{what} width {arr.shape[-1]} != {width}")


def embed_object_nodes(appearance: np.ndarray, boxes: np.ndarray, mask: np.ndarray, P: dict) -> Tensor:
    """LN(W_fr x_fr) + LN(W_b x_box); padded rows zero."""
    _check_width(appearance, APPEARANCE_DIM, "object appearance")
    _check_width(boxes, BOX_DIM, "object box")
    x = norm(P, "g.obj.ln_fr", linear(P, "g.obj.fr", appearance)) + norm(P, "g.obj.ln_box", linear(P, "g.obj.box", boxes))
    return x * mask[..., None].astype(x.data.dtype)


def embed_text_nodes(word_vec, appearance, phoc, recog, boxes, mask: np.ndarray, P: dict) -> Tensor:
    """LN(sum of the four feature projections) + LN(W_b x_box); padded rows zero."""
    for arr, width, what in (
        (word_vec, WORD_DIM, "word vector"),
        (appearance, APPEARANCE_DIM, "text appearance"),
        (phoc, PHOC_DIM, "phoc"),
        (recog, RECOG_DIM, "recognition feature"),
        (boxes, BOX_DIM, "text box"),
    ):
        _check_width(arr, width, what)
    mixed = (
        linear(P, "g.txt.ft", word_vec)
        + linear(P, "g.txt.fr", appearance)
        + linear(P, "g.txt.p", phoc)
        + linear(P, "g.txt.rec", recog)
    )
    x = norm(P, "g.txt.ln_x", mixed) + norm(P, "g.txt.ln_box", linear(P, "g.txt.box", boxes))
    return x * mask[..., None].astype(x.data.dtype)


def _score(P: dict, name: str, s: Tensor, x: Tensor) -> Tensor:
    s_proj = linear(P, f"{name}.s", s)
    # (B, d) -> (B, 1, ..., 1, d) so it broadcasts over the node axes of x
    extra = x.ndim - s_proj.ndim
    s_proj = s_proj.reshape(s_proj.shape[0], *([1] * extra), s_proj.shape[-1])
    return gated_score(s_proj, linear(P, f"{name}.x", x), P[f"{name}.w"])


def node_attention(x_hat: Tensor, s_m: Tensor, mask: np.ndarray, P: dict, role: str, allow_empty: bool = False) -> Tensor:
    """p^m over valid nodes for a node role ``o`` or ``t``; padded slots are exactly 0."""
    if role not in NODE_ROLES:
        raise ValueError(f"node role must be one of {NODE_ROLES}, got {role!r}")
    if not allow_empty and not mask.any(axis=-1).all():
        raise EmptySupportError(f"no valid nodes for role {role}")
    return softmax(_score(P, f"g.{role}", s_m, x_hat), mask=mask, allow_empty=True)


def edge_attention(table: EdgeTable, x_src: Tensor, s_m: Tensor, P: dict, role: str, allow_empty: bool = False):
    """Two-stage edge attention for one role.

    Returns ``(q, x_tilde, p)``: per-neighborhood weights (B, S, k), the
    question-conditioned edge feature per source node (B, S, d) and the
    node-level distribution over sources with a nonempty neighborhood.
    """
    if role not in EDGE_ROLES:
        raise ValueError(f"edge role must be one of {EDGE_ROLES}, got {role!r}")
    support = table.support
    if not allow_empty and not support.any(axis=-1).all():
        raise EmptySupportError(f"every {role} neighborhood is empty")
    B, S, k = table.mask.shape
    d = x_src.shape[-1]
    h_src = linear(P, f"g.{role}.mlp1x", x_src).reshape(B, S, 1, d)
    hidden = relu(linear(P, f"g.{role}.mlp1e", table.feature) + h_src)
    x_ij = linear(P, f"g.{role}.mlp2", hidden)  # (B, S, k, d)
    q = softmax(_score(P, f"g.{role}", s_m, x_ij), mask=table.mask, allow_empty=True)
    x_tilde = (q.reshape(B, S, 1, k) @ x_ij).reshape(B, S, d)
    p = softmax(_score(P, f"g.{role}2", s_m, x_tilde), mask=support, allow_empty=True)
    return q, x_tilde, p


def combine_weights(ps: list[Tensor], triplet: Tensor, support: np.ndarray) -> Tensor:
    """α = Σ_r w_r p_r with the triplet renormalized over supported roles.

    ``support`` is (B, 3); an unsupported role contributes nothing and its
    weight mass is spread over the others.  All three p's must share a shape.
    """
    shapes = {p.shape for p in ps}
    if len(ps) != 3 or len(shapes) != 1:
        raise ValueError("combine_weights needs three p vectors over the same nodes")
    support = np.asarray(support, dtype=bool)
    w = triplet * support.astype(triplet.data.dtype)
    total = w.sum(axis=-1, keepdims=True)
    none = (~support.any(axis=-1, keepdims=True)).astype(triplet.data.dtype)
    w = w / (total + none)
    alpha = ps[0] * w[:, 0:1]
    for r in (1, 2):
        alpha = alpha + ps[r] * w[:, r : r + 1]
    return alpha


def fuse_features(alpha: Tensor, x_hat: Tensor) -> Tensor:
    """g = Σ_i α_i x̂_i per instance."""
    B, S = alpha.shape
    return (alpha.reshape(B, 1, S) @ x_hat).reshape(B, x_hat.shape[-1])


def run_graph_attention(batch: GraphBatch, decomposed, P: dict, roles=EDGE_ROLES) -> tuple[Tensor, Tensor, AttentionState]:
    """Embed nodes, attend, weight and fuse.  ``roles`` lists the enabled edge roles."""
    x_obj = embed_object_nodes(batch.obj_appearance, batch.obj_box, batch.obj_mask, P)
    x_txt = embed_text_nodes(
        batch.word_vec, batch.txt_appearance, batch.phoc, batch.recog, batch.txt_box, batch.txt_mask, P
    )
    nodes = {"o": (x_obj, batch.obj_mask), "t": (x_txt, batch.txt_mask)}
    p, q, x_tilde, support = {}, {}, {}, {}
    for role in NODE_ROLES:
        x, mask = nodes[role]
        p[role] = node_attention(x, decomposed.role(role), mask, P, role, allow_empty=True)
        support[role] = mask.any(axis=-1)
    for role in EDGE_ROLES:
        x, mask = nodes[role[0]]
        if role in roles:
            table = batch.edges[role]
            q[role], x_tilde[role], p[role] = edge_attention(table, x, decomposed.role(role), P, role, allow_empty=True)
            support[role] = table.support.any(axis=-1)
        else:
            p[role] = Tensor(np.zeros(mask.shape))
            support[role] = np.zeros(mask.shape[0], dtype=bool)
    sup_obj = np.stack([support[r] for r in ("o", "oo", "ot")], axis=1)
    sup_txt = np.stack([support[r] for r in ("t", "tt", "to")], axis=1)
    alpha_obj = combine_weights([p["o"], p["oo"], p["ot"]], decomposed.w_obj, sup_obj)
    alpha_txt = combine_weights([p["t"], p["tt"], p["to"]], decomposed.w_text, sup_txt)
    state = AttentionState(
        p=p, q=q, x_tilde=x_tilde, support=support,
        alpha_obj=alpha_obj, alpha_text=alpha_txt,
        g_obj=fuse_features(alpha_obj, x_obj), g_text=fuse_features(alpha_txt, x_txt),
    )
    return x_obj, x_txt, state
