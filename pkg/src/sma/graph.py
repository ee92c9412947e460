"""Role-aware heterogeneous scene graph over object and text nodes.

Every node sends directed edges to its k nearest object nodes and its k
nearest text nodes, nearest by Euclidean distance between box centers with
ties going to the lower node index.  Edge roles are named source-target:
``oo`` object->object, ``ot`` object->text, ``tt`` text->text, ``to``
text->object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

EDGE_ROLES = ("oo", "ot", "tt", "to")


class DegenerateBoxError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x_tl: float
    y_tl: float
    x_br: float
    y_br: float

    def __post_init__(self):
        if self.x_br < self.x_tl or self.y_br < self.y_tl:
            raise ValueError(f"inverted box {self.as_list()}")

    @property
    def w(self) -> float:
        return self.x_br - self.x_tl

    @property
    def h(self) -> float:
        return self.y_br - self.y_tl

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_tl + self.x_br) / 2.0, (self.y_tl + self.y_br) / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.x_tl, self.y_tl, self.x_br, self.y_br]

    def contains(self, other: "BoundingBox") -> bool:
        return (
            self.x_tl <= other.x_tl
            and self.y_tl <= other.y_tl
            and other.x_br <= self.x_br
            and other.y_br <= self.y_br
        )


class Edge(NamedTuple):
    source: int
    target: int
    feature: np.ndarray


@dataclass(frozen=True)
class TextNode:
    box: BoundingBox
    token: str


@dataclass
class SceneGraph:
    width: float
    height: float
    objects: list[BoundingBox]
    texts: list[TextNode]
    k: int
    edges: dict[str, list[Edge]] = field(default_factory=dict)

    def neighbors(self, role: str, source: int) -> list[Edge]:
        return [e for e in self.edges[role] if e.source == source]


def edge_feature(box_i: BoundingBox, box_j: BoundingBox) -> np.ndarray:
    """Geometry of ``box_j`` relative to the center and extent of ``box_i``."""
    if box_i.w <= 0 or box_i.h <= 0:
        raise DegenerateBoxError("degenerate source box")
    xc, yc = box_i.center
    return np.array(
        [
            (box_j.x_tl - xc) / box_i.w,
            (box_j.y_tl - yc) / box_i.h,
            (box_j.x_br - xc) / box_i.w,
            (box_j.y_br - yc) / box_i.h,
            (box_j.w * box_j.h) / (box_i.w * box_i.h),
        ]
    )


def normalize_box(box: BoundingBox, width: float, height: float) -> np.ndarray:
    return np.array([box.x_tl / width, box.y_tl / height, box.x_br / width, box.y_br / height])


def nearest(centers: np.ndarray, point: np.ndarray, k: int, exclude: int | None = None) -> list[int]:
    if len(centers) == 0:
        return []
    dist = np.hypot(centers[:, 0] - point[0], centers[:, 1] - point[1])
    order = np.argsort(dist, kind="stable")
    if exclude is not None:
        order = order[order != exclude]
    return [int(j) for j in order[:k]]


def build_graph(
    objects: Sequence[BoundingBox],
    texts: Sequence[TextNode],
    width: float,
    height: float,
    k: int = 5,
) -> SceneGraph:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not objects and not texts:
        raise ValueError("graph needs at least one node")
    obj_boxes = list(objects)
    txt_boxes = [t.box for t in texts]
    obj_c = np.array([b.center for b in obj_boxes]).reshape(-1, 2)
    txt_c = np.array([b.center for b in txt_boxes]).reshape(-1, 2)

    edges: dict[str, list[Edge]] = {r: [] for r in EDGE_ROLES}
    for role in EDGE_ROLES:
        src_boxes = obj_boxes if role[0] == "o" else txt_boxes
        dst_boxes, dst_c = (obj_boxes, obj_c) if role[1] == "o" else (txt_boxes, txt_c)
        same = role[0] == role[1]
        for i, bi in enumerate(src_boxes):
            for j in nearest(dst_c, np.array(bi.center), k, exclude=i if same else None):
                edges[role].append(Edge(i, j, edge_feature(bi, dst_boxes[j])))
    return SceneGraph(width, height, obj_boxes, list(texts), k, edges)
