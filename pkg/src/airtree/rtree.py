"""Guttman R-tree over 2-d points with linear node splitting.

Points are inserted one at a time.  Leaf IDs are assigned in depth-first
order once the build is finished, after which the tree is treated as
read-only and range searches report which leaves they visited and which of
those actually held results.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .geometry import Point, Rect, check_point

SNAPSHOT_FORMAT = "airtree.rtree"
SNAPSHOT_VERSION = 1

# Byte accounting for tree_size_bytes().  A node carries a 16-byte header
# (kind, entry count, leaf id) plus its MBR as four float64 values.  A leaf
# entry is the point (two float64) plus an 8-byte object id; an internal
# entry is an 8-byte child pointer, the child's MBR being counted in the
# child's own header.
NODE_HEADER_BYTES = 16 + 4 * 8
LEAF_ENTRY_BYTES = 2 * 8 + 8
INTERNAL_ENTRY_BYTES = 8


@dataclass(frozen=True)
class RTreeConfig:
    max_entries: int = 200
    min_entries: int | None = None

    def __post_init__(self):
        M = self.max_entries
        if not isinstance(M, int) or M < 3:
            raise ValueError(f"max_entries must be an integer >= 3, got {M!r}")
        if self.min_entries is None:
            object.__setattr__(self, "min_entries", max(2, M // 2))
        m = self.min_entries
        if not isinstance(m, int) or not 2 <= m <= math.ceil(M / 2):
            raise ValueError(f"min_entries must lie in [2, ceil(M/2)] = [2, {math.ceil(M / 2)}], got {m!r}")


@dataclass
class QueryTrace:
    visited_leaves: list[int] = field(default_factory=list)
    true_leaves: list[int] = field(default_factory=list)
    results: list[Point] = field(default_factory=list)

    @property
    def leaf_accesses(self) -> int:
        return len(self.visited_leaves)

    @property
    def tn(self) -> int:
        return len(self.true_leaves)

    @property
    def vn(self) -> int:
        return len(self.visited_leaves)

    @property
    def alpha(self) -> float:
        """TN/VN; 0.0 when nothing was visited."""
        return self.tn / self.vn if self.vn else 0.0


class Node:
    """One R-tree node.

    ``boxes`` is preallocated with room for one overflow entry.  For a leaf
    its rows are (x, y) points; for an internal node they are the children's
    MBRs as (xmin, ymin, xmax, ymax), kept in sync with ``children``.
    """

    __slots__ = ("leaf", "count", "boxes", "children", "mbr", "leaf_id")

    def __init__(self, leaf: bool, capacity: int):
        self.leaf = leaf
        self.count = 0
        self.boxes = np.empty((capacity + 1, 2 if leaf else 4), dtype=np.float64)
        self.children: list[Node] | None = None if leaf else []
        self.mbr: tuple[float, float, float, float] | None = None
        self.leaf_id: int | None = None

    def entry_boxes(self) -> np.ndarray:
        """Entries as (n, 4) rectangles; points become degenerate boxes."""
        b = self.boxes[:self.count]
        if self.leaf:
            return np.hstack([b, b])
        return b

    def recompute_mbr(self):
        if self.count == 0:
            self.mbr = None
            return
        b = self.entry_boxes()
        self.mbr = (float(b[:, 0].min()), float(b[:, 1].min()),
                    float(b[:, 2].max()), float(b[:, 3].max()))

    @property
    def rect(self) -> Rect:
        return Rect(*self.mbr)


def _extend(mbr, box) -> tuple[float, float, float, float]:
    if mbr is None:
        return tuple(box)
    return (min(mbr[0], box[0]), min(mbr[1], box[1]), max(mbr[2], box[2]), max(mbr[3], box[3]))


def _area(b) -> float:
    return (b[2] - b[0]) * (b[3] - b[1])


def linear_pick_seeds(boxes: np.ndarray) -> tuple[int, int]:
    """Guttman's linear seed choice over an (n, 4) array of entry boxes.

    Per axis, take the entry with the highest low side and the entry with
    the lowest high side, normalise their separation by the width of the
    whole set along that axis, and keep the axis with the largest value.
    Ties go to the lower axis.
    """
    n = len(boxes)
    best = None
    for axis in (0, 1):
        lows = boxes[:, axis]
        highs = boxes[:, axis + 2]
        hi_low = int(np.argmax(lows))
        masked = highs.copy()
        masked[hi_low] = np.inf
        lo_high = int(np.argmin(masked))
        extent = float(highs.max() - lows.min())
        sep = float(lows[hi_low] - highs[lo_high])
        norm = sep / extent if extent > 0 else 0.0
        if best is None or norm > best[0]:
            best = (norm, hi_low, lo_high)
    _, a, b = best
    assert n >= 2 and a != b
    return a, b


def linear_split(boxes: np.ndarray, min_entries: int) -> tuple[list[int], list[int]]:
    """Partition entry indices into two groups, each of size >= min_entries.

    Remaining entries are taken in stored order and go to the group whose
    MBR grows least; ties go to the smaller group area, then the group with
    fewer entries, then the first group.  When a group needs every remaining
    entry to reach ``min_entries`` it receives them all.
    """
    n = len(boxes)
    s0, s1 = linear_pick_seeds(boxes)
    groups = ([s0], [s1])
    mbrs = [tuple(float(v) for v in boxes[s0]), tuple(float(v) for v in boxes[s1])]
    rest = [i for i in range(n) if i != s0 and i != s1]
    rows = boxes.tolist()
    for k, i in enumerate(rest):
        remaining = len(rest) - k
        if len(groups[0]) + remaining == min_entries:
            groups[0].extend(rest[k:])
            break
        if len(groups[1]) + remaining == min_entries:
            groups[1].extend(rest[k:])
            break
        box = rows[i]
        grown = [_extend(mbrs[0], box), _extend(mbrs[1], box)]
        areas = [_area(mbrs[0]), _area(mbrs[1])]
        enl = [_area(grown[0]) - areas[0], _area(grown[1]) - areas[1]]
        key0 = (enl[0], areas[0], len(groups[0]))
        key1 = (enl[1], areas[1], len(groups[1]))
        g = 0 if key0 <= key1 else 1
        groups[g].append(i)
        mbrs[g] = grown[g]
    return groups[0], groups[1]


class RTree:
    def __init__(self, config: RTreeConfig | None = None):
        self.config = config or RTreeConfig()
        self.root = Node(leaf=True, capacity=self.config.max_entries)
        self.size = 0
        self._leaves: list[Node] | None = None

    def __len__(self):
        return self.size

    @property
    def bounds(self) -> Rect | None:
        return None if self.root.mbr is None else self.root.rect

    @property
    def leaf_count(self) -> int:
        if self._leaves is None:
            raise RuntimeError("leaf IDs have not been assigned")
        return len(self._leaves)

    @property
    def ids_assigned(self) -> bool:
        return self._leaves is not None

    # -- build ---------------------------------------------------------------

    def insert(self, x: float, y: float):
        p = check_point(x, y)
        self._invalidate_ids()
        M = self.config.max_entries
        box = (p.x, p.y, p.x, p.y)

        # choose leaf: least enlargement, then smallest area, then first child
        path: list[tuple[Node, int]] = []
        node = self.root
        while not node.leaf:
            b = node.boxes[:node.count]
            area = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
            grown = ((np.maximum(b[:, 2], p.x) - np.minimum(b[:, 0], p.x))
                     * (np.maximum(b[:, 3], p.y) - np.minimum(b[:, 1], p.y)))
            enl = grown - area
            cand = np.flatnonzero(enl == enl.min())
            idx = int(cand[np.argmin(area[cand])]) if len(cand) > 1 else int(cand[0])
            path.append((node, idx))
            node = node.children[idx]

        node.boxes[node.count] = (p.x, p.y)
        node.count += 1
        node.mbr = _extend(node.mbr, box)
        self.size += 1

        split = self._split(node) if node.count > M else None
        # walk back up, refreshing parent rows and absorbing splits
        for parent, idx in reversed(path):
            child = parent.children[idx]
            parent.boxes[idx] = child.mbr
            parent.mbr = _extend(parent.mbr, child.mbr)
            if split is not None:
                parent.boxes[parent.count] = split.mbr
                parent.children.append(split)
                parent.count += 1
                parent.mbr = _extend(parent.mbr, split.mbr)
                split = self._split(parent) if parent.count > M else None
        if split is not None:
            old = self.root
            root = Node(leaf=False, capacity=M)
            for child in (old, split):
                root.boxes[root.count] = child.mbr
                root.children.append(child)
                root.count += 1
            root.recompute_mbr()
            self.root = root

    def _split(self, node: Node) -> Node:
        """Split an overflowing node in place; return the new sibling."""
        g0, g1 = linear_split(node.entry_boxes(), self.config.min_entries)
        sib = Node(leaf=node.leaf, capacity=self.config.max_entries)
        rows = node.boxes[:node.count].copy()
        kids = node.children
        node.boxes[:len(g0)] = rows[g0]
        node.count = len(g0)
        sib.boxes[:len(g1)] = rows[g1]
        sib.count = len(g1)
        if not node.leaf:
            node.children = [kids[i] for i in g0]
            sib.children = [kids[i] for i in g1]
        node.recompute_mbr()
        sib.recompute_mbr()
        return sib

    def _invalidate_ids(self):
        if self._leaves is not None:
            for leaf in self._leaves:
                leaf.leaf_id = None
            self._leaves = None

    def assign_leaf_ids(self) -> int:
        """Number leaves 0..n-1 in depth-first order; return n."""
        if self.size == 0:
            raise ValueError("cannot assign leaf IDs on an empty tree")
        leaves = [n for n in self.iter_nodes() if n.leaf]
        for i, leaf in enumerate(leaves):
            leaf.leaf_id = i
        self._leaves = leaves
        return len(leaves)

    # -- traversal -----------------------------------------------------------

    def iter_nodes(self) -> Iterator[Node]:
        """Pre-order depth-first walk, children in stored order."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.leaf:
                stack.extend(reversed(node.children))

    def leaves(self) -> list[Node]:
        if self._leaves is None:
            raise RuntimeError("leaf IDs have not been assigned")
        return self._leaves

    def leaf(self, leaf_id: int) -> Node:
        leaves = self.leaves()
        if not isinstance(leaf_id, (int, np.integer)) or not 0 <= leaf_id < len(leaves):
            raise KeyError(f"unknown leaf id {leaf_id!r}")
        return leaves[leaf_id]

    def points(self) -> np.ndarray:
        """All stored points as an (n, 2) array in depth-first leaf order."""
        parts = [n.boxes[:n.count] for n in self.iter_nodes() if n.leaf]
        return np.vstack(parts) if parts else np.empty((0, 2))

    def height(self) -> int:
        h, node = 1, self.root
        while not node.leaf:
            node = node.children[0]
            h += 1
        return h

    # -- search --------------------------------------------------------------

    def range_query(self, q: Rect) -> QueryTrace:
        if self._leaves is None:
            raise RuntimeError("assign leaf IDs before querying")
        trace = QueryTrace()
        if self.root.mbr is None or not self.root.rect.intersects(q):
            return trace
        qx0, qy0, qx1, qy1 = q.xmin, q.ymin, q.xmax, q.ymax
        stack = [self.root]
        while stack:
            node = stack.pop()
            b = node.boxes[:node.count]
            if node.leaf:
                trace.visited_leaves.append(node.leaf_id)
                hits = _points_in(b, qx0, qy0, qx1, qy1)
                if hits:
                    trace.true_leaves.append(node.leaf_id)
                    trace.results.extend(hits)
                continue
            mask = (b[:, 0] <= qx1) & (b[:, 2] >= qx0) & (b[:, 1] <= qy1) & (b[:, 3] >= qy0)
            for i in np.flatnonzero(mask)[::-1]:
                stack.append(node.children[i])
        return trace

    def scan_leaf(self, leaf_id: int, q: Rect) -> tuple[list[Point], int]:
        """Entries of one leaf inside ``q``; always one leaf access."""
        node = self.leaf(leaf_id)
        return _points_in(node.boxes[:node.count], q.xmin, q.ymin, q.xmax, q.ymax), 1

    # -- accounting ----------------------------------------------------------

    def tree_size_bytes(self) -> int:
        total = 0
        for node in self.iter_nodes():
            per_entry = LEAF_ENTRY_BYTES if node.leaf else INTERNAL_ENTRY_BYTES
            total += NODE_HEADER_BYTES + node.count * per_entry
        return total

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        def enc(node: Node) -> dict:
            d = {"mbr": list(node.mbr) if node.mbr is not None else None}
            if node.leaf:
                d["leaf_id"] = node.leaf_id
                d["points"] = node.boxes[:node.count].tolist()
            else:
                d["children"] = [enc(c) for c in node.children]
            return d

        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "max_entries": self.config.max_entries,
            "min_entries": self.config.min_entries,
            "size": self.size,
            "ids_assigned": self._leaves is not None,
            "root": enc(self.root),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RTree":
        if d.get("format") != SNAPSHOT_FORMAT or d.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"not an R-tree snapshot (format={d.get('format')!r}, version={d.get('version')!r})")
        tree = cls(RTreeConfig(d["max_entries"], d["min_entries"]))
        M = tree.config.max_entries

        def dec(nd: dict) -> Node:
            leaf = "points" in nd
            node = Node(leaf=leaf, capacity=M)
            if leaf:
                pts = nd["points"]
                node.count = len(pts)
                if pts:
                    node.boxes[:node.count] = pts
                node.leaf_id = nd.get("leaf_id")
            else:
                for cd in nd["children"]:
                    child = dec(cd)
                    node.boxes[node.count] = child.mbr
                    node.children.append(child)
                    node.count += 1
            node.mbr = tuple(nd["mbr"]) if nd["mbr"] is not None else None
            return node

        tree.root = dec(d["root"])
        tree.size = d["size"]
        if d["ids_assigned"]:
            tree._leaves = [n for n in tree.iter_nodes() if n.leaf]
            if [n.leaf_id for n in tree._leaves] != list(range(len(tree._leaves))):
                raise ValueError("snapshot leaf IDs are not in depth-first order")
        return tree

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")))

    @classmethod
    def load(cls, path: str | Path) -> "RTree":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, RTree):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def _points_in(b: np.ndarray, x0: float, y0: float, x1: float, y1: float) -> list[Point]:
    xs, ys = b[:, 0], b[:, 1]
    mask = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
    return [Point(x, y) for x, y in b[mask].tolist()]


def build_rtree(points: Sequence | np.ndarray, config: RTreeConfig | None = None) -> RTree:
    """Insert points in the given order and assign leaf IDs."""
    tree = RTree(config)
    for x, y in np.asarray(points, dtype=np.float64).tolist():
        tree.insert(x, y)
    if tree.size:
        tree.assign_leaf_ids()
    return tree
