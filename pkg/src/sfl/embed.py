"""Randomized embedding of a finite metric into a 2-HST (FRT-style)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError


@dataclass(frozen=True, eq=False)
class Hst:
    """Rooted tree, root at level 0 and all leaves at level ``D``.

    The edge from a level-``l`` node to its parent weighs ``2**(D - l)``,
    so leaf-to-root paths read 1, 2, 4, ...  ``leaf_map`` sends metric point
    ids to leaves; colocated points share a leaf.
    """

    D: int
    parent: np.ndarray  # parent[0] == -1
    level: np.ndarray
    leaf_map: dict

    def __post_init__(self):
        ancestors = np.zeros((len(self.parent), self.D + 1), dtype=np.int64)
        for v in range(len(self.parent)):
            lv = self.level[v]
            ancestors[v, lv] = v
            if lv:
                ancestors[v, :lv] = ancestors[self.parent[v], :lv]
        object.__setattr__(self, "_anc", ancestors)
        children: list[list[int]] = [[] for _ in self.parent]
        for v in range(1, len(self.parent)):
            children[self.parent[v]].append(v)
        object.__setattr__(self, "children", children)

    @property
    def num_nodes(self) -> int:
        return len(self.parent)

    def edge_weight(self, v: int) -> float:
        """Weight of the edge from ``v`` to its parent."""
        return float(2 ** (self.D - int(self.level[v])))

    def ancestor(self, v: int, lvl: int) -> int:
        return int(self._anc[v, lvl])

    def ancestors(self, v: int) -> list[int]:
        """``v`` and its ancestors, bottom-up."""
        return [int(a) for a in self._anc[v, : self.level[v] + 1][::-1]]

    def is_ancestor(self, u: int, v: int) -> bool:
        """Whether ``u`` is ``v`` or an ancestor of ``v``."""
        lu = self.level[u]
        return lu <= self.level[v] and self._anc[v, lu] == u

    def lca(self, u: int, v: int) -> int:
        top = min(self.level[u], self.level[v])
        same = self._anc[u, : top + 1] == self._anc[v, : top + 1]
        return int(self._anc[u, int(np.flatnonzero(same).max())])

    def node_distance(self, u: int, v: int) -> float:
        a = self.level[self.lca(u, v)]

        def up(x):
            return float(sum(2 ** (self.D - j) for j in range(a + 1, self.level[x] + 1)))

        return up(u) + up(v)

    def leaves_below(self, v: int) -> list[int]:
        out = []
        stack = [v]
        while stack:
            u = stack.pop()
            if self.level[u] == self.D:
                out.append(u)
            stack.extend(self.children[u])
        return sorted(out)

    def to_json(self) -> dict:
        return {
            "D": self.D,
            "parent": self.parent.tolist(),
            "level": self.level.tolist(),
            "weights": [2 ** (self.D - l) for l in range(1, self.D + 1)],
            "leaf_map": {str(p): int(v) for p, v in sorted(self.leaf_map.items())},
        }

    @classmethod
    def from_json(cls, d: dict) -> "Hst":
        return cls(
            int(d["D"]),
            np.asarray(d["parent"], dtype=np.int64),
            np.asarray(d["level"], dtype=np.int64),
            {int(p): int(v) for p, v in d["leaf_map"].items()},
        )


def tree_distance(hst: Hst, a: int, b: int) -> float:
    """Leaf-to-leaf path length between metric points ``a`` and ``b``."""
    try:
        u, v = hst.leaf_map[a], hst.leaf_map[b]
    except KeyError as exc:
        raise DomainError(f"point {exc.args[0]} is not embedded") from None
    return hst.node_distance(u, v)


def tree_distance_matrix(hst: Hst, points: Sequence[int]) -> np.ndarray:
    leaves = np.array([hst.leaf_map[p] for p in points], dtype=np.int64)
    anc = hst._anc[leaves]
    same = anc[:, None, :] == anc[None, :, :]
    lca_level = same.sum(axis=2) - 1  # prefixes agree up to the LCA
    return 2.0 * (2.0 ** (hst.D - lca_level) - 1.0)


def depth_for(d_max: float) -> int:
    return math.ceil(math.log2(max(d_max, 1.0))) + 1


def frt_embed(dist: np.ndarray, points: Sequence[int], seed: int) -> Hst:
    """Embed ``points`` of the metric ``dist`` into a random HST.

    A random order ``pi`` of the distinct locations and ``beta = 2**u`` with
    ``u`` uniform in [0, 1) are drawn from PCG64 seeded with ``seed``.  The
    level-``l`` cluster of a point refines its level-``l-1`` cluster by the
    first location in ``pi`` within ``beta * 2**(D - l - 2)``; the root holds
    everything.  These radii keep every pair non-contracted.
    """
    points = [int(p) for p in points]
    if not points:
        raise DomainError("cannot embed an empty point set")
    if len(set(points)) != len(points):
        raise DomainError("points must be distinct")
    sub = np.asarray(dist, dtype=float)[np.ix_(points, points)]
    positive = sub[sub > 0]
    if positive.size and positive.min() <= 1.0:
        raise DomainError(f"embedding needs d_min > 1, got {positive.min()}")
    k = len(points)
    rep = np.arange(k)
    for a in range(k):
        zero = np.flatnonzero(sub[a, :a] == 0)
        if zero.size:
            rep[a] = rep[zero[0]]
    locs = np.unique(rep)
    D = depth_for(float(sub.max()))
    rng = np.random.default_rng(seed)
    order = locs[rng.permutation(locs.size)]
    beta = 2.0 ** rng.random()
    ld = sub[np.ix_(locs, order)]  # location x centre-in-pi-order

    keys = {int(l): () for l in locs}
    parent = [-1]
    level = [0]
    node_of = {(): 0}
    for lvl in range(1, D + 1):
        radius = beta * 2.0 ** (D - lvl - 2)
        first = np.argmax(ld <= radius, axis=1)
        new_keys = {}
        for row, l in enumerate(locs):
            key = keys[int(l)] + (int(first[row]),)
            new_keys[int(l)] = key
        for l in locs:  # number nodes in location order for determinism
            key = new_keys[int(l)]
            if key not in node_of:
                node_of[key] = len(parent)
                parent.append(node_of[key[:-1]])
                level.append(lvl)
        keys = new_keys
    leaf_of_loc = {l: node_of[key] for l, key in keys.items()}
    leaf_map = {points[a]: leaf_of_loc[int(rep[a])] for a in range(k)}
    hst = Hst(D, np.asarray(parent, dtype=np.int64), np.asarray(level, dtype=np.int64), leaf_map)
    leaves = [leaf_of_loc[int(l)] for l in locs]
    if len(set(leaves)) != len(leaves):
        raise DomainError("distinct locations collided in a leaf")
    return hst


def dumps(hst: Hst) -> str:
    return json.dumps(hst.to_json())
