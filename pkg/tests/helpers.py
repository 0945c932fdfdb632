"""Shared builders for the test suite: explicit tables, random trees and DLA instances."""

from __future__ import annotations

import itertools

import numpy as np

from sfl.dla import DlaInstance
from sfl.embed import Hst
from sfl.instance import Metric, SflInstance
from sfl.oracle import (
    CoverageOracle,
    HypercubeOracle,
    IndependentActivationOracle,
    SubmodularOracle,
    UniformOracle,
)


class TableOracle(SubmodularOracle):
    """Set function given by an explicit ``2**n`` bitmask table."""

    kind = "table"

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        self.values = values
        self.ground_size = int(np.log2(values.size))

    def _eval(self, ids):
        return float(self.values[int(sum(1 << int(c) for c in ids))])

    def table(self):
        return self.values.copy()

    def restrict(self, ids):
        ids = list(ids)
        out = np.zeros(1 << len(ids))
        for mask in range(1 << len(ids)):
            out[mask] = self.values[sum(1 << ids[k] for k in range(len(ids)) if mask >> k & 1)]
        return TableOracle(out)


def random_submodular_table(rng: np.random.Generator, n: int) -> np.ndarray:
    """Non-negative mixture of coverage, concave-of-modular and budget-additive functions."""
    masks = np.arange(1 << n)
    member = ((masks[:, None] >> np.arange(n)) & 1).astype(float)  # mask x client
    out = np.zeros(1 << n)
    for _ in range(int(rng.integers(1, 4))):
        kind = rng.integers(0, 3)
        w = rng.random()
        if kind == 0:
            u = int(rng.integers(1, 6))
            cover = rng.random((n, u)) < 0.5
            weights = rng.random(u)
            covered = (member @ cover) > 0
            out += w * covered @ weights
        elif kind == 1:
            a = rng.random(n)
            out += w * np.sqrt(member @ a)
        else:
            a = rng.random(n)
            out += w * np.minimum(member @ a, rng.random() * a.sum() + 1e-3)
    out[0] = 0.0
    return out


def random_oracle(rng: np.random.Generator, n: int, family: str) -> SubmodularOracle:
    if family == "uniform":
        return UniformOracle(float(rng.uniform(0.5, 2.0)), n)
    if family == "coverage":
        u = max(3, n)
        sets = tuple(tuple(sorted(rng.choice(u, size=int(rng.integers(1, 4)), replace=False).tolist())) for _ in range(n))
        return CoverageOracle(sets, tuple(rng.uniform(0.1, 1.0, u).tolist()))
    if family == "hypercube":
        dim = 3
        clients = tuple(
            (int(v), int(l)) for v, l in zip(rng.integers(0, 1 << dim, n), rng.integers(1, dim + 1, n))
        )
        return HypercubeOracle(dim, clients)
    if family == "independent_activation":
        return IndependentActivationOracle(tuple(rng.uniform(0.05, 1.0, n).tolist()))
    if family == "table":
        return TableOracle(random_submodular_table(rng, n))
    raise ValueError(family)


ORACLE_FAMILIES = ("uniform", "coverage", "hypercube", "independent_activation", "table")


def random_hst(rng: np.random.Generator, D: int, max_children: int = 3) -> Hst:
    """Random tree with every leaf at depth ``D``; leaf_map is empty."""
    parent, level = [-1], [0]
    frontier = [0]
    for lvl in range(1, D + 1):
        nxt = []
        for v in frontier:
            for _ in range(int(rng.integers(1, max_children + 1))):
                nxt.append(len(parent))
                parent.append(v)
                level.append(lvl)
        frontier = nxt
    return Hst(D, np.array(parent), np.array(level), {})


def random_dla(rng: np.random.Generator, D: int, n: int, m: int, family: str, variant: str = "plain"):
    """Random DLA instance and a feasible fractional solution ``z`` (m x n)."""
    tree = random_hst(rng, D)
    leaves = np.flatnonzero(tree.level == D)
    facility_leaf = rng.choice(leaves, size=m, replace=True)
    occupied = [v for v in range(tree.num_nodes) if any(tree.is_ancestor(v, l) for l in facility_leaf)]
    client_node = rng.choice(occupied, size=n)
    h = random_oracle(rng, n, family)
    kw = {}
    if variant == "mult":
        kw["mult_weights"] = rng.uniform(0.2, 2.0, m).round(3)
    elif variant == "add":
        kw["add_weights"] = rng.uniform(0.0, 1.0, m).round(3)
    dla = DlaInstance(tree, facility_leaf, client_node, h, **kw)
    z = np.zeros((m, n))
    for c in range(n):
        F = dla.admissible(c)
        style = rng.integers(0, 3)
        if style == 0:
            z[rng.choice(F), c] = 1.0
        else:
            w = rng.random(F.size) * (rng.random(F.size) < 0.7)
            if w.sum() == 0:
                w[0] = 1.0
            z[F, c] = w / w.sum()
    return dla, z


def random_metric_instance(rng: np.random.Generator, n: int, m: int, oracle: SubmodularOracle) -> SflInstance:
    pts = rng.random((n + m, 2))
    dist = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    return SflInstance(n, m, Metric(dist), oracle)


def all_subsets(n: int):
    for r in range(n + 1):
        yield from itertools.combinations(range(n), r)
