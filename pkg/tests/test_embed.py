from __future__ import annotations

import numpy as np
import pytest

from helpers import random_hst
from sfl.embed import Hst, depth_for, frt_embed, tree_distance, tree_distance_matrix
from sfl.errors import DomainError
from sfl.instance import gen_random_euclidean, reduce_distance_range


def laminar(hst: Hst, points):
    """Level-l clusters partition the points and refine level l-1."""
    for lvl in range(hst.D + 1):
        groups = {}
        for p in points:
            groups.setdefault(hst.ancestor(hst.leaf_map[p], lvl), set()).add(p)
        if lvl:
            for members in groups.values():
                parents = {hst.ancestor(hst.leaf_map[p], lvl - 1) for p in members}
                assert len(parents) == 1
    return True


def test_single_point():
    hst = frt_embed(np.zeros((1, 1)), [0], 0)
    assert hst.D == depth_for(0.0) == 1
    assert tree_distance(hst, 0, 0) == 0.0


def test_colocated_points_share_a_leaf():
    d = np.array([[0, 0, 4], [0, 0, 4], [4, 4, 0]], dtype=float)
    for seed in range(20):
        hst = frt_embed(d, [0, 1, 2], seed)
        assert hst.leaf_map[0] == hst.leaf_map[1] != hst.leaf_map[2]
        assert tree_distance(hst, 0, 2) >= 4


def test_tree_distance_arithmetic():
    # depth-3 path tree with two root children
    hst = Hst(3, np.array([-1, 0, 0, 1, 2, 3, 4, 3]), np.array([0, 1, 1, 2, 2, 3, 3, 3]), {0: 5, 1: 6, 2: 7})
    assert tree_distance(hst, 0, 0) == 0
    assert tree_distance(hst, 0, 2) == 2  # siblings
    assert tree_distance(hst, 0, 1) == 2 * (1 + 2 + 4)
    assert hst.edge_weight(5) == 1 and hst.edge_weight(1) == 4
    with pytest.raises(DomainError):
        tree_distance(hst, 0, 9)


def test_rejects_small_distances():
    with pytest.raises(DomainError):
        frt_embed(np.array([[0, 1.0], [1.0, 0]]), [0, 1], 0)


@pytest.mark.parametrize("seed", range(5))
def test_structure_and_non_contraction(seed):
    inst = gen_random_euclidean(7, 6, seed)
    comp = reduce_distance_range(inst, 0.1, 2.0)[0]
    d = comp.instance.metric.dist
    pts = list(range(len(d)))
    for s in range(40):
        hst = frt_embed(d, pts, s)
        assert hst.D == depth_for(d.max())
        assert np.all(hst.level[list(hst.leaf_map.values())] == hst.D)
        assert laminar(hst, pts)
        T = tree_distance_matrix(hst, pts)
        assert np.all(T >= d - 1e-9)
        a, b = pts[1], pts[-1]
        assert T[a, b] == tree_distance(hst, a, b)


def test_deterministic_per_seed():
    d = 2.0 * (1 - np.eye(6))
    a, b = frt_embed(d, range(6), 9), frt_embed(d, range(6), 9)
    assert a.to_json() == b.to_json()
    assert Hst.from_json(a.to_json()).to_json() == a.to_json()


def test_node_helpers():
    rng = np.random.default_rng(0)
    hst = random_hst(rng, 3)
    leaf = int(np.flatnonzero(hst.level == 3)[0])
    anc = hst.ancestors(leaf)
    assert anc[0] == leaf and anc[-1] == 0 and len(anc) == 4
    assert all(hst.is_ancestor(a, leaf) for a in anc)
    assert leaf in hst.leaves_below(0)
    assert hst.lca(leaf, leaf) == leaf
