from __future__ import annotations

import math

import numpy as np
import pytest

from helpers import random_dla, random_metric_instance, random_oracle
from sfl.dla import (
    DlaInstance,
    check_dla_assignment,
    cost_dla,
    cost_dla_assignment,
    hst_instance,
    is_supported,
    lift_to_sfl,
    reduce_to_dla,
    round_dla,
    supported_theta,
    theta_candidates,
)
from sfl.embed import Hst, frt_embed
from sfl.errors import DomainError, UnsupportedVariant
from sfl.instance import Metric, PartialAssignment, SflInstance, cost, reduce_distance_range
from sfl.lp import FractionalSolution, frac_cost, solve_conf_lp
from sfl.oracle import UniformOracle, lovasz


def two_leaf_tree():
    # root 0 with leaves 1 and 2
    return Hst(1, np.array([-1, 0, 0]), np.array([0, 1, 1]), {})


def four_leaf_tree():
    # root 0 -> {1, 2}; 1 -> {3, 4}; 2 -> {5, 6}
    return Hst(2, np.array([-1, 0, 0, 1, 1, 2, 2]), np.array([0, 1, 1, 2, 2, 2, 2]), {})


def test_theta_candidates():
    assert theta_candidates(np.zeros(3)) == [0.0]
    cands = theta_candidates(np.array([0.5, 1.0]))
    assert cands[0] == 0.0 and 0.5 in cands and 1.0 in cands
    assert cands == sorted(cands) and len(cands) == 5


def test_supported_theta_examples():
    h = UniformOracle(1.0, 1)
    assert supported_theta(h, np.array([1.0]), 1.0) == 0.0
    assert supported_theta(UniformOracle(1.0, 3), np.zeros(3), 1.0) is None
    with pytest.raises(DomainError):
        supported_theta(h, np.array([1.0]), 0.0)


def test_supported_theta_is_first_passing_candidate():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        h = random_oracle(rng, n, "coverage")
        z = rng.random(n) * (rng.random(n) < 0.7)
        alpha = float(rng.choice([1.0, 0.5, 0.25]))
        theta = supported_theta(h, z, alpha)
        for t in theta_candidates(z):
            if theta is not None and t >= theta:
                break
            assert not is_supported(h, z, t, alpha / 32)
        if theta is not None:
            assert is_supported(h, z, theta, alpha / 32)


def test_reduce_to_dla_colocated_integral():
    # two clients, each sharing a leaf with its own facility
    d = 4.0 * (1 - np.eye(4))
    for a, b in ((0, 2), (1, 3)):
        d[a, b] = d[b, a] = 0.0
    inst = SflInstance(2, 2, Metric(d), UniformOracle(1.0, 2))
    hst = frt_embed(d, range(4), 0)
    x = FractionalSolution([(0, [0], 1.0), (1, [1], 1.0)])
    red = reduce_to_dla(hst_instance(inst, hst), hst, x)
    assert list(red.anchor) == [hst.leaf_map[0], hst.leaf_map[1]]
    assert red.z.tolist() == [[1.0, 0.0], [0.0, 1.0]]
    res = round_dla(red.dla, red.z)
    assert res.S == PartialAssignment({0: [0], 1: [1]})
    assert res.cost == pytest.approx(cost_dla(red.dla, red.z))


def test_reduce_to_dla_half_split_anchors_at_meeting_node():
    tree = four_leaf_tree()
    hst = Hst(2, tree.parent, tree.level, {0: 3, 1: 4, 2: 5})  # client 0, facilities 1 and 2 -> points 1, 2
    inst = SflInstance(1, 2, Metric(np.zeros((3, 3))), UniformOracle(1.0, 1))
    x = FractionalSolution([(0, [0], 0.5), (0, [], 0.5), (1, [0], 0.5), (1, [], 0.5)])
    red = reduce_to_dla(inst, hst, x)
    # client leaf 3; facility 0 at leaf 4 (same parent 1) holds 1/2
    assert red.anchor[0] == 1
    assert red.z[:, 0].tolist() == [1.0, 0.0]


def test_depth_one_example():
    dla = DlaInstance(two_leaf_tree(), np.array([1, 2]), np.array([0]), UniformOracle(1.0, 1))
    z = np.array([[0.5], [0.5]])
    assert cost_dla(dla, z) == pytest.approx(1.0)
    res = round_dla(dla, z, trace=True)
    assert res.S.is_feasible(1)
    assert res.cost == pytest.approx(1.0)
    assert res.cost <= (1 + 32 * math.log2(2)) * res.cost_z
    assert res.trace[0]["theta"] == 0.0


def test_integral_z_leaf_anchored_is_reproduced():
    rng = np.random.default_rng(1)
    for _ in range(40):
        dla, _ = random_dla(rng, int(rng.integers(1, 4)), 6, 5, "coverage")
        node = dla.facility_leaf[rng.integers(0, dla.m, dla.n)]
        dla = DlaInstance(dla.tree, dla.facility_leaf, node, dla.h)
        z = np.zeros((dla.m, dla.n))
        for c in range(dla.n):
            z[dla.admissible(c)[0], c] = 1.0
        res = round_dla(dla, z)
        assert res.cost <= cost_dla(dla, z) + 1e-9
        for f, R in res.S.items():
            assert all(z[f, c] == 1.0 or dla.below[node[c], f] for c in R)


@pytest.mark.parametrize("variant", ["plain", "mult", "add"])
@pytest.mark.parametrize("family", ["coverage", "hypercube", "table", "uniform"])
def test_round_feasible_and_bounded(family, variant):
    rng = np.random.default_rng(len(family) * 7 + len(variant))
    for _ in range(25):
        D = int(rng.integers(1, 5))
        dla, z = random_dla(rng, D, int(rng.integers(1, 9)), int(rng.integers(1, 9)), family, variant)
        res = round_dla(dla, z)
        check_dla_assignment(dla, res.S)
        assert res.cost == pytest.approx(cost_dla_assignment(dla, res.S))
        assert res.cost <= (1 + 32 * math.log2(D + 1)) * cost_dla(dla, z) + 1e-9


def test_trace_costs_never_increase():
    rng = np.random.default_rng(2)
    for _ in range(30):
        dla, z = random_dla(rng, 3, 6, 6, "table")
        res = round_dla(dla, z, trace=True)
        costs = [res.cost_z] + [step["cost_z"] for step in res.trace]
        assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(costs, costs[1:]))


def test_mult_variant_prefers_lighter_facility():
    dla = DlaInstance(two_leaf_tree(), np.array([1, 2]), np.array([0]), UniformOracle(1.0, 1), mult_weights=np.array([3.0, 1.0]))
    res = round_dla(dla, np.array([[0.0], [1.0]]), trace=True)
    root_step = [s for s in res.trace if s["node"] == 0]
    assert root_step == [] or root_step[0]["f"] == 1


def test_affine_rejected():
    dla = DlaInstance(two_leaf_tree(), np.array([1, 2]), np.array([0]), UniformOracle(1.0, 1), np.ones(2), np.ones(2))
    with pytest.raises(UnsupportedVariant):
        round_dla(dla, np.array([[1.0], [0.0]]))


def test_infeasible_z_rejected():
    dla = DlaInstance(two_leaf_tree(), np.array([1, 2]), np.array([1]), UniformOracle(1.0, 1))
    with pytest.raises(DomainError):
        round_dla(dla, np.array([[0.5], [0.5]]))  # facility 1 is not below leaf 1


def embedded_instance(rng, n, m, family="coverage"):
    inst = random_metric_instance(rng, n, m, random_oracle(rng, n, family))
    comp = reduce_distance_range(inst, 0.1, 10.0)[0]
    ci = comp.instance
    hst = frt_embed(ci.metric.dist, range(ci.N), int(rng.integers(1 << 30)))
    return hst_instance(ci, hst), hst


def test_reduction_bounds_on_random_hst_instances():
    rng = np.random.default_rng(3)
    for _ in range(25):
        n, m = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        hinst, hst = embedded_instance(rng, n, m)
        x = solve_conf_lp(hinst).x
        red = reduce_to_dla(hinst, hst, x)
        fx = frac_cost(hinst, x)
        assert red.cost_z <= 2 * fx.open + 1e-9
        res = round_dla(red.dla, red.z)
        lift = lift_to_sfl(hinst, hst, res.S, red.anchor, y=x.y(n, m))
        assert lift.S.is_feasible(n)
        c = cost(hinst, lift.S)
        assert c.conn <= 3 * fx.conn + 1e-9
        D = hst.D
        assert c.total <= 3 * fx.conn + 2 * (1 + 32 * math.log2(D + 1)) * fx.open + 1e-9


def test_lift_distance_examples():
    tree = four_leaf_tree()
    # client 0 at leaf 3 with facility 0; client 1 at leaf 3, facility 1 at leaf 4
    hst = Hst(2, tree.parent, tree.level, {0: 3, 1: 3, 2: 3, 3: 4})
    inst = SflInstance(2, 2, Metric(np.zeros((4, 4))), UniformOracle(1.0, 2))
    S = PartialAssignment({0: [0], 1: [1]})
    lift = lift_to_sfl(inst, hst, S, np.array([3, 1]))
    assert lift.conn_tree.tolist() == [0.0, 2.0]
