"""Descendant-leaf assignment: reduction from SFL on an HST and tree rounding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embed import Hst, tree_distance_matrix
from .errors import DomainError, InvariantViolation, UnsupportedVariant
from .instance import Metric, PartialAssignment, SflInstance
from .lp import FractionalSolution, frac_cost
from .oracle import SubmodularOracle, WeightedOracle, level_set, lovasz, tabulate

SUPPORT_RTOL = 1e-9
THETA_DELTA = 2.0**-40
SNAP_TOL = 1e-9
COST_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class DlaInstance:
    """Facilities sit at leaves, client ``c`` at node ``client_node[c]``.

    ``h`` is the shared opening function; facility ``f`` pays
    ``add_weights[f] + mult_weights[f] * h`` on non-empty sets.
    """

    tree: Hst
    facility_leaf: np.ndarray
    client_node: np.ndarray
    h: SubmodularOracle
    mult_weights: np.ndarray | None = None
    add_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.tree.D < 1:
            raise DomainError("DLA trees need depth at least one")
        levels = self.tree.level[self.facility_leaf]
        if np.any(levels != self.tree.D):
            raise DomainError("facilities must sit at leaves")
        if self.h.ground_size != self.n:
            raise DomainError("opening function must be over the DLA clients")
        object.__setattr__(self, "h", tabulate(self.h))
        below = np.array(
            [[self.tree.is_ancestor(v, leaf) for leaf in self.facility_leaf] for v in range(self.tree.num_nodes)],
            dtype=bool,
        ).reshape(self.tree.num_nodes, self.m)
        object.__setattr__(self, "below", below)  # below[v, f]: f in F_v
        for c in range(self.n):
            if not below[self.client_node[c]].any():
                raise DomainError(f"client {c} has no facility below its node")

    @property
    def n(self) -> int:
        return len(self.client_node)

    @property
    def m(self) -> int:
        return len(self.facility_leaf)

    @property
    def variant(self) -> str:
        if self.mult_weights is not None and self.add_weights is not None:
            return "affine"
        if self.mult_weights is not None:
            return "mult"
        if self.add_weights is not None:
            return "add"
        return "plain"

    def facilities_below(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.below[v])

    def admissible(self, c: int) -> np.ndarray:
        """``F~_c``: facilities at leaves under the node of ``c``."""
        return self.facilities_below(self.client_node[c])

    def weight(self, f: int) -> tuple[float, float]:
        mult = 1.0 if self.mult_weights is None else float(self.mult_weights[f])
        add = 0.0 if self.add_weights is None else float(self.add_weights[f])
        return mult, add

    def h_f(self, f: int) -> WeightedOracle:
        mult, add = self.weight(f)
        return WeightedOracle(self.h, mult, add)


def cost_dla(dla: DlaInstance, z: np.ndarray) -> float:
    """Sum over facilities of the Lovász extension of ``h_f`` at ``z[f]``."""
    return float(sum(lovasz(dla.h_f(f), z[f]) for f in range(dla.m) if z[f].any()))


def cost_dla_assignment(dla: DlaInstance, S: PartialAssignment) -> float:
    return float(sum(dla.h_f(f).eval(R) for f, R in S.items()))


def check_dla_fractional(dla: DlaInstance, z: np.ndarray, tol: float = 1e-7) -> None:
    if z.shape != (dla.m, dla.n):
        raise DomainError("z must be an m x n array")
    if np.any(z < -tol) or np.any(z > 1 + tol):
        raise DomainError("z entries must lie in [0, 1]")
    for c in range(dla.n):
        inside = dla.below[dla.client_node[c]]
        if np.any(np.abs(z[~inside, c]) > tol):
            raise DomainError(f"client {c} has mass outside its subtree")
        if abs(z[inside, c].sum() - 1.0) > tol:
            raise DomainError(f"client {c} has total mass {z[inside, c].sum()}")


def check_dla_assignment(dla: DlaInstance, S: PartialAssignment) -> None:
    if not S.is_feasible(dla.n):
        raise InvariantViolation("DLA solution is not a partition of the clients")
    for f, R in S.items():
        for c in R:
            if not dla.below[dla.client_node[c], f]:
                raise InvariantViolation(f"client {c} assigned outside its subtree")


# ---------------------------------------------------------------------------
# reduction


@dataclass
class DlaReduction:
    dla: DlaInstance
    z: np.ndarray  # m x n
    anchor: np.ndarray  # client -> node v(c)
    cost_z: float
    open_x: float


def hst_instance(inst: SflInstance, hst: Hst) -> SflInstance:
    """Same clients, facilities and costs with the tree metric."""
    dist = tree_distance_matrix(hst, range(inst.N))
    return SflInstance(
        inst.n, inst.m, Metric(dist), inst.oracle, inst.mult_weights, inst.add_weights,
        inst.conn_multipliers, inst.open_scale,
    )


def reduce_to_dla(inst: SflInstance, hst: Hst, x: FractionalSolution) -> DlaReduction:
    """Anchor each client at the lowest ancestor holding half its mass and renormalize.

    ``inst`` point ``p`` must be embedded at ``hst.leaf_map[p]``.  The
    DLA opening functions carry the instance's facility weights and
    ``open_scale``.
    """
    if inst.mult_weights is not None and inst.add_weights is not None:
        raise UnsupportedVariant("affine facility costs have no tree rounding")
    n, m = inst.n, inst.m
    x.check_feasible(n, m)
    y = x.y(n, m)
    facility_leaf = np.array([hst.leaf_map[n + f] for f in range(m)], dtype=np.int64)
    s = inst.open_scale
    mult = s * (np.ones(m) if inst.mult_weights is None else inst.mult_weights)
    add = None if inst.add_weights is None else s * inst.add_weights
    below = np.array(
        [[hst.is_ancestor(v, leaf) for leaf in facility_leaf] for v in range(hst.num_nodes)], dtype=bool
    ).reshape(hst.num_nodes, m)
    anchor = np.zeros(n, dtype=np.int64)
    z = np.zeros((m, n))
    for c in range(n):
        for v in hst.ancestors(hst.leaf_map[c]):
            mass = y[c, below[v]].sum()
            if mass >= 0.5 - 1e-12:
                anchor[c] = v
                z[below[v], c] = y[c, below[v]] / mass
                break
    dla = DlaInstance(hst, facility_leaf, anchor, inst.oracle, mult, add)
    cz = cost_dla(dla, z)
    open_x = frac_cost(inst, x).open
    if cz > 2 * open_x * (1 + COST_RTOL) + 1e-12:
        raise InvariantViolation(f"DLA cost {cz} exceeds twice the opening cost {open_x}")
    return DlaReduction(dla, z, anchor, cz, open_x)


# ---------------------------------------------------------------------------
# supportedness


def theta_candidates(z: np.ndarray) -> list[float]:
    """0, the distinct entries of ``z`` and a point just right of each, ascending.

    On ``(b, b']`` between consecutive entries the level set is fixed and
    the left side of the inequality shrinks as theta grows, so the point
    ``b + 2**-40 (b' - b)`` stands in for the whole interval.
    """
    points = np.union1d(np.unique(np.clip(np.asarray(z, dtype=float), 0.0, 1.0)), [0.0])
    out = {0.0}
    for b, nxt in zip(points[:-1], points[1:]):
        out.add(float(b + THETA_DELTA * (nxt - b)))
        out.add(float(nxt))
    return sorted(out)


def is_supported(oracle: SubmodularOracle, z: np.ndarray, theta: float, beta: float) -> bool:
    """``h^(z) - h^(min(z, theta)) >= beta * h(L_theta(z))`` up to relative tolerance."""
    lhs = lovasz(oracle, z) - lovasz(oracle, np.minimum(z, theta))
    rhs = beta * oracle.eval(level_set(z, theta))
    return lhs >= rhs - SUPPORT_RTOL * max(abs(lhs), abs(rhs))


def supported_theta(oracle: SubmodularOracle, z, alpha: float) -> float | None:
    """Smallest candidate ``theta`` whose level set is ``alpha/32``-supported."""
    if not 0 < alpha <= 1:
        raise DomainError("alpha must lie in (0, 1]")
    z = np.asarray(z, dtype=float)
    for theta in theta_candidates(z):
        if is_supported(oracle, z, theta, alpha / 32.0):
            return theta
    return None


# ---------------------------------------------------------------------------
# rounding


@dataclass
class RoundResult:
    S: PartialAssignment
    cost: float
    cost_z: float
    bound: float
    alpha: float
    trace: list = field(default_factory=list)


def _pick_facility(dla: DlaInstance, Fv: np.ndarray, variant: str) -> int:
    if variant == "plain":
        return int(Fv[0])
    weights = dla.mult_weights if variant == "mult" else dla.add_weights
    if weights is None:
        raise DomainError(f"variant {variant!r} needs {variant} weights")
    return int(min(Fv, key=lambda f: (weights[f], f)))


def auto_variant(dla: DlaInstance) -> str:
    v = dla.variant
    if v == "affine":
        raise UnsupportedVariant("affine facility costs have no tree rounding")
    return v


def round_dla(dla: DlaInstance, z: np.ndarray, variant: str | None = None, trace: bool = False) -> RoundResult:
    """Bottom-up tree rounding with ``alpha = 1 / log2(D + 1)``.

    At every node the mass of the facilities below is pooled on one of them,
    then a supported level set (or, failing that, the clients at one) is
    committed there.  Each client finally keeps the smallest admissible
    facility it was committed to.
    """
    variant = auto_variant(dla) if variant is None else variant
    if variant not in ("plain", "mult", "add"):
        raise UnsupportedVariant(f"unknown rounding variant {variant!r}")
    check_dla_fractional(dla, z)
    tree = dla.tree
    D = tree.D
    alpha = 1.0 / math.log2(D + 1)
    z = np.clip(np.array(z, dtype=float), 0.0, 1.0)
    fac_cost = np.array([lovasz(dla.h_f(f), z[f]) for f in range(dla.m)])
    cost_z = float(fac_cost.sum())
    S: list[set] = [set() for _ in range(dla.m)]
    log = []
    anchor_level = tree.level[dla.client_node]

    def fail(msg, **extra):
        raise InvariantViolation(msg, dump={"message": msg, "z": z.tolist(), "S": [sorted(s) for s in S], **extra})

    def check_cost(where):
        total = float(fac_cost.sum())
        if total > check_cost.last * (1 + COST_RTOL) + 1e-12:
            fail(f"DLA cost rose from {check_cost.last} to {total} at {where}")
        check_cost.last = total

    check_cost.last = cost_z
    for i in range(D + 1):
        lvl = D - i
        # correctness invariant for clients anchored at or above this level
        for c in np.flatnonzero(anchor_level <= lvl):
            inside = dla.below[dla.client_node[c]]
            if abs(z[inside, c].sum() - 1.0) > 1e-7 and not any(c in S[f] for f in np.flatnonzero(inside)):
                fail(f"client {c} lost its mass before level {lvl}")
        for v in np.flatnonzero(tree.level == lvl):
            Fv = dla.facilities_below(int(v))
            if Fv.size == 0:
                continue
            fv = _pick_facility(dla, Fv, variant)
            others = Fv[Fv != fv]
            if others.size:
                z[fv] = z[Fv].sum(axis=0)
                z[others] = 0.0
                if np.any(z[fv] > 1 + 1e-7):
                    fail(f"pooled mass exceeds one at node {v}")
                fac_cost[others] = 0.0
            z[fv] = np.where(z[fv] >= 1 - SNAP_TOL, 1.0, z[fv])
            fac_cost[fv] = lovasz(dla.h_f(fv), z[fv])
            check_cost(f"merge at node {v}")
            h_fv = dla.h_f(fv)
            theta = supported_theta(h_fv, z[fv], alpha)
            L = level_set(z[fv], 1.0 if theta is None else theta)
            S[fv] |= L
            if L:
                z[fv, sorted(L)] = 0.0
                fac_cost[fv] = lovasz(h_fv, z[fv])
                check_cost(f"commit at node {v}")
            if trace:
                log.append(
                    {"level": lvl, "node": int(v), "f": fv, "theta": theta, "committed": sorted(L), "cost_z": float(fac_cost.sum())}
                )
    final: dict[int, set] = {}
    for c in range(dla.n):
        eligible = [f for f in dla.admissible(c) if c in S[f]]
        if not eligible:
            fail(f"client {c} was never committed to an admissible facility")
        final.setdefault(int(eligible[0]), set()).add(c)
    result = PartialAssignment(final)
    check_dla_assignment(dla, result)
    cost = cost_dla_assignment(dla, result)
    bound = (1 + 32 * math.log2(D + 1)) * cost_z
    if cost > bound * (1 + COST_RTOL) + 1e-12:
        fail(f"rounded cost {cost} exceeds the bound {bound}")
    return RoundResult(result, cost, cost_z, bound, alpha, log)


# ---------------------------------------------------------------------------
# lifting back


@dataclass
class LiftResult:
    S: PartialAssignment
    conn_tree: np.ndarray  # per-client tree connection cost (with multipliers)
    slack: float  # min over clients of bound - connection


def lift_to_sfl(
    inst: SflInstance, hst: Hst, S: PartialAssignment, anchor: np.ndarray, y: np.ndarray | None = None
) -> LiftResult:
    """Read the DLA answer as an SFL assignment and check the per-client distance bounds.

    A client anchored at level ``l`` reaches any facility below its anchor
    within ``2(2 Delta - 1)``, ``Delta = 2**(D - l - 1)``.  Given the
    fractional assignment ``y`` (n x m), each client's tree distance is also
    checked against three times its fractional tree connection.
    """
    n = inst.n
    frac = None
    if y is not None:
        dt = tree_distance_matrix(hst, range(inst.N))[:n, n:]
        frac = (dt * y).sum(axis=1)
    conn = np.zeros(n)
    slack = math.inf
    for f, R in S.items():
        for c in R:
            d = hst.node_distance(hst.leaf_map[c], hst.leaf_map[n + f])
            delta = 2.0 ** (hst.D - int(hst.level[anchor[c]]) - 1)
            limit = 2 * (2 * delta - 1)
            if d > limit + 1e-9:
                raise InvariantViolation(f"client {c} travels {d} > {limit} in the tree")
            slack = min(slack, limit - d)
            if frac is not None and d > 3 * frac[c] * (1 + COST_RTOL) + 1e-9:
                raise InvariantViolation(f"client {c} travels {d} > 3 x fractional {frac[c]}")
            conn[c] = d * inst.conn_mult[c]
    return LiftResult(S, conn, slack)
