"""SFL problem data: metric, instance, partial assignments, generators, reductions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import CapExceeded, DomainError, UnsupportedVariant
from .oracle import (
    CoverageOracle,
    HypercubeOracle,
    IndependentActivationOracle,
    SubmodularOracle,
    UniformOracle,
    WeightedOracle,
    hypercube_edge_length,
    oracle_from_dict,
)

METRIC_TOL = 1e-9
MAX_POINTS = 4096


@dataclass(frozen=True, eq=False)
class Metric:
    """Dense symmetric distance matrix.  Construct via ``Metric.validated`` on untrusted data."""

    dist: np.ndarray
    d_min: float = field(init=False)
    d_max: float = field(init=False)

    def __post_init__(self):
        dist = np.array(self.dist, dtype=float)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise DomainError("distance matrix must be square")
        if dist.shape[0] > MAX_POINTS:
            raise CapExceeded(f"at most {MAX_POINTS} points supported")
        dist.setflags(write=False)
        object.__setattr__(self, "dist", dist)
        positive = dist[dist > 0]
        object.__setattr__(self, "d_min", float(positive.min()) if positive.size else 0.0)
        object.__setattr__(self, "d_max", float(dist.max()) if dist.size else 0.0)

    @property
    def size(self) -> int:
        return self.dist.shape[0]

    @classmethod
    def validated(cls, dist, tol: float = METRIC_TOL) -> "Metric":
        metric = cls(dist)
        metric.validate(tol)
        return metric

    def validate(self, tol: float = METRIC_TOL) -> None:
        d = self.dist
        if not np.all(np.isfinite(d)):
            raise DomainError("distances must be finite")
        if np.any(d < 0):
            raise DomainError("distances must be non-negative")
        if np.any(np.abs(np.diag(d)) > tol):
            raise DomainError("distance matrix must have a zero diagonal")
        if np.any(np.abs(d - d.T) > tol):
            raise DomainError("distance matrix must be symmetric")
        for k in range(self.size):
            via = d[:, k : k + 1] + d[k : k + 1, :]
            if np.any(d > via + tol):
                i, j = np.argwhere(d > via + tol)[0]
                raise DomainError(f"triangle inequality fails for ({i}, {k}, {j})")


@dataclass(frozen=True, eq=False)
class SflInstance:
    """Clients ``0..n-1`` and facilities ``0..m-1`` over one metric.

    Metric points are ordered clients first, then facilities.  Opening cost
    of facility ``f`` on a non-empty set ``R`` is
    ``open_scale * (add_weights[f] + mult_weights[f] * g(R))``.
    """

    n: int
    m: int
    metric: Metric
    oracle: SubmodularOracle
    mult_weights: np.ndarray | None = None
    add_weights: np.ndarray | None = None
    conn_multipliers: np.ndarray | None = None
    open_scale: float = 1.0

    def __post_init__(self):
        if self.metric.size != self.n + self.m:
            raise DomainError("metric size must equal n + m")
        if self.oracle.ground_size != self.n:
            raise DomainError("oracle ground set must be the client set")
        if self.n > 0 and self.m == 0:
            raise DomainError("an instance with clients needs at least one facility")
        for name, length in (("mult_weights", self.m), ("add_weights", self.m), ("conn_multipliers", self.n)):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.array(arr, dtype=float)
            if arr.shape != (length,) or np.any(arr < 0):
                raise DomainError(f"{name} must be {length} non-negative reals")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.conn_multipliers is not None:
            if not isinstance(self.oracle, IndependentActivationOracle):
                raise DomainError("connection multipliers require an independent_activation oracle")
            if np.any(self.conn_multipliers <= 0) or np.any(self.conn_multipliers > 1):
                raise DomainError("connection multipliers must lie in (0, 1]")
        if not self.open_scale > 0:
            raise DomainError("open_scale must be positive")

    @property
    def N(self) -> int:
        return self.n + self.m

    @property
    def dist_cf(self) -> np.ndarray:
        """``n x m`` client-to-facility distances."""
        return self.metric.dist[: self.n, self.n :]

    @property
    def conn_mult(self) -> np.ndarray:
        return np.ones(self.n) if self.conn_multipliers is None else self.conn_multipliers

    @property
    def variant(self) -> str:
        if self.mult_weights is not None and self.add_weights is not None:
            return "affine"
        if self.mult_weights is not None:
            return "mult"
        if self.add_weights is not None:
            return "add"
        return "plain"

    def weighted_conn(self) -> np.ndarray:
        """``n x m`` connection costs including per-client multipliers."""
        return self.dist_cf * self.conn_mult[:, None]

    def facility_weights(self, f: int) -> tuple[float, float]:
        mult = 1.0 if self.mult_weights is None else float(self.mult_weights[f])
        add = 0.0 if self.add_weights is None else float(self.add_weights[f])
        return mult, add

    def facility_oracle(self, f: int, base: SubmodularOracle | None = None) -> WeightedOracle:
        mult, add = self.facility_weights(f)
        s = self.open_scale
        return WeightedOracle(self.oracle if base is None else base, mult * s, add * s)

    def open_cost(self, f: int, R: Iterable[int]) -> float:
        R = list(R)
        if not R:
            return 0.0
        mult, add = self.facility_weights(f)
        return self.open_scale * (add + mult * self.oracle.eval(R))

    def conn_cost(self, f: int, R: Iterable[int]) -> float:
        R = list(R)
        return float(sum(self.dist_cf[c, f] * self.conn_mult[c] for c in R))

    def with_oracle(self, oracle: SubmodularOracle) -> "SflInstance":
        return replace(self, oracle=oracle)


class Cost(NamedTuple):
    conn: float
    open: float
    total: float


class PartialAssignment:
    """Facility -> client-set map; sets may overlap across facilities."""

    def __init__(self, sets: Mapping[int, Iterable[int]] | None = None):
        items = {} if sets is None else sets
        self.sets: dict[int, frozenset] = {
            int(f): frozenset(int(c) for c in R) for f, R in sorted(items.items())
        }
        self.sets = {f: R for f, R in self.sets.items() if R}

    @classmethod
    def from_phi(cls, phi: Sequence[int]) -> "PartialAssignment":
        sets: dict[int, set] = {}
        for c, f in enumerate(phi):
            sets.setdefault(int(f), set()).add(c)
        return cls(sets)

    def covered(self) -> frozenset:
        out: set = set()
        for R in self.sets.values():
            out |= R
        return frozenset(out)

    def is_disjoint(self) -> bool:
        return sum(len(R) for R in self.sets.values()) == len(self.covered())

    def is_feasible(self, n: int) -> bool:
        return self.is_disjoint() and self.covered() == frozenset(range(n))

    def to_phi(self, n: int) -> list[int]:
        if not self.is_feasible(n):
            raise DomainError("assignment is not a total disjoint cover of the clients")
        phi = [-1] * n
        for f, R in self.sets.items():
            for c in R:
                phi[c] = f
        return phi

    def items(self):
        return self.sets.items()

    def get(self, f: int) -> frozenset:
        return self.sets.get(f, frozenset())

    def __eq__(self, other):
        return isinstance(other, PartialAssignment) and self.sets == other.sets

    def __repr__(self):
        body = ", ".join(f"{f}: {sorted(R)}" for f, R in self.sets.items())
        return f"PartialAssignment({{{body}}})"

    def to_json(self) -> list:
        return [{"f": f, "R": sorted(R)} for f, R in self.sets.items()]


def cost(inst: SflInstance, S: PartialAssignment) -> Cost:
    """Connection, opening and total cost of a (partial) assignment."""
    conn = 0.0
    opening = 0.0
    for f, R in S.items():
        if not 0 <= f < inst.m:
            raise DomainError(f"facility id {f} out of range")
        if min(R) < 0 or max(R) >= inst.n:
            raise DomainError("client id out of range")
        conn += inst.conn_cost(f, R)
        opening += inst.open_cost(f, R)
    return Cost(conn, opening, conn + opening)


# ---------------------------------------------------------------------------
# generators


def hypercube_edges(dim: int) -> list[tuple[int, int, int]]:
    """Edges ``(i, v, u)`` in facility order: by dimension, then lower endpoint."""
    edges = []
    for i in range(1, dim + 1):
        bit = 1 << (i - 1)
        for v in range(1 << dim):
            if not v & bit:
                edges.append((i, v, v | bit))
    return edges


def gen_hypercube(dim: int) -> SflInstance:
    """Greedy lower-bound instance on the ``dim``-cube.

    Clients ``(v, l)`` get id ``v * dim + l - 1``.  Facilities ``0..2^dim-1``
    sit on the vertices, the rest on edge midpoints in ``hypercube_edges``
    order.
    """
    if not 2 <= dim <= 12:
        raise DomainError("hypercube dimension must be in [2, 12]")
    nv = 1 << dim
    edges = hypercube_edges(dim)
    n, m = dim * nv, nv + len(edges)
    if n + m > MAX_POINTS:
        raise CapExceeded(f"dim={dim} needs {n + m} points, cap is {MAX_POINTS}")
    rows, cols, w = [], [], []
    for e, (i, v, u) in enumerate(edges):
        half = hypercube_edge_length(dim, i) / 2.0
        for a in (v, u):
            rows += [a, nv + e]
            cols += [nv + e, a]
            w += [half, half]
    graph = csr_matrix((w, (rows, cols)), shape=(nv + len(edges),) * 2)
    node_dist = dijkstra(graph, directed=False)
    node_of_point = np.concatenate([np.repeat(np.arange(nv), dim), np.arange(nv + len(edges))])
    dist = node_dist[np.ix_(node_of_point, node_of_point)]
    return SflInstance(n, m, Metric(dist), HypercubeOracle(dim))


def hypercube_dim(inst: SflInstance) -> int | None:
    """Dimension if ``inst`` has the exact layout produced by ``gen_hypercube``."""
    oracle = inst.oracle
    if not isinstance(oracle, HypercubeOracle) or not oracle.is_canonical():
        return None
    dim = oracle.dim
    if inst.m != (1 << dim) + dim * (1 << (dim - 1)):
        return None
    return dim


ORACLE_CHOICES = ("coverage", "uniform", "independent_activation")
VARIANT_CHOICES = ("plain", "mult", "add", "univ")


def gen_random_euclidean(
    n: int, m: int, seed: int, oracle: str = "coverage", variant: str = "plain"
) -> SflInstance:
    """Uniform points in the unit square with a seeded random oracle.

    ``variant='univ'`` forces an independent-activation oracle with
    connection multipliers equal to the activation probabilities and random
    multiplicative facility weights.
    """
    if n < 1 or m < 1:
        raise DomainError("need at least one client and one facility")
    if variant not in VARIANT_CHOICES:
        raise DomainError(f"unknown variant {variant!r}")
    rng = np.random.default_rng(seed)
    pts = rng.random((n + m, 2))
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    if variant == "univ":
        oracle = "independent_activation"
    if oracle == "coverage":
        u = max(4, n)
        weights = np.round(rng.uniform(0.2, 1.0, u), 6)
        sets = tuple(
            tuple(sorted(rng.choice(u, size=int(rng.integers(1, 4)), replace=False).tolist()))
            for _ in range(n)
        )
        g: SubmodularOracle = CoverageOracle(sets, tuple(weights.tolist()))
    elif oracle == "uniform":
        g = UniformOracle(1.0, n)
    elif oracle == "independent_activation":
        g = IndependentActivationOracle(tuple(np.round(rng.uniform(0.1, 1.0, n), 6).tolist()))
    else:
        raise DomainError(f"unknown oracle family {oracle!r}")
    kw: dict = {}
    if variant == "mult":
        kw["mult_weights"] = np.round(rng.uniform(0.5, 2.0, m), 6)
    elif variant == "add":
        kw["add_weights"] = np.round(rng.uniform(0.0, 1.0, m), 6)
    elif variant == "univ":
        kw["mult_weights"] = np.round(rng.uniform(0.5, 2.0, m), 6)
        kw["conn_multipliers"] = np.array(g.probs)
    return SflInstance(n, m, Metric(dist), g, **kw)


# ---------------------------------------------------------------------------
# reductions


@dataclass(frozen=True, eq=False)
class FacilityReduction:
    """Instance with one dummy facility per client, and the way back."""

    instance: SflInstance
    back: np.ndarray  # dummy facility j (= client j) -> original facility

    def lift(self, S: PartialAssignment) -> PartialAssignment:
        sets: dict[int, set] = {}
        for j, R in S.items():
            sets.setdefault(int(self.back[j]), set()).update(R)
        return PartialAssignment(sets)


def reduce_facilities(inst: SflInstance) -> FacilityReduction:
    """Replace the facilities by one dummy ``f'(c)`` per client.

    ``f'(c)`` hangs off client ``c`` by an edge of length ``d(c, f(c))``
    with ``f(c)`` the nearest original facility (smallest id on ties); the
    new metric is the shortest-path metric of the resulting graph.
    """
    if inst.mult_weights is not None or inst.add_weights is not None:
        raise UnsupportedVariant("facility reduction is defined for plain SFL only")
    n = inst.n
    dcf = inst.dist_cf
    nearest = np.argmin(dcf, axis=1)
    hang = dcf[np.arange(n), nearest]
    dcc = inst.metric.dist[:n, :n]
    dist = np.zeros((2 * n, 2 * n))
    dist[:n, :n] = dcc
    dist[:n, n:] = dcc + hang[None, :]
    dist[n:, :n] = dist[:n, n:].T
    dist[n:, n:] = hang[:, None] + dcc + hang[None, :]
    np.fill_diagonal(dist[n:, n:], 0.0)
    reduced = replace(inst, m=n, metric=Metric(dist))
    return FacilityReduction(reduced, nearest.astype(np.int64))


@dataclass(frozen=True, eq=False)
class Component:
    """One connected piece of a distance-range reduction."""

    instance: SflInstance
    clients: tuple  # local client i -> global client id
    facilities: tuple  # local facility j -> global facility id
    scale: float
    moved: float  # largest distance a point was moved before scaling

    def lift(self, S: PartialAssignment) -> PartialAssignment:
        return PartialAssignment(
            {self.facilities[j]: [self.clients[i] for i in R] for j, R in S.items()}
        )


def _floyd_warshall(d: np.ndarray) -> np.ndarray:
    d = d.copy()
    for k in range(d.shape[0]):
        np.minimum(d, d[:, k : k + 1] + d[k : k + 1, :], out=d)
    return d


def reduce_distance_range(inst: SflInstance, eps: float, L: float) -> list[Component]:
    """Split at edges longer than ``L``, snap to a net, rescale to ``d_min = 2``.

    Within each component the centres are chosen greedily in ascending point
    order, pairwise more than ``eps L / n`` apart; every other point moves
    onto the first centre within that distance.  Distances and opening costs
    are then multiplied by ``2 / d_min`` of the snapped metric, which leaves
    ``d_max <= 2 n N / eps``.
    """
    if not L > 0:
        raise DomainError("distance threshold L must be positive")
    if not eps > 0:
        raise DomainError("eps must be positive")
    n, N = inst.n, inst.N
    d = inst.metric.dist
    thresholded = np.where(d <= L * (1 + 1e-12), d, np.inf)
    adjacency = csr_matrix(np.isfinite(thresholded).astype(np.int8))
    n_comp, labels = connected_components(adjacency, directed=False)
    spacing = eps * L / max(n, 1)
    out = []
    for label in range(n_comp):
        pts = np.flatnonzero(labels == label)
        clients = tuple(int(p) for p in pts if p < n)
        facilities = tuple(int(p) - n for p in pts if p >= n)
        if not clients:
            continue
        if not facilities:
            raise DomainError(f"L={L} leaves clients {clients} without a facility")
        local = _floyd_warshall(thresholded[np.ix_(pts, pts)])
        centres: list[int] = []
        rep = np.empty(len(pts), dtype=np.int64)
        for k in range(len(pts)):
            near = [c for c in centres if local[k, c] <= spacing]
            if near:
                rep[k] = near[0]
            else:
                centres.append(k)
                rep[k] = k
        snapped = local[np.ix_(rep, rep)]
        moved = float(local[np.arange(len(pts)), rep].max())
        positive = snapped[snapped > 0]
        scale = 2.0 / positive.min() if positive.size else 2.0 * n / (eps * L)
        sub = SflInstance(
            len(clients),
            len(facilities),
            Metric(snapped * scale),
            inst.oracle.restrict(clients),
            None if inst.mult_weights is None else inst.mult_weights[list(facilities)],
            None if inst.add_weights is None else inst.add_weights[list(facilities)],
            None if inst.conn_multipliers is None else inst.conn_multipliers[list(clients)],
            inst.open_scale * scale,
        )
        out.append(Component(sub, clients, facilities, float(scale), moved))
    return out


def distance_bound(n: int, N: int, eps: float) -> float:
    """Largest distance allowed after ``reduce_distance_range``."""
    return 2.0 * n * N / eps


# ---------------------------------------------------------------------------
# serialization


def to_dict(inst: SflInstance) -> dict:
    d: dict = {
        "n": inst.n,
        "m": inst.m,
        "metric": inst.metric.dist.tolist(),
        "oracle": inst.oracle.to_dict(),
    }
    for name in ("mult_weights", "add_weights", "conn_multipliers"):
        arr = getattr(inst, name)
        if arr is not None:
            d[name] = arr.tolist()
    if inst.open_scale != 1.0:
        d["open_scale"] = inst.open_scale
    return d


def from_dict(d: Mapping) -> SflInstance:
    n, m = int(d["n"]), int(d["m"])
    oracle_d = dict(d["oracle"])
    extras = {k: oracle_d.pop(k) for k in ("mult_weights", "add_weights") if k in oracle_d}
    kw = {}
    for name in ("mult_weights", "add_weights", "conn_multipliers"):
        value = d.get(name, extras.get(name))
        if value is not None:
            kw[name] = np.asarray(value, dtype=float)
    return SflInstance(
        n,
        m,
        Metric.validated(np.asarray(d["metric"], dtype=float)),
        oracle_from_dict(oracle_d, n),
        open_scale=float(d.get("open_scale", 1.0)),
        **kw,
    )


def dumps(inst: SflInstance) -> str:
    return json.dumps(to_dict(inst))


def loads(text: str) -> SflInstance:
    return from_dict(json.loads(text))


def save(inst: SflInstance, path) -> None:
    Path(path).write_text(dumps(inst) + "\n")


def load(path) -> SflInstance:
    return loads(Path(path).read_text())
