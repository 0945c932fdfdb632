"""Monotone submodular opening-cost functions and their Lovász extension.

Clients are the integers ``0 .. ground_size-1``.  Every oracle is immutable
after construction; derived lookup arrays are built once in ``__post_init__``
and never mutated, so concurrent evaluation from several threads is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CapExceeded, DomainError

EPS_NUM = 1e-9
TABLE_CAP = 22
HYPERCUBE_MAX_DIM = 16
VERIFY_CAP = 12


def _frozen_set(obj, name, value):
    object.__setattr__(obj, name, value)


class SubmodularOracle:
    """Evaluator of a normalized monotone submodular function on client sets.

    Subclasses implement ``_eval`` on a sorted, duplicate-free, non-empty
    id array.  ``eval`` handles validation and the empty set.
    """

    kind = "abstract"
    ground_size: int

    def _eval(self, ids: np.ndarray) -> float:
        raise NotImplementedError

    def _ids(self, R) -> np.ndarray:
        if isinstance(R, np.ndarray):
            ids = R.astype(np.int64, copy=False).ravel()
        else:
            ids = np.fromiter(R, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.ground_size):
            raise DomainError(
                f"client id out of range for ground set of size {self.ground_size}"
            )
        return np.unique(ids)

    def eval(self, R: Iterable[int]) -> float:
        ids = self._ids(R)
        if ids.size == 0:
            return 0.0
        return float(self._eval(ids))

    def eval_chain(self, order: Sequence[int]) -> np.ndarray:
        """Values on the nested prefixes ``order[:1], order[:2], ...``."""
        order = np.asarray(order, dtype=np.int64)
        self._ids(order)
        return np.array(
            [self._eval(np.unique(order[: k + 1])) for k in range(order.size)],
            dtype=float,
        )

    def table(self) -> np.ndarray:
        """Values on all ``2**n`` client subsets, indexed by bitmask."""
        n = self.ground_size
        _check_table_size(n)
        out = np.zeros(1 << n)
        for mask in range(1, 1 << n):
            ids = np.array([c for c in range(n) if mask >> c & 1], dtype=np.int64)
            out[mask] = self._eval(ids)
        return out

    def restrict(self, ids: Sequence[int]) -> "SubmodularOracle":
        """Same function seen on the clients ``ids`` (renumbered 0..k-1)."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _check_table_size(n: int) -> None:
    if n > TABLE_CAP:
        raise CapExceeded(f"subset table needs n <= {TABLE_CAP}, got {n}")


def _all_masks(n: int) -> np.ndarray:
    return np.arange(1 << n, dtype=np.int64)


def subset_sums(weights: np.ndarray) -> np.ndarray:
    """``out[mask] = sum(weights[c] for c in mask)`` for every bitmask."""
    out = np.zeros(1, dtype=float)
    for w in np.asarray(weights, dtype=float):
        out = np.concatenate([out, out + w])
    return out


@dataclass(frozen=True)
class UniformOracle(SubmodularOracle):
    """``g(R) = cost`` for every non-empty ``R`` (classical facility location)."""

    cost: float
    ground_size: int
    kind = "uniform"

    def __post_init__(self):
        if self.cost < 0:
            raise DomainError("uniform cost must be non-negative")
        if self.ground_size < 0:
            raise DomainError("ground size must be non-negative")

    def _eval(self, ids):
        return self.cost

    def eval_chain(self, order):
        order = np.asarray(order, dtype=np.int64)
        self._ids(order)
        return np.full(order.size, float(self.cost))

    def table(self):
        _check_table_size(self.ground_size)
        out = np.full(1 << self.ground_size, float(self.cost))
        out[0] = 0.0
        return out

    def restrict(self, ids):
        return UniformOracle(self.cost, len(ids))

    def to_dict(self):
        return {"kind": "uniform", "cost": float(self.cost)}


@dataclass(frozen=True)
class CoverageOracle(SubmodularOracle):
    """Weighted coverage: total weight of universe elements touched by ``R``."""

    sets: tuple
    universe_weights: tuple
    kind = "coverage"
    _member: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sets = tuple(tuple(sorted(set(int(e) for e in s))) for s in self.sets)
        weights = tuple(float(w) for w in self.universe_weights)
        _frozen_set(self, "sets", sets)
        _frozen_set(self, "universe_weights", weights)
        u = len(weights)
        if any(w < 0 for w in weights):
            raise DomainError("universe weights must be non-negative")
        member = np.zeros((len(sets), u), dtype=bool)
        for c, s in enumerate(sets):
            if s and (s[0] < 0 or s[-1] >= u):
                raise DomainError(f"client {c} covers an element outside the universe")
            member[c, list(s)] = True
        member.setflags(write=False)
        _frozen_set(self, "_member", member)

    @property
    def ground_size(self):
        return len(self.sets)

    def _eval(self, ids):
        covered = self._member[ids].any(axis=0)
        return float(np.asarray(self.universe_weights)[covered].sum())

    def eval_chain(self, order):
        order = np.asarray(order, dtype=np.int64)
        self._ids(order)
        covered = np.logical_or.accumulate(self._member[order], axis=0)
        return covered.astype(float) @ np.asarray(self.universe_weights, dtype=float)

    def table(self):
        n = self.ground_size
        _check_table_size(n)
        weights = np.asarray(self.universe_weights, dtype=float)
        out = np.zeros(1 << n)
        # process the universe in blocks of 8 elements packed into one byte
        for start in range(0, weights.size, 8):
            block = self._member[:, start : start + 8]
            bits = (block.astype(np.uint16) << np.arange(block.shape[1], dtype=np.uint16)).sum(axis=1)
            packed = np.zeros(1, dtype=np.uint16)
            for c in range(n):
                packed = np.concatenate([packed, packed | bits[c]])
            lookup = subset_sums(weights[start : start + 8])
            out += lookup[packed]
        return out

    def restrict(self, ids):
        return CoverageOracle(tuple(self.sets[i] for i in ids), self.universe_weights)

    def to_dict(self):
        return {
            "kind": "coverage",
            "universe_weights": list(self.universe_weights),
            "sets": [list(s) for s in self.sets],
        }


def hypercube_edge_length(dim: int, i: int) -> float:
    """Length ``1 / (2 (dim + 1 - i))`` of a hypercube edge in dimension ``i``."""
    return 1.0 / (2.0 * (dim + 1 - i))


@dataclass(frozen=True)
class HypercubeOracle(SubmodularOracle):
    """Expected number of collapsed vertices holding an activated client.

    Clients are ``(vertex, index)`` pairs; vertices are bitmasks over the
    ``dim`` coordinates (coordinate ``i`` is bit ``i-1``), indices run
    ``1..dim``.  Each dimension ``i`` is activated independently with
    probability ``p_i``.  Activating ``A`` collapses the cube along ``A``
    and switches on the clients whose index lies in ``A``.  The value is an
    exact sum over all ``2**dim`` activation sets.
    """

    dim: int
    clients: tuple = None
    kind = "hypercube"
    _vertex: np.ndarray = field(init=False, repr=False, compare=False)
    _index: np.ndarray = field(init=False, repr=False, compare=False)
    _act_sets: np.ndarray = field(init=False, repr=False, compare=False)
    _act_prob: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dim = int(self.dim)
        if not 1 <= dim <= HYPERCUBE_MAX_DIM:
            raise DomainError(f"hypercube dimension must be in [1, {HYPERCUBE_MAX_DIM}]")
        if self.clients is None:
            clients = tuple((v, l) for v in range(1 << dim) for l in range(1, dim + 1))
        else:
            clients = tuple((int(v), int(l)) for v, l in self.clients)
        for v, l in clients:
            if not (0 <= v < 1 << dim and 1 <= l <= dim):
                raise DomainError(f"invalid hypercube client {(v, l)}")
        _frozen_set(self, "clients", clients)
        p = self.edge_lengths
        act = np.arange(1 << dim, dtype=np.int64)
        prob = np.ones(act.size)
        for i in range(1, dim + 1):
            on = (act >> (i - 1)) & 1
            prob *= np.where(on == 1, p[i - 1], 1.0 - p[i - 1])
        vertex = np.array([v for v, _ in clients], dtype=np.int64)
        index = np.array([l for _, l in clients], dtype=np.int64)
        for arr in (act, prob, vertex, index):
            arr.setflags(write=False)
        _frozen_set(self, "_act_sets", act)
        _frozen_set(self, "_act_prob", prob)
        _frozen_set(self, "_vertex", vertex)
        _frozen_set(self, "_index", index)

    @property
    def ground_size(self):
        return len(self.clients)

    @property
    def edge_lengths(self) -> np.ndarray:
        return np.array([hypercube_edge_length(self.dim, i) for i in range(1, self.dim + 1)])

    def _eval(self, ids):
        act = self._act_sets[:, None]
        v = self._vertex[ids][None, :]
        l = self._index[ids][None, :]
        on = (act >> (l - 1)) & 1
        keys = np.where(on == 1, v & ~act, -1)
        keys.sort(axis=1)
        fresh = (keys[:, 1:] != keys[:, :-1]) & (keys[:, 1:] >= 0)
        count = fresh.sum(axis=1) + (keys[:, 0] >= 0)
        return float(self._act_prob @ count)

    def table(self):
        n = self.ground_size
        _check_table_size(n)
        masks = _all_masks(n)
        out = np.zeros(1 << n)
        for a, pa in zip(self._act_sets, self._act_prob):
            groups: dict[int, int] = {}
            for c in range(n):
                if (a >> (self._index[c] - 1)) & 1:
                    key = int(self._vertex[c] & ~a)
                    groups[key] = groups.get(key, 0) | (1 << c)
            for group in groups.values():
                out += pa * ((masks & group) != 0)
        return out

    def restrict(self, ids):
        return HypercubeOracle(self.dim, tuple(self.clients[i] for i in ids))

    def is_canonical(self) -> bool:
        dim = self.dim
        return self.clients == tuple((v, l) for v in range(1 << dim) for l in range(1, dim + 1))

    def to_dict(self):
        d = {"kind": "hypercube", "dim": int(self.dim)}
        if not self.is_canonical():
            d["clients"] = [list(c) for c in self.clients]
        return d


@dataclass(frozen=True)
class IndependentActivationOracle(SubmodularOracle):
    """``g(R) = Pr[R meets A]`` where each client joins ``A`` independently."""

    probs: tuple
    kind = "independent_activation"

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise DomainError("activation probabilities must lie in [0, 1]")
        _frozen_set(self, "probs", probs)

    @property
    def ground_size(self):
        return len(self.probs)

    def _eval(self, ids):
        q = 1.0 - np.asarray(self.probs)[ids]
        return float(1.0 - np.prod(q))

    def eval_chain(self, order):
        order = np.asarray(order, dtype=np.int64)
        self._ids(order)
        return 1.0 - np.cumprod(1.0 - np.asarray(self.probs)[order])

    def table(self):
        _check_table_size(self.ground_size)
        q = np.ones(1)
        for p in self.probs:
            q = np.concatenate([q, q * (1.0 - p)])
        return 1.0 - q

    def restrict(self, ids):
        return IndependentActivationOracle(tuple(self.probs[i] for i in ids))

    def to_dict(self):
        return {"kind": "independent_activation", "probs": list(self.probs)}


@dataclass(frozen=True)
class WeightedOracle(SubmodularOracle):
    """Per-facility cost ``add * [R non-empty] + mult * base(R)``."""

    base: SubmodularOracle
    mult: float = 1.0
    add: float = 0.0
    kind = "weighted"

    def __post_init__(self):
        if self.mult < 0 or self.add < 0:
            raise DomainError("facility weights must be non-negative")

    @property
    def ground_size(self):
        return self.base.ground_size

    def _eval(self, ids):
        return self.add + self.mult * self.base._eval(ids)

    def eval_chain(self, order):
        return self.add + self.mult * self.base.eval_chain(order)

    def table(self):
        out = self.add + self.mult * self.base.table()
        out[0] = 0.0
        return out

    def restrict(self, ids):
        return WeightedOracle(self.base.restrict(ids), self.mult, self.add)


class Tabulated(SubmodularOracle):
    """Read-only lookup view of another oracle over all ``2**n`` subsets.

    Evaluations become table lookups; used by the enumeration-based solvers
    and the pipeline where the same function is queried many times.
    """

    def __init__(self, base: SubmodularOracle, values: np.ndarray | None = None):
        self.base = base
        self.kind = base.kind
        self.ground_size = base.ground_size
        values = base.table() if values is None else np.asarray(values, dtype=float)
        values.setflags(write=False)
        self.values = values

    def _mask(self, ids):
        return int(np.bitwise_or.reduce(np.left_shift(1, ids))) if ids.size else 0

    def _eval(self, ids):
        return float(self.values[self._mask(ids)])

    def eval_chain(self, order):
        order = np.asarray(order, dtype=np.int64)
        self._ids(order)
        if order.size == 0:
            return np.zeros(0)
        masks = np.bitwise_or.accumulate(np.left_shift(np.int64(1), order))
        return self.values[masks]

    def eval_mask(self, mask: int) -> float:
        return float(self.values[mask])

    def table(self):
        return self.values.copy()

    def restrict(self, ids):
        return self.base.restrict(ids)


def tabulate(oracle: SubmodularOracle) -> SubmodularOracle:
    """Tabulated view when the ground set is small enough, else the oracle itself."""
    if isinstance(oracle, Tabulated) or oracle.ground_size > TABLE_CAP:
        return oracle
    return Tabulated(oracle)


def oracle_from_dict(d: dict, n: int) -> SubmodularOracle:
    kind = d.get("kind")
    if kind == "uniform":
        oracle = UniformOracle(float(d["cost"]), n)
    elif kind == "coverage":
        oracle = CoverageOracle(tuple(tuple(s) for s in d["sets"]), tuple(d["universe_weights"]))
    elif kind == "hypercube":
        clients = d.get("clients")
        oracle = HypercubeOracle(int(d["dim"]), None if clients is None else tuple(map(tuple, clients)))
    elif kind == "independent_activation":
        oracle = IndependentActivationOracle(tuple(d["probs"]))
    else:
        raise DomainError(f"unknown oracle kind {kind!r}")
    if oracle.ground_size != n:
        raise DomainError(f"oracle covers {oracle.ground_size} clients, instance has {n}")
    return oracle


# ---------------------------------------------------------------------------
# Lovász extension


def _prepare(oracle, y, clients):
    y = np.asarray(y, dtype=float)
    if clients is None:
        if y.size != oracle.ground_size:
            raise DomainError("vector length must equal the ground size")
        clients = np.arange(y.size)
    else:
        clients = np.asarray(clients, dtype=np.int64)
        if clients.size != y.size:
            raise DomainError("vector and client list lengths differ")
    if y.size and (y.min() < -1e-12 or y.max() > 1 + 1e-12):
        raise DomainError("Lovász extension is defined on [0,1] vectors only")
    return np.clip(y, 0.0, 1.0), clients


def lovasz(oracle: SubmodularOracle, y, clients=None) -> float:
    """Lovász extension by the sorted telescoping formula.

    ``y[k]`` is the coordinate of client ``clients[k]`` (default: client k);
    unlisted clients are zero.  Ties are ordered by client id.
    """
    y, clients = _prepare(oracle, y, clients)
    order = np.lexsort((clients, -y))
    ys = y[order]
    k = int(np.count_nonzero(ys > 0))
    if k == 0:
        return 0.0
    values = oracle.eval_chain(clients[order[:k]])
    steps = ys[:k] - np.append(ys[1:k], 0.0)
    return float(values @ steps)


def lovasz_truncated(oracle: SubmodularOracle, z, theta: float, clients=None) -> float:
    """Lovász extension of ``min(z, theta)`` taken componentwise."""
    if not 0.0 <= theta <= 1.0:
        raise DomainError("theta must lie in [0, 1]")
    return lovasz(oracle, np.minimum(np.asarray(z, dtype=float), theta), clients)


def level_set(z, theta: float, clients=None) -> frozenset:
    """Clients whose coordinate is at least ``theta``."""
    z = np.asarray(z, dtype=float)
    ids = np.arange(z.size) if clients is None else np.asarray(clients)
    return frozenset(int(c) for c in ids[z >= theta])


# ---------------------------------------------------------------------------
# exhaustive property check


@dataclass
class SubmodularityReport:
    ok: bool
    violation: str | None = None
    S: frozenset | None = None
    T: frozenset | None = None
    lhs: float | None = None
    rhs: float | None = None


def _mask_set(mask: int) -> frozenset:
    return frozenset(c for c in range(mask.bit_length()) if mask >> c & 1)


def verify_submodular(oracle: SubmodularOracle, max_n: int = 10, tol: float = EPS_NUM) -> SubmodularityReport:
    """Exhaustively check normalization, monotonicity and submodularity.

    Returns the first violating pair (by bitmask order) or ``ok=True``.
    """
    n = oracle.ground_size
    if max_n > VERIFY_CAP or n > max_n:
        raise CapExceeded(f"exhaustive check limited to {min(max_n, VERIFY_CAP)} clients, got {n}")
    g = oracle.table()
    if abs(g[0]) > tol:
        return SubmodularityReport(False, "normalization", frozenset(), frozenset(), float(g[0]), 0.0)
    masks = _all_masks(n)
    for S in range(1 << n):
        supersets = masks[(masks & S) == S]
        bad = np.nonzero(g[supersets] < g[S] - tol)[0]
        if bad.size:
            T = int(supersets[bad[0]])
            return SubmodularityReport(False, "monotonicity", _mask_set(S), _mask_set(T), float(g[S]), float(g[T]))
        lhs = g[S] + g
        rhs = g[S | masks] + g[S & masks]
        bad = np.nonzero(lhs < rhs - tol)[0]
        if bad.size:
            T = int(bad[0])
            return SubmodularityReport(False, "submodularity", _mask_set(S), _mask_set(T), float(lhs[T]), float(rhs[T]))
    return SubmodularityReport(True)
