"""Data model, instance parsing and the least-squares engine.

Every solver in this package prices candidate clusters through the same
primitive: stack the observations of a set of entities and fit an
ordinary-least-squares regression.  The cost of a cluster is the residual
sum of squares of that fit.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class ContractError(ValueError):
    """A caller violated an operation precondition."""


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InfeasibilityError(ValueError):
    """The instance (or a subproblem) admits no feasible partition."""


class DegeneracyError(ValueError):
    """Not enough observations per cluster to pin down a regression."""


class GuardError(RuntimeError):
    """An enumeration guard was exceeded."""


@dataclass(frozen=True)
class Entity:
    """One entity: a response vector and a matching predictor matrix.

    ``weeks`` carries the raw week labels from the instance file; it is
    only consulted by the two-stage heuristic.
    """

    id: str
    y: np.ndarray          # shape (L,)
    X: np.ndarray          # shape (L, J)
    weeks: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ContractError(f"entity {self.id}: X is {X.shape}, y is {y.shape}")
        if y.shape[0] < 1:
            raise ContractError(f"entity {self.id}: needs at least one observation")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ContractError(f"entity {self.id}: non-finite observation")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        if self.weeks is not None:
            w = np.asarray(self.weeks, dtype=int)
            w.setflags(write=False)
            object.__setattr__(self, "weeks", w)

    @property
    def L(self) -> int:
        return self.y.shape[0]


@dataclass
class Dataset:
    """An instance: entities plus the clustering parameters K and n."""

    entities: list[Entity]
    J: int
    n: int
    K: int

    _stats: tuple | None = field(default=None, repr=False, compare=False)
    _cost_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.K < 1 or self.n < 1:
            raise ContractError("K and n must be positive")
        for e in self.entities:
            if e.X.shape[1] != self.J:
                raise ContractError(f"entity {e.id} has {e.X.shape[1]} predictors, expected {self.J}")
        if self.I < self.K * self.n:
            raise InfeasibilityError(
                f"I={self.I} < K*n={self.K * self.n}: no feasible partition exists")
        min_L = min(e.L for e in self.entities)
        if min_L * self.n <= self.J + 1:
            raise DegeneracyError(
                f"min L={min_L} with n={self.n} gives only {min_L * self.n} observations "
                f"per cluster; more than J+1={self.J + 1} are required")

    @property
    def I(self) -> int:
        return len(self.entities)

    def stats(self):
        """Per-entity sufficient statistics (Gram, X'y, y'y).

        The SSE of any cluster follows from the entity-wise sums, which is
        what the hot loops operate on.  Arrays are shaped (I, J, J),
        (I, J) and (I,).
        """
        if self._stats is None:
            I, J = self.I, self.J
            G = np.empty((I, J, J))
            b = np.empty((I, J))
            yy = np.empty(I)
            for i, e in enumerate(self.entities):
                G[i] = e.X.T @ e.X
                b[i] = e.X.T @ e.y
                yy[i] = e.y @ e.y
            G.setflags(write=False)
            b.setflags(write=False)
            yy.setflags(write=False)
            self._stats = (G, b, yy)
        return self._stats


@dataclass
class FitResult:
    beta: np.ndarray
    sse: float
    rank: int


@dataclass
class Partition:
    """Assignment of each entity index to a cluster index in [0, K)."""

    assignment: np.ndarray
    K: int

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=int)

    @property
    def I(self) -> int:
        return self.assignment.shape[0]

    def clusters(self) -> list[list[int]]:
        out = [[] for _ in range(self.K)]
        for i, k in enumerate(self.assignment):
            out[k].append(i)
        return out

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)

    def canonical(self) -> tuple:
        """Label-free representation: clusters sorted by smallest member."""
        blocks = [tuple(c) for c in self.clusters() if c]
        return tuple(sorted(blocks))


# OLS rank threshold, relative to the largest singular value.
RANK_RCOND = 1e-10


def fit_ols(X, y) -> FitResult:
    """Least-squares fit; minimum-norm solution when rank deficient."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ContractError(f"dimension mismatch: X {X.shape}, y {y.shape}")
    beta, _, rank, _ = scipy.linalg.lstsq(X, y, cond=RANK_RCOND, lapack_driver="gelsd")
    r = y - X @ beta
    return FitResult(beta=beta, sse=float(r @ r), rank=int(rank))


def cluster_cost(dataset: Dataset, S) -> FitResult:
    """SSE of the regression over the union of entities in S (cached)."""
    members = frozenset(int(i) for i in S)
    if not members:
        raise ContractError("cluster must be nonempty")
    cached = dataset._cost_cache.get(members)
    if cached is not None:
        return cached
    idx = sorted(members)
    X = np.vstack([dataset.entities[i].X for i in idx])
    y = np.concatenate([dataset.entities[i].y for i in idx])
    result = fit_ols(X, y)
    dataset._cost_cache[members] = result
    return result


def validate_partition(p: Partition, dataset: Dataset) -> list[str]:
    """Violations of assignment completeness and the min-size constraint."""
    violations = []
    if p.I != dataset.I:
        violations.append(
            f"assignment covers {p.I} entities, instance has {dataset.I}")
        return violations
    if np.any(p.assignment < 0) or np.any(p.assignment >= p.K):
        bad = int(np.argmax((p.assignment < 0) | (p.assignment >= p.K)))
        violations.append(f"entity {bad} assigned to cluster {p.assignment[bad]} outside [0,{p.K})")
    for k, size in enumerate(p.sizes()):
        if size < dataset.n:
            violations.append(f"cluster {k} has {size} entities, minimum is {dataset.n}")
    return violations


def partition_sse(dataset: Dataset, p: Partition) -> float:
    violations = validate_partition(p, dataset)
    if violations:
        raise ContractError("invalid partition: " + "; ".join(violations))
    return sum(cluster_cost(dataset, c).sse for c in p.clusters() if c)


def parse_dataset(source, n: int, K: int) -> Dataset:
    """Read the instance CSV (header entity_id,week,y,x1,...,xJ).

    Rows of one entity must be contiguous; entities keep their order of
    first appearance.
    """
    if isinstance(source, (str, os.PathLike)):
        if isinstance(source, os.PathLike) or "\n" not in source:
            with open(source, encoding="utf-8", newline="") as fh:
                return parse_dataset(fh, n=n, K=K)
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input") from None
    header = [h.strip() for h in header]
    if len(header) < 3 or header[0] != "entity_id" or header[1] != "week" or header[2] != "y":
        raise ParseError(f"unexpected header {header!r}", line=1)
    J = len(header) - 3
    expected_x = [f"x{j + 1}" for j in range(J)]
    if header[3:] != expected_x:
        raise ParseError(f"predictor columns {header[3:]!r}, expected {expected_x!r}", line=1)
    if J < 1:
        raise ParseError("no predictor columns", line=1)

    rows_by_entity: dict[str, list] = {}
    order: list[str] = []
    current = None
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        eid = row[0]
        try:
            week = int(row[1])
            values = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if eid not in rows_by_entity:
            rows_by_entity[eid] = []
            order.append(eid)
        elif eid != current:
            raise ParseError(f"rows of entity {eid!r} are not contiguous", line=lineno)
        current = eid
        rows_by_entity[eid].append((week, values[0], values[1:]))

    if not order:
        raise ParseError("no observation rows")
    entities = []
    for eid in order:
        rows = rows_by_entity[eid]
        entities.append(Entity(
            id=eid,
            y=np.array([r[1] for r in rows]),
            X=np.array([r[2] for r in rows]),
            weeks=np.array([r[0] for r in rows]),
        ))
    return Dataset(entities=entities, J=J, n=n, K=K)
