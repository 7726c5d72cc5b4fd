"""Exact method: stabilized column generation over the set-partitioning LP.

The restricted master is a small dense LP solved with HiGHS through
scipy.  Pricing is an exact combinatorial branch-and-bound over entity
subsets (see gclr.kernels).  Everything is written against generic
"units" so that the grouped variant (units = groups of entities, with
weights) reuses the same loop.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from gclr import heuristics, kernels
from gclr.core import (ContractError, Dataset, GuardError, InfeasibilityError,
                       Partition, cluster_cost, partition_sse)

# Stabilization defaults: recenter penalties at zero, one unit of slack
# per row, generous iteration cap.
XI_INITIAL = 1.0
XI_SHRINK = 10.0
XI_SNAP = 1e-6
K_MAX_DEFAULT = 5000

# Reduced-cost tolerance, scaled by the objective magnitude of the
# instance at hand (absolute 1e-9 is meaningless on sales-scale SSEs).
RC_TOL = 1e-9
Q_TOL = 1e-9
Z_INT_TOL = 1e-6


@dataclass(frozen=True)
class Column:
    members: frozenset
    cost: float

    def covers(self, i: int) -> bool:
        return i in self.members


@dataclass
class StabilizationState:
    delta: np.ndarray
    xi: np.ndarray
    iteration: int = 0
    k_max: int = K_MAX_DEFAULT

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        if np.any(self.xi < 0):
            raise ContractError("xi must be nonnegative")

    @classmethod
    def initial(cls, I: int, stabilize: bool = True, k_max: int = K_MAX_DEFAULT):
        xi = np.full(I, XI_INITIAL if stabilize else 0.0)
        return cls(delta=np.zeros(I), xi=xi, iteration=0, k_max=k_max)


@dataclass
class MasterSolution:
    z: dict
    q_minus: np.ndarray
    q_plus: np.ndarray
    pi: np.ndarray
    upsilon: float
    objective: float

    def perturbation_active(self) -> bool:
        return bool(max(self.q_minus.max(initial=0.0), self.q_plus.max(initial=0.0)) > Q_TOL)


@dataclass
class PricingResult:
    members: frozenset
    reduced_cost: float
    beta: np.ndarray
    nodes_explored: int


@dataclass
class CgResult:
    partition: Partition
    objective: float
    lp_objective: float
    iterations: int
    integral: bool
    wall_time: float
    converged: bool = True
    pool_size: int = 0
    pi: np.ndarray | None = field(default=None, repr=False)
    upsilon: float = 0.0

    def to_dict(self, entity_ids=None):
        ids = entity_ids or [str(i) for i in range(self.partition.I)]
        return {
            "objective": self.objective,
            "lp_objective": self.lp_objective,
            "iterations": self.iterations,
            "integral": self.integral,
            "wall_time_ms": self.wall_time * 1000.0,
            "partition": {ids[i]: int(k) for i, k in enumerate(self.partition.assignment)},
            "pool_size": self.pool_size,
        }


def solve_restricted_master(columns, K: int, stab: StabilizationState) -> MasterSolution:
    """Optimal basic solution of the stabilized restricted master LP.

    Variables are the pool z_S in [0,1] plus the perturbations q-/q+ in
    [0, xi].  Duals of the equality rows come back as (upsilon, pi).
    """
    I = stab.delta.shape[0]
    C = len(columns)
    if C == 0:
        raise InfeasibilityError("empty column pool")
    nvar = C + 2 * I
    c = np.zeros(nvar)
    c[:C] = [col.cost for col in columns]
    c[C:C + I] = -stab.delta
    c[C + I:] = stab.delta

    A = np.zeros((I + 1, nvar))
    A[0, :C] = 1.0
    for j, col in enumerate(columns):
        for i in col.members:
            A[1 + i, j] = 1.0
    A[1:, C:C + I] = -np.eye(I)
    A[1:, C + I:] = np.eye(I)
    rhs = np.concatenate([[float(K)], np.ones(I)])

    # z <= 1 is implied by the cover rows; leaving it out keeps pool columns
    # from sitting at a bound with spuriously negative reduced cost
    bounds = [(0.0, None)] * C
    bounds += [(0.0, float(x)) for x in stab.xi]
    bounds += [(0.0, float(x)) for x in stab.xi]

    res = linprog(c, A_eq=A, b_eq=rhs, bounds=bounds, method="highs")
    if res.status == 2:
        raise InfeasibilityError("restricted master infeasible: " + res.message)
    if res.status != 0:
        raise RuntimeError(f"master LP failed (status {res.status}): {res.message}")

    x = res.x
    duals = res.eqlin.marginals
    return MasterSolution(
        z={columns[j]: float(x[j]) for j in range(C)},
        q_minus=x[C:C + I].copy(),
        q_plus=x[C + I:].copy(),
        pi=np.asarray(duals[1:], dtype=float).copy(),
        upsilon=float(duals[0]),
        objective=float(res.fun),
    )


def update_stabilization(stab: StabilizationState, pi) -> StabilizationState:
    """Recenter the penalty rates at pi and shrink the perturbation caps."""
    xi = stab.xi / XI_SHRINK
    xi[xi < XI_SNAP] = 0.0
    return StabilizationState(delta=np.asarray(pi, dtype=float).copy(), xi=xi,
                              iteration=stab.iteration, k_max=stab.k_max)


# ---------------------------------------------------------------------------
# Unit-level problem: entities (weight 1) or groups of entities.

@dataclass
class UnitProblem:
    G: np.ndarray        # (U, J, J)
    b: np.ndarray        # (U, J)
    yy: np.ndarray       # (U,)
    weights: np.ndarray  # (U,) int
    K: int
    n: int
    cost_fn: object      # frozenset[int] -> float, the canonical cluster cost

    @property
    def U(self) -> int:
        return self.yy.shape[0]

    @classmethod
    def from_dataset(cls, dataset: Dataset):
        G, b, yy = dataset.stats()
        return cls(G=G, b=b, yy=yy, weights=np.ones(dataset.I, dtype=np.int64),
                   K=dataset.K, n=dataset.n,
                   cost_fn=lambda S: cluster_cost(dataset, S).sse)

    def fast_sse(self, members) -> float:
        idx = list(members)
        sse, _ = kernels.sse_from_stats(
            self.G[idx].sum(axis=0), self.b[idx].sum(axis=0), self.yy[idx].sum())
        return sse


def _price_units(problem: UnitProblem, pi, upsilon, pool=None):
    """Exact pricing: best subset, canonical reduced cost, node count."""
    pi = np.asarray(pi, dtype=float)
    warm_value = np.inf
    warm_members = None
    if pool:
        vals = [(problem.fast_sse(col.members) - pi[list(col.members)].sum(), col)
                for col in pool]
        warm_value, best_col = min(vals, key=lambda t: t[0])
        warm_members = sorted(best_col.members)
        # best single-unit extension of the warm column
        for u in range(problem.U):
            if u not in best_col.members:
                ext = sorted(best_col.members | {u})
                v = problem.fast_sse(ext) - pi[ext].sum()
                if v < warm_value:
                    warm_value, warm_members = v, ext
    members, value, nodes = kernels.pricing_bnb(
        problem.G, problem.b, problem.yy, problem.weights, pi, problem.n,
        best_value=warm_value, best_members=warm_members)
    S = frozenset(members)
    cost = problem.cost_fn(S)
    rc = cost - float(upsilon) - pi[list(S)].sum()
    return PricingResult(members=S, reduced_cost=rc, beta=np.empty(0),
                         nodes_explored=nodes), cost


def solve_pricing_bnb(dataset: Dataset, pi, upsilon, n: int) -> PricingResult:
    """Minimize c_S - sum(pi_i, i in S) over |S| >= n, exactly."""
    problem = UnitProblem.from_dataset(dataset)
    problem.n = n
    result, _ = _price_units(problem, pi, upsilon)
    result.beta = cluster_cost(dataset, result.members).beta
    return result


ENUM_GUARD = 20


def pricing_enumerate(dataset: Dataset, pi, upsilon, n: int,
                      guard: int = ENUM_GUARD) -> PricingResult:
    """Brute-force oracle for the pricing problem (2^I subsets)."""
    I = dataset.I
    if I > guard:
        raise GuardError(f"enumeration refused for I={I} > guard {guard}")
    pi = np.asarray(pi, dtype=float)
    best_value = np.inf
    best = None
    for size in range(n, I + 1):
        for combo in itertools.combinations(range(I), size):
            value = cluster_cost(dataset, combo).sse - pi[list(combo)].sum()
            if value < best_value - RC_TOL or (
                    value <= best_value + RC_TOL and best is not None and list(combo) < best):
                best_value = min(best_value, value)
                best = list(combo)
    S = frozenset(best)
    fit = cluster_cost(dataset, S)
    return PricingResult(members=S, reduced_cost=fit.sse - float(upsilon) - pi[best].sum(),
                         beta=fit.beta, nodes_explored=0)


# ---------------------------------------------------------------------------
# Column-generation loop.

def _initial_columns(problem: UnitProblem, rng) -> list[Column]:
    """K random unit clusters, repaired to the minimum weight n."""
    labels = heuristics.random_unit_partition(
        problem.U, problem.K, problem.n, rng,
        weights=problem.weights, stats=(problem.G, problem.b, problem.yy))
    cols = []
    for k in range(problem.K):
        members = frozenset(np.flatnonzero(labels == k).tolist())
        cols.append(Column(members=members, cost=problem.cost_fn(members)))
    return cols


def run_cg_units(problem: UnitProblem, seed=0, stabilize=True, stab0=None,
                 k_max=K_MAX_DEFAULT, deadline=None, trace=None) -> CgResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    columns = _initial_columns(problem, rng)
    pool = {col.members: col for col in columns}
    if stab0 is None:
        stab = StabilizationState.initial(problem.U, stabilize=stabilize, k_max=k_max)
    else:
        stab = stab0
    rc_scale = max(1.0, sum(col.cost for col in columns))
    rc_tol = RC_TOL * rc_scale

    ms = None
    converged = False
    iterations = 0
    for k in range(stab.k_max):
        stab.iteration = k
        ms = solve_restricted_master(list(pool.values()), problem.K, stab)
        iterations = k + 1
        if trace is not None and _integral_partition(ms, problem) is not None:
            incumbent = sum(col.cost for col, z in ms.z.items() if z > 1.0 - Z_INT_TOL)
            trace(time.perf_counter() - t0, incumbent)
        pricing, cost = _price_units(problem, ms.pi, ms.upsilon, pool=pool.values())
        nonneg = pricing.reduced_cost >= -rc_tol
        if nonneg and not ms.perturbation_active():
            converged = True
            break
        in_pool = pricing.members in pool
        if not in_pool:
            pool[pricing.members] = Column(members=pricing.members, cost=cost)
        if nonneg or in_pool:
            if in_pool and not nonneg and not ms.perturbation_active():
                # the minimum-reduced-cost column is already in the pool and
                # the LP claims optimality: numerical disagreement, give up
                break
            # no addable improving column: shrink the trust region so the
            # perturbations are eventually forced to zero
            stab = update_stabilization(stab, ms.pi)
        if deadline is not None and time.perf_counter() > deadline:
            break

    columns = list(pool.values())
    assignment = _integral_partition(ms, problem)
    integral = assignment is not None
    if not integral:
        part = integerize(columns, problem.K, problem.n, U=problem.U)
    else:
        part = assignment
    objective = sum(problem.cost_fn(frozenset(c)) for c in part.clusters() if c)
    return CgResult(
        partition=part, objective=objective, lp_objective=ms.objective,
        iterations=iterations, integral=integral,
        wall_time=time.perf_counter() - t0, converged=converged,
        pool_size=len(columns), pi=ms.pi, upsilon=ms.upsilon)


def _integral_partition(ms: MasterSolution, problem: UnitProblem) -> Partition | None:
    """Partition from the master when its z vector is 0/1, else None."""
    if ms is None or ms.perturbation_active():
        return None
    chosen = []
    for col, z in ms.z.items():
        if z > 1.0 - Z_INT_TOL:
            chosen.append(col)
        elif z > Z_INT_TOL:
            return None
    if len(chosen) != problem.K:
        return None
    assignment = np.full(problem.U, -1, dtype=int)
    for k, col in enumerate(chosen):
        for u in col.members:
            if assignment[u] != -1:
                return None
            assignment[u] = k
    if np.any(assignment < 0):
        return None
    return Partition(assignment=assignment, K=problem.K)


def run_cg(dataset: Dataset, stab0: StabilizationState | None = None, seed=0,
           k_max: int = K_MAX_DEFAULT, deadline=None, trace=None) -> CgResult:
    """Stabilized column generation (the exact method)."""
    problem = UnitProblem.from_dataset(dataset)
    return run_cg_units(problem, seed=seed, stabilize=True, stab0=stab0,
                        k_max=k_max, deadline=deadline, trace=trace)


def run_cg_plain(dataset: Dataset, seed=0, k_max: int = K_MAX_DEFAULT,
                 deadline=None, trace=None) -> CgResult:
    """Unstabilized variant (xi pinned at zero), for ablation."""
    problem = UnitProblem.from_dataset(dataset)
    return run_cg_units(problem, seed=seed, stabilize=False,
                        k_max=k_max, deadline=deadline, trace=trace)


# ---------------------------------------------------------------------------
# Integral fallback and the exhaustive oracle.

def integerize(columns, K: int, n: int, U: int | None = None) -> Partition:
    """Best exact cover by K pool columns (depth-first with cost pruning)."""
    if U is None:
        U = max((max(col.members) for col in columns if col.members), default=-1) + 1
    covering = [[] for _ in range(U)]
    for col in columns:
        if len(col.members) < n:
            continue
        for i in col.members:
            covering[i].append(col)
    for i in range(U):
        if not covering[i]:
            raise InfeasibilityError(f"no pool column covers unit {i}")

    best: list = [math.inf, None]

    def rec(uncovered: frozenset, chosen: list, cost: float):
        if cost >= best[0]:
            return
        if not uncovered:
            if len(chosen) == K:
                best[0] = cost
                best[1] = list(chosen)
            return
        if len(chosen) >= K:
            return
        # branch on the uncovered unit with the fewest candidate columns
        pivot = min(uncovered, key=lambda i: len(covering[i]))
        for col in covering[pivot]:
            if col.members <= uncovered:
                chosen.append(col)
                rec(uncovered - col.members, chosen, cost + col.cost)
                chosen.pop()

    rec(frozenset(range(U)), [], 0.0)
    if best[1] is None:
        raise InfeasibilityError("column pool admits no integral cover")
    assignment = np.full(U, -1, dtype=int)
    for k, col in enumerate(best[1]):
        for i in col.members:
            assignment[i] = k
    return Partition(assignment=assignment, K=K)


BRUTE_FORCE_GUARD = 10_000_000


def feasible_partitions(I: int, K: int, n: int):
    """Yield all assignments of I entities to K unlabeled clusters, min size n.

    Canonical labeling: entity 0 opens cluster 0, and an entity may only
    open the next unused cluster index, so each set partition appears once.
    """
    assignment = np.zeros(I, dtype=int)
    sizes = [0] * K

    def rec(i: int, used: int):
        remaining = I - i
        deficit = sum(max(0, n - sizes[k]) for k in range(used)) + n * (K - used)
        if deficit > remaining:
            return
        if i == I:
            if used == K:
                yield assignment.copy()
            return
        for k in range(min(used + 1, K)):
            assignment[i] = k
            sizes[k] += 1
            yield from rec(i + 1, max(used, k + 1))
            sizes[k] -= 1

    yield from rec(0, 0)


def brute_force_optimum(dataset: Dataset) -> tuple[Partition, float]:
    """Global optimum by exhaustive enumeration of feasible partitions."""
    I, K, n = dataset.I, dataset.K, dataset.n
    estimate = K ** I / math.factorial(K)
    if estimate > BRUTE_FORCE_GUARD:
        raise GuardError(f"about {estimate:.2g} partitions exceed the "
                         f"{BRUTE_FORCE_GUARD} enumeration guard")
    best_sse = math.inf
    best = None
    for assignment in feasible_partitions(I, K, n):
        sse = 0.0
        for k in range(K):
            members = np.flatnonzero(assignment == k)
            sse += cluster_cost(dataset, members.tolist()).sse
            if sse >= best_sse:
                break
        if sse < best_sse:
            best_sse = sse
            best = assignment
    if best is None:
        raise InfeasibilityError("no feasible partition")
    return Partition(assignment=best, K=K), float(best_sse)
