"""Heuristic solvers: GA-Lloyd, Spaeth exchange, and the grouped CG front-end.

All randomness flows through an explicit numpy Generator so a run is
reproducible from (instance, params, seed).
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from gclr import kernels
from gclr.core import (ContractError, Dataset, Entity, InfeasibilityError,
                       Partition, cluster_cost, partition_sse)

FITNESS_FLOOR = 1e-12   # a zero-SSE partition still needs a finite fitness


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Random partitions and min-size repair (shared by every algorithm).

def _unit_sse_under_beta(stats, beta, u):
    G, b, yy = stats
    return max(float(yy[u] - 2.0 * beta @ b[u] + beta @ G[u] @ beta), 0.0)


def _cluster_beta(stats, members):
    G, b, yy = stats
    idx = list(members)
    _, beta = kernels.sse_from_stats(G[idx].sum(axis=0), b[idx].sum(axis=0), yy[idx].sum())
    return beta


def repair_unit_labels(labels, K, n, weights, stats=None, max_passes=None):
    """Raise every cluster to total weight >= n, in place.

    Smallest cluster first; donors ordered by increasing fit error against
    their own cluster's coefficients (by index when no stats are given);
    moves that would push the donor below n are skipped.
    """
    labels = np.asarray(labels)
    U = labels.shape[0]
    weights = np.asarray(weights, dtype=int)
    if max_passes is None:
        max_passes = 4 * K + U
    for _ in range(max_passes):
        wsum = np.zeros(K, dtype=int)
        np.add.at(wsum, labels, weights)
        deficient = [k for k in range(K) if wsum[k] < n]
        if not deficient:
            return labels
        k = min(deficient, key=lambda t: (wsum[t], t))
        outside = [u for u in range(U) if labels[u] != k]
        if stats is not None:
            betas = {}
            for kk in set(labels[u] for u in outside):
                members = np.flatnonzero(labels == kk)
                betas[kk] = _cluster_beta(stats, members)
            outside.sort(key=lambda u: (_unit_sse_under_beta(stats, betas[labels[u]], u), u))
        for u in outside:
            if wsum[k] >= n:
                break
            donor = labels[u]
            if wsum[donor] - weights[u] < n:
                continue
            labels[u] = k
            wsum[donor] -= weights[u]
            wsum[k] += weights[u]
    wsum = np.zeros(K, dtype=int)
    np.add.at(wsum, labels, weights)
    if np.all(wsum >= n):
        return labels
    raise InfeasibilityError("min-size repair did not converge")


def random_unit_partition(U, K, n, rng, weights=None, stats=None, retries=20):
    """Uniform random labels over K clusters, repaired to min weight n."""
    rng = _rng(rng)
    if weights is None:
        weights = np.ones(U, dtype=int)
    for _ in range(retries):
        labels = rng.integers(0, K, size=U)
        try:
            return repair_unit_labels(labels, K, n, weights, stats=stats)
        except InfeasibilityError:
            continue
    raise InfeasibilityError(f"could not draw a feasible {K}-partition with min weight {n}")


def random_partition(I: int, K: int, n: int, seed, dataset: Dataset | None = None) -> Partition:
    """Uniform random assignment of each entity, repaired to min size n."""
    if I < K * n:
        raise ContractError(f"I={I} < K*n={K * n}")
    stats = dataset.stats() if dataset is not None else None
    labels = random_unit_partition(I, K, n, _rng(seed), stats=stats)
    return Partition(assignment=labels, K=K)


def repair_min_size(dataset: Dataset, p: Partition, n: int) -> Partition:
    """Move lowest-error outside entities into undersized clusters."""
    labels = repair_unit_labels(p.assignment.copy(), p.K, n,
                                np.ones(dataset.I, dtype=int), stats=dataset.stats())
    return Partition(assignment=labels, K=p.K)


# ---------------------------------------------------------------------------
# GA-Lloyd.

@dataclass
class Chromosome:
    genes: np.ndarray     # K*J regression coefficients, cluster blocks
    fitness: float = 0.0


@dataclass
class GaParams:
    H: int = 10
    p: float = 0.01
    max_stall: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.H < 2:
            raise ContractError("population size must be at least 2")
        if not 0.0 <= self.p <= 1.0:
            raise ContractError("mutation probability must be in [0,1]")


def _entity_cluster_sse(dataset: Dataset, betas: np.ndarray) -> np.ndarray:
    """SSE of each entity under each candidate coefficient block, (I, K)."""
    G, b, yy = dataset.stats()
    quad = np.einsum("kj,ijl,kl->ik", betas, G, betas)
    cross = b @ betas.T
    return np.maximum(yy[:, None] - 2.0 * cross + quad, 0.0)


def decode_chromosome(dataset: Dataset, genes) -> Partition:
    """Nearest-regression assignment (ties to the lowest cluster), repaired."""
    genes = np.asarray(genes, dtype=float)
    K = dataset.K
    if genes.shape[0] != K * dataset.J:
        raise ContractError(f"expected {K * dataset.J} genes, got {genes.shape[0]}")
    betas = genes.reshape(K, dataset.J)
    labels = np.argmin(_entity_cluster_sse(dataset, betas), axis=1)
    return repair_min_size(dataset, Partition(assignment=labels, K=K), dataset.n)


def encode_partition(dataset: Dataset, p: Partition) -> np.ndarray:
    """Concatenated per-cluster OLS coefficients (Gram solve, min-norm)."""
    stats = dataset.stats()
    genes = np.zeros(p.K * dataset.J)
    for k, members in enumerate(p.clusters()):
        if members:
            genes[k * dataset.J:(k + 1) * dataset.J] = _cluster_beta(stats, members)
    return genes


def _partition_sse_fast(dataset: Dataset, p: Partition) -> float:
    G, b, yy = dataset.stats()
    total = 0.0
    for members in p.clusters():
        if members:
            sse, _ = kernels.sse_from_stats(
                G[members].sum(axis=0), b[members].sum(axis=0), yy[members].sum())
            total += sse
    return total


def lloyd_refine(dataset: Dataset, genes, max_rounds: int = 100):
    """Iterate assign / refit until the partition stabilizes.

    Returns (partition, refitted genes, fast SSE of the partition).
    """
    prev = None
    part = None
    for _ in range(max_rounds):
        part = decode_chromosome(dataset, genes)
        key = part.canonical()
        if key == prev:
            break
        prev = key
        genes = encode_partition(dataset, part)
    return part, genes, _partition_sse_fast(dataset, part)


def roulette_select(population, rng) -> tuple[int, int]:
    """Two independent fitness-proportional draws."""
    fitness = np.array([c.fitness for c in population], dtype=float)
    if not np.all(np.isfinite(fitness)) or np.any(fitness <= 0):
        raise ContractError("roulette selection requires positive finite fitness")
    probs = fitness / fitness.sum()
    rng = _rng(rng)
    return int(rng.choice(len(population), p=probs)), int(rng.choice(len(population), p=probs))


def crossover(h1: Chromosome, h2: Chromosome, rng) -> tuple[Chromosome, Chromosome]:
    """Single-point crossover; the gene suffixes after the cut are swapped."""
    if h1.genes.shape != h2.genes.shape:
        raise ContractError("parents must have equal gene length")
    rng = _rng(rng)
    cut = int(rng.integers(1, h1.genes.shape[0]))
    a = np.concatenate([h1.genes[:cut], h2.genes[cut:]])
    b = np.concatenate([h2.genes[:cut], h1.genes[cut:]])
    return Chromosome(genes=a), Chromosome(genes=b)


def mutate(h: Chromosome, p: float, rng) -> Chromosome:
    """With probability p, kick one uniformly chosen gene."""
    if not 0.0 <= p <= 1.0:
        raise ContractError("mutation probability must be in [0,1]")
    rng = _rng(rng)
    if rng.random() >= p:
        return h
    genes = h.genes.copy()
    pos = int(rng.integers(genes.shape[0]))
    delta = rng.random()
    sign = 1.0 if rng.random() < 0.5 else -1.0
    v = genes[pos]
    genes[pos] = v + sign * 2.0 * delta * v if v != 0.0 else sign * 2.0 * delta
    return Chromosome(genes=genes)


def run_ga_lloyd(dataset: Dataset, params: GaParams | None = None,
                 literal_replacement: bool = False, deadline=None,
                 trace=None) -> tuple[Partition, float]:
    """Genetic search over coefficient vectors with Lloyd-style decoding.

    ``literal_replacement`` switches to accepting a child only when it is
    worse than the entire population, which can never improve the
    incumbent; it exists for comparison and defaults to the improving rule.
    """
    params = params or GaParams()
    rng = _rng(params.seed)
    t0 = time.perf_counter()

    population = []
    best_part, best_sse = None, math.inf
    for _ in range(params.H):
        part = random_partition(dataset.I, dataset.K, dataset.n, rng, dataset=dataset)
        part, genes, sse = lloyd_refine(dataset, encode_partition(dataset, part))
        population.append(Chromosome(genes=genes, fitness=1.0 / max(sse, FITNESS_FLOOR)))
        if sse < best_sse:
            best_part, best_sse = part, sse

    stall = 0
    while stall < params.max_stall:
        if deadline is not None and time.perf_counter() > deadline:
            break
        i1, i2 = roulette_select(population, rng)
        child_a, child_b = crossover(population[i1], population[i2], rng)
        improved = False
        children = []
        for child in (child_a, child_b):
            child = mutate(child, params.p, rng)
            part, genes, sse = lloyd_refine(dataset, child.genes)
            child.genes = genes
            child.fitness = 1.0 / max(sse, FITNESS_FLOOR)
            children.append(child)
            if sse < best_sse * (1.0 - 1e-12) - 1e-15:
                best_part, best_sse = part, sse
                improved = True
        worst = min(range(params.H), key=lambda h: population[h].fitness)
        better_child = max(children, key=lambda c: c.fitness)
        if literal_replacement:
            accept = max(c.fitness for c in children) < population[worst].fitness
        else:
            accept = better_child.fitness > population[worst].fitness
        if accept:
            population[worst] = better_child
        stall = 0 if improved else stall + 1
        if trace is not None:
            trace(time.perf_counter() - t0, best_sse)

    return best_part, partition_sse(dataset, best_part)


# ---------------------------------------------------------------------------
# Spaeth exchange.

def run_spaeth(dataset: Dataset, seed=0, deadline=None, trace=None) -> tuple[Partition, float]:
    """One-entity exchange local search with min-size guard."""
    I, K, n = dataset.I, dataset.K, dataset.n
    G, b, yy = dataset.stats()
    labels = random_unit_partition(I, K, n, _rng(seed), stats=dataset.stats())
    clusters = [set(np.flatnonzero(labels == k).tolist()) for k in range(K)]
    cache: dict = {}
    t0 = time.perf_counter()

    def E(members) -> float:
        key = frozenset(members)
        if not key:
            return 0.0
        val = cache.get(key)
        if val is None:
            idx = sorted(key)
            val, _ = kernels.sse_from_stats(
                G[idx].sum(axis=0), b[idx].sum(axis=0), yy[idx].sum())
            cache[key] = val
        return val

    consecutive = 0
    i = 0
    while consecutive < I:
        if deadline is not None and time.perf_counter() > deadline:
            break
        kp = int(labels[i])
        moved = False
        if len(clusters[kp]) > n:
            removed = E(clusters[kp] - {i})
            current = E(clusters[kp])
            best_delta, best_r = math.inf, -1
            for k in range(K):
                if k == kp:
                    continue
                delta = (E(clusters[k] | {i}) + removed) - (E(clusters[k]) + current)
                if delta < best_delta:
                    best_delta, best_r = delta, k
            if best_delta < -1e-10 * (1.0 + current):
                clusters[kp].discard(i)
                clusters[best_r].add(i)
                labels[i] = best_r
                moved = True
                if trace is not None:
                    trace(time.perf_counter() - t0, sum(E(c) for c in clusters))
        consecutive = 0 if moved else consecutive + 1
        i = (i + 1) % I
    part = Partition(assignment=labels, K=K)
    return part, partition_sse(dataset, part)


# ---------------------------------------------------------------------------
# Grouping phase and the CG Heuristic.

@dataclass
class GroupSet:
    groups: list[list[int]]
    R: int


def group_phase(dataset: Dataset, R: int, seed=0, max_rounds: int = 500) -> GroupSet:
    """Lloyd-style regrouping into (at most) R low-cost groups.

    No minimum-size constraint applies here; empty groups are dropped and
    R adjusted.
    """
    if R <= dataset.K:
        raise ContractError(f"R={R} must exceed K={dataset.K}")
    rng = _rng(seed)
    stats = dataset.stats()
    labels = rng.integers(0, R, size=dataset.I)
    labels = _relabel_compact(labels)
    for _ in range(max_rounds):
        r_eff = labels.max() + 1
        betas = np.vstack([_cluster_beta(stats, np.flatnonzero(labels == r))
                           for r in range(r_eff)])
        sse = _entity_cluster_sse(dataset, betas)
        new = labels.copy()
        for i in range(dataset.I):
            r_star = int(np.argmin(sse[i]))
            if sse[i, r_star] < sse[i, labels[i]]:
                new[i] = r_star
        if np.array_equal(new, labels):
            break
        labels = _relabel_compact(new)
    r_eff = labels.max() + 1
    groups = [np.flatnonzero(labels == r).tolist() for r in range(r_eff)]
    return GroupSet(groups=groups, R=r_eff)


def _relabel_compact(labels):
    used = np.unique(labels)
    remap = {int(r): k for k, r in enumerate(used)}
    return np.array([remap[int(r)] for r in labels], dtype=int)


def run_cg_heuristic(dataset: Dataset, R: int = 8, seed=0, deadline=None,
                     trace=None) -> tuple[Partition, float]:
    """Group entities first, then combine groups optimally via CG."""
    from gclr import exact  # deferred: exact imports this module

    gs = group_phase(dataset, R, seed=seed)
    if gs.R < dataset.K:
        raise InfeasibilityError(
            f"grouping collapsed to {gs.R} groups, fewer than K={dataset.K}")
    if gs.R == dataset.K:
        labels = np.zeros(dataset.I, dtype=int)
        for k, g in enumerate(gs.groups):
            labels[g] = k
        part = repair_min_size(dataset, Partition(assignment=labels, K=dataset.K), dataset.n)
        return part, partition_sse(dataset, part)

    G, b, yy = dataset.stats()
    UG = np.stack([G[g].sum(axis=0) for g in gs.groups])
    Ub = np.stack([b[g].sum(axis=0) for g in gs.groups])
    Uyy = np.array([yy[g].sum() for g in gs.groups])
    weights = np.array([len(g) for g in gs.groups], dtype=np.int64)

    def group_cost(S):
        members = [i for r in S for i in gs.groups[r]]
        return cluster_cost(dataset, members).sse

    problem = exact.UnitProblem(G=UG, b=Ub, yy=Uyy, weights=weights,
                                K=dataset.K, n=dataset.n, cost_fn=group_cost)
    result = exact.run_cg_units(problem, seed=seed, stabilize=True,
                                deadline=deadline, trace=trace)
    labels = np.zeros(dataset.I, dtype=int)
    for r, k in enumerate(result.partition.assignment):
        labels[gs.groups[r]] = k
    part = Partition(assignment=labels, K=dataset.K)
    return part, partition_sse(dataset, part)


# ---------------------------------------------------------------------------
# Two-stage hierarchical baseline.

WEEKS_PER_YEAR = 52


def seasonal_residual_vector(entity: Entity, discount_col: int = 0) -> np.ndarray:
    """Week-of-year profile of residuals from a discount-only regression.

    Fits y = beta * discount (single predictor, no intercept), averages the
    residuals by week-of-year 1..52 across years; weeks never observed carry
    the entity's overall mean residual.
    """
    if entity.L < 2:
        raise ContractError(f"entity {entity.id}: need at least 2 observations")
    if entity.weeks is None:
        raise ContractError(f"entity {entity.id}: week labels are required")
    d = entity.X[:, discount_col]
    beta, *_ = np.linalg.lstsq(d[:, None], entity.y, rcond=None)
    r = entity.y - d * beta[0]
    woy = ((np.asarray(entity.weeks, dtype=int) - 1) % WEEKS_PER_YEAR) + 1
    out = np.full(WEEKS_PER_YEAR, r.mean())
    for w in range(1, WEEKS_PER_YEAR + 1):
        mask = woy == w
        if mask.any():
            out[w - 1] = r[mask].mean()
    return out


def correlation_distance(u, v) -> float:
    """1 - Pearson correlation; ranges over [0, 2]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    du, dv = u - u.mean(), v - v.mean()
    su, sv = np.linalg.norm(du), np.linalg.norm(dv)
    if su == 0.0 or sv == 0.0:
        raise ContractError("correlation distance undefined for a constant vector")
    return float(1.0 - (du @ dv) / (su * sv))


def complete_linkage_cluster(distances, K: int) -> Partition:
    """Agglomerative clustering with max-distance linkage down to K clusters."""
    D = np.asarray(distances, dtype=float)
    m = D.shape[0]
    if D.shape != (m, m) or not np.allclose(D, D.T) or np.any(np.diag(D) != 0.0):
        raise ContractError("distance matrix must be symmetric with zero diagonal")
    if K > m:
        raise ContractError(f"K={K} exceeds {m} items")
    clusters = [[i] for i in range(m)]
    D = D.copy()
    while len(clusters) > K:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                key = (D[a, b], a, b)
                if best is None or key < best:
                    best = key
        _, a, b = best
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
        # complete linkage: new inter-cluster distance is the max of the two
        row = np.maximum(D[a], D[b])
        D[a], D[:, a] = row, row
        D[a, a] = 0.0
        D = np.delete(np.delete(D, b, axis=0), b, axis=1)
    labels = np.zeros(m, dtype=int)
    for k, members in enumerate(clusters):
        labels[members] = k
    return Partition(assignment=labels, K=K)


def run_two_stage(dataset: Dataset, discount_col: int = 0) -> tuple[Partition, float]:
    """Cluster on seasonal-residual similarity, then regress per cluster."""
    vectors = {}
    excluded = []
    for i, e in enumerate(dataset.entities):
        vec = seasonal_residual_vector(e, discount_col=discount_col)
        if np.linalg.norm(vec - vec.mean()) == 0.0:
            warnings.warn(f"entity {e.id}: constant residual profile, "
                          "excluded from the similarity stage")
            excluded.append(i)
        else:
            vectors[i] = vec
    valid = sorted(vectors)
    if len(valid) < dataset.K:
        raise InfeasibilityError("too few entities with usable seasonal profiles")
    D = np.zeros((len(valid), len(valid)))
    for a in range(len(valid)):
        for b in range(a + 1, len(valid)):
            D[a, b] = D[b, a] = correlation_distance(vectors[valid[a]], vectors[valid[b]])
    sub = complete_linkage_cluster(D, dataset.K)
    labels = np.zeros(dataset.I, dtype=int)
    for pos, i in enumerate(valid):
        labels[i] = sub.assignment[pos]
    if excluded:
        stats = dataset.stats()
        betas = np.vstack([_cluster_beta(stats, [valid[p] for p in np.flatnonzero(sub.assignment == k)])
                           for k in range(dataset.K)])
        sse = _entity_cluster_sse(dataset, betas)
        for i in excluded:
            labels[i] = int(np.argmin(sse[i]))
    part = repair_min_size(dataset, Partition(assignment=labels, K=dataset.K), dataset.n)
    return part, partition_sse(dataset, part)
