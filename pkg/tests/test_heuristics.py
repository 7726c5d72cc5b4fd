import math

import numpy as np
import pytest
import scipy.cluster.hierarchy as sch
import scipy.stats

from conftest import make_dataset
from gclr import exact, heuristics
from gclr.core import (ContractError, Entity, Partition, cluster_cost,
                       partition_sse, validate_partition)
from gclr.heuristics import (Chromosome, GaParams, complete_linkage_cluster,
                             correlation_distance, crossover,
                             decode_chromosome, encode_partition, group_phase,
                             lloyd_refine, mutate, random_partition,
                             repair_min_size, roulette_select, run_cg_heuristic,
                             run_ga_lloyd, run_spaeth, run_two_stage,
                             seasonal_residual_vector)


# ---------------------------------------------------------------------------
# Random partitions and repair.

def test_random_partition_is_feasible():
    for seed in range(20):
        p = random_partition(10, 3, 2, seed)
        assert min(p.sizes()) >= 2
        assert len(p.assignment) == 10


def test_random_partition_too_small():
    with pytest.raises(ContractError):
        random_partition(3, 2, 2, 0)


def test_random_partition_frequencies_uniform():
    # with I >> K the repair step almost never fires, so per-entity cluster
    # frequencies should look uniform: 3-sigma binomial bounds
    I, K, draws = 20, 2, 10_000
    counts = np.zeros((I, K))
    rng = np.random.default_rng(123)
    for _ in range(draws):
        labels = heuristics.random_unit_partition(I, K, 1, rng)
        counts[np.arange(I), labels] += 1
    p = 1.0 / K
    sigma = math.sqrt(p * (1 - p) * draws)
    assert np.all(np.abs(counts - draws * p) <= 3.2 * sigma)


def test_repair_min_size_moves_cheapest_outsiders():
    ds = make_dataset(I=6, J=3, L=8, K=2, n=2, seed=1)
    p = Partition(assignment=np.array([0, 0, 0, 0, 0, 1]), K=2)
    fixed = repair_min_size(ds, p, 2)
    assert min(fixed.sizes()) >= 2
    assert not validate_partition(fixed, ds)
    # exactly one entity moved
    assert int(np.sum(fixed.assignment != p.assignment)) == 1


def test_repair_never_starves_donor():
    ds = make_dataset(I=6, J=3, L=8, K=3, n=2, seed=2)
    p = Partition(assignment=np.array([0, 0, 1, 1, 2, 2]), K=3)
    fixed = repair_min_size(ds, p, 2)
    np.testing.assert_array_equal(fixed.assignment, p.assignment)


# ---------------------------------------------------------------------------
# GA components.

def test_decode_ties_go_to_lowest_cluster():
    ds = make_dataset(I=4, J=3, L=8, K=2, n=1, seed=3)
    genes = np.concatenate([np.ones(3), np.ones(3)])  # identical blocks
    p = decode_chromosome(ds, genes)
    # ties resolved toward cluster 0, then min-size repair fills cluster 1
    assert np.sum(p.assignment == 0) >= np.sum(p.assignment == 1)
    assert min(p.sizes()) >= 1


def test_decode_wrong_length():
    ds = make_dataset(I=4, J=3, L=8, K=2, n=1, seed=3)
    with pytest.raises(ContractError):
        decode_chromosome(ds, np.zeros(5))


def test_lloyd_refine_reaches_fixed_point():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=2, seed=4, noise=0.5)
    p0 = random_partition(8, 2, 2, 0, dataset=ds)
    part, genes, sse = lloyd_refine(ds, encode_partition(ds, p0))
    # decoding the refit genes reproduces the same partition
    again = decode_chromosome(ds, genes)
    assert again.canonical() == part.canonical()
    assert sse == pytest.approx(partition_sse(ds, part), rel=1e-9)


def test_crossover_conserves_genes():
    rng = np.random.default_rng(5)
    a = Chromosome(genes=rng.normal(size=12))
    b = Chromosome(genes=rng.normal(size=12))
    ca, cb = crossover(a, b, rng)
    # each child is a prefix of one parent and the suffix of the other
    cut = int(np.flatnonzero(ca.genes != a.genes)[0]) if np.any(ca.genes != a.genes) else 12
    assert 1 <= cut <= 11
    np.testing.assert_array_equal(ca.genes[:cut], a.genes[:cut])
    np.testing.assert_array_equal(ca.genes[cut:], b.genes[cut:])
    np.testing.assert_array_equal(cb.genes[:cut], b.genes[:cut])
    np.testing.assert_array_equal(cb.genes[cut:], a.genes[cut:])
    np.testing.assert_array_equal(np.sort(np.concatenate([ca.genes, cb.genes])),
                                  np.sort(np.concatenate([a.genes, b.genes])))


def test_mutation_range_containment():
    rng = np.random.default_rng(6)
    base = np.array([2.0, -3.0, 0.0, 1.0])
    for _ in range(200):
        out = mutate(Chromosome(genes=base.copy()), 1.0, rng).genes
        changed = np.flatnonzero(out != base)
        assert len(changed) == 1
        j = changed[0]
        if base[j] != 0.0:
            # multiplicative kick: v ± 2*delta*v with delta in (0,1)
            assert abs(out[j] - base[j]) <= 2.0 * abs(base[j])
        else:
            assert 0.0 < abs(out[j]) <= 2.0


def test_mutation_probability_zero_is_identity():
    rng = np.random.default_rng(7)
    c = Chromosome(genes=np.arange(5.0))
    out = mutate(c, 0.0, rng)
    np.testing.assert_array_equal(out.genes, c.genes)


def test_roulette_rejects_bad_fitness():
    rng = np.random.default_rng(8)
    with pytest.raises(ContractError):
        roulette_select([Chromosome(np.zeros(1), fitness=-1.0),
                         Chromosome(np.zeros(1), fitness=2.0)], rng)
    with pytest.raises(ContractError):
        roulette_select([Chromosome(np.zeros(1), fitness=math.inf),
                         Chromosome(np.zeros(1), fitness=2.0)], rng)


def test_roulette_frequencies_chi_squared():
    rng = np.random.default_rng(9)
    fitness = np.array([1.0, 2.0, 3.0, 4.0])
    pop = [Chromosome(np.zeros(1), fitness=f) for f in fitness]
    draws = 20_000
    counts = np.zeros(4)
    for _ in range(draws // 2):
        i, j = roulette_select(pop, rng)
        counts[i] += 1
        counts[j] += 1
    expected = draws * fitness / fitness.sum()
    stat = float(np.sum((counts - expected) ** 2 / expected))
    assert stat < scipy.stats.chi2.ppf(0.99, df=3)


def test_ga_params_validation():
    with pytest.raises(ContractError):
        GaParams(H=1)
    with pytest.raises(ContractError):
        GaParams(p=1.5)


def test_ga_lloyd_finds_planted_structure():
    betas = np.array([[3.0, 0.0, -1.0], [-2.0, 4.0, 1.0]])
    labels = [0, 0, 0, 0, 1, 1, 1, 1]
    ds = make_dataset(I=8, J=3, L=10, K=2, n=2, seed=10, noise=0.05,
                      betas=betas, labels=labels)
    part, sse = run_ga_lloyd(ds, GaParams(seed=0))
    _, best = exact.brute_force_optimum(ds)
    assert sse == pytest.approx(best, rel=1e-6)
    assert part.canonical() == Partition(np.array(labels), 2).canonical()


def test_ga_lloyd_incumbent_monotone():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=2, seed=11, noise=0.5)
    seen = []
    run_ga_lloyd(ds, GaParams(seed=1), trace=lambda t, v: seen.append(v))
    assert seen == sorted(seen, reverse=True)


def test_ga_lloyd_literal_rule_never_improves_population():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=2, seed=12, noise=0.5)
    part, sse = run_ga_lloyd(ds, GaParams(seed=2), literal_replacement=True)
    assert not validate_partition(part, ds)
    # still returns the best initial-population incumbent
    assert sse > 0.0


def test_ga_lloyd_deterministic():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=2, seed=13, noise=0.5)
    p1, s1 = run_ga_lloyd(ds, GaParams(seed=5))
    p2, s2 = run_ga_lloyd(ds, GaParams(seed=5))
    assert s1 == s2
    np.testing.assert_array_equal(p1.assignment, p2.assignment)


# ---------------------------------------------------------------------------
# Spaeth.

def test_spaeth_descent_and_local_optimality():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=2, seed=14, noise=0.5)
    seen = []
    part, sse = run_spaeth(ds, seed=0, trace=lambda t, v: seen.append(v))
    assert all(b < a for a, b in zip(seen, seen[1:]))  # strict descent
    assert not validate_partition(part, ds)
    # 1-move local optimality
    for i in range(ds.I):
        k0 = part.assignment[i]
        if np.sum(part.assignment == k0) <= ds.n:
            continue
        for k in range(ds.K):
            if k == k0:
                continue
            alt = part.assignment.copy()
            alt[i] = k
            alt_sse = partition_sse(ds, Partition(alt, ds.K))
            assert alt_sse >= sse - 1e-9 * max(1.0, sse)


def test_spaeth_vs_brute_force_equality_rate():
    hits = 0
    ds = make_dataset(I=6, J=3, L=8, K=2, n=1, seed=15, noise=0.5)
    _, best = exact.brute_force_optimum(ds)
    for seed in range(20):
        _, sse = run_spaeth(ds, seed=seed)
        assert sse >= best - 1e-9 * best
        hits += sse == pytest.approx(best, rel=1e-9)
    assert hits >= 1  # local search should land on the optimum sometimes


# ---------------------------------------------------------------------------
# Grouping and the CG Heuristic.

def test_group_phase_requires_R_above_K():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=2, seed=16)
    with pytest.raises(ContractError):
        group_phase(ds, R=2, seed=0)


def test_group_phase_is_one_move_stable():
    ds = make_dataset(I=10, J=3, L=8, K=2, n=2, seed=17, noise=0.5)
    gs = group_phase(ds, R=4, seed=0)
    assert sorted(i for g in gs.groups for i in g) == list(range(10))
    stats = ds.stats()
    betas = np.vstack([heuristics._cluster_beta(stats, g) for g in gs.groups])
    sse = heuristics._entity_cluster_sse(ds, betas)
    for r, g in enumerate(gs.groups):
        for i in g:
            assert sse[i, r] <= np.min(sse[i]) + 1e-9 * max(1.0, sse[i, r])


def test_cg_heuristic_group_cover_oracle():
    # exhaustively check the group-combination step against all 2-covers
    ds = make_dataset(I=12, J=3, L=8, K=2, n=1, seed=18, noise=0.5)
    gs = group_phase(ds, R=4, seed=0)
    part, sse = run_cg_heuristic(ds, R=4, seed=0)
    assert not validate_partition(part, ds)
    if gs.R > ds.K:
        best = math.inf
        for mask in range(1, 2 ** gs.R - 1):
            S = [r for r in range(gs.R) if mask >> r & 1]
            T = [r for r in range(gs.R) if not mask >> r & 1]
            a = [i for r in S for i in gs.groups[r]]
            b = [i for r in T for i in gs.groups[r]]
            if len(a) >= ds.n and len(b) >= ds.n:
                best = min(best, cluster_cost(ds, a).sse + cluster_cost(ds, b).sse)
        assert sse == pytest.approx(best, rel=1e-6)


def test_cg_heuristic_never_beats_exact():
    ds = make_dataset(I=10, J=3, L=8, K=2, n=2, seed=19, noise=0.5)
    _, best = exact.brute_force_optimum(ds)
    _, sse = run_cg_heuristic(ds, R=4, seed=0)
    assert sse >= best - 1e-9 * best


# ---------------------------------------------------------------------------
# Two-stage.

def _entity_with_weeks(y, disc, weeks):
    X = np.zeros((len(y), 2))
    X[:, 0] = disc
    X[:, 1] = np.arange(len(y)) * 0.01  # harmless second predictor
    return Entity(id="e", y=np.asarray(y, dtype=float), X=X,
                  weeks=np.asarray(weeks))


def test_seasonal_residual_single_year():
    rng = np.random.default_rng(20)
    y = rng.normal(size=52)
    disc = np.zeros(52)
    disc[[3, 10]] = 0.2
    e = _entity_with_weeks(y, disc, np.arange(1, 53))
    vec = seasonal_residual_vector(e, discount_col=0)
    beta = float(np.linalg.lstsq(disc[:, None], y, rcond=None)[0][0])
    np.testing.assert_allclose(vec, y - disc * beta, rtol=1e-12)


def test_seasonal_residual_two_identical_years():
    rng = np.random.default_rng(21)
    year = rng.normal(size=52)
    y = np.concatenate([year, year])
    e = _entity_with_weeks(y, np.zeros(104), np.arange(1, 105))
    vec = seasonal_residual_vector(e, discount_col=0)
    np.testing.assert_allclose(vec, year, rtol=1e-12)


def test_seasonal_residual_zero_discount_effect():
    rng = np.random.default_rng(22)
    y = rng.normal(size=52)
    e = _entity_with_weeks(y, np.zeros(52), np.arange(1, 53))
    vec = seasonal_residual_vector(e, discount_col=0)
    np.testing.assert_allclose(vec, y, rtol=1e-12)   # beta*0 = 0, residual = y


def test_seasonal_residual_missing_weeks_filled():
    y = np.array([1.0, 2.0, 3.0])
    e = _entity_with_weeks(y, np.zeros(3), np.array([1, 2, 3]))
    vec = seasonal_residual_vector(e, discount_col=0)
    assert vec[0] == 1.0 and vec[1] == 2.0 and vec[2] == 3.0
    np.testing.assert_allclose(vec[3:], y.mean())


def test_seasonal_residual_needs_two_obs():
    e = _entity_with_weeks([1.0], [0.0], [1])
    with pytest.raises(ContractError):
        seasonal_residual_vector(e)


def test_correlation_distance_trivials():
    u = np.sin(np.arange(52))
    assert correlation_distance(u, u) == pytest.approx(0.0, abs=1e-12)
    assert correlation_distance(u, -u) == pytest.approx(2.0, abs=1e-12)
    a = np.zeros(4); a[:2] = [1, -1]
    b = np.zeros(4); b[2:] = [1, -1]
    assert correlation_distance(a, b) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ContractError):
        correlation_distance(np.ones(5), u[:5])


def test_complete_linkage_singletons():
    D = np.array([[0.0, 1.0], [1.0, 0.0]])
    p = complete_linkage_cluster(D, K=2)
    assert len(set(p.assignment.tolist())) == 2


def test_complete_linkage_matches_scipy():
    rng = np.random.default_rng(23)
    pts = np.vstack([rng.normal(0, 0.1, size=(4, 2)), rng.normal(5, 0.1, size=(4, 2))])
    D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    ours = complete_linkage_cluster(D, K=2)
    Z = sch.linkage(sch.distance.squareform(D, checks=False), method="complete")
    ref = sch.fcluster(Z, t=2, criterion="maxclust")
    assert Partition(ours.assignment, 2).canonical() == \
        Partition(np.asarray(ref) - 1, 2).canonical()
    # the two blobs are separated
    assert len(set(ours.assignment[:4].tolist())) == 1
    assert len(set(ours.assignment[4:].tolist())) == 1


def test_complete_linkage_bad_matrix():
    with pytest.raises(ContractError):
        complete_linkage_cluster(np.array([[0.0, 1.0], [2.0, 0.0]]), K=1)
    with pytest.raises(ContractError):
        complete_linkage_cluster(np.zeros((2, 2)), K=3)


def test_two_stage_deterministic_and_recovers_planted():
    from gclr.synth import SyntheticConfig, gen_type2
    cfg = SyntheticConfig(I=12, K=3, seed=25, n=2, noise_scale=math.inf)
    inst = gen_type2(cfg)
    p1, s1 = run_two_stage(inst.dataset)
    p2, s2 = run_two_stage(inst.dataset)
    assert s1 == s2
    np.testing.assert_array_equal(p1.assignment, p2.assignment)
    assert p1.canonical() == inst.target.canonical()
