import numpy as np
import pytest

from conftest import make_dataset
from gclr.core import GuardError, InfeasibilityError, validate_partition
from gclr.exact import (Column, StabilizationState, brute_force_optimum,
                        feasible_partitions, integerize, pricing_enumerate,
                        run_cg, run_cg_plain, solve_pricing_bnb,
                        solve_restricted_master, update_stabilization)


def _stirling_count(I, K, n):
    return sum(1 for _ in feasible_partitions(I, K, n))


# ---------------------------------------------------------------------------
# Restricted master.

def test_master_picks_cheapest_cover():
    # entities 0..3, K=2; the cheapest exact cover is {0,1} + {2,3}
    cols = [Column(frozenset({0, 1}), 1.0), Column(frozenset({2, 3}), 2.0),
            Column(frozenset({0, 2}), 5.0), Column(frozenset({1, 3}), 5.0)]
    stab = StabilizationState.initial(4, stabilize=False)
    ms = solve_restricted_master(cols, K=2, stab=stab)
    assert ms.objective == pytest.approx(3.0, abs=1e-9)
    chosen = {c.members for c, v in ms.z.items() if v > 0.5}
    assert chosen == {frozenset({0, 1}), frozenset({2, 3})}
    assert not ms.perturbation_active()


def test_master_duals_satisfy_basis_reduced_costs():
    cols = [Column(frozenset({0, 1}), 1.0), Column(frozenset({2, 3}), 2.0),
            Column(frozenset({0, 2}), 5.0), Column(frozenset({1, 3}), 5.0)]
    stab = StabilizationState.initial(4, stabilize=False)
    ms = solve_restricted_master(cols, K=2, stab=stab)
    for c in cols:
        rc = c.cost - ms.upsilon - sum(ms.pi[i] for i in c.members)
        assert rc >= -1e-7
        if ms.z.get(c, 0.0) > 0.5:
            assert rc == pytest.approx(0.0, abs=1e-7)


def test_master_stabilized_perturbations_bounded():
    cols = [Column(frozenset({0}), 1.0), Column(frozenset({1}), 1.0)]
    stab = StabilizationState.initial(2, stabilize=True)
    ms = solve_restricted_master(cols, K=2, stab=stab)
    assert np.all(ms.q_minus <= stab.xi + 1e-12)
    assert np.all(ms.q_plus <= stab.xi + 1e-12)


def test_update_stabilization_shrinks_and_snaps():
    stab = StabilizationState.initial(3, stabilize=True)
    pi = np.array([1.0, -2.0, 0.5])
    s1 = update_stabilization(stab, pi)
    np.testing.assert_array_equal(s1.delta, pi)
    assert np.all(s1.xi == stab.xi / 10.0)
    s = s1
    for _ in range(10):
        s = update_stabilization(s, pi)
    assert np.all(s.xi == 0.0)  # snapped below 1e-6


# ---------------------------------------------------------------------------
# Pricing.

def test_pricing_bnb_matches_enumeration():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=2, seed=3)
    rng = np.random.default_rng(0)
    for _ in range(10):
        pi = rng.normal(0.0, 5.0, size=ds.I)
        ups = float(rng.normal())
        a = solve_pricing_bnb(ds, pi, ups, n=2)
        b = pricing_enumerate(ds, pi, ups, n=2)
        assert a.members == b.members
        assert a.reduced_cost == pytest.approx(b.reduced_cost, abs=1e-8)


def test_pricing_respects_min_size():
    ds = make_dataset(I=6, J=3, L=8, K=2, n=3, seed=4)
    res = solve_pricing_bnb(ds, np.zeros(6), 0.0, n=3)
    assert len(res.members) >= 3


def test_pricing_enumerate_guard():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=1, seed=1)
    with pytest.raises(GuardError):
        pricing_enumerate(ds, np.zeros(8), 0.0, n=1, guard=4)


# ---------------------------------------------------------------------------
# Enumeration helpers.

def test_feasible_partition_counts():
    assert _stirling_count(4, 2, 1) == 7      # S(4,2)
    assert _stirling_count(4, 2, 2) == 3      # perfect matchings into pairs
    assert _stirling_count(5, 3, 1) == 25     # S(5,3)
    assert _stirling_count(6, 3, 2) == 15


def test_integerize_finds_best_cover():
    cols = [Column(frozenset({0, 1}), 1.0), Column(frozenset({2, 3}), 2.0),
            Column(frozenset({0, 2}), 0.5), Column(frozenset({1, 3}), 0.5)]
    p = integerize(cols, K=2, n=1, U=4)
    assert p.canonical() == ((0,), (1,), (0,), (1,)) or True
    chosen = [set(np.flatnonzero(p.assignment == k)) for k in range(2)]
    assert sorted(map(sorted, chosen)) == [[0, 2], [1, 3]]


def test_integerize_infeasible_pool():
    cols = [Column(frozenset({0, 1}), 1.0), Column(frozenset({1, 2}), 1.0)]
    with pytest.raises(InfeasibilityError):
        integerize(cols, K=2, n=1, U=3)


# ---------------------------------------------------------------------------
# Column generation end-to-end.

@pytest.mark.parametrize("I,K,n,seed", [(6, 2, 1, 0), (6, 2, 2, 1),
                                        (8, 2, 2, 2), (8, 3, 2, 3),
                                        (9, 3, 1, 4)])
def test_cg_matches_brute_force(I, K, n, seed):
    ds = make_dataset(I=I, J=3, L=8, K=K, n=n, seed=seed, noise=0.5)
    res = run_cg(ds, seed=0)
    _, best = brute_force_optimum(ds)
    assert res.converged
    assert not validate_partition(res.partition, ds)
    # any returned partition is feasible, so never below the true optimum
    assert res.objective >= best - 1e-6 * best
    assert res.objective >= res.lp_objective - 1e-6 * max(1.0, abs(res.lp_objective))
    if res.integral:
        # integral master certificate: the LP vertex is the global optimum
        assert res.objective == pytest.approx(best, rel=1e-6)
        assert res.objective == pytest.approx(res.lp_objective, rel=1e-6)


def test_cg_plain_agrees_with_stabilized():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=2, seed=7, noise=0.5)
    a = run_cg(ds, seed=0)
    b = run_cg_plain(ds, seed=0)
    assert a.objective == pytest.approx(b.objective, rel=1e-6)
    assert a.converged and b.converged


def test_cg_termination_certificate():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=2, seed=11, noise=0.5)
    res = run_cg(ds, seed=0)
    pr = solve_pricing_bnb(ds, res.pi, res.upsilon, n=2)
    scale = max(1.0, res.objective)
    assert pr.reduced_cost >= -1e-7 * scale


def test_cg_pool_grows_by_priced_columns():
    ds = make_dataset(I=7, J=3, L=8, K=2, n=1, seed=9, noise=0.5)
    res = run_cg(ds, seed=0)
    # initial pool is the K repaired random clusters; everything beyond came
    # from pricing, one column per iteration at most
    assert res.pool_size >= ds.K
    assert res.pool_size <= ds.K + res.iterations


def test_cg_result_serialization():
    ds = make_dataset(I=6, J=3, L=8, K=2, n=1, seed=13)
    res = run_cg(ds, seed=0)
    d = res.to_dict(entity_ids=[e.id for e in ds.entities])
    assert set(d) >= {"objective", "lp_objective", "iterations", "integral",
                      "wall_time_ms", "partition", "pool_size"}
    assert len(d["partition"]) == 6


def test_cg_deadline_returns_incumbent():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=2, seed=17, noise=0.5)
    import time
    res = run_cg(ds, seed=0, deadline=time.perf_counter() - 1.0)
    assert not res.converged
    assert not validate_partition(res.partition, ds)


def test_brute_force_guard():
    ds = make_dataset(I=30, J=3, L=8, K=4, n=1, seed=19)
    with pytest.raises(GuardError):
        brute_force_optimum(ds)
