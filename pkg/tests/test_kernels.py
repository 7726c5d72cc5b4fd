import numpy as np
import pytest

from conftest import make_dataset
from gclr import kernels
from gclr.core import cluster_cost
from gclr.exact import UnitProblem


def test_backend_reported():
    assert kernels.kernel_backend() in ("compiled", "python")


def test_sse_from_stats_matches_lstsq():
    rng = np.random.default_rng(0)
    for _ in range(20):
        X = rng.normal(size=(15, 4))
        y = rng.normal(size=15)
        sse, beta = kernels.sse_from_stats(X.T @ X, X.T @ y, float(y @ y))
        ref, *_ = np.linalg.lstsq(X, y, rcond=None)
        r = y - X @ ref
        assert sse == pytest.approx(float(r @ r), rel=1e-9, abs=1e-12)
        np.testing.assert_allclose(beta, ref, rtol=1e-6, atol=1e-9)


def test_sse_from_stats_rank_deficient():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(10, 2))
    X = np.hstack([X, X.sum(axis=1, keepdims=True)])
    y = rng.normal(size=10)
    sse, beta = kernels.sse_from_stats(X.T @ X, X.T @ y, float(y @ y))
    r = y - X @ beta
    assert sse == pytest.approx(float(r @ r), rel=1e-8)


def test_pricing_backends_agree():
    ds = make_dataset(I=9, J=3, L=8, K=2, n=2, seed=5, noise=0.5)
    problem = UnitProblem.from_dataset(ds)
    rng = np.random.default_rng(2)
    for _ in range(10):
        pi = rng.normal(0.0, 5.0, size=ds.I)
        m_py, v_py, _ = kernels.pricing_bnb_py(
            problem.G, problem.b, problem.yy, problem.weights, pi, ds.n)
        m, v, _ = kernels.pricing_bnb(
            problem.G, problem.b, problem.yy, problem.weights, pi, ds.n)
        assert sorted(m) == sorted(m_py)
        assert v == pytest.approx(v_py, rel=1e-9, abs=1e-9)


def test_pricing_value_matches_direct_cost():
    ds = make_dataset(I=7, J=3, L=8, K=2, n=2, seed=6, noise=0.5)
    problem = UnitProblem.from_dataset(ds)
    pi = np.linspace(-1.0, 2.0, 7)
    members, value, _ = kernels.pricing_bnb(
        problem.G, problem.b, problem.yy, problem.weights, pi, ds.n)
    direct = cluster_cost(ds, members).sse - float(pi[list(members)].sum())
    assert value == pytest.approx(direct, rel=1e-6, abs=1e-9)


def test_pricing_warm_start_incumbent_respected():
    ds = make_dataset(I=8, J=3, L=8, K=2, n=2, seed=7, noise=0.5)
    problem = UnitProblem.from_dataset(ds)
    pi = np.zeros(8)
    m0, v0, _ = kernels.pricing_bnb(
        problem.G, problem.b, problem.yy, problem.weights, pi, ds.n)
    m1, v1, nodes = kernels.pricing_bnb(
        problem.G, problem.b, problem.yy, problem.weights, pi, ds.n,
        best_value=v0, best_members=np.array(sorted(m0), dtype=np.int64))
    assert sorted(m1) == sorted(m0)
    assert v1 == pytest.approx(v0, abs=1e-12)
