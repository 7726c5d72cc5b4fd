"""Hot-loop kernels with a compiled core and a pure-Python fallback.

The single kernel that dominates solver runtime is the pricing
branch-and-bound: minimize SSE(S) - sum(pi_i, i in S) over unit subsets S
whose total weight is at least n.  It works on per-unit sufficient
statistics (Gram matrix, X'y, y'y), so evaluating a subset is one
accumulate-and-solve of a J x J system, never a refit over raw rows.

``pricing_bnb`` dispatches to the Cython extension when it imported
cleanly and to ``pricing_bnb_py`` otherwise.  Both are exact and must
return the same optimum; ``benchmarks/bench_kernels.py`` compares their
throughput.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

try:
    from gclr import _speedups

    HAVE_COMPILED = True
except ImportError:  # extension not built; fall back to pure Python
    _speedups = None
    HAVE_COMPILED = False

# Pruning slack: a node survives only if its lower bound beats the
# incumbent by more than this.
PRUNE_EPS = 1e-10


def sse_from_stats(gram, xty, yty):
    """SSE and coefficients of the LS problem with accumulated statistics.

    The normal equations are always consistent, so sse = y'y - b'beta holds
    for any of their solutions; rank-deficient systems go through a
    minimum-norm solve.
    """
    try:
        c, low = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        beta = scipy.linalg.cho_solve((c, low), xty, check_finite=False)
    except scipy.linalg.LinAlgError:
        beta = np.linalg.lstsq(gram, xty, rcond=1e-10)[0]
    return max(float(yty - xty @ beta), 0.0), beta


def pricing_bnb_py(G, b, yy, weights, pi, n, best_value=np.inf, best_members=None):
    """Exact pricing by depth-first branch-and-bound (pure Python).

    Units are branched in decreasing-dual order.  The node bound
    SSE(F_in) - pi(F_in) - sum of positive duals still undecided is valid
    because SSE is monotone under set inclusion.  Returns
    (members, value, nodes) with members sorted ascending.
    """
    G = np.asarray(G)
    b = np.asarray(b)
    yy = np.asarray(yy, dtype=float)
    weights = np.asarray(weights, dtype=int)
    pi = np.asarray(pi, dtype=float)
    U, J = b.shape

    order = sorted(range(U), key=lambda u: (-pi[u], u))
    pos_suf = np.zeros(U + 1)
    w_suf = np.zeros(U + 1, dtype=int)
    for d in range(U - 1, -1, -1):
        u = order[d]
        pos_suf[d] = pos_suf[d + 1] + max(pi[u], 0.0)
        w_suf[d] = w_suf[d + 1] + weights[u]

    gram = np.zeros((U + 1, J, J))
    xty = np.zeros((U + 1, J))
    yty = np.zeros(U + 1)
    members: list[int] = []
    best = [float(best_value), sorted(best_members) if best_members is not None else None]
    nodes = [0]

    def consider(value, count):
        if value < best[0] - PRUNE_EPS:
            best[0] = value
            best[1] = sorted(members[:count])
        elif value <= best[0] + PRUNE_EPS and best[1] is not None:
            cand = sorted(members[:count])
            if cand < best[1]:
                best[0] = min(best[0], value)
                best[1] = cand

    def rec(d, ic, sse_in, pisum, wsum):
        nodes[0] += 1
        if wsum + w_suf[d] < n:
            return
        if sse_in - pisum - pos_suf[d] >= best[0] - PRUNE_EPS:
            return
        if d == U:
            return
        u = order[d]
        gram[ic + 1] = gram[ic] + G[u]
        xty[ic + 1] = xty[ic] + b[u]
        yty[ic + 1] = yty[ic] + yy[u]
        sse_new, _ = sse_from_stats(gram[ic + 1], xty[ic + 1], yty[ic + 1])
        members.append(u)
        if wsum + weights[u] >= n:
            consider(sse_new - pisum - pi[u], ic + 1)
        rec(d + 1, ic + 1, sse_new, pisum + pi[u], wsum + weights[u])
        members.pop()
        rec(d + 1, ic, sse_in, pisum, wsum)

    rec(0, 0, 0.0, 0.0, 0)
    if best[1] is None:
        raise RuntimeError("no feasible subset found (total weight below n?)")
    return best[1], best[0], nodes[0]


def pricing_bnb(G, b, yy, weights, pi, n, best_value=np.inf, best_members=None):
    """Dispatch to the compiled kernel when available."""
    if HAVE_COMPILED:
        G = np.ascontiguousarray(G, dtype=np.float64)
        b = np.ascontiguousarray(b, dtype=np.float64)
        yy = np.ascontiguousarray(yy, dtype=np.float64)
        weights = np.ascontiguousarray(weights, dtype=np.int64)
        pi = np.ascontiguousarray(pi, dtype=np.float64)
        if best_members is None:
            init = np.empty(0, dtype=np.int64)
        else:
            init = np.ascontiguousarray(sorted(best_members), dtype=np.int64)
        members, value, nodes = _speedups.pricing_bnb(
            G, b, yy, weights, pi, int(n), float(best_value), init)
        return list(members), value, nodes
    return pricing_bnb_py(G, b, yy, weights, pi, n, best_value, best_members)


def kernel_backend() -> str:
    return "compiled" if HAVE_COMPILED else "python"
