# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pricing branch-and-bound.

Mirror of gclr.kernels.pricing_bnb_py: identical search order, bound and
tie-breaking, with the per-node accumulate-and-solve done through LAPACK
(dposv, with a dgelsd fallback for rank-deficient Gram matrices).
"""

from libc.math cimport INFINITY
from libc.string cimport memcpy

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_lapack cimport dgelsd, dposv

cnp.import_array()

DEF PRUNE_EPS = 1e-10


cdef struct Ctx:
    int U
    int J
    long n
    double best_value
    long best_count
    long nodes
    double* G          # U*J*J, C order
    double* b          # U*J
    double* yy         # U
    double* pi         # U (original indexing)
    long* w            # U
    long* order        # U
    double* pos_suf    # U+1
    long* w_suf        # U+1
    double* gram       # (U+1)*J*J accumulators
    double* xty        # (U+1)*J
    double* yty        # U+1
    long* members      # current include list
    long* best_members # sorted
    long* scratch_idx
    # solver scratch
    double* A
    double* rhs
    double* sv
    double* work
    int lwork
    int* iwork


cdef double _solve_sse(Ctx* c, int level) noexcept:
    """SSE at accumulator level `level` via dposv, dgelsd on failure."""
    cdef char uplo = b'L'
    cdef int J = c.J, nrhs = 1, info = 0, rank = 0
    cdef int i
    cdef double acc
    cdef double rcond = 1e-10
    memcpy(c.A, c.gram + <size_t>level * J * J, sizeof(double) * J * J)
    memcpy(c.rhs, c.xty + <size_t>level * J, sizeof(double) * J)
    dposv(&uplo, &J, &nrhs, c.A, &J, c.rhs, &J, &info)
    if info != 0:
        memcpy(c.A, c.gram + <size_t>level * J * J, sizeof(double) * J * J)
        memcpy(c.rhs, c.xty + <size_t>level * J, sizeof(double) * J)
        dgelsd(&J, &J, &nrhs, c.A, &J, c.rhs, &J, c.sv, &rcond, &rank,
               c.work, &c.lwork, c.iwork, &info)
        if info != 0:
            return INFINITY
    acc = c.yty[level]
    for i in range(J):
        acc -= (c.xty + <size_t>level * J)[i] * c.rhs[i]
    if acc < 0.0:
        acc = 0.0
    return acc


cdef bint _lex_smaller(long* a, long na, long* b, long nb) noexcept:
    cdef long i, m = na if na < nb else nb
    for i in range(m):
        if a[i] != b[i]:
            return a[i] < b[i]
    return na < nb


cdef void _consider(Ctx* c, double value, int count) noexcept:
    cdef int i, j
    cdef long tmp
    for i in range(count):
        c.scratch_idx[i] = c.members[i]
    for i in range(1, count):
        tmp = c.scratch_idx[i]
        j = i - 1
        while j >= 0 and c.scratch_idx[j] > tmp:
            c.scratch_idx[j + 1] = c.scratch_idx[j]
            j -= 1
        c.scratch_idx[j + 1] = tmp
    if value < c.best_value - PRUNE_EPS:
        pass
    elif (value <= c.best_value + PRUNE_EPS and c.best_count >= 0
          and _lex_smaller(c.scratch_idx, count, c.best_members, c.best_count)):
        if value > c.best_value:
            value = c.best_value
    else:
        return
    c.best_value = value
    c.best_count = count
    for i in range(count):
        c.best_members[i] = c.scratch_idx[i]


cdef void _rec(Ctx* c, int d, int ic, double sse_in, double pisum, long wsum) noexcept:
    cdef int J = c.J
    cdef long u
    cdef int i
    cdef double sse_new
    cdef double* gsrc
    cdef double* gdst
    cdef double* gcur
    cdef double* bsrc
    cdef double* bdst
    cdef double* bcur
    c.nodes += 1
    if wsum + c.w_suf[d] < c.n:
        return
    if sse_in - pisum - c.pos_suf[d] >= c.best_value - PRUNE_EPS:
        return
    if d == c.U:
        return
    u = c.order[d]
    gsrc = c.G + <size_t>u * J * J
    gdst = c.gram + <size_t>(ic + 1) * J * J
    gcur = c.gram + <size_t>ic * J * J
    for i in range(J * J):
        gdst[i] = gcur[i] + gsrc[i]
    bsrc = c.b + <size_t>u * J
    bdst = c.xty + <size_t>(ic + 1) * J
    bcur = c.xty + <size_t>ic * J
    for i in range(J):
        bdst[i] = bcur[i] + bsrc[i]
    c.yty[ic + 1] = c.yty[ic] + c.yy[u]
    sse_new = _solve_sse(c, ic + 1)
    c.members[ic] = u
    if wsum + c.w[u] >= c.n:
        _consider(c, sse_new - pisum - c.pi[u], ic + 1)
    _rec(c, d + 1, ic + 1, sse_new, pisum + c.pi[u], wsum + c.w[u])
    _rec(c, d + 1, ic, sse_in, pisum, wsum)


def pricing_bnb(cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] G,
                cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] b,
                cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] yy,
                cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] weights,
                cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] pi,
                long n, double best_value,
                cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] best_members):
    cdef int U = b.shape[0]
    cdef int J = b.shape[1]
    cdef Ctx c
    cdef int d, m, info = 0, rank = 0, nrhs = 1, lwork = -1
    cdef double wquery = 0.0, rcond = 1e-10
    cdef long u

    # sort by descending pi, ties by index
    order_np = np.lexsort((np.arange(U), -np.asarray(pi))).astype(np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] order = order_np
    pos_suf_np = np.zeros(U + 1)
    w_suf_np = np.zeros(U + 1, dtype=np.int64)
    for d in range(U - 1, -1, -1):
        u = order_np[d]
        pos_suf_np[d] = pos_suf_np[d + 1] + max(pi[u], 0.0)
        w_suf_np[d] = w_suf_np[d + 1] + weights[u]
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] pos_suf = pos_suf_np
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] w_suf = w_suf_np

    gram_np = np.zeros((U + 1) * J * J)
    xty_np = np.zeros((U + 1) * J)
    yty_np = np.zeros(U + 1)
    members_np = np.zeros(U + 1, dtype=np.int64)
    best_members_np = np.full(U + 1, -1, dtype=np.int64)
    scratch_np = np.zeros(U + 1, dtype=np.int64)
    A_np = np.zeros(J * J)
    rhs_np = np.zeros(J)
    sv_np = np.zeros(J)

    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] gram = gram_np
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] xty = xty_np
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] yty = yty_np
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] members = members_np
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] best_arr = best_members_np
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] scratch = scratch_np
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] A = A_np
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] rhs = rhs_np
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] sv = sv_np

    # dgelsd workspace query; iwork sized per the LAPACK doc bound.
    iwork_np = np.zeros(32 * J + 64, dtype=np.int32)
    cdef cnp.ndarray[cnp.int32_t, ndim=1, mode="c"] iwork = iwork_np
    dgelsd(&J, &J, &nrhs, &A[0], &J, &rhs[0], &J, &sv[0], &rcond, &rank,
           &wquery, &lwork, <int*>&iwork[0], &info)
    lwork = <int>wquery + 64
    work_np = np.zeros(lwork)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] work = work_np

    c.U = U
    c.J = J
    c.n = n
    c.best_value = best_value
    c.best_count = -1
    c.nodes = 0
    c.G = &G[0, 0, 0]
    c.b = &b[0, 0]
    c.yy = &yy[0]
    c.pi = &pi[0]
    c.w = <long*>&weights[0]
    c.order = <long*>&order[0]
    c.pos_suf = &pos_suf[0]
    c.w_suf = <long*>&w_suf[0]
    c.gram = &gram[0]
    c.xty = &xty[0]
    c.yty = &yty[0]
    c.members = <long*>&members[0]
    c.best_members = <long*>&best_arr[0]
    c.scratch_idx = <long*>&scratch[0]
    c.A = &A[0]
    c.rhs = &rhs[0]
    c.sv = &sv[0]
    c.work = &work[0]
    c.lwork = lwork
    c.iwork = <int*>&iwork[0]

    if best_members.shape[0] > 0:
        c.best_count = best_members.shape[0]
        for m in range(c.best_count):
            c.best_members[m] = best_members[m]

    _rec(&c, 0, 0, 0.0, 0.0, 0)

    if c.best_count < 0:
        raise RuntimeError("no feasible subset found (total weight below n?)")
    out = [int(best_arr[m]) for m in range(c.best_count)]
    return out, c.best_value, c.nodes
