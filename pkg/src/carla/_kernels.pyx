# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics must match ``carla._pykernels`` exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline void _push_near(double* bd, long* bi, Py_ssize_t q, Py_ssize_t* cnt,
                            double d, long j) noexcept nogil:
    # Candidates arrive in increasing index order, so an equal distance
    # never displaces an earlier (lower) index.
    cdef Py_ssize_t pos
    if cnt[0] == q and d >= bd[q - 1]:
        return
    pos = cnt[0] if cnt[0] < q else q - 1
    while pos > 0 and bd[pos - 1] > d:
        bd[pos] = bd[pos - 1]
        bi[pos] = bi[pos - 1]
        pos -= 1
    bd[pos] = d
    bi[pos] = j
    if cnt[0] < q:
        cnt[0] += 1


cdef inline void _push_far(double* bd, long* bi, Py_ssize_t q, Py_ssize_t* cnt,
                           double d, long j) noexcept nogil:
    cdef Py_ssize_t pos
    if cnt[0] == q and d <= bd[q - 1]:
        return
    pos = cnt[0] if cnt[0] < q else q - 1
    while pos > 0 and bd[pos - 1] < d:
        bd[pos] = bd[pos - 1]
        bi[pos] = bi[pos - 1]
        pos -= 1
    bd[pos] = d
    bi[pos] = j
    if cnt[0] < q:
        cnt[0] += 1


def knn_extremes(const double[:, ::1] reps, Py_ssize_t q):
    """Q nearest and Q furthest neighbours of every row (squared Euclidean).

    Self is excluded and ties go to the lower index. Each pair distance is
    computed once; row ``j`` still sees its candidates in increasing index
    order (``i < j`` from earlier outer iterations, then ``i > j``).
    """
    cdef Py_ssize_t n = reps.shape[0]
    cdef Py_ssize_t dim = reps.shape[1]
    if q < 1 or q > n - 1:
        raise ValueError(f"q must be in [1, {n - 1}], got {q}")

    near_d = np.empty((n, q), dtype=np.float64)
    far_d = np.empty((n, q), dtype=np.float64)
    near_i = np.empty((n, q), dtype=np.int_)
    far_i = np.empty((n, q), dtype=np.int_)
    cnt_near = np.zeros(n, dtype=np.intp)
    cnt_far = np.zeros(n, dtype=np.intp)

    cdef double[:, ::1] nd = near_d
    cdef double[:, ::1] fd = far_d
    cdef long[:, ::1] ni = near_i
    cdef long[:, ::1] fi = far_i
    cdef Py_ssize_t[::1] cn = cnt_near
    cdef Py_ssize_t[::1] cf = cnt_far
    cdef Py_ssize_t i, j, k
    cdef double d, diff

    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                d = 0.0
                for k in range(dim):
                    diff = reps[i, k] - reps[j, k]
                    d = d + diff * diff
                _push_near(&nd[i, 0], &ni[i, 0], q, &cn[i], d, <long>j)
                _push_far(&fd[i, 0], &fi[i, 0], q, &cf[i], d, <long>j)
                _push_near(&nd[j, 0], &ni[j, 0], q, &cn[j], d, <long>i)
                _push_far(&fd[j, 0], &fi[j, 0], q, &cf[j], d, <long>i)
    return near_i.astype(np.int64, copy=False), far_i.astype(np.int64, copy=False)


def point_adjust(const signed char[::1] preds, const signed char[::1] labels):
    cdef Py_ssize_t n = preds.shape[0]
    if labels.shape[0] != n:
        raise ValueError("preds and labels differ in length")
    out_arr = np.asarray(preds, dtype=np.int8).copy()
    cdef signed char[::1] out = out_arr
    cdef Py_ssize_t t = 0, start, u
    cdef bint hit
    with nogil:
        while t < n:
            if labels[t] == 0:
                t += 1
                continue
            start = t
            hit = False
            while t < n and labels[t] != 0:
                if preds[t] != 0:
                    hit = True
                t += 1
            if hit:
                for u in range(start, t):
                    out[u] = 1
    return out_arr


def adjust_scores(const double[::1] scores, const signed char[::1] labels):
    cdef Py_ssize_t n = scores.shape[0]
    if labels.shape[0] != n:
        raise ValueError("scores and labels differ in length")
    out_arr = np.asarray(scores, dtype=np.float64).copy()
    cdef double[::1] out = out_arr
    cdef Py_ssize_t t = 0, start, u
    cdef double best
    with nogil:
        while t < n:
            if labels[t] == 0:
                t += 1
                continue
            start = t
            best = scores[t]
            while t < n and labels[t] != 0:
                if scores[t] > best:
                    best = scores[t]
                t += 1
            for u in range(start, t):
                out[u] = best
    return out_arr
