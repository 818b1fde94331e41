# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled market-clearing and dynamic-programming kernels.

Semantics (including floating-point operation order) mirror ``_pykernels``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

DEF IMP1 = 0
DEF IMP2 = 1
DEF IMP3 = 2
DEF EXP1 = 3
DEF EXP2 = 4
DEF EXP3 = 5


cdef void _sort_desc(Py_ssize_t* idx, Py_ssize_t n, double* key) noexcept nogil:
    # insertion sort: key descending, id ascending
    cdef Py_ssize_t i, j, cur
    for i in range(1, n):
        cur = idx[i]
        j = i - 1
        while j >= 0 and (key[idx[j]] < key[cur] or (key[idx[j]] == key[cur] and idx[j] > cur)):
            idx[j + 1] = idx[j]
            j -= 1
        idx[j + 1] = cur


cdef void _sort_near(Py_ssize_t* idx, Py_ssize_t n, double* loc, double origin) noexcept nogil:
    # insertion sort: distance to origin ascending, id ascending
    cdef Py_ssize_t i, j, cur
    cdef double dc
    for i in range(1, n):
        cur = idx[i]
        dc = fabs(origin - loc[cur])
        j = i - 1
        while j >= 0 and (fabs(origin - loc[idx[j]]) > dc or
                          (fabs(origin - loc[idx[j]]) == dc and idx[j] > cur)):
            idx[j + 1] = idx[j]
            j -= 1
        idx[j + 1] = cur


cdef double _greedy(Py_ssize_t* buyers, Py_ssize_t nb, Py_ssize_t* sellers, Py_ssize_t ns,
                    double* need, double* have, double* bought, double* sold,
                    double* loc, Py_ssize_t* scratch) noexcept nogil:
    cdef Py_ssize_t i, j, b, s
    cdef double rem, q, total = 0.0
    _sort_desc(buyers, nb, need)
    for i in range(nb):
        b = buyers[i]
        rem = need[b]
        for j in range(ns):
            scratch[j] = sellers[j]
        _sort_near(scratch, ns, loc, loc[b])
        for j in range(ns):
            if rem <= 0.0:
                break
            s = scratch[j]
            if have[s] <= 0.0:
                continue
            q = rem if rem < have[s] else have[s]
            bought[b] += q
            sold[s] += q
            total += q
            rem -= q
            have[s] -= q
        need[b] = rem
    return total


cdef inline void _split(double* out, int i2, int i3, double residual, double matched,
                        double left, double total) noexcept nogil:
    cdef double share
    if left == 0.0:
        out[i2] = residual
    elif matched == 0.0:
        out[i3] = residual
    else:
        share = matched * residual / total
        out[i2] = share
        out[i3] = residual - share


def clear_markets(net, mg, pos, Py_ssize_t n_mg):
    cdef double[:, ::1] netv = np.ascontiguousarray(net, dtype=np.float64)
    cdef long long[::1] mgv = np.ascontiguousarray(mg, dtype=np.int64)
    cdef double[::1] posv = np.ascontiguousarray(pos, dtype=np.float64)
    cdef Py_ssize_t B = netv.shape[0], H = netv.shape[1]
    chan_arr = np.zeros((B, H, 6))
    local_arr = np.zeros((B, n_mg))
    inter_arr = np.zeros(B)
    cdef double[:, :, ::1] chan = chan_arr
    cdef double[:, ::1] local_vol = local_arr
    cdef double[::1] inter_vol = inter_arr

    cdef Py_ssize_t nmax = H if H > n_mg else n_mg
    cdef double[::1] need = np.zeros(nmax), have = np.zeros(nmax)
    cdef double[::1] bought = np.zeros(nmax), sold = np.zeros(nmax)
    cdef double[::1] res_short = np.zeros(H), res_surp = np.zeros(H)
    cdef double[::1] mg_short = np.zeros(n_mg), mg_surp = np.zeros(n_mg)
    cdef double[::1] mg_loc = np.arange(n_mg, dtype=np.float64)
    cdef Py_ssize_t[::1] buyers = np.zeros(nmax, dtype=np.intp)
    cdef Py_ssize_t[::1] sellers = np.zeros(nmax, dtype=np.intp)
    cdef Py_ssize_t[::1] scratch = np.zeros(nmax, dtype=np.intp)
    cdef Py_ssize_t r, h, m, nb, ns
    cdef double x

    with nogil:
        for r in range(B):
            for h in range(H):
                res_short[h] = 0.0
                res_surp[h] = 0.0
            for m in range(n_mg):
                nb = 0
                ns = 0
                for h in range(H):
                    if mgv[h] != m:
                        continue
                    x = netv[r, h]
                    bought[h] = 0.0
                    sold[h] = 0.0
                    if x > 0:
                        need[h] = x
                        buyers[nb] = h
                        nb += 1
                    elif x < 0:
                        have[h] = -x
                        sellers[ns] = h
                        ns += 1
                local_vol[r, m] = _greedy(&buyers[0], nb, &sellers[0], ns, &need[0], &have[0],
                                          &bought[0], &sold[0], &posv[0], &scratch[0])
                for h in range(nb):
                    chan[r, buyers[h], IMP1] = bought[buyers[h]]
                    res_short[buyers[h]] = need[buyers[h]]
                for h in range(ns):
                    chan[r, sellers[h], EXP1] = sold[sellers[h]]
                    res_surp[sellers[h]] = have[sellers[h]]

            for m in range(n_mg):
                mg_short[m] = 0.0
                mg_surp[m] = 0.0
            for h in range(H):
                mg_short[mgv[h]] += res_short[h]
                mg_surp[mgv[h]] += res_surp[h]
            nb = 0
            ns = 0
            for m in range(n_mg):
                bought[m] = 0.0
                sold[m] = 0.0
                if mg_short[m] > 0:
                    need[m] = mg_short[m]
                    buyers[nb] = m
                    nb += 1
                if mg_surp[m] > 0:
                    have[m] = mg_surp[m]
                    sellers[ns] = m
                    ns += 1
            inter_vol[r] = _greedy(&buyers[0], nb, &sellers[0], ns, &need[0], &have[0],
                                   &bought[0], &sold[0], &mg_loc[0], &scratch[0])
            for h in range(H):
                m = mgv[h]
                if res_short[h] > 0:
                    _split(&chan[r, h, 0], IMP2, IMP3, res_short[h], bought[m], need[m], mg_short[m])
                elif res_surp[h] > 0:
                    _split(&chan[r, h, 0], EXP2, EXP3, res_surp[h], sold[m], have[m], mg_surp[m])
    return chan_arr, local_arr, inter_arr


def dp_backward(cost, eidx, knext):
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef long long[:, ::1] e = np.ascontiguousarray(eidx, dtype=np.int64)
    cdef long long[:, ::1] kn = np.ascontiguousarray(knext, dtype=np.int64)
    cdef Py_ssize_t T = c.shape[0], K = e.shape[0], A = e.shape[1]
    value_arr = np.zeros((T + 1, K))
    policy_arr = np.zeros((T, K), dtype=np.int64)
    cdef double[:, ::1] value = value_arr
    cdef long long[:, ::1] policy = policy_arr
    cdef Py_ssize_t t, k, a, best
    cdef double q, bq
    with nogil:
        for t in range(T - 1, -1, -1):
            for k in range(K):
                best = 0
                bq = c[t, e[k, 0]] + value[t + 1, kn[k, 0]]
                for a in range(1, A):
                    q = c[t, e[k, a]] + value[t + 1, kn[k, a]]
                    if q < bq:
                        bq = q
                        best = a
                value[t, k] = bq
                policy[t, k] = best
    return value_arr, policy_arr
