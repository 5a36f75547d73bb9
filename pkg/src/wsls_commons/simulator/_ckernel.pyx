# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event loop.  Same semantics and draw order as ``_pykernel``."""
import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport log1p, INFINITY
from libc.stdlib cimport malloc, realloc, free
from numpy.random cimport bitgen_t


cdef struct Ev:
    double t
    long long seq
    int a
    int g
    long long ep
    int failed


cdef struct Heap:
    Ev* data
    Py_ssize_t size
    Py_ssize_t cap


cdef inline bint _less(Ev* x, Ev* y) noexcept nogil:
    return x.t < y.t or (x.t == y.t and x.seq < y.seq)


cdef int _push(Heap* h, Ev ev) except -1:
    cdef Py_ssize_t i, parent
    cdef Ev* grown
    if h.size == h.cap:
        grown = <Ev*> realloc(h.data, 2 * h.cap * sizeof(Ev))
        if grown == NULL:
            raise MemoryError()
        h.data = grown
        h.cap *= 2
    i = h.size
    h.size += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(&ev, &h.data[parent]):
            h.data[i] = h.data[parent]
            i = parent
        else:
            break
    h.data[i] = ev
    return 0


cdef Ev _pop(Heap* h) noexcept nogil:
    cdef Ev top = h.data[0]
    cdef Ev last
    cdef Py_ssize_t i = 0, child, n
    h.size -= 1
    n = h.size
    if n > 0:
        last = h.data[n]
        while True:
            child = 2 * i + 1
            if child >= n:
                break
            if child + 1 < n and _less(&h.data[child + 1], &h.data[child]):
                child += 1
            if _less(&h.data[child], &last):
                h.data[i] = h.data[child]
                i = child
            else:
                break
        h.data[i] = last
    return top


cdef inline double _u(bitgen_t* rng) noexcept nogil:
    return rng.next_double(rng.state)


cdef int _shift(int g, long long[:, ::1] tol, int a, int ng, bint proportional, bitgen_t* rng) noexcept nogil:
    cdef long long total = 0
    cdef double target, acc
    cdef int j, pos, last
    cdef bint usable = False
    if ng < 2:
        return g
    if proportional:
        for j in range(ng):
            if j != g:
                total += tol[a, j]
        if total == 0:
            return g
        target = _u(rng) * total
        acc = 0.0
        last = g
        for j in range(ng):
            if j == g or tol[a, j] == 0:
                continue
            acc += tol[a, j]
            last = j
            if target < acc:
                return j
        return last
    for j in range(ng):
        if j != g and tol[a, j] > 0:
            usable = True
            break
    if not usable:
        return g
    pos = g
    while True:
        j = <int>(_u(rng) * (ng - 1))
        if j >= pos:
            j += 1
        pos = j
        if tol[a, pos] > 0:
            return pos


def run_kernel(dict p, object bit_generator):
    cdef bitgen_t* rng = <bitgen_t*> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")

    cdef double[::1] mu = np.ascontiguousarray(p["mu"], dtype=np.float64)
    cdef long long[::1] cs = np.ascontiguousarray(p["c"], dtype=np.int64)
    cdef long long[::1] ks = np.ascontiguousarray(p["k"], dtype=np.int64)
    cdef double[::1] ds = np.ascontiguousarray(p["d"], dtype=np.float64)
    cdef int ng = mu.shape[0]
    cdef double timeout = p["timeout"]
    cdef bint service_only = p["service_only"]
    cdef bint loss_zero = p["loss_zero"]
    cdef bint proportional = p["proportional"]

    cdef long long[::1] cur = np.array(p["agent_good"], dtype=np.int64)
    cdef long long[:, ::1] tol = np.array(p["tol"], dtype=np.int64)
    cdef unsigned char[::1] adaptive = np.ascontiguousarray(p["adaptive"], dtype=np.uint8)
    cdef double[::1] beta = np.ascontiguousarray(p["beta"], dtype=np.float64)
    cdef double[:, ::1] x = np.array(p["x"], dtype=np.float64)
    cdef int na = cur.shape[0]

    cdef double[::1] seg_end = np.ascontiguousarray(p["seg_end"], dtype=np.float64)
    cdef double[::1] seg_lam = np.ascontiguousarray(p["seg_lam"], dtype=np.float64)
    cdef int nseg = seg_end.shape[0]
    cdef double horizon = p["horizon"]
    cdef double interval = p["interval"]
    cdef Py_ssize_t nsamp = p["n_samples"]

    occ_s_arr = np.zeros((nsamp, ng), dtype=np.int64)
    fail_s_arr = np.zeros((nsamp, ng), dtype=np.int64)
    res_s_arr = np.zeros((nsamp, ng), dtype=np.int64)
    tolsum_s_arr = np.zeros((nsamp, ng), dtype=np.float64)
    tmin_s_arr = np.full(nsamp, -1, dtype=np.int64)
    tmax_s_arr = np.full(nsamp, -1, dtype=np.int64)
    cdef long long[:, ::1] occ_s = occ_s_arr
    cdef long long[:, ::1] fail_s = fail_s_arr
    cdef long long[:, ::1] res_s = res_s_arr
    cdef double[:, ::1] tolsum_s = tolsum_s_arr
    cdef long long[::1] tmin_s = tmin_s_arr
    cdef long long[::1] tmax_s = tmax_s_arr

    cdef long long[::1] occ = np.zeros(ng, dtype=np.int64)
    cdef double[::1] tolsum = np.zeros(ng, dtype=np.float64)
    cdef long long[::1] win_fail = np.zeros(ng, dtype=np.int64)
    cdef long long[::1] win_res = np.zeros(ng, dtype=np.int64)
    cdef long long[::1] soj = np.zeros(ng, dtype=np.int64)
    cdef long long[::1] soj_att = np.zeros(ng, dtype=np.int64)
    cdef long long[::1] fails_now = np.zeros(na, dtype=np.int64)
    cdef long long[::1] attempts = np.zeros(na, dtype=np.int64)
    cdef long long[::1] epoch = np.zeros(na, dtype=np.int64)

    cdef long long kmax = 1, cmax = 1
    cdef int i, j, a, g, lo, new, pi
    for i in range(ng):
        if ks[i] > kmax:
            kmax = ks[i]
        if cs[i] > cmax:
            cmax = cs[i]
    cdef double[:, ::1] deps = np.zeros((ng, kmax), dtype=np.float64)
    cdef long long[::1] ndeps = np.zeros(ng, dtype=np.int64)
    cdef double[:, ::1] freet = np.zeros((ng, cmax), dtype=np.float64)
    cdef double[::1] svc = np.empty(ng, dtype=np.float64)
    for i in range(ng):
        svc[i] = mu[i] / cs[i]

    cdef int n_adaptive = 0
    for a in range(na):
        occ[cur[a]] += 1
        if adaptive[a]:
            n_adaptive += 1
            for j in range(ng):
                tolsum[j] += tol[a, j]

    cdef Heap heap
    heap.cap = 1024
    heap.size = 0
    heap.data = <Ev*> malloc(heap.cap * sizeof(Ev))
    if heap.data == NULL:
        raise MemoryError()

    cdef long long seq = 0, shifts = 0, s, smin, smax, m, r, tg
    cdef int seg = 0
    cdef double rate = seg_lam[0] * na
    cdef double t_issue = INFINITY
    cdef double t_bound = seg_end[0] if nseg > 1 else INFINITY
    cdef double t_res, te, t_s = interval, t_now = 0.0
    cdef double d, ta, start, service, dep, rt, t_r, b
    cdef Py_ssize_t j_s = 0
    cdef bint failed
    cdef Ev ev

    if rate > 0:
        t_issue = -log1p(-_u(rng)) / rate

    try:
        while True:
            t_res = heap.data[0].t if heap.size > 0 else INFINITY
            te = t_issue if t_issue < t_res else t_res
            if t_bound <= te:
                te = t_bound
            while j_s < nsamp and t_s <= te:
                for j in range(ng):
                    occ_s[j_s, j] = occ[j]
                    fail_s[j_s, j] = win_fail[j]
                    res_s[j_s, j] = win_res[j]
                    tolsum_s[j_s, j] = tolsum[j]
                    win_fail[j] = 0
                    win_res[j] = 0
                if n_adaptive > 0:
                    smin = -1
                    smax = -1
                    for a in range(na):
                        if not adaptive[a]:
                            continue
                        s = 0
                        for j in range(ng):
                            s += tol[a, j]
                        if smin < 0 or s < smin:
                            smin = s
                        if s > smax:
                            smax = s
                    tmin_s[j_s] = smin
                    tmax_s[j_s] = smax
                j_s += 1
                t_s = (j_s + 1) * interval
            if te > horizon or te == INFINITY:
                break
            if te < t_now:
                raise RuntimeError(f"event queue out of order: {te} < {t_now}")
            t_now = te

            if te == t_bound:
                seg += 1
                t_bound = seg_end[seg] if seg < nseg - 1 else INFINITY
                rate = seg_lam[seg] * na
                t_issue = te - log1p(-_u(rng)) / rate if rate > 0 else INFINITY
                continue

            if te == t_issue and t_issue < t_res:
                a = <int>(_u(rng) * na)
                g = <int>cur[a]
                d = ds[g]
                ta = te + d
                m = 0
                for j in range(ndeps[g]):
                    if deps[g, j] > ta:
                        deps[g, m] = deps[g, j]
                        m += 1
                ndeps[g] = m
                if m >= ks[g]:
                    failed = True
                    t_r = te if loss_zero else te + 2.0 * d
                else:
                    pi = 0
                    for j in range(1, cs[g]):
                        if freet[g, j] < freet[g, pi]:
                            pi = j
                    start = ta if ta > freet[g, pi] else freet[g, pi]
                    service = -log1p(-_u(rng)) / svc[g]
                    dep = start + service
                    freet[g, pi] = dep
                    deps[g, m] = dep
                    ndeps[g] = m + 1
                    if service_only:
                        rt = 2.0 * d + service
                    else:
                        rt = 2.0 * d + (dep - ta)
                    if rt > timeout:
                        failed = True
                        t_r = te + timeout
                    else:
                        failed = False
                        t_r = te + rt
                ev.t = t_r
                ev.seq = seq
                ev.a = a
                ev.g = g
                ev.ep = epoch[a]
                ev.failed = failed
                _push(&heap, ev)
                seq += 1
                t_issue = te - log1p(-_u(rng)) / rate
                continue

            ev = _pop(&heap)
            a = ev.a
            g = ev.g
            win_res[g] += 1
            if ev.failed:
                win_fail[g] += 1
            if ev.ep != epoch[a]:
                continue
            attempts[a] += 1
            if not ev.failed:
                continue
            fails_now[a] += 1
            if fails_now[a] < tol[a, g]:
                continue
            r = attempts[a]
            soj[g] += 1
            soj_att[g] += r
            if adaptive[a]:
                tg = tol[a, g]
                b = beta[a]
                x[a, g] = (1.0 - b) * x[a, g] + b * (<double>tg) / (<double>r)
                lo = 0
                for j in range(1, ng):
                    if x[a, j] < x[a, lo]:
                        lo = j
                if x[a, lo] < x[a, g] and tg > 1:
                    tol[a, g] = tg - 1
                    tol[a, lo] += 1
                    tolsum[g] -= 1.0
                    tolsum[lo] += 1.0
            new = _shift(g, tol, a, ng, proportional, rng)
            if new != g:
                occ[g] -= 1
                occ[new] += 1
                cur[a] = new
                shifts += 1
            fails_now[a] = 0
            attempts[a] = 0
            epoch[a] += 1
    finally:
        free(heap.data)

    return {
        "occupancy": occ_s_arr,
        "failures": fail_s_arr,
        "resolved": res_s_arr,
        "tol_sum": tolsum_s_arr,
        "agent_tol_min": tmin_s_arr,
        "agent_tol_max": tmax_s_arr,
        "sojourns": np.asarray(soj).copy(),
        "sojourn_attempts": np.asarray(soj_att).copy(),
        "shifts": shifts,
        "final_good": np.asarray(cur).copy(),
        "final_tol": np.asarray(tol).copy(),
        "final_x": np.asarray(x).copy(),
    }
