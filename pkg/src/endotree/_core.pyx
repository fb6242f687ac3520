# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernels; same algorithms and draw order as _pycore."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY
from cpython.pycapsule cimport PyCapsule_GetPointer
from numpy.random cimport bitgen_t

cnp.import_array()


cdef bitgen_t* _bitgen(rng) except NULL:
    capsule = rng.bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline double _uniform(bitgen_t* bg) noexcept nogil:
    return bg.next_double(bg.state)


cdef inline Py_ssize_t _pick(const double[:] cdf, double u) noexcept nogil:
    cdef Py_ssize_t k = 0
    cdef Py_ssize_t last = cdf.shape[0] - 1
    while k < last and u >= cdf[k]:
        k += 1
    return k


cdef inline void _fill(const long[:, :, :] phi, int n, long[:] states,
                       long[:] eps) noexcept nogil:
    cdef Py_ssize_t v
    for v in range((1 << n) - 2, -1, -1):
        states[v] = phi[states[2 * v + 1], states[2 * v + 2], eps[v]]


cdef inline void _draw_tree(const long[:, :, :] phi, int n, const double[:] mu_cdf,
                            const double[:] nu_cdf, bitgen_t* bg, long[:] states,
                            long[:] eps) noexcept nogil:
    cdef Py_ssize_t first = (1 << n) - 1
    cdef Py_ssize_t k
    for k in range(1 << n):
        states[first + k] = _pick(mu_cdf, _uniform(bg))
    for k in range(first):
        eps[k] = _pick(nu_cdf, _uniform(bg))
    _fill(phi, n, states, eps)


cdef inline long _update_path(const long[:, :, :] phi, long[:] states, long[:] eps,
                              Py_ssize_t leaf) noexcept nogil:
    cdef Py_ssize_t v = leaf
    cdef long touched = 0
    while v > 0:
        v = (v - 1) // 2
        states[v] = phi[states[2 * v + 1], states[2 * v + 2], eps[v]]
        touched += 1
    return touched


cdef inline double _total_rate(const double[:] rates, long[:] states, Py_ssize_t first,
                               Py_ssize_t nl) noexcept nogil:
    cdef double total = 0.0
    cdef Py_ssize_t k
    for k in range(nl):
        total += rates[states[first + k]]
    return total


cdef inline long _step(const long[:, :, :] phi, int n, const double[:] rates,
                       const double[:, :] jump_cdf, long[:] states, long[:] eps,
                       bitgen_t* bg, double total) noexcept nogil:
    cdef Py_ssize_t first = (1 << n) - 1
    cdef double target = _uniform(bg) * total
    cdef double acc = 0.0
    cdef Py_ssize_t k, leaf = first
    for k in range(1 << n):
        acc += rates[states[first + k]]
        leaf = first + k
        if target < acc:
            break
    states[leaf] = _pick(jump_cdf[states[leaf]], _uniform(bg))
    return _update_path(phi, states, eps, leaf)


def sample_roots(phi, int n, mu_cdf, nu_cdf, Py_ssize_t trials, rng):
    cdef const long[:, :, :] ph = np.ascontiguousarray(phi, dtype=np.int_)
    cdef const double[:] mc = np.ascontiguousarray(mu_cdf, dtype=float)
    cdef const double[:] nc = np.ascontiguousarray(nu_cdf, dtype=float)
    cdef long[:] states = np.zeros((1 << (n + 1)) - 1, dtype=np.int_)
    cdef long[:] eps = np.zeros(max((1 << n) - 1, 1), dtype=np.int_)
    roots_arr = np.zeros(trials, dtype=np.int_)
    cdef long[:] roots = roots_arr
    cdef bitgen_t* bg = _bitgen(rng)
    cdef Py_ssize_t i
    with rng.bit_generator.lock, nogil:
        for i in range(trials):
            _draw_tree(ph, n, mc, nc, bg, states, eps)
            roots[i] = states[0]
    return roots_arr.tolist()


def coupling_trials(phi, int n, mu_cdf, nu_cdf, Py_ssize_t trials, rng):
    cdef const long[:, :, :] ph = np.ascontiguousarray(phi, dtype=np.int_)
    cdef const double[:] mc = np.ascontiguousarray(mu_cdf, dtype=float)
    cdef const double[:] nc = np.ascontiguousarray(nu_cdf, dtype=float)
    cdef Py_ssize_t first = (1 << n) - 1
    cdef long[:] a = np.zeros((1 << (n + 1)) - 1, dtype=np.int_)
    cdef long[:] b = np.zeros((1 << (n + 1)) - 1, dtype=np.int_)
    cdef long[:] eps = np.zeros(max(first, 1), dtype=np.int_)
    cdef bitgen_t* bg = _bitgen(rng)
    cdef Py_ssize_t i, k
    cdef long differ = 0
    with rng.bit_generator.lock, nogil:
        for i in range(trials):
            for k in range(first):
                eps[k] = _pick(nc, _uniform(bg))
            for k in range(1 << n):
                a[first + k] = _pick(mc, _uniform(bg))
            for k in range(1 << n):
                b[first + k] = _pick(mc, _uniform(bg))
            _fill(ph, n, a, eps)
            _fill(ph, n, b, eps)
            if a[0] != b[0]:
                differ += 1
    return differ


def autocov_trials(phi, int n, rates, jump_cdf, mu_cdf, nu_cdf, fvals, lags,
                   Py_ssize_t trials, rng):
    cdef const long[:, :, :] ph = np.ascontiguousarray(phi, dtype=np.int_)
    cdef const double[:] rt = np.ascontiguousarray(rates, dtype=float)
    cdef const double[:, :] jc = np.ascontiguousarray(jump_cdf, dtype=float)
    cdef const double[:] mc = np.ascontiguousarray(mu_cdf, dtype=float)
    cdef const double[:] nc = np.ascontiguousarray(nu_cdf, dtype=float)
    cdef const double[:] fv = np.ascontiguousarray(fvals, dtype=float)
    cdef const double[:] lg = np.ascontiguousarray(lags, dtype=float)
    cdef Py_ssize_t first = (1 << n) - 1
    cdef Py_ssize_t nl = 1 << n
    cdef Py_ssize_t nlag = lg.shape[0]
    cdef long[:] states = np.zeros((1 << (n + 1)) - 1, dtype=np.int_)
    cdef long[:] eps = np.zeros(max(first, 1), dtype=np.int_)
    out_arr = np.zeros((trials, nlag))
    cdef double[:, :] out = out_arr
    cdef bitgen_t* bg = _bitgen(rng)
    cdef Py_ssize_t i, j
    cdef double t, t_next, total, f0
    cdef long events = 0, touched = 0
    with rng.bit_generator.lock, nogil:
        for i in range(trials):
            _draw_tree(ph, n, mc, nc, bg, states, eps)
            f0 = fv[states[0]]
            t = 0.0
            j = 0
            while j < nlag:
                total = _total_rate(rt, states, first, nl)
                if total <= 0.0:
                    t_next = INFINITY
                else:
                    t_next = t - log(1.0 - _uniform(bg)) / total
                while j < nlag and lg[j] < t_next:
                    out[i, j] = f0 * fv[states[0]]
                    j += 1
                if j == nlag:
                    break
                touched += _step(ph, n, rt, jc, states, eps, bg, total)
                events += 1
                t = t_next
    return out_arr.tolist(), events, touched


def trajectory(phi, int n, rates, jump_cdf, states_in, eps_in, double t_end,
               long max_events, rng):
    cdef const long[:, :, :] ph = np.ascontiguousarray(phi, dtype=np.int_)
    cdef const double[:] rt = np.ascontiguousarray(rates, dtype=float)
    cdef const double[:, :] jc = np.ascontiguousarray(jump_cdf, dtype=float)
    cdef Py_ssize_t first = (1 << n) - 1
    cdef Py_ssize_t nl = 1 << n
    st_arr = np.array(states_in, dtype=np.int_)
    cdef long[:] states = st_arr
    cdef long[:] eps = np.array(list(eps_in) or [0], dtype=np.int_)
    times_arr = np.zeros(max_events + 1)
    roots_arr = np.zeros(max_events + 1, dtype=np.int_)
    cdef double[:] times = times_arr
    cdef long[:] roots = roots_arr
    cdef bitgen_t* bg = _bitgen(rng)
    cdef double t = 0.0, total
    cdef long events = 0, touched = 0
    roots[0] = states[0]
    with rng.bit_generator.lock, nogil:
        while events < max_events:
            total = _total_rate(rt, states, first, nl)
            if total <= 0.0:
                break
            t = t - log(1.0 - _uniform(bg)) / total
            if t >= t_end:
                break
            touched += _step(ph, n, rt, jc, states, eps, bg, total)
            events += 1
            times[events] = t
            roots[events] = states[0]
    states_in[:] = st_arr.tolist()
    return (times_arr[:events + 1].tolist(), roots_arr[:events + 1].tolist(),
            events, touched)
