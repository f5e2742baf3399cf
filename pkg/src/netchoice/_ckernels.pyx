# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see :mod:`netchoice._pykernels` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def clogit_eval(const double[:, ::1] X, const long long[::1] offsets,
                const long long[::1] chosen, const double[::1] theta,
                const double[::1] weights, util_offset=None, int order=2):
    cdef Py_ssize_t n_ev = chosen.shape[0]
    cdef Py_ssize_t nf = X.shape[1]
    cdef Py_ssize_t R = X.shape[0]
    cdef Py_ssize_t k, r, a, b, lo, hi
    cdef double umax, z, w, pr, ck
    cdef const double[::1] off
    cdef bint has_off = util_offset is not None
    if has_off:
        off = util_offset
    u_arr = np.empty(R, dtype=np.float64)
    cdef double[::1] u = u_arr
    ll_arr = np.empty(n_ev, dtype=np.float64)
    cdef double[::1] ll = ll_arr
    grad_arr = np.zeros(nf, dtype=np.float64)
    hess_arr = np.zeros((nf, nf), dtype=np.float64)
    cdef double[::1] grad = grad_arr
    cdef double[:, ::1] hess = hess_arr
    xbar_arr = np.zeros(nf, dtype=np.float64)
    cdef double[::1] xbar = xbar_arr

    for r in range(R):
        z = 0.0
        for a in range(nf):
            z += X[r, a] * theta[a]
        if has_off:
            z += off[r]
        u[r] = z

    for k in range(n_ev):
        lo = offsets[k]
        hi = offsets[k + 1]
        umax = u[lo]
        for r in range(lo + 1, hi):
            if u[r] > umax:
                umax = u[r]
        z = 0.0
        for r in range(lo, hi):
            z += exp(u[r] - umax)
        ll[k] = u[lo + chosen[k]] - (log(z) + umax)
        if order < 1:
            continue
        w = weights[k]
        if w == 0.0:
            continue
        for a in range(nf):
            xbar[a] = 0.0
        for r in range(lo, hi):
            pr = exp(u[r] - umax) / z
            for a in range(nf):
                xbar[a] += pr * X[r, a]
            if order >= 2:
                pr *= w
                for a in range(nf):
                    ck = pr * X[r, a]
                    for b in range(a + 1):
                        hess[a, b] -= ck * X[r, b]
        for a in range(nf):
            grad[a] += w * (X[lo + chosen[k], a] - xbar[a])
            if order >= 2:
                for b in range(a + 1):
                    hess[a, b] += w * xbar[a] * xbar[b]

    if order < 1:
        return ll_arr, None, None
    if order < 2:
        return ll_arr, grad_arr, None
    for a in range(nf):
        for b in range(a):
            hess[b, a] = hess[a, b]
    return ll_arr, grad_arr, hess_arr


def categorical_eval(const long long[::1] codes, const double[::1] log_count,
                     const long long[::1] offsets, const long long[::1] chosen,
                     const double[::1] theta, const double[::1] weights, int order=2):
    cdef Py_ssize_t n_ev = chosen.shape[0]
    cdef Py_ssize_t K = theta.shape[0]
    cdef Py_ssize_t R = codes.shape[0]
    cdef Py_ssize_t k, r, s, lo, hi
    cdef double umax, z, w, pr
    u_arr = np.empty(R, dtype=np.float64)
    cdef double[::1] u = u_arr
    p_arr = np.empty(R, dtype=np.float64)
    cdef double[::1] p = p_arr
    ll_arr = np.empty(n_ev, dtype=np.float64)
    cdef double[::1] ll = ll_arr
    grad_arr = np.zeros(K, dtype=np.float64)
    hess_arr = np.zeros((K, K), dtype=np.float64)
    cdef double[::1] grad = grad_arr
    cdef double[:, ::1] hess = hess_arr

    for r in range(R):
        u[r] = theta[codes[r]] + log_count[r]
    for k in range(n_ev):
        lo = offsets[k]
        hi = offsets[k + 1]
        umax = u[lo]
        for r in range(lo + 1, hi):
            if u[r] > umax:
                umax = u[r]
        z = 0.0
        for r in range(lo, hi):
            p[r] = exp(u[r] - umax)
            z += p[r]
        ll[k] = theta[codes[lo + chosen[k]]] - (log(z) + umax)
        if order < 1:
            continue
        w = weights[k]
        if w == 0.0:
            continue
        grad[codes[lo + chosen[k]]] += w
        for r in range(lo, hi):
            p[r] /= z
        for r in range(lo, hi):
            pr = w * p[r]
            grad[codes[r]] -= pr
            if order >= 2:
                hess[codes[r], codes[r]] -= pr
                for s in range(lo, hi):
                    hess[codes[r], codes[s]] += pr * p[s]
    if order < 1:
        return ll_arr, None, None
    if order < 2:
        return ll_arr, grad_arr, None
    return ll_arr, grad_arr, hess_arr


cdef class Fenwick:
    """Binary indexed tree over non-negative weights with inverse-CDF lookup."""
    cdef double[::1] _tree
    cdef double[::1] _w
    cdef readonly Py_ssize_t n
    cdef Py_ssize_t _top

    def __init__(self, Py_ssize_t n):
        self.n = n
        self._tree = np.zeros(n + 1, dtype=np.float64)
        self._w = np.zeros(max(n, 1), dtype=np.float64)
        cdef Py_ssize_t step = 1
        while step * 2 <= n:
            step *= 2
        self._top = step

    cpdef void add(self, Py_ssize_t i, double delta):
        self._w[i] += delta
        i += 1
        while i <= self.n:
            self._tree[i] += delta
            i += i & (-i)

    cpdef void set(self, Py_ssize_t i, double w):
        self.add(i, w - self._w[i])

    cpdef double get(self, Py_ssize_t i):
        return self._w[i]

    cpdef double prefix(self, Py_ssize_t i):
        cdef double s = 0.0
        while i > 0:
            s += self._tree[i]
            i -= i & (-i)
        return s

    cpdef double total(self):
        return self.prefix(self.n)

    cpdef Py_ssize_t find(self, double x) except -1:
        cdef Py_ssize_t pos = 0, nxt
        cdef double rem = x
        cdef Py_ssize_t step = self._top
        while step > 0:
            nxt = pos + step
            if nxt <= self.n and self._tree[nxt] <= rem:
                pos = nxt
                rem -= self._tree[nxt]
            step >>= 1
        if pos >= self.n or self._w[pos] <= 0.0:
            return self._last_positive(min(pos, self.n - 1))
        return pos

    cdef Py_ssize_t _last_positive(self, Py_ssize_t start) except -1:
        cdef Py_ssize_t i
        for i in range(start, -1, -1):
            if self._w[i] > 0.0:
                return i
        for i in range(start + 1, self.n):
            if self._w[i] > 0.0:
                return i
        raise ValueError("all weights are zero")
