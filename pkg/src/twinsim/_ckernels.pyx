# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled versions of :mod:`twinsim._kernels_py`."""

from libc.math cimport ceil, floor, NAN


cpdef bint topic_match(str pattern, str key):
    cdef list pat = pattern.split(".")
    cdef list words = key.split(".")
    return _match(pat, 0, words, 0)


cdef bint _match(list pat, Py_ssize_t i, list words, Py_ssize_t j):
    cdef Py_ssize_t npat = len(pat), nwords = len(words), k
    cdef str p
    while i < npat:
        p = <str>pat[i]
        if p == "#":
            if i == npat - 1:
                return True
            for k in range(j, nwords + 1):
                if _match(pat, i + 1, words, k):
                    return True
            return False
        if j >= nwords:
            return False
        if p != "*" and p != <str>words[j]:
            return False
        i += 1
        j += 1
    return j == nwords


cpdef bint prefix_match(str prefix, str value):
    cdef Py_ssize_t n = len(prefix)
    if len(value) < n or not value.startswith(prefix):
        return False
    return len(value) == n or value[n] == "."


def bin_counts(times, double width, Py_ssize_t nbins):
    cdef list counts = [0] * nbins
    cdef Py_ssize_t b
    cdef double t
    for t in times:
        b = <Py_ssize_t>floor(t / width)
        if 0 <= b < nbins:
            counts[b] = <long>counts[b] + 1
    return counts


def nearest_rank(sorted_values, double q):
    cdef Py_ssize_t n = len(sorted_values), rank
    if n == 0:
        return NAN
    rank = <Py_ssize_t>ceil(q / 100.0 * n)
    if rank < 1:
        rank = 1
    if rank > n:
        rank = n
    return sorted_values[rank - 1]


def step_integral(times, values, double t_end):
    cdef double total = 0.0, t0, t1
    cdef Py_ssize_t i, n = len(times)
    for i in range(n):
        t0 = times[i]
        if t0 >= t_end:
            break
        t1 = times[i + 1] if i + 1 < n else t_end
        if t1 > t_end:
            t1 = t_end
        total += <double>values[i] * (t1 - t0)
    return total
