"""Pure-Python implementations of the hot kernels.

``twinsim._ckernels`` provides the same functions compiled with Cython;
:mod:`twinsim.kernels` picks whichever is available.
"""

from __future__ import annotations

import math


def topic_match(pattern: str, key: str) -> bool:
    """AMQP-style topic match: ``*`` is one segment, ``#`` zero or more."""
    return _match_segments(pattern.split("."), 0, key.split("."), 0)


def _match_segments(pat: list[str], i: int, words: list[str], j: int) -> bool:
    while i < len(pat):
        p = pat[i]
        if p == "#":
            if i == len(pat) - 1:
                return True
            for k in range(j, len(words) + 1):
                if _match_segments(pat, i + 1, words, k):
                    return True
            return False
        if j >= len(words):
            return False
        if p != "*" and p != words[j]:
            return False
        i += 1
        j += 1
    return j == len(words)


def prefix_match(prefix: str, value: str) -> bool:
    """True when ``value`` starts with ``prefix`` on a segment boundary."""
    n = len(prefix)
    if len(value) < n or value[:n] != prefix:
        return False
    return len(value) == n or value[n] == "."


def bin_counts(times, width: float, nbins: int) -> list[int]:
    counts = [0] * nbins
    for t in times:
        b = int(t // width)
        if 0 <= b < nbins:
            counts[b] += 1
    return counts


def nearest_rank(sorted_values, q: float) -> float:
    n = len(sorted_values)
    if n == 0:
        return math.nan
    rank = math.ceil(q / 100.0 * n)
    rank = min(max(rank, 1), n)
    return sorted_values[rank - 1]


def step_integral(times, values, t_end: float) -> float:
    """Integral of a right-continuous step function up to ``t_end``."""
    total = 0.0
    n = len(times)
    for i in range(n):
        t0 = times[i]
        if t0 >= t_end:
            break
        t1 = times[i + 1] if i + 1 < n else t_end
        if t1 > t_end:
            t1 = t_end
        total += values[i] * (t1 - t0)
    return total
