"""Independent reference implementations used as test oracles.

Written from the defining formulas, sharing no code with the package.
"""

from __future__ import annotations

import math
from fractions import Fraction

FROZEN_BINDINGS = 45  # enumeration of the derivation rule over the default city


def topic_match_dp(pattern: str, key: str) -> bool:
    """Table-filling matcher: ``*`` is exactly one word, ``#`` zero or more."""
    p, w = pattern.split("."), key.split(".")
    # ok[i][j]: first i pattern tokens match first j words
    ok = [[False] * (len(w) + 1) for _ in range(len(p) + 1)]
    ok[0][0] = True
    for i in range(1, len(p) + 1):
        tok = p[i - 1]
        for j in range(len(w) + 1):
            if tok == "#":
                ok[i][j] = ok[i - 1][j] or (j > 0 and ok[i][j - 1])
            elif j > 0:
                ok[i][j] = ok[i - 1][j - 1] and (tok == "*" or tok == w[j - 1])
    return ok[len(p)][len(w)]


def prefix_match_ref(prefix: str, value: str) -> bool:
    ps, vs = prefix.split("."), value.split(".")
    return vs[: len(ps)] == ps


def binding_count(interfaces) -> int:
    """Count bindings by walking the derivation rule."""
    total = 0
    for iface in interfaces:
        if iface.service is not None:
            total += 3  # topic real.*, header real, header virtual
            total += 1 if iface.routing.persist_store_events else 0
            total += len(iface.commands)
        elif iface.routing.persist_real_directly:
            total += 2
    return total


def magnus_dew_point(t: float, rh: float, b: float = 17.62, c: float = 243.12) -> float:
    # Saturation vapour pressure form: e = rh/100 * 6.112 exp(b t / (c + t)),
    # dew point solves 6.112 exp(b td / (c + td)) = e.
    e = rh / 100.0 * 6.112 * math.exp(b * t / (c + t))
    x = math.log(e / 6.112)
    return c * x / (b - x)


AIRNOW = {
    "co": [(0.0, 4.4, 0, 50), (4.5, 9.4, 51, 100), (9.5, 12.4, 101, 150),
           (12.5, 15.4, 151, 200), (15.5, 30.4, 201, 300), (30.5, 50.4, 301, 500)],
    "so2": [(0.0, 35.0, 0, 50), (36.0, 75.0, 51, 100), (76.0, 185.0, 101, 150),
            (186.0, 304.0, 151, 200), (305.0, 604.0, 201, 300), (605.0, 1004.0, 301, 500)],
    "co2": [(0.0, 600.0, 0, 50), (601.0, 1000.0, 51, 100), (1001.0, 1500.0, 101, 150),
            (1501.0, 2000.0, 151, 200), (2001.0, 5000.0, 201, 300), (5001.0, 40000.0, 301, 500)],
}


def aqi_sub_index_ref(c: float, rows) -> int:
    """Exact rational interpolation over every row.

    Inside a row: linear interpolation, round half up. Between rows: the
    lower row's top index. Above the last row: 500.
    """
    if c > rows[-1][1]:
        return 500
    below = [r for r in rows if r[0] <= c]
    c_lo, c_hi, i_lo, i_hi = below[-1] if below else rows[0]
    if c > c_hi:
        return i_hi
    x = Fraction(i_hi - i_lo) / (Fraction(c_hi) - Fraction(c_lo)) * (Fraction(c) - Fraction(c_lo)) + i_lo
    return math.floor(x + Fraction(1, 2))


def aqi_ref(co2: float, co: float, so2: float) -> int:
    return max(aqi_sub_index_ref(co2, AIRNOW["co2"]), aqi_sub_index_ref(co, AIRNOW["co"]),
               aqi_sub_index_ref(so2, AIRNOW["so2"]))


def category_ref(index: int) -> str:
    names = [(50, "Good"), (100, "Moderate"), (150, "Unhealthy for Sensitive Groups"),
             (200, "Unhealthy"), (300, "Very Unhealthy")]
    for top, name in names:
        if index <= top:
            return name
    return "Hazardous"


def window_max_ref(reports, now: float, window: float) -> int:
    """Max index over every report within ``window`` seconds of ``now``."""
    return max(i for i, t in reports if t >= now - window)


def nearest_rank_ref(values, q: float):
    s = sorted(values)
    k = max(1, math.ceil(q * len(s) / 100))
    return s[k - 1]
