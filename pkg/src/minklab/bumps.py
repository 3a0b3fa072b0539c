"""Smooth compactly supported cutoffs built from ``exp(-1/x)``."""

from __future__ import annotations

import numpy as np

PLATEAU = (0.5, 0.75)
SUPPORT = (0.25, 1.0)


def _h(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(x):
    """C-infinity step: 0 for ``x <= 0``, 1 for ``x >= 1``, ``h(x)/(h(x)+h(1-x))`` between."""
    x = np.asarray(x, dtype=float)
    a, b = _h(x), _h(1.0 - x)
    return a / (a + b)


def chi(s):
    """Bump with support ``(1/4, 1)``, equal to 1 on ``[1/2, 3/4]``, values in ``[0, 1]``."""
    s = np.asarray(s, dtype=float)
    lo, hi = SUPPORT
    p0, p1 = PLATEAU
    return smooth_step((s - lo) / (p0 - lo)) * smooth_step((hi - s) / (hi - p1))


def window(t, t0, t1, ramp):
    """1 on ``[t0 + ramp, t1 - ramp]``, 0 outside ``(t0, t1)``, smooth in between."""
    t = np.asarray(t, dtype=float)
    return smooth_step((t - t0) / ramp) * smooth_step((t1 - t) / ramp)
