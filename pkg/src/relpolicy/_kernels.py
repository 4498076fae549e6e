"""Compiled segment reductions.

Rows are visited through ``order`` (a stable sort by segment) so that
``order[bounds[s]:bounds[s + 1]]`` lists the rows of segment ``s`` in
increasing index order.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def segment_sum(x, order, bounds):
    n_seg = bounds.shape[0] - 1
    d = x.shape[1]
    out = np.zeros((n_seg, d))
    for s in range(n_seg):
        for j in range(bounds[s], bounds[s + 1]):
            r = order[j]
            for c in range(d):
                out[s, c] += x[r, c]
    return out


@njit(cache=True, nogil=True)
def segment_max(x, order, bounds):
    """Per-segment max and the first row attaining it (-1 and 0.0 when empty)."""
    n_seg = bounds.shape[0] - 1
    d = x.shape[1]
    out = np.zeros((n_seg, d))
    arg = np.full((n_seg, d), -1, np.int64)
    for s in range(n_seg):
        lo = bounds[s]
        hi = bounds[s + 1]
        if lo == hi:
            continue
        r = order[lo]
        for c in range(d):
            out[s, c] = x[r, c]
            arg[s, c] = r
        for j in range(lo + 1, hi):
            r = order[j]
            for c in range(d):
                if x[r, c] > out[s, c]:
                    out[s, c] = x[r, c]
                    arg[s, c] = r
    return out, arg


@njit(cache=True, nogil=True)
def gather_add(out, src, rows):
    """``out += src[rows]`` without the temporary."""
    d = out.shape[1]
    for e in range(rows.shape[0]):
        r = rows[e]
        for c in range(d):
            out[e, c] += src[r, c]
