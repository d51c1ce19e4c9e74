"""Hot sequential kernels with numba acceleration and a pure-Python fallback.

The two genuinely loop-bound inner kernels of the package live here: the
two-state Viterbi recursion (one step per frame, ~10k frames per channel) and
the shortest-augmenting-path assignment solver. Both are written once in
nopython-compatible form; the JIT-compiled variant is used unless the
environment variable ``DIARKIT_NO_NUMBA=1`` selects the interpreted fallback
(or numba is not installed). ``benchmarks/bench_kernels.py`` compares the two
paths.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_DISABLED = os.environ.get("DIARKIT_NO_NUMBA", "") == "1"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    numba = None
    HAVE_NUMBA = False


def _viterbi_two_state_py(log_emit, log_stay, log_switch, log_init0, log_init1):
    # log_emit: (T, 2) with column 0 = non-speech, column 1 = speech.
    # Ties are broken toward non-speech (state 0).
    T = log_emit.shape[0]
    path = np.zeros(T, dtype=np.int8)
    if T == 0:
        return path
    back = np.zeros((T, 2), dtype=np.int8)
    d0 = log_init0 + log_emit[0, 0]
    d1 = log_init1 + log_emit[0, 1]
    for t in range(1, T):
        a = d0 + log_stay
        b = d1 + log_switch
        if b > a:
            nd0 = b + log_emit[t, 0]
            back[t, 0] = 1
        else:
            nd0 = a + log_emit[t, 0]
            back[t, 0] = 0
        a = d0 + log_switch
        b = d1 + log_stay
        if b > a:
            nd1 = b + log_emit[t, 1]
            back[t, 1] = 1
        else:
            nd1 = a + log_emit[t, 1]
            back[t, 1] = 0
        d0 = nd0
        d1 = nd1
    s = 1 if d1 > d0 else 0
    path[T - 1] = s
    for t in range(T - 1, 0, -1):
        s = back[t, s]
        path[t - 1] = s
    return path


def _assignment_core_py(cost):
    # Shortest augmenting path assignment (minimization) for an n x m cost
    # matrix with n <= m. Returns row_to_col of length n.
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j] != 0:
            row_to_col[p[j] - 1] = j - 1
    return row_to_col


if HAVE_NUMBA:
    _viterbi_two_state_jit = numba.njit(cache=True)(_viterbi_two_state_py)
    _assignment_core_jit = numba.njit(cache=True)(_assignment_core_py)
else:  # pragma: no cover
    _viterbi_two_state_jit = None
    _assignment_core_jit = None

if HAVE_NUMBA and not NUMBA_DISABLED:
    viterbi_two_state = _viterbi_two_state_jit
    assignment_core = _assignment_core_jit
    USING_NUMBA = True
else:
    viterbi_two_state = _viterbi_two_state_py
    assignment_core = _assignment_core_py
    USING_NUMBA = False
