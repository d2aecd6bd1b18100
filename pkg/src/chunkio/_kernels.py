"""Hot kernels for chunk selection: score + stable radix sort + greedy fill.

Two interchangeable backends produce bit-identical masks:

* numba ``@njit`` (default when numba imports cleanly), and
* a pure numpy/Python fallback.

Set ``CHUNKIO_NO_NUMBA=1`` to force the fallback. ``benchmarks/bench_kernels.py``
compares both. Candidates arrive pre-arranged in tie-break order
(start ascending, length descending), so a stable descending sort on score
alone realizes the full ordering: score desc, then start asc, then length
desc. Scores are non-negative finite float64, whose raw IEEE-754 bits sort
like the values themselves.
"""

from __future__ import annotations

import os

import numpy as np

ENV_FLAG = "CHUNKIO_NO_NUMBA"

_disabled = os.environ.get(ENV_FLAG, "").strip().lower() not in ("", "0", "false", "no")
try:
    if _disabled:
        raise ImportError(f"numba disabled via {ENV_FLAG}")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def select_candidates_numpy(prefix, starts, lengths, len_rank, cost_by_len, budget, n_rows):
    """Fallback path: numpy stable sort plus a Python greedy loop.

    Returns (mask, selected_rows, selected_importance).
    """
    benefit = prefix[starts + lengths] - prefix[starts]
    scores = benefit / cost_by_len[len_rank]
    order = np.argsort(-scores, kind="stable")
    mask = np.zeros(n_rows, dtype=np.bool_)
    selected = 0
    picked = 0.0
    for k in order:
        r = lengths[k]
        if r > budget - selected:
            continue
        i = starts[k]
        if mask[i : i + r].any():
            continue
        mask[i : i + r] = True
        selected += int(r)
        picked += benefit[k]
        if selected == budget:
            break
    return mask, selected, picked


def _select_candidates_jit_py(prefix, starts, lengths, len_rank, cost_by_len, budget, n_rows):
    # Compiled path: fused scoring, LSD radix argsort (stable, descending,
    # one-shot histograms, constant byte positions skipped) and greedy fill.
    n = starts.size
    scores = np.empty(n, dtype=np.float64)
    for i in range(n):
        b = prefix[starts[i] + lengths[i]] - prefix[starts[i]]
        scores[i] = b / cost_by_len[len_rank[i]]
    keys = scores.view(np.uint64)

    hist = np.zeros((8, 256), dtype=np.int64)
    for i in range(n):
        k = keys[i]
        for p in range(8):
            hist[p, (k >> np.uint64(8 * p)) & np.uint64(0xFF)] += 1
    idx = np.empty(n, dtype=np.int32)
    for i in range(n):
        idx[i] = i
    key_w = keys.copy()
    idx_tmp = np.empty(n, dtype=np.int32)
    key_tmp = np.empty(n, dtype=np.uint64)
    offs = np.empty(256, dtype=np.int64)
    for p in range(8):
        skip = False
        for b in range(256):
            if hist[p, b] == n:
                skip = True
                break
        if skip:
            continue
        total = 0
        for b in range(255, -1, -1):
            offs[b] = total
            total += hist[p, b]
        shift = np.uint64(8 * p)
        for i in range(n):
            b = (key_w[i] >> shift) & np.uint64(0xFF)
            q = offs[b]
            key_tmp[q] = key_w[i]
            idx_tmp[q] = idx[i]
            offs[b] = q + 1
        key_w, key_tmp = key_tmp, key_w
        idx, idx_tmp = idx_tmp, idx

    mask = np.zeros(n_rows, dtype=np.bool_)
    selected = 0
    picked = 0.0
    for c in range(n):
        k = idx[c]
        r = lengths[k]
        if r > budget - selected:
            continue
        i0 = starts[k]
        hit = False
        for j in range(i0, i0 + r):
            if mask[j]:
                hit = True
                break
        if hit:
            continue
        for j in range(i0, i0 + r):
            mask[j] = True
        selected += r
        picked += prefix[i0 + r] - prefix[i0]
        if selected == budget:
            break
    return mask, selected, picked


if HAS_NUMBA:
    select_candidates_numba = njit(cache=True)(_select_candidates_jit_py)
    select_candidates = select_candidates_numba
else:
    select_candidates_numba = None
    select_candidates = select_candidates_numpy


def backend_name() -> str:
    return "numba" if HAS_NUMBA else "numpy"


def warmup() -> None:
    """Trigger JIT compilation so timed runs do not pay it."""
    prefix = np.array([0.0, 1.0, 2.0])
    starts = np.array([0, 1], dtype=np.int64)
    lengths = np.array([1, 1], dtype=np.int64)
    len_rank = np.array([0, 0], dtype=np.int64)
    costs = np.array([1.0])
    select_candidates(prefix, starts, lengths, len_rank, costs, 1, 2)
