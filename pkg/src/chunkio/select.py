"""Row-selection policies: magnitude top-k, threshold, utility-guided
multi-scale chunk selection, and an exhaustive oracle for small instances.

Chunk selection slides windows of several sizes over the row axis, scores
each window by summed importance divided by the latency of reading it, and
greedily takes the best non-overlapping windows until the row budget is
met. All KB-denominated parameters convert to rows by flooring against the
row size, clamped to at least one row.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import _kernels
from .core import WeightLayout, as_importance, as_mask, popcount, run_bounds
from .latency import LatencyTable, estimate_mask_latency, lookup, saturation_size


@dataclass(frozen=True)
class ChunkSelectParams:
    """Candidate-window geometry, all in KB."""

    chunk_sz_start_kb: int
    chunk_sz_end_kb: int
    chunk_sz_step_kb: int = 0  # 0 -> same as start
    jump_cap_kb: int = 0  # 0 -> same as start

    def __post_init__(self):
        if self.chunk_sz_step_kb == 0:
            object.__setattr__(self, "chunk_sz_step_kb", self.chunk_sz_start_kb)
        if self.jump_cap_kb == 0:
            object.__setattr__(self, "jump_cap_kb", self.chunk_sz_start_kb)
        if self.chunk_sz_start_kb < 1 or self.chunk_sz_end_kb < 1:
            raise ValueError("chunk size bounds must be positive")
        if self.chunk_sz_start_kb > self.chunk_sz_end_kb:
            raise ValueError("chunk_sz_start_kb must be <= chunk_sz_end_kb")
        if self.chunk_sz_step_kb < 1:
            raise ValueError("chunk_sz_step_kb must be >= 1")
        if self.jump_cap_kb < 1:
            raise ValueError("jump_cap_kb must be >= 1")

    def row_units(self, layout: WeightLayout) -> tuple[int, int, int, int]:
        """(r_min, r_max, r_step, jump_cap_rows), floored KB -> rows, min 1."""
        rb = layout.row_bytes
        r_min = max(1, (self.chunk_sz_start_kb * 1024) // rb)
        r_max = max(1, (self.chunk_sz_end_kb * 1024) // rb)
        r_step = max(1, (self.chunk_sz_step_kb * 1024) // rb)
        cap = max(1, (self.jump_cap_kb * 1024) // rb)
        return r_min, r_max, r_step, cap


class CandidateChunk(NamedTuple):
    start: int
    len_rows: int
    score: float


@dataclass(frozen=True)
class CandidateSet:
    """Candidate windows as parallel arrays (indexable as CandidateChunk)."""

    starts: np.ndarray
    lengths: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return self.starts.size

    def __getitem__(self, i: int) -> CandidateChunk:
        return CandidateChunk(
            int(self.starts[i]), int(self.lengths[i]), float(self.scores[i])
        )


@dataclass(frozen=True)
class SelectionResult:
    mask: np.ndarray
    selected_rows: int
    estimated_latency_us: float
    total_importance: float
    objective: float
    elapsed_us: int


class BudgetError(ValueError):
    """Row budget outside [0, n_rows]."""


def _check_budget(budget: int, n_rows: int) -> int:
    budget = int(budget)
    if budget < 0 or budget > n_rows:
        raise BudgetError(f"budget {budget} outside [0, {n_rows}]")
    return budget


def importance_from_activations(activations) -> np.ndarray:
    """Per-row importance: mean absolute activation across token rows."""
    a = np.asarray(activations, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"need a non-empty token x row matrix, got shape {a.shape}")
    return np.abs(a).mean(axis=0)


def topk_select(importance, budget: int) -> np.ndarray:
    """Mask of the ``budget`` largest importance values; ties take the lower index."""
    v = as_importance(importance)
    budget = _check_budget(budget, v.size)
    order = np.lexsort((np.arange(v.size), -v))
    mask = np.zeros(v.size, dtype=np.bool_)
    mask[order[:budget]] = True
    return mask


def threshold_select(importance, tau: float) -> np.ndarray:
    """Mask of rows with importance strictly above ``tau``."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    return as_importance(importance) > tau


def budget_from_sparsity(sparsity: float, n_rows: int) -> int:
    """Rows retained at a given dropped fraction: round((1 - s) * N)."""
    if not 0 <= sparsity <= 1:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    return int(round((1.0 - sparsity) * n_rows))


@lru_cache(maxsize=32)
def _candidate_grid(n_rows: int, row_bytes: int, start_kb: int, end_kb: int,
                    step_kb: int, cap_kb: int):
    """Window geometry for one (layout, params) pair, cached.

    Returns candidates twice: in generation order (size then start, the
    order generate_candidates documents) and pre-arranged by the greedy
    tie-break (start asc, length desc) with ranks into the unique-length
    table. The grid depends only on shapes, never on scores, so reusing it
    across calls is safe.
    """
    params = ChunkSelectParams(start_kb, end_kb, step_kb, cap_kb)
    r_min, r_max, r_step, cap = params.row_units(WeightLayout(n_rows, row_bytes))
    starts_parts, len_parts = [], []
    for r in range(r_min, r_max + 1, r_step):
        if r > n_rows:
            break
        stride = min(r, cap)
        starts = np.arange(0, n_rows - r + 1, stride, dtype=np.int64)
        starts_parts.append(starts)
        len_parts.append(np.full(starts.size, r, dtype=np.int64))
    if starts_parts:
        gen_starts = np.concatenate(starts_parts)
        gen_lengths = np.concatenate(len_parts)
    else:
        gen_starts = np.empty(0, dtype=np.int64)
        gen_lengths = np.empty(0, dtype=np.int64)
    order = np.lexsort((-gen_lengths, gen_starts))
    starts = np.ascontiguousarray(gen_starts[order])
    lengths = np.ascontiguousarray(gen_lengths[order])
    uniq_lengths, len_rank = np.unique(lengths, return_inverse=True)
    return (
        gen_starts,
        gen_lengths,
        starts,
        lengths,
        np.ascontiguousarray(len_rank.astype(np.int64)),
        uniq_lengths,
    )


def _grid(layout: WeightLayout, params: ChunkSelectParams):
    return _candidate_grid(
        layout.n_rows,
        layout.row_bytes,
        params.chunk_sz_start_kb,
        params.chunk_sz_end_kb,
        params.chunk_sz_step_kb,
        params.jump_cap_kb,
    )


def generate_candidates(layout: WeightLayout, params: ChunkSelectParams,
                        table: LatencyTable, prefix: np.ndarray) -> CandidateSet:
    """Score every candidate window against a prefix-sum of importance.

    ``prefix`` has length n_rows + 1 with prefix[0] == 0; a window's score
    is its summed importance divided by the latency of one read of its
    byte size.
    """
    prefix = np.asarray(prefix, dtype=np.float64)
    if prefix.size != layout.n_rows + 1 or prefix[0] != 0.0:
        raise ValueError("prefix must have length n_rows + 1 with prefix[0] == 0")
    gen_starts, gen_lengths, _, _, _, _ = _grid(layout, params)
    if gen_starts.size == 0:
        return CandidateSet(gen_starts, gen_lengths, np.empty(0, dtype=np.float64))
    benefit = prefix[gen_starts + gen_lengths] - prefix[gen_starts]
    cost = lookup(table, gen_lengths * layout.row_bytes)
    return CandidateSet(gen_starts, gen_lengths, benefit / cost)


def rank_candidates(cands: CandidateSet) -> np.ndarray:
    """Deterministic greedy order: score desc, then start asc, then length desc."""
    return np.lexsort((-cands.lengths, cands.starts, -cands.scores))


def _build_result(mask, importance, layout, table, elapsed_us, total_importance=None):
    latency = estimate_mask_latency(mask, layout, table)
    if total_importance is None:
        total_importance = float(importance[mask].sum())
    objective_value = total_importance / latency if latency > 0 else 0.0
    return SelectionResult(
        mask=mask,
        selected_rows=popcount(mask),
        estimated_latency_us=latency,
        total_importance=total_importance,
        objective=objective_value,
        elapsed_us=int(elapsed_us),
    )


def chunk_select(importance, budget: int, layout: WeightLayout,
                 table: LatencyTable, params: ChunkSelectParams) -> SelectionResult:
    """Multi-scale utility-guided selection under a row budget.

    Candidates are ranked by score (ties: lower start, then larger length)
    and taken greedily when they fit the remaining budget and overlap no
    selected row. The pass stops when the budget is met or candidates run
    out, so fewer than ``budget`` rows may be selected. elapsed_us covers
    candidate generation, scoring, the sort and the greedy pass.
    """
    v = as_importance(importance, layout.n_rows)
    budget = _check_budget(budget, layout.n_rows)
    t0 = time.perf_counter_ns()
    _, _, starts, lengths, len_rank, uniq_lengths = _grid(layout, params)
    if budget == 0 or starts.size == 0:
        elapsed = (time.perf_counter_ns() - t0) // 1000
        return _build_result(
            np.zeros(layout.n_rows, dtype=np.bool_), v, layout, table, elapsed
        )
    prefix = np.empty(v.size + 1, dtype=np.float64)
    prefix[0] = 0.0
    np.cumsum(v, out=prefix[1:])
    cost_by_len = np.asarray(
        lookup(table, uniq_lengths * layout.row_bytes), dtype=np.float64
    )
    mask, _, picked = _kernels.select_candidates(
        prefix, starts, lengths, len_rank, cost_by_len, budget, layout.n_rows
    )
    elapsed = (time.perf_counter_ns() - t0) // 1000
    return _build_result(mask, v, layout, table, elapsed, total_importance=float(picked))


def objective(mask, importance, layout: WeightLayout, table: LatencyTable) -> float:
    """Summed importance of selected rows per unit of estimated latency."""
    mask = as_mask(mask, layout.n_rows)
    v = as_importance(importance, layout.n_rows)
    latency = estimate_mask_latency(mask, layout, table)
    if latency <= 0.0:
        return 0.0
    return float(v[mask].sum()) / latency


ORACLE_MAX_ROWS = 20
_ORACLE_BLOCK_BITS = 16


class InstanceTooLarge(ValueError):
    """Exhaustive search is capped at ORACLE_MAX_ROWS rows."""


@lru_cache(maxsize=2)
def _oracle_static(n: int):
    # bits matrix, popcounts and runs_ge[m, r-1] = number of maximal runs of
    # length >= r, for every n-bit mask. ~16 MB at n = 16.
    n_masks = 1 << n
    m = np.arange(n_masks, dtype=np.uint64)
    bits = ((m[:, None] >> np.arange(n, dtype=np.uint64)) & np.uint64(1)).astype(np.float64)
    pop = bits.sum(axis=1).astype(np.int64)
    runs_ge = np.zeros((n_masks, n), dtype=np.float64)
    one = np.uint64(1)
    mr = m.copy()
    for r in range(1, n + 1):
        if not mr.any():
            break
        starts = mr & ~(mr << one)
        runs_ge[:, r - 1] = np.bitwise_count(starts)
        mr &= mr >> one
    return bits, pop, runs_ge


def _oracle_scan_block(base: int, count: int, n: int, v, dlat, budget):
    m = np.arange(base, base + count, dtype=np.uint64)
    bits = ((m[:, None] >> np.arange(n, dtype=np.uint64)) & np.uint64(1)).astype(np.float64)
    pop = bits.sum(axis=1).astype(np.int64)
    runs_ge = np.zeros((count, n), dtype=np.float64)
    one = np.uint64(1)
    mr = m.copy()
    for r in range(1, n + 1):
        if not mr.any():
            break
        starts = mr & ~(mr << one)
        runs_ge[:, r - 1] = np.bitwise_count(starts)
        mr &= mr >> one
    return _oracle_objectives(bits, pop, runs_ge, v, dlat, budget, base)


def _oracle_objectives(bits, pop, runs_ge, v, dlat, budget, base):
    lat = runs_ge @ dlat
    imp = bits @ v
    with np.errstate(divide="ignore", invalid="ignore"):
        obj = imp / lat
    obj[(pop < 1) | (pop > budget)] = -1.0
    if base == 0:
        obj[0] = -1.0
    best = float(obj.max()) if obj.size else -1.0
    ties = np.flatnonzero(obj == best) + base if best > 0.0 else np.empty(0, np.int64)
    return best, ties


def _mask_from_int(m: int, n: int) -> np.ndarray:
    return (np.uint64(m) >> np.arange(n, dtype=np.uint64)) & np.uint64(1) > 0


def oracle_select(importance, budget: int, layout: WeightLayout,
                  table: LatencyTable) -> SelectionResult:
    """Global optimum of the selection objective by exhaustive mask enumeration.

    Independent of the greedy path: per-mask latency comes from counting
    maximal runs with bit arithmetic over all 2^N masks. Objective ties
    resolve to the mask whose sorted index list is lexicographically
    smallest; if every mask scores zero the empty mask is returned.
    """
    n = layout.n_rows
    if n > ORACLE_MAX_ROWS:
        raise InstanceTooLarge(f"oracle supports n_rows <= {ORACLE_MAX_ROWS}, got {n}")
    v = as_importance(importance, n)
    budget = _check_budget(budget, n)
    t0 = time.perf_counter_ns()
    latcost = np.concatenate(
        ([0.0], lookup(table, np.arange(1, n + 1, dtype=np.int64) * layout.row_bytes))
    )
    dlat = np.diff(latcost)

    best = -1.0
    ties = np.empty(0, dtype=np.int64)
    if n <= _ORACLE_BLOCK_BITS:
        bits, pop, runs_ge = _oracle_static(n)
        best, ties = _oracle_objectives(bits, pop, runs_ge, v, dlat, budget, 0)
    else:
        block = 1 << _ORACLE_BLOCK_BITS
        for base in range(0, 1 << n, block):
            b_best, b_ties = _oracle_scan_block(base, block, n, v, dlat, budget)
            if b_best > best:
                best, ties = b_best, b_ties
            elif b_best == best and b_ties.size:
                ties = np.concatenate([ties, b_ties])

    if best <= 0.0:
        mask = np.zeros(n, dtype=np.bool_)
    else:
        keys = [tuple(np.flatnonzero(_mask_from_int(int(t), n))) for t in ties]
        mask = _mask_from_int(int(ties[min(range(len(ties)), key=keys.__getitem__)]), n)
    elapsed = (time.perf_counter_ns() - t0) // 1000
    return _build_result(mask, v, layout, table, elapsed)


# Per-shape defaults measured on the reference devices (rows, bytes per
# fp16 row) -> (start KB, cap KB); step follows start. Unknown shapes fall
# back to the 8 KB floor pending a sweep (see chunkio.tune).
DEVICE_HIGH = "high"
DEVICE_LOW = "low"

DEFAULT_SHAPE_PARAMS: dict[tuple[int, int], dict[str, tuple[int, int]]] = {
    (3584, 7168): {DEVICE_HIGH: (20, 20), DEVICE_LOW: (24, 36)},
    (8960, 3072): {DEVICE_HIGH: (16, 16), DEVICE_LOW: (20, 20)},
    (896, 9728): {DEVICE_HIGH: (8, 8), DEVICE_LOW: (8, 8)},
    (4096, 2048): {DEVICE_HIGH: (12, 12), DEVICE_LOW: (16, 16)},
    (3584, 37888): {DEVICE_HIGH: (8, 8), DEVICE_LOW: (8, 8)},
    (4096, 8192): {DEVICE_HIGH: (20, 20), DEVICE_LOW: (24, 24)},
    (18944, 7168): {DEVICE_HIGH: (32, 32), DEVICE_LOW: (36, 36)},
    (1536, 3072): {DEVICE_HIGH: (16, 12), DEVICE_LOW: (16, 12)},
    (1536, 512): {DEVICE_HIGH: (8, 8), DEVICE_LOW: (8, 8)},
    (896, 256): {DEVICE_HIGH: (8, 8), DEVICE_LOW: (8, 8)},
    (14336, 8192): {DEVICE_HIGH: (32, 32), DEVICE_LOW: (40, 36)},
    (4864, 1792): {DEVICE_HIGH: (12, 16), DEVICE_LOW: (20, 16)},
    (3584, 1024): {DEVICE_HIGH: (8, 12), DEVICE_LOW: (8, 12)},
    (896, 1792): {DEVICE_HIGH: (8, 8), DEVICE_LOW: (8, 8)},
    (4096, 28672): {DEVICE_HIGH: (8, 8), DEVICE_LOW: (8, 8)},
    (1536, 17920): {DEVICE_HIGH: (8, 8), DEVICE_LOW: (8, 8)},
}

_FALLBACK_START_CAP = (8, 8)
_DEFAULT_END_KB = {DEVICE_HIGH: 236, DEVICE_LOW: 348}


def default_params(layout: WeightLayout, table: LatencyTable | None = None,
                   device_profile: str = DEVICE_HIGH) -> ChunkSelectParams:
    """Params for a layout: per-shape table where known, else the 8 KB floor.

    The max chunk size comes from the table's measured saturation point
    when a table is given, else from the reference device defaults.
    """
    if device_profile not in (DEVICE_HIGH, DEVICE_LOW):
        raise ValueError(f"unknown device profile {device_profile!r}")
    start, cap = DEFAULT_SHAPE_PARAMS.get(
        (layout.n_rows, layout.row_bytes), {}
    ).get(device_profile, _FALLBACK_START_CAP)
    if table is not None:
        end_kb = max(1, saturation_size(table) // 1024)
    else:
        end_kb = _DEFAULT_END_KB[device_profile]
    end_kb = max(end_kb, start)
    return ChunkSelectParams(start, end_kb, start, cap)
