"""Masks, chunks and contiguity distributions.

A selection mask is a boolean array over weight-matrix rows. A chunk is a
maximal run of consecutively selected rows; the contiguity distribution is
the histogram of chunk lengths, discarding placement. Everything in this
module is pure and does no I/O.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


@dataclass(frozen=True)
class WeightLayout:
    """Shape of one weight matrix as stored on flash: rows x bytes-per-row."""

    n_rows: int
    row_bytes: int

    def __post_init__(self):
        if self.n_rows < 1:
            raise ValueError(f"n_rows must be >= 1, got {self.n_rows}")
        if self.row_bytes < 1:
            raise ValueError(f"row_bytes must be >= 1, got {self.row_bytes}")

    @property
    def total_bytes(self) -> int:
        return self.n_rows * self.row_bytes


class Chunk(NamedTuple):
    """Maximal run of selected rows: ``length`` rows starting at ``start``."""

    start: int
    length: int


class DistributionStats(NamedTuple):
    mean_chunk_rows: float
    mode_chunk_rows: int
    num_chunks: int


def as_mask(bits, n_rows: int | None = None) -> np.ndarray:
    """Coerce to a 1-D boolean mask, optionally checking its length."""
    mask = np.asarray(bits, dtype=np.bool_)
    if mask.ndim != 1:
        raise ValueError(f"mask must be 1-D, got shape {mask.shape}")
    if n_rows is not None and mask.size != n_rows:
        raise ValueError(f"mask length {mask.size} != layout n_rows {n_rows}")
    return mask


def as_importance(values, n_rows: int | None = None) -> np.ndarray:
    """Coerce to a float64 importance vector; values must be non-negative."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"importance must be 1-D, got shape {v.shape}")
    if v.size == 0:
        raise ValueError("importance vector is empty")
    if n_rows is not None and v.size != n_rows:
        raise ValueError(f"importance length {v.size} != layout n_rows {n_rows}")
    if not np.all(np.isfinite(v)):
        raise ValueError("importance contains non-finite values")
    if np.any(v < 0):
        raise ValueError("importance values must be non-negative")
    return v


def run_bounds(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Starts and lengths of the maximal runs of set bits, as int64 arrays.

    Array-valued twin of extract_chunks; this is the form the latency and
    selection paths consume.
    """
    mask = as_mask(mask)
    padded = np.empty(mask.size + 2, dtype=np.bool_)
    padded[0] = padded[-1] = False
    padded[1:-1] = mask
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts = edges[0::2].astype(np.int64)
    lengths = (edges[1::2] - edges[0::2]).astype(np.int64)
    return starts, lengths


def extract_chunks(mask) -> list[Chunk]:
    """Decompose a mask into maximal contiguous chunks, sorted by start."""
    starts, lengths = run_bounds(as_mask(mask))
    return [Chunk(int(s), int(l)) for s, l in zip(starts, lengths)]


def mask_from_chunks(chunks: Sequence[Chunk | tuple], n_rows: int) -> np.ndarray:
    """Set the rows covered by ``chunks``; overlapping or adjacent input runs merge.

    Raises ValueError for chunks that fall outside [0, n_rows).
    """
    if n_rows < 0:
        raise ValueError(f"n_rows must be >= 0, got {n_rows}")
    mask = np.zeros(n_rows, dtype=np.bool_)
    for start, length in chunks:
        if length < 1:
            raise ValueError(f"chunk length must be >= 1, got {length}")
        if start < 0 or start + length > n_rows:
            raise ValueError(
                f"chunk ({start},{length}) out of bounds for n_rows={n_rows}"
            )
        mask[start : start + length] = True
    return mask


def popcount(mask) -> int:
    return int(np.count_nonzero(as_mask(mask)))


def contiguity_distribution(mask) -> dict[int, int]:
    """Histogram chunk length -> number of chunks of that length."""
    _, lengths = run_bounds(as_mask(mask))
    sizes, counts = np.unique(lengths, return_counts=True)
    return {int(s): int(c) for s, c in zip(sizes, counts)}


def distribution_stats(dist: dict[int, int]) -> DistributionStats:
    """Mean/mode chunk size and chunk count; empty distribution -> all zeros.

    Mode ties resolve to the smaller size.
    """
    if not dist:
        return DistributionStats(0.0, 0, 0)
    sizes = np.array(sorted(dist.keys()), dtype=np.int64)
    counts = np.array([dist[int(s)] for s in sizes], dtype=np.int64)
    if np.any(sizes < 1) or np.any(counts < 0):
        raise ValueError("contiguity distribution has invalid entries")
    num = int(counts.sum())
    mean = float((sizes * counts).sum() / num)
    mode = int(sizes[int(np.argmax(counts))])  # first max = smallest size
    return DistributionStats(mean, mode, num)
